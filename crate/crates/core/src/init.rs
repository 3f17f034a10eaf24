//! Parameter initializers.

use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Xavier,
    /// Normal with std `sqrt(2 / fan_in)`.
    He,
    Zeros,
    Ones,
}

/// Fan-in/fan-out convention: a `[fan_in, fan_out]` matrix, or a vector with
/// `fan_in = fan_out = len`.
pub fn init(shape: &[usize], scheme: Init, rng: &mut Rng) -> Tensor {
    let numel: usize = shape.iter().product();
    assert!(numel > 0, "init with empty shape {shape:?}");
    let (fan_in, fan_out) = match shape {
        [n] => (*n, *n),
        [r, c] => (*r, *c),
        _ => panic!("init supports rank 1 or 2, got {shape:?}"),
    };
    let data: Vec<f64> = match scheme {
        Init::Zeros => vec![0.0; numel],
        Init::Ones => vec![1.0; numel],
        Init::Xavier => {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..numel).map(|_| rng.uniform_in(-a, a)).collect()
        }
        Init::He => {
            let std = (2.0 / fan_in as f64).sqrt();
            (0..numel).map(|_| rng.normal_with(0.0, std)).collect()
        }
    };
    Tensor::new(shape.to_vec(), data).expect("shape/data consistent by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn variance(xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
    }

    #[test]
    fn zeros_and_ones() {
        let mut rng = Rng::new(0);
        let z = init(&[3, 3], Init::Zeros, &mut rng);
        assert!(z.data().iter().all(|&v| v == 0.0));
        let o = init(&[21], Init::Ones, &mut rng);
        assert_eq!(o.data(), &[1.0; 21]);
    }

    #[test]
    fn xavier_variance_matches_uniform_analytic() {
        let mut rng = Rng::new(17);
        let t = init(&[100, 100], Init::Xavier, &mut rng);
        // uniform on ±a has variance (2a)^2 / 12 = a^2 / 3 with a^2 = 6/200
        let expect = 6.0 / 200.0 / 3.0;
        let got = variance(t.data());
        assert!(
            (got - expect).abs() / expect < 0.10,
            "sample variance {got} vs analytic {expect}"
        );
        let bound = (6.0f64 / 200.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn he_std_matches_analytic() {
        let mut rng = Rng::new(18);
        let t = init(&[200, 50], Init::He, &mut rng);
        let expect = 2.0 / 200.0;
        let got = variance(t.data());
        assert!((got - expect).abs() / expect < 0.10);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = init(&[4, 4], Init::Xavier, &mut Rng::new(5));
        let b = init(&[4, 4], Init::Xavier, &mut Rng::new(5));
        assert_eq!(a.data(), b.data());
    }
}
