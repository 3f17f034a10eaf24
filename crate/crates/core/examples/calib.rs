// scratch: dream-trend prototype for the trained-model criterion
use xmodal::arch::ArchitectureSpec;
use xmodal::data::synthetic::*;
use xmodal::data::{normalize, Dataset};
use xmodal::dream::*;
use xmodal::model::*;
use xmodal::rng::Rng;
use xmodal::train::*;

fn main() {
    let t0 = std::time::Instant::now();
    let ds = generate_synthetic(&SyntheticConfig {
        n_users: 500,
        t_range: (12, 12),
        signal_strength: 1.0,
        seed: 7,
        ..Default::default()
    })
    .unwrap();
    let all: Vec<usize> = (0..ds.len()).collect();
    let (nds, stats) = normalize(&ds, &all).unwrap();
    let spec = ArchitectureSpec::lstm([8, 16, 32]);
    let cfg = TrainConfig { epochs: 30, batch_size: 64, seed: 7, ..Default::default() };
    let mut model = build_model_with(&spec, &ModelOptions { dropout_p: 0.1, head_batch_norm: false }, &mut Rng::new(7).child("init")).unwrap();
    train(&mut model, &nds, &cfg).unwrap();
    println!("trained in {:?}", t0.elapsed());

    for (goal, name) in [(DreamGoal::Success, "success"), (DreamGoal::Failure, "failure")] {
        let cfg = DreamConfig {
            target: goal,
            t_len: 10,
            lambda: 5.0,
            step_size: 0.05,
            max_iters: 300,
            statics: DreamStatics { height_cm: 170.0, gender: 1.0, age_band: 3.0, objective_kg: -4.0 },
            seed: 0,
        };
        let out = dream(&model, &cfg, &stats).unwrap();
        // weight channel is column 0
        let first = out.sequence.get(0, 0);
        let last = out.sequence.get(9, 0);
        // steps channel col 9, latency col 3
        let sfirst = out.sequence.get(0, 9);
        let slast = out.sequence.get(9, 9);
        println!(
            "{name}: conf {:.4}, iters {}, weight {:.4} -> {:.4} (trend {:+.4}), steps trend {:+.4}",
            out.final_confidence, out.iterations, first, last, last - first, slast - sfirst
        );
    }
    println!("total {:?}", t0.elapsed());
}
