//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use xmodal::alloc::{allocate, AllocStrategy, AllocationResult, ModalityScores};
use xmodal::arch::{ArchitectureSpec, Modality, MODALITIES};
use xmodal::crossval::{crossvalidate, CrossvalReport};
use xmodal::data::synthetic::generate_synthetic;
use xmodal::data::{normalize, Dataset, NormStats, SEQ_FEATURES};
use xmodal::dream::{dream, export_dream, DreamResult};
use xmodal::model::{build_model_with, Checkpoint, Model, ModelOptions};
use xmodal::rng::Rng;
use xmodal::stats::{paired_t_test, TTest};
use xmodal::train::{train, TrainHistory};

use crate::config::*;
use crate::svg;

fn out_dir(config_dir: Option<&PathBuf>, flag: Option<&PathBuf>) -> PathBuf {
    flag.or(config_dir)
        .cloned()
        .unwrap_or_else(|| PathBuf::from("."))
}

fn load_dataset(source: &DataSource) -> CliResult<Dataset> {
    match source {
        DataSource::Synthetic(cfg) => generate_synthetic(cfg).map_err(CliError::runtime),
        DataSource::Jsonl(path) => {
            let file = std::fs::File::open(path).map_err(|e| {
                CliError::validation(format!("cannot open dataset `{}`: {e}", path.display()))
            })?;
            Dataset::read_jsonl(std::io::BufReader::new(file)).map_err(CliError::runtime)
        }
    }
}

fn parse_strategy(s: &str) -> CliResult<AllocStrategy> {
    s.parse::<AllocStrategy>()
        .map_err(|e| CliError::validation(e.to_string()))
}

fn resolve_arch(source: &ArchSource) -> CliResult<(ArchitectureSpec, Option<AllocationResult>)> {
    match source {
        ArchSource::Spec(spec) => {
            spec.validate()
                .map_err(|e| CliError::validation(e.to_string()))?;
            Ok((spec.clone(), None))
        }
        ArchSource::SpecPath(path) => {
            let spec: ArchitectureSpec = load_json(path)?;
            spec.validate()
                .map_err(|e| CliError::validation(e.to_string()))?;
            Ok((spec, None))
        }
        ArchSource::Allocate(req) => {
            let baseline = match (&req.baseline, &req.baseline_path) {
                (Some(_), Some(_)) => {
                    return Err(CliError::validation(
                        "invalid field `baseline`: give inline baseline or baseline_path, not both",
                    ))
                }
                (Some(b), None) => b.clone(),
                (None, Some(p)) => load_json(p)?,
                (None, None) => ArchitectureSpec::baseline_lstm(),
            };
            let strategy = parse_strategy(&req.strategy)?;
            let scores = ModalityScores::new(req.scores.clone(), req.k)
                .map_err(|e| CliError::validation(e.to_string()))?;
            let result = allocate(&baseline, &scores, strategy, req.cross_fraction, req.tolerance)
                .map_err(|e| CliError::validation(e.to_string()))?;
            Ok((result.spec.clone(), Some(result)))
        }
    }
}

// ── generate ─────────────────────────────────────────────────────────

pub fn generate(config_path: &Path, seed: Option<u64>, out: Option<&PathBuf>) -> CliResult<()> {
    let mut cfg: GenerateConfig = load_json(config_path)?;
    if let Some(s) = seed {
        cfg.synthetic.seed = s;
    }
    let dir = out_dir(cfg.output_dir.as_ref(), out);
    let provenance = Provenance::new("generate", cfg.synthetic.seed, &cfg)?;

    let ds = generate_synthetic(&cfg.synthetic).map_err(CliError::runtime)?;
    let mut buf = Vec::new();
    ds.write_jsonl(&mut buf).map_err(CliError::runtime)?;
    let mut text = provenance.comment_header();
    text.push_str(&String::from_utf8(buf).map_err(CliError::runtime)?);
    write_artifact(&dir.join("dataset.jsonl"), &text)?;
    println!(
        "generate: {} examples -> {}",
        ds.len(),
        dir.join("dataset.jsonl").display()
    );
    Ok(())
}

// ── allocate ─────────────────────────────────────────────────────────

#[derive(Debug, Serialize)]
struct AllocationArtifact<'a> {
    provenance: &'a Provenance,
    spec: &'a ArchitectureSpec,
    accounting: Accounting<'a>,
}

#[derive(Debug, Serialize)]
struct Accounting<'a> {
    budget: usize,
    achieved_params: usize,
    k: f64,
    strategy: &'a str,
    weights: &'a BTreeMap<Modality, f64>,
    scale_alpha: f64,
    within_tolerance: bool,
}

pub struct AllocateArgs {
    pub config: Option<PathBuf>,
    pub baseline: Option<PathBuf>,
    pub scores: Option<String>,
    pub k: Option<f64>,
    pub strategy: Option<String>,
    pub cross_fraction: Option<f64>,
    pub tolerance: Option<f64>,
    pub out: Option<PathBuf>,
}

fn parse_scores_triple(s: &str) -> CliResult<BTreeMap<Modality, f64>> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(CliError::validation(format!(
            "--scores wants three comma-separated values (wt,sl,st), got `{s}`"
        )));
    }
    let mut map = BTreeMap::new();
    for (m, part) in MODALITIES.iter().zip(parts) {
        let v: f64 = part
            .trim()
            .parse()
            .map_err(|e| CliError::validation(format!("bad score `{part}`: {e}")))?;
        map.insert(*m, v);
    }
    Ok(map)
}

pub fn allocate_cmd(args: &AllocateArgs) -> CliResult<()> {
    let mut req: AllocateRequest = match &args.config {
        Some(path) => load_json(path)?,
        None => AllocateRequest {
            baseline: None,
            baseline_path: None,
            scores: BTreeMap::new(),
            k: 0.0,
            strategy: String::new(),
            cross_fraction: default_cross_fraction(),
            tolerance: default_tolerance(),
        },
    };
    if let Some(p) = &args.baseline {
        req.baseline_path = Some(p.clone());
        req.baseline = None;
    }
    if let Some(s) = &args.scores {
        req.scores = parse_scores_triple(s)?;
    }
    if let Some(k) = args.k {
        req.k = k;
    }
    if let Some(s) = &args.strategy {
        req.strategy = s.clone();
    }
    if let Some(f) = args.cross_fraction {
        req.cross_fraction = f;
    }
    if let Some(t) = args.tolerance {
        req.tolerance = t;
    }
    if req.scores.is_empty() {
        return Err(CliError::validation(
            "invalid field `scores`: provide --scores or a config with scores",
        ));
    }
    if req.strategy.is_empty() {
        return Err(CliError::validation(
            "invalid field `strategy`: provide --strategy or a config with strategy",
        ));
    }

    let dir = out_dir(None, args.out.as_ref());
    let provenance = Provenance::new("allocate", 0, &req)?;
    let (_, result) = resolve_arch(&ArchSource::Allocate(req))?;
    let result = result.expect("allocate source always yields accounting");

    write_json_artifact(
        &dir.join("allocation.json"),
        &AllocationArtifact {
            provenance: &provenance,
            spec: &result.spec,
            accounting: Accounting {
                budget: result.budget,
                achieved_params: result.achieved_params,
                k: result.k,
                strategy: result.strategy.name(),
                weights: &result.weights,
                scale_alpha: result.scale_alpha,
                within_tolerance: result.within_tolerance,
            },
        },
    )?;
    write_artifact(
        &dir.join("spec.json"),
        &format!(
            "{}\n",
            result.spec.to_json().map_err(CliError::runtime)?
        ),
    )?;
    println!(
        "allocate: strategy {} k {} -> {} params (budget {}, within tolerance: {})",
        result.strategy, result.k, result.achieved_params, result.budget, result.within_tolerance
    );
    Ok(())
}

// ── train ────────────────────────────────────────────────────────────

/// Self-contained trained-model artifact: restore, score, or dream from it.
#[derive(Debug, Serialize, Deserialize)]
pub struct TrainArtifact {
    pub provenance: Provenance,
    pub norm_stats: NormStats,
    pub history: TrainHistory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation: Option<AllocationResult>,
    pub checkpoint: Checkpoint,
}

fn apply_seed(cfg: &mut RunConfig, seed: Option<u64>) {
    if let Some(s) = seed {
        cfg.train.seed = s;
        if let DataSource::Synthetic(sc) = &mut cfg.data {
            sc.seed = s;
        }
    }
}

pub fn train_cmd(config_path: &Path, seed: Option<u64>, out: Option<&PathBuf>) -> CliResult<()> {
    let mut cfg: RunConfig = load_json(config_path)?;
    apply_seed(&mut cfg, seed);
    cfg.train
        .validate()
        .map_err(|e| CliError::validation(e.to_string()))?;
    let archs = cfg.named_archs()?;
    if archs.len() != 1 {
        return Err(CliError::validation(
            "invalid field `archs`: train takes exactly one architecture",
        ));
    }
    let (spec, allocation) = resolve_arch(&archs[0].source)?;
    let dir = out_dir(cfg.output_dir.as_ref(), out);
    let provenance = Provenance::new("train", cfg.train.seed, &cfg)?;

    let ds = load_dataset(&cfg.data)?;
    let all: Vec<usize> = (0..ds.len()).collect();
    let (nds, stats) = normalize(&ds, &all).map_err(CliError::runtime)?;
    let opts = ModelOptions {
        dropout_p: cfg.train.dropout_p,
        head_batch_norm: false,
    };
    let mut model = build_model_with(&spec, &opts, &mut Rng::new(cfg.train.seed).child("init"))
        .map_err(CliError::runtime)?;
    let history = train(&mut model, &nds, &cfg.train).map_err(CliError::runtime)?;

    let mut csv = provenance.comment_header();
    csv.push_str("epoch,mean_weighted_loss\n");
    for (i, loss) in history.epoch_loss.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", i + 1, loss));
    }
    write_artifact(&dir.join("history.csv"), &csv)?;
    write_json_artifact(
        &dir.join("model.json"),
        &TrainArtifact {
            provenance,
            norm_stats: stats,
            history: history.clone(),
            allocation,
            checkpoint: model.to_checkpoint(),
        },
    )?;
    println!(
        "train: {} epochs, final loss {:.6} -> {}",
        history.epoch_loss.len(),
        history.epoch_loss.last().unwrap_or(&f64::NAN),
        dir.join("model.json").display()
    );
    Ok(())
}

// ── crossval ─────────────────────────────────────────────────────────

#[derive(Debug, Serialize)]
struct CrossvalArtifact<'a> {
    provenance: &'a Provenance,
    model: &'a str,
    spec: &'a ArchitectureSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    allocation: &'a Option<AllocationResult>,
    report: &'a CrossvalReport,
}

#[derive(Debug, Serialize)]
struct TTestsArtifact<'a> {
    provenance: &'a Provenance,
    results: Vec<ComparisonResult>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub a: String,
    pub b: String,
    #[serde(flatten)]
    pub test: TTest,
}

/// Table-2-shaped metric table: one column per model.
pub struct MetricsTable {
    pub columns: Vec<String>,
    /// `(row label, per-column cell)` in fixed row order.
    pub rows: Vec<(&'static str, Vec<String>)>,
}

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

fn fmt_p(t: &TTest) -> String {
    if t.degenerate {
        "0 (degenerate)".to_string()
    } else if t.p < 0.001 {
        format!("{:.2e}", t.p)
    } else {
        format!("{:.3}", t.p)
    }
}

pub fn metrics_table(
    names: &[String],
    reports: &[&CrossvalReport],
    reference: &str,
) -> CliResult<MetricsTable> {
    let ref_idx = names
        .iter()
        .position(|n| n == reference)
        .ok_or_else(|| CliError::validation(format!("reference model `{reference}` not found")))?;
    let mut rows: Vec<(&'static str, Vec<String>)> = Vec::new();
    let cell = |f: &dyn Fn(&CrossvalReport) -> f64| -> Vec<String> {
        reports.iter().map(|r| pct(f(r))).collect()
    };
    rows.push(("Accuracy", cell(&|r| r.aggregate.mean_metrics.accuracy)));
    rows.push(("Precision", cell(&|r| r.aggregate.mean_metrics.precision)));
    rows.push(("Recall", cell(&|r| r.aggregate.mean_metrics.recall)));
    rows.push(("F1 score", cell(&|r| r.aggregate.mean_metrics.f1)));
    rows.push(("MCC", cell(&|r| r.aggregate.mean_metrics.mcc)));
    rows.push(("ROC AUC", cell(&|r| r.aggregate.mean_auc)));
    let ref_aucs: Vec<f64> = reports[ref_idx].folds.iter().map(|f| f.auc).collect();
    let mut pvals = Vec::new();
    for (i, r) in reports.iter().enumerate() {
        if i == ref_idx {
            pvals.push("—".to_string());
        } else {
            let aucs: Vec<f64> = r.folds.iter().map(|f| f.auc).collect();
            let t = paired_t_test(&ref_aucs, &aucs).map_err(CliError::runtime)?;
            pvals.push(fmt_p(&t));
        }
    }
    rows.push(("p-value", pvals));
    Ok(MetricsTable {
        columns: names.to_vec(),
        rows,
    })
}

pub fn render_table_markdown(table: &MetricsTable) -> String {
    let mut out = String::from("| Metric |");
    for c in &table.columns {
        out.push_str(&format!(" {c} |"));
    }
    out.push_str("\n|---|");
    for _ in &table.columns {
        out.push_str("---|");
    }
    out.push('\n');
    for (label, cells) in &table.rows {
        out.push_str(&format!("| {label} |"));
        for c in cells {
            out.push_str(&format!(" {c} |"));
        }
        out.push('\n');
    }
    out
}

pub fn render_table_csv(table: &MetricsTable, provenance: &Provenance) -> String {
    let mut out = provenance.comment_header();
    out.push_str("metric");
    for c in &table.columns {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (label, cells) in &table.rows {
        out.push_str(label);
        for c in cells {
            out.push(',');
            out.push_str(&c.replace(',', ";"));
        }
        out.push('\n');
    }
    out
}

fn roc_csv(provenance: &Provenance, points: &[(f64, f64)]) -> String {
    let mut out = provenance.comment_header();
    out.push_str("fpr,tpr\n");
    for (fpr, tpr) in points {
        out.push_str(&format!("{fpr},{tpr}\n"));
    }
    out
}

pub fn crossval_cmd(
    config_path: &Path,
    seed: Option<u64>,
    out: Option<&PathBuf>,
    workers: Option<usize>,
) -> CliResult<()> {
    let mut cfg: RunConfig = load_json(config_path)?;
    apply_seed(&mut cfg, seed);
    cfg.train
        .validate()
        .map_err(|e| CliError::validation(e.to_string()))?;
    let archs = cfg.named_archs()?;
    let names: Vec<String> = archs.iter().map(|a| a.name.clone()).collect();
    for (a, b) in &cfg.eval.comparisons {
        for n in [a, b] {
            if !names.contains(n) {
                return Err(CliError::validation(format!(
                    "invalid field `eval.comparisons`: unknown model `{n}`"
                )));
            }
        }
    }
    let reference = match &cfg.eval.reference {
        Some(r) => {
            if !names.contains(r) {
                return Err(CliError::validation(format!(
                    "invalid field `eval.reference`: unknown model `{r}`"
                )));
            }
            r.clone()
        }
        None => names.last().unwrap().clone(),
    };
    let resolved: Vec<(String, ArchitectureSpec, Option<AllocationResult>)> = archs
        .iter()
        .map(|a| resolve_arch(&a.source).map(|(s, r)| (a.name.clone(), s, r)))
        .collect::<CliResult<_>>()?;

    let dir = out_dir(cfg.output_dir.as_ref(), out);
    let provenance = Provenance::new("crossval", cfg.train.seed, &cfg)?;
    let workers = workers.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    });

    let ds = load_dataset(&cfg.data)?;
    let objectives: Vec<f64> = ds.examples.iter().map(|e| e.objective_kg).collect();

    let mut reports: Vec<CrossvalReport> = Vec::new();
    for (name, spec, allocation) in &resolved {
        log::info!("cross-validating {name}");
        let report = crossvalidate(spec, &ds, cfg.eval.k_folds, &cfg.train, workers)
            .map_err(CliError::runtime)?;

        write_json_artifact(
            &dir.join(format!("crossval_{name}.json")),
            &CrossvalArtifact {
                provenance: &provenance,
                model: name,
                spec,
                allocation,
                report: &report,
            },
        )?;
        let (_, pooled_curve) =
            xmodal::metrics::roc_auc(&report.pooled_scores, &report.labels)
                .map_err(CliError::runtime)?;
        write_artifact(
            &dir.join(format!("roc_{name}_pooled.csv")),
            &roc_csv(&provenance, &pooled_curve),
        )?;
        for fold in &report.folds {
            write_artifact(
                &dir.join(format!("roc_{name}_fold{}.csv", fold.fold_index)),
                &roc_csv(&provenance, &fold.roc_points),
            )?;
        }
        let mut chart = provenance.comment_header();
        chart.push_str(&svg::line_chart(
            &format!("ROC ({name}, pooled)"),
            "false positive rate",
            "true positive rate",
            &[(name.clone(), pooled_curve)],
        ));
        write_artifact(&dir.join(format!("roc_{name}.svg")), &chart)?;

        // objective-magnitude histogram over the pooled predictions
        let bins = xmodal::metrics::objective_histogram(
            &report.pooled_scores,
            &report.labels,
            &objectives,
            &cfg.eval.histogram_edges,
            cfg.eval.histogram_threshold,
        )
        .map_err(CliError::runtime)?;
        let mut hist = provenance.comment_header();
        hist.push_str("bin_lo,bin_hi,correct,wrong_succ,wrong_fail\n");
        for b in &bins {
            hist.push_str(&format!(
                "{},{},{},{},{}\n",
                b.lo, b.hi, b.correct, b.wrong_successful, b.wrong_failed
            ));
        }
        write_artifact(&dir.join(format!("histogram_{name}.csv")), &hist)?;
        reports.push(report);
    }

    let report_refs: Vec<&CrossvalReport> = reports.iter().collect();
    let table = metrics_table(&names, &report_refs, &reference)?;
    write_artifact(
        &dir.join("metrics_table.md"),
        &render_table_markdown(&table),
    )?;
    write_artifact(
        &dir.join("metrics_table.csv"),
        &render_table_csv(&table, &provenance),
    )?;

    let mut results = Vec::new();
    for (a, b) in &cfg.eval.comparisons {
        let ia = names.iter().position(|n| n == a).unwrap();
        let ib = names.iter().position(|n| n == b).unwrap();
        let aucs_a: Vec<f64> = reports[ia].folds.iter().map(|f| f.auc).collect();
        let aucs_b: Vec<f64> = reports[ib].folds.iter().map(|f| f.auc).collect();
        results.push(ComparisonResult {
            a: a.clone(),
            b: b.clone(),
            test: paired_t_test(&aucs_a, &aucs_b).map_err(CliError::runtime)?,
        });
    }
    write_json_artifact(
        &dir.join("ttests.json"),
        &TTestsArtifact {
            provenance: &provenance,
            results,
        },
    )?;

    for (name, report) in names.iter().zip(&reports) {
        println!(
            "crossval {name}: mean AUC {:.4}, pooled AUC {:.4}",
            report.aggregate.mean_auc, report.aggregate.pooled_auc
        );
    }
    Ok(())
}

// ── dream ────────────────────────────────────────────────────────────

#[derive(Debug, Serialize)]
struct DreamArtifact<'a> {
    provenance: &'a Provenance,
    config: &'a xmodal::dream::DreamConfig,
    result: &'a DreamResult,
}

pub fn dream_cmd(config_path: &Path, seed: Option<u64>, out: Option<&PathBuf>) -> CliResult<()> {
    let mut cfg: DreamRunConfig = load_json(config_path)?;
    if let Some(s) = seed {
        cfg.dream.seed = s;
    }
    cfg.dream
        .validate()
        .map_err(|e| CliError::validation(e.to_string()))?;
    let artifact: TrainArtifact = load_json(&cfg.checkpoint)?;
    let dir = out_dir(cfg.output_dir.as_ref(), out);
    let provenance = Provenance::new("dream", cfg.dream.seed, &cfg)?;

    let model = Model::from_checkpoint(artifact.checkpoint).map_err(CliError::runtime)?;
    let stats = artifact.norm_stats;
    let result = dream(&model, &cfg.dream, &stats).map_err(CliError::runtime)?;

    let mut csv = provenance.comment_header();
    csv.push_str(&export_dream(&result, &stats).map_err(CliError::runtime)?);
    write_artifact(&dir.join("dream.csv"), &csv)?;

    let mut trace = provenance.comment_header();
    trace.push_str("iteration,objective\n");
    for (i, v) in result.objective_trace.iter().enumerate() {
        trace.push_str(&format!("{},{}\n", i + 1, v));
    }
    write_artifact(&dir.join("trace.csv"), &trace)?;

    // channel chart in physical units, one series per feature
    let mut series = Vec::new();
    for (c, name) in SEQ_FEATURES.iter().enumerate() {
        let pts: Vec<(f64, f64)> = (0..result.sequence.rows)
            .map(|t| (t as f64, stats.invert(name, result.sequence.get(t, c))))
            .collect();
        series.push((name.to_string(), pts));
    }
    let mut chart = provenance.comment_header();
    chart.push_str(&svg::line_chart(
        &format!("dream ({:?})", cfg.dream.target),
        "day",
        "physical value",
        &series,
    ));
    write_artifact(&dir.join("dream.svg"), &chart)?;

    let trace_pts: Vec<(f64, f64)> = result
        .objective_trace
        .iter()
        .enumerate()
        .map(|(i, &v)| (i as f64 + 1.0, v))
        .collect();
    let mut chart = provenance.comment_header();
    chart.push_str(&svg::line_chart(
        "dream objective trace",
        "iteration",
        "objective",
        &[("objective".to_string(), trace_pts)],
    ));
    write_artifact(&dir.join("dream_trace.svg"), &chart)?;

    write_json_artifact(
        &dir.join("dream.json"),
        &DreamArtifact {
            provenance: &provenance,
            config: &cfg.dream,
            result: &result,
        },
    )?;
    println!(
        "dream: {} iterations, final confidence {:.4} -> {}",
        result.iterations,
        result.final_confidence,
        dir.join("dream.csv").display()
    );
    Ok(())
}

// ── report ───────────────────────────────────────────────────────────

#[derive(Debug, Deserialize)]
struct StoredCrossval {
    report: CrossvalReport,
}

pub fn report_cmd(config_path: &Path, out: Option<&PathBuf>) -> CliResult<()> {
    let cfg: ReportConfig = load_json(config_path)?;
    if cfg.models.is_empty() {
        return Err(CliError::validation("invalid field `models`: empty list"));
    }
    let dir = out_dir(cfg.output_dir.as_ref(), out);
    let provenance = Provenance::new("report", 0, &cfg)?;

    let names: Vec<String> = cfg.models.iter().map(|m| m.name.clone()).collect();
    let reference = cfg
        .reference
        .clone()
        .unwrap_or_else(|| names.last().unwrap().clone());
    let mut loaded = Vec::new();
    for m in &cfg.models {
        let stored: StoredCrossval = load_json(&m.crossval_json)?;
        loaded.push(stored.report);
    }
    let report_refs: Vec<&CrossvalReport> = loaded.iter().collect();
    let table = metrics_table(&names, &report_refs, &reference)?;
    write_artifact(&dir.join("report.md"), &render_table_markdown(&table))?;
    write_artifact(
        &dir.join("report.csv"),
        &render_table_csv(&table, &provenance),
    )?;
    println!("report: {} models -> {}", names.len(), dir.join("report.md").display());
    Ok(())
}
