use std::collections::HashMap;
use std::path::Path;

use ldgd_core::data::io::{dataset_to_string, metadata_path, metadata_to_string};
use ldgd_core::data::{kfold_split, load_dataset, synth_generate, DatasetFormat};
use ldgd_core::decode::{
    decode_table, evaluate_with_classes, infer_latent_from, initial_test_latent, DecodeResult, Metrics, TestInit,
};
use ldgd_core::model::{load_model, model_to_json, ModelState, ParamGroup};
use ldgd_core::train::{grad_check, grad_check_corrupted, tiny_model, trace_table};
use ldgd_core::{Dataset, FoldSplit};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{LatentInit, RunConfig};
use crate::error::{CliError, Result};
use crate::output::{atomic_write, latent_table, matrix_table, write_json, Table};
use crate::pipeline;

fn load(path: &Path) -> Result<Dataset> {
    Ok(load_dataset(path, DatasetFormat::default())?)
}

fn out(cfg: &RunConfig, name: &str) -> std::path::PathBuf {
    cfg.paths.output_dir.join(name)
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let (data, x) = synth_generate(&cfg.synth)?;
    let path = cfg.dataset_path()?;
    let s = &cfg.synth;
    let provenance = format!(
        "synthetic: n={} d={} k={} q_true={} noise_sd={} class_separation={} seed={}",
        s.n, s.d, s.k, s.q_true, s.noise_sd, s.class_separation, s.seed
    );
    atomic_write(path, &dataset_to_string(&data, DatasetFormat::default())?)?;
    atomic_write(&metadata_path(path), &metadata_to_string(&data, &provenance)?)?;
    atomic_write(&out(cfg, "true_latent.csv"), &matrix_table(data.trial_ids(), "x", &x)?)?;
    println!(
        "synth: N={} D={} K={} -> {}",
        data.n(),
        data.d(),
        data.k(),
        path.display()
    );
    Ok(())
}

fn relevance_table(model: &ModelState) -> Result<String> {
    let mut t = Table::new(&["continuous", "discrete"])?;
    for (c, d) in model.kernel_cont.relevance().iter().zip(model.kernel_disc.relevance()) {
        t.row(&[c.to_string(), d.to_string()])?;
    }
    t.finish()
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    iterations: usize,
    initial_elbo: f64,
    final_elbo: f64,
    best_iteration: usize,
    converged: bool,
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let raw = load(cfg.dataset_path()?)?;
    let (model, trace) = pipeline::train(cfg, &raw)?;
    atomic_write(&cfg.model_out(), &model_to_json(&model)?)?;
    atomic_write(&out(cfg, "trace.csv"), &trace_table(&trace, cfg.output.wall_time))?;
    atomic_write(&out(cfg, "relevance.csv"), &relevance_table(&model)?)?;
    write_json(
        &out(cfg, "train_summary.json"),
        &TrainSummary {
            iterations: trace.iterations(),
            initial_elbo: trace.initial_eval,
            final_elbo: trace.final_eval,
            best_iteration: trace.best_iteration,
            converged: trace.converged,
        },
    )?;
    println!(
        "train: {} iterations, full-batch ELBO {:.4} -> {:.4} (snapshot from iteration {})",
        trace.iterations(),
        trace.initial_eval,
        trace.final_eval,
        trace.best_iteration
    );
    Ok(())
}

fn test_init(cfg: &RunConfig) -> TestInit {
    match cfg.decode.init {
        LatentInit::Nearest => TestInit::Nearest,
        LatentInit::Random => TestInit::Random { seed: cfg.decode.seed },
    }
}

pub fn infer(cfg: &RunConfig) -> Result<()> {
    let model = load_model(&cfg.model_in())?;
    let raw = load(cfg.dataset_path()?)?;
    let y = pipeline::to_model_space(&model, &raw)?;
    let start = initial_test_latent(&model, &y, test_init(cfg))?;
    let latent = infer_latent_from(&model, &y, raw.labels(), &cfg.decode.optimizer(), start)?;
    atomic_write(
        &out(cfg, "inferred_latent.csv"),
        &latent_table(raw.trial_ids(), &latent)?,
    )?;
    println!("infer: {} trials, Q={}", latent.n(), latent.q());
    Ok(())
}

/// `trial_id` plus the three (or Q) most relevant latent dimensions.
fn scatter_table(model: &ModelState, ids: &[String], result: &DecodeResult) -> Result<String> {
    let dims: Vec<usize> = pipeline::relevance_order(model).into_iter().take(3).collect();
    let mut header = vec!["trial_id".to_string()];
    header.extend(dims.iter().map(|d| format!("x{d}")));
    let mut t = Table::new(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(dims.iter().map(|&d| result.latent.mu_star[(i, d)].to_string()));
        t.row(&row)?;
    }
    t.finish()
}

/// Reads only trial ids and features; the label column never reaches the
/// decoder or any output.
pub fn decode(cfg: &RunConfig) -> Result<()> {
    let model = load_model(&cfg.model_in())?;
    let raw = load(cfg.dataset_path()?)?;
    let ids = raw.trial_ids().to_vec();
    let y = pipeline::to_model_space(&model, &raw)?;
    drop(raw);
    let result = pipeline::decode(cfg, &model, &y)?;
    atomic_write(&cfg.predictions_path(), &decode_table(&result, &ids, None)?)?;
    atomic_write(&out(cfg, "latent_scatter.csv"), &scatter_table(&model, &ids, &result)?)?;
    atomic_write(&out(cfg, "decoded_latent.csv"), &latent_table(&ids, &result.latent)?)?;
    println!("decode: {} trials -> {}", ids.len(), cfg.predictions_path().display());
    Ok(())
}

/// Appends a `truth` column, matching rows on `trial_id`.
fn join_truth(path: &Path, truth: &HashMap<&str, usize>) -> Result<(String, Vec<usize>, Vec<usize>)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let bad = |m: String| CliError::Core(ldgd_core::Error::InvalidData(format!("{}: {m}", path.display())));
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let pred_col = header.iter().position(|h| h == "predicted");
    let mut cols: Vec<String> = header.iter().map(str::to_string).collect();
    cols.push("truth".into());
    let mut t = Table::new(&cols)?;
    let (mut pred, mut tru) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let id = rec.get(0).unwrap_or_default();
        let label = *truth
            .get(id)
            .ok_or_else(|| bad(format!("trial `{id}` not in the dataset")))?;
        if let Some(c) = pred_col {
            let p = rec
                .get(c)
                .and_then(|v| v.parse::<usize>().ok())
                .ok_or_else(|| bad(format!("bad predicted value for trial `{id}`")))?;
            pred.push(p);
            tru.push(label);
        }
        let mut row: Vec<String> = rec.iter().map(str::to_string).collect();
        row.push(label.to_string());
        t.row(&row)?;
    }
    Ok((t.finish()?, pred, tru))
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let raw = load(cfg.dataset_path()?)?;
    let truth: HashMap<&str, usize> = raw
        .trial_ids()
        .iter()
        .map(String::as_str)
        .zip(raw.labels().iter().copied())
        .collect();
    let (labeled, pred, tru) = join_truth(&cfg.predictions_path(), &truth)?;
    if pred.is_empty() {
        return Err(CliError::Config("predictions file has no `predicted` rows".into()));
    }
    let metrics = evaluate_with_classes(&pred, &tru, raw.k())?;
    atomic_write(&out(cfg, "labeled_predictions.csv"), &labeled)?;
    let scatter = out(cfg, "latent_scatter.csv");
    if scatter.exists() {
        atomic_write(&out(cfg, "labeled_scatter.csv"), &join_truth(&scatter, &truth)?.0)?;
    }
    write_json(&out(cfg, "metrics.json"), &metrics)?;
    println!(
        "eval: n={} accuracy {:.4} macro-F {:.4}",
        metrics.n, metrics.accuracy, metrics.macro_f
    );
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig) -> Result<()> {
    let g = &cfg.gradcheck;
    let mut t = Table::new(&["seed", "group", "n_params", "max_rel_error", "passed"])?;
    let mut worst: Vec<(ParamGroup, f64)> = ParamGroup::ALL.iter().map(|&p| (p, 0.0)).collect();
    let mut failures = Vec::new();
    for seed in 0..g.seeds {
        let (state, data) = tiny_model(seed);
        let report = if g.corrupt {
            grad_check_corrupted(&state, &data, g.h, g.tol, seed, seed as usize * 7)?
        } else {
            grad_check(&state, &data, g.h, g.tol, seed)?
        };
        for (gc, w) in report.groups.iter().zip(worst.iter_mut()) {
            w.1 = w.1.max(gc.max_rel_error);
            t.row(&[
                seed.to_string(),
                gc.group.name().to_string(),
                gc.n_params.to_string(),
                format!("{:e}", gc.max_rel_error),
                gc.passed.to_string(),
            ])?;
            if !gc.passed {
                failures.push(format!("seed {seed} {}", gc.group));
            }
        }
    }
    atomic_write(&out(cfg, "gradcheck.csv"), &t.finish()?)?;
    println!("{:<26} {:>14}", "group", "max_rel_error");
    for (group, e) in &worst {
        println!("{:<26} {:>14.3e}", group.name(), e);
    }
    if failures.is_empty() {
        println!("gradcheck: {} models passed (tol {:e})", g.seeds, g.tol);
        Ok(())
    } else {
        Err(CliError::GradCheck(failures.join(", ")))
    }
}

struct FoldRun {
    metrics: Metrics,
    result: DecodeResult,
    test: Vec<usize>,
    n_train: usize,
    initial_elbo: f64,
    final_elbo: f64,
    relevance: (Vec<f64>, Vec<f64>),
}

fn run_fold(cfg: &RunConfig, raw: &Dataset, split: &FoldSplit, fold: usize) -> Result<FoldRun> {
    let train_idx = split.train_indices(fold);
    let test_idx = split.test_indices(fold);
    let train = raw.subset(&train_idx)?;
    let test = raw.subset(&test_idx)?;
    let (model, trace) = pipeline::train(cfg, &train)?;
    let y = pipeline::to_model_space(&model, &test)?;
    let result = pipeline::decode(cfg, &model, &y)?;
    let metrics = evaluate_with_classes(&result.predicted, test.labels(), raw.k())?;
    log::info!(
        "fold {fold}: accuracy {:.4} macro-F {:.4}",
        metrics.accuracy,
        metrics.macro_f
    );
    Ok(FoldRun {
        metrics,
        result,
        test: test_idx,
        n_train: train_idx.len(),
        initial_elbo: trace.initial_eval,
        final_elbo: trace.final_eval,
        relevance: (model.kernel_cont.relevance(), model.kernel_disc.relevance()),
    })
}

#[derive(Debug, Serialize)]
struct CvSummary {
    k_folds: usize,
    completed_folds: usize,
    incomplete_folds: Vec<usize>,
    accuracy_mean: f64,
    accuracy_sd: f64,
    macro_f_mean: f64,
    macro_f_sd: f64,
    /// `mean ± sd` strings in the layout of a results-table row.
    accuracy: String,
    f_measure: String,
    pooled: Option<Metrics>,
}

/// Mean and sample standard deviation (0 for a single value).
fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, sd)
}

pub fn cv(cfg: &RunConfig) -> Result<()> {
    let raw = load(cfg.dataset_path()?)?;
    let k = cfg.cv.k_folds;
    let split = if k == raw.n() {
        FoldSplit::leave_one_out(raw.n())
    } else {
        kfold_split(raw.labels(), k, cfg.cv.seed)?
    };
    let folds: Vec<usize> = (0..k).collect();
    let runs: Vec<Result<FoldRun>> = if cfg.cv.parallel {
        folds.par_iter().map(|&f| run_fold(cfg, &raw, &split, f)).collect()
    } else {
        folds.iter().map(|&f| run_fold(cfg, &raw, &split, f)).collect()
    };

    let kc = raw.k();
    let mut header: Vec<String> = ["fold", "n_train", "n_test", "status", "accuracy", "macro_f"]
        .map(String::from)
        .to_vec();
    header.extend((0..kc).map(|c| format!("f_class{c}")));
    header.extend(["initial_elbo", "final_elbo"].map(String::from));
    let mut fold_table = Table::new(&header)?;
    let mut pred_header = vec!["trial_id".to_string(), "fold".to_string()];
    pred_header.extend((0..kc).map(|c| format!("p_class{c}")));
    pred_header.extend(["predicted", "truth"].map(String::from));
    let mut pred_table = Table::new(&pred_header)?;
    let mut rel_table = Table::new(&["fold", "dim", "continuous", "discrete"])?;

    let (mut accs, mut fs, mut incomplete) = (Vec::new(), Vec::new(), Vec::new());
    let (mut pooled_pred, mut pooled_truth) = (Vec::new(), Vec::new());
    for (fold, run) in runs.iter().enumerate() {
        let n_test = split.test_indices(fold).len();
        match run {
            Ok(r) => {
                let mut row = vec![fold.to_string(), r.n_train.to_string(), n_test.to_string(), "ok".into()];
                row.push(r.metrics.accuracy.to_string());
                row.push(r.metrics.macro_f.to_string());
                row.extend(r.metrics.per_class_f.iter().map(|v| v.to_string()));
                row.push(r.initial_elbo.to_string());
                row.push(r.final_elbo.to_string());
                fold_table.row(&row)?;
                accs.push(r.metrics.accuracy);
                fs.push(r.metrics.macro_f);
                for (j, &i) in r.test.iter().enumerate() {
                    let mut row = vec![raw.trial_ids()[i].clone(), fold.to_string()];
                    row.extend(r.result.class_probs.row(j).iter().map(|p| p.to_string()));
                    row.push(r.result.predicted[j].to_string());
                    row.push(raw.labels()[i].to_string());
                    pred_table.row(&row)?;
                    pooled_pred.push(r.result.predicted[j]);
                    pooled_truth.push(raw.labels()[i]);
                }
                for (d, (c, s)) in r.relevance.0.iter().zip(&r.relevance.1).enumerate() {
                    rel_table.row(&[fold.to_string(), d.to_string(), c.to_string(), s.to_string()])?;
                }
            }
            Err(e) => {
                log::warn!("fold {fold} failed: {e}");
                let mut row = vec![
                    fold.to_string(),
                    split.train_indices(fold).len().to_string(),
                    n_test.to_string(),
                ];
                row.push(format!("failed: {e}"));
                row.extend(std::iter::repeat_n(String::new(), 2 + kc + 2));
                fold_table.row(&row)?;
                incomplete.push(fold);
            }
        }
    }
    let (acc_m, acc_sd) = mean_sd(&accs);
    let (f_m, f_sd) = mean_sd(&fs);
    let summary = CvSummary {
        k_folds: k,
        completed_folds: accs.len(),
        incomplete_folds: incomplete,
        accuracy_mean: acc_m,
        accuracy_sd: acc_sd,
        macro_f_mean: f_m,
        macro_f_sd: f_sd,
        accuracy: format!("{acc_m:.2} ± {acc_sd:.2}"),
        f_measure: format!("{f_m:.2} ± {f_sd:.2}"),
        pooled: if pooled_pred.is_empty() {
            None
        } else {
            Some(evaluate_with_classes(&pooled_pred, &pooled_truth, kc)?)
        },
    };
    atomic_write(&out(cfg, "cv_folds.csv"), &fold_table.finish()?)?;
    atomic_write(&out(cfg, "cv_predictions.csv"), &pred_table.finish()?)?;
    atomic_write(&out(cfg, "cv_relevance.csv"), &rel_table.finish()?)?;
    write_json(&out(cfg, "cv_summary.json"), &summary)?;
    println!(
        "cv: {}/{} folds, accuracy {} F {}",
        summary.completed_folds, k, summary.accuracy, summary.f_measure
    );
    if summary.completed_folds == 0 {
        return Err(match runs.into_iter().find_map(|r| r.err()) {
            Some(e) => e,
            None => CliError::Config("no folds ran".into()),
        });
    }
    Ok(())
}
