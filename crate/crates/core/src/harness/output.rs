use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::env::{export_events, SessionRecord};
use crate::error::{Error, Result};
use crate::fusion::export_attention;
use crate::harness::checkpoint::Checkpoint;
use crate::harness::config::{ExperimentConfig, Variant};
use crate::harness::eval::{evaluate, mean_attention};
use crate::harness::train::{RunResult, TrainOutput};

pub const RESULTS_HEADER: &str = "variant,seed,updates,f1,precision,recall,threshold,ndcg5,mse,mae,hit_rate,ils,diversity,mean_return,test_sessions,test_steps";

/// One line of `results.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub variant: Variant,
    pub seed: u64,
    pub updates: u64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub threshold: f64,
    pub ndcg5: f64,
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    pub hit_rate: f64,
    pub ils: Option<f64>,
    pub diversity: Option<f64>,
    pub mean_return: f64,
    pub test_sessions: usize,
    pub test_steps: usize,
}

impl From<&RunResult> for ResultRow {
    fn from(r: &RunResult) -> Self {
        let m = &r.metrics;
        ResultRow {
            variant: r.variant,
            seed: r.seed,
            updates: r.updates,
            f1: m.f1,
            precision: m.precision,
            recall: m.recall,
            threshold: m.threshold,
            ndcg5: m.ndcg5,
            mse: m.mse,
            mae: m.mae,
            hit_rate: m.hit_rate,
            ils: m.ils,
            diversity: m.diversity(),
            mean_return: m.mean_return,
            test_sessions: m.test_sessions,
            test_steps: m.test_steps,
        }
    }
}

impl Variant {
    pub fn from_label(label: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.label() == label)
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

pub fn results_csv(results: &[RunResult]) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for r in results.iter().map(ResultRow::from) {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.variant.label(),
            r.seed,
            r.updates,
            r.f1,
            r.precision,
            r.recall,
            r.threshold,
            r.ndcg5,
            opt(r.mse),
            opt(r.mae),
            r.hit_rate,
            opt(r.ils),
            opt(r.diversity),
            r.mean_return,
            r.test_sessions,
            r.test_steps
        )
        .expect("write to string");
    }
    out
}

pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(RESULTS_HEADER) {
        return Err(Error::Format("results.csv: unexpected header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |what: &str| Error::Format(format!("results.csv line {}: bad {what}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 16 {
                return Err(bad("field count"));
            }
            let num = |k: usize, name: &str| f[k].parse::<f64>().map_err(|_| bad(name));
            let opt = |k: usize, name: &str| match f[k] {
                "NA" => Ok(None),
                s => s.parse::<f64>().map(Some).map_err(|_| bad(name)),
            };
            Ok(ResultRow {
                variant: Variant::from_label(f[0]).ok_or_else(|| bad("variant"))?,
                seed: f[1].parse().map_err(|_| bad("seed"))?,
                updates: f[2].parse().map_err(|_| bad("updates"))?,
                f1: num(3, "f1")?,
                precision: num(4, "precision")?,
                recall: num(5, "recall")?,
                threshold: num(6, "threshold")?,
                ndcg5: num(7, "ndcg5")?,
                mse: opt(8, "mse")?,
                mae: opt(9, "mae")?,
                hit_rate: num(10, "hit_rate")?,
                ils: opt(11, "ils")?,
                diversity: opt(12, "diversity")?,
                mean_return: num(13, "mean_return")?,
                test_sessions: f[14].parse().map_err(|_| bad("test_sessions"))?,
                test_steps: f[15].parse().map_err(|_| bad("test_steps"))?,
            })
        })
        .collect()
}

pub fn relevance_diversity_csv(results: &[RunResult]) -> String {
    let mut out = String::from("variant,seed,ndcg5,diversity\n");
    for r in results {
        writeln!(out, "{},{},{},{}", r.variant.label(), r.seed, r.metrics.ndcg5, opt(r.metrics.diversity())).expect("write to string");
    }
    out
}

pub fn hit_positions_csv(results: &[RunResult]) -> String {
    let mut out = String::from("variant,seed,position,proportion\n");
    for r in results {
        for (i, p) in r.metrics.hit_positions.iter().enumerate() {
            writeln!(out, "{},{},{},{}", r.variant.label(), r.seed, i + 1, p).expect("write to string");
        }
    }
    out
}

pub fn loss_curve_csv(results: &[RunResult]) -> String {
    let mut out = String::from("variant,seed,update,loss\n");
    for r in results {
        for (i, l) in r.loss_curve.iter().enumerate() {
            writeln!(out, "{},{},{},{}", r.variant.label(), r.seed, i + 1, l).expect("write to string");
        }
    }
    out
}

/// Per-variant means, plus how many seeds the full model beat the variant on
/// mean return and NDCG@5.
pub fn summary_csv(results: &[RunResult]) -> String {
    let mut out = String::from("variant,runs,mean_return,ndcg5,f1,hit_rate,mse,mae,full_wins_return,full_wins_ndcg5\n");
    let mut variants: Vec<Variant> = results.iter().map(|r| r.variant).collect();
    variants.sort();
    variants.dedup();
    for v in variants {
        let rows: Vec<&RunResult> = results.iter().filter(|r| r.variant == v).collect();
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&RunResult) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
        let mean_opt = |f: &dyn Fn(&RunResult) -> Option<f64>| {
            rows.iter()
                .map(|r| f(r))
                .collect::<Option<Vec<f64>>>()
                .map(|xs| xs.iter().sum::<f64>() / n)
        };
        let wins = |f: &dyn Fn(&RunResult) -> f64| {
            if v == Variant::Full {
                return "NA".to_string();
            }
            let w = rows
                .iter()
                .filter(|r| {
                    results
                        .iter()
                        .find(|b| b.variant == Variant::Full && b.seed == r.seed)
                        .is_some_and(|b| f(b) > f(r))
                })
                .count();
            w.to_string()
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            v.label(),
            rows.len(),
            mean(&|r| r.metrics.mean_return),
            mean(&|r| r.metrics.ndcg5),
            mean(&|r| r.metrics.f1),
            mean(&|r| r.metrics.hit_rate),
            opt(mean_opt(&|r| r.metrics.mse)),
            opt(mean_opt(&|r| r.metrics.mae)),
            wins(&|r| r.metrics.mean_return),
            wins(&|r| r.metrics.ndcg5),
        )
        .expect("write to string");
    }
    out
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    format_version: u32,
    config_hash: String,
    seeds: Vec<u64>,
    variants: Vec<&'static str>,
    files: Vec<String>,
    config: &'a ExperimentConfig,
}

pub(crate) fn write_file(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes the result tables and a manifest into `dir`, creating it if needed.
/// `base` is the configuration the runs were derived from.
pub fn emit_results(results: &[RunResult], base: &ExperimentConfig, command: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    emit(results, base, command, dir, Vec::new())
}

fn events_jsonl(sessions: &[SessionRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    export_events(sessions, &mut out).expect("write to memory");
    out
}

/// Everything `mtdqn train` writes: the checkpoint, the training event log,
/// the mean attention weights (gated fusion only), the result tables and the
/// manifest.
pub fn emit_training(output: &TrainOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    let config = &output.checkpoint.config;
    let mut extra = vec![
        ("checkpoint.bin".to_string(), output.checkpoint.to_bytes()),
        ("events.jsonl".to_string(), events_jsonl(&output.sessions)),
    ];
    if let Some(trace) = mean_attention(&output.checkpoint)? {
        extra.push(("attention.csv".to_string(), export_attention(&trace)?.into_bytes()));
    }
    emit(std::slice::from_ref(&output.result), config, "train", dir, extra)
}

/// Re-evaluates a checkpoint; the result carries no loss curve.
pub fn evaluate_checkpoint(checkpoint: &Checkpoint) -> Result<RunResult> {
    Ok(RunResult {
        variant: checkpoint.config.variant,
        seed: checkpoint.config.seed,
        config_hash: checkpoint.config.hash(),
        updates: checkpoint.updates,
        loss_curve: Vec::new(),
        epoch_loss: Vec::new(),
        metrics: evaluate(checkpoint)?,
    })
}

/// Writes `events.jsonl` for simulated sessions.
pub fn emit_events(sessions: &[SessionRecord], dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(dir, "events.jsonl", events_jsonl(sessions))
}

fn emit(
    results: &[RunResult],
    base: &ExperimentConfig,
    command: &str,
    dir: &Path,
    extra: Vec<(String, Vec<u8>)>,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<(String, Vec<u8>)> = vec![
        ("results.csv".into(), results_csv(results).into_bytes()),
        ("summary.csv".into(), summary_csv(results).into_bytes()),
        ("relevance_diversity.csv".into(), relevance_diversity_csv(results).into_bytes()),
        ("hit_positions.csv".into(), hit_positions_csv(results).into_bytes()),
        ("loss_curve.csv".into(), loss_curve_csv(results).into_bytes()),
    ];
    files.extend(extra);
    let mut paths = Vec::new();
    for (name, bytes) in &files {
        paths.push(write_file(dir, name, bytes)?);
    }
    let mut seeds: Vec<u64> = results.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let mut variants: Vec<Variant> = results.iter().map(|r| r.variant).collect();
    variants.sort();
    variants.dedup();
    let manifest = Manifest {
        command,
        format_version: 1,
        config_hash: base.hash(),
        seeds,
        variants: variants.iter().map(|v| v.label()).collect(),
        files: files.into_iter().map(|(n, _)| n).collect(),
        config: base,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    paths.push(write_file(dir, "manifest.json", json)?);
    Ok(paths)
}
