//! Subcommand implementations.
//!
//! Every artifact is deterministic for a fixed config: the learning curve's
//! wall-clock column is zeroed, and the comm log's busy/idle counters are
//! emitted only for the lockstep executor, where they are tick counts rather
//! than measured nanoseconds.

use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use anyhow::{bail, Context, Result};
use parmac::data::{generate_synthetic, hamming_words, write_fvecs, CodeMatrix};
use parmac::eval::{ground_truth_knn, hamming_search, precision, recall_at_r};
use parmac::mac::{mac_train, RunRecord, StopReason};
use parmac::model::{read_checkpoint, write_checkpoint, BAModel};
use parmac::runtime::{self, CommLog, Executor, Phase, Scenario};
use parmac::speedup::{emit_curve, fit_time_params, random_params_sampler, theorem2_verifier};
use serde::Serialize;

use crate::config::{self, EvalConfig, FitConfig, JobConfig, SpeedupConfig};

pub fn gen(out: &Path, n: usize, dim: usize, clusters: usize, seed: u64) -> Result<()> {
    let data = generate_synthetic(n, dim, clusters, seed)?;
    let file = fs::File::create(out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut writer = BufWriter::new(file);
    write_fvecs(&data, &mut writer)?;
    writer.flush()?;
    println!("gen: wrote {n} x {dim} fvecs to {}", out.display());
    Ok(())
}

pub fn train(config_path: &Path, out_dir: &Path) -> Result<()> {
    let job: JobConfig = config::load(config_path)?;
    let data = job.data.load()?;
    let validation = job.validation.as_ref().map(|v| v.load()).transpose()?;
    let cfg = job.train_config();
    let run = mac_train(&data, validation.as_ref(), &cfg, None)?;
    fs::create_dir_all(out_dir)?;
    write_curve(&run.record, out_dir)?;
    write_model(&run.model, out_dir)?;
    println!(
        "train: {} iterations, stop: {}, outputs in {}",
        run.record.iterations.len(),
        stop_label(&run.record.stop),
        out_dir.display()
    );
    Ok(())
}

pub fn run(config_path: &Path, out_dir: &Path, p_override: Option<usize>) -> Result<()> {
    let job: JobConfig = config::load(config_path)?;
    let data = job.data.load()?;
    let validation = job.validation.as_ref().map(|v| v.load()).transpose()?;
    let cfg = job.train_config();
    let rt = job.runtime_config(p_override);
    let run = runtime::run_parmac(&data, validation.as_ref(), &cfg, &rt)?;
    fs::create_dir_all(out_dir)?;
    write_curve(&run.record, out_dir)?;
    write_model(&run.model, out_dir)?;
    write_comm(&run.comm, rt.executor == Executor::Lockstep, out_dir)?;
    println!(
        "run: P {} ({:?}), {} iterations, stop: {}, {} messages, outputs in {}",
        rt.p,
        rt.executor,
        run.record.iterations.len(),
        stop_label(&run.record.stop),
        run.comm.total_messages(),
        out_dir.display()
    );
    Ok(())
}

pub fn simulate(config_path: &Path, scenario_path: &Path, out_dir: &Path) -> Result<()> {
    let job: JobConfig = config::load(config_path)?;
    let scenario: Scenario = config::load(scenario_path)?;
    let data = job.data.load()?;
    let validation = job.validation.as_ref().map(|v| v.load()).transpose()?;
    let cfg = job.train_config();
    let run = runtime::simulate(&data, validation.as_ref(), &cfg, &scenario)?;
    fs::create_dir_all(out_dir)?;
    write_curve(&run.record, out_dir)?;
    write_model(&run.model, out_dir)?;
    write_comm(&run.comm, true, out_dir)?;
    write_json(&run.trace, &out_dir.join("trace.json"))?;
    println!(
        "simulate: P {}, {} iterations, {} messages, {} trace events, outputs in {}",
        scenario.p,
        run.record.iterations.len(),
        run.comm.total_messages(),
        run.trace.len(),
        out_dir.display()
    );
    Ok(())
}

pub fn speedup(config_path: &Path, out: &Path) -> Result<()> {
    let cfg: SpeedupConfig = config::load(config_path)?;
    match (cfg.curve, cfg.verify) {
        (Some(curve), None) => {
            let params = curve.params()?;
            let p_max = curve.p_max.unwrap_or(2 * params.m);
            fs::write(out, emit_curve(&params, p_max, curve.stride))
                .with_context(|| format!("cannot write {}", out.display()))?;
            println!(
                "speedup: curve for M {} over P 1..={p_max} in {}",
                params.m,
                out.display()
            );
            Ok(())
        }
        (None, Some(v)) => {
            let report = theorem2_verifier(
                &v.m_values,
                random_params_sampler(v.seed),
                v.draws,
                v.grid_density,
            );
            write_json(&report, out)?;
            println!(
                "speedup: verifier made {} comparisons over {} draws, {} violations, report in {}",
                report.comparisons,
                report.draws,
                report.violations.len(),
                out.display()
            );
            if !report.passed() {
                bail!("theorem verification failed, see {}", out.display());
            }
            Ok(())
        }
        _ => bail!("speedup config must contain exactly one of curve or verify"),
    }
}

pub fn eval(config_path: &Path, out: &Path) -> Result<()> {
    let cfg: EvalConfig = config::load(config_path)?;
    let model = read_model(&cfg.checkpoint)?;
    let base = cfg.base.load()?;
    if base.dim() != model.dim() {
        bail!(
            "checkpoint expects dimension {}, base set has {}",
            model.dim(),
            base.dim()
        );
    }
    let self_mode = cfg.queries.is_none();
    let queries = cfg.queries.as_ref().map(|q| q.load()).transpose()?;
    let queries = queries.as_ref().unwrap_or(&base);
    if queries.dim() != base.dim() {
        bail!(
            "query dimension {} does not match base dimension {}",
            queries.dim(),
            base.dim()
        );
    }

    let gt = ground_truth_knn(&base, queries, cfg.k_true, self_mode)?;
    let base_codes = model.encoder.encode_dataset(&base);
    let query_codes = if self_mode {
        base_codes.clone()
    } else {
        model.encoder.encode_dataset(queries)
    };
    let k = cfg.k_retrieved.min(base.n_points());
    let retrieved: Vec<Vec<u32>> = (0..queries.n_points())
        .map(|q| {
            let skip = if self_mode { Some(q as u32) } else { None };
            hamming_search(&base_codes, query_codes.code_words(q), k, skip)
        })
        .collect();
    let prec = precision(&gt, &retrieved);

    let true_nn: Vec<u32> = (0..gt.n_queries()).map(|q| gt.query(q)[0]).collect();
    let mut recall = serde_json::Map::new();
    for &r in &cfg.r_list {
        let value = if self_mode {
            recall_self_excluded(&base_codes, &true_nn, r)
        } else {
            recall_at_r(&base_codes, &query_codes, &true_nn, r)
        };
        recall.insert(r.to_string(), value.into());
    }
    let metrics = serde_json::json!({ "precision": prec, "recall": recall });
    write_json(&metrics, out)?;
    println!(
        "eval: precision {prec:.2} over {} queries, metrics in {}",
        queries.n_points(),
        out.display()
    );
    Ok(())
}

pub fn fit_times(config_path: &Path, out: &Path) -> Result<()> {
    let cfg: FitConfig = config::load(config_path)?;
    if cfg.measured.len() < 2 {
        bail!("need at least two measured (P, speedup) pairs");
    }
    let (t_w_c, t_z_r) = fit_time_params(&cfg.measured, cfg.n, cfg.m, cfg.e);
    let fitted = serde_json::json!({ "t_w_r": 1.0, "t_w_c": t_w_c, "t_z_r": t_z_r });
    write_json(&fitted, out)?;
    println!(
        "fit-times: t_w_c {t_w_c}, t_z_r {t_z_r} from {} measurements, written to {}",
        cfg.measured.len(),
        out.display()
    );
    Ok(())
}

/// recall@R when the base set queries itself: the query's own code is exempt
/// from the ranking, matching the self-skip used for retrieval.
fn recall_self_excluded(codes: &CodeMatrix, true_nn: &[u32], r: usize) -> f64 {
    if true_nn.is_empty() {
        return 0.0;
    }
    let mut found = 0usize;
    for (q, &nn) in true_nn.iter().enumerate() {
        let qw = codes.code_words(q);
        let d_star = hamming_words(codes.code_words(nn as usize), qw);
        let closer = (0..codes.n_points())
            .filter(|&i| i != q && i as u32 != nn)
            .filter(|&i| hamming_words(codes.code_words(i), qw) < d_star)
            .count();
        if closer < r {
            found += 1;
        }
    }
    found as f64 / true_nn.len() as f64
}

fn read_model(path: &Path) -> Result<BAModel> {
    let file = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    read_checkpoint(std::io::BufReader::new(file))
        .with_context(|| format!("cannot parse checkpoint {}", path.display()))
}

fn write_model(model: &BAModel, dir: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    write_checkpoint(model, &mut bytes)?;
    let path = dir.join("model.ckpt");
    fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

/// Learning-curve CSV with the wall-clock column zeroed, so identical
/// configs produce identical bytes.
fn write_curve(record: &RunRecord, dir: &Path) -> Result<()> {
    let mut stable = record.clone();
    for it in &mut stable.iterations {
        it.seconds = 0.0;
    }
    let path = dir.join("learning_curve.csv");
    fs::write(&path, stable.to_csv()).with_context(|| format!("cannot write {}", path.display()))
}

#[derive(Serialize)]
struct StepSummary<'a> {
    phase: Phase,
    iter: u32,
    messages: u64,
    bytes: u64,
    trains: u64,
    ticks: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    busy: Option<&'a [u64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    idle: Option<&'a [u64]>,
}

#[derive(Serialize)]
struct CommSummary<'a> {
    messages: u64,
    bytes: u64,
    trains: u64,
    steps: Vec<StepSummary<'a>>,
}

/// Comm-log JSON. `work_counters` gates the per-machine busy/idle vectors:
/// deterministic tick counts under lockstep, measured nanoseconds (excluded)
/// under threads.
fn write_comm(log: &CommLog, work_counters: bool, dir: &Path) -> Result<()> {
    let steps = log
        .steps
        .iter()
        .map(|s| StepSummary {
            phase: s.phase,
            iter: s.iter,
            messages: s.messages,
            bytes: s.bytes,
            trains: s.trains,
            ticks: s.ticks,
            busy: work_counters.then(|| s.busy.as_slice()),
            idle: work_counters.then(|| s.idle.as_slice()),
        })
        .collect();
    let summary = CommSummary {
        messages: log.total_messages(),
        bytes: log.total_bytes(),
        trains: log.total_trains(),
        steps,
    };
    write_json(&summary, &dir.join("comm_log.json"))
}

fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn stop_label(stop: &StopReason) -> &'static str {
    match stop {
        StopReason::ScheduleExhausted => "schedule exhausted",
        StopReason::ZStable => "codes stable",
        StopReason::ValidationDrop => "validation drop",
    }
}
