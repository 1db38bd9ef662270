//! The distributed ParMAC engine.
//!
//! `P` workers hold disjoint shards of the training data and their points'
//! codes; neither ever leaves its machine. Each MAC iteration runs a W step
//! by circulating the `L + D` submodels around a ring (every submodel trains
//! on every shard `e` times, then rides one final lap so all machines end
//! with identical replicas) and a Z step that re-optimizes each worker's
//! codes locally with no communication at all.
//!
//! Two executors share the worker logic: a deterministic single-threaded
//! lockstep simulator (with scripted faults and membership changes, emitting
//! a tick-by-tick trace) and a thread-per-worker executor over OS channels.
//! A one-machine run reproduces the serial trainer bit for bit.

mod scenario;
mod sim;
mod threads;
mod topology;
mod wire;
mod worker;

pub use scenario::{FaultEvent, MembershipEvent, MembershipOp, Phase, Scenario};
pub use topology::{reshuffle_topology, Topology};
pub use wire::{decode_message, encode_message, Message, VisitSet};

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{partition, CodeMatrix, Dataset};
use crate::mac::{
    prepare_training, IterOutcome, LoopState, MacError, MacRun, TrainConfig, WMode, ZStats,
};
use crate::model::{e_ba, e_q_parts, BAModel, SubmodelKind};
use crate::seed::{derive_seed, SEED_TAG_TOPOLOGY};

use worker::{seed_homed, StepPlan, Worker};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Mac(#[from] MacError),
    #[error("machine {0} failed outside fault-tolerant mode")]
    DeadWorker(usize),
    #[error("submodel {0:?} lost with no surviving copy")]
    UnrecoverableLoss(SubmodelKind),
    #[error("cannot remove the last machine")]
    LastMachine,
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("malformed message: {0}")]
    BadMessage(String),
}

/// How to execute the cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Executor {
    /// Deterministic single-threaded simulation with a tick clock.
    Lockstep,
    /// One OS thread per worker, messages over channels. Model output is
    /// identical to lockstep; only the timing measurements differ.
    Threads,
}

/// Settings for a clean (unscripted) distributed run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuntimeConfig {
    pub p: usize,
    pub executor: Executor,
    /// Train `e` consecutive passes per machine visit, cutting the W step to
    /// two communication rounds.
    #[serde(default)]
    pub consecutive_pass: bool,
    /// Re-randomize the ring before every W step after the first.
    #[serde(default)]
    pub reshuffle: bool,
}

impl RuntimeConfig {
    pub fn new(p: usize) -> Self {
        RuntimeConfig {
            p,
            executor: Executor::Lockstep,
            consecutive_pass: false,
            reshuffle: false,
        }
    }
}

/// Communication and activity counters for one W or Z step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepStats {
    pub phase: Phase,
    pub iter: u32,
    /// Messages sent. A W step cannot end with messages in flight, so in a
    /// fault-free run every one of them is also delivered and processed.
    pub messages: u64,
    pub bytes: u64,
    /// Submodel training events (one per trained visit).
    pub trains: u64,
    /// Per machine id: lockstep counts busy/idle ticks, the threaded
    /// executor busy/blocked nanoseconds.
    pub busy: Vec<u64>,
    pub idle: Vec<u64>,
    /// Ticks the step spanned (lockstep only).
    pub ticks: u64,
}

impl StepStats {
    pub(super) fn new(phase: Phase, iter: u32, machines: usize) -> Self {
        StepStats {
            phase,
            iter,
            messages: 0,
            bytes: 0,
            trains: 0,
            busy: vec![0; machines],
            idle: vec![0; machines],
            ticks: 0,
        }
    }
}

/// Per-step communication log for a whole run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLog {
    pub steps: Vec<StepStats>,
}

impl CommLog {
    pub fn total_messages(&self) -> u64 {
        self.steps.iter().map(|s| s.messages).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.steps.iter().map(|s| s.bytes).sum()
    }

    pub fn total_trains(&self) -> u64 {
        self.steps.iter().map(|s| s.trains).sum()
    }

    /// Busy time summed over machines and steps of the given phase.
    pub fn phase_busy(&self, phase: Phase) -> u64 {
        self.steps
            .iter()
            .filter(|s| s.phase == phase)
            .map(|s| s.busy.iter().sum::<u64>())
            .sum()
    }
}

/// One event in the lockstep simulator's tick-by-tick schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub tick: u64,
    pub machine: usize,
    pub kind: TraceKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TraceKind {
    Train { submodel: SubmodelKind, counter: u32 },
    Send { submodel: SubmodelKind, counter: u32, to: usize },
    Store { submodel: SubmodelKind },
    ZApply { changed: usize },
    Fault { phase: Phase },
    Removed,
    Added,
    Restored { submodel: SubmodelKind, from_replica: bool },
    Reshuffled,
}

/// Result of a distributed run: the serial result fields plus the
/// communication log and (for lockstep runs) the event trace.
#[derive(Debug, Clone)]
pub struct ParmacRun {
    pub model: BAModel,
    pub record: crate::mac::RunRecord,
    /// Final training codes, one row per training point; rows of machines
    /// that died keep their last pre-fault values.
    pub codes: CodeMatrix,
    pub comm: CommLog,
    pub trace: Vec<TraceEvent>,
}

impl ParmacRun {
    pub fn to_mac_run(self) -> MacRun {
        MacRun {
            model: self.model,
            record: self.record,
            half_steps: Vec::new(),
            codes: self.codes,
        }
    }
}

/// Runs ParMAC on `p` machines with the same contract as `mac_train`: same
/// splits, initialization, schedule and stopping rules, driven by the chosen
/// executor. A run with `p = 1` produces a bitwise-identical model and run
/// record.
pub fn run_parmac(
    data: &Dataset,
    validation: Option<&Dataset>,
    cfg: &TrainConfig,
    rt: &RuntimeConfig,
) -> Result<ParmacRun, RuntimeError> {
    let scenario = Scenario {
        p: rt.p,
        seed: None,
        fault_tolerant: false,
        consecutive_pass: rt.consecutive_pass,
        reshuffle: rt.reshuffle,
        faults: Vec::new(),
        membership: Vec::new(),
    };
    drive(data, validation, cfg, &scenario, rt.executor)
}

/// Runs a scripted cluster on the lockstep simulator: faults and membership
/// events fire at their ticks, with needs-list routing and predecessor-copy
/// recovery when `scenario.fault_tolerant` is set.
pub fn simulate(
    data: &Dataset,
    validation: Option<&Dataset>,
    cfg: &TrainConfig,
    scenario: &Scenario,
) -> Result<ParmacRun, RuntimeError> {
    drive(data, validation, cfg, scenario, Executor::Lockstep)
}

/// Shared driver: setup identical to the serial trainer, then per iteration
/// one distributed W step and one local-per-worker Z step, with objectives
/// and the validation metric aggregated in machine-id order.
fn drive(
    data: &Dataset,
    validation: Option<&Dataset>,
    cfg: &TrainConfig,
    scenario: &Scenario,
    executor: Executor,
) -> Result<ParmacRun, RuntimeError> {
    if scenario.p == 0 {
        return Err(MacError::InvalidConfig("need at least one machine".into()).into());
    }
    if cfg.w_mode != WMode::Sgd {
        return Err(MacError::InvalidConfig(
            "distributed runs train all submodels by SGD; the exact decoder solve needs \
             the whole dataset on one machine"
                .into(),
        )
        .into());
    }
    if scenario.has_events() {
        if executor != Executor::Lockstep {
            return Err(RuntimeError::InvalidScenario(
                "faults and membership changes run on the lockstep simulator".into(),
            ));
        }
        if scenario.fault_tolerant && (cfg.sgd.epochs != 1 || scenario.consecutive_pass) {
            return Err(RuntimeError::InvalidScenario(
                "fault-tolerant routing tracks one visit list per W step and needs e = 1 \
                 without consecutive-pass mode"
                    .into(),
            ));
        }
    }

    let mut cfg = cfg.clone();
    if let Some(seed) = scenario.seed {
        cfg.seed = seed;
    }
    let setup = prepare_training(data, validation, &cfg, None)?;
    let train = &setup.train;
    let n = train.n_points();
    let l = cfg.l;
    let d = train.dim();

    // Equal-speed contiguous shards; local code row i is global row
    // start + i.
    let part = partition(n, &vec![1.0; scenario.p]).map_err(MacError::from)?;
    let mut workers: Vec<Worker> = (0..scenario.p)
        .map(|id| {
            let rows = part.indices(id);
            let mut codes = CodeMatrix::zeros(rows.len(), l);
            for (local, &global) in rows.iter().enumerate() {
                codes.set_code_u64(local, setup.codes.code_u64(global));
            }
            Worker::new(id, rows, codes, BAModel::zeros(l, d))
        })
        .collect();
    let mut topology = Topology::ring(scenario.p);

    let mut events = sim::EventQueue::from_scenario(scenario)?;
    let mut comm = CommLog::default();
    let mut trace: Vec<TraceEvent> = Vec::new();
    let mut state = LoopState::new();
    let mut tick: u64 = 0;
    let mut final_model = BAModel::zeros(l, d);

    for i in 0..cfg.schedule.iterations {
        let mu = cfg.schedule.value(i);
        let t0 = Instant::now();

        if scenario.reshuffle && i >= 1 && topology.live_count() >= 2 {
            let seed = derive_seed(cfg.seed, &[SEED_TAG_TOPOLOGY, u64::from(i)]);
            topology = reshuffle_topology(&topology, seed);
            trace.push(TraceEvent {
                tick,
                machine: topology.live()[0],
                kind: TraceKind::Reshuffled,
            });
        }

        let live = topology.live();
        let plan = StepPlan {
            iter: i,
            live: VisitSet::from_ids(&live),
            live_count: live.len(),
            e: cfg.sgd.epochs,
            consecutive: scenario.consecutive_pass,
            fault_tolerant: scenario.fault_tolerant,
        };
        for &id in &live {
            workers[id].begin_w_step();
        }
        seed_homed(&mut workers, &live, &plan);

        let mut w_stats = StepStats::new(Phase::W, i, workers.len());
        match executor {
            Executor::Lockstep => sim::lockstep_w_step(
                train,
                &mut workers,
                &mut topology,
                &setup.sgd,
                &plan,
                &mut events,
                &mut tick,
                &mut w_stats,
                &mut trace,
            )?,
            Executor::Threads => threads::threads_w_step(
                train,
                &mut workers,
                &topology,
                &setup.sgd,
                &plan,
                &mut w_stats,
            )?,
        }
        comm.steps.push(w_stats);

        let live = topology.live();
        debug_assert!(
            live.iter()
                .all(|&id| workers[id].replica == workers[live[0]].replica),
            "replicas diverged at W-step end"
        );
        let replica = workers[live[0]].replica.clone();

        let mut z_stats = StepStats::new(Phase::Z, i, workers.len());
        let zstats = match executor {
            Executor::Lockstep => sim::lockstep_z_step(
                train,
                &mut workers,
                &mut topology,
                cfg.z_mode,
                mu,
                &mut events,
                &mut tick,
                &mut z_stats,
                &mut trace,
            )?,
            Executor::Threads => {
                threads::threads_z_step(train, &mut workers, cfg.z_mode, mu, &mut z_stats)?
            }
        };
        comm.steps.push(z_stats);

        let live = topology.live();
        let (mut recon, mut mismatch) = (0.0f64, 0u64);
        let mut e_ba_val = 0.0f64;
        for &id in &live {
            let w = &workers[id];
            let (r, m) = e_q_parts(&w.replica, train, &w.rows, &w.codes);
            recon += r;
            mismatch += m;
            e_ba_val += e_ba(&w.replica, train, &w.rows);
        }
        let e_q_val = recon + mu * mismatch as f64;
        let precision = setup.precision(&replica, &cfg.metric);

        let out = IterOutcome {
            e_q: e_q_val,
            e_ba: e_ba_val,
            precision,
            zstats,
            seconds: t0.elapsed().as_secs_f64(),
        };
        final_model = replica.clone();
        if state.push(i, mu, out, &replica, cfg.early_stop) {
            break;
        }
    }

    events.require_drained()?;
    let (model, record) = state.finish(final_model);

    let mut codes = CodeMatrix::zeros(n, l);
    for w in &workers {
        for (local, &global) in w.rows.iter().enumerate() {
            if local < w.codes.n_points() {
                codes.set_code_u64(global, w.codes.code_u64(local));
            }
        }
    }

    Ok(ParmacRun {
        model,
        record,
        codes,
        comm,
        trace,
    })
}

/// Aggregated Z statistics over live workers, summed in machine-id order.
pub(crate) fn sum_zstats(parts: &[ZStats]) -> ZStats {
    ZStats {
        changed: parts.iter().map(|z| z.changed).sum(),
        mismatches: parts.iter().map(|z| z.mismatches).sum(),
    }
}
