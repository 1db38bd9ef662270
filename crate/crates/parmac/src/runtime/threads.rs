//! Thread-per-machine executor over OS channels.
//!
//! The same per-worker state machine as the lockstep simulator, scheduled by
//! the operating system instead of a tick clock. A submodel's payload walks
//! the same machines with the same counters regardless of how arrivals
//! interleave at each stop, and a store writes bytes that do not depend on
//! when they land, so the trained model is bitwise identical to the lockstep
//! result. Timing columns switch from ticks to nanoseconds: busy measures
//! message processing, idle measures blocking receives.
//!
//! Exit needs no coordination round: once a machine has stored every
//! submodel it has seen each one's last visit here, so nothing further can
//! arrive and it simply hangs up.

use std::sync::mpsc::{channel, Receiver, Sender};
use std::thread;
use std::time::Instant;

use crate::data::Dataset;
use crate::mac::{MacError, ZMode, ZStats};
use crate::model::SgdConfig;

use super::topology::Topology;
use super::wire::{decode_message, encode_message};
use super::worker::{StepPlan, Worker};
use super::{sum_zstats, RuntimeError, StepStats};

struct WorkerTally {
    messages: u64,
    bytes: u64,
    trains: u64,
    busy: u64,
    idle: u64,
}

/// One W step with a thread per machine; faults and membership changes are
/// the simulator's business, not this executor's.
pub(super) fn threads_w_step(
    data: &Dataset,
    workers: &mut [Worker],
    topology: &Topology,
    sgd: &SgdConfig,
    plan: &StepPlan,
    stats: &mut StepStats,
) -> Result<(), RuntimeError> {
    let m_total = workers[0].replica.submodels();
    let l = workers[0].replica.bits();
    let d = workers[0].replica.dim();
    let p = workers.len();

    let mut txs = Vec::with_capacity(p);
    let mut rxs = Vec::with_capacity(p);
    for _ in 0..p {
        let (tx, rx) = channel::<Vec<u8>>();
        txs.push(tx);
        rxs.push(rx);
    }

    let tallies = thread::scope(|s| -> Result<Vec<WorkerTally>, RuntimeError> {
        let mut handles = Vec::with_capacity(p);
        for (w, rx) in workers.iter_mut().zip(rxs) {
            let txs = txs.clone();
            let succ = topology.successor(w.id);
            handles.push(
                s.spawn(move || run_worker(w, rx, txs, succ, data, sgd, plan, m_total, l, d)),
            );
        }
        drop(txs);
        let mut tallies = Vec::with_capacity(p);
        for h in handles {
            tallies.push(h.join().expect("worker thread panicked")?);
        }
        Ok(tallies)
    })?;

    for (id, t) in tallies.iter().enumerate() {
        stats.messages += t.messages;
        stats.bytes += t.bytes;
        stats.trains += t.trains;
        stats.busy[id] += t.busy;
        stats.idle[id] += t.idle;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_worker(
    w: &mut Worker,
    rx: Receiver<Vec<u8>>,
    txs: Vec<Sender<Vec<u8>>>,
    succ: usize,
    data: &Dataset,
    sgd: &SgdConfig,
    plan: &StepPlan,
    m_total: usize,
    l: usize,
    d: usize,
) -> Result<WorkerTally, RuntimeError> {
    let mut tally = WorkerTally {
        messages: 0,
        bytes: 0,
        trains: 0,
        busy: 0,
        idle: 0,
    };
    loop {
        let t0 = Instant::now();
        while let Some(msg) = w.inbox.pop_front() {
            let out = w.process(msg, data, sgd, plan, plan.live_count);
            tally.trains += u64::from(out.trained);
            if let Some(fwd) = out.forward {
                let bytes = encode_message(&fwd);
                tally.messages += 1;
                tally.bytes += bytes.len() as u64;
                if succ == w.id {
                    // a one-machine ring forwards to itself
                    w.inbox.push_back(decode_message(&bytes, l, d)?);
                } else {
                    txs[succ]
                        .send(bytes)
                        .expect("successor hung up before its last visit");
                }
            }
        }
        tally.busy += t0.elapsed().as_nanos() as u64;
        if w.stored_count() == m_total {
            return Ok(tally);
        }
        let t1 = Instant::now();
        let bytes = rx.recv().expect("ring went quiet with submodels missing");
        tally.idle += t1.elapsed().as_nanos() as u64;
        w.inbox.push_back(decode_message(&bytes, l, d)?);
        while let Ok(more) = rx.try_recv() {
            w.inbox.push_back(decode_message(&more, l, d)?);
        }
    }
}

/// One Z step, each machine's shard on its own thread. No channels: the Z
/// step is communication-free by construction.
pub(super) fn threads_z_step(
    data: &Dataset,
    workers: &mut [Worker],
    mode: ZMode,
    mu: f64,
    stats: &mut StepStats,
) -> Result<ZStats, RuntimeError> {
    let results = thread::scope(|s| {
        let handles: Vec<_> = workers
            .iter_mut()
            .map(|w| {
                s.spawn(move || -> Result<(ZStats, u64), MacError> {
                    let t0 = Instant::now();
                    let z = w.run_z(data, mu, mode)?;
                    Ok((z, t0.elapsed().as_nanos() as u64))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("z worker panicked"))
            .collect::<Result<Vec<_>, MacError>>()
    })?;

    let mut parts = Vec::new();
    for (id, (z, nanos)) in results.into_iter().enumerate() {
        stats.busy[id] += nanos;
        parts.push(z);
    }
    Ok(sum_zstats(&parts))
}

#[cfg(test)]
mod tests {
    use super::super::wire::VisitSet;
    use super::*;
    use crate::data::{synthetic_mixture, CodeMatrix};
    use crate::model::BAModel;

    fn fixture(p: usize, l: usize, d: usize) -> (Dataset, Vec<Worker>) {
        let n = 12 * p;
        let (data, _) = synthetic_mixture(n, d, 3, 77).unwrap();
        let per = n / p;
        let workers = (0..p)
            .map(|id| {
                let rows: Vec<usize> = (id * per..(id + 1) * per).collect();
                let mut codes = CodeMatrix::zeros(rows.len(), l);
                for (i, &r) in rows.iter().enumerate() {
                    codes.set_code_u64(i, r as u64 % (1 << l));
                }
                Worker::new(id, rows, codes, BAModel::zeros(l, d))
            })
            .collect();
        (data, workers)
    }

    fn run_threaded(p: usize, l: usize, d: usize, e: u32) -> (Vec<Worker>, StepStats) {
        use super::super::worker::seed_homed;
        use super::super::Phase;
        let (data, mut workers) = fixture(p, l, d);
        let topology = Topology::ring(p);
        let live: Vec<usize> = (0..p).collect();
        let plan = StepPlan {
            iter: 0,
            live: VisitSet::from_ids(&live),
            live_count: p,
            e,
            consecutive: false,
            fault_tolerant: false,
        };
        seed_homed(&mut workers, &live, &plan);
        let mut stats = StepStats::new(Phase::W, 0, p);
        let sgd = SgdConfig {
            epochs: e,
            probe_points: 8,
            ..SgdConfig::default()
        };
        threads_w_step(&data, &mut workers, &topology, &sgd, &plan, &mut stats).unwrap();
        (workers, stats)
    }

    #[test]
    fn threaded_step_completes_with_identical_replicas() {
        for p in [1usize, 2, 4] {
            let l = 3;
            let d = 3;
            let m = l + d;
            let (workers, stats) = run_threaded(p, l, d, 1);
            assert_eq!(
                stats.messages,
                (m as u64) * ((p as u64) * 2 - 2),
                "P={p}"
            );
            for w in &workers {
                assert_eq!(w.stored_count(), m);
                assert_eq!(w.replica, workers[0].replica);
            }
        }
    }

    #[test]
    fn repeated_threaded_runs_produce_the_same_model() {
        let (a, _) = run_threaded(4, 2, 3, 2);
        let (b, _) = run_threaded(4, 2, 3, 2);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.replica, y.replica);
        }
    }
}
