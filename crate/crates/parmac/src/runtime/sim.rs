//! Deterministic lockstep simulation of the ring.
//!
//! Time is one global tick counter spanning the whole run. Each W-step tick
//! proceeds as: scheduled events fire, last tick's sends are delivered, and
//! (unless everything has gone quiet) every live machine drains its inbox in
//! machine-id order, with forwards entering transit for next-tick delivery.
//! A clean W step over `P` machines and `e` passes spans `Pe + P` ticks: the
//! `Pe + P - 1` visit waves plus the barrier tick on which every machine
//! observes silence and leaves the step. A Z step is one tick of purely
//! local work.
//!
//! Fault recovery leans on two facts. Every message that ever reached a
//! machine came through its ring predecessor, which keeps a copy of its own
//! last forward per submodel; and stores are idempotent, so over-delivery is
//! harmless while under-delivery is repaired by restarting a delivery lap
//! with a full hop budget.

use std::mem;

use crate::data::{CodeMatrix, Dataset};
use crate::mac::{ZMode, ZStats};
use crate::model::SgdConfig;

use super::scenario::{FaultEvent, MembershipEvent, MembershipOp, Phase, Scenario};
use super::topology::Topology;
use super::wire::{decode_message, encode_message, Message, VisitSet};
use super::worker::{StepPlan, Worker};
use super::{sum_zstats, RuntimeError, StepStats, TraceEvent, TraceKind};

/// Scenario events not yet fired. Events are matched by exact tick (and
/// phase, for faults); anything still queued when the run ends makes the
/// scenario invalid rather than silently skipping it.
pub(super) struct EventQueue {
    faults: Vec<FaultEvent>,
    membership: Vec<MembershipEvent>,
    fault_tolerant: bool,
}

impl EventQueue {
    pub fn from_scenario(s: &Scenario) -> Result<Self, RuntimeError> {
        if !s.fault_tolerant && !s.membership.is_empty() {
            return Err(RuntimeError::InvalidScenario(
                "membership changes need fault-tolerant routing".into(),
            ));
        }
        if s.faults.iter().any(|f| f.tick == 0) || s.membership.iter().any(|m| m.tick == 0) {
            return Err(RuntimeError::InvalidScenario(
                "ticks are 1-based; no event can fire at tick 0".into(),
            ));
        }
        Ok(EventQueue {
            faults: s.faults.clone(),
            membership: s.membership.clone(),
            fault_tolerant: s.fault_tolerant,
        })
    }

    fn take_faults(&mut self, tick: u64, phase: Phase) -> Vec<FaultEvent> {
        let (fire, keep): (Vec<_>, Vec<_>) = mem::take(&mut self.faults)
            .into_iter()
            .partition(|f| f.tick == tick && f.phase == phase);
        self.faults = keep;
        fire
    }

    fn take_membership(&mut self, tick: u64) -> Vec<MembershipEvent> {
        let (fire, keep): (Vec<_>, Vec<_>) = mem::take(&mut self.membership)
            .into_iter()
            .partition(|m| m.tick == tick);
        self.membership = keep;
        fire
    }

    pub fn require_drained(&self) -> Result<(), RuntimeError> {
        let left = self.faults.len() + self.membership.len();
        if left > 0 {
            return Err(RuntimeError::InvalidScenario(format!(
                "{left} scheduled event(s) never fired; the run ended first"
            )));
        }
        Ok(())
    }
}

/// Fires everything scheduled for this tick: faults first, then membership
/// changes, each in listed order.
#[allow(clippy::too_many_arguments)]
fn apply_events(
    tick: u64,
    phase: Phase,
    events: &mut EventQueue,
    workers: &mut Vec<Worker>,
    topology: &mut Topology,
    transit: &mut Vec<(usize, Message)>,
    stats: &mut StepStats,
    trace: &mut Vec<TraceEvent>,
) -> Result<(), RuntimeError> {
    for f in events.take_faults(tick, phase) {
        if !events.fault_tolerant {
            return Err(RuntimeError::DeadWorker(f.machine));
        }
        remove_machine(
            f.machine,
            TraceKind::Fault { phase },
            tick,
            workers,
            topology,
            transit,
            trace,
        )?;
    }
    for ev in events.take_membership(tick) {
        match ev.op {
            MembershipOp::Remove => remove_machine(
                ev.machine,
                TraceKind::Removed,
                tick,
                workers,
                topology,
                transit,
                trace,
            )?,
            MembershipOp::Add => add_machine(&ev, tick, workers, topology, transit, stats, trace)?,
        }
    }
    Ok(())
}

/// Drops dead ids from a message's visit list. A list emptied by the scrub
/// (rather than by a training visit) means no machine has stored this
/// version yet, so the counter becomes a fresh full-lap hop budget.
fn scrub(msg: &mut Message, live: &VisitSet, live_count: usize) {
    if msg.needs.is_empty() {
        return;
    }
    msg.needs.retain_ids(live);
    if msg.needs.is_empty() {
        msg.counter = live_count as u32;
    }
}

/// Kills or retires machine `p`. Its shard and local codes freeze, every
/// surviving message forgets its id, and whatever it held or was about to
/// receive reappears at its ring predecessor: the predecessor's retained
/// forward when one exists, otherwise a full retrain seeded from the
/// predecessor's replica.
fn remove_machine(
    p: usize,
    cause: TraceKind,
    tick: u64,
    workers: &mut [Worker],
    topology: &mut Topology,
    transit: &mut Vec<(usize, Message)>,
    trace: &mut Vec<TraceEvent>,
) -> Result<(), RuntimeError> {
    if !topology.is_live(p) {
        return Err(RuntimeError::InvalidScenario(format!(
            "machine {p} is not live at tick {tick}"
        )));
    }
    let pred = topology.predecessor(p);
    topology.remove(p)?;
    trace.push(TraceEvent {
        tick,
        machine: p,
        kind: cause,
    });

    let live = VisitSet::from_ids(&topology.live());
    let live_count = topology.live_count();
    let l = workers[p].replica.bits();

    // everything p held plus everything on the way to it is lost
    let mut lost: Vec<Message> = workers[p].inbox.drain(..).collect();
    let mut kept = Vec::with_capacity(transit.len());
    for (to, msg) in transit.drain(..) {
        if to == p {
            lost.push(msg);
        } else {
            kept.push((to, msg));
        }
    }
    *transit = kept;

    for (_, msg) in transit.iter_mut() {
        scrub(msg, &live, live_count);
    }
    for id in topology.live() {
        for msg in workers[id].inbox.iter_mut() {
            scrub(msg, &live, live_count);
        }
    }

    for msg in lost {
        let idx = msg.kind.flat_index(l);
        let restored = match workers[pred].retained_copy(idx) {
            Some(r) => {
                // the predecessor forwarded exactly this copy to p
                let mut r = r.clone();
                scrub(&mut r, &live, live_count);
                trace.push(TraceEvent {
                    tick,
                    machine: pred,
                    kind: TraceKind::Restored {
                        submodel: msg.kind,
                        from_replica: false,
                    },
                });
                r
            }
            None => {
                // never passed through pred (it was homed at p): restart the
                // whole training cycle from pred's replica
                trace.push(TraceEvent {
                    tick,
                    machine: pred,
                    kind: TraceKind::Restored {
                        submodel: msg.kind,
                        from_replica: true,
                    },
                });
                Message {
                    kind: msg.kind,
                    counter: 1,
                    needs: live.clone(),
                    payload: workers[pred].replica.submodel(msg.kind).to_vec(),
                }
            }
        };
        workers[pred].inbox.push_back(restored);
    }
    Ok(())
}

/// Brings up a fresh machine with no shard. It clones its predecessor's
/// replica and store markers and may join between steps or once a W step is
/// purely redistributing (no training visit left anywhere). In-flight
/// delivery budgets restart at the new ring size so the newcomer is covered.
fn add_machine(
    ev: &MembershipEvent,
    tick: u64,
    workers: &mut Vec<Worker>,
    topology: &mut Topology,
    transit: &mut [(usize, Message)],
    stats: &mut StepStats,
    trace: &mut Vec<TraceEvent>,
) -> Result<(), RuntimeError> {
    let id = ev.machine;
    if id != workers.len() {
        return Err(RuntimeError::InvalidScenario(format!(
            "machine ids are dense: next joinable id is {}, got {id}",
            workers.len()
        )));
    }
    let mut in_training = transit.iter().any(|(_, m)| !m.needs.is_empty());
    for w in topology.live() {
        in_training |= workers[w].inbox.iter().any(|m| !m.needs.is_empty());
    }
    if in_training {
        return Err(RuntimeError::InvalidScenario(format!(
            "machine {id} cannot join at tick {tick}: submodels are still training"
        )));
    }
    let pred = match ev.after {
        Some(a) => a,
        None => *topology.live().last().expect("ring is never empty"),
    };
    if !topology.is_live(pred) {
        return Err(RuntimeError::InvalidScenario(format!(
            "cannot join after machine {pred}: not live"
        )));
    }
    topology.insert_after(pred, id);
    let live_count = topology.live_count();
    let l = workers[pred].replica.bits();

    let mut w = Worker::new(
        id,
        Vec::new(),
        CodeMatrix::zeros(0, l),
        workers[pred].replica.clone(),
    );
    w.adopt_stored(workers[pred].stored_flags());
    workers.push(w);
    stats.busy.push(0);
    stats.idle.push(0);

    for (_, msg) in transit.iter_mut() {
        msg.counter = live_count as u32;
    }
    for w_id in topology.live() {
        if w_id == id {
            continue;
        }
        for msg in workers[w_id].inbox.iter_mut() {
            msg.counter = live_count as u32;
        }
    }
    trace.push(TraceEvent {
        tick,
        machine: id,
        kind: TraceKind::Added,
    });
    Ok(())
}

/// One W step under the tick clock. Returns once a tick opens with no
/// message anywhere (that barrier tick is counted; machines spend it
/// discovering the silence).
#[allow(clippy::too_many_arguments)]
pub(super) fn lockstep_w_step(
    data: &Dataset,
    workers: &mut Vec<Worker>,
    topology: &mut Topology,
    sgd: &SgdConfig,
    plan: &StepPlan,
    events: &mut EventQueue,
    tick: &mut u64,
    stats: &mut StepStats,
    trace: &mut Vec<TraceEvent>,
) -> Result<(), RuntimeError> {
    let l = workers[0].replica.bits();
    let d = workers[0].replica.dim();
    let mut transit: Vec<(usize, Message)> = Vec::new();

    loop {
        *tick += 1;
        stats.ticks += 1;
        apply_events(
            *tick,
            Phase::W,
            events,
            workers,
            topology,
            &mut transit,
            stats,
            trace,
        )?;

        for (to, msg) in transit.drain(..) {
            debug_assert!(topology.is_live(to), "transit to a dead machine survived");
            workers[to].inbox.push_back(msg);
        }

        let live = topology.live();
        if live.iter().all(|&id| workers[id].inbox.is_empty()) {
            for &id in &live {
                stats.idle[id] += 1;
            }
            return Ok(());
        }

        for &id in &live {
            if workers[id].inbox.is_empty() {
                stats.idle[id] += 1;
                continue;
            }
            stats.busy[id] += 1;
            while let Some(msg) = workers[id].inbox.pop_front() {
                let out = workers[id].process(msg, data, sgd, plan, topology.live_count());
                if out.trained {
                    stats.trains += 1;
                    trace.push(TraceEvent {
                        tick: *tick,
                        machine: id,
                        kind: TraceKind::Train {
                            submodel: out.kind,
                            counter: out.counter,
                        },
                    });
                }
                if out.stored {
                    trace.push(TraceEvent {
                        tick: *tick,
                        machine: id,
                        kind: TraceKind::Store { submodel: out.kind },
                    });
                }
                if let Some(fwd) = out.forward {
                    let to = topology.successor(id);
                    // round-trip through the codec: what travels is exactly
                    // its output, never shard state
                    let bytes = encode_message(&fwd);
                    stats.messages += 1;
                    stats.bytes += bytes.len() as u64;
                    trace.push(TraceEvent {
                        tick: *tick,
                        machine: id,
                        kind: TraceKind::Send {
                            submodel: fwd.kind,
                            counter: fwd.counter,
                            to,
                        },
                    });
                    transit.push((to, decode_message(&bytes, l, d)?));
                }
            }
        }
    }
}

/// One Z tick: events fire, then every live machine re-optimizes the codes
/// of its own shard against the shared replica. No messages move.
#[allow(clippy::too_many_arguments)]
pub(super) fn lockstep_z_step(
    data: &Dataset,
    workers: &mut Vec<Worker>,
    topology: &mut Topology,
    mode: ZMode,
    mu: f64,
    events: &mut EventQueue,
    tick: &mut u64,
    stats: &mut StepStats,
    trace: &mut Vec<TraceEvent>,
) -> Result<ZStats, RuntimeError> {
    *tick += 1;
    stats.ticks += 1;
    let mut transit = Vec::new();
    apply_events(
        *tick,
        Phase::Z,
        events,
        workers,
        topology,
        &mut transit,
        stats,
        trace,
    )?;
    debug_assert!(transit.is_empty(), "no messages exist between steps");

    let mut parts = Vec::new();
    for id in topology.live() {
        let z = workers[id].run_z(data, mu, mode)?;
        if workers[id].rows.is_empty() {
            stats.idle[id] += 1;
        } else {
            stats.busy[id] += 1;
        }
        trace.push(TraceEvent {
            tick: *tick,
            machine: id,
            kind: TraceKind::ZApply { changed: z.changed },
        });
        parts.push(z);
    }
    Ok(sum_zstats(&parts))
}

#[cfg(test)]
mod tests {
    use super::super::worker::seed_homed;
    use super::*;
    use crate::data::synthetic_mixture;
    use crate::model::{BAModel, SubmodelKind};

    fn fixture(p: usize, l: usize, d: usize) -> (Dataset, Vec<Worker>) {
        let n = 8 * p;
        let (data, _) = synthetic_mixture(n, d, 2, 31).unwrap();
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

    fn sgd_cfg() -> SgdConfig {
        SgdConfig {
            epochs: 1,
            probe_points: 8,
            ..SgdConfig::default()
        }
    }

    fn clean_events() -> EventQueue {
        EventQueue::from_scenario(&Scenario::clean(1)).unwrap()
    }

    fn run_w(
        p: usize,
        l: usize,
        e: u32,
        consecutive: bool,
    ) -> (Vec<Worker>, StepStats, Vec<TraceEvent>) {
        let d = 3;
        let (data, mut workers) = fixture(p, l, d);
        let mut topology = Topology::ring(p);
        let live: Vec<usize> = (0..p).collect();
        let plan = StepPlan {
            iter: 0,
            live: VisitSet::from_ids(&live),
            live_count: p,
            e,
            consecutive,
            fault_tolerant: false,
        };
        seed_homed(&mut workers, &live, &plan);
        let mut events = clean_events();
        let mut tick = 0;
        let mut stats = StepStats::new(Phase::W, 0, p);
        let mut trace = Vec::new();
        let mut sgd = sgd_cfg();
        sgd.epochs = e;
        lockstep_w_step(
            &data,
            &mut workers,
            &mut topology,
            &sgd,
            &plan,
            &mut events,
            &mut tick,
            &mut stats,
            &mut trace,
        )
        .unwrap();
        (workers, stats, trace)
    }

    #[test]
    fn clean_step_spans_pe_plus_p_ticks_and_sends_the_exact_count() {
        for (p, e) in [(1usize, 1u32), (1, 3), (3, 1), (4, 2)] {
            let l = 2;
            let m = (l + 3) as u64;
            let (workers, stats, _) = run_w(p, l, e, false);
            assert_eq!(stats.ticks, (p as u64) * u64::from(e) + p as u64, "P={p} e={e}");
            assert_eq!(
                stats.messages,
                m * ((p as u64) * u64::from(e + 1) - 2),
                "P={p} e={e}"
            );
            assert_eq!(stats.trains, m * (p as u64) * u64::from(e));
            for w in &workers[1..] {
                assert_eq!(w.replica, workers[0].replica);
            }
            for w in &workers {
                assert_eq!(w.stored_count(), m as usize);
            }
        }
    }

    #[test]
    fn visit_waves_follow_the_tick_clock() {
        // P=4, e=1: a submodel homed at machine h trains at machine
        // (h + k) % 4 exactly at tick k + 1
        let (_, _, trace) = run_w(4, 2, 1, false);
        let homes = [0usize, 0, 1, 1, 2]; // chunk ceil(5/4)=2: flats 0,1|2,3|4
        for ev in &trace {
            if let TraceKind::Train { submodel, counter } = ev.kind {
                let home = homes[submodel.flat_index(2)];
                assert_eq!(
                    ev.machine,
                    (home + (counter as usize - 1)) % 4,
                    "submodel {submodel:?} visit {counter}"
                );
                assert_eq!(ev.tick, u64::from(counter));
            }
        }
    }

    #[test]
    fn barrier_tick_is_idle_everywhere() {
        let p = 3;
        let (_, stats, _) = run_w(p, 2, 1, false);
        // every machine idles at least on the barrier tick
        for id in 0..p {
            assert!(stats.idle[id] >= 1);
            assert_eq!(stats.busy[id] + stats.idle[id], stats.ticks);
        }
    }

    #[test]
    fn unfired_events_invalidate_the_scenario() {
        let mut s = Scenario::clean(2);
        s.faults.push(FaultEvent {
            tick: 99,
            machine: 1,
            phase: Phase::W,
        });
        s.fault_tolerant = true;
        let q = EventQueue::from_scenario(&s).unwrap();
        assert!(matches!(
            q.require_drained(),
            Err(RuntimeError::InvalidScenario(_))
        ));
    }

    #[test]
    fn membership_without_fault_tolerance_is_rejected() {
        let mut s = Scenario::clean(2);
        s.membership.push(MembershipEvent {
            tick: 1,
            op: MembershipOp::Add,
            machine: 2,
            after: None,
        });
        assert!(matches!(
            EventQueue::from_scenario(&s),
            Err(RuntimeError::InvalidScenario(_))
        ));
    }

    #[test]
    fn fault_without_tolerance_kills_the_run() {
        let p = 2;
        let l = 2;
        let (data, mut workers) = fixture(p, l, 3);
        let mut topology = Topology::ring(p);
        let plan = StepPlan {
            iter: 0,
            live: VisitSet::from_ids(&[0, 1]),
            live_count: p,
            e: 1,
            consecutive: false,
            fault_tolerant: false,
        };
        seed_homed(&mut workers, &[0, 1], &plan);
        let mut s = Scenario::clean(p);
        s.faults.push(FaultEvent {
            tick: 2,
            machine: 1,
            phase: Phase::W,
        });
        let mut events = EventQueue::from_scenario(&s).unwrap();
        let mut tick = 0;
        let mut stats = StepStats::new(Phase::W, 0, p);
        let mut trace = Vec::new();
        let err = lockstep_w_step(
            &data,
            &mut workers,
            &mut topology,
            &sgd_cfg(),
            &plan,
            &mut events,
            &mut tick,
            &mut stats,
            &mut trace,
        )
        .unwrap_err();
        assert!(matches!(err, RuntimeError::DeadWorker(1)));
    }

    #[test]
    fn scrub_restarts_delivery_only_when_it_empties_the_list() {
        let live = VisitSet::from_ids(&[0, 2, 3]);
        let mut training = Message {
            kind: SubmodelKind::EncoderBit(0),
            counter: 4,
            needs: VisitSet::from_ids(&[1, 3]),
            payload: vec![0.0; 4],
        };
        scrub(&mut training, &live, 3);
        assert_eq!(training.needs.ids(), vec![3]);
        assert_eq!(training.counter, 4);

        let mut emptied = Message {
            kind: SubmodelKind::EncoderBit(0),
            counter: 4,
            needs: VisitSet::from_ids(&[1]),
            payload: vec![0.0; 4],
        };
        scrub(&mut emptied, &live, 3);
        assert!(emptied.needs.is_empty());
        assert_eq!(emptied.counter, 3);

        let mut delivering = Message {
            kind: SubmodelKind::EncoderBit(0),
            counter: 2,
            needs: VisitSet::empty(),
            payload: vec![0.0; 4],
        };
        scrub(&mut delivering, &live, 3);
        assert_eq!(delivering.counter, 2);
    }

    /// Full fault drill at the protocol level: P=4, e=1, fault-tolerant,
    /// machine 2 dies at tick 3. The step must still quiesce with all
    /// survivors holding identical, complete replicas.
    #[test]
    fn w_fault_recovers_to_identical_replicas() {
        let p = 4;
        let l = 2;
        let d = 3;
        let (data, mut workers) = fixture(p, l, d);
        let m = l + d;
        let mut topology = Topology::ring(p);
        let live: Vec<usize> = (0..p).collect();
        let plan = StepPlan {
            iter: 0,
            live: VisitSet::from_ids(&live),
            live_count: p,
            e: 1,
            consecutive: false,
            fault_tolerant: true,
        };
        seed_homed(&mut workers, &live, &plan);
        let mut s = Scenario::clean(p);
        s.fault_tolerant = true;
        s.faults.push(FaultEvent {
            tick: 3,
            machine: 2,
            phase: Phase::W,
        });
        let mut events = EventQueue::from_scenario(&s).unwrap();
        let mut tick = 0;
        let mut stats = StepStats::new(Phase::W, 0, p);
        let mut trace = Vec::new();
        lockstep_w_step(
            &data,
            &mut workers,
            &mut topology,
            &sgd_cfg(),
            &plan,
            &mut events,
            &mut tick,
            &mut stats,
            &mut trace,
        )
        .unwrap();
        assert_eq!(topology.live(), vec![0, 1, 3]);
        for &id in &[1usize, 3] {
            assert_eq!(workers[id].replica, workers[0].replica, "machine {id}");
            assert_eq!(workers[id].stored_count(), m);
        }
        // the dead machine shows up in the trace exactly once
        let faults: Vec<_> = trace
            .iter()
            .filter(|ev| matches!(ev.kind, TraceKind::Fault { .. }))
            .collect();
        assert_eq!(faults.len(), 1);
        assert_eq!(faults[0].machine, 2);
        assert_eq!(faults[0].tick, 3);
        // nothing trains at a dead machine after its fault tick
        for ev in &trace {
            if ev.machine == 2 {
                assert!(ev.tick <= 3, "machine 2 acted at tick {}", ev.tick);
            }
        }
    }
}
