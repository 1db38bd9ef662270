//! Per-machine protocol state machine for the W step.
//!
//! Two routing disciplines share one message shape:
//!
//! * Counter-driven (default): membership is fixed for the whole step, so a
//!   submodel's life is pure arithmetic on its visit counter. It trains on
//!   the first `P e` visits (or `P` visits of `e` passes each in
//!   consecutive-pass mode) and rides a final distribution lap; the visit at
//!   counter `P(e+1) - 1` stores without forwarding, giving `P(e+1) - 2`
//!   sends per submodel.
//! * Needs-driven (fault-tolerant, `e = 1`): the visit list is authoritative.
//!   A machine trains only if it is listed, removes itself, and whoever
//!   empties the list starts a delivery lap with the counter repurposed as
//!   the remaining hop budget. Machines not listed pass the message along,
//!   which is what lets a restored submodel skip shards it already visited.

use std::collections::VecDeque;

use crate::data::{CodeMatrix, Dataset};
use crate::mac::{z_step, MacError, ZMode, ZStats};
use crate::model::{train_submodel, BAModel, SgdConfig, Shard, SubmodelKind, TrainScope};

use super::wire::{Message, VisitSet};

/// Scheduling facts fixed at W-step start and shared by all workers.
#[derive(Debug, Clone)]
pub(super) struct StepPlan {
    pub iter: u32,
    /// Machines live when the step began.
    pub live: VisitSet,
    pub live_count: usize,
    /// Data passes per W step.
    pub e: u32,
    pub consecutive: bool,
    pub fault_tolerant: bool,
}

impl StepPlan {
    /// Number of visits that train (counter-driven discipline).
    pub fn training_visits(&self) -> u32 {
        let p = self.live_count as u32;
        if self.consecutive {
            p
        } else {
            p * self.e
        }
    }

    /// Counter of the last visit; that visit stores without forwarding.
    pub fn terminal(&self) -> u32 {
        self.training_visits() + self.live_count as u32 - 1
    }
}

/// What one message caused at one machine.
pub(super) struct ProcessOutcome {
    pub trained: bool,
    pub stored: bool,
    /// Message to hand to the ring successor; a retained copy is already
    /// kept for fault recovery.
    pub forward: Option<Message>,
    /// Counter value carried by the processed message on arrival.
    pub counter: u32,
    pub kind: SubmodelKind,
}

/// One machine: shard rows, local codes, the model replica, and the W-step
/// bookkeeping. Shard data stays behind; only `Message` payloads leave.
pub(super) struct Worker {
    pub id: usize,
    pub rows: Vec<usize>,
    pub codes: CodeMatrix,
    pub replica: BAModel,
    pub inbox: VecDeque<Message>,
    stored: Vec<bool>,
    stored_count: usize,
    retained: Vec<Option<Message>>,
}

impl Worker {
    pub fn new(id: usize, rows: Vec<usize>, codes: CodeMatrix, replica: BAModel) -> Self {
        let m = replica.submodels();
        Worker {
            id,
            rows,
            codes,
            replica,
            inbox: VecDeque::new(),
            stored: vec![false; m],
            stored_count: 0,
            retained: vec![None; m],
        }
    }

    /// Resets the per-step bookkeeping. The replica carries over as the warm
    /// start and the recovery fallback.
    pub fn begin_w_step(&mut self) {
        let m = self.replica.submodels();
        self.stored = vec![false; m];
        self.stored_count = 0;
        self.retained = vec![None; m];
        debug_assert!(self.inbox.is_empty(), "messages left over from last step");
    }

    pub fn stored_count(&self) -> usize {
        self.stored_count
    }

    /// Marks every submodel as already holding its final version; used when
    /// a machine joins mid-distribution with a cloned replica.
    pub fn adopt_stored(&mut self, stored: &[bool]) {
        self.stored = stored.to_vec();
        self.stored_count = stored.iter().filter(|&&s| s).count();
    }

    pub fn stored_flags(&self) -> &[bool] {
        &self.stored
    }

    pub fn retained_copy(&self, idx: usize) -> Option<&Message> {
        self.retained[idx].as_ref()
    }

    fn store(&mut self, msg: &Message) -> bool {
        let idx = msg.kind.flat_index(self.replica.bits());
        if self.stored[idx] {
            return false;
        }
        self.replica.set_submodel(msg.kind, &msg.payload);
        self.stored[idx] = true;
        self.stored_count += 1;
        true
    }

    fn train(&mut self, msg: &mut Message, data: &Dataset, sgd: &SgdConfig, plan: &StepPlan) {
        let per = if plan.consecutive { plan.e } else { 1 };
        let base = (msg.counter - 1) * per;
        let shard = Shard {
            data,
            rows: &self.rows,
        };
        let scope = TrainScope {
            iter: u64::from(plan.iter),
            machine: self.id as u64,
        };
        train_submodel(
            &mut msg.payload,
            msg.kind,
            &shard,
            &self.codes,
            sgd,
            scope,
            base..base + per,
        );
    }

    /// Applies one message. `live` and `live_count` reflect the ring at this
    /// instant (they differ from the plan only mid-recovery).
    pub fn process(
        &mut self,
        mut msg: Message,
        data: &Dataset,
        sgd: &SgdConfig,
        plan: &StepPlan,
        live_count: usize,
    ) -> ProcessOutcome {
        let counter_in = msg.counter;
        let kind = msg.kind;
        let mut trained = false;
        let mut stored = false;

        let forward = if plan.fault_tolerant {
            debug_assert!(plan.e == 1 && !plan.consecutive);
            if msg.needs.contains(self.id) {
                self.train(&mut msg, data, sgd, plan);
                trained = true;
                msg.needs.remove(self.id);
                if msg.needs.is_empty() {
                    // last trainer: store, then one delivery hop per
                    // remaining live machine
                    stored = self.store(&msg);
                    if live_count >= 2 {
                        msg.counter = (live_count - 1) as u32;
                        Some(msg)
                    } else {
                        None
                    }
                } else {
                    msg.counter += 1;
                    Some(msg)
                }
            } else if msg.needs.is_empty() {
                // delivery lap; counter holds the remaining hop budget
                stored = self.store(&msg);
                if msg.counter > 1 {
                    msg.counter -= 1;
                    Some(msg)
                } else {
                    None
                }
            } else {
                // not this machine's turn (post-recovery): pass it along
                msg.counter += 1;
                Some(msg)
            }
        } else {
            let tv = plan.training_visits();
            let terminal = plan.terminal();
            debug_assert!(msg.counter >= 1 && msg.counter <= terminal);
            if msg.counter <= tv {
                self.train(&mut msg, data, sgd, plan);
                trained = true;
                msg.needs.remove(self.id);
                if msg.needs.is_empty() && msg.counter < tv {
                    // next pass over the ring
                    msg.needs = plan.live.clone();
                }
                if msg.counter == tv {
                    stored = self.store(&msg);
                }
            } else {
                stored = self.store(&msg);
            }
            if msg.counter < terminal {
                msg.counter += 1;
                Some(msg)
            } else {
                None
            }
        };

        if let Some(fwd) = &forward {
            let idx = fwd.kind.flat_index(self.replica.bits());
            self.retained[idx] = Some(fwd.clone());
        }
        ProcessOutcome {
            trained,
            stored,
            forward,
            counter: counter_in,
            kind,
        }
    }

    /// Local Z step against the current replica; no messages involved.
    pub fn run_z(&mut self, data: &Dataset, mu: f64, mode: ZMode) -> Result<ZStats, MacError> {
        let shard = Shard {
            data,
            rows: &self.rows,
        };
        z_step(&self.replica, &shard, &mut self.codes, mu, mode)
    }
}

/// Seeds each live machine's inbox with its homed share of submodels:
/// contiguous chunks of `ceil(M / live)` flat indices, machines in id order.
/// Payloads start from the local replica (identical on all machines).
pub(super) fn seed_homed(workers: &mut [Worker], live: &[usize], plan: &StepPlan) {
    let m_total = workers[live[0]].replica.submodels();
    let l = workers[live[0]].replica.bits();
    let chunk = m_total.div_ceil(live.len());
    for (pos, &id) in live.iter().enumerate() {
        let lo = (pos * chunk).min(m_total);
        let hi = ((pos + 1) * chunk).min(m_total);
        for idx in lo..hi {
            let kind = SubmodelKind::from_flat_index(idx, l);
            let msg = Message {
                kind,
                counter: 1,
                needs: plan.live.clone(),
                payload: workers[id].replica.submodel(kind).to_vec(),
            };
            workers[id].inbox.push_back(msg);
        }
    }
}
