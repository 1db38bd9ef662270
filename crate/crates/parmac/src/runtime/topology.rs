//! Ring topology over live machines.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::RuntimeError;

/// Successor map forming a single directed cycle over the live machines.
/// Machine ids are stable across membership changes; dead or not-yet-added
/// ids hold `None`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    succ: Vec<Option<usize>>,
}

impl Topology {
    /// The identity ring `0 -> 1 -> ... -> p-1 -> 0`.
    pub fn ring(p: usize) -> Self {
        assert!(p >= 1);
        Topology {
            succ: (0..p).map(|i| Some((i + 1) % p)).collect(),
        }
    }

    pub fn successor(&self, id: usize) -> usize {
        self.succ[id].expect("machine not live")
    }

    pub fn predecessor(&self, id: usize) -> usize {
        self.live()
            .into_iter()
            .find(|&m| self.succ[m] == Some(id))
            .expect("machine not live")
    }

    pub fn is_live(&self, id: usize) -> bool {
        id < self.succ.len() && self.succ[id].is_some()
    }

    /// Live machine ids in ascending order.
    pub fn live(&self) -> Vec<usize> {
        (0..self.succ.len())
            .filter(|&i| self.succ[i].is_some())
            .collect()
    }

    pub fn live_count(&self) -> usize {
        self.succ.iter().filter(|s| s.is_some()).count()
    }

    /// True when the successor map is one directed cycle over all live
    /// machines.
    pub fn is_single_cycle(&self) -> bool {
        let live = self.live();
        if live.is_empty() {
            return false;
        }
        let start = live[0];
        let mut seen = 1usize;
        let mut at = self.successor(start);
        while at != start {
            if !self.is_live(at) || seen > live.len() {
                return false;
            }
            at = self.successor(at);
            seen += 1;
        }
        seen == live.len()
    }

    /// Splices `new_id` into the ring right after `after`.
    pub fn insert_after(&mut self, after: usize, new_id: usize) {
        assert!(self.is_live(after), "insertion point is not live");
        if new_id >= self.succ.len() {
            self.succ.resize(new_id + 1, None);
        }
        assert!(self.succ[new_id].is_none(), "machine id already live");
        let next = self.successor(after);
        self.succ[after] = Some(new_id);
        self.succ[new_id] = Some(next);
    }

    /// Removes a machine, reconnecting its predecessor to its successor.
    pub fn remove(&mut self, id: usize) -> Result<(), RuntimeError> {
        if !self.is_live(id) {
            return Err(RuntimeError::InvalidScenario(format!(
                "machine {id} is not live"
            )));
        }
        if self.live_count() == 1 {
            return Err(RuntimeError::LastMachine);
        }
        let pred = self.predecessor(id);
        let next = self.successor(id);
        self.succ[pred] = Some(if next == id { pred } else { next });
        self.succ[id] = None;
        Ok(())
    }
}

/// Replaces the ring order with a uniformly random single cycle over the
/// same live machines: the lowest id is held fixed and the rest are placed
/// in shuffled order, which weights all (P-1)! cycles equally.
pub fn reshuffle_topology(topology: &Topology, seed: u64) -> Topology {
    let live = topology.live();
    assert!(live.len() >= 2, "reshuffling needs at least two machines");
    let mut rest = live[1..].to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rest.shuffle(&mut rng);
    let mut succ = vec![None; topology.succ.len()];
    let mut prev = live[0];
    for &m in &rest {
        succ[prev] = Some(m);
        prev = m;
    }
    succ[prev] = Some(live[0]);
    Topology { succ }
}
