//! Scripted cluster runs for the lockstep simulator.
//!
//! Ticks are global over a run. A clean W step spans `P e + P` ticks (the
//! last one is the quiescent barrier tick) and each Z step takes one tick,
//! so event positions for a given schedule can be computed in advance or
//! read off a previous run's trace. Events fire at the start of their tick;
//! same-tick events apply in listed order, faults before membership.

use serde::{Deserialize, Serialize};

/// Cluster phase, as seen by schedulers and fault events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    W,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub tick: u64,
    pub machine: usize,
    /// Phase the cluster must be in when the fault fires; a mismatch is a
    /// scenario error, since W- and Z-phase faults exercise different
    /// recovery paths.
    pub phase: Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MembershipOp {
    Add,
    Remove,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MembershipEvent {
    pub tick: u64,
    pub op: MembershipOp,
    pub machine: usize,
    /// Ring position for adds: the new machine is spliced in after this one.
    /// Defaults to the lowest live id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after: Option<usize>,
}

/// A scripted run: machine count, overrides, and the event schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(rename = "P")]
    pub p: usize,
    /// Overrides the training seed when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Needs-list routing with predecessor-copy recovery. Required for any
    /// fault or membership event; a fault without it kills the run.
    #[serde(default = "default_true")]
    pub fault_tolerant: bool,
    #[serde(default)]
    pub consecutive_pass: bool,
    /// Re-randomize the ring before every W step after the first.
    #[serde(default)]
    pub reshuffle: bool,
    #[serde(default)]
    pub faults: Vec<FaultEvent>,
    #[serde(default)]
    pub membership: Vec<MembershipEvent>,
}

fn default_true() -> bool {
    true
}

impl Scenario {
    /// A plain run on `p` machines: no events, fault tolerance off.
    pub fn clean(p: usize) -> Self {
        Scenario {
            p,
            seed: None,
            fault_tolerant: false,
            consecutive_pass: false,
            reshuffle: false,
            faults: Vec::new(),
            membership: Vec::new(),
        }
    }

    pub fn has_events(&self) -> bool {
        !self.faults.is_empty() || !self.membership.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}
