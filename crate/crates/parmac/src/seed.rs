//! Deterministic seed derivation.
//!
//! Training must be reproducible across the serial loop, the lockstep
//! simulator and the thread-backed executor, so every randomized step
//! (minibatch order, topology shuffles, validation splits) derives its RNG
//! seed from the run seed plus a handful of structural tags rather than from
//! shared mutable RNG state. Message arrival order then cannot influence any
//! random choice.

/// Tags for run-level random choices. Submodel training tags come from
/// `SubmodelKind::seed_tag` and stay below bit 33, so these cannot collide.
pub(crate) const SEED_TAG_PCA: u64 = 1 << 40;
pub(crate) const SEED_TAG_SPLIT: u64 = (1 << 40) + 1;
pub(crate) const SEED_TAG_TOPOLOGY: u64 = (1 << 40) + 2;

/// Mixes a run seed and structural tags (iteration, submodel, epoch, machine,
/// ...) into a single stream seed. SplitMix64 finalizer per tag; stable
/// across platforms.
pub fn derive_seed(run_seed: u64, tags: &[u64]) -> u64 {
    let mut state = run_seed ^ 0x9e37_79b9_7f4a_7c15;
    for &tag in tags {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(tag);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        state = z ^ (z >> 31);
    }
    state
}
