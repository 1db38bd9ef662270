//! Binary autoencoders trained with the method of auxiliary coordinates
//! (MAC), plus ParMAC, its distributed counterpart.
//!
//! A binary autoencoder maps a real vector `x` to an `L`-bit code with a
//! step-function linear encoder `h(x) = s(Ax)` and reconstructs it with a
//! linear decoder `f(z) = Fz`. MAC introduces one auxiliary binary code per
//! data point and alternates two steps: fit the encoder bits (one linear SVM
//! per bit) and the decoder rows (linear least squares) to the current codes
//! (the W step), then re-optimize each point's code against the current model
//! (the Z step) under a quadratic-penalty objective whose weight `mu`
//! increases over iterations.
//!
//! ParMAC runs the same alternation on `P` machines arranged in a ring. Data
//! and codes never move; during the W step the independent submodels (one per
//! encoder bit, one per decoder row) circulate through the ring, training on
//! each machine's shard, and the Z step is embarrassingly parallel with no
//! communication at all.
//!
//! Module map:
//! - [`data`]: datasets (real or byte storage), fvecs/bvecs IO, shard
//!   partitioning, synthetic mixtures, PCA-based code init, RBF features.
//! - [`model`]: encoder/decoder, objectives, SGD and least-squares fits,
//!   step-size probing, checkpoint IO.
//! - [`mac`]: serial MAC training loop, Z-step solvers, penalty schedules.
//! - [`runtime`]: the ParMAC ring protocol, a deterministic lockstep
//!   simulator (with fault and membership scenarios) and a thread-backed
//!   executor.
//! - [`speedup`]: the closed-form parallel-speedup model and its analysis
//!   (interval structure, maxima, invariances, curve emission, time fitting).
//! - [`eval`]: retrieval metrics (exact k-NN ground truth, Hamming search,
//!   precision, recall@R).

pub mod data;
pub mod eval;
pub mod mac;
pub mod model;
pub mod runtime;
pub mod speedup;

mod seed;

pub use seed::derive_seed;
