//! Closed-form runtime and speedup model for ring-circulated training.
//!
//! One training iteration on `P` machines processes `N` points through `M`
//! independent submodels with `e` passes in the W step. Per-unit times:
//! `t_w_r` (W compute per submodel and point), `t_w_c` (W communication per
//! submodel hop), `t_z_r` (Z compute per point and submodel). The model
//! predicts
//!
//! ```text
//!   T_Z(P) = M (N/P) t_z_r
//!   T_W(P) = ceil(M/P) (t_w_r N/P + t_w_c) P e + ceil(M/P) t_w_c P
//! ```
//!
//! and the speedup S(P) = T(1)/T(P) against the serial baseline
//! `T(1) = M N t_z_r + M N e t_w_r` (no communication). S(P) collapses to a
//! rational function of the computation-to-communication ratios rho1, rho2;
//! this module evaluates it, locates its maxima interval by interval, checks
//! the invariance transformations, numerically verifies the monotonicity
//! theorems, and fits the time constants to measured speedups.
//!
//! Note S(1) = rho*N/(rho*N + 1), slightly below 1 whenever `t_w_c > 0`: the
//! one-machine run of the distributed protocol still pays the per-submodel
//! communication charge, while the serial baseline does not. The two agree
//! exactly in the `t_w_c = 0` limit.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpeedupError {
    #[error("M = {m} is not divisible by P = {p}")]
    NotDivisible { m: u64, p: u64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Inputs to the runtime model. All counts are at least 1; times are
/// nonnegative and `t_w_c = 0` is allowed only for the no-communication
/// analyses (the ratio-based ops reject it).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedupParams {
    pub p: u64,
    pub n: u64,
    pub m: u64,
    pub e: u32,
    pub t_w_r: f64,
    pub t_w_c: f64,
    pub t_z_r: f64,
}

/// Computation-to-communication ratios, plus the variants with the dataset
/// size absorbed. `rho` is the exact sum `rho1 + rho2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratios {
    pub rho1: f64,
    pub rho2: f64,
    pub rho: f64,
    pub rho1_n: f64,
    pub rho2_n: f64,
    pub rho_n: f64,
}

impl SpeedupParams {
    pub fn validate(&self) -> Result<(), SpeedupError> {
        if self.p == 0 || self.n == 0 || self.m == 0 || self.e == 0 {
            return Err(SpeedupError::InvalidParams(
                "P, N, M, e must all be at least 1".into(),
            ));
        }
        if !(self.t_w_r > 0.0) || !(self.t_z_r > 0.0) || !(self.t_w_c >= 0.0) {
            return Err(SpeedupError::InvalidParams(format!(
                "times must be positive (t_w_c may be zero): t_w_r={} t_w_c={} t_z_r={}",
                self.t_w_r, self.t_w_c, self.t_z_r
            )));
        }
        Ok(())
    }

    /// `rho1 = t_z_r/((e+1) t_w_c)`, `rho2 = e t_w_r/((e+1) t_w_c)`,
    /// `rho = rho1 + rho2`. `None` when there is no communication cost.
    pub fn ratios(&self) -> Option<Ratios> {
        if self.t_w_c == 0.0 {
            return None;
        }
        let denom = f64::from(self.e + 1) * self.t_w_c;
        let rho1 = self.t_z_r / denom;
        let rho2 = f64::from(self.e) * self.t_w_r / denom;
        let rho = rho1 + rho2;
        let n = self.n as f64;
        Some(Ratios {
            rho1,
            rho2,
            rho,
            rho1_n: rho1 * n,
            rho2_n: rho2 * n,
            rho_n: rho * n,
        })
    }

    fn ceil_m_over_p(&self) -> u64 {
        (self.m + self.p - 1) / self.p
    }
}

/// Z-step runtime `M (N/P) t_z_r`: embarrassingly parallel over points.
pub fn runtime_z(params: &SpeedupParams) -> f64 {
    debug_assert!(params.validate().is_ok());
    params.m as f64 * (params.n as f64 / params.p as f64) * params.t_z_r
}

/// W-step runtime `ceil(M/P) (t_w_r N/P + t_w_c) P e + ceil(M/P) t_w_c P`:
/// `Pe` training ticks plus a final forwarding round.
pub fn runtime_w(params: &SpeedupParams) -> f64 {
    debug_assert!(params.validate().is_ok());
    let c = params.ceil_m_over_p() as f64;
    let p = params.p as f64;
    let np = params.n as f64 / p;
    c * (params.t_w_r * np + params.t_w_c) * p * f64::from(params.e) + (c * params.t_w_c) * p
}

/// Runtime of one full iteration (W plus Z step) on `P` machines.
pub fn runtime_total(params: &SpeedupParams) -> f64 {
    runtime_z(params) + runtime_w(params)
}

/// Serial baseline `T(1) = M N t_z_r + M N e t_w_r`: one machine, no
/// communication. Evaluated through the same formulas with `P := 1`,
/// `t_w_c := 0`.
pub fn runtime_serial(params: &SpeedupParams) -> f64 {
    runtime_total(&SpeedupParams {
        p: 1,
        t_w_c: 0.0,
        ..*params
    })
}

/// Core rational form of the speedup with the interval index `k = ceil(M/P)`
/// supplied by the caller, so boundary points can be evaluated without
/// floating-point ceiling ambiguity.
fn s_with_k(r: &Ratios, n: f64, m: f64, p: f64, k: f64) -> f64 {
    let mk = m / k;
    r.rho * mk * p / (p * p / n + r.rho2 * p + r.rho1 * mk)
}

/// Speedup `S(P) = T(1)/T(P)` in its rational form. With `t_w_c = 0` the
/// ratios degenerate, so the runtime ratio is evaluated directly (it is then
/// independent of N and increases without bound in the divisible case).
pub fn speedup(params: &SpeedupParams) -> f64 {
    debug_assert!(params.validate().is_ok());
    match params.ratios() {
        Some(r) => s_with_k(
            &r,
            params.n as f64,
            params.m as f64,
            params.p as f64,
            params.ceil_m_over_p() as f64,
        ),
        None => runtime_serial(params) / runtime_total(params),
    }
}

/// Speedup at a real-valued machine count, for the analysis ops. The
/// interval index comes from a floating ceiling; exact interval boundaries
/// should go through [`boundary_speedup`] instead.
pub fn speedup_real(params: &SpeedupParams, p: f64) -> f64 {
    debug_assert!(p >= 1.0);
    let r = params
        .ratios()
        .expect("real-valued speedup analysis requires t_w_c > 0");
    let m = params.m as f64;
    s_with_k(&r, params.n as f64, m, p, (m / p).ceil())
}

/// Speedup at the interval boundary `P = M/k`, in the closed form
/// `rho' M / (M + k rho')` with `rho' = rho N`. Agrees with the divisible
/// formula whenever `k` divides `M`.
pub fn boundary_speedup(params: &SpeedupParams, k: u64) -> f64 {
    debug_assert!(k >= 1 && k <= params.m);
    let r = params
        .ratios()
        .expect("boundary analysis requires t_w_c > 0");
    let m = params.m as f64;
    r.rho_n * m / (m + k as f64 * r.rho_n)
}

/// Divisible-case speedup `S = P/(1 + P/(rho N))`. Exactly `P` when
/// `t_w_c = 0` (infinite ratio).
pub fn speedup_divisible(params: &SpeedupParams) -> Result<f64, SpeedupError> {
    if params.m % params.p != 0 {
        return Err(SpeedupError::NotDivisible {
            m: params.m,
            p: params.p,
        });
    }
    let p = params.p as f64;
    Ok(match params.ratios() {
        Some(r) => p / (1.0 + p / r.rho_n),
        None => p,
    })
}

/// The `M` half-open intervals `[M/k, M/(k-1))` on which `ceil(M/P) = k`,
/// listed in ascending `P` (descending `k`); the last is `[M, inf)`.
pub fn interval_bounds(m: u64) -> Vec<(f64, f64, u64)> {
    assert!(m >= 1);
    let mf = m as f64;
    (1..=m)
        .rev()
        .map(|k| {
            let lo = mf / k as f64;
            let hi = if k > 1 {
                mf / (k - 1) as f64
            } else {
                f64::INFINITY
            };
            (lo, hi, k)
        })
        .collect()
}

/// How the speedup behaves within one interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalShape {
    /// Maximum at the interval start; decreasing throughout.
    Decreasing,
    /// Single interior maximum at `p_star`.
    InteriorMax,
    /// Increasing throughout; the supremum sits at the (excluded) right end.
    Increasing,
}

#[derive(Debug, Clone, Copy)]
pub struct IntervalMax {
    /// `P*_k = sqrt(rho1 M N / k)`; the stationary point of the interval's
    /// rational form, whether or not it falls inside the interval.
    pub p_star: f64,
    /// `S*_k = (rho M/k) / (rho2 + 2 sqrt(rho1 M/(N k)))`.
    pub s_star: f64,
    pub shape: IntervalShape,
}

/// Stationary point and value of the speedup on interval `k`, with the
/// monotonicity classification.
pub fn interval_max(params: &SpeedupParams, k: u64) -> Result<IntervalMax, SpeedupError> {
    if k == 0 || k > params.m {
        return Err(SpeedupError::InvalidParams(format!(
            "interval index {k} outside 1..={}",
            params.m
        )));
    }
    let r = params.ratios().ok_or_else(|| {
        SpeedupError::InvalidParams("interval analysis requires t_w_c > 0".into())
    })?;
    let m = params.m as f64;
    let n = params.n as f64;
    let kf = k as f64;
    let p_star = (r.rho1 * m * n / kf).sqrt();
    let s_star = (r.rho * m / kf) / (r.rho2 + 2.0 * (r.rho1 * m / (n * kf)).sqrt());
    let lo = m / kf;
    let hi = if k > 1 { m / (kf - 1.0) } else { f64::INFINITY };
    let shape = if p_star <= lo {
        IntervalShape::Decreasing
    } else if p_star >= hi {
        IntervalShape::Increasing
    } else {
        IntervalShape::InteriorMax
    };
    Ok(IntervalMax {
        p_star,
        s_star,
        shape,
    })
}

/// Global maximum of `S(P)` over real `P >= 1`: at `P = M` when
/// `M >= rho1 N` (the last interval is decreasing), otherwise at
/// `P*_1 = sqrt(rho1 M N)` in the last interval's interior.
pub fn global_max(params: &SpeedupParams) -> Result<(f64, f64), SpeedupError> {
    let r = params.ratios().ok_or_else(|| {
        SpeedupError::InvalidParams(
            "no communication cost: speedup has no finite maximum".into(),
        )
    })?;
    let m = params.m as f64;
    if m >= r.rho1_n {
        Ok((m, m / (1.0 + m / r.rho_n)))
    } else {
        let im = interval_max(params, 1)?;
        Ok((im.p_star, im.s_star))
    }
}

/// Large-dataset limit of the speedup: `rho (M/c) P / (rho2 P + rho1 M/c)`
/// with `c = ceil(M/P)`. Reduces to `P` in the divisible case and to
/// `rho / (rho1/P + rho2/M)` for `P >= M`. With `t_w_c = 0` the exact
/// speedup is already independent of `N` and is returned as is.
pub fn large_n_approx(params: &SpeedupParams) -> f64 {
    match params.ratios() {
        Some(r) => {
            let mc = params.m as f64 / params.ceil_m_over_p() as f64;
            let p = params.p as f64;
            r.rho * mc * p / (r.rho2 * p + r.rho1 * mc)
        }
        None => speedup(params),
    }
}

/// Verifies the three scalings that leave `S(P)` unchanged (to 1e-12
/// relative): trading dataset size against per-point compute times, trading
/// dataset size against communication time, and rescaling all times. `alpha`
/// must keep the scaled `N` integral.
pub fn invariance_check(params: &SpeedupParams, alpha: f64) -> bool {
    assert!(alpha > 0.0);
    let scaled_n = (params.n as f64 * alpha).round();
    assert!(
        (params.n as f64 * alpha - scaled_n).abs() < 1e-9 && scaled_n >= 1.0,
        "alpha must keep N a positive integer"
    );
    let scaled_n = scaled_n as u64;
    let s0 = speedup(params);
    let transforms = [
        SpeedupParams {
            n: scaled_n,
            t_w_r: params.t_w_r / alpha,
            t_z_r: params.t_z_r / alpha,
            ..*params
        },
        SpeedupParams {
            n: scaled_n,
            t_w_c: params.t_w_c * alpha,
            ..*params
        },
        SpeedupParams {
            t_w_r: params.t_w_r * alpha,
            t_z_r: params.t_z_r * alpha,
            t_w_c: params.t_w_c * alpha,
            ..*params
        },
    ];
    transforms
        .iter()
        .all(|t| (speedup(t) - s0).abs() <= 1e-12 * s0.abs())
}

/// One failed numeric check from [`theorem2_verifier`].
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TheoremViolation {
    pub m: u64,
    pub k: u64,
    /// Machine count witnessing the violation.
    pub p: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct TheoremReport {
    pub draws: usize,
    pub comparisons: u64,
    pub violations: Vec<TheoremViolation>,
}

impl TheoremReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Relative slack for the strict inequalities: the claimed gaps are
/// macroscopic for random parameters, so the slack only absorbs float
/// rounding at near-ties.
const THEOREM_SLACK: f64 = 1e-9;

/// Numerically verifies, for each `M` and each sampled parameter set:
///
/// * the per-interval maxima `S*_k` strictly decrease in `k`;
/// * every interval boundary value `S(M/k)` exceeds `S(P)` for all smaller
///   `P` (dense-grid check);
/// * the right boundary `S(M/(k-1))` dominates the whole of interval `k`;
/// * per-interval unimodality: the discrete slope switches sign at most
///   once, and only from ascent to descent.
///
/// The sampler receives `M` and must return valid parameters with
/// `t_w_c > 0` and that `M`; `grid_density` is the number of interior grid
/// points per interval.
pub fn theorem2_verifier(
    m_values: &[u64],
    mut sampler: impl FnMut(u64) -> SpeedupParams,
    draws: usize,
    grid_density: usize,
) -> TheoremReport {
    assert!(grid_density >= 3);
    let mut report = TheoremReport::default();
    for &m in m_values {
        for _ in 0..draws {
            let params = sampler(m);
            assert_eq!(params.m, m, "sampler changed M");
            assert!(params.t_w_c > 0.0, "sampler produced no-communication params");
            report.draws += 1;
            verify_one(&params, grid_density, &mut report);
        }
    }
    report
}

fn verify_one(params: &SpeedupParams, grid_density: usize, report: &mut TheoremReport) {
    let r = params.ratios().unwrap();
    let m = params.m;
    let mf = m as f64;
    let nf = params.n as f64;

    // Part 1: S*_k strictly decreasing in k.
    let s_star = |k: u64| -> f64 {
        let kf = k as f64;
        (r.rho * mf / kf) / (r.rho2 + 2.0 * (r.rho1 * mf / (nf * kf)).sqrt())
    };
    for k in 2..=m {
        report.comparisons += 1;
        if !(s_star(k) < s_star(k - 1) * (1.0 + THEOREM_SLACK)) {
            report.violations.push(TheoremViolation {
                m,
                k,
                p: (r.rho1 * mf * nf / k as f64).sqrt(),
                detail: format!("S*_{k} = {} >= S*_{} = {}", s_star(k), k - 1, s_star(k - 1)),
            });
        }
    }

    // Boundary dominance and per-interval scans, ascending P (descending k).
    let p_star_1 = (r.rho1 * mf * nf).sqrt();
    let mut prefix_max = f64::NEG_INFINITY;
    for k in (1..=m).rev() {
        let kf = k as f64;
        let s_bound = boundary_speedup(params, k);
        // Part 3: the boundary value beats everything strictly before it.
        if prefix_max > f64::NEG_INFINITY {
            report.comparisons += 1;
            if !(s_bound > prefix_max * (1.0 - THEOREM_SLACK)) {
                report.violations.push(TheoremViolation {
                    m,
                    k,
                    p: mf / kf,
                    detail: format!(
                        "S(M/{k}) = {s_bound} does not dominate earlier max {prefix_max}"
                    ),
                });
            }
        }
        prefix_max = prefix_max.max(s_bound);

        let lo = mf / kf;
        let hi = if k > 1 {
            mf / (kf - 1.0)
        } else {
            (4.0 * p_star_1).max(2.0 * mf)
        };
        let right_bound = if k > 1 {
            Some(boundary_speedup(params, k - 1))
        } else {
            None
        };
        let mut values = Vec::with_capacity(grid_density);
        for j in 0..grid_density {
            // interior midpoints: never touches either endpoint
            let t = (2 * j + 1) as f64 / (2 * grid_density) as f64;
            let p = lo + (hi - lo) * t;
            let s = s_with_k(&r, nf, mf, p, kf);
            values.push((p, s));
            prefix_max = prefix_max.max(s);
            // Interval dominance: the next boundary beats the interior.
            if let Some(rb) = right_bound {
                report.comparisons += 1;
                if !(rb > s * (1.0 - THEOREM_SLACK)) {
                    report.violations.push(TheoremViolation {
                        m,
                        k,
                        p,
                        detail: format!(
                            "S(M/{}) = {rb} does not dominate interior S({p}) = {s}",
                            k - 1
                        ),
                    });
                }
            }
        }

        // Unimodality: nonzero discrete slopes may switch sign once, only
        // from ascent to descent.
        let mut seen_descent = false;
        for w in values.windows(2) {
            let (p0, s0) = w[0];
            let (_, s1) = w[1];
            let ds = s1 - s0;
            if ds.abs() <= 1e-12 * s0.abs().max(s1.abs()) {
                continue;
            }
            report.comparisons += 1;
            if ds < 0.0 {
                seen_descent = true;
            } else if seen_descent {
                report.violations.push(TheoremViolation {
                    m,
                    k,
                    p: p0,
                    detail: "slope turned positive after a descent".into(),
                });
                break;
            }
        }
    }
}

/// Draws random parameters with the given `M` for the theorem verifier:
/// log-uniform times and dataset sizes across several decades.
pub fn random_params_sampler(seed: u64) -> impl FnMut(u64) -> SpeedupParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    move |m| {
        let log_uniform =
            |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> f64 { 10f64.powf(rng.gen_range(lo..hi)) };
        let n = log_uniform(&mut rng, 3.0, 7.0) as u64;
        SpeedupParams {
            p: 1, // analysis ops sweep P themselves
            n: n.max(1),
            m,
            e: rng.gen_range(1..=4),
            t_w_r: log_uniform(&mut rng, -2.0, 2.0),
            t_w_c: log_uniform(&mut rng, -1.0, 4.0),
            t_z_r: log_uniform(&mut rng, -2.0, 2.0),
        }
    }
}

/// Effective submodel count for the speedup model. Grouping the `D` decoder
/// rows into `L` groups balances the per-submodel work, giving `2L` equal
/// groups; that needs at least as many decoder rows as encoder bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EffectiveM {
    /// `2L` balanced groups.
    Grouped(u64),
    /// `D < L`: grouping does not apply; the raw `L + D` count is returned.
    Ungrouped(u64),
}

impl EffectiveM {
    pub fn count(self) -> u64 {
        match self {
            EffectiveM::Grouped(m) | EffectiveM::Ungrouped(m) => m,
        }
    }
}

pub fn effective_m(l: u64, d: u64) -> EffectiveM {
    if d >= l {
        EffectiveM::Grouped(2 * l)
    } else {
        EffectiveM::Ungrouped(l + d)
    }
}

/// Fits `(t_w_c, t_z_r)` with `t_w_r := 1` to measured `(P, speedup)` pairs
/// by least squares over a log-spaced grid (coarse pass over ten decades,
/// then one refinement pass around the winner). Returns the best grid point.
///
/// When every measured machine count divides `M`, the curve constrains only
/// the combined ratio `rho`, and the returned point is one of the equally
/// good fits along that ridge; including a non-divisor pins both constants.
pub fn fit_time_params(measured: &[(u64, f64)], n: u64, m: u64, e: u32) -> (f64, f64) {
    assert!(measured.len() >= 2, "need at least two measurements");
    let objective = |t_w_c: f64, t_z_r: f64| -> f64 {
        let mut err = 0.0;
        for &(p, s_meas) in measured {
            let s_model = speedup(&SpeedupParams {
                p,
                n,
                m,
                e,
                t_w_r: 1.0,
                t_w_c,
                t_z_r,
            });
            err += (s_model - s_meas) * (s_model - s_meas);
        }
        err
    };
    let grid = |lo: f64, hi: f64, steps: usize| -> Vec<f64> {
        (0..=steps)
            .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / steps as f64))
            .collect()
    };
    let mut best = (f64::INFINITY, 1.0, 1.0);
    let coarse_wc = grid(-4.0, 6.0, 100);
    let coarse_zr = grid(-4.0, 6.0, 100);
    for &wc in &coarse_wc {
        for &zr in &coarse_zr {
            let err = objective(wc, zr);
            if err < best.0 {
                best = (err, wc, zr);
            }
        }
    }
    // refine one coarse step (0.1 decades) around the winner
    let fine_wc = grid(best.1.log10() - 0.1, best.1.log10() + 0.1, 40);
    let fine_zr = grid(best.2.log10() - 0.1, best.2.log10() + 0.1, 40);
    for &wc in &fine_wc {
        for &zr in &fine_zr {
            let err = objective(wc, zr);
            if err < best.0 {
                best = (err, wc, zr);
            }
        }
    }
    (best.1, best.2)
}

/// CSV table of the speedup curve at integer machine counts: exact value,
/// divisible-case value where applicable, and the interval index.
pub fn emit_curve(params: &SpeedupParams, p_max: u64, stride: u64) -> String {
    assert!(p_max >= 1 && stride >= 1);
    let mut out = String::from("P,S_exact,S_divisible,interval_k\n");
    let mut p = 1;
    while p <= p_max {
        let at = SpeedupParams { p, ..*params };
        let s = speedup(&at);
        let div = if params.m % p == 0 {
            speedup_divisible(&at).unwrap().to_string()
        } else {
            String::new()
        };
        let k = at.ceil_m_over_p();
        out.push_str(&format!("{p},{s},{div},{k}\n"));
        p += stride;
    }
    out
}
