//! Bandwidth allocation across clusters for the NOMA and exclusive periods.
//!
//! Both periods reduce to the separable problem
//! `min sum_i a_i b_i + c_i f(b_i)  s.t.  sum_i b_i <= b0, b_i >= lo`
//! with `f(b) = b (2^{r0/b} - 1)`, which is convex and strictly decreasing.
//! It is solved through its dual: for a price `mu` on the sum constraint each
//! cluster's stationarity condition has a unique root, and `mu` is bisected.

use serde::Serialize;

use crate::beamforming::{a_inverse_h, closed_form_candidate, rate_threshold};
use crate::channel::ClusterChannels;
use crate::error::{Error, Result};

const LN2: f64 = std::f64::consts::LN_2;

/// Per-cluster bandwidths for both periods.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandwidthAllocation {
    pub b_noma: Vec<f64>,
    pub b_excl: Vec<f64>,
}

impl BandwidthAllocation {
    pub fn equal(m: usize, b0: f64) -> Self {
        Self {
            b_noma: vec![b0 / m as f64; m],
            b_excl: vec![b0 / m as f64; m],
        }
    }
}

/// Bookkeeping of one block-coordinate-descent run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BcdState {
    pub zeta: Vec<f64>,
    pub kappa: Vec<f64>,
    /// Total NOMA-period power at the start and after every iteration.
    pub power_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcdOptions {
    /// Absolute stopping threshold in W; `None` means `rel_tol` times the initial power.
    pub delta0: Option<f64>,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for BcdOptions {
    fn default() -> Self {
        Self {
            delta0: None,
            rel_tol: 1e-6,
            max_iter: 50,
        }
    }
}

/// `f(b) = b (2^{r0/b} - 1)`: bandwidth-scaled SINR threshold for rate `r0`.
pub fn bit_term(r0: f64, b: f64) -> f64 {
    b * rate_threshold(r0, b)
}

/// `f'(b) = 2^{r0/b} (1 - r0 ln2 / b) - 1`, negative for every `b > 0`.
pub fn bit_term_slope(r0: f64, b: f64) -> f64 {
    -stationarity_lhs(r0 * LN2 / b)
}

/// `(t - 1) e^t + 1`, increasing from 0 on `t > 0`; equals `-f'(b)` at `t = r0 ln2 / b`.
fn stationarity_lhs(t: f64) -> f64 {
    if t < 0.1 {
        // sum_{k>=2} (k-1) t^k / k!
        let mut term = t * t / 2.0;
        let mut sum = term;
        for k in 3..30 {
            term *= t / k as f64;
            let add = (k - 1) as f64 * term;
            sum += add;
            if add < 1e-17 * sum {
                break;
            }
        }
        sum
    } else {
        (t - 1.0) * t.exp() + 1.0
    }
}

/// Solves `(t - 1) e^t + 1 = s` for `t > 0`.
fn solve_stationarity(s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while stationarity_lhs(hi) < s {
        lo = hi;
        hi *= 2.0;
        if hi > 1e3 {
            return f64::INFINITY;
        }
    }
    let mut t = if s < 1e-2 {
        (2.0 * s).sqrt().min(hi)
    } else {
        0.5 * (lo + hi)
    };
    for _ in 0..200 {
        let g = stationarity_lhs(t) - s;
        if g > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let slope = t * t.exp();
        let mut next = t - g / slope;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() <= 1e-15 * t || hi - lo <= 1e-15 * hi {
            return next;
        }
        t = next;
    }
    t
}

/// Coefficients of one cluster in the separable problem.
#[derive(Debug, Clone, Copy)]
struct Term {
    lin: f64,
    bit: f64,
}

impl Term {
    /// Minimizer of `(lin + mu) b + bit f(b)` over `b >= lo`.
    fn argmin(&self, mu: f64, r0: f64, lo: f64) -> f64 {
        let s = (self.lin + mu) / self.bit;
        if lo > 0.0 && stationarity_lhs(r0 * LN2 / lo) <= s {
            return lo;
        }
        let t = solve_stationarity(s);
        if t == 0.0 {
            return f64::INFINITY;
        }
        (r0 * LN2 / t).max(lo)
    }
}

fn dual_allocate(terms: &[Term], r0: f64, b0: f64, lo: f64) -> Result<Vec<f64>> {
    let m = terms.len() as f64;
    if m * lo > b0 * (1.0 + 1e-12) {
        return Err(Error::InfeasibleBandwidth {
            required: m * lo,
            available: b0,
        });
    }
    if m * lo >= b0 * (1.0 - 1e-12) {
        return Ok(vec![lo; terms.len()]);
    }
    let alloc = |mu: f64| -> Vec<f64> { terms.iter().map(|t| t.argmin(mu, r0, lo)).collect() };
    let total = |b: &[f64]| b.iter().sum::<f64>();

    let at_zero = alloc(0.0);
    if total(&at_zero) <= b0 {
        return Ok(at_zero);
    }
    let mut hi = terms.iter().map(|t| t.bit).fold(0.0, f64::max);
    let mut b_hi = alloc(hi);
    while total(&b_hi) > b0 {
        hi *= 2.0;
        b_hi = alloc(hi);
    }
    let mut lo_mu = 0.0;
    for _ in 0..400 {
        if total(&b_hi) >= b0 * (1.0 - 1e-14) || hi - lo_mu <= 1e-15 * hi {
            break;
        }
        let mid = 0.5 * (lo_mu + hi);
        let b_mid = alloc(mid);
        if total(&b_mid) > b0 {
            lo_mu = mid;
        } else {
            hi = mid;
            b_hi = b_mid;
        }
    }
    Ok(b_hi)
}

fn check_bandwidths(b: &[f64], m: usize) -> Result<()> {
    if b.len() != m || b.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidArgument(
            "bandwidths must be positive, one per cluster".into(),
        ));
    }
    Ok(())
}

/// `(zeta_i, kappa_i)`: S- and B-user gains along the closed-form S-beam at bandwidth `b_i`.
pub fn update_blocks(channels: &[ClusterChannels], b: &[f64], r0: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    check_bandwidths(b, channels.len())?;
    Ok(channels
        .iter()
        .zip(b)
        .map(|(ch, &bi)| {
            let v = a_inverse_h(&ch.h_s, &ch.h_b, rate_threshold(r0, bi));
            let vv = v.norm_sqr();
            (ch.h_s.gain(&v) / vv, ch.h_b.gain(&v) / vv)
        })
        .unzip())
}

/// Total NOMA-period power with closed-form beams at bandwidths `b`.
pub fn noma_power_of_bandwidth(
    channels: &[ClusterChannels],
    b: &[f64],
    gamma_s0: f64,
    r0: f64,
    n0: f64,
) -> Result<f64> {
    check_bandwidths(b, channels.len())?;
    Ok(channels
        .iter()
        .zip(b)
        .map(|(ch, &bi)| closed_form_candidate(ch, gamma_s0, rate_threshold(r0, bi), n0 * bi).total_power())
        .sum())
}

fn noma_terms(zeta: &[f64], kappa: &[f64], channels: &[ClusterChannels], gamma_s0: f64, n0: f64) -> Vec<Term> {
    channels
        .iter()
        .zip(zeta.iter().zip(kappa))
        .map(|(ch, (&z, &k))| Term {
            lin: gamma_s0 * n0 / z,
            bit: n0 * (gamma_s0 * k / z + 1.0) / ch.gain_b(),
        })
        .collect()
}

/// Minimizes the NOMA-period power with the gain blocks frozen.
#[allow(clippy::too_many_arguments)]
pub fn solve_inner_convex(
    zeta: &[f64],
    kappa: &[f64],
    channels: &[ClusterChannels],
    gamma_s0: f64,
    r0: f64,
    n0: f64,
    b0: f64,
    b_min: f64,
) -> Result<Vec<f64>> {
    let m = channels.len();
    if m == 0 || zeta.len() != m || kappa.len() != m {
        return Err(Error::InvalidArgument(
            "block vectors must match the cluster count".into(),
        ));
    }
    if zeta.iter().any(|&z| z.is_nan() || z <= 0.0) {
        return Err(Error::InvalidArgument("zeta must be positive".into()));
    }
    dual_allocate(&noma_terms(zeta, kappa, channels, gamma_s0, n0), r0, b0, b_min)
}

/// Frozen-block objective; upper-bounds the true power and touches it where the blocks were taken.
pub fn inner_objective(
    zeta: &[f64],
    kappa: &[f64],
    channels: &[ClusterChannels],
    b: &[f64],
    gamma_s0: f64,
    r0: f64,
    n0: f64,
) -> f64 {
    noma_terms(zeta, kappa, channels, gamma_s0, n0)
        .iter()
        .zip(b)
        .map(|(t, &bi)| t.lin * bi + t.bit * bit_term(r0, bi))
        .sum()
}

/// Alternates block updates and the frozen-block solve, starting from an equal split.
#[allow(clippy::too_many_arguments)]
pub fn bcd_allocate(
    channels: &[ClusterChannels],
    gamma_s0: f64,
    r0: f64,
    n0: f64,
    b0: f64,
    b_min: f64,
    opts: BcdOptions,
) -> Result<(Vec<f64>, BcdState)> {
    let m = channels.len();
    if m == 0 {
        return Err(Error::InvalidArgument("no clusters".into()));
    }
    if m as f64 * b_min > b0 * (1.0 + 1e-12) {
        return Err(Error::InfeasibleBandwidth {
            required: m as f64 * b_min,
            available: b0,
        });
    }
    let mut b = vec![b0 / m as f64; m];
    let mut power = noma_power_of_bandwidth(channels, &b, gamma_s0, r0, n0)?;
    let delta0 = opts.delta0.unwrap_or(opts.rel_tol * power);
    let mut state = BcdState {
        zeta: Vec::new(),
        kappa: Vec::new(),
        power_trace: vec![power],
        iterations: 0,
        converged: false,
    };
    for _ in 0..opts.max_iter {
        let (zeta, kappa) = update_blocks(channels, &b, r0)?;
        let next = solve_inner_convex(&zeta, &kappa, channels, gamma_s0, r0, n0, b0, b_min)?;
        let next_power = noma_power_of_bandwidth(channels, &next, gamma_s0, r0, n0)?;
        state.zeta = zeta;
        state.kappa = kappa;
        state.iterations += 1;
        if next_power > power {
            // Only rounding can cause an increase; keep the previous point.
            state.converged = true;
            break;
        }
        let gain = power - next_power;
        b = next;
        power = next_power;
        state.power_trace.push(power);
        if gain <= delta0 {
            state.converged = true;
            break;
        }
    }
    let (zeta, kappa) = update_blocks(channels, &b, r0)?;
    state.zeta = zeta;
    state.kappa = kappa;
    Ok((b, state))
}

/// Exclusive-period allocation; the sum constraint is always tight.
pub fn allocate_exclusive(channels: &[ClusterChannels], r0: f64, n0: f64, b0: f64) -> Result<Vec<f64>> {
    if channels.is_empty() || b0.is_nan() || b0 <= 0.0 {
        return Err(Error::InvalidArgument(
            "need at least one cluster and positive budget".into(),
        ));
    }
    let terms: Vec<Term> = channels
        .iter()
        .map(|ch| Term {
            lin: 0.0,
            bit: n0 / ch.gain_b(),
        })
        .collect();
    if terms.iter().any(|t| !(t.bit.is_finite() && t.bit > 0.0)) {
        return Err(Error::InvalidArgument("zero B-user channel".into()));
    }
    if terms.len() == 1 {
        return Ok(vec![b0]);
    }
    let mut b = dual_allocate(&terms, r0, b0, 0.0)?;
    // Spread the last rounding residue proportionally so the budget is used exactly.
    let scale = b0 / b.iter().sum::<f64>();
    b.iter_mut().for_each(|x| *x *= scale);
    Ok(b)
}

/// Exclusive-period power for bandwidths `b`.
pub fn exclusive_power(channels: &[ClusterChannels], b: &[f64], r0: f64, n0: f64) -> f64 {
    channels
        .iter()
        .zip(b)
        .map(|(ch, &bi)| n0 * bit_term(r0, bi) / ch.gain_b())
        .sum()
}

/// `c_i f'(b_i)` per cluster; equal across clusters at the exclusive optimum.
pub fn exclusive_marginals(channels: &[ClusterChannels], b: &[f64], r0: f64, n0: f64) -> Vec<f64> {
    channels
        .iter()
        .zip(b)
        .map(|(ch, &bi)| n0 / ch.gain_b() * bit_term_slope(r0, bi))
        .collect()
}

/// Relative stationarity residual `|a_i + mu + c_i f'(b_i)| / (a_i + mu)` of the
/// frozen-block problem for clusters strictly above the floor, with `mu`
/// recovered from the first such cluster.
#[allow(clippy::too_many_arguments)]
pub fn inner_stationarity_residual(
    zeta: &[f64],
    kappa: &[f64],
    channels: &[ClusterChannels],
    b: &[f64],
    gamma_s0: f64,
    r0: f64,
    n0: f64,
    b_min: f64,
) -> f64 {
    let terms = noma_terms(zeta, kappa, channels, gamma_s0, n0);
    let free: Vec<(Term, f64)> = terms
        .into_iter()
        .zip(b.iter().copied())
        .filter(|&(_, bi)| bi > b_min * (1.0 + 1e-9))
        .collect();
    let Some(&(t0, b0)) = free.first() else {
        return 0.0;
    };
    let mu = (-t0.bit * bit_term_slope(r0, b0) - t0.lin).max(0.0);
    free.iter()
        .map(|(t, bi)| ((t.lin + mu + t.bit * bit_term_slope(r0, *bi)) / (t.lin + mu)).abs())
        .fold(0.0, f64::max)
}
