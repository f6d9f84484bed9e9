//! Brute-force reference solvers.
//!
//! Nothing here calls into the production beamforming, bandwidth or protocol
//! kernels: quadratic forms, thresholds and objectives are re-implemented on
//! plain slices so that agreement between the two paths is meaningful.
//! Oracles report what they found (and how tight the search was) and leave
//! pass/fail judgement to the caller.

use num_complex::Complex64;

use crate::channel::ClusterChannels;
use crate::error::{Error, Result};
use crate::linalg::CVector;
use crate::protocol::{SystemParams, Targets};
use crate::semantic_model::SemanticPerfModel;

pub const DEFAULT_STARTS: usize = 16;
const STEP_TOL: f64 = 1e-10;
const MAX_NM_ITER: usize = 4000;
const COLLINEAR_TOL: f64 = 1e-8;

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        acc += x.conj() * y;
    }
    acc
}

fn sq_norm(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.re * z.re + z.im * z.im).sum()
}

/// Two-dimensional coordinates of a channel pair: `h_s = (sigma, 0)`,
/// `h_b = (beta1, beta2)` in an orthonormal basis `(e1, e2)` of their span.
struct SpanFrame {
    e1: Vec<Complex64>,
    e2: Option<Vec<Complex64>>,
    sigma: f64,
    beta1: Complex64,
    beta2: Complex64,
}

impl SpanFrame {
    fn new(h_s: &[Complex64], h_b: &[Complex64]) -> Self {
        let sigma = sq_norm(h_s).sqrt();
        let e1: Vec<Complex64> = h_s.iter().map(|z| z / sigma).collect();
        let beta1 = inner(&e1, h_b);
        let resid: Vec<Complex64> = h_b.iter().zip(&e1).map(|(b, e)| b - beta1 * e).collect();
        let rn = sq_norm(&resid).sqrt();
        if rn <= COLLINEAR_TOL * sq_norm(h_b).sqrt() {
            return Self {
                e1,
                e2: None,
                sigma,
                beta1,
                beta2: Complex64::new(0.0, 0.0),
            };
        }
        let e2: Vec<Complex64> = resid.iter().map(|z| z / rn).collect();
        let beta2 = inner(&e2, h_b);
        Self {
            e1,
            e2: Some(e2),
            sigma,
            beta1,
            beta2,
        }
    }

    fn lift(&self, c1: Complex64, c2: Complex64) -> CVector {
        let v: Vec<Complex64> = match &self.e2 {
            Some(e2) => self.e1.iter().zip(e2).map(|(a, b)| a * c1 + b * c2).collect(),
            None => self.e1.iter().map(|a| a * c1).collect(),
        };
        CVector::new(v)
    }

    fn gain_b(&self) -> f64 {
        self.beta1.norm_sqr() + self.beta2.norm_sqr()
    }
}

/// Best point found by [`span_search`].
#[derive(Debug, Clone)]
pub struct SpanSearchResult {
    pub dir_s: CVector,
    pub dir_b: CVector,
    pub p_s: f64,
    pub p_b: f64,
    /// Number of starts whose descent met the step tolerance.
    pub converged_starts: usize,
}

impl SpanSearchResult {
    pub fn total_power(&self) -> f64 {
        self.p_s + self.p_b
    }
}

/// Largest `t` with `|p^H u|^2 >= t` and `|q^H u|^2 >= t` over unit `u` in `C^2`,
/// together with a maximizing `u`.
fn max_min_two_forms(p: [Complex64; 2], q: [Complex64; 2]) -> (f64, [Complex64; 2]) {
    let pp = p[0].norm_sqr() + p[1].norm_sqr();
    let qq = q[0].norm_sqr() + q[1].norm_sqr();
    let pq = p[0].conj() * q[0] + p[1].conj() * q[1];
    let ip = pq.norm_sqr();
    if ip >= pp * pp {
        let s = pp.sqrt();
        return (pp, [p[0] / s, p[1] / s]);
    }
    if ip >= qq * qq {
        let s = qq.sqrt();
        return (qq, [q[0] / s, q[1] / s]);
    }
    // Minimum-norm u with p^H u = 1 and q^H u = e^{j psi}, psi chosen to align
    // with p^H q; the optimum balances both forms.
    let det = pp * qq - ip;
    let phase = if pq.norm() > 0.0 {
        pq.conj() / pq.norm()
    } else {
        Complex64::new(1.0, 0.0)
    };
    // coef = G^{-1} (1, phase) with G the Gram matrix of (p, q).
    let c_p = (qq - pq * phase) / det;
    let c_q = (pp * phase - pq.conj()) / det;
    let u = [p[0] * c_p + q[0] * c_q, p[1] * c_p + q[1] * c_q];
    let n = (u[0].norm_sqr() + u[1].norm_sqr()).sqrt();
    let value = det / (pp + qq - 2.0 * ip.sqrt());
    (value, [u[0] / n, u[1] / n])
}

struct SpanProblem<'a> {
    frame: &'a SpanFrame,
    gamma_s0: f64,
    gamma_b0: f64,
    noise: f64,
}

struct Evaluated {
    p_s: f64,
    p_b: f64,
    u_s: [Complex64; 2],
    u_b: [Complex64; 2],
}

impl SpanProblem<'_> {
    fn s_beam(x: &[f64]) -> [Complex64; 2] {
        [Complex64::new(x[0].cos(), 0.0), Complex64::from_polar(x[0].sin(), x[1])]
    }

    /// Minimal powers given the S-beam, with the B-beam chosen optimally.
    fn evaluate(&self, x: &[f64]) -> Option<Evaluated> {
        let f = self.frame;
        let u_s = Self::s_beam(x);
        let s = [Complex64::new(f.sigma, 0.0), Complex64::new(0.0, 0.0)];
        let b = [f.beta1, f.beta2];
        let proj = |h: &[Complex64; 2], u: &[Complex64; 2]| (h[0].conj() * u[0] + h[1].conj() * u[1]).norm_sqr();
        let a_ss = proj(&s, &u_s);
        if a_ss <= 1e-300 {
            return None;
        }
        let p_s = self.gamma_s0 * self.noise / a_ss;
        if self.gamma_b0 == 0.0 {
            return Some(Evaluated {
                p_s,
                p_b: 0.0,
                u_s,
                u_b: u_s,
            });
        }
        let a_bs = proj(&b, &u_s);
        // B-beam needs |h_s^H u|^2 >= p_b^{-1} gamma_b0 N (gamma_s0 + 1)
        // and |h_b^H u|^2 >= p_b^{-1} gamma_b0 (p_s a_bs + N).
        let w_sic = 1.0 / (self.noise * (self.gamma_s0 + 1.0)).sqrt();
        let w_b = 1.0 / (p_s * a_bs + self.noise).sqrt();
        let (v, u_b) = max_min_two_forms([s[0] * w_sic, s[1] * w_sic], [b[0] * w_b, b[1] * w_b]);
        if v <= 0.0 {
            return None;
        }
        let need_sic = self.noise * (self.gamma_s0 + 1.0) / proj(&s, &u_b);
        let need_b = (p_s * a_bs + self.noise) / proj(&b, &u_b);
        let p_b = self.gamma_b0 * need_sic.max(need_b);
        p_b.is_finite().then_some(Evaluated { p_s, p_b, u_s, u_b })
    }

    fn objective(&self, x: &[f64]) -> f64 {
        self.evaluate(x).map_or(f64::INFINITY, |e| e.p_s + e.p_b)
    }
}

/// Minimizes `p_s + p_b` over beams in `span{h_s, h_b}` subject to the S-user
/// SNR, SIC-decodability and B-user SINR constraints.
///
/// The B-beam is eliminated exactly (a max-min of two rank-one forms), leaving
/// a two-angle search over the S-beam run from `starts` seeds.
pub fn span_search(
    ch: &ClusterChannels,
    gamma_s0: f64,
    gamma_b0: f64,
    noise_w: f64,
    starts: usize,
) -> Result<SpanSearchResult> {
    let h_s = ch.h_s.as_slice();
    let h_b = ch.h_b.as_slice();
    let (g_s, g_b) = (sq_norm(h_s), sq_norm(h_b));
    if !(g_s > 0.0 && g_b > 0.0) {
        return Err(Error::InvalidArgument("zero channel".into()));
    }
    let frame = SpanFrame::new(h_s, h_b);

    if frame.e2.is_none() {
        let one = Complex64::new(1.0, 0.0);
        let dir = frame.lift(one, Complex64::new(0.0, 0.0));
        let p_s = gamma_s0 * noise_w / g_s;
        let p_b = gamma_b0 * noise_w * (gamma_s0 / g_s + 1.0 / g_b).max((gamma_s0 + 1.0) / g_s);
        return Ok(SpanSearchResult {
            dir_s: dir.clone(),
            dir_b: dir,
            p_s,
            p_b,
            converged_starts: 1,
        });
    }

    let problem = SpanProblem {
        frame: &frame,
        gamma_s0,
        gamma_b0,
        noise: noise_w,
    };
    let side = (starts.max(1) as f64).sqrt().ceil() as usize;
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut converged = 0;
    for i in 0..starts.max(1) {
        let (ia, ip) = (i % side, i / side);
        let x0 = [
            (ia as f64 + 0.5) * std::f64::consts::FRAC_PI_2 / side as f64,
            0.1 + ip as f64 * std::f64::consts::TAU / side as f64,
        ];
        let run = nelder_mead(|x| problem.objective(x), &x0, 0.2, STEP_TOL, MAX_NM_ITER);
        // A second pass from the optimum guards against premature collapse.
        let run2 = nelder_mead(|x| problem.objective(x), &run.x, 0.01, STEP_TOL, MAX_NM_ITER);
        let pick = if run2.f <= run.f { run2 } else { run };
        if pick.converged {
            converged += 1;
        }
        if best.as_ref().is_none_or(|(_, f)| pick.f < *f) {
            best = Some((pick.x, pick.f));
        }
    }

    let (x, _) = best.expect("at least one start");
    let e = problem
        .evaluate(&x)
        .ok_or_else(|| Error::Infeasible("span search found no feasible beam pair".into()))?;
    Ok(SpanSearchResult {
        dir_s: frame.lift(e.u_s[0], e.u_s[1]),
        dir_b: frame.lift(e.u_b[0], e.u_b[1]),
        p_s: e.p_s,
        p_b: e.p_b,
        converged_starts: converged,
    })
}

/// Outcome of one Nelder-Mead run.
#[derive(Debug, Clone)]
pub struct Descent {
    pub x: Vec<f64>,
    pub f: f64,
    pub converged: bool,
}

/// Derivative-free simplex descent. Stops when every vertex lies within
/// `tol` of the best one (max-norm) or after `max_iter` iterations.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], step: f64, tol: f64, max_iter: usize) -> Descent {
    let n = x0.len();
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += step;
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| f(p)).collect();
    let mut converged = false;

    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let spread = pts[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread <= tol {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| pts[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&pts[n]).map(|(c, w)| c + t * (w - c)).collect() };

        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
        } else {
            let (xc, fc) = if fr < vals[n] {
                let xc = along(-0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            if fc < vals[n].min(fr) {
                pts[n] = xc;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    let shrunk: Vec<f64> = pts[i].iter().zip(&pts[0]).map(|(p, b)| b + 0.5 * (p - b)).collect();
                    vals[i] = f(&shrunk);
                    pts[i] = shrunk;
                }
            }
        }
    }

    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    Descent {
        x: pts[best].clone(),
        f: vals[best],
        converged,
    }
}

/// NOMA-period power of one cluster with closed-form beams at bandwidth `b`,
/// evaluated in span coordinates.
fn cluster_power(frame: &SpanFrame, gamma_s0: f64, r0: f64, n0: f64, b: f64) -> f64 {
    let gb0 = 2f64.powf(r0 / b) - 1.0;
    let noise = n0 * b;
    let g_b = frame.gain_b();
    let (zeta, kappa) = match frame.e2 {
        None => (frame.sigma * frame.sigma, g_b),
        Some(_) => {
            // v = (g_b I + gb0 beta beta^H)^{-1} (sigma, 0) via the explicit 2x2 inverse.
            let (b1, b2) = (frame.beta1, frame.beta2);
            let m11 = g_b + gb0 * b1.norm_sqr();
            let m22 = g_b + gb0 * b2.norm_sqr();
            let m12 = b1 * b2.conj() * gb0;
            let det = m11 * m22 - m12.norm_sqr();
            let v1 = Complex64::new(m22 * frame.sigma / det, 0.0);
            let v2 = -m12.conj() * frame.sigma / det;
            let vv = v1.norm_sqr() + v2.norm_sqr();
            let zeta = (frame.sigma * v1).norm_sqr() / vv;
            let kappa = (b1.conj() * v1 + b2.conj() * v2).norm_sqr() / vv;
            (zeta, kappa)
        }
    };
    gamma_s0 * noise / zeta + gb0 * noise * (gamma_s0 * kappa / zeta + 1.0) / g_b
}

fn exclusive_power(g_b: f64, r0: f64, n0: f64, b: f64) -> f64 {
    n0 * b * (2f64.powf(r0 / b) - 1.0) / g_b
}

/// Best lattice point found by a grid oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct GridOptimum {
    pub bandwidths: Vec<f64>,
    pub power_w: f64,
    /// Lattice spacing in Hz.
    pub spacing_hz: f64,
    /// Sum over clusters of the largest power change to a neighbouring lattice
    /// value at the optimum; a bound on how much finer grids can still gain.
    pub gap_bound_w: f64,
    /// True when the best point uses (to within one cell) the whole budget.
    pub cap_binding: bool,
}

/// Exhaustive search over the per-axis lattice `b_i = offset + j * h` with
/// `sum j == total` (when `tight`) or `sum j <= total`.
fn lattice_min(tables: &[Vec<f64>], total: usize, tight: bool) -> (Vec<usize>, f64) {
    let m = tables.len();
    // Prefix minima of the last table for the slack case.
    let last = &tables[m - 1];
    let mut pref = Vec::with_capacity(last.len());
    let mut best = (0usize, f64::INFINITY);
    for (j, &v) in last.iter().enumerate() {
        if v < best.1 {
            best = (j, v);
        }
        pref.push(best);
    }
    let tail = |rest: usize| -> Option<(usize, f64)> {
        if rest >= last.len() {
            return None;
        }
        if tight {
            Some((rest, last[rest]))
        } else {
            Some(pref[rest])
        }
    };

    let mut winner = (vec![0; m], f64::INFINITY);
    match m {
        1 => {
            if let Some((j, v)) = tail(total) {
                winner = (vec![j], v);
            }
        }
        2 => {
            for (j1, &v1) in tables[0].iter().enumerate().take(total + 1) {
                if let Some((j2, v)) = tail(total - j1) {
                    let s = v1 + v;
                    if s < winner.1 {
                        winner = (vec![j1, j2], s);
                    }
                }
            }
        }
        3 => {
            for (j1, &v1) in tables[0].iter().enumerate().take(total + 1) {
                for (j2, &v2) in tables[1].iter().enumerate().take(total - j1 + 1) {
                    if let Some((j3, v)) = tail(total - j1 - j2) {
                        let s = v1 + v2 + v;
                        if s < winner.1 {
                            winner = (vec![j1, j2, j3], s);
                        }
                    }
                }
            }
        }
        _ => unreachable!("dimension checked by caller"),
    }
    winner
}

fn neighbour_gap(tables: &[Vec<f64>], idx: &[usize]) -> f64 {
    tables
        .iter()
        .zip(idx)
        .map(|(t, &j)| {
            let here = t[j];
            let lo = j.checked_sub(1).map_or(0.0, |k| (t[k] - here).abs());
            let hi = t.get(j + 1).map_or(0.0, |v| (v - here).abs());
            lo.max(hi)
        })
        .sum()
}

/// Exhaustive NOMA-period bandwidth search over `{b_i >= b_min, sum b_i <= b0}`
/// with `grid_points` lattice values per axis, the beams recomputed at every
/// lattice value. Supports up to three clusters.
pub fn grid_bandwidth_oracle(
    channels: &[ClusterChannels],
    gamma_s0: f64,
    r0: f64,
    n0: f64,
    b0: f64,
    b_min: f64,
    grid_points: usize,
) -> Result<GridOptimum> {
    let m = channels.len();
    if m == 0 || m > 3 {
        return Err(Error::UnsupportedDimension(m));
    }
    if grid_points < 2 {
        return Err(Error::InvalidArgument("grid needs at least 2 points per axis".into()));
    }
    let free = b0 - m as f64 * b_min;
    if free < -1e-12 * b0 {
        return Err(Error::InfeasibleBandwidth {
            required: m as f64 * b_min,
            available: b0,
        });
    }
    let free = free.max(0.0);
    let h = free / (grid_points - 1) as f64;
    let axis: Vec<f64> = (0..grid_points).map(|j| b_min + j as f64 * h).collect();
    let tables: Vec<Vec<f64>> = channels
        .iter()
        .map(|ch| {
            let frame = SpanFrame::new(ch.h_s.as_slice(), ch.h_b.as_slice());
            axis.iter()
                .map(|&b| cluster_power(&frame, gamma_s0, r0, n0, b))
                .collect()
        })
        .collect();
    let (idx, power) = lattice_min(&tables, grid_points - 1, false);
    let used: usize = idx.iter().sum();
    Ok(GridOptimum {
        bandwidths: idx.iter().map(|&j| axis[j]).collect(),
        power_w: power,
        spacing_hz: h,
        gap_bound_w: neighbour_gap(&tables, &idx),
        cap_binding: used + m > grid_points - 1,
    })
}

/// Exhaustive exclusive-period search over `{b_i > 0, sum b_i = b0}` on a lattice of
/// spacing `b0 / grid_points`.
pub fn grid_exclusive_oracle(
    channels: &[ClusterChannels],
    r0: f64,
    n0: f64,
    b0: f64,
    grid_points: usize,
) -> Result<GridOptimum> {
    let m = channels.len();
    if m == 0 || m > 3 {
        return Err(Error::UnsupportedDimension(m));
    }
    if grid_points < m {
        return Err(Error::InvalidArgument("grid coarser than the cluster count".into()));
    }
    let h = b0 / grid_points as f64;
    // Lattice index j stands for bandwidth (j + 1) h so every entry is positive.
    let tables: Vec<Vec<f64>> = channels
        .iter()
        .map(|ch| {
            let g = sq_norm(ch.h_b.as_slice());
            (0..grid_points)
                .map(|j| exclusive_power(g, r0, n0, (j + 1) as f64 * h))
                .collect()
        })
        .collect();
    let (idx, power) = lattice_min(&tables, grid_points - m, true);
    Ok(GridOptimum {
        bandwidths: idx.iter().map(|&j| (j + 1) as f64 * h).collect(),
        power_w: power,
        spacing_hz: h,
        gap_bound_w: neighbour_gap(&tables, &idx),
        cap_binding: true,
    })
}

/// Result of the scalar end-to-end recomputation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarPipeline {
    pub k_opt: u32,
    pub avg_power_w: f64,
    pub per_k: Vec<(u32, f64)>,
}

/// Golden-section minimum of a unimodal function on `[lo, hi]`.
fn golden_min<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..300 {
        if hi - lo <= 1e-15 * hi.abs() {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    let mut cands = [(lo, f(lo)), (hi, f(hi)), (x1, f1), (x2, f2)];
    cands.sort_by(|a, b| a.1.total_cmp(&b.1));
    cands[0]
}

/// Joint pipeline for `m` identical clusters whose two channels share one
/// direction with gains `gain_s` and `gain_b`, computed with scalar formulas only.
pub fn scalar_pipeline_oracle(
    gain_s: f64,
    gain_b: f64,
    m: usize,
    targets: &Targets,
    sys: &SystemParams,
    registry: &SemanticPerfModel,
) -> Result<ScalarPipeline> {
    let mf = m as f64;
    let n0 = sys.n0_w_per_hz;
    let r0 = targets.r0;
    let mut per_k = Vec::new();
    for k in registry.keys() {
        let prm = registry.params(k)?;
        let floor = k as f64 * targets.s0;
        if mf * floor > sys.b0_hz * (1.0 + 1e-12) || targets.eps0 >= prm.a_k {
            continue;
        }
        let x_db = prm.x0_k - (prm.a_k / targets.eps0 - 1.0).ln() / prm.l_k;
        let gs0 = 10f64.powf(x_db / 10.0);
        let noma = |b: f64| {
            let gb0 = 2f64.powf(r0 / b) - 1.0;
            let sic = (gs0 / gain_s + 1.0 / gain_b).max((gs0 + 1.0) / gain_s);
            gs0 * n0 * b / gain_s + gb0 * n0 * b * sic
        };
        let cap = (sys.b0_hz / mf).max(floor);
        let (_, p_cluster) = golden_min(noma, floor, cap);
        let p_no = mf * p_cluster;
        let p_ex = mf * exclusive_power(gain_b, r0, n0, sys.b0_hz / mf);
        let l_no = sys.n_w as f64 * k as f64;
        let l_ex = (sys.bits_per_char * sys.n_w as f64 * sys.n_c / sys.bits_per_symbol - 1e-9).ceil();
        per_k.push((k, (l_no * p_no + l_ex * p_ex) / (l_no + l_ex)));
    }
    let &(k_opt, avg_power_w) = per_k
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or(Error::NoFeasibleK)?;
    Ok(ScalarPipeline {
        k_opt,
        avg_power_w,
        per_k,
    })
}
