//! Per-cluster beamforming for the NOMA and exclusive periods.
//!
//! In the NOMA period the S-user first decodes (and cancels) the B-user's
//! signal, so a cluster must satisfy three constraints:
//!
//! * S-user SNR after SIC:        `p_s |h_s^H u_s|^2 >= gamma_s0 N`
//! * B-user signal at the S-user: `p_b |h_s^H u_b|^2 >= gamma_b0 (p_s |h_s^H u_s|^2 + N)`
//! * B-user SINR at the B-user:   `p_b |h_b^H u_b|^2 >= gamma_b0 (p_s |h_b^H u_s|^2 + N)`
//!
//! When the middle constraint is inactive at the optimum (quasi-degraded
//! channels) the optimum is `u_s ~ A^{-1} h_s`, `u_b = h_b / ||h_b||` with
//! `A = ||h_b||^2 I + gamma_b0 h_b h_b^H`, and both outer constraints tight.
//! Other clusters are handed to the span-restricted search in [`crate::oracle`].

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::channel::{ClusterChannels, QD_REL_TOL};
use crate::error::{Error, Result};
use crate::linalg::{self, CVector};
use crate::oracle;

/// Principal-angle sine below which two channels are treated as collinear.
pub const COLLINEAR_SIN_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinrTargets {
    pub gamma_s0: f64,
    pub gamma_b0: f64,
    pub noise_w: f64,
}

impl SinrTargets {
    pub fn new(gamma_s0: f64, gamma_b0: f64, noise_w: f64) -> Result<Self> {
        let t = Self {
            gamma_s0,
            gamma_b0,
            noise_w,
        };
        t.validate()?;
        Ok(t)
    }

    /// Thresholds for a cluster with bandwidth `bandwidth_hz`.
    pub fn for_bandwidth(gamma_s0: f64, r0: f64, bandwidth_hz: f64, n0: f64) -> Result<Self> {
        Self::new(gamma_s0, rate_threshold(r0, bandwidth_hz), bandwidth_hz * n0)
    }

    fn validate(&self) -> Result<()> {
        // gamma_b0 = 0 is allowed: it models a B-user without demand.
        if !(self.gamma_s0 > 0.0 && self.gamma_b0 >= 0.0 && self.noise_w > 0.0)
            || !(self.gamma_s0.is_finite() && self.gamma_b0.is_finite() && self.noise_w.is_finite())
        {
            return Err(Error::InvalidArgument(format!("invalid SINR targets {self:?}")));
        }
        Ok(())
    }
}

/// SINR needed to carry `r0` bit/s over `bandwidth_hz`: `2^(r0/B) - 1`.
pub fn rate_threshold(r0: f64, bandwidth_hz: f64) -> f64 {
    (r0 / bandwidth_hz * std::f64::consts::LN_2).exp_m1()
}

/// NOMA-period beams and powers of one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamSolution {
    pub dir_s: CVector,
    pub dir_b: CVector,
    pub p_s: f64,
    pub p_b: f64,
    pub achieved_snr_s: f64,
    pub achieved_sinr_b_at_s: f64,
    pub achieved_sinr_b: f64,
}

impl BeamSolution {
    /// Builds a solution from unit directions and powers, evaluating its SINRs.
    pub fn from_beams(ch: &ClusterChannels, dir_s: CVector, dir_b: CVector, p_s: f64, p_b: f64, noise_w: f64) -> Self {
        let mut sol = Self {
            dir_s,
            dir_b,
            p_s,
            p_b,
            achieved_snr_s: 0.0,
            achieved_sinr_b_at_s: 0.0,
            achieved_sinr_b: 0.0,
        };
        let (b_at_s, s, b) = sinr_noma(ch, &sol, noise_w);
        sol.achieved_sinr_b_at_s = b_at_s;
        sol.achieved_snr_s = s;
        sol.achieved_sinr_b = b;
        sol
    }

    pub fn total_power(&self) -> f64 {
        self.p_s + self.p_b
    }

    pub fn w_s(&self) -> CVector {
        self.dir_s.scale_re(self.p_s.sqrt())
    }

    pub fn w_b(&self) -> CVector {
        self.dir_b.scale_re(self.p_b.sqrt())
    }
}

/// Exclusive-period beam of one B-user.
#[derive(Debug, Clone, PartialEq)]
pub struct ExclusiveBeam {
    pub dir_b: CVector,
    pub p_b: f64,
}

/// How a cluster's NOMA beams were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BeamRoute {
    ClosedForm,
    Collinear,
    Oracle,
}

/// `(SINR of the B-signal at the S-user, S-user SNR after SIC, B-user SINR)`.
pub fn sinr_noma(ch: &ClusterChannels, sol: &BeamSolution, noise_w: f64) -> (f64, f64, f64) {
    let ss = sol.p_s * ch.h_s.gain(&sol.dir_s);
    let sb = sol.p_b * ch.h_s.gain(&sol.dir_b);
    let bs = sol.p_s * ch.h_b.gain(&sol.dir_s);
    let bb = sol.p_b * ch.h_b.gain(&sol.dir_b);
    (sb / (ss + noise_w), ss / noise_w, bb / (bs + noise_w))
}

/// B-user rate in the NOMA period: limited by the weaker of its two decode points.
pub fn rate_b_noma(ch: &ClusterChannels, sol: &BeamSolution, bandwidth_hz: f64, n0: f64) -> f64 {
    let (b_at_s, _, b) = sinr_noma(ch, sol, bandwidth_hz * n0);
    bandwidth_hz * b_at_s.min(b).ln_1p() / std::f64::consts::LN_2
}

/// `A^{-1} h_s` for `A = ||h_b||^2 I + gamma_b0 h_b h_b^H`, via Sherman-Morrison in O(N).
pub fn a_inverse_h(h_s: &CVector, h_b: &CVector, gamma_b0: f64) -> CVector {
    let g = h_b.norm_sqr();
    let coef = -(gamma_b0 / (1.0 + gamma_b0)) * h_b.dot(h_s) / g;
    h_s.axpy(coef, h_b).scale_re(1.0 / g)
}

/// `A^{-1} h_s` by forming `A` and running a dense LU solve.
pub fn a_inverse_h_direct(h_s: &CVector, h_b: &CVector, gamma_b0: f64) -> Result<CVector> {
    let n = h_s.len();
    let g = h_b.norm_sqr();
    let a = DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { g } else { 0.0 };
        Complex64::new(diag, 0.0) + h_b[i] * h_b[j].conj() * gamma_b0
    });
    let rhs = DVector::from_iterator(n, h_s.iter().copied());
    let x = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidArgument("singular A matrix".into()))?;
    Ok(x.iter().copied().collect::<Vec<_>>().into())
}

/// Closed-form beams ignoring the SIC-decodability constraint.
pub fn closed_form_candidate(ch: &ClusterChannels, gamma_s0: f64, gamma_b0: f64, noise_w: f64) -> BeamSolution {
    let g_b = ch.gain_b();
    let dir_s = a_inverse_h(&ch.h_s, &ch.h_b, gamma_b0)
        .normalized()
        .unwrap_or_else(|| ch.h_s.scale_re(1.0 / ch.h_s.norm()));
    let dir_b = ch.h_b.scale_re(1.0 / g_b.sqrt());
    let zeta = ch.h_s.gain(&dir_s);
    let kappa = ch.h_b.gain(&dir_s);
    let p_s = gamma_s0 * noise_w / zeta;
    let p_b = gamma_b0 * gamma_s0 * noise_w * kappa / (zeta * g_b) + gamma_b0 * noise_w / g_b;
    BeamSolution::from_beams(ch, dir_s, dir_b, p_s, p_b, noise_w)
}

fn check_channels(ch: &ClusterChannels) -> Result<()> {
    let (gs, gb) = (ch.gain_s(), ch.gain_b());
    if !(gs > 0.0 && gb > 0.0 && gs.is_finite() && gb.is_finite()) {
        return Err(Error::InvalidArgument("zero or non-finite channel".into()));
    }
    Ok(())
}

/// Exact optimum when `h_b` is a scalar multiple of `h_s`: both beams point
/// along the common direction and only the powers remain.
fn collinear_solution(ch: &ClusterChannels, t: &SinrTargets) -> BeamSolution {
    let (g_s, g_b) = (ch.gain_s(), ch.gain_b());
    let n = t.noise_w;
    let dir_s = ch.h_s.scale_re(1.0 / g_s.sqrt());
    let dir_b = ch.h_b.scale_re(1.0 / g_b.sqrt());
    let p_s = t.gamma_s0 * n / g_s;
    let at_b = t.gamma_b0 * n * (t.gamma_s0 / g_s + 1.0 / g_b);
    let at_s = t.gamma_b0 * n * (t.gamma_s0 + 1.0) / g_s;
    BeamSolution::from_beams(ch, dir_s, dir_b, p_s, at_b.max(at_s), n)
}

pub fn is_collinear(ch: &ClusterChannels) -> bool {
    linalg::principal_angle_sin(&ch.h_s, &ch.h_b) < COLLINEAR_SIN_TOL
}

/// Closed-form optimal NOMA beams.
///
/// Collinear channels use the scalar formulas, which are exact for either
/// decoding outcome. Otherwise fails with [`Error::NotQuasiDegraded`] when the
/// closed form violates the SIC-decodability constraint.
pub fn solve_noma_beams(ch: &ClusterChannels, t: &SinrTargets) -> Result<BeamSolution> {
    check_channels(ch)?;
    t.validate()?;
    if is_collinear(ch) {
        return Ok(collinear_solution(ch, t));
    }
    let sol = closed_form_candidate(ch, t.gamma_s0, t.gamma_b0, t.noise_w);
    let lhs = sol.p_b * ch.h_s.gain(&sol.dir_b);
    let rhs = t.gamma_b0 * (sol.p_s * ch.h_s.gain(&sol.dir_s) + t.noise_w);
    if lhs >= rhs * (1.0 - QD_REL_TOL) {
        Ok(sol)
    } else {
        Err(Error::NotQuasiDegraded)
    }
}

/// Numerical optimum over beams restricted to `span{h_s, h_b}`.
pub fn oracle_solve(ch: &ClusterChannels, t: &SinrTargets) -> Result<BeamSolution> {
    check_channels(ch)?;
    t.validate()?;
    let found = oracle::span_search(ch, t.gamma_s0, t.gamma_b0, t.noise_w, oracle::DEFAULT_STARTS)?;
    Ok(BeamSolution::from_beams(
        ch,
        found.dir_s,
        found.dir_b,
        found.p_s,
        found.p_b,
        t.noise_w,
    ))
}

/// Closed form where it applies, span-restricted search otherwise.
pub fn solve_cluster(ch: &ClusterChannels, t: &SinrTargets) -> Result<(BeamSolution, BeamRoute)> {
    match solve_noma_beams(ch, t) {
        Ok(sol) if is_collinear(ch) => Ok((sol, BeamRoute::Collinear)),
        Ok(sol) => Ok((sol, BeamRoute::ClosedForm)),
        Err(Error::NotQuasiDegraded) => Ok((oracle_solve(ch, t)?, BeamRoute::Oracle)),
        Err(e) => Err(e),
    }
}

/// Matched-filter beam meeting `gamma_b0_ex` with equality.
pub fn solve_exclusive_beam(ch: &ClusterChannels, gamma_b0_ex: f64, noise_w: f64) -> Result<ExclusiveBeam> {
    let g = ch.gain_b();
    if !(g > 0.0 && g.is_finite()) {
        return Err(Error::InvalidArgument("zero B-user channel".into()));
    }
    Ok(ExclusiveBeam {
        dir_b: ch.h_b.scale_re(1.0 / g.sqrt()),
        p_b: noise_w * gamma_b0_ex / g,
    })
}

/// Exclusive-period SNR achieved by `beam`.
pub fn snr_exclusive(ch: &ClusterChannels, beam: &ExclusiveBeam, noise_w: f64) -> f64 {
    beam.p_b * ch.h_b.gain(&beam.dir_b) / noise_w
}

/// Post-hoc KKT audit of a NOMA-period solution with the SIC multiplier fixed at zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktReport {
    /// Relative slack of the S-user SNR constraint (0 when tight).
    pub slack_snr_s: f64,
    /// Relative slack of the SIC-decodability constraint (>= 0 when satisfied).
    pub slack_sic: f64,
    /// Relative slack of the B-user SINR constraint (0 when tight).
    pub slack_sinr_b: f64,
    pub snr_s_tight: bool,
    pub sinr_b_tight: bool,
    pub sic_satisfied: bool,
    pub lambda1: f64,
    pub lambda3: f64,
    /// Largest residual of the two stationarity conditions (relative to the beam norm).
    pub stationarity_residual: f64,
    /// Smallest eigenvalue of the dual matrix paired with the S-beam.
    pub dual_min_eig_s: f64,
    /// Smallest eigenvalue of the dual matrix paired with the B-beam.
    pub dual_min_eig_b: f64,
}

impl KktReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.snr_s_tight
            && self.sinr_b_tight
            && self.sic_satisfied
            && self.lambda1 >= -tol
            && self.lambda3 >= -tol
            && self.stationarity_residual < tol.max(1e-9)
            && self.dual_min_eig_s >= -tol
            && self.dual_min_eig_b >= -tol
    }
}

/// Tolerance used for the tightness flags.
pub const KKT_TIGHT_TOL: f64 = 1e-9;

pub fn verify_kkt(ch: &ClusterChannels, t: &SinrTargets, sol: &BeamSolution) -> KktReport {
    let n = t.noise_w;
    let (gs0, gb0) = (t.gamma_s0, t.gamma_b0);
    let a_ss = ch.h_s.gain(&sol.dir_s);
    let a_sb = ch.h_s.gain(&sol.dir_b);
    let a_bs = ch.h_b.gain(&sol.dir_s);
    let a_bb = ch.h_b.gain(&sol.dir_b);

    let need_s = gs0 * n;
    let slack_snr_s = (sol.p_s * a_ss - need_s) / need_s;
    let need_sic = gb0 * (sol.p_s * a_ss + n);
    let slack_sic = if need_sic > 0.0 {
        (sol.p_b * a_sb - need_sic) / need_sic
    } else {
        0.0
    };
    let need_b = gb0 * (sol.p_s * a_bs + n);
    let slack_sinr_b = if need_b > 0.0 {
        (sol.p_b * a_bb - need_b) / need_b
    } else {
        sol.p_b
    };

    // With the SIC multiplier at zero, stationarity in the B-beam reads
    // u_b = lambda3 h_b h_b^H u_b and in the S-beam
    // (I + lambda3 gamma_b0 h_b h_b^H) u_s = lambda1 h_s h_s^H u_s.
    let lambda3 = 1.0 / a_bb;
    let lambda1 = (1.0 + lambda3 * gb0 * a_bs) / a_ss;

    let hb_us = ch.h_b.dot(&sol.dir_s);
    let hs_us = ch.h_s.dot(&sol.dir_s);
    let r_s = sol
        .dir_s
        .axpy(Complex64::from(lambda3 * gb0) * hb_us, &ch.h_b)
        .axpy(-Complex64::from(lambda1) * hs_us, &ch.h_s);
    let hb_ub = ch.h_b.dot(&sol.dir_b);
    let r_b = sol.dir_b.axpy(-Complex64::from(lambda3) * hb_ub, &ch.h_b);
    let stationarity_residual = r_s.norm().max(r_b.norm());

    let dual_min_eig_s = dual_min_eig(ch, lambda3 * gb0, lambda1);
    let dual_min_eig_b = dual_min_eig(ch, -lambda3, 0.0);

    KktReport {
        slack_snr_s,
        slack_sic,
        slack_sinr_b,
        snr_s_tight: slack_snr_s.abs() <= KKT_TIGHT_TOL,
        sinr_b_tight: slack_sinr_b.abs() <= KKT_TIGHT_TOL,
        sic_satisfied: slack_sic >= -KKT_TIGHT_TOL,
        lambda1,
        lambda3,
        stationarity_residual,
        dual_min_eig_s,
        dual_min_eig_b,
    }
}

/// Smallest eigenvalue of `I + c_b h_b h_b^H - c_s h_s h_s^H`.
fn dual_min_eig(ch: &ClusterChannels, c_b: f64, c_s: f64) -> f64 {
    let (e1, e2) = linalg::span_basis(&ch.h_s, &ch.h_b, COLLINEAR_SIN_TOL);
    let proj = |e: &CVector| (e.dot(&ch.h_s), e.dot(&ch.h_b));
    let (s1, b1) = proj(&e1);
    let m11 = 1.0 + c_b * b1.norm_sqr() - c_s * s1.norm_sqr();
    let Some(e2) = e2 else {
        // One-dimensional span; any complement contributes eigenvalue 1.
        return if ch.num_antennas() > 1 { m11.min(1.0) } else { m11 };
    };
    let (s2, b2) = proj(&e2);
    let m22 = 1.0 + c_b * b2.norm_sqr() - c_s * s2.norm_sqr();
    let m12 = b1 * b2.conj() * c_b - s1 * s2.conj() * c_s;
    let mean = 0.5 * (m11 + m22);
    let rad = (0.25 * (m11 - m22).powi(2) + m12.norm_sqr()).sqrt();
    let min2 = mean - rad;
    if ch.num_antennas() > 2 {
        min2.min(1.0)
    } else {
        min2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{draw_cluster, RicianConfig};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    fn random_cluster(n: usize, trial: u64, d_s: f64, d_b: f64) -> ClusterChannels {
        let cfg = RicianConfig::new(1.0, 0.8, n, 99).unwrap();
        draw_cluster(&cfg, d_s, d_b, trial, 0).unwrap()
    }

    /// Finds a quasi-degraded draw by scanning trials.
    fn qd_cluster(n: usize, start: u64, t: &SinrTargets) -> ClusterChannels {
        (start..start + 10_000)
            .map(|tr| random_cluster(n, tr, 20.0, 180.0))
            .find(|ch| {
                !is_collinear(ch)
                    && crate::channel::classify_quasi_degraded(ch, t.gamma_s0, t.gamma_b0, t.noise_w).unwrap()
            })
            .expect("no quasi-degraded draw found")
    }

    #[test]
    fn zero_power_gives_zero_sinr() {
        let ch = random_cluster(3, 0, 50.0, 50.0);
        let sol = BeamSolution::from_beams(
            &ch,
            ch.h_s.normalized().unwrap(),
            ch.h_b.normalized().unwrap(),
            0.0,
            0.0,
            1e-12,
        );
        assert_eq!(sinr_noma(&ch, &sol, 1e-12), (0.0, 0.0, 0.0));
        assert_eq!(rate_b_noma(&ch, &sol, 1e6, 1e-17), 0.0);
    }

    #[test]
    fn orthogonal_beam_removes_interference() {
        let hs = CVector::new(vec![c(2.0, 0.0), c(0.0, 0.0)]);
        let hb = CVector::new(vec![c(0.0, 0.0), c(1.0, 1.0)]);
        let ch = ClusterChannels::new(hs.clone(), hb).unwrap();
        let noise = 0.5;
        let sol = BeamSolution::from_beams(
            &ch,
            hs.normalized().unwrap(),
            CVector::new(vec![c(0.0, 0.0), c(1.0, 0.0)]),
            3.0,
            7.0,
            noise,
        );
        let (b_at_s, s, _) = sinr_noma(&ch, &sol, noise);
        assert!((s - 3.0 * 4.0 / noise).abs() < 1e-12);
        assert_eq!(b_at_s, 0.0);
    }

    #[test]
    fn sinr_matches_direct_recomputation() {
        let ch = random_cluster(4, 3, 60.0, 90.0);
        let us = CVector::new(vec![c(0.5, 0.0), c(0.5, 0.1), c(0.0, 0.5), c(0.1, -0.4)])
            .normalized()
            .unwrap();
        let ub = ch.h_b.normalized().unwrap();
        let noise = 2e-12;
        let a = ch.h_s.gain(&ub);
        let b = ch.h_s.gain(&us);
        for scale in [0.5, 1.0, 3.0] {
            let (ps, pb) = (scale * 1e-10, scale * 4e-10);
            let sol = BeamSolution::from_beams(&ch, us.clone(), ub.clone(), ps, pb, noise);
            let expected = pb * a / (ps * b + noise);
            assert!(rel(sol.achieved_sinr_b_at_s, expected) < 1e-12);
        }
    }

    #[test]
    fn rate_uses_weaker_decode_point() {
        let h = CVector::new(vec![c(1.0, 0.0)]);
        let ch = ClusterChannels::new(h.clone(), h.clone()).unwrap();
        // Both SINRs equal 1 with p_s = 0 and p_b = noise.
        let n0 = 1e-17;
        let bw = 1e6;
        let sol = BeamSolution::from_beams(&ch, h.clone(), h.clone(), 0.0, bw * n0, bw * n0);
        assert!(rel(rate_b_noma(&ch, &sol, bw, n0), 1e6) < 1e-12);

        let hb = CVector::new(vec![c(2.0, 0.0)]);
        let ch = ClusterChannels::new(h.clone(), hb).unwrap();
        let sol = BeamSolution::from_beams(&ch, h.clone(), h.clone(), 0.0, bw * n0, bw * n0);
        assert!(sol.achieved_sinr_b_at_s < sol.achieved_sinr_b);
        let expected = bw * (1.0 + sol.achieved_sinr_b_at_s).log2();
        assert!(rel(rate_b_noma(&ch, &sol, bw, n0), expected) < 1e-12);
    }

    #[test]
    fn identical_channels_give_scalar_noma_powers() {
        let h = random_cluster(4, 5, 80.0, 80.0).h_s;
        let g = h.norm_sqr();
        let ch = ClusterChannels::new(h.clone(), h).unwrap();
        let t = SinrTargets::new(1.8, 15.0, 2.5e-12).unwrap();
        let sol = solve_noma_beams(&ch, &t).unwrap();
        assert!(rel(sol.p_s, 1.8 * 2.5e-12 / g) < 1e-12);
        assert!(rel(sol.p_b, 15.0 * 2.5e-12 * 2.8 / g) < 1e-12);
    }

    #[test]
    fn zero_bit_demand_reduces_to_matched_filter() {
        let ch = random_cluster(4, 8, 60.0, 100.0);
        let t = SinrTargets::new(2.0, 0.0, 1e-12).unwrap();
        let sol = solve_noma_beams(&ch, &t).unwrap();
        let mf = ch.h_s.normalized().unwrap();
        assert!((sol.dir_s.dot(&mf).norm() - 1.0).abs() < 1e-12);
        assert_eq!(sol.p_b, 0.0);
    }

    #[test]
    fn closed_form_constraints_are_tight() {
        let t = SinrTargets::new(1.79, 15.0, 2.5e-12).unwrap();
        for start in [0, 1000, 2000] {
            let ch = qd_cluster(4, start, &t);
            let sol = solve_noma_beams(&ch, &t).unwrap();
            assert!(rel(sol.achieved_snr_s, t.gamma_s0) < 1e-9);
            assert!(rel(sol.achieved_sinr_b, t.gamma_b0) < 1e-9);
            assert!(sol.achieved_sinr_b_at_s >= t.gamma_b0 * (1.0 - 1e-9));
            assert!((sol.dir_s.norm() - 1.0).abs() < 1e-12);
            assert!((sol.dir_b.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn non_quasi_degraded_is_reported() {
        let hs = CVector::new(vec![c(1.0, 0.0), c(0.0, 0.0)]);
        let hb = CVector::new(vec![c(0.0, 0.0), c(1.0, 0.0)]);
        let ch = ClusterChannels::new(hs, hb).unwrap();
        let t = SinrTargets::new(1.0, 1.0, 1.0).unwrap();
        assert!(matches!(solve_noma_beams(&ch, &t), Err(Error::NotQuasiDegraded)));
        let (sol, route) = solve_cluster(&ch, &t).unwrap();
        assert_eq!(route, BeamRoute::Oracle);
        // The SIC constraint forces part of the B-beam onto h_s.
        assert!(ch.h_s.gain(&sol.dir_b) > 0.1);
        assert!(sol.achieved_sinr_b_at_s >= 1.0 - 1e-9);
        assert!(sol.achieved_sinr_b >= 1.0 - 1e-9);
        assert!(sol.achieved_snr_s >= 1.0 - 1e-9);
    }

    #[test]
    fn collinear_weak_s_user_uses_sic_bound() {
        let hs = CVector::new(vec![c(0.5, 0.0), c(0.0, 0.5)]);
        let hb = hs.scale(c(0.0, 2.0));
        let ch = ClusterChannels::new(hs, hb).unwrap();
        let t = SinrTargets::new(2.0, 3.0, 1.0).unwrap();
        let (sol, route) = solve_cluster(&ch, &t).unwrap();
        assert_eq!(route, BeamRoute::Collinear);
        // g_s = 0.5 < g_b = 2: the SIC constraint binds.
        assert!(rel(sol.p_b, 3.0 * 3.0 / 0.5) < 1e-12);
        assert!(rel(sol.achieved_sinr_b_at_s, 3.0) < 1e-12);
    }

    #[test]
    fn zero_channel_is_rejected() {
        let ch = ClusterChannels {
            h_s: CVector::zeros(2),
            h_b: CVector::new(vec![c(1.0, 0.0), c(0.0, 0.0)]),
            d_s: None,
            d_b: None,
            quasi_degraded: None,
        };
        let t = SinrTargets::new(1.0, 1.0, 1.0).unwrap();
        assert!(matches!(solve_noma_beams(&ch, &t), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            solve_exclusive_beam(
                &ClusterChannels {
                    h_b: CVector::zeros(2),
                    ..ch.clone()
                },
                1.0,
                1.0
            ),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn exclusive_beam_examples() {
        let h = CVector::new(vec![c(1.0, 0.0)]);
        let ch = ClusterChannels::new(h.clone(), h.clone()).unwrap();
        let beam = solve_exclusive_beam(&ch, 1.0, 1e-11).unwrap();
        assert!(rel(beam.p_b, 1e-11) < 1e-15);
        assert!(rel(snr_exclusive(&ch, &beam, 1e-11), 1.0) < 1e-12);

        let h2 = h.scale_re(2f64.sqrt());
        let ch2 = ClusterChannels::new(h.clone(), h2).unwrap();
        let beam2 = solve_exclusive_beam(&ch2, 1.0, 1e-11).unwrap();
        assert!(rel(beam2.p_b, 0.5e-11) < 1e-12);

        assert!((rate_threshold(1e6, 1e6) - 1.0).abs() < 1e-15);
        assert!((rate_threshold(3e6, 1e6) - 7.0).abs() < 1e-14);
    }

    #[test]
    fn kkt_audit_of_closed_form() {
        let t = SinrTargets::new(1.79, 15.0, 2.5e-12).unwrap();
        let ch = qd_cluster(4, 0, &t);
        let sol = solve_noma_beams(&ch, &t).unwrap();
        let rep = verify_kkt(&ch, &t, &sol);
        assert!(rep.holds(1e-9), "{rep:?}");

        let mut bumped = sol.clone();
        bumped.p_s *= 1.01;
        let rep = verify_kkt(&ch, &t, &bumped);
        assert!(!rep.snr_s_tight);
    }

    #[test]
    fn kkt_identical_channels_multipliers_positive() {
        let h = random_cluster(3, 2, 70.0, 70.0).h_s;
        let g = h.norm_sqr();
        let ch = ClusterChannels::new(h.clone(), h).unwrap();
        let t = SinrTargets::new(2.0, 4.0, 1e-12).unwrap();
        let sol = solve_noma_beams(&ch, &t).unwrap();
        let rep = verify_kkt(&ch, &t, &sol);
        // Scalar stationarity: lambda3 = 1/g, lambda1 = (1 + gamma_b0)/g.
        assert!(rel(rep.lambda3, 1.0 / g) < 1e-12);
        assert!(rel(rep.lambda1, 5.0 / g) < 1e-12);
        assert!(rep.holds(1e-9), "{rep:?}");
    }

    #[test]
    fn sherman_morrison_matches_direct_solve() {
        for trial in 0..50 {
            let ch = random_cluster(1 + (trial as usize % 6), trial, 40.0, 120.0);
            let gb0 = 0.1 + trial as f64;
            let sm = a_inverse_h(&ch.h_s, &ch.h_b, gb0);
            let direct = a_inverse_h_direct(&ch.h_s, &ch.h_b, gb0).unwrap();
            let diff = sm.axpy(c(-1.0, 0.0), &direct).norm();
            assert!(diff <= 1e-10 * direct.norm(), "trial {trial}: {diff}");
        }
    }

    #[test]
    fn power_monotone_in_targets() {
        let t0 = SinrTargets::new(1.0, 2.0, 1e-12).unwrap();
        let ch = qd_cluster(4, 500, &t0);
        let mut prev = 0.0;
        for gs in [0.5, 1.0, 2.0, 4.0] {
            let t = SinrTargets::new(gs, 2.0, 1e-12).unwrap();
            let p = solve_cluster(&ch, &t).unwrap().0.total_power();
            assert!(p >= prev * (1.0 - 1e-9));
            prev = p;
        }
        let mut prev = 0.0;
        for gb in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let t = SinrTargets::new(1.0, gb, 1e-12).unwrap();
            let p = solve_cluster(&ch, &t).unwrap().0.total_power();
            assert!(p >= prev * (1.0 - 1e-9));
            prev = p;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn phase_rotation_leaves_powers_unchanged(trial in 0u64..10_000, th_s in 0.0f64..std::f64::consts::TAU, th_b in 0.0f64..std::f64::consts::TAU) {
            let ch = random_cluster(4, trial, 20.0, 180.0);
            let t = SinrTargets::new(1.8, 3.0, 1e-12).unwrap();
            let rot = ClusterChannels::new(
                ch.h_s.scale(Complex64::from_polar(1.0, th_s)),
                ch.h_b.scale(Complex64::from_polar(1.0, th_b)),
            ).unwrap();
            let a = closed_form_candidate(&ch, t.gamma_s0, t.gamma_b0, t.noise_w);
            let b = closed_form_candidate(&rot, t.gamma_s0, t.gamma_b0, t.noise_w);
            prop_assert!(rel(a.p_s, b.p_s) < 1e-10);
            prop_assert!(rel(a.p_b, b.p_b) < 1e-10);
            prop_assert!(rel(a.achieved_sinr_b_at_s, b.achieved_sinr_b_at_s) < 1e-9);
            prop_assert!(rel(a.achieved_sinr_b, b.achieved_sinr_b) < 1e-9);
        }
    }
}
