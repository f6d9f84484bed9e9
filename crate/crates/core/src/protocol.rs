//! Two-period frame accounting and the joint search over the symbol factor K.
//!
//! Each frame carries one file per user. During the NOMA period both users of
//! a cluster are served; the S-user needs `n_w * K` symbols, after which the
//! B-user finishes its longer bit stream alone in the exclusive period.

use serde::{Deserialize, Serialize};

use crate::bandwidth::{
    allocate_exclusive, bcd_allocate, noma_power_of_bandwidth, BandwidthAllocation, BcdOptions, BcdState,
};
use crate::beamforming::{
    rate_b_noma, rate_threshold, sinr_noma, snr_exclusive, solve_cluster, solve_exclusive_beam, BeamRoute,
    BeamSolution, ExclusiveBeam, SinrTargets,
};
use crate::channel::ClusterChannels;
use crate::error::{Error, Result};
use crate::semantic_model::{linear_to_db, word_rate, SemanticPerfModel};

/// File and symbol-factor parameters of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    pub n_w: u32,
    pub n_c: f64,
    pub k: u32,
}

/// How the B-user's file maps to channel symbols.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BitFraming {
    pub bits_per_char: f64,
    pub bits_per_symbol: f64,
}

impl Default for BitFraming {
    fn default() -> Self {
        Self {
            bits_per_char: 8.0,
            bits_per_symbol: 3.0,
        }
    }
}

/// `(L_no, L_ex)` in symbols with the default 8-bit characters over 3-bit symbols.
pub fn period_lengths(p: &ProtocolParams) -> (u64, u64) {
    period_lengths_with(p, &BitFraming::default())
}

pub fn period_lengths_with(p: &ProtocolParams, framing: &BitFraming) -> (u64, u64) {
    let l_no = p.n_w as u64 * p.k as u64;
    let raw = framing.bits_per_char * p.n_w as f64 * p.n_c / framing.bits_per_symbol;
    // Snap values that are integral up to rounding before taking the ceiling.
    let near = raw.round();
    let l_ex = if (raw - near).abs() <= 1e-9 * near.max(1.0) {
        near
    } else {
        raw.ceil()
    };
    (l_no, l_ex as u64)
}

/// Frame-averaged power.
pub fn average_power(p_no: f64, p_ex: f64, l_no: u64, l_ex: u64) -> f64 {
    let (a, b) = (l_no as f64, l_ex as f64);
    (a * p_no + b * p_ex) / (a + b)
}

/// Service targets shared by all clusters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Targets {
    /// BLEU score required at every S-user.
    pub eps0: f64,
    /// Word rate (words/s) required at every S-user.
    pub s0: f64,
    /// Bit rate (bit/s) required at every B-user.
    pub r0: f64,
}

impl Targets {
    pub fn validate(&self) -> Result<()> {
        let ok = self.eps0 > 0.0
            && self.eps0 < 1.0
            && self.s0 > 0.0
            && self.r0 > 0.0
            && self.s0.is_finite()
            && self.r0.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid targets {self:?}")))
        }
    }
}

/// Physical and frame constants of the system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    pub n0_w_per_hz: f64,
    pub b0_hz: f64,
    pub n_w: u32,
    pub n_c: f64,
    pub bits_per_char: f64,
    pub bits_per_symbol: f64,
    pub bcd: BcdOptions,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            n0_w_per_hz: 1e-17,
            b0_hz: 1e6,
            n_w: 100,
            n_c: 5.0,
            bits_per_char: 8.0,
            bits_per_symbol: 3.0,
            bcd: BcdOptions::default(),
        }
    }
}

impl SystemParams {
    pub fn framing(&self) -> BitFraming {
        BitFraming {
            bits_per_char: self.bits_per_char,
            bits_per_symbol: self.bits_per_symbol,
        }
    }

    pub fn lengths(&self, k: u32) -> (u64, u64) {
        period_lengths_with(
            &ProtocolParams {
                n_w: self.n_w,
                n_c: self.n_c,
                k,
            },
            &self.framing(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            self.n0_w_per_hz,
            self.b0_hz,
            self.n_c,
            self.bits_per_char,
            self.bits_per_symbol,
        ];
        if pos.iter().all(|v| *v > 0.0 && v.is_finite()) && self.n_w >= 1 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid system parameters {self:?}")))
        }
    }
}

const BANDWIDTH_TOL: f64 = 1e-12;

/// Registry K values that pass the word-rate floor and whose BLEU asymptote exceeds `eps0`.
pub fn feasible_k_range(targets: &Targets, b0: f64, m: usize, registry: &SemanticPerfModel) -> Vec<u32> {
    registry
        .keys()
        .filter(|&k| {
            let floor = m as f64 * k as f64 * targets.s0;
            let bleu_ok = registry.params(k).map(|p| targets.eps0 < p.a_k).unwrap_or(false);
            floor <= b0 * (1.0 + BANDWIDTH_TOL) && bleu_ok
        })
        .collect()
}

/// Complete solution for one K.
#[derive(Debug, Clone, PartialEq)]
pub struct KSolution {
    pub k: u32,
    pub gamma_s0: f64,
    pub avg_power_w: f64,
    pub p_noma_w: f64,
    pub p_excl_w: f64,
    pub alloc: BandwidthAllocation,
    pub beams: Vec<BeamSolution>,
    pub routes: Vec<BeamRoute>,
    pub excl_beams: Vec<ExclusiveBeam>,
    pub bcd: BcdState,
}

impl KSolution {
    pub fn qd_fraction(&self) -> f64 {
        let qd = self.routes.iter().filter(|r| **r != BeamRoute::Oracle).count();
        qd as f64 / self.routes.len() as f64
    }
}

/// Per-K outcome kept for the trace.
#[derive(Debug, Clone, PartialEq)]
pub enum KOutcome {
    Feasible(f64),
    Infeasible(String),
}

impl KOutcome {
    pub fn power(&self) -> Option<f64> {
        match self {
            KOutcome::Feasible(p) => Some(*p),
            KOutcome::Infeasible(_) => None,
        }
    }
}

/// Result of the exhaustive search over K.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSolution {
    pub k_opt: u32,
    pub avg_power_w: f64,
    pub p_noma_w: f64,
    pub p_excl_w: f64,
    pub gamma_s0: f64,
    pub alloc: BandwidthAllocation,
    pub beams: Vec<BeamSolution>,
    pub routes: Vec<BeamRoute>,
    pub excl_beams: Vec<ExclusiveBeam>,
    pub bcd: BcdState,
    pub per_k_trace: Vec<(u32, KOutcome)>,
}

impl JointSolution {
    pub fn qd_fraction(&self) -> f64 {
        let qd = self.routes.iter().filter(|r| **r != BeamRoute::Oracle).count();
        qd as f64 / self.routes.len() as f64
    }
}

fn check_channels(channels: &[ClusterChannels]) -> Result<()> {
    let Some(first) = channels.first() else {
        return Err(Error::InvalidArgument("no clusters".into()));
    };
    let n = first.num_antennas();
    if channels.iter().any(|c| c.num_antennas() != n) {
        return Err(Error::InvalidArgument("clusters disagree on antenna count".into()));
    }
    Ok(())
}

/// Solves bandwidth and beams for one fixed K.
pub fn solve_for_k(
    channels: &[ClusterChannels],
    targets: &Targets,
    sys: &SystemParams,
    registry: &SemanticPerfModel,
    k: u32,
) -> Result<KSolution> {
    let m = channels.len();
    let gamma_s0 = registry.required_linear_snr(k, targets.eps0)?;
    let b_min = k as f64 * targets.s0;
    let n0 = sys.n0_w_per_hz;
    let (b_noma, bcd) = bcd_allocate(channels, gamma_s0, targets.r0, n0, sys.b0_hz, b_min, sys.bcd)?;
    let b_excl = allocate_exclusive(channels, targets.r0, n0, sys.b0_hz)?;

    let mut beams = Vec::with_capacity(m);
    let mut routes = Vec::with_capacity(m);
    for (ch, &b) in channels.iter().zip(&b_noma) {
        let t = SinrTargets::for_bandwidth(gamma_s0, targets.r0, b, n0)?;
        let (sol, route) = solve_cluster(ch, &t)?;
        beams.push(sol);
        routes.push(route);
    }
    let excl_beams = channels
        .iter()
        .zip(&b_excl)
        .map(|(ch, &b)| solve_exclusive_beam(ch, rate_threshold(targets.r0, b), n0 * b))
        .collect::<Result<Vec<_>>>()?;

    let p_noma_w: f64 = beams.iter().map(BeamSolution::total_power).sum();
    let p_excl_w: f64 = excl_beams.iter().map(|e| e.p_b).sum();
    let (l_no, l_ex) = sys.lengths(k);
    Ok(KSolution {
        k,
        gamma_s0,
        avg_power_w: average_power(p_noma_w, p_excl_w, l_no, l_ex),
        p_noma_w,
        p_excl_w,
        alloc: BandwidthAllocation { b_noma, b_excl },
        beams,
        routes,
        excl_beams,
        bcd,
    })
}

/// Exhaustive search over every feasible K.
pub fn solve_joint(
    channels: &[ClusterChannels],
    targets: &Targets,
    sys: &SystemParams,
    registry: &SemanticPerfModel,
) -> Result<JointSolution> {
    check_channels(channels)?;
    targets.validate()?;
    sys.validate()?;
    let ks = feasible_k_range(targets, sys.b0_hz, channels.len(), registry);
    if ks.is_empty() {
        return Err(Error::NoFeasibleK);
    }
    let mut trace = Vec::with_capacity(ks.len());
    let mut best: Option<KSolution> = None;
    for k in ks {
        match solve_for_k(channels, targets, sys, registry, k) {
            Ok(sol) => {
                trace.push((k, KOutcome::Feasible(sol.avg_power_w)));
                if best.as_ref().is_none_or(|b| sol.avg_power_w < b.avg_power_w) {
                    best = Some(sol);
                }
            }
            Err(e) => trace.push((k, KOutcome::Infeasible(e.to_string()))),
        }
    }
    let best = best.ok_or(Error::NoFeasibleK)?;
    Ok(JointSolution {
        k_opt: best.k,
        avg_power_w: best.avg_power_w,
        p_noma_w: best.p_noma_w,
        p_excl_w: best.p_excl_w,
        gamma_s0: best.gamma_s0,
        alloc: best.alloc,
        beams: best.beams,
        routes: best.routes,
        excl_beams: best.excl_beams,
        bcd: best.bcd,
        per_k_trace: trace,
    })
}

/// Constraint check of a returned solution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintAudit {
    pub min_word_rate_margin: f64,
    pub min_bleu_margin: f64,
    pub min_rate_noma_rel: f64,
    pub min_rate_excl_rel: f64,
    pub noma_budget_used: f64,
    pub excl_budget_used: f64,
    /// `|p_noma - sum of the bandwidth-model powers|` relative, over clusters routed through the closed form.
    pub bandwidth_model_gap: f64,
}

impl ConstraintAudit {
    pub fn passes(&self, b0: f64) -> bool {
        self.min_word_rate_margin >= -1e-9
            && self.min_bleu_margin >= -1e-9
            && self.min_rate_noma_rel >= -1e-6
            && self.min_rate_excl_rel >= -1e-6
            && self.noma_budget_used <= b0 * (1.0 + 1e-9)
            && self.excl_budget_used <= b0 * (1.0 + 1e-9)
    }
}

pub fn audit_solution(
    channels: &[ClusterChannels],
    targets: &Targets,
    sys: &SystemParams,
    registry: &SemanticPerfModel,
    sol: &JointSolution,
) -> Result<ConstraintAudit> {
    let n0 = sys.n0_w_per_hz;
    let mut audit = ConstraintAudit {
        min_word_rate_margin: f64::INFINITY,
        min_bleu_margin: f64::INFINITY,
        min_rate_noma_rel: f64::INFINITY,
        min_rate_excl_rel: f64::INFINITY,
        noma_budget_used: sol.alloc.b_noma.iter().sum(),
        excl_budget_used: sol.alloc.b_excl.iter().sum(),
        bandwidth_model_gap: 0.0,
    };
    for (i, ch) in channels.iter().enumerate() {
        let b = sol.alloc.b_noma[i];
        let beam = &sol.beams[i];
        let wr = word_rate(b, sol.k_opt)?;
        audit.min_word_rate_margin = audit.min_word_rate_margin.min((wr - targets.s0) / targets.s0);
        let (_, snr_s, _) = sinr_noma(ch, beam, n0 * b);
        let bleu = registry.bleu(sol.k_opt, linear_to_db(snr_s))?;
        audit.min_bleu_margin = audit.min_bleu_margin.min(bleu - targets.eps0);
        let rate = rate_b_noma(ch, beam, b, n0);
        audit.min_rate_noma_rel = audit.min_rate_noma_rel.min((rate - targets.r0) / targets.r0);

        let be = sol.alloc.b_excl[i];
        let snr = snr_exclusive(ch, &sol.excl_beams[i], n0 * be);
        let rate_ex = be * snr.ln_1p() / std::f64::consts::LN_2;
        audit.min_rate_excl_rel = audit.min_rate_excl_rel.min((rate_ex - targets.r0) / targets.r0);
    }
    if sol.routes.iter().all(|r| *r == BeamRoute::ClosedForm) {
        let model = noma_power_of_bandwidth(channels, &sol.alloc.b_noma, sol.gamma_s0, targets.r0, n0)?;
        audit.bandwidth_model_gap = (model - sol.p_noma_w).abs() / sol.p_noma_w;
    }
    Ok(audit)
}
