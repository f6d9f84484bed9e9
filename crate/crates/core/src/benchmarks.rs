//! Reference schemes compared against the proposed design under the same targets.
//!
//! All of them reuse the K chosen by the proposed scheme.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::bandwidth::{exclusive_power, BandwidthAllocation};
use crate::beamforming::{is_collinear, rate_threshold, solve_cluster, BeamSolution};
use crate::channel::{stream_rng, ClusterChannels, StreamId, StreamPurpose};
use crate::error::{Error, Result};
use crate::linalg::CVector;
use crate::protocol::{average_power, SystemParams, Targets};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Scheme {
    Proposed,
    Oma,
    Zf,
    Mrt,
    ObRb,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [Scheme::Proposed, Scheme::Oma, Scheme::Zf, Scheme::Mrt, Scheme::ObRb];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Oma => "oma",
            Scheme::Zf => "zf",
            Scheme::Mrt => "mrt",
            Scheme::ObRb => "ob_rb",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s.trim())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scheme '{s}'")))
    }
}

/// Inputs shared by every benchmark on one trial.
#[derive(Debug, Clone, Copy)]
pub struct BenchmarkContext<'a> {
    pub channels: &'a [ClusterChannels],
    pub targets: &'a Targets,
    pub sys: &'a SystemParams,
    pub k: u32,
    pub gamma_s0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkResult {
    pub scheme: Scheme,
    pub k: u32,
    /// `None` when the scheme cannot meet the targets on this trial.
    pub avg_power_w: Option<f64>,
    pub p_noma_w: Option<f64>,
    pub p_excl_w: Option<f64>,
    pub per_cluster: Vec<(f64, f64)>,
    pub beams: Vec<BeamSolution>,
    pub alloc: BandwidthAllocation,
    pub reason: Option<String>,
}

impl BenchmarkResult {
    pub fn is_feasible(&self) -> bool {
        self.avg_power_w.is_some()
    }
}

fn finish(
    ctx: &BenchmarkContext<'_>,
    scheme: Scheme,
    alloc: BandwidthAllocation,
    beams: std::result::Result<Vec<BeamSolution>, String>,
) -> BenchmarkResult {
    match beams {
        Ok(beams) => {
            let p_no: f64 = beams.iter().map(BeamSolution::total_power).sum();
            let p_ex = exclusive_power(ctx.channels, &alloc.b_excl, ctx.targets.r0, ctx.sys.n0_w_per_hz);
            let (l_no, l_ex) = ctx.sys.lengths(ctx.k);
            BenchmarkResult {
                scheme,
                k: ctx.k,
                avg_power_w: Some(average_power(p_no, p_ex, l_no, l_ex)),
                p_noma_w: Some(p_no),
                p_excl_w: Some(p_ex),
                per_cluster: beams.iter().map(|b| (b.p_s, b.p_b)).collect(),
                beams,
                alloc,
                reason: None,
            }
        }
        Err(reason) => BenchmarkResult {
            scheme,
            k: ctx.k,
            avg_power_w: None,
            p_noma_w: None,
            p_excl_w: None,
            per_cluster: Vec::new(),
            beams: Vec::new(),
            alloc,
            reason: Some(reason),
        },
    }
}

/// Per-cluster fixed-direction solve over an equal bandwidth split.
fn equal_split_scheme<F>(ctx: &BenchmarkContext<'_>, scheme: Scheme, solve: F) -> BenchmarkResult
where
    F: Fn(&ClusterChannels, f64, f64, f64) -> std::result::Result<BeamSolution, String>,
{
    let m = ctx.channels.len();
    let alloc = BandwidthAllocation::equal(m, ctx.sys.b0_hz);
    let beams = ctx
        .channels
        .iter()
        .zip(&alloc.b_noma)
        .enumerate()
        .map(|(i, (ch, &b))| {
            let noise = ctx.sys.n0_w_per_hz * b;
            solve(ch, ctx.gamma_s0, rate_threshold(ctx.targets.r0, b), noise).map_err(|e| format!("cluster {i}: {e}"))
        })
        .collect();
    finish(ctx, scheme, alloc, beams)
}

fn unit(v: &CVector) -> std::result::Result<CVector, String> {
    v.normalized().ok_or_else(|| "zero channel".to_string())
}

/// `(SINR at the S-user, SINR at the B-user)` when neither receiver cancels interference.
pub fn sinr_no_sic(ch: &ClusterChannels, sol: &BeamSolution, noise_w: f64) -> (f64, f64) {
    let ss = sol.p_s * ch.h_s.gain(&sol.dir_s);
    let sb = sol.p_b * ch.h_s.gain(&sol.dir_b);
    let bs = sol.p_s * ch.h_b.gain(&sol.dir_s);
    let bb = sol.p_b * ch.h_b.gain(&sol.dir_b);
    (ss / (sb + noise_w), bb / (bs + noise_w))
}

/// Matched-filter beams, both users treating the other as noise.
pub fn oma_cluster(ch: &ClusterChannels, gs0: f64, gb0: f64, noise: f64) -> std::result::Result<BeamSolution, String> {
    let (u_s, u_b) = (unit(&ch.h_s)?, unit(&ch.h_b)?);
    let a_ss = ch.h_s.gain(&u_s);
    let a_sb = ch.h_s.gain(&u_b);
    let a_bs = ch.h_b.gain(&u_s);
    let a_bb = ch.h_b.gain(&u_b);
    let det = a_ss * a_bb - gs0 * gb0 * a_sb * a_bs;
    if det <= 1e-12 * a_ss * a_bb {
        return Err("interference coupling too strong without SIC".into());
    }
    let p_s = noise * gs0 * (a_bb + gb0 * a_sb) / det;
    let p_b = noise * gb0 * (a_ss + gs0 * a_bs) / det;
    Ok(BeamSolution::from_beams(ch, u_s, u_b, p_s, p_b, noise))
}

/// Zero-forcing beams, each user's channel projected off the other's.
pub fn zf_cluster(ch: &ClusterChannels, gs0: f64, gb0: f64, noise: f64) -> std::result::Result<BeamSolution, String> {
    if ch.num_antennas() < 2 {
        return Err("zero-forcing needs at least two antennas".into());
    }
    if is_collinear(ch) {
        return Err("collinear channels leave no null space".into());
    }
    let project_off = |x: &CVector, y: &CVector| {
        let coef = -(y.dot(x) / y.norm_sqr());
        x.axpy(coef, y)
    };
    let u_s = unit(&project_off(&ch.h_s, &ch.h_b))?;
    let u_b = unit(&project_off(&ch.h_b, &ch.h_s))?;
    let p_s = gs0 * noise / ch.h_s.gain(&u_s);
    let p_b = gb0 * noise / ch.h_b.gain(&u_b);
    Ok(BeamSolution::from_beams(ch, u_s, u_b, p_s, p_b, noise))
}

/// Matched-filter beams under the SIC decoding order of the proposed scheme.
pub fn mrt_cluster(ch: &ClusterChannels, gs0: f64, gb0: f64, noise: f64) -> std::result::Result<BeamSolution, String> {
    let (u_s, u_b) = (unit(&ch.h_s)?, unit(&ch.h_b)?);
    let a_ss = ch.h_s.gain(&u_s);
    let a_sb = ch.h_s.gain(&u_b);
    let a_bs = ch.h_b.gain(&u_s);
    let a_bb = ch.h_b.gain(&u_b);
    if a_sb <= 1e-15 * a_ss {
        return Err("B-beam invisible at the S-user, SIC impossible".into());
    }
    let p_s = gs0 * noise / a_ss;
    let p_b = gb0 * (noise * (gs0 + 1.0) / a_sb).max((p_s * a_bs + noise) / a_bb);
    Ok(BeamSolution::from_beams(ch, u_s, u_b, p_s, p_b, noise))
}

pub fn solve_oma(ctx: &BenchmarkContext<'_>) -> BenchmarkResult {
    equal_split_scheme(ctx, Scheme::Oma, oma_cluster)
}

pub fn solve_zf(ctx: &BenchmarkContext<'_>) -> BenchmarkResult {
    equal_split_scheme(ctx, Scheme::Zf, zf_cluster)
}

pub fn solve_mrt(ctx: &BenchmarkContext<'_>) -> BenchmarkResult {
    equal_split_scheme(ctx, Scheme::Mrt, mrt_cluster)
}

/// `floor + (total - m floor) w` with `w` uniform on the probability simplex.
pub fn random_split<R: Rng + ?Sized>(rng: &mut R, m: usize, total: f64, floor: f64) -> Vec<f64> {
    let e: Vec<f64> = (0..m).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = e.iter().sum();
    let free = (total - m as f64 * floor).max(0.0);
    e.iter().map(|x| floor + free * x / s).collect()
}

/// Proposed beams over random bandwidth splits in both periods.
pub fn solve_ob_rb(ctx: &BenchmarkContext<'_>, seed: u64, trial: u64) -> BenchmarkResult {
    let m = ctx.channels.len();
    let b0 = ctx.sys.b0_hz;
    let floor = ctx.k as f64 * ctx.targets.s0;
    let mut noma_rng = stream_rng(seed, StreamPurpose::BandwidthSplit, StreamId::new(trial, 0, 0));
    let mut excl_rng = stream_rng(seed, StreamPurpose::BandwidthSplit, StreamId::new(trial, 0, 1));
    if m as f64 * floor > b0 * (1.0 + 1e-12) {
        return finish(
            ctx,
            Scheme::ObRb,
            BandwidthAllocation::equal(m, b0),
            Err("word-rate floor exceeds the budget".into()),
        );
    }
    let alloc = BandwidthAllocation {
        b_noma: random_split(&mut noma_rng, m, b0, floor),
        b_excl: random_split(&mut excl_rng, m, b0, floor),
    };
    let beams = ctx
        .channels
        .iter()
        .zip(&alloc.b_noma)
        .map(|(ch, &b)| {
            let t =
                crate::beamforming::SinrTargets::for_bandwidth(ctx.gamma_s0, ctx.targets.r0, b, ctx.sys.n0_w_per_hz)
                    .map_err(|e| e.to_string())?;
            solve_cluster(ch, &t).map(|(s, _)| s).map_err(|e| e.to_string())
        })
        .collect();
    finish(ctx, Scheme::ObRb, alloc, beams)
}

/// Runs one benchmark scheme; `Proposed` is rejected (it is produced by the joint solver).
pub fn run_benchmark(scheme: Scheme, ctx: &BenchmarkContext<'_>, seed: u64, trial: u64) -> Result<BenchmarkResult> {
    Ok(match scheme {
        Scheme::Oma => solve_oma(ctx),
        Scheme::Zf => solve_zf(ctx),
        Scheme::Mrt => solve_mrt(ctx),
        Scheme::ObRb => solve_ob_rb(ctx, seed, trial),
        Scheme::Proposed => {
            return Err(Error::InvalidArgument("the proposed scheme is not a benchmark".into()));
        }
    })
}
