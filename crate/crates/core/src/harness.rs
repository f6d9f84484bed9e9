//! Seeded Monte-Carlo experiments producing CSV rows.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandwidth::{allocate_exclusive, bcd_allocate, BcdOptions};
use crate::beamforming::{rate_threshold, solve_cluster, solve_exclusive_beam, BeamSolution, SinrTargets};
use crate::benchmarks::{run_benchmark, BenchmarkContext, Scheme};
use crate::channel::{draw_cluster, draw_distances, ClusterChannels, RicianConfig};
use crate::error::{Error, Result};
use crate::protocol::{average_power, feasible_k_range, solve_for_k, solve_joint, SystemParams, Targets};
use crate::semantic_model::{db_to_linear, SemanticPerfModel};

/// Frame constants as they appear in the configuration file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub n_w: u32,
    pub n_c: f64,
    pub bits_per_char: f64,
    pub bits_per_symbol: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            n_w: 100,
            n_c: 5.0,
            bits_per_char: 8.0,
            bits_per_symbol: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub n0_w_per_hz: f64,
    pub b0_hz: f64,
    /// Number of clusters.
    pub m: usize,
    /// Number of base-station antennas.
    pub n: usize,
    pub rician_factor: f64,
    pub path_loss_exp: f64,
    pub targets: Targets,
    pub protocol: ProtocolConfig,
    pub trials: u64,
    pub seed: u64,
    /// SNR a conventional bit user needs to deliver the text at the target quality.
    pub bit_user_snr_db: f64,
    /// `[min, max]` distance of S-users from the base station, metres.
    pub distance_s_m: [f64; 2],
    /// `[min, max]` distance of B-users from the base station, metres.
    pub distance_b_m: [f64; 2],
    pub antenna_values: Vec<usize>,
    pub cluster_values: Vec<usize>,
    pub bcd_rel_tol: f64,
    pub bcd_max_iter: usize,
    /// Optional logistic-parameter registry file; the built-in table otherwise.
    pub registry: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n0_w_per_hz: 1e-17,
            b0_hz: 1e6,
            m: 4,
            n: 4,
            rician_factor: 1.0,
            path_loss_exp: 0.8,
            targets: Targets {
                eps0: 0.9,
                s0: 2.5e4,
                r0: 1e6,
            },
            protocol: ProtocolConfig::default(),
            trials: 200,
            seed: 1,
            bit_user_snr_db: 20.0,
            distance_s_m: [5.0, 20.0],
            distance_b_m: [100.0, 200.0],
            antenna_values: vec![2, 4, 6, 8],
            cluster_values: vec![2, 3, 4, 5],
            bcd_rel_tol: 1e-6,
            bcd_max_iter: 50,
            registry: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        let positive = [
            ("n0_w_per_hz", self.n0_w_per_hz),
            ("b0_hz", self.b0_hz),
            ("path_loss_exp", self.path_loss_exp),
            ("bcd_rel_tol", self.bcd_rel_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite")));
            }
        }
        if self.rician_factor.is_nan() || self.rician_factor < 0.0 {
            return bad("rician_factor must be non-negative");
        }
        if self.m == 0 || self.n == 0 {
            return bad("m and n must be at least 1");
        }
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.bcd_max_iter == 0 {
            return bad("bcd_max_iter must be at least 1");
        }
        if !self.bit_user_snr_db.is_finite() {
            return bad("bit_user_snr_db must be finite");
        }
        for (name, r) in [("distance_s_m", self.distance_s_m), ("distance_b_m", self.distance_b_m)] {
            if !(r[0] > 0.0 && r[1] >= r[0] && r[1].is_finite()) {
                return Err(Error::Config(format!("{name} must satisfy 0 < min <= max")));
            }
        }
        if self.antenna_values.contains(&0) || self.cluster_values.contains(&0) {
            return bad("sweep values must be positive");
        }
        self.targets.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.system().validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn system(&self) -> SystemParams {
        SystemParams {
            n0_w_per_hz: self.n0_w_per_hz,
            b0_hz: self.b0_hz,
            n_w: self.protocol.n_w,
            n_c: self.protocol.n_c,
            bits_per_char: self.protocol.bits_per_char,
            bits_per_symbol: self.protocol.bits_per_symbol,
            bcd: BcdOptions {
                delta0: None,
                rel_tol: self.bcd_rel_tol,
                max_iter: self.bcd_max_iter,
            },
        }
    }

    pub fn load_registry(&self) -> Result<SemanticPerfModel> {
        match &self.registry {
            Some(p) => SemanticPerfModel::load(p),
            None => Ok(SemanticPerfModel::builtin()),
        }
    }

    pub fn rician(&self, n: usize) -> Result<RicianConfig> {
        RicianConfig::new(self.rician_factor, self.path_loss_exp, n, self.seed)
    }

    /// Channels of trial `trial` for `m` clusters and `n` antennas.
    pub fn draw_trial(&self, trial: u64, m: usize, n: usize) -> Result<Vec<ClusterChannels>> {
        let rc = self.rician(n)?;
        let rs = (self.distance_s_m[0], self.distance_s_m[1]);
        let rb = (self.distance_b_m[0], self.distance_b_m[1]);
        (0..m as u32)
            .map(|i| {
                let (d_s, d_b) = draw_distances(self.seed, trial, i, rs, rb);
                draw_cluster(&rc, d_s, d_b, trial, i)
            })
            .collect()
    }
}

/// What a run varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    Single,
    Antennas,
    Clusters,
    SymbolFactor,
    BitCompare,
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub sweep_value: String,
    pub trial: u64,
    pub scheme: String,
    pub k_opt: Option<u32>,
    pub avg_power_w: Option<f64>,
    pub p_noma_w: Option<f64>,
    pub p_excl_w: Option<f64>,
    pub qd_fraction: Option<f64>,
    pub feasible: bool,
}

pub const CSV_HEADER: &str = "sweep_value,trial,scheme,k_opt,avg_power_w,p_noma_w,p_excl_w,qd_fraction,feasible";

impl TrialRecord {
    fn infeasible(sweep_value: &str, trial: u64, scheme: &str, k: Option<u32>) -> Self {
        Self {
            sweep_value: sweep_value.to_string(),
            trial,
            scheme: scheme.to_string(),
            k_opt: k,
            avg_power_w: None,
            p_noma_w: None,
            p_excl_w: None,
            qd_fraction: None,
            feasible: false,
        }
    }
}

pub const PURE_BIT: &str = "pure_bit";

/// Frame-averaged power of the network in which each S-user is replaced by a
/// bit user needing linear SNR `gamma_bit`; SIC is performed by the stronger user.
pub fn pure_bit_power(
    channels: &[ClusterChannels],
    targets: &Targets,
    sys: &SystemParams,
    registry: &SemanticPerfModel,
    gamma_bit: f64,
) -> Result<(u32, f64, f64, f64)> {
    let n0 = sys.n0_w_per_hz;
    let r0 = targets.r0;
    let b_excl = allocate_exclusive(channels, r0, n0, sys.b0_hz)?;
    let p_ex: f64 = channels
        .iter()
        .zip(&b_excl)
        .map(|(ch, &b)| solve_exclusive_beam(ch, rate_threshold(r0, b), n0 * b).map(|e| e.p_b))
        .sum::<Result<f64>>()?;
    let mut best: Option<(u32, f64, f64)> = None;
    // The BLEU screen does not apply; only the word-rate floor does.
    let loose = Targets { eps0: 1e-9, ..*targets };
    for k in feasible_k_range(&loose, sys.b0_hz, channels.len(), registry) {
        let b_min = k as f64 * targets.s0;
        let (b_noma, _) = bcd_allocate(channels, gamma_bit, r0, n0, sys.b0_hz, b_min, sys.bcd)?;
        let mut p_no = 0.0;
        for (ch, &b) in channels.iter().zip(&b_noma) {
            let gb0 = rate_threshold(r0, b);
            let sol: BeamSolution = if ch.gain_s() >= ch.gain_b() {
                solve_cluster(ch, &SinrTargets::new(gamma_bit, gb0, n0 * b)?)?.0
            } else {
                let swapped = ClusterChannels::new(ch.h_b.clone(), ch.h_s.clone())?;
                solve_cluster(&swapped, &SinrTargets::new(gb0, gamma_bit, n0 * b)?)?.0
            };
            p_no += sol.total_power();
        }
        let (l_no, l_ex) = sys.lengths(k);
        let avg = average_power(p_no, p_ex, l_no, l_ex);
        if best.is_none_or(|(_, a, _)| avg < a) {
            best = Some((k, avg, p_no));
        }
    }
    let (k, avg, p_no) = best.ok_or(Error::NoFeasibleK)?;
    Ok((k, avg, p_no, p_ex))
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    sys: SystemParams,
    registry: &'a SemanticPerfModel,
    schemes: &'a [Scheme],
}

impl Ctx<'_> {
    fn benchmark_rows(
        &self,
        label: &str,
        trial: u64,
        channels: &[ClusterChannels],
        k: u32,
        gamma_s0: f64,
        qd: f64,
    ) -> Vec<TrialRecord> {
        let ctx = BenchmarkContext {
            channels,
            targets: &self.cfg.targets,
            sys: &self.sys,
            k,
            gamma_s0,
        };
        self.schemes
            .iter()
            .filter(|s| **s != Scheme::Proposed)
            .map(|&s| {
                let res = run_benchmark(s, &ctx, self.cfg.seed, trial).expect("benchmark scheme");
                TrialRecord {
                    sweep_value: label.to_string(),
                    trial,
                    scheme: s.name().to_string(),
                    k_opt: Some(k),
                    avg_power_w: res.avg_power_w,
                    p_noma_w: res.p_noma_w,
                    p_excl_w: res.p_excl_w,
                    qd_fraction: Some(qd),
                    feasible: res.is_feasible(),
                }
            })
            .collect()
    }

    fn infeasible_rows(&self, label: &str, trial: u64, k: Option<u32>) -> Vec<TrialRecord> {
        self.schemes
            .iter()
            .map(|s| TrialRecord::infeasible(label, trial, s.name(), k))
            .collect()
    }

    fn joint_rows(&self, label: &str, trial: u64, m: usize, n: usize) -> Result<Vec<TrialRecord>> {
        let channels = self.cfg.draw_trial(trial, m, n)?;
        let joint = match solve_joint(&channels, &self.cfg.targets, &self.sys, self.registry) {
            Ok(j) => j,
            Err(Error::NoFeasibleK) => return Ok(self.infeasible_rows(label, trial, None)),
            Err(e) => return Err(e),
        };
        let qd = joint.qd_fraction();
        let mut rows = Vec::new();
        if self.schemes.contains(&Scheme::Proposed) {
            rows.push(TrialRecord {
                sweep_value: label.to_string(),
                trial,
                scheme: Scheme::Proposed.name().to_string(),
                k_opt: Some(joint.k_opt),
                avg_power_w: Some(joint.avg_power_w),
                p_noma_w: Some(joint.p_noma_w),
                p_excl_w: Some(joint.p_excl_w),
                qd_fraction: Some(qd),
                feasible: true,
            });
        }
        rows.extend(self.benchmark_rows(label, trial, &channels, joint.k_opt, joint.gamma_s0, qd));
        Ok(rows)
    }

    fn fixed_k_rows(&self, k: u32, trial: u64) -> Result<Vec<TrialRecord>> {
        let label = k.to_string();
        let channels = self.cfg.draw_trial(trial, self.cfg.m, self.cfg.n)?;
        let feasible = feasible_k_range(&self.cfg.targets, self.sys.b0_hz, channels.len(), self.registry);
        if !feasible.contains(&k) {
            return Ok(self.infeasible_rows(&label, trial, Some(k)));
        }
        let sol = solve_for_k(&channels, &self.cfg.targets, &self.sys, self.registry, k)?;
        let qd = sol.qd_fraction();
        let mut rows = Vec::new();
        if self.schemes.contains(&Scheme::Proposed) {
            rows.push(TrialRecord {
                sweep_value: label.clone(),
                trial,
                scheme: Scheme::Proposed.name().to_string(),
                k_opt: Some(k),
                avg_power_w: Some(sol.avg_power_w),
                p_noma_w: Some(sol.p_noma_w),
                p_excl_w: Some(sol.p_excl_w),
                qd_fraction: Some(qd),
                feasible: true,
            });
        }
        rows.extend(self.benchmark_rows(&label, trial, &channels, k, sol.gamma_s0, qd));
        Ok(rows)
    }

    fn bit_compare_rows(&self, trial: u64) -> Result<Vec<TrialRecord>> {
        let label = format!("{}", self.cfg.bit_user_snr_db);
        let channels = self.cfg.draw_trial(trial, self.cfg.m, self.cfg.n)?;
        let mut rows = Vec::new();
        match solve_joint(&channels, &self.cfg.targets, &self.sys, self.registry) {
            Ok(j) => rows.push(TrialRecord {
                sweep_value: label.clone(),
                trial,
                scheme: Scheme::Proposed.name().to_string(),
                k_opt: Some(j.k_opt),
                avg_power_w: Some(j.avg_power_w),
                p_noma_w: Some(j.p_noma_w),
                p_excl_w: Some(j.p_excl_w),
                qd_fraction: Some(j.qd_fraction()),
                feasible: true,
            }),
            Err(Error::NoFeasibleK) => rows.push(TrialRecord::infeasible(&label, trial, "proposed", None)),
            Err(e) => return Err(e),
        }
        let gamma_bit = db_to_linear(self.cfg.bit_user_snr_db);
        match pure_bit_power(&channels, &self.cfg.targets, &self.sys, self.registry, gamma_bit) {
            Ok((k, avg, p_no, p_ex)) => rows.push(TrialRecord {
                sweep_value: label,
                trial,
                scheme: PURE_BIT.to_string(),
                k_opt: Some(k),
                avg_power_w: Some(avg),
                p_noma_w: Some(p_no),
                p_excl_w: Some(p_ex),
                qd_fraction: None,
                feasible: true,
            }),
            Err(Error::NoFeasibleK) => rows.push(TrialRecord::infeasible(&label, trial, PURE_BIT, None)),
            Err(e) => return Err(e),
        }
        Ok(rows)
    }
}

/// Runs a sweep and returns rows ordered by `(sweep value, trial, scheme)`.
///
/// `workers = 0` uses rayon's default pool size.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    sweep: Sweep,
    schemes: &[Scheme],
    workers: usize,
) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let registry = cfg.load_registry()?;
    let ctx = Ctx {
        cfg,
        sys: cfg.system(),
        registry: &registry,
        schemes,
    };
    let mut sorted: Vec<Scheme> = schemes.to_vec();
    sorted.sort();
    sorted.dedup();
    let ctx = Ctx {
        schemes: &sorted,
        ..ctx
    };

    type Job = Box<dyn Fn(&Ctx<'_>, u64) -> Result<Vec<TrialRecord>> + Send + Sync>;
    let jobs: Vec<Job> = match sweep {
        Sweep::Single => vec![Box::new(|c: &Ctx<'_>, t| c.joint_rows("single", t, c.cfg.m, c.cfg.n))],
        Sweep::Antennas => cfg
            .antenna_values
            .iter()
            .map(|&n| Box::new(move |c: &Ctx<'_>, t| c.joint_rows(&n.to_string(), t, c.cfg.m, n)) as Job)
            .collect(),
        Sweep::Clusters => cfg
            .cluster_values
            .iter()
            .map(|&m| Box::new(move |c: &Ctx<'_>, t| c.joint_rows(&m.to_string(), t, m, c.cfg.n)) as Job)
            .collect(),
        Sweep::SymbolFactor => registry
            .keys()
            .map(|k| Box::new(move |c: &Ctx<'_>, t| c.fixed_k_rows(k, t)) as Job)
            .collect(),
        Sweep::BitCompare => vec![Box::new(|c: &Ctx<'_>, t| c.bit_compare_rows(t))],
    };

    let tasks: Vec<(usize, u64)> = (0..jobs.len())
        .flat_map(|j| (0..cfg.trials).map(move |t| (j, t)))
        .collect();
    let run = || -> Result<Vec<Vec<TrialRecord>>> { tasks.par_iter().map(|&(j, t)| jobs[j](&ctx, t)).collect() };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let chunks = pool.install(run)?;
    Ok(chunks.into_iter().flatten().collect())
}

pub fn write_records<W: Write>(out: W, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// True when no row of the run is feasible.
pub fn all_infeasible(records: &[TrialRecord]) -> bool {
    records.iter().all(|r| !r.feasible)
}
