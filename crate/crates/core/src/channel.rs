//! Rician-faded MISO channels for the S-user and B-user of each cluster.
//!
//! Every draw comes from its own ChaCha stream keyed by
//! `(seed, purpose, trial, cluster, user)`, so results do not depend on the
//! order in which trials or clusters are evaluated.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::beamforming;
use crate::error::{Error, Result};
use crate::linalg::CVector;

/// Index of the S-user inside a cluster when keying streams and dump rows.
pub const SEMANTIC_USER: u32 = 0;
/// Index of the B-user.
pub const BIT_USER: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamPurpose {
    Channel = 1,
    Distance = 2,
    BandwidthSplit = 3,
}

/// Identifies one independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub trial: u64,
    pub cluster: u32,
    pub user: u32,
}

impl StreamId {
    pub fn new(trial: u64, cluster: u32, user: u32) -> Self {
        Self { trial, cluster, user }
    }
}

/// Counter-style generator: the stream key is the 256-bit ChaCha key itself.
pub fn stream_rng(seed: u64, purpose: StreamPurpose, id: StreamId) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&id.trial.to_le_bytes());
    key[16..20].copy_from_slice(&id.cluster.to_le_bytes());
    key[20..24].copy_from_slice(&id.user.to_le_bytes());
    key[24..32].copy_from_slice(&(purpose as u64).to_le_bytes());
    ChaCha12Rng::from_seed(key)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RicianConfig {
    pub rician_factor: f64,
    pub path_loss_exp: f64,
    pub num_antennas: usize,
    pub seed: u64,
}

impl RicianConfig {
    pub fn new(rician_factor: f64, path_loss_exp: f64, num_antennas: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            rician_factor,
            path_loss_exp,
            num_antennas,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rician_factor.is_nan() || self.rician_factor < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "Rician factor must be >= 0, got {}",
                self.rician_factor
            )));
        }
        if !(self.path_loss_exp > 0.0 && self.path_loss_exp.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "path-loss exponent must be > 0, got {}",
                self.path_loss_exp
            )));
        }
        if self.num_antennas < 1 {
            return Err(Error::InvalidArgument("need at least one antenna".into()));
        }
        Ok(())
    }

    /// `(LoS weight, NLoS weight)` of the amplitude mixture.
    fn mixture_weights(&self) -> (f64, f64) {
        let k = self.rician_factor;
        if k.is_infinite() {
            (1.0, 0.0)
        } else {
            ((k / (1.0 + k)).sqrt(), (1.0 / (1.0 + k)).sqrt())
        }
    }
}

/// Half-wavelength ULA response at angle `theta`; all entries have unit modulus.
pub fn steering_vector(n: usize, theta: f64) -> CVector {
    let phase = PI * theta.cos();
    (0..n)
        .map(|i| Complex64::from_polar(1.0, phase * i as f64))
        .collect::<Vec<_>>()
        .into()
}

/// One Rician channel vector at `distance` meters.
pub fn draw_channel(cfg: &RicianConfig, distance: f64, stream: StreamId) -> Result<CVector> {
    if !(distance > 0.0 && distance.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "distance must be positive, got {distance}"
        )));
    }
    let mut rng = stream_rng(cfg.seed, StreamPurpose::Channel, stream);
    let n = cfg.num_antennas;
    let theta = rng.random_range(0.0..PI);
    let los = steering_vector(n, theta);
    let (w_los, w_nlos) = cfg.mixture_weights();
    let scale = distance.powf(-cfg.path_loss_exp / 2.0);
    let half = 0.5f64.sqrt();
    let entries = los
        .iter()
        .map(|a| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let nlos = Complex64::new(re * half, im * half);
            (a * w_los + nlos * w_nlos) * scale
        })
        .collect::<Vec<_>>();
    Ok(entries.into())
}

/// Uniform distances for the two users of a cluster.
pub fn draw_distances(seed: u64, trial: u64, cluster: u32, range_s: (f64, f64), range_b: (f64, f64)) -> (f64, f64) {
    let mut rs = stream_rng(
        seed,
        StreamPurpose::Distance,
        StreamId::new(trial, cluster, SEMANTIC_USER),
    );
    let mut rb = stream_rng(seed, StreamPurpose::Distance, StreamId::new(trial, cluster, BIT_USER));
    (uniform(&mut rs, range_s), uniform(&mut rb, range_b))
}

fn uniform(rng: &mut ChaCha12Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Channels of one cluster plus derived status.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterChannels {
    pub h_s: CVector,
    pub h_b: CVector,
    pub d_s: Option<f64>,
    pub d_b: Option<f64>,
    /// Set by [`ClusterChannels::classify`]; depends on the thresholds used.
    pub quasi_degraded: Option<bool>,
}

impl ClusterChannels {
    pub fn new(h_s: CVector, h_b: CVector) -> Result<Self> {
        if h_s.len() != h_b.len() || h_s.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "channel lengths differ or are empty: {} vs {}",
                h_s.len(),
                h_b.len()
            )));
        }
        for (name, h) in [("h_s", &h_s), ("h_b", &h_b)] {
            let n = h.norm_sqr();
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} has zero or non-finite norm")));
            }
        }
        Ok(Self {
            h_s,
            h_b,
            d_s: None,
            d_b: None,
            quasi_degraded: None,
        })
    }

    pub fn with_distances(mut self, d_s: f64, d_b: f64) -> Self {
        self.d_s = Some(d_s);
        self.d_b = Some(d_b);
        self
    }

    pub fn num_antennas(&self) -> usize {
        self.h_s.len()
    }

    pub fn gain_s(&self) -> f64 {
        self.h_s.norm_sqr()
    }

    pub fn gain_b(&self) -> f64 {
        self.h_b.norm_sqr()
    }

    /// Evaluates and stores the quasi-degradation status for these thresholds.
    pub fn classify(&mut self, gamma_s0: f64, gamma_b0: f64, noise_w: f64) -> Result<bool> {
        let qd = classify_quasi_degraded(self, gamma_s0, gamma_b0, noise_w)?;
        self.quasi_degraded = Some(qd);
        Ok(qd)
    }
}

/// Two independent user draws for one cluster.
pub fn draw_cluster(cfg: &RicianConfig, d_s: f64, d_b: f64, trial: u64, cluster: u32) -> Result<ClusterChannels> {
    let h_s = draw_channel(cfg, d_s, StreamId::new(trial, cluster, SEMANTIC_USER))?;
    let h_b = draw_channel(cfg, d_b, StreamId::new(trial, cluster, BIT_USER))?;
    Ok(ClusterChannels::new(h_s, h_b)?.with_distances(d_s, d_b))
}

/// Tolerance on the SIC-decodability constraint when classifying.
pub const QD_REL_TOL: f64 = 1e-9;

/// True when the closed-form beams computed without the SIC-decodability
/// constraint already satisfy it, i.e. the multiplier of that constraint is
/// zero at the optimum.
pub fn classify_quasi_degraded(ch: &ClusterChannels, gamma_s0: f64, gamma_b0: f64, noise_w: f64) -> Result<bool> {
    if !(gamma_s0 > 0.0 && gamma_b0 > 0.0 && noise_w > 0.0) {
        return Err(Error::InvalidArgument(
            "SINR thresholds and noise must be positive".into(),
        ));
    }
    if !(ch.gain_s() > 0.0 && ch.gain_b() > 0.0) {
        return Err(Error::InvalidArgument("zero-norm channel".into()));
    }
    let cand = beamforming::closed_form_candidate(ch, gamma_s0, gamma_b0, noise_w);
    let lhs = cand.p_b * ch.h_s.gain(&cand.dir_b);
    let rhs = gamma_b0 * (cand.p_s * ch.h_s.gain(&cand.dir_s) + noise_w);
    Ok(lhs >= rhs * (1.0 - QD_REL_TOL))
}

#[derive(Debug, Serialize, Deserialize)]
struct DumpRow {
    trial: u64,
    cluster: u32,
    user: u32,
    antenna: usize,
    re: f64,
    im: f64,
}

/// Writes `trial,cluster,user,antenna,re,im` rows for the given clusters.
pub fn write_channel_dump<W: Write>(out: W, clusters: &[(u64, u32, &ClusterChannels)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for &(trial, cluster, ch) in clusters {
        for (user, h) in [(SEMANTIC_USER, &ch.h_s), (BIT_USER, &ch.h_b)] {
            for (antenna, z) in h.iter().enumerate() {
                w.serialize(DumpRow {
                    trial,
                    cluster,
                    user,
                    antenna,
                    re: z.re,
                    im: z.im,
                })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Rebuilds clusters from a dump, keyed by `(trial, cluster)`.
pub fn read_channel_dump<R: Read>(input: R) -> Result<BTreeMap<(u64, u32), ClusterChannels>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut acc: BTreeMap<(u64, u32), [BTreeMap<usize, Complex64>; 2]> = BTreeMap::new();
    for row in rdr.deserialize() {
        let r: DumpRow = row?;
        if r.user > BIT_USER {
            return Err(Error::InvalidArgument(format!("unknown user index {}", r.user)));
        }
        let slot = acc.entry((r.trial, r.cluster)).or_default();
        slot[r.user as usize].insert(r.antenna, Complex64::new(r.re, r.im));
    }
    let mut out = BTreeMap::new();
    for (key, [s, b]) in acc {
        let to_vec = |m: BTreeMap<usize, Complex64>| -> Result<CVector> {
            if m.keys().copied().ne(0..m.len()) {
                return Err(Error::InvalidArgument(format!(
                    "antenna indices are not contiguous for trial {} cluster {}",
                    key.0, key.1
                )));
            }
            Ok(m.into_values().collect::<Vec<_>>().into())
        };
        out.insert(key, ClusterChannels::new(to_vec(s)?, to_vec(b)?)?);
    }
    Ok(out)
}
