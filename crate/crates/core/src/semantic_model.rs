//! Performance model of the semantic transceiver.
//!
//! Throughput is measured as a word rate `B / K` and accuracy as a 1-gram BLEU
//! score that follows a logistic curve in the received SNR (in dB):
//!
//! ```text
//! bleu_K(x) = A_K / (1 + exp(-l_K (x - x0_K)))
//! ```
//!
//! The default registry holds the fitted parameters for `K = 3..=10`. Symbol
//! factors outside the registry are rejected rather than extrapolated.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default registry in the on-disk text format (`K A_K l_K x0_K`).
pub const DEFAULT_REGISTRY: &str = "\
# Logistic fitting parameters
# K  A_K    l_K    x0_K
3    0.650  0.340   0.262
4    0.826  0.402  -0.462
5    0.916  0.435  -1.561
6    0.940  0.469  -2.084
7    0.954  0.477  -2.553
8    0.960  0.491  -2.979
9    0.965  0.516  -3.379
10   0.970  0.522  -3.897
";

/// Words per second carried by `bandwidth_hz` of symbol rate at `k` symbols per word.
pub fn word_rate(bandwidth_hz: f64, k: u32) -> Result<f64> {
    if bandwidth_hz <= 0.0 || !bandwidth_hz.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "bandwidth must be positive, got {bandwidth_hz}"
        )));
    }
    if k < 1 {
        return Err(Error::InvalidArgument("symbol factor must be >= 1".into()));
    }
    Ok(bandwidth_hz / f64::from(k))
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

/// One logistic curve: asymptote `a_k`, slope `l_k` (per dB), midpoint `x0_k` (dB).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub a_k: f64,
    pub l_k: f64,
    pub x0_k: f64,
}

impl LogisticParams {
    pub fn new(a_k: f64, l_k: f64, x0_k: f64) -> Result<Self> {
        if !(a_k > 0.0 && a_k.is_finite()) || !(l_k > 0.0 && l_k.is_finite()) || !x0_k.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "logistic parameters must satisfy A > 0, l > 0: ({a_k}, {l_k}, {x0_k})"
            )));
        }
        Ok(Self { a_k, l_k, x0_k })
    }

    pub fn eval(&self, x_db: f64) -> f64 {
        self.a_k / (1.0 + (-self.l_k * (x_db - self.x0_k)).exp())
    }

    /// Analytic first derivative with respect to the SNR in dB.
    pub fn derivative(&self, x_db: f64) -> f64 {
        let e = (-self.l_k * (x_db - self.x0_k)).exp();
        if !e.is_finite() {
            return 0.0;
        }
        self.a_k * self.l_k * e / ((1.0 + e) * (1.0 + e))
    }

    /// SNR in dB at which the curve reaches `y`; defined on `(0, a_k)`.
    pub fn inverse(&self, y: f64) -> f64 {
        self.x0_k - (self.a_k / y - 1.0).ln() / self.l_k
    }
}

/// Registry of logistic parameters keyed by symbol factor `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticPerfModel {
    table: BTreeMap<u32, LogisticParams>,
}

impl Default for SemanticPerfModel {
    fn default() -> Self {
        Self::builtin()
    }
}

impl SemanticPerfModel {
    /// The built-in registry (`K = 3..=10`).
    pub fn builtin() -> Self {
        DEFAULT_REGISTRY.parse().expect("built-in registry is well formed")
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (u32, LogisticParams)>) -> Self {
        Self {
            table: entries.into_iter().collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        std::fs::read_to_string(path)?.parse()
    }

    /// Copy of the registry keeping only the listed symbol factors.
    pub fn restricted(&self, ks: &[u32]) -> Result<Self> {
        let mut table = BTreeMap::new();
        for &k in ks {
            table.insert(k, *self.params(k)?);
        }
        Ok(Self { table })
    }

    pub fn keys(&self) -> impl Iterator<Item = u32> + '_ {
        self.table.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn params(&self, k: u32) -> Result<&LogisticParams> {
        self.table.get(&k).ok_or(Error::MissingParameter(k))
    }

    pub fn bleu(&self, k: u32, snr_db: f64) -> Result<f64> {
        Ok(self.params(k)?.eval(snr_db))
    }

    pub fn bleu_derivative(&self, k: u32, snr_db: f64) -> Result<f64> {
        Ok(self.params(k)?.derivative(snr_db))
    }

    /// SNR (dB) needed to reach `target_bleu` with symbol factor `k`.
    pub fn inverse_bleu(&self, k: u32, target_bleu: f64) -> Result<f64> {
        let p = self.params(k)?;
        if target_bleu <= 0.0 || !target_bleu.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "BLEU target must be positive, got {target_bleu}"
            )));
        }
        if target_bleu >= p.a_k {
            return Err(Error::InfeasibleTarget {
                k,
                target: target_bleu,
                asymptote: p.a_k,
            });
        }
        Ok(p.inverse(target_bleu))
    }

    /// Linear SNR threshold used by the power formulas.
    pub fn required_linear_snr(&self, k: u32, target_bleu: f64) -> Result<f64> {
        Ok(db_to_linear(self.inverse_bleu(k, target_bleu)?))
    }

    pub fn to_registry_string(&self) -> String {
        let mut out = String::from("# K  A_K  l_K  x0_K\n");
        for (k, p) in &self.table {
            out.push_str(&format!("{k} {} {} {}\n", p.a_k, p.l_k, p.x0_k));
        }
        out
    }
}

impl FromStr for SemanticPerfModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut table = BTreeMap::new();
        for (idx, raw) in s.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { line: idx + 1, msg };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(err(format!("expected 4 fields, found {}", fields.len())));
            }
            let k: u32 = fields[0]
                .parse()
                .map_err(|e| err(format!("bad K {:?}: {e}", fields[0])))?;
            let mut vals = [0.0; 3];
            for (v, f) in vals.iter_mut().zip(&fields[1..]) {
                *v = f.parse().map_err(|e| err(format!("bad number {f:?}: {e}")))?;
            }
            let params = LogisticParams::new(vals[0], vals[1], vals[2]).map_err(|e| err(e.to_string()))?;
            if table.insert(k, params).is_some() {
                return Err(err(format!("duplicate K = {k}")));
            }
        }
        Ok(Self { table })
    }
}

/// One measured point of the BLEU-vs-SNR curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuSample {
    pub snr_db: f64,
    pub bleu: f64,
}

/// Reads a `snr_db,bleu` CSV file.
pub fn read_samples(path: impl AsRef<Path>) -> Result<Vec<BleuSample>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let s: BleuSample = row?;
        if !(0.0..=1.0).contains(&s.bleu) || !s.snr_db.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sample out of range: snr_db={}, bleu={}",
                s.snr_db, s.bleu
            )));
        }
        out.push(s);
    }
    Ok(out)
}

const FIT_MAX_ITER: usize = 200;
const FIT_GRAD_TOL: f64 = 1e-10;

/// Least-squares logistic fit by damped Gauss-Newton (Levenberg-Marquardt).
///
/// Starts from `A = max(y)`, `x0 = median(x)`, `l = 0.5`.
pub fn fit_logistic(samples: &[BleuSample]) -> Result<LogisticParams> {
    if samples.len() < 4 {
        return Err(Error::FitFailure(format!(
            "need at least 4 samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|s| !s.snr_db.is_finite() || !s.bleu.is_finite()) {
        return Err(Error::FitFailure("non-finite sample".into()));
    }
    let y_max = samples.iter().map(|s| s.bleu).fold(f64::MIN, f64::max);
    let y_min = samples.iter().map(|s| s.bleu).fold(f64::MAX, f64::min);
    if y_max - y_min <= f64::EPSILON * y_max.abs().max(1.0) {
        return Err(Error::FitFailure("all BLEU values are equal".into()));
    }
    let mut xs: Vec<f64> = samples.iter().map(|s| s.snr_db).collect();
    xs.sort_by(|a, b| a.total_cmp(b));
    let median = if xs.len() % 2 == 1 {
        xs[xs.len() / 2]
    } else {
        0.5 * (xs[xs.len() / 2 - 1] + xs[xs.len() / 2])
    };

    let mut theta = Vector3::new(y_max, 0.5, median);
    let mut sse = sum_sq(samples, &theta);
    let mut damping = 1e-3;

    for _ in 0..FIT_MAX_ITER {
        let (jtj, jtr) = normal_equations(samples, &theta);
        if jtr.amax() < FIT_GRAD_TOL {
            break;
        }
        let mut improved = false;
        while damping < 1e16 {
            let mut lhs = jtj;
            for i in 0..3 {
                lhs[(i, i)] += damping * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = lhs.lu().solve(&(-jtr)) else {
                damping *= 10.0;
                continue;
            };
            let candidate = theta + step;
            let cand_sse = sum_sq(samples, &candidate);
            if cand_sse.is_finite() && cand_sse <= sse && candidate[1] > 0.0 {
                let rel_step = step.amax() / theta.amax().max(1.0);
                theta = candidate;
                sse = cand_sse;
                damping = (damping * 0.1).max(1e-15);
                improved = rel_step > 1e-15;
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            break;
        }
    }

    LogisticParams::new(theta[0], theta[1], theta[2])
        .map_err(|_| Error::FitFailure(format!("fit converged to invalid parameters {theta:?}")))
}

fn sum_sq(samples: &[BleuSample], theta: &Vector3<f64>) -> f64 {
    samples
        .iter()
        .map(|s| {
            let sig = 1.0 / (1.0 + (-theta[1] * (s.snr_db - theta[2])).exp());
            let r = theta[0] * sig - s.bleu;
            r * r
        })
        .sum()
}

fn normal_equations(samples: &[BleuSample], theta: &Vector3<f64>) -> (Matrix3<f64>, Vector3<f64>) {
    let (a, l, x0) = (theta[0], theta[1], theta[2]);
    let mut jtj = Matrix3::zeros();
    let mut jtr = Vector3::zeros();
    for s in samples {
        let dx = s.snr_db - x0;
        let sig = 1.0 / (1.0 + (-l * dx).exp());
        let ds = sig * (1.0 - sig);
        let j = Vector3::new(sig, a * ds * dx, -a * ds * l);
        let r = a * sig - s.bleu;
        jtj += j * j.transpose();
        jtr += j * r;
    }
    (jtj, jtr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn model() -> SemanticPerfModel {
        SemanticPerfModel::builtin()
    }

    #[test]
    fn word_rate_examples() {
        assert_eq!(word_rate(1e6, 4).unwrap(), 2.5e5);
        assert_eq!(word_rate(3.3e5, 1).unwrap(), 3.3e5);
        assert_eq!(word_rate(5e5, 8).unwrap(), 62500.0);
        assert!(matches!(word_rate(0.0, 4), Err(Error::InvalidArgument(_))));
        assert!(matches!(word_rate(-1.0, 4), Err(Error::InvalidArgument(_))));
        assert!(matches!(word_rate(1e6, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn registry_matches_table() {
        let m = model();
        assert_eq!(m.keys().collect::<Vec<_>>(), (3..=10).collect::<Vec<_>>());
        let p8 = m.params(8).unwrap();
        assert_eq!((p8.a_k, p8.l_k, p8.x0_k), (0.960, 0.491, -2.979));
        let p3 = m.params(3).unwrap();
        assert_eq!((p3.a_k, p3.l_k, p3.x0_k), (0.650, 0.340, 0.262));
        assert!(matches!(m.params(2), Err(Error::MissingParameter(2))));
        assert!(matches!(m.params(11), Err(Error::MissingParameter(11))));
    }

    #[test]
    fn registry_text_round_trip() {
        let m = model();
        let again: SemanticPerfModel = m.to_registry_string().parse().unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn registry_parse_errors() {
        assert!(matches!(
            "3 0.6 0.3".parse::<SemanticPerfModel>(),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            "# c\n3 0.6 0.3 0.1\n3 0.6 0.3 0.1".parse::<SemanticPerfModel>(),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(
            "3 0.6 -0.3 0.1".parse::<SemanticPerfModel>(),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn bleu_examples() {
        let m = model();
        assert!((m.bleu(3, 0.262).unwrap() - 0.325).abs() < 1e-15);
        assert!((m.bleu(8, 1e6).unwrap() - 0.960).abs() < 1e-15);
        // Independent evaluation: 0.916 / (1 + exp(-0.435 * 1.561)).
        assert!((m.bleu(5, 0.0).unwrap() - 0.6077873294105275).abs() < 1e-14);
        assert!(matches!(m.bleu(2, 0.0), Err(Error::MissingParameter(2))));
    }

    #[test]
    fn inverse_examples() {
        let m = model();
        assert!((m.inverse_bleu(8, 0.48).unwrap() - (-2.979)).abs() < 1e-12);
        let x = m.inverse_bleu(8, 0.9).unwrap();
        assert!((x - 2.5363771916541964).abs() < 1e-12);
        assert!((m.bleu(8, x).unwrap() - 0.9).abs() < 1e-12);
        assert!(matches!(
            m.inverse_bleu(3, 0.7),
            Err(Error::InfeasibleTarget { k: 3, .. })
        ));
        assert!(matches!(m.inverse_bleu(8, 0.96), Err(Error::InfeasibleTarget { .. })));
        assert!(matches!(m.inverse_bleu(8, 0.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn required_linear_snr_examples() {
        let m = model();
        let g = m.required_linear_snr(8, 0.9).unwrap();
        assert!((g - 1.7932371158084617).abs() < 1e-12);
        assert!((m.bleu(8, linear_to_db(g)).unwrap() - 0.9).abs() < 1e-12);

        let zero_mid = SemanticPerfModel::from_entries([(4, LogisticParams::new(0.8, 0.5, 0.0).unwrap())]);
        assert!((zero_mid.required_linear_snr(4, 0.4).unwrap() - 1.0).abs() < 1e-15);

        let g10 = m.required_linear_snr(10, 0.485).unwrap();
        assert!((g10 - 0.4076617833479447).abs() < 1e-12);
    }

    fn samples_from(p: &LogisticParams, xs: impl Iterator<Item = f64>) -> Vec<BleuSample> {
        xs.map(|x| BleuSample {
            snr_db: x,
            bleu: p.eval(x),
        })
        .collect()
    }

    #[test]
    fn fit_recovers_every_registry_row() {
        let m = model();
        for k in m.keys() {
            let p = m.params(k).unwrap();
            let data = samples_from(p, (-10..=10).map(f64::from));
            let fit = fit_logistic(&data).unwrap();
            assert!((fit.a_k - p.a_k).abs() < 1e-6, "K={k} A {fit:?}");
            assert!((fit.l_k - p.l_k).abs() < 1e-6, "K={k} l {fit:?}");
            assert!((fit.x0_k - p.x0_k).abs() < 1e-6, "K={k} x0 {fit:?}");
        }
    }

    #[test]
    fn fit_rejects_degenerate_data() {
        let flat: Vec<_> = (0..10)
            .map(|i| BleuSample {
                snr_db: f64::from(i),
                bleu: 0.5,
            })
            .collect();
        assert!(matches!(fit_logistic(&flat), Err(Error::FitFailure(_))));
        assert!(matches!(fit_logistic(&flat[..3]), Err(Error::FitFailure(_))));
    }

    #[test]
    fn fit_tolerates_noise() {
        let p = *model().params(3).unwrap();
        let noise = Normal::new(0.0, 0.01).unwrap();
        for seed in 0..20u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<_> = (-400..=400)
                .map(|i| {
                    let x = f64::from(i) * 0.05;
                    BleuSample {
                        snr_db: x,
                        bleu: p.eval(x) + noise.sample(&mut rng),
                    }
                })
                .collect();
            let fit = fit_logistic(&data).unwrap();
            assert!((fit.a_k / p.a_k - 1.0).abs() < 0.05, "seed {seed}: {fit:?}");
            assert!((fit.l_k / p.l_k - 1.0).abs() < 0.05, "seed {seed}: {fit:?}");
            // x0 = 0.262 is close to zero, so compare on the scale of one dB.
            assert!(
                (fit.x0_k - p.x0_k).abs() < 0.05 * p.x0_k.abs().max(1.0),
                "seed {seed}: {fit:?}"
            );
        }
    }

    proptest! {
        #[test]
        fn bleu_is_increasing_and_bounded(k in 3u32..=10, x1 in -20.0f64..20.0, dx in 1e-3f64..10.0) {
            let m = model();
            let a = m.params(k).unwrap().a_k;
            let y1 = m.bleu(k, x1).unwrap();
            let y2 = m.bleu(k, x1 + dx).unwrap();
            prop_assert!(y1 < y2);
            prop_assert!(y1 > 0.0 && y2 < a);
        }

        #[test]
        fn inverse_round_trip(k in 3u32..=10, x in -20.0f64..20.0) {
            let m = model();
            let y = m.bleu(k, x).unwrap();
            let back = m.inverse_bleu(k, y).unwrap();
            prop_assert!((back - x).abs() < 1e-9, "{} vs {}", back, x);
        }

        #[test]
        fn derivative_matches_central_difference(k in 3u32..=10, x in -20.0f64..20.0) {
            let m = model();
            let h = 1e-5;
            let fd = (m.bleu(k, x + h).unwrap() - m.bleu(k, x - h).unwrap()) / (2.0 * h);
            prop_assert!((fd - m.bleu_derivative(k, x).unwrap()).abs() < 1e-6);
        }
    }
}
