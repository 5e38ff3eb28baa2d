//! Two-stage simulation model with a known optimal rule, its true value, and
//! the replication study measuring bias and interval coverage.

use std::path::Path;

use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::LearnerConfig;
use crate::data::{CovariateBlock, Direction, LongitudinalDataset, RuleCovariateSpec};
use crate::error::{Error, Result};
use crate::learners::{Family, FittedModel, ModelKind};
use crate::longitudinal::learn_odtr;
use crate::policy::sdr_policy_value;
use crate::rng::{derive_seed, seeded};
use crate::rule::{BlipRule, TreatmentRule};
use crate::scalar::{expit, Real};

/// Stage-1 blip under the optimal stage-2 rule: `-0.4 - 8 W1 - 2 W2`.
pub fn stage1_blip(w1: f64, w2: f64) -> f64 {
    -0.4 - 8.0 * w1 - 2.0 * w2
}

/// Stage-2 blip: `0.08 A1 - 0.1`, negative for every unit.
pub fn stage2_blip(a1: u8) -> f64 {
    0.08 * a1 as f64 - 0.1
}

/// Conditional mean of `Y`, term by term as the model is written.
#[allow(clippy::too_many_arguments)]
pub fn outcome_mean(w1: f64, w2: f64, a1: u8, w3: f64, a2: u8) -> f64 {
    let (a1, a2) = (a1 as f64, a2 as f64);
    0.4 - 0.4 * a1 - a2 * w3 - 4.0 * a1 * w1 + 0.08 * a1 * a2 + a2 * w3 - 4.0 * a1 * w1 - 2.0 * a1 * w2 - 0.1 * a2
        + 1.5 * w1
}

struct Unit {
    w1: f64,
    w2: f64,
    a1: u8,
    w3: f64,
    a2: u8,
    y: f64,
}

fn draw_unit<R: rand::Rng>(
    rng: &mut R,
    d1: Option<&dyn Fn(f64, f64) -> u8>,
    d2: Option<&dyn Fn(f64, f64, u8, f64) -> u8>,
) -> Unit {
    let w1 = rng.gen_range(-1.0..1.0);
    let w2 = rng.gen_range(-1.0..1.0);
    let natural_a1 = (rng.gen::<f64>() < expit(0.5 - 1.3 * w1 + 0.4 * w2)) as u8;
    let a1 = d1.map_or(natural_a1, |d| d(w1, w2));
    let u: f64 = rng.gen_range(-1.0..1.0);
    let w3 = 1.25 * a1 as f64 * u + 0.25;
    let natural_a2 = (rng.gen::<f64>() < expit(0.5 + 0.4 * a1 as f64 - 1.5 * w3)) as u8;
    let a2 = d2.map_or(natural_a2, |d| d(w1, w2, a1, w3));
    let noise: f64 = rng.sample(StandardNormal);
    let y = outcome_mean(w1, w2, a1, w3, a2) + noise;
    Unit { w1, w2, a1, w3, a2, y }
}

/// Draws `n` units: `L_1 = (W1, W2)`, `A1`, `L_2 = (W3)`, `A2`, `Y`.
pub fn generate_two_stage_dgm<T: Real>(n: usize, seed: u64) -> LongitudinalDataset<T> {
    let mut rng = seeded(seed);
    let units: Vec<Unit> = (0..n).map(|_| draw_unit(&mut rng, None, None)).collect();
    let col = |f: &dyn Fn(&Unit) -> f64| units.iter().map(|u| T::lit(f(u))).collect::<Vec<T>>();
    LongitudinalDataset::new(
        vec![
            CovariateBlock {
                names: vec!["W1".into(), "W2".into()],
                columns: vec![col(&|u| u.w1), col(&|u| u.w2)],
            },
            CovariateBlock {
                names: vec!["W3".into()],
                columns: vec![col(&|u| u.w3)],
            },
        ],
        vec!["A1".into(), "A2".into()],
        vec![units.iter().map(|u| u.a1).collect(), units.iter().map(|u| u.a2).collect()],
        "Y".into(),
        col(&|u| u.y),
    )
    .expect("generated data is well formed")
}

/// `E[(c + a U1 + b U2)^+]` for independent `U1, U2 ~ U(-1, 1)`.
pub fn expected_positive_part(c: f64, a: f64, b: f64) -> f64 {
    let (a, b) = (a.abs(), b.abs());
    let pos = |x: f64| x.max(0.0);
    match (a > 0.0, b > 0.0) {
        (true, true) => {
            let f = |x: f64| pos(x).powi(3) / 6.0;
            (f(c + a + b) - f(c + a - b) - f(c - a + b) + f(c - a - b)) / (4.0 * a * b)
        }
        (true, false) | (false, true) => {
            let s = a.max(b);
            let g = |x: f64| pos(x).powi(2) / 2.0;
            (g(c + s) - g(c - s)) / (2.0 * s)
        }
        (false, false) => pos(c),
    }
}

/// True value of the optimal rule in closed form,
/// `0.4 + E[max(0, -0.4 - 8 W1 - 2 W2)]`.
pub fn oracle_closed_form() -> f64 {
    0.4 + expected_positive_part(-0.4, 8.0, 2.0)
}

const CHUNK: usize = 1 << 16;

/// Monte Carlo value of the rule pair `(d1, d2)` from `m` simulated units.
pub fn dgm_rule_value(
    m: usize,
    seed: u64,
    d1: impl Fn(f64, f64) -> u8 + Sync,
    d2: impl Fn(f64, f64, u8, f64) -> u8 + Sync,
) -> f64 {
    let chunks = m.div_ceil(CHUNK);
    let total: f64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = seeded(derive_seed(seed, c as u64));
            let len = CHUNK.min(m - c * CHUNK);
            (0..len).map(|_| draw_unit(&mut rng, Some(&d1), Some(&d2)).y).sum::<f64>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    total / m as f64
}

/// Monte Carlo value of the analytically optimal rules
/// `d1 = I(-0.4 - 8 W1 - 2 W2 > 0)`, `d2 = 0`.
pub fn oracle_true_value(m: usize, seed: u64) -> f64 {
    dgm_rule_value(m, seed, |w1, w2| (stage1_blip(w1, w2) > 0.0) as u8, |_, _, a1, _| {
        (stage2_blip(a1) > 0.0) as u8
    })
}

/// The analytically optimal rule as a blip rule on `(W1, W2)` and `A1`.
pub fn analytic_optimal_rule<T: Real>() -> TreatmentRule<T> {
    let linear = |intercept: f64, names: &[&str], coefficients: &[f64]| FittedModel {
        family: Family::Squared,
        feature_names: names.iter().map(|s| s.to_string()).collect(),
        model: ModelKind::Linear {
            intercept: T::lit(intercept),
            coefficients: coefficients.iter().map(|&c| T::lit(c)).collect(),
            interactions: false,
        },
    };
    TreatmentRule::LearnedBlip(BlipRule {
        direction: Direction::Maximize,
        stages: vec![
            linear(-0.4, &["W1", "W2"], &[-8.0, -2.0]),
            linear(-0.1, &["A1"], &[0.08]),
        ],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub sample_sizes: Vec<usize>,
    pub n_replicates: usize,
    pub seed: u64,
    pub alpha: f64,
    pub learners: LearnerConfig,
    /// Monte Carlo draws for the reported oracle check; 0 skips it.
    pub oracle_draws: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            sample_sizes: vec![500],
            n_replicates: 100,
            seed: 1,
            alpha: 0.05,
            learners: LearnerConfig::default(),
            oracle_draws: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_replicates == 0 {
            return Err(Error::Config("n_replicates must be positive".into()));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.iter().any(|&n| n < 2) {
            return Err(Error::Config("sample sizes must be non-empty and each >= 2".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        self.learners.validate()
    }

    /// Seed of replicate `rep` at sample size `n`.
    pub fn replicate_seed(&self, n: usize, rep: usize) -> u64 {
        derive_seed(derive_seed(self.seed, n as u64), rep as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub n: usize,
    pub replicate: usize,
    pub psi_hat: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
    pub covered: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub n: usize,
    pub replicates: usize,
    pub failures: usize,
    pub psi_hat: f64,
    pub abs_bias: f64,
    pub sqrt_n_abs_bias: f64,
    pub coverage: f64,
    pub empirical_sd: f64,
    pub mean_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub truth: f64,
    pub oracle_monte_carlo: Option<f64>,
    pub metrics: Vec<SimMetrics>,
    pub replicates: Vec<ReplicateResult>,
}

/// One replicate: draw data, learn the rule, estimate its value on the same
/// units with the cross-fit rule.
pub fn run_replicate(cfg: &SimConfig, n: usize, rep: usize, truth: f64) -> ReplicateResult {
    let seed = cfg.replicate_seed(n, rep);
    let outcome = (|| -> Result<_> {
        let data = generate_two_stage_dgm::<f64>(n, derive_seed(seed, 0));
        let vspec = RuleCovariateSpec::full_history(&data);
        let fitted = learn_odtr(&data, &vspec, &cfg.learners, Direction::Maximize, seed)?;
        sdr_policy_value(&data, &fitted.in_sample_rule(), &cfg.learners, seed, cfg.alpha)
    })();
    match outcome {
        Ok(est) => ReplicateResult {
            n,
            replicate: rep,
            psi_hat: est.psi_hat,
            se: est.se,
            lower: est.ci.0,
            upper: est.ci.1,
            covered: est.covers(truth),
            error: None,
        },
        Err(e) => ReplicateResult {
            n,
            replicate: rep,
            psi_hat: f64::NAN,
            se: f64::NAN,
            lower: f64::NAN,
            upper: f64::NAN,
            covered: false,
            error: Some(e.to_string()),
        },
    }
}

/// Aggregates replicates of one sample size, excluding failures from the
/// averages and counting them.
pub fn summarize(n: usize, results: &[ReplicateResult], truth: f64) -> SimMetrics {
    let ok: Vec<&ReplicateResult> = results.iter().filter(|r| r.error.is_none()).collect();
    let k = ok.len() as f64;
    let psi: Vec<f64> = ok.iter().map(|r| r.psi_hat).collect();
    let mean_psi = psi.iter().sum::<f64>() / k;
    let sd = if ok.len() > 1 {
        (psi.iter().map(|p| (p - mean_psi).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    let abs_bias = (mean_psi - truth).abs();
    SimMetrics {
        n,
        replicates: ok.len(),
        failures: results.len() - ok.len(),
        psi_hat: mean_psi,
        abs_bias,
        sqrt_n_abs_bias: (n as f64).sqrt() * abs_bias,
        coverage: ok.iter().filter(|r| r.covered).count() as f64 / k,
        empirical_sd: sd,
        mean_se: ok.iter().map(|r| r.se).sum::<f64>() / k,
    }
}

/// Runs every replicate at every sample size. Results do not depend on
/// scheduling: each replicate has its own seed and slots are filled by index.
pub fn run_replications(cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let truth = oracle_closed_form();
    let oracle_monte_carlo = (cfg.oracle_draws > 0).then(|| oracle_true_value(cfg.oracle_draws, derive_seed(cfg.seed, u64::MAX)));
    let mut metrics = Vec::new();
    let mut replicates = Vec::new();
    for &n in &cfg.sample_sizes {
        let results: Vec<ReplicateResult> = (0..cfg.n_replicates)
            .into_par_iter()
            .map(|rep| run_replicate(cfg, n, rep, truth))
            .collect();
        metrics.push(summarize(n, &results, truth));
        replicates.extend(results);
    }
    Ok(SimReport {
        config: cfg.clone(),
        truth,
        oracle_monte_carlo,
        metrics,
        replicates,
    })
}

impl SimReport {
    /// Summary table as CSV: `n,psi_hat,abs_bias,sqrt_n_abs_bias,coverage,...`.
    pub fn write_metrics_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for m in &self.metrics {
            w.serialize(m)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "<metrics csv>".into(),
            source,
        })?;
        Ok(())
    }

    /// Writes `<stem>.csv` (summary table), `<stem>_replicates.csv` and `<stem>.json`.
    pub fn write_files(&self, dir: &Path, stem: &str) -> Result<()> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| Error::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let csv_path = dir.join(format!("{stem}.csv"));
        self.write_metrics_csv(std::fs::File::create(&csv_path).map_err(io(&csv_path))?)?;
        let rep_path = dir.join(format!("{stem}_replicates.csv"));
        let mut w = csv::Writer::from_path(&rep_path)?;
        for r in &self.replicates {
            w.serialize(r)?;
        }
        w.flush().map_err(io(&rep_path))?;
        let json_path = dir.join(format!("{stem}.json"));
        let file = std::fs::File::create(&json_path).map_err(io(&json_path))?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }
}
