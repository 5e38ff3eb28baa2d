//! Sequentially doubly robust value of a rule sequence, with influence-function
//! standard errors and risk-ratio contrasts.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::config::LearnerConfig;
use crate::data::LongitudinalDataset;
use crate::error::{Error, Result};
use crate::rule::{apply_rule_all, TreatmentRule};
use crate::scalar::{mean, sample_sd, Real};
use crate::single::estimate_nuisances;

/// `z_{1 - alpha / 2}` of the standard normal.
pub fn normal_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(std.inverse_cdf(1.0 - alpha / 2.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PolicyValueEstimate<T> {
    pub psi_hat: T,
    pub se: T,
    pub ci: (T, T),
    pub alpha: f64,
    /// Uncentered influence values, one per unit.
    #[serde(skip)]
    pub eif: Vec<T>,
    /// Share of units whose weights touched a clipped propensity or the product cap.
    pub clipped_weight_fraction: f64,
}

impl<T: Real> PolicyValueEstimate<T> {
    /// Mean, `sd / sqrt(n)` and Wald interval of the influence values.
    pub fn from_influence(eif: Vec<T>, alpha: f64) -> Result<Self> {
        if eif.is_empty() {
            return Err(Error::Dimension("no influence values".into()));
        }
        if eif.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("influence values"));
        }
        let z = T::lit(normal_quantile(alpha)?);
        let psi_hat = mean(&eif);
        let se = sample_sd(&eif) / T::from_count(eif.len()).sqrt();
        Ok(Self {
            psi_hat,
            se,
            ci: (psi_hat - z * se, psi_hat + z * se),
            alpha,
            eif,
            clipped_weight_fraction: 0.0,
        })
    }

    pub fn n(&self) -> usize {
        self.eif.len()
    }

    pub fn covers(&self, truth: T) -> bool {
        self.ci.0 <= truth && truth <= self.ci.1
    }
}

/// Ingredients of the influence function at one decision point.
#[derive(Debug, Clone, PartialEq)]
pub struct SdrStage<T> {
    pub a: Vec<u8>,
    /// Rule assignment `d_t`.
    pub d: Vec<u8>,
    /// Probability of the observed treatment.
    pub g: Vec<T>,
    /// `Q_t(H_t, d_t)`.
    pub qd: Vec<T>,
}

/// Uncentered influence values
/// `phi = Q_1(d_1) + sum_t prod_{k <= t} [1(A_k = d_k) / g_k] (Q_{t+1}(d_{t+1}) - Q_t(d_t))`
/// with `Q_{tau+1} = Y` and each product truncated at `weight_cap`.
/// Also returns, per unit, whether the cap was hit.
pub fn sdr_influence<T: Real>(stages: &[SdrStage<T>], y: &[T], weight_cap: T) -> Result<(Vec<T>, Vec<bool>)> {
    let n = y.len();
    if stages.is_empty() {
        return Err(Error::Dimension("at least one stage required".into()));
    }
    if stages
        .iter()
        .any(|s| s.a.len() != n || s.d.len() != n || s.g.len() != n || s.qd.len() != n)
    {
        return Err(Error::Dimension("stage components must match the outcome length".into()));
    }
    let tau = stages.len();
    let mut phi = Vec::with_capacity(n);
    let mut capped = vec![false; n];
    for i in 0..n {
        let mut value = stages[0].qd[i];
        let mut product = T::one();
        for t in 0..tau {
            let s = &stages[t];
            if s.a[i] != s.d[i] {
                break;
            }
            product /= s.g[i];
            if product > weight_cap {
                capped[i] = true;
            }
            let next = if t + 1 == tau { y[i] } else { stages[t + 1].qd[i] };
            value += product.min(weight_cap) * (next - s.qd[i]);
        }
        phi.push(value);
    }
    Ok((phi, capped))
}

/// Value of `rule` by backward sequential regression with the rule substituted.
/// Stage `t` uses folds `cfg.plan(n, seed, t)`.
pub fn sdr_policy_value<T: Real>(
    data: &LongitudinalDataset<T>,
    rule: &TreatmentRule<T>,
    cfg: &LearnerConfig,
    seed: u64,
    alpha: f64,
) -> Result<PolicyValueEstimate<T>> {
    cfg.validate()?;
    normal_quantile(alpha)?;
    let n = data.n_units();
    let tau = data.tau();
    let assignments = apply_rule_all(rule, data)?;
    let (g_lo, g_hi) = (cfg.g_min::<T>(), T::one() - cfg.g_min::<T>());

    let mut target = data.outcome().to_vec();
    let mut stages = Vec::with_capacity(tau);
    let mut touched_clip = vec![false; n];
    for t in (1..=tau).rev() {
        let plan = cfg.plan(n, seed, t)?;
        let nuis = estimate_nuisances(data, t, &target, cfg, &plan).map_err(|e| e.at_stage(t))?;
        let d = assignments[t - 1].clone();
        let qd = nuis.at_assignment(&d);
        let a = data.treatment(t).to_vec();
        for i in 0..n {
            if a[i] == d[i] && (nuis.g[i] <= g_lo || nuis.g[i] >= g_hi) {
                touched_clip[i] = true;
            }
        }
        target = qd.clone();
        stages.push(SdrStage { a, d, g: nuis.g, qd });
    }
    stages.reverse();
    let (phi, capped) = sdr_influence(&stages, data.outcome(), cfg.weight_cap())?;
    let flagged = touched_clip.iter().zip(&capped).filter(|(a, b)| **a || **b).count();
    let mut est = PolicyValueEstimate::from_influence(phi, alpha)?;
    est.clipped_weight_fraction = flagged as f64 / n as f64;
    Ok(est)
}

/// `psi_a / psi_b` with a log-scale influence-function interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ContrastEstimate<T> {
    pub rr: T,
    pub log_rr_se: T,
    pub ci: (T, T),
    pub alpha: f64,
}

/// `psi_a - psi_b` with an influence-function interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct DifferenceEstimate<T> {
    pub difference: T,
    pub se: T,
    pub ci: (T, T),
    pub alpha: f64,
}

fn check_paired<T: Real>(a: &PolicyValueEstimate<T>, b: &PolicyValueEstimate<T>) -> Result<()> {
    if a.n() != b.n() || a.n() == 0 {
        return Err(Error::Dimension(format!(
            "contrasts need influence values on the same units ({} vs {})",
            a.n(),
            b.n()
        )));
    }
    Ok(())
}

/// Risk ratio of two estimates computed on the same units.
pub fn rr_contrast<T: Real>(
    a: &PolicyValueEstimate<T>,
    b: &PolicyValueEstimate<T>,
    alpha: f64,
) -> Result<ContrastEstimate<T>> {
    check_paired(a, b)?;
    if !(a.psi_hat > T::zero() && b.psi_hat > T::zero()) {
        return Err(Error::Ratio(format!(
            "both values must be positive, got {} and {}",
            a.psi_hat, b.psi_hat
        )));
    }
    let z = T::lit(normal_quantile(alpha)?);
    let ic: Vec<T> = a
        .eif
        .iter()
        .zip(&b.eif)
        .map(|(&fa, &fb)| fa / a.psi_hat - fb / b.psi_hat)
        .collect();
    let log_rr_se = sample_sd(&ic) / T::from_count(ic.len()).sqrt();
    let rr = a.psi_hat / b.psi_hat;
    let log_rr = rr.ln();
    Ok(ContrastEstimate {
        rr,
        log_rr_se,
        ci: ((log_rr - z * log_rr_se).exp(), (log_rr + z * log_rr_se).exp()),
        alpha,
    })
}

/// Difference of two estimates computed on the same units.
pub fn difference_contrast<T: Real>(
    a: &PolicyValueEstimate<T>,
    b: &PolicyValueEstimate<T>,
    alpha: f64,
) -> Result<DifferenceEstimate<T>> {
    check_paired(a, b)?;
    let z = T::lit(normal_quantile(alpha)?);
    let ic: Vec<T> = a.eif.iter().zip(&b.eif).map(|(&fa, &fb)| fa - fb).collect();
    let difference = a.psi_hat - b.psi_hat;
    let se = sample_sd(&ic) / T::from_count(ic.len()).sqrt();
    Ok(DifferenceEstimate {
        difference,
        se,
        ci: (difference - z * se, difference + z * se),
        alpha,
    })
}
