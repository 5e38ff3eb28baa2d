//! Statistical acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::time::Instant;

use odtr::data::{self, CovariateBlock, RuleCovariateSpec};
use odtr::learners::linear::{lasso_coordinate_descent, LASSO_MAX_SWEEPS, LASSO_TOL};
use odtr::learners::ModelKind;
use odtr::rng::{derive_seed, seeded};
use odtr::rule::TreatmentRule;
use odtr::sim::{
    analytic_optimal_rule, generate_two_stage_dgm, oracle_closed_form, oracle_true_value, run_replications, stage1_blip,
    SimConfig, SimReport,
};
use odtr::single::NuisanceEstimates;
use odtr::{
    aipw_transform, apply_rule_all, discrete_super_learner, estimate_nuisances, learn_odtr, learn_odtr_single,
    learn_odtr_with_plans, rr_contrast, sdr_policy_value, sequential_aipw_transform, CrossFitPlan, Direction, Family,
    FeatureMatrix, LearnerConfig, LearnerSpec, SuperLearnerSpec,
};
use odtr::longitudinal::StageCache;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

type Dataset = data::LongitudinalDataset<f64>;

struct Outcome {
    label: String,
    pass: bool,
    detail: String,
}

#[derive(Default)]
struct Report {
    outcomes: Vec<Outcome>,
}

impl Report {
    fn check(&mut self, label: &str, pass: bool, detail: String) {
        println!("{} {label}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.outcomes.push(Outcome {
            label: label.to_string(),
            pass,
            detail,
        });
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn replication(n: usize, reps: usize) -> SimReport {
    let cfg = SimConfig {
        sample_sizes: vec![n],
        n_replicates: reps,
        seed: 2024,
        ..Default::default()
    };
    let start = Instant::now();
    let report = run_replications(&cfg).expect("simulation config is valid");
    let m = &report.metrics[0];
    println!(
        "  n={n} reps={reps}: mean psi {:.4}, |bias| {:.4}, coverage {:.3}, sd {:.4}, mean se {:.4}, failures {} ({:.0?})",
        m.psi_hat,
        m.abs_bias,
        m.coverage,
        m.empirical_sd,
        m.mean_se,
        m.failures,
        start.elapsed()
    );
    report
}

fn replication_and_oracle(report: &mut Report) {
    let truth = oracle_closed_form();
    let small = replication(500, 1000);
    let m = &small.metrics[0];
    report.check(
        "1a replication n=500",
        m.abs_bias <= 0.06 && (0.90..=0.96).contains(&m.coverage) && m.failures == 0,
        format!("|bias| {:.4} (<= 0.06), coverage {:.3} (in [0.90, 0.96]), failures {}", m.abs_bias, m.coverage, m.failures),
    );
    let large = replication(10_000, 200);
    let m = &large.metrics[0];
    report.check(
        "1b replication n=10000",
        m.abs_bias <= 0.02 && m.failures == 0,
        format!("|bias| {:.4} (<= 0.02), failures {}", m.abs_bias, m.failures),
    );

    let mc = oracle_true_value(10_000_000, 99);
    report.check(
        "2a oracle closed form vs Monte Carlo",
        (truth - mc).abs() <= 0.003,
        format!("closed form {truth:.5}, Monte Carlo (M=1e7) {mc:.5}"),
    );
    report.check(
        "2b mean estimate near oracle at n=10000",
        (m.psi_hat - truth).abs() <= 0.05,
        format!("mean psi {:.4} vs {truth:.4}", m.psi_hat),
    );
}

fn full_vspec() -> RuleCovariateSpec {
    RuleCovariateSpec::new(vec![vec!["W1".into(), "W2".into()], vec!["W1".into(), "W2".into(), "A1".into(), "W3".into()]])
}

fn rule_recovery_rates(seed: u64) -> (f64, f64) {
    let data = generate_two_stage_dgm::<f64>(10_000, seed);
    let fitted = learn_odtr(&data, &full_vspec(), &LearnerConfig::default(), Direction::Maximize, seed).unwrap();
    let d = apply_rule_all(&fitted.rule(), &data).unwrap();
    let (w1, w2) = (&data.covariates(1).columns[0], &data.covariates(1).columns[1]);
    let agree = (0..10_000)
        .filter(|&i| d[0][i] == (stage1_blip(w1[i], w2[i]) > 0.0) as u8)
        .count();
    let zeros = d[1].iter().filter(|&&v| v == 0).count();
    (agree as f64 / 1e4, zeros as f64 / 1e4)
}

fn rule_recovery(report: &mut Report) {
    let (agree, zeros) = rule_recovery_rates(7);
    report.check(
        "3 analytic rule recovery n=10000",
        zeros >= 0.95 && agree >= 0.90,
        format!("stage-2 zeros {zeros:.4} (>= 0.95), stage-1 agreement {agree:.4} (>= 0.90)"),
    );
    let rates: Vec<(f64, f64)> = (100..110).map(rule_recovery_rates).collect();
    let both = rates.iter().filter(|(a, z)| *z >= 0.95 && *a >= 0.90).count();
    println!(
        "  across 10 further datasets: {both}/10 meet both thresholds, mean stage-1 agreement {:.4}, mean stage-2 zeros {:.4}",
        mean(&rates.iter().map(|r| r.0).collect::<Vec<_>>()),
        mean(&rates.iter().map(|r| r.1).collect::<Vec<_>>())
    );
}

fn one_stage(data: &Dataset) -> Dataset {
    Dataset::new(
        vec![data.covariates(1).clone()],
        vec!["A1".into()],
        vec![data.treatment(1).to_vec()],
        "Y".into(),
        data.outcome().to_vec(),
    )
    .unwrap()
}

fn reduction(report: &mut Report) {
    let mut ok = true;
    let mut units = 0;
    for seed in 0..5 {
        let data = one_stage(&generate_two_stage_dgm::<f64>(1000, seed));
        let v = RuleCovariateSpec::new(vec![vec!["W1".into(), "W2".into()]]);
        let cfg = LearnerConfig::default();
        let plan = cfg.plan(1000, seed, 1).unwrap();
        let (fitted, trace) =
            learn_odtr_with_plans(&data, &v, &cfg, Direction::Maximize, std::slice::from_ref(&plan)).unwrap();
        let single = learn_odtr_single(&data, 1, &v, &cfg, Direction::Maximize, &plan).unwrap();
        let nuis = estimate_nuisances(&data, 1, data.outcome(), &cfg, &plan).unwrap();
        let pseudo = aipw_transform(data.outcome(), &nuis, data.treatment(1)).unwrap();
        let same_bits = trace.pseudo_outcomes[0]
            .d
            .iter()
            .zip(&pseudo.d)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        ok &= same_bits && fitted.stages.len() == 1 && fitted.stages[0] == single;
        units += 1000;
    }
    report.check(
        "4 one-stage reduction",
        ok,
        format!("rules and pseudo-outcomes bitwise equal on 5 datasets ({units} units)"),
    );
}

fn random_nuisances(rng: &mut impl Rng, a: &[u8]) -> NuisanceEstimates<f64> {
    let n = a.len();
    let q1: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let q0: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    NuisanceEstimates {
        qa: (0..n).map(|i| if a[i] == 1 { q1[i] } else { q0[i] }).collect(),
        q1,
        q0,
        g: (0..n).map(|_| rng.gen_range(0.1..0.9)).collect(),
        clipped: 0,
        outcome_learner: 0,
        propensity_learner: 0,
    }
}

/// Literal sum over s of the lead weight, the compliance products and the
/// stage residuals.
fn double_sum(caches: &[StageCache<f64>], y: &[f64], i: usize) -> f64 {
    let tau = caches.len();
    let first = &caches[0];
    let lead = if first.a[i] == 1 { 1.0 } else { -1.0 } / first.nuisances.g[i];
    let q_at_d = |c: &StageCache<f64>| if c.d[i] == 1 { c.nuisances.q1[i] } else { c.nuisances.q0[i] };
    let mut total = 0.0;
    for s in 0..tau {
        let mut product = 1.0;
        for c in &caches[1..=s] {
            product *= if c.a[i] == c.d[i] { 1.0 / c.nuisances.g[i] } else { 0.0 };
        }
        let next = if s + 1 == tau { y[i] } else { q_at_d(&caches[s + 1]) };
        total += lead * product * (next - caches[s].nuisances.qa[i]);
    }
    total + first.nuisances.q1[i] - first.nuisances.q0[i]
}

fn brute_force(report: &mut Report) {
    let mut worst = 0.0f64;
    for instance in 0..100u64 {
        let mut rng = seeded(derive_seed(31, instance));
        let n = rng.gen_range(1..=20);
        let tau = rng.gen_range(1..=3);
        let caches: Vec<StageCache<f64>> = (0..tau)
            .map(|_| {
                let a: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
                let nuisances = random_nuisances(&mut rng, &a);
                let d = (0..n).map(|_| rng.gen_range(0..2)).collect();
                StageCache { nuisances, a, d }
            })
            .collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let out = sequential_aipw_transform(&caches[0].nuisances, &caches[0].a, &caches[1..], &y, 1e4).unwrap();
        for i in 0..n {
            worst = worst.max((out.pseudo.d[i] - double_sum(&caches, &y, i)).abs());
        }
    }
    report.check(
        "5 recursion vs double sum",
        worst <= 1e-12,
        format!("max abs difference {worst:.2e} over 100 instances"),
    );
}

/// One decision point, confounded by `X1`, with treatment effect `1 + X2` and ATE 1.
fn dr_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = seeded(seed);
    let x1: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x2: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let a: Vec<u8> = (0..n)
        .map(|i| {
            let p = 1.0 / (1.0 + (-(1.5 * x1[i] - 0.5 * x2[i])).exp());
            (rng.gen::<f64>() < p) as u8
        })
        .collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let noise: f64 = StandardNormal.sample(&mut rng);
            1.0 + 2.0 * x1[i] + x2[i] + a[i] as f64 * (1.0 + x2[i]) + noise
        })
        .collect();
    Dataset::new(
        vec![CovariateBlock {
            names: vec!["X1".into(), "X2".into()],
            columns: vec![x1, x2],
        }],
        vec!["A".into()],
        vec![a],
        "Y".into(),
        y,
    )
    .unwrap()
}

fn ate(data: &Dataset, outcome: LearnerSpec, propensity: LearnerSpec) -> (f64, f64) {
    let cfg = LearnerConfig {
        outcome: SuperLearnerSpec::single(outcome),
        propensity: SuperLearnerSpec::single(propensity),
        folds: Some(5),
        ..Default::default()
    };
    let plan = cfg.plan(data.n_units(), 3, 1).unwrap();
    let nuis = estimate_nuisances(data, 1, data.outcome(), &cfg, &plan).unwrap();
    let pseudo = aipw_transform(data.outcome(), &nuis, data.treatment(1)).unwrap();
    (mean(&pseudo.d), sd(&pseudo.d) / (pseudo.d.len() as f64).sqrt())
}

fn double_robustness(report: &mut Report) {
    let data = dr_dataset(100_000, 17);
    let correct_q = LearnerSpec::PenalizedLinear {
        lambda: 0.0,
        penalty: odtr::learners::Penalty::Lasso,
        interactions: true,
    };
    let correct_g = LearnerSpec::logistic(0.0);
    let cases = [
        ("correct g, intercept Q", LearnerSpec::Intercept, correct_g, true),
        ("correct Q, intercept g", correct_q, LearnerSpec::Intercept, true),
        ("intercept Q and g", LearnerSpec::Intercept, LearnerSpec::Intercept, false),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, q, g, should_recover) in cases {
        let (est, se) = ate(&data, q, g);
        let z = (est - 1.0).abs() / se;
        ok &= (z <= 3.0) == should_recover;
        parts.push(format!("{name}: {est:.4} (z {z:.1})"));
    }
    report.check("6 double robustness n=1e5", ok, parts.join("; "));
}

fn lasso_kkt(report: &mut Report) {
    let mut worst = 0.0f64;
    for problem in 0..100u64 {
        let mut rng = seeded(derive_seed(41, problem));
        let n = rng.gen_range(20..200);
        let p = rng.gen_range(1..12);
        let lambda = rng.gen_range(0.0..0.3);
        let columns: Vec<Vec<f64>> = (0..p).map(|_| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let beta: Vec<f64> = (0..p).map(|j| if j % 3 == 0 { rng.gen_range(-2.0..2.0) } else { 0.0 }).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| 0.5 + (0..p).map(|j| columns[j][i] * beta[j]).sum::<f64>() + rng.gen_range(-1.0..1.0))
            .collect();
        let sol = lasso_coordinate_descent(&columns, &y, lambda, LASSO_TOL, LASSO_MAX_SWEEPS);
        let residual: Vec<f64> = (0..n)
            .map(|i| y[i] - sol.intercept - (0..p).map(|j| columns[j][i] * sol.coefficients[j]).sum::<f64>())
            .collect();
        for (j, col) in columns.iter().enumerate() {
            let m = mean(col);
            let grad = col.iter().zip(&residual).map(|(x, r)| (x - m) * r).sum::<f64>() / n as f64;
            let b = sol.coefficients[j];
            let violation = if b == 0.0 { (grad.abs() - lambda).max(0.0) } else { (grad - lambda * b.signum()).abs() };
            worst = worst.max(violation);
        }
        worst = worst.max(mean(&residual).abs());
    }
    report.check("7a lasso KKT", worst < 1e-6, format!("max violation {worst:.2e} over 100 problems"));
}

fn selection_rate(signal: impl Fn(f64, f64) -> f64, winner: impl Fn(&ModelKind<f64>) -> bool) -> usize {
    let library = SuperLearnerSpec::new(vec![
        LearnerSpec::Intercept,
        LearnerSpec::lasso(1e-3),
        LearnerSpec::GradientBoostedTrees {
            num_trees: 50,
            max_depth: 3,
            learning_rate: 0.2,
            min_leaf_size: 20,
        },
    ]);
    (0..100u64)
        .filter(|&run| {
            let mut rng = seeded(derive_seed(53, run));
            let n = 1000;
            let x1: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x2: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..n)
                .map(|i| signal(x1[i], x2[i]) + 0.5 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect();
            let x = FeatureMatrix::new(vec!["X1".into(), "X2".into()], vec![x1, x2], n).unwrap();
            let plan = CrossFitPlan::new(n, CrossFitPlan::default_folds(n), run).unwrap();
            let fit = discrete_super_learner(&library, &x, &y, Family::Squared, &plan).unwrap();
            winner(&fit.model.model)
        })
        .count()
}

fn super_learner(report: &mut Report) {
    let linear = selection_rate(|a, b| 1.0 + 2.0 * a - b, |m| matches!(m, ModelKind::Linear { .. }));
    let trees = selection_rate(
        |a, b| if a > 0.2 { 2.0 } else { 0.0 } + if b < -0.3 { -1.5 } else { 0.0 },
        |m| matches!(m, ModelKind::Boosted(_)),
    );
    report.check(
        "7b super learner picks the generating class",
        linear >= 90 && trees >= 90,
        format!("linear truth -> linear {linear}/100, step truth -> trees {trees}/100"),
    );
}

fn ci_behavior(report: &mut Report) {
    let rule: TreatmentRule<f64> = analytic_optimal_rule();
    let cfg = LearnerConfig::default();
    let sizes = [500usize, 2000, 8000];
    let widths: Vec<f64> = sizes
        .iter()
        .map(|&n| {
            let w: Vec<f64> = (0..5u64)
                .map(|s| {
                    let data = generate_two_stage_dgm::<f64>(n, derive_seed(61, s));
                    let est = sdr_policy_value(&data, &rule, &cfg, s, 0.05).unwrap();
                    (est.ci.1 - est.ci.0).ln()
                })
                .collect();
            mean(&w)
        })
        .collect();
    let xs: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let (mx, my) = (mean(&xs), mean(&widths));
    let slope = xs.iter().zip(&widths).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    report.check(
        "8a interval width rate",
        (slope + 0.5).abs() <= 0.1,
        format!("log-width vs log-n slope {slope:.3} (-0.5 +/- 0.1)"),
    );

    let data = generate_two_stage_dgm::<f64>(2000, 71);
    let est = sdr_policy_value(&data, &rule, &cfg, 71, 0.05).unwrap();
    let rr = rr_contrast(&est, &est, 0.05).unwrap();
    report.check(
        "8b self risk ratio",
        rr.rr == 1.0 && rr.log_rr_se == 0.0 && rr.ci == (1.0, 1.0),
        format!("rr {}, se {}, ci ({}, {})", rr.rr, rr.log_rr_se, rr.ci.0, rr.ci.1),
    );
}

fn main() {
    let start = Instant::now();
    let mut report = Report::default();
    brute_force(&mut report);
    reduction(&mut report);
    lasso_kkt(&mut report);
    super_learner(&mut report);
    double_robustness(&mut report);
    ci_behavior(&mut report);
    rule_recovery(&mut report);
    replication_and_oracle(&mut report);

    let failed: Vec<&Outcome> = report.outcomes.iter().filter(|o| !o.pass).collect();
    println!(
        "acceptance: {}/{} passed in {:.0?}",
        report.outcomes.len() - failed.len(),
        report.outcomes.len(),
        start.elapsed()
    );
    if !failed.is_empty() {
        for o in failed {
            eprintln!("failed: {} ({})", o.label, o.detail);
        }
        std::process::exit(1);
    }
}
