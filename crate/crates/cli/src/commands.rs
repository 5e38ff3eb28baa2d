use std::fs;
use std::path::Path;

use odtr::rule::TreatmentRule;
use odtr::sim::{generate_two_stage_dgm, run_replications, SimConfig};
use odtr::{
    difference_contrast, learn_odtr, load_csv, rr_contrast, sdr_policy_value, Direction, Error, FittedODTR,
    LearnerConfig, LongitudinalDataset, Result, RuleCovariateSpec, Schema,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::{CompareArgs, Common, DataArgs, EvaluateArgs, GenerateArgs, LearnArgs, SimulateArgs};

/// Everything that determines a run besides the input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub alpha: f64,
    pub direction: Direction,
    pub learners: LearnerConfig,
    pub sample_sizes: Vec<usize>,
    pub n_replicates: usize,
    pub oracle_draws: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            seed: sim.seed,
            alpha: sim.alpha,
            direction: Direction::Maximize,
            learners: sim.learners,
            sample_sizes: sim.sample_sizes,
            n_replicates: sim.n_replicates,
            oracle_draws: sim.oracle_draws,
        }
    }
}

impl RunConfig {
    fn load(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(path) => serde_json::from_str(&read(path)?)?,
            None => Self::default(),
        };
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    fn with(mut self, alpha: Option<f64>, direction: Option<Direction>) -> Result<Self> {
        if let Some(a) = alpha {
            self.alpha = a;
        }
        if let Some(d) = direction {
            self.direction = d;
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        self.learners.validate()?;
        Ok(self)
    }

    fn simulation(&self) -> SimConfig {
        SimConfig {
            sample_sizes: self.sample_sizes.clone(),
            n_replicates: self.n_replicates,
            seed: self.seed,
            alpha: self.alpha,
            learners: self.learners.clone(),
            oracle_draws: self.oracle_draws,
        }
    }
}

pub fn init_threads(threads: Option<usize>) -> Result<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(Error::Config("--threads must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        }),
        _ => Ok(()),
    }
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    create_parent(path)?;
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct Loaded {
    data: LongitudinalDataset,
    vspec: RuleCovariateSpec,
}

fn load(args: &DataArgs) -> Result<Loaded> {
    let schema = Schema::from_path(&args.schema)?;
    let data = load_csv(&args.data, &schema)?;
    let vspec = schema
        .rule_covariates
        .clone()
        .unwrap_or_else(|| RuleCovariateSpec::full_history(&data));
    vspec.validate(&data)?;
    Ok(Loaded { data, vspec })
}

fn header(command: &str, cfg: &RunConfig, data: Option<&DataArgs>) -> serde_json::Map<String, Value> {
    let mut map = serde_json::Map::new();
    map.insert("command".into(), json!(command));
    map.insert("seed".into(), json!(cfg.seed));
    map.insert("config".into(), serde_json::to_value(cfg).expect("serializable"));
    if let Some(d) = data {
        map.insert("data".into(), json!(d.data));
        map.insert("schema".into(), json!(d.schema));
    }
    map
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.common)?.with(args.alpha, None)?;
    if !args.n.is_empty() {
        cfg.sample_sizes = args.n.clone();
    }
    if let Some(reps) = args.reps {
        cfg.n_replicates = reps;
    }
    let report = run_replications(&cfg.simulation())?;
    report.write_files(&args.common.out, "simulation")
}

pub fn generate(args: GenerateArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.common)?;
    if args.n < 2 {
        return Err(Error::Config(format!("--n must be at least 2, got {}", args.n)));
    }
    let data: LongitudinalDataset = generate_two_stage_dgm(args.n, cfg.seed);
    let dir = &args.common.out;
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.clone(),
        source,
    })?;
    let csv_path = dir.join("data.csv");
    let file = fs::File::create(&csv_path).map_err(|source| Error::Io { path: csv_path, source })?;
    data.write_csv(file)?;
    let schema = Schema::for_dataset(&data, Some(RuleCovariateSpec::full_history(&data)));
    write_json(&dir.join("schema.json"), &schema.to_json())
}

pub fn learn(args: LearnArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.common)?.with(None, args.direction)?;
    let loaded = load(&args.data)?;
    let fitted = learn_odtr(&loaded.data, &loaded.vspec, &cfg.learners, cfg.direction, cfg.seed)?;
    let mut out = header("learn", &cfg, Some(&args.data));
    out.insert("rule".into(), serde_json::to_value(&fitted)?);
    write_json(&args.common.out, &Value::Object(out))
}

/// Resolves a rule argument, learning at most once per run for `learned`.
struct RuleResolver<'a> {
    loaded: &'a Loaded,
    cfg: &'a RunConfig,
    learned: Option<TreatmentRule<f64>>,
}

impl RuleResolver<'_> {
    fn resolve(&mut self, spec: &str) -> Result<TreatmentRule<f64>> {
        match spec {
            "static:0" => Ok(TreatmentRule::StaticAll { value: 0 }),
            "static:1" => Ok(TreatmentRule::StaticAll { value: 1 }),
            "observed" => Ok(TreatmentRule::ObservedTreatment),
            "learned" => {
                if self.learned.is_none() {
                    let (data, vspec, cfg) = (&self.loaded.data, &self.loaded.vspec, self.cfg);
                    let fitted = learn_odtr(data, vspec, &cfg.learners, cfg.direction, cfg.seed)?;
                    self.learned = Some(fitted.in_sample_rule());
                }
                Ok(self.learned.clone().expect("set above"))
            }
            path => rule_from_file(Path::new(path)),
        }
    }
}

/// Accepts a `learn` report, a bare fitted rule, or a tagged rule object.
fn rule_from_file(path: &Path) -> Result<TreatmentRule<f64>> {
    if !path.exists() {
        return Err(Error::Config(format!(
            "rule `{}` is neither static:0, static:1, observed, learned nor an existing file",
            path.display()
        )));
    }
    let value: Value = serde_json::from_str(&read(path)?)?;
    if let Some(inner) = value.get("rule").filter(|v| v.is_object()) {
        let fitted: FittedODTR = serde_json::from_value(inner.clone())?;
        return Ok(fitted.rule());
    }
    if value.get("stages").is_some() && value.get("rule_covariates").is_some() {
        let fitted: FittedODTR = serde_json::from_value(value)?;
        return Ok(fitted.rule());
    }
    Ok(serde_json::from_value(value)?)
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.common)?.with(args.alpha, args.direction)?;
    let loaded = load(&args.data)?;
    let mut resolver = RuleResolver {
        loaded: &loaded,
        cfg: &cfg,
        learned: None,
    };
    let rule = resolver.resolve(&args.rule)?;
    let est = sdr_policy_value(&loaded.data, &rule, &cfg.learners, cfg.seed, cfg.alpha)?;
    let mut out = header("evaluate", &cfg, Some(&args.data));
    out.insert("rule".into(), json!(args.rule));
    out.insert("n".into(), json!(loaded.data.n_units()));
    out.insert("estimate".into(), serde_json::to_value(&est)?);
    write_json(&args.common.out, &Value::Object(out))
}

pub fn compare(args: CompareArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.common)?.with(args.alpha, args.direction)?;
    let loaded = load(&args.data)?;
    let mut resolver = RuleResolver {
        loaded: &loaded,
        cfg: &cfg,
        learned: None,
    };
    let value = |resolver: &mut RuleResolver, spec: &str| -> Result<_> {
        let rule = resolver.resolve(spec)?;
        sdr_policy_value(&loaded.data, &rule, &cfg.learners, cfg.seed, cfg.alpha)
    };
    let reference = value(&mut resolver, &args.reference)?;
    let mut rows = Vec::new();
    for spec in &args.rules {
        let est = value(&mut resolver, spec)?;
        let rr = rr_contrast(&est, &reference, cfg.alpha)?;
        let diff = difference_contrast(&est, &reference, cfg.alpha)?;
        rows.push(json!({ "rule": spec, "estimate": est, "ratio": rr, "difference": diff }));
    }
    let mut out = header("compare", &cfg, Some(&args.data));
    out.insert("n".into(), json!(loaded.data.n_units()));
    out.insert("reference".into(), json!({ "rule": args.reference, "estimate": reference }));
    out.insert("comparisons".into(), Value::Array(rows));
    write_json(&args.common.out, &Value::Object(out))
}
