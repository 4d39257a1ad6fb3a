//! Experiment configuration: parsing, validation, canonical form and hashing.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use hetsgd_core::analysis::{DelayFamily, DEFAULT_MAX_BINS};
use hetsgd_core::engine::{problem_constants, ClipSpec, RunConfig, StopRule};
use hetsgd_core::planner::ProblemConstants;
use hetsgd_core::problems::{ProblemInstance, ProblemSpec, Workload};
use hetsgd_core::timemodel::{
    sqrt_rule_taus, ClusterModel, DelayDistribution, ExtendedTime, WorkerProfile,
};

/// Top-level experiment description. Unknown keys are rejected everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub cluster: ClusterSpec,
    #[serde(default)]
    pub methods: Vec<MethodEntry>,
    pub eps: f64,
    #[serde(default)]
    pub budget: Budget,
    #[serde(default)]
    pub stop: StopRule,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub tuning: TuningSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histogram: Option<HistogramSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    pub tau: TauSpec,
    /// One law shared by every worker.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay: Option<DelayDistribution>,
    /// One law per worker.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delays: Option<Vec<DelayDistribution>>,
}

/// Minimum compute times: a literal list or the rule `"sqrt(i+1)"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauSpec {
    List(Vec<f64>),
    Rule(String),
}

impl ClusterSpec {
    pub fn taus(&self) -> Result<Vec<f64>> {
        let taus = match &self.tau {
            TauSpec::List(t) => t.clone(),
            TauSpec::Rule(rule) => {
                let compact: String = rule.chars().filter(|c| !c.is_whitespace()).collect();
                ensure!(
                    compact == "sqrt(i+1)",
                    "unknown tau rule {rule:?}; expected \"sqrt(i+1)\""
                );
                sqrt_rule_taus(
                    self.n
                        .ok_or_else(|| anyhow!("cluster.n is required with a tau rule"))?,
                )
            }
        };
        if let Some(n) = self.n {
            ensure!(
                taus.len() == n,
                "cluster.tau has {} entries but n = {n}",
                taus.len()
            );
        }
        ensure!(!taus.is_empty(), "cluster must have at least one worker");
        Ok(taus)
    }

    pub fn build(&self) -> Result<ClusterModel> {
        let taus = self.taus()?;
        let delays = match (&self.delay, &self.delays) {
            (Some(d), None) => vec![*d; taus.len()],
            (None, Some(ds)) => {
                ensure!(
                    ds.len() == taus.len(),
                    "cluster.delays has {} entries for {} workers",
                    ds.len(),
                    taus.len()
                );
                ds.clone()
            }
            _ => bail!("give exactly one of cluster.delay and cluster.delays"),
        };
        let workers = taus
            .iter()
            .zip(delays)
            .map(|(&tau, d)| WorkerProfile::new(tau, d))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ClusterModel::new(workers)?)
    }

    /// The shared delay law as a one-parameter family and its current value.
    pub fn family(&self) -> Result<(DelayFamily, f64)> {
        let d = self
            .delay
            .ok_or_else(|| anyhow!("this mode needs a shared cluster.delay"))?;
        Ok(match d {
            DelayDistribution::Lognormal { mu, s } => (DelayFamily::Lognormal { mu }, s),
            DelayDistribution::LogCauchy { location, scale } => {
                (DelayFamily::LogCauchy { location }, scale)
            }
            DelayDistribution::LogT { df, scale } => (DelayFamily::LogT { df }, scale),
            DelayDistribution::InfBernoulli { q } => (DelayFamily::InfBernoulli, q),
            DelayDistribution::Constant { .. } => {
                bail!("a constant delay is not a one-parameter family")
            }
        })
    }
}

/// One method to run. Everything besides `name` and `label` is passed to the
/// method's parameter parser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEntry {
    pub name: String,
    /// Distinguishes several entries of the same method in output names.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(flatten)]
    pub params: serde_json::Map<String, Value>,
}

impl MethodEntry {
    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.name)
    }

    pub fn params_value(&self) -> Value {
        Value::Object(self.params.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    #[serde(default = "infinite_time")]
    pub time: ExtendedTime,
    #[serde(default = "default_iterations")]
    pub iterations: u64,
}

fn infinite_time() -> ExtendedTime {
    ExtendedTime::INFINITY
}

fn default_iterations() -> u64 {
    1_000_000
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            time: infinite_time(),
            iterations: default_iterations(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningSpec {
    /// Stepsizes to try; `2^j / (2L)` for `j = -6..=4` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_grid: Option<Vec<f64>>,
    /// Rennala batch sizes to try; powers of two up to `max(n, S)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_grid: Option<Vec<u64>>,
    /// Seeds used for tuning; the run seeds when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Keep every `trace_stride`-th trace row (the first and last are always kept).
    #[serde(default = "one")]
    pub trace_stride: u64,
    /// Points on the common time grid of the summary.
    #[serde(default = "default_summary_points")]
    pub summary_points: usize,
}

fn one() -> u64 {
    1
}

fn default_summary_points() -> usize {
    200
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: None,
            trace_stride: 1,
            summary_points: default_summary_points(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Simulate every method at each value.
    #[default]
    Simulate,
    /// Rennala's convolved time distribution against MindFlayer's plans.
    Compare,
    /// Single-device time ratios on the first worker.
    Ratio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Dotted path into this config, e.g. `cluster.delay.s`.
    pub axis: String,
    pub values: Vec<Value>,
    #[serde(default)]
    pub mode: SweepMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundMethod {
    Rennala,
    Mindflayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSpec {
    pub method: RoundMethod,
    /// Rennala batch size; the theoretical one when absent.
    #[serde(default, rename = "S", skip_serializing_if = "Option::is_none")]
    pub batch: Option<u64>,
    /// MindFlayer clip times; medians when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<ClipSpec>,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin_width: Option<f64>,
    #[serde(default = "default_max_bins")]
    pub max_bins: usize,
    /// Convolution power; the planner's iteration count when absent.
    #[serde(default, rename = "K", skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u64>,
    #[serde(default = "default_levels")]
    pub quantiles: Vec<f64>,
}

fn default_draws() -> usize {
    10_000
}

fn default_max_bins() -> usize {
    DEFAULT_MAX_BINS
}

fn default_levels() -> Vec<f64> {
    vec![0.05, 0.25, 0.5, 0.75, 0.95]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSpec {
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_max_bins")]
    pub max_bins: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_grid: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantile_grid: Option<Vec<f64>>,
    /// Batch size of the single-device ratio curve.
    #[serde(default = "one")]
    pub batch: u64,
}

impl Default for CompareSpec {
    fn default() -> Self {
        CompareSpec {
            draws: default_draws(),
            max_bins: default_max_bins(),
            batch_grid: None,
            quantile_grid: None,
            batch: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).context("invalid config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Checks that serde cannot express.
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.eps > 0.0 && self.eps.is_finite(),
            "eps must be positive, got {}",
            self.eps
        );
        ensure!(!self.seeds.is_empty(), "seeds must not be empty");
        ensure!(
            self.budget.iterations > 0,
            "budget.iterations must be positive"
        );
        ensure!(
            self.output.trace_stride > 0,
            "output.trace_stride must be positive"
        );
        ensure!(
            self.output.summary_points >= 2,
            "output.summary_points must be at least 2"
        );
        self.cluster.build()?;
        let mut labels: Vec<&str> = self.methods.iter().map(MethodEntry::label).collect();
        labels.sort_unstable();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            bail!(
                "method label {:?} is used twice; set distinct \"label\"s",
                w[0]
            );
        }
        for l in &labels {
            ensure!(
                !l.is_empty()
                    && l.chars()
                        .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_'),
                "method label {l:?} may only contain letters, digits, '-' and '_'"
            );
        }
        if let Some(sweep) = &self.sweep {
            ensure!(!sweep.values.is_empty(), "sweep.values must not be empty");
        }
        if let Some(t) = &self.tuning.seeds {
            ensure!(!t.is_empty(), "tuning.seeds must not be empty");
        }
        Ok(())
    }

    /// Re-emitted form with sorted keys and defaults filled in.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    /// Hex SHA-256 of [`ExperimentConfig::canonical_json`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Copy with the value at a dotted path replaced, re-validated.
    pub fn with_path(&self, path: &str, value: Value) -> Result<Self> {
        let mut root = serde_json::to_value(self)?;
        let mut node = &mut root;
        let parts: Vec<&str> = path.split('.').collect();
        ensure!(
            parts.iter().all(|p| !p.is_empty()),
            "malformed path {path:?}"
        );
        let (last, parents) = parts.split_last().expect("nonempty path");
        for part in parents {
            node = match node {
                Value::Object(m) => m.get_mut(*part),
                Value::Array(a) => part.parse::<usize>().ok().and_then(|i| a.get_mut(i)),
                _ => None,
            }
            .ok_or_else(|| anyhow!("path {path:?}: no field {part:?}"))?;
        }
        match node {
            Value::Object(m) => {
                m.insert(last.to_string(), value);
            }
            Value::Array(a) => {
                let slot = last
                    .parse::<usize>()
                    .ok()
                    .and_then(|i| a.get_mut(i))
                    .ok_or_else(|| anyhow!("path {path:?}: no element {last:?}"))?;
                *slot = value;
            }
            _ => bail!("path {path:?} does not lead into an object"),
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(root).with_context(|| format!("after setting {path}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            x0: self.x0.clone(),
            eps: self.eps,
            time_budget: self.budget.time,
            iter_budget: self.budget.iterations,
            stop: self.stop,
        }
    }

    pub fn tuning_seeds(&self) -> Vec<u64> {
        self.tuning
            .seeds
            .clone()
            .unwrap_or_else(|| self.seeds.clone())
    }

    /// Output directory: the flag, then the config, then `env`, then `hetsgd-out`.
    pub fn output_dir(&self, flag: Option<&Path>, env: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output.dir.clone())
            .or_else(|| env.map(Path::to_path_buf))
            .unwrap_or_else(|| PathBuf::from("hetsgd-out"))
    }
}

/// The problem and cluster built from a config, with derived constants.
pub struct Setup {
    pub problem: ProblemInstance,
    pub cluster: ClusterModel,
    pub constants: ProblemConstants,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let problem = cfg.problem.build()?;
        let cluster = cfg.cluster.build()?;
        let objective = problem.objective();
        let x0 = cfg.run_config().initial_point(objective.dim())?;
        let constants = problem_constants(objective, &x0, cfg.eps);
        Ok(Setup {
            problem,
            cluster,
            constants,
        })
    }
}
