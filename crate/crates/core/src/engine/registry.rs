use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Asgd, EngineError, Method, MindFlayer, Minibatch, Rennala, Vecna};
use crate::planner::{
    choose_clip_times_median, choose_clip_times_optimize, choose_clip_times_quantile,
    default_quantile_grid, mindflayer_gamma, mindflayer_plan, vecna_plan, ProblemConstants,
};
use crate::timemodel::ClusterModel;

/// Everything a builder may consult to resolve `"theory"` parameters.
#[derive(Clone, Copy)]
pub struct MethodContext<'a> {
    pub cluster: &'a ClusterModel,
    pub constants: ProblemConstants,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaKeyword {
    Theory,
    Tune,
}

/// A stepsize, or a request to derive it from theory or by tuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaSpec {
    Value(f64),
    Keyword(GammaKeyword),
}

impl Default for GammaSpec {
    fn default() -> Self {
        GammaSpec::Keyword(GammaKeyword::Theory)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipRule {
    Median,
    Optimize,
}

/// Clip-time selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClipSpec {
    Explicit(Vec<f64>),
    Quantile { quantile: f64 },
    Rule(ClipRule),
}

impl Default for ClipSpec {
    fn default() -> Self {
        ClipSpec::Rule(ClipRule::Median)
    }
}

impl ClipSpec {
    pub fn resolve(&self, ctx: &MethodContext<'_>) -> Result<Vec<f64>, EngineError> {
        Ok(match self {
            ClipSpec::Explicit(t) => t.clone(),
            ClipSpec::Quantile { quantile } => choose_clip_times_quantile(ctx.cluster, *quantile)?,
            ClipSpec::Rule(ClipRule::Median) => choose_clip_times_median(ctx.cluster)?,
            ClipSpec::Rule(ClipRule::Optimize) => {
                choose_clip_times_optimize(
                    ctx.cluster,
                    ctx.constants.batch_target(),
                    &default_quantile_grid(),
                )?
                .t
            }
        })
    }
}

/// Rennala's batch size `S`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BatchSpec {
    Value(u64),
    Keyword(GammaKeyword),
}

impl Default for BatchSpec {
    fn default() -> Self {
        BatchSpec::Keyword(GammaKeyword::Theory)
    }
}

/// Which parameters the caller still has to tune before running.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tuning {
    pub gamma: bool,
    pub batch: bool,
}

pub struct BuiltMethod {
    pub method: Box<dyn Method>,
    pub tuning: Tuning,
}

type Builder = fn(&serde_json::Value, &MethodContext<'_>) -> Result<BuiltMethod, EngineError>;

/// Methods selectable by name.
pub struct MethodRegistry {
    builders: BTreeMap<String, Builder>,
}

impl Default for MethodRegistry {
    fn default() -> Self {
        let mut r = MethodRegistry {
            builders: BTreeMap::new(),
        };
        r.register("mindflayer", build_mindflayer);
        r.register("vecna", build_vecna);
        r.register("rennala", build_rennala);
        r.register("asgd", build_asgd);
        r.register("minibatch", build_minibatch);
        r
    }
}

impl MethodRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, builder: Builder) {
        self.builders.insert(name.to_string(), builder);
    }

    pub fn names(&self) -> Vec<&str> {
        self.builders.keys().map(String::as_str).collect()
    }

    /// Build `name` from its JSON parameter object (without the name key).
    pub fn build(
        &self,
        name: &str,
        params: &serde_json::Value,
        ctx: &MethodContext<'_>,
    ) -> Result<BuiltMethod, EngineError> {
        let builder = self
            .builders
            .get(name)
            .ok_or_else(|| EngineError::UnknownMethod(name.to_string()))?;
        builder(params, ctx)
    }
}

fn parse<T: DeserializeOwned>(method: &str, params: &serde_json::Value) -> Result<T, EngineError> {
    let params = if params.is_null() {
        serde_json::Value::Object(Default::default())
    } else {
        params.clone()
    };
    serde_json::from_value(params).map_err(|e| EngineError::InvalidParams {
        method: method.to_string(),
        message: e.to_string(),
    })
}

fn resolve_gamma(
    method: &str,
    spec: GammaSpec,
    theory: Option<f64>,
    fallback: f64,
) -> Result<(f64, bool), EngineError> {
    match spec {
        GammaSpec::Value(g) if g > 0.0 && g.is_finite() => Ok((g, false)),
        GammaSpec::Value(g) => Err(EngineError::InvalidParams {
            method: method.to_string(),
            message: format!("gamma must be positive, got {g}"),
        }),
        GammaSpec::Keyword(GammaKeyword::Theory) => theory.map(|g| (g, false)).ok_or_else(|| {
            EngineError::InvalidParams {
                method: method.to_string(),
                message: "no theoretical stepsize; give a number or \"tune\"".into(),
            }
        }),
        GammaSpec::Keyword(GammaKeyword::Tune) => Ok((theory.unwrap_or(fallback), true)),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ClippedParams {
    #[serde(default)]
    clip: ClipSpec,
    #[serde(default)]
    gamma: GammaSpec,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RennalaParams {
    #[serde(default, rename = "S")]
    batch: BatchSpec,
    #[serde(default)]
    gamma: GammaSpec,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GammaParams {
    #[serde(default)]
    gamma: GammaSpec,
}

fn build_mindflayer(params: &serde_json::Value, ctx: &MethodContext<'_>) -> Result<BuiltMethod, EngineError> {
    let p: ClippedParams = parse("mindflayer", params)?;
    let t = p.clip.resolve(ctx)?;
    let plan = mindflayer_plan(ctx.cluster, &t, &ctx.constants)?;
    let (gamma, tune) = resolve_gamma("mindflayer", p.gamma, Some(plan.gamma), plan.gamma)?;
    Ok(BuiltMethod {
        method: Box::new(MindFlayer { plan, gamma }),
        tuning: Tuning {
            gamma: tune,
            batch: false,
        },
    })
}

fn build_vecna(params: &serde_json::Value, ctx: &MethodContext<'_>) -> Result<BuiltMethod, EngineError> {
    let p: ClippedParams = parse("vecna", params)?;
    let t = p.clip.resolve(ctx)?;
    let plan = vecna_plan(ctx.cluster, &t, &ctx.constants)?;
    let (gamma, tune) = resolve_gamma("vecna", p.gamma, Some(plan.gamma), plan.gamma)?;
    Ok(BuiltMethod {
        method: Box::new(Vecna { plan, gamma }),
        tuning: Tuning {
            gamma: tune,
            batch: false,
        },
    })
}

fn theory_gamma(ctx: &MethodContext<'_>, batch: f64) -> f64 {
    let c = ctx.constants;
    mindflayer_gamma(c.smoothness, c.eps, c.sigma_sq, batch)
}

fn build_rennala(params: &serde_json::Value, ctx: &MethodContext<'_>) -> Result<BuiltMethod, EngineError> {
    let p: RennalaParams = parse("rennala", params)?;
    let theory_batch = ctx.constants.batch_target().ceil() as u64;
    let (batch, tune_batch) = match p.batch {
        BatchSpec::Value(s) => (s, false),
        BatchSpec::Keyword(GammaKeyword::Theory) => (theory_batch, false),
        BatchSpec::Keyword(GammaKeyword::Tune) => (theory_batch, true),
    };
    let theory = theory_gamma(ctx, batch as f64);
    let (gamma, tune_gamma) = resolve_gamma("rennala", p.gamma, Some(theory), theory)?;
    Ok(BuiltMethod {
        method: Box::new(Rennala::new(batch, gamma)?),
        tuning: Tuning {
            gamma: tune_gamma,
            batch: tune_batch,
        },
    })
}

fn build_asgd(params: &serde_json::Value, ctx: &MethodContext<'_>) -> Result<BuiltMethod, EngineError> {
    let p: GammaParams = parse("asgd", params)?;
    let fallback = 0.5 / ctx.constants.smoothness;
    let (gamma, tune) = resolve_gamma("asgd", p.gamma, None, fallback)?;
    Ok(BuiltMethod {
        method: Box::new(Asgd { gamma }),
        tuning: Tuning {
            gamma: tune,
            batch: false,
        },
    })
}

fn build_minibatch(params: &serde_json::Value, ctx: &MethodContext<'_>) -> Result<BuiltMethod, EngineError> {
    let p: GammaParams = parse("minibatch", params)?;
    let theory = theory_gamma(ctx, ctx.cluster.len() as f64);
    let (gamma, tune) = resolve_gamma("minibatch", p.gamma, Some(theory), theory)?;
    Ok(BuiltMethod {
        method: Box::new(Minibatch { gamma }),
        tuning: Tuning {
            gamma: tune,
            batch: false,
        },
    })
}
