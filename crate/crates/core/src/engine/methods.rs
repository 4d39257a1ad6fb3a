use serde_json::json;

use super::{
    axpy, EngineError, EventQueue, Method, Progress, Recorder, RunConfig, RunRecord, RunStatus,
    Scenario, WorkerStreams,
};
use crate::planner::{MindFlayerPlan, VecnaPlan};
use crate::timemodel::{trial_duration, ClusterModel, ExtendedTime};

/// Outcome of one synchronous round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundStats {
    pub time: ExtendedTime,
    pub used: u64,
    pub trials: u64,
}

/// Clipped trials per worker with a per-worker weight on the gradient sum.
#[derive(Debug, Clone, PartialEq)]
pub struct ClippedRound {
    pub clips: Vec<ExtendedTime>,
    pub trials: Vec<u64>,
    pub weights: Vec<f64>,
}

impl ClippedRound {
    fn new(t: &[f64], trials: &[u64], weights: Vec<f64>) -> Self {
        ClippedRound {
            clips: t.iter().map(|&v| ExtendedTime::new(v).expect("plan clip times are valid")).collect(),
            trials: trials.to_vec(),
            weights,
        }
    }
}

/// One round of clipped trials at the frozen iterate `x`.
///
/// Worker `i` runs its `B_i` trials back to back; the round lasts as long as
/// the slowest worker. `g` receives `sum_i w_i * (sum of worker i's successful
/// stochastic gradients)`.
pub fn clipped_round(
    scenario: &Scenario<'_>,
    round: &ClippedRound,
    x: &[f64],
    streams: &mut WorkerStreams,
    g: &mut [f64],
    scratch: &mut [f64],
) -> RoundStats {
    g.iter_mut().for_each(|v| *v = 0.0);
    let mut time = ExtendedTime::ZERO;
    let mut used = 0;
    let mut trials = 0;
    for (i, w) in scenario.cluster.workers().iter().enumerate() {
        let b = round.trials[i];
        if b == 0 {
            continue;
        }
        let mut elapsed = ExtendedTime::ZERO;
        let mut successes = 0;
        for _ in 0..b {
            let eta = w.delay.sample(&mut streams.delay[i]);
            let (duration, ok) = trial_duration(w.tau, round.clips[i], eta);
            elapsed = elapsed + duration;
            successes += ok as u64;
        }
        time = time.max(elapsed);
        trials += b;
        used += successes;
        if successes > 0 {
            scenario.workload.worker_oracle(i).stochastic_grad_sum_into(
                x,
                successes,
                &mut streams.noise[i],
                scratch,
            );
            let wi = round.weights[i];
            g.iter_mut().zip(scratch.iter()).for_each(|(a, s)| *a += wi * s);
        }
    }
    RoundStats { time, used, trials }
}

fn check_plan_size(cluster: &ClusterModel, got: usize) -> Result<(), EngineError> {
    if got != cluster.len() {
        return Err(EngineError::PlanMismatch {
            expected: cluster.len(),
            got,
        });
    }
    Ok(())
}

/// Shared loop for methods that step once per synchronous round.
fn run_rounds(
    name: &str,
    gamma: f64,
    scenario: &Scenario<'_>,
    cfg: &RunConfig,
    seed: u64,
    mut round: impl FnMut(&[f64], &mut WorkerStreams, &mut [f64]) -> RoundStats,
) -> Result<RunRecord, EngineError> {
    cfg.validate()?;
    let objective = scenario.objective();
    let mut x = cfg.initial_point(objective.dim())?;
    let mut g = vec![0.0; x.len()];
    let mut streams = WorkerStreams::new(seed, scenario.cluster.len());
    let mut rec = Recorder::new(objective, cfg);
    let mut now = 0.0;
    let mut progress = rec.record(&x, now, 0, 0, 0)?;
    let status = loop {
        if let Progress::Stop(status) = progress {
            break status;
        }
        let stats = round(&x, &mut streams, &mut g);
        if stats.time.is_infinite() {
            break RunStatus::Stalled { time: now };
        }
        let end = now + stats.time.value();
        if ExtendedTime::new(end).expect("finite") > cfg.time_budget {
            break RunStatus::BudgetExhausted;
        }
        now = end;
        axpy(&mut x, gamma, &g);
        progress = rec.record(&x, now, stats.used, stats.trials, 0)?;
    };
    Ok(rec.finish(name, seed, gamma, status, now, Vec::new()))
}

/// Clipped trials with the estimator normalized by the expected batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MindFlayer {
    pub plan: MindFlayerPlan,
    pub gamma: f64,
}

impl MindFlayer {
    /// Uses the plan's stepsize.
    pub fn new(plan: MindFlayerPlan) -> Self {
        let gamma = plan.gamma;
        MindFlayer { plan, gamma }
    }

    pub fn round(&self) -> ClippedRound {
        let w = 1.0 / self.plan.b_expected;
        ClippedRound::new(&self.plan.t, &self.plan.trials, vec![w; self.plan.t.len()])
    }
}

impl Method for MindFlayer {
    fn name(&self) -> &str {
        "mindflayer"
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn with_gamma(&self, gamma: f64) -> Box<dyn Method> {
        Box::new(MindFlayer {
            plan: self.plan.clone(),
            gamma,
        })
    }

    fn describe(&self) -> serde_json::Value {
        json!({"method": "mindflayer", "gamma": self.gamma, "plan": self.plan})
    }

    fn run(&self, scenario: &Scenario<'_>, cfg: &RunConfig, seed: u64) -> Result<RunRecord, EngineError> {
        check_plan_size(scenario.cluster, self.plan.t.len())?;
        let round = self.round();
        let mut scratch = vec![0.0; scenario.objective().dim()];
        run_rounds(self.name(), self.gamma, scenario, cfg, seed, |x, streams, g| {
            clipped_round(scenario, &round, x, streams, g, &mut scratch)
        })
    }
}

/// Clipped trials with each worker's sum normalized by `n p_i B_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vecna {
    pub plan: VecnaPlan,
    pub gamma: f64,
}

impl Vecna {
    pub fn new(plan: VecnaPlan) -> Self {
        let gamma = plan.gamma;
        Vecna { plan, gamma }
    }

    pub fn round(&self) -> ClippedRound {
        let n = self.plan.t.len() as f64;
        let weights = self
            .plan
            .p
            .iter()
            .zip(&self.plan.trials)
            .map(|(p, &b)| 1.0 / (n * p * b as f64))
            .collect();
        ClippedRound::new(&self.plan.t, &self.plan.trials, weights)
    }
}

impl Method for Vecna {
    fn name(&self) -> &str {
        "vecna"
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn with_gamma(&self, gamma: f64) -> Box<dyn Method> {
        Box::new(Vecna {
            plan: self.plan.clone(),
            gamma,
        })
    }

    fn describe(&self) -> serde_json::Value {
        json!({"method": "vecna", "gamma": self.gamma, "plan": self.plan})
    }

    fn run(&self, scenario: &Scenario<'_>, cfg: &RunConfig, seed: u64) -> Result<RunRecord, EngineError> {
        check_plan_size(scenario.cluster, self.plan.t.len())?;
        if let Some(m) = scenario.workload.components() {
            if m != scenario.cluster.len() {
                return Err(EngineError::ComponentMismatch {
                    components: m,
                    workers: scenario.cluster.len(),
                });
            }
        }
        let round = self.round();
        let mut scratch = vec![0.0; scenario.objective().dim()];
        run_rounds(self.name(), self.gamma, scenario, cfg, seed, |x, streams, g| {
            clipped_round(scenario, &round, x, streams, g, &mut scratch)
        })
    }
}

/// Synchronous SGD: one unclipped gradient per worker per round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minibatch {
    pub gamma: f64,
}

impl Method for Minibatch {
    fn name(&self) -> &str {
        "minibatch"
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn with_gamma(&self, gamma: f64) -> Box<dyn Method> {
        Box::new(Minibatch { gamma })
    }

    fn describe(&self) -> serde_json::Value {
        json!({"method": "minibatch", "gamma": self.gamma})
    }

    fn run(&self, scenario: &Scenario<'_>, cfg: &RunConfig, seed: u64) -> Result<RunRecord, EngineError> {
        let n = scenario.cluster.len();
        let inv_n = 1.0 / n as f64;
        let mut scratch = vec![0.0; scenario.objective().dim()];
        run_rounds(self.name(), self.gamma, scenario, cfg, seed, |x, streams, g| {
            g.iter_mut().for_each(|v| *v = 0.0);
            let mut time = ExtendedTime::ZERO;
            for (i, w) in scenario.cluster.workers().iter().enumerate() {
                time = time.max(w.sample_compute_time(&mut streams.delay[i]));
                scenario
                    .workload
                    .worker_oracle(i)
                    .stochastic_grad_into(x, &mut streams.noise[i], &mut scratch);
                g.iter_mut().zip(&scratch).for_each(|(a, s)| *a += inv_n * s);
            }
            RoundStats {
                time,
                used: n as u64,
                trials: n as u64,
            }
        })
    }
}

/// Asynchronous minibatch with stale-gradient rejection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rennala {
    pub batch: u64,
    pub gamma: f64,
}

impl Rennala {
    pub fn new(batch: u64, gamma: f64) -> Result<Self, EngineError> {
        if batch == 0 {
            return Err(EngineError::InvalidParams {
                method: "rennala".into(),
                message: "S must be at least 1".into(),
            });
        }
        Ok(Rennala { batch, gamma })
    }
}

impl Method for Rennala {
    fn name(&self) -> &str {
        "rennala"
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn with_gamma(&self, gamma: f64) -> Box<dyn Method> {
        Box::new(Rennala {
            batch: self.batch,
            gamma,
        })
    }

    fn describe(&self) -> serde_json::Value {
        json!({"method": "rennala", "gamma": self.gamma, "S": self.batch})
    }

    fn run(&self, scenario: &Scenario<'_>, cfg: &RunConfig, seed: u64) -> Result<RunRecord, EngineError> {
        cfg.validate()?;
        let objective = scenario.objective();
        let mut x = cfg.initial_point(objective.dim())?;
        let mut acc = vec![0.0; x.len()];
        let mut scratch = vec![0.0; x.len()];
        let mut streams = WorkerStreams::new(seed, scenario.cluster.len());
        let workers = scenario.cluster.workers();
        let mut queue = EventQueue::new();
        for (i, w) in workers.iter().enumerate() {
            queue.push(w.sample_compute_time(&mut streams.delay[i]), i, 0);
        }
        let mut rec = Recorder::new(objective, cfg);
        let mut now = 0.0;
        let mut k = 0u64;
        let (mut collected, mut completions, mut discarded) = (0u64, 0u64, 0u64);
        let mut progress = rec.record(&x, now, 0, 0, 0)?;
        let status = loop {
            if let Progress::Stop(status) = progress {
                break status;
            }
            if queue.is_stalled() {
                break RunStatus::Stalled { time: now };
            }
            let ev = queue.pop().expect("not stalled");
            if ev.time > cfg.time_budget {
                break RunStatus::BudgetExhausted;
            }
            now = ev.time.value();
            completions += 1;
            let i = ev.worker;
            if ev.assigned == k {
                scenario
                    .workload
                    .worker_oracle(i)
                    .stochastic_grad_into(&x, &mut streams.noise[i], &mut scratch);
                acc.iter_mut().zip(&scratch).for_each(|(a, s)| *a += s);
                collected += 1;
            } else {
                discarded += 1;
            }
            if collected == self.batch {
                axpy(&mut x, self.gamma / self.batch as f64, &acc);
                acc.iter_mut().for_each(|v| *v = 0.0);
                k += 1;
                progress = rec.record(&x, now, collected, completions, discarded)?;
                (collected, completions, discarded) = (0, 0, 0);
            }
            // The worker that completed the batch starts on the new iterate.
            let next = ExtendedTime::new(now).expect("finite") + workers[i].sample_compute_time(&mut streams.delay[i]);
            queue.push(next, i, k);
        };
        Ok(rec.finish(self.name(), seed, self.gamma, status, now, Vec::new()))
    }
}

/// Asynchronous SGD: every completed gradient is applied, however stale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Asgd {
    pub gamma: f64,
}

impl Method for Asgd {
    fn name(&self) -> &str {
        "asgd"
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn with_gamma(&self, gamma: f64) -> Box<dyn Method> {
        Box::new(Asgd { gamma })
    }

    fn describe(&self) -> serde_json::Value {
        json!({"method": "asgd", "gamma": self.gamma})
    }

    fn run(&self, scenario: &Scenario<'_>, cfg: &RunConfig, seed: u64) -> Result<RunRecord, EngineError> {
        cfg.validate()?;
        let objective = scenario.objective();
        let mut x = cfg.initial_point(objective.dim())?;
        let mut g = vec![0.0; x.len()];
        let mut streams = WorkerStreams::new(seed, scenario.cluster.len());
        let workers = scenario.cluster.workers();
        // Each worker computes at the iterate it was handed.
        let mut snapshots = vec![x.clone(); workers.len()];
        let mut queue = EventQueue::new();
        for (i, w) in workers.iter().enumerate() {
            queue.push(w.sample_compute_time(&mut streams.delay[i]), i, 0);
        }
        let mut rec = Recorder::new(objective, cfg);
        let mut staleness = Vec::new();
        let mut now = 0.0;
        let mut k = 0u64;
        let mut progress = rec.record(&x, now, 0, 0, 0)?;
        let status = loop {
            if let Progress::Stop(status) = progress {
                break status;
            }
            if queue.is_stalled() {
                break RunStatus::Stalled { time: now };
            }
            let ev = queue.pop().expect("not stalled");
            if ev.time > cfg.time_budget {
                break RunStatus::BudgetExhausted;
            }
            now = ev.time.value();
            let i = ev.worker;
            scenario
                .workload
                .worker_oracle(i)
                .stochastic_grad_into(&snapshots[i], &mut streams.noise[i], &mut g);
            axpy(&mut x, self.gamma, &g);
            staleness.push(k - ev.assigned);
            k += 1;
            snapshots[i].copy_from_slice(&x);
            let next = ExtendedTime::new(now).expect("finite") + workers[i].sample_compute_time(&mut streams.delay[i]);
            queue.push(next, i, k);
            progress = rec.record(&x, now, 1, 1, 0)?;
        };
        Ok(rec.finish(self.name(), seed, self.gamma, status, now, staleness))
    }
}
