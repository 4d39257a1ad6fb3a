//! Objective oracles: the tridiagonal quadratic benchmark with Gaussian
//! gradient noise, and a heterogeneous family of shifted copies of it.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SimRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("need at least one component")]
    NoComponents,
    #[error("invalid {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("conjugate gradients did not reach residual {tol:e} in {iterations} iterations (residual {residual:e})")]
    CgNotConverged {
        iterations: usize,
        residual: f64,
        tol: f64,
    },
    #[error("vector of length {got} does not match dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// First-order stochastic oracle for a smooth function bounded below.
pub trait Oracle: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn grad_into(&self, x: &[f64], out: &mut [f64]);
    /// Unbiased gradient estimate with variance at most `sigma_sq`.
    fn stochastic_grad_into(&self, x: &[f64], rng: &mut SimRng, out: &mut [f64]);
    /// Lipschitz constant of the gradient.
    fn smoothness(&self) -> f64;
    fn f_inf(&self) -> f64;
    fn sigma_sq(&self) -> f64;

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.grad_into(x, &mut g);
        g
    }

    /// Sum of `count` independent estimates at the same `x`.
    fn stochastic_grad_sum_into(&self, x: &[f64], count: u64, rng: &mut SimRng, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut g = vec![0.0; out.len()];
        for _ in 0..count {
            self.stochastic_grad_into(x, rng, &mut g);
            out.iter_mut().zip(&g).for_each(|(o, v)| *o += v);
        }
    }
}

/// What the simulator needs from a problem: the objective it reports on and
/// the oracle each worker samples.
pub trait Workload: Send + Sync {
    fn objective(&self) -> &dyn Oracle;
    fn worker_oracle(&self, worker: usize) -> &dyn Oracle;
    /// Number of distinct per-worker components, or `None` when every worker
    /// samples the objective itself.
    fn components(&self) -> Option<usize>;
}

/// `f(x) = 1/2 x^T A x - b^T x` with `A = 1/4 tridiag(-1, 2, -1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    b: Vec<f64>,
    noise_std: f64,
    f_inf: f64,
}

const DIAG: f64 = 0.5;
const OFF: f64 = -0.25;

/// `y = A x` for the tridiagonal benchmark matrix.
pub fn tridiag_apply(x: &[f64], y: &mut [f64]) {
    let d = x.len();
    for i in 0..d {
        let mut v = DIAG * x[i];
        if i > 0 {
            v += OFF * x[i - 1];
        }
        if i + 1 < d {
            v += OFF * x[i + 1];
        }
        y[i] = v;
    }
}

/// Largest eigenvalue of `A`: `(1 + cos(pi / (d + 1))) / 2`.
pub fn tridiag_max_eigenvalue(d: usize) -> f64 {
    0.5 * (1.0 + (std::f64::consts::PI / (d as f64 + 1.0)).cos())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Conjugate gradients for the benchmark matrix, starting from `x0`.
/// Stops when `||A x - rhs|| <= tol`; fails after `10 d` iterations.
pub fn conjugate_gradient(rhs: &[f64], x0: &[f64], tol: f64) -> Result<CgSolution, ProblemError> {
    let d = rhs.len();
    if x0.len() != d {
        return Err(ProblemError::DimensionMismatch {
            expected: d,
            got: x0.len(),
        });
    }
    let max_iter = 10 * d;
    let mut x = x0.to_vec();
    let mut ap = vec![0.0; d];
    tridiag_apply(&x, &mut ap);
    let mut r: Vec<f64> = rhs.iter().zip(&ap).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    while rr.sqrt() > tol {
        if iterations == max_iter {
            return Err(ProblemError::CgNotConverged {
                iterations,
                residual: rr.sqrt(),
                tol,
            });
        }
        tridiag_apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for i in 0..d {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        for i in 0..d {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_next;
        iterations += 1;
    }
    Ok(CgSolution {
        x,
        iterations,
        residual: rr.sqrt(),
    })
}

pub const CG_TOL: f64 = 1e-10;

/// `f^inf = -1/2 b^T x*` where `A x* = b`, solved from `x0`.
pub fn solve_f_inf_from(b: &[f64], x0: &[f64]) -> Result<f64, ProblemError> {
    let sol = conjugate_gradient(b, x0, CG_TOL)?;
    Ok(-0.5 * dot(b, &sol.x))
}

impl Quadratic {
    /// Quadratic with linear term `b`; `f_inf` is solved once here.
    pub fn with_linear_term(b: Vec<f64>, noise_std: f64) -> Result<Self, ProblemError> {
        if b.len() < 2 {
            return Err(ProblemError::DimensionTooSmall(b.len()));
        }
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(ProblemError::InvalidParameter {
                name: "noise_std",
                value: noise_std,
            });
        }
        let f_inf = solve_f_inf_from(&b, &vec![0.0; b.len()])?;
        Ok(Quadratic { b, noise_std, f_inf })
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }
}

/// The benchmark: `b = -1/4 e_1`, i.i.d. `N(0, noise_std^2)` noise per
/// coordinate, so `sigma^2 = noise_std^2 d`.
pub fn quad_problem(d: usize, noise_std: f64) -> Result<Quadratic, ProblemError> {
    if d < 2 {
        return Err(ProblemError::DimensionTooSmall(d));
    }
    let mut b = vec![0.0; d];
    b[0] = -0.25;
    Quadratic::with_linear_term(b, noise_std)
}

/// `f_inf` of a quadratic oracle (cached at construction).
pub fn solve_f_inf(p: &Quadratic) -> f64 {
    p.f_inf
}

impl Oracle for Quadratic {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let d = x.len();
        let mut quad = 0.0;
        for i in 0..d {
            let mut ax = DIAG * x[i];
            if i > 0 {
                ax += OFF * x[i - 1];
            }
            if i + 1 < d {
                ax += OFF * x[i + 1];
            }
            quad += x[i] * ax;
        }
        0.5 * quad - dot(&self.b, x)
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        tridiag_apply(x, out);
        for (o, b) in out.iter_mut().zip(&self.b) {
            *o -= b;
        }
    }

    fn stochastic_grad_into(&self, x: &[f64], rng: &mut SimRng, out: &mut [f64]) {
        self.grad_into(x, out);
        if self.noise_std > 0.0 {
            for o in out.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *o += self.noise_std * z;
            }
        }
    }

    fn stochastic_grad_sum_into(&self, x: &[f64], count: u64, rng: &mut SimRng, out: &mut [f64]) {
        // A sum of `count` i.i.d. Gaussians is one Gaussian with scaled std.
        self.grad_into(x, out);
        let c = count as f64;
        let std = self.noise_std * c.sqrt();
        for o in out.iter_mut() {
            *o *= c;
            if count > 0 && std > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                *o += std * z;
            }
        }
    }

    fn smoothness(&self) -> f64 {
        tridiag_max_eigenvalue(self.dim())
    }

    fn f_inf(&self) -> f64 {
        self.f_inf
    }

    fn sigma_sq(&self) -> f64 {
        self.noise_std * self.noise_std * self.dim() as f64
    }
}

impl Workload for Quadratic {
    fn objective(&self) -> &dyn Oracle {
        self
    }

    fn worker_oracle(&self, _worker: usize) -> &dyn Oracle {
        self
    }

    fn components(&self) -> Option<usize> {
        None
    }
}

/// `f = (1/n) sum_i f_i`, each `f_i` a quadratic sharing `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeterogeneousProblem {
    components: Vec<Quadratic>,
    aggregate: Quadratic,
}

impl HeterogeneousProblem {
    pub fn new(components: Vec<Quadratic>) -> Result<Self, ProblemError> {
        let first = components.first().ok_or(ProblemError::NoComponents)?;
        let d = first.dim();
        let noise = first.noise_std();
        let mut mean_b = vec![0.0; d];
        for c in &components {
            if c.dim() != d {
                return Err(ProblemError::DimensionMismatch {
                    expected: d,
                    got: c.dim(),
                });
            }
            for (m, b) in mean_b.iter_mut().zip(c.b()) {
                *m += b;
            }
        }
        let n = components.len() as f64;
        mean_b.iter_mut().for_each(|m| *m /= n);
        let aggregate = Quadratic::with_linear_term(mean_b, noise)?;
        Ok(HeterogeneousProblem {
            components,
            aggregate,
        })
    }

    pub fn components(&self) -> &[Quadratic] {
        &self.components
    }

    pub fn aggregate(&self) -> &Quadratic {
        &self.aggregate
    }
}

impl Workload for HeterogeneousProblem {
    fn objective(&self) -> &dyn Oracle {
        &self.aggregate
    }

    fn worker_oracle(&self, worker: usize) -> &dyn Oracle {
        &self.components[worker % self.components.len()]
    }

    fn components(&self) -> Option<usize> {
        Some(self.components.len())
    }
}

/// `f_i` with `b_i = -1/4 e_1 + shift_scale u_i`, `u_i` random unit vectors.
pub fn hetero_quad_family(
    d: usize,
    n: usize,
    shift_scale: f64,
    noise_std: f64,
    rng: &mut SimRng,
) -> Result<HeterogeneousProblem, ProblemError> {
    if d < 2 {
        return Err(ProblemError::DimensionTooSmall(d));
    }
    if n == 0 {
        return Err(ProblemError::NoComponents);
    }
    if !shift_scale.is_finite() {
        return Err(ProblemError::InvalidParameter {
            name: "shift_scale",
            value: shift_scale,
        });
    }
    let components = (0..n)
        .map(|_| {
            let mut u: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dot(&u, &u).sqrt();
            u.iter_mut().for_each(|v| *v /= norm);
            let mut b: Vec<f64> = u.iter().map(|v| shift_scale * v).collect();
            b[0] -= 0.25;
            Quadratic::with_linear_term(b, noise_std)
        })
        .collect::<Result<Vec<_>, _>>()?;
    HeterogeneousProblem::new(components)
}

/// Problem selection as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Quadratic {
        d: usize,
        noise_std: f64,
    },
    HeteroQuadratic {
        d: usize,
        n: usize,
        shift_scale: f64,
        noise_std: f64,
        /// Seed for the component shifts.
        #[serde(default)]
        seed: u64,
    },
}

/// A constructed problem, homogeneous or not.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemInstance {
    Homogeneous(Quadratic),
    Heterogeneous(HeterogeneousProblem),
}

impl ProblemSpec {
    pub fn build(&self) -> Result<ProblemInstance, ProblemError> {
        match *self {
            ProblemSpec::Quadratic { d, noise_std } => {
                Ok(ProblemInstance::Homogeneous(quad_problem(d, noise_std)?))
            }
            ProblemSpec::HeteroQuadratic {
                d,
                n,
                shift_scale,
                noise_std,
                seed,
            } => {
                let mut rng = crate::rng::stream(seed, &[crate::rng::purpose::PROBLEM]);
                Ok(ProblemInstance::Heterogeneous(hetero_quad_family(
                    d,
                    n,
                    shift_scale,
                    noise_std,
                    &mut rng,
                )?))
            }
        }
    }
}

impl Workload for ProblemInstance {
    fn objective(&self) -> &dyn Oracle {
        match self {
            ProblemInstance::Homogeneous(q) => q.objective(),
            ProblemInstance::Heterogeneous(h) => h.objective(),
        }
    }

    fn worker_oracle(&self, worker: usize) -> &dyn Oracle {
        match self {
            ProblemInstance::Homogeneous(q) => q.worker_oracle(worker),
            ProblemInstance::Heterogeneous(h) => h.worker_oracle(worker),
        }
    }

    fn components(&self) -> Option<usize> {
        match self {
            ProblemInstance::Homogeneous(q) => Workload::components(q),
            ProblemInstance::Heterogeneous(h) => Workload::components(h),
        }
    }
}
