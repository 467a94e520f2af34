//! Riemannian optimization of the CRLB objective on the complex circle
//! manifold `{omega : |omega_i| = 1}`.
//!
//! Tangent vectors at omega are the `xi` with `Re{conj(omega_i) xi_i} = 0`.
//! The Euclidean gradient comes from central differences; the Hessian for the
//! trust-region model is approximated by finite differences of the Riemannian
//! gradient along a retraction.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{phases_of, CrlbObjective};
use crate::channel::{ChannelModel, PhaseVector, C64};
use crate::error::{Error, Result};
use crate::geometry::{self, DoA};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ManifoldMethod {
    TrustRegion,
    ConjugateGradient,
    SteepestDescent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManifoldOptimizerConfig {
    pub max_iterations: usize,
    /// Stop once `||rgrad|| <= gradient_tolerance * f`.
    pub gradient_tolerance: f64,
    pub method: ManifoldMethod,
    /// Central-difference step on the real and imaginary parts of omega.
    pub fd_step: f64,
    pub seed: u64,
}

impl Default for ManifoldOptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gradient_tolerance: 1e-6,
            method: ManifoldMethod::TrustRegion,
            fd_step: 1e-5,
            seed: 0,
        }
    }
}

impl ManifoldOptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.gradient_tolerance > 0.0) || !(self.fd_step > 0.0) {
            return Err(Error::Config(
                "tolerance and finite-difference step must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone)]
pub struct PhaseDesignOutcome {
    pub phases: PhaseVector,
    pub omega: Vec<C64>,
    pub initial_objective: f64,
    pub objective: f64,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    pub iterations: usize,
}

impl PhaseDesignOutcome {
    /// CSV rows `iteration,objective,gradient_norm`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,objective,gradient_norm\n");
        for row in &self.trace {
            out.push_str(&format!(
                "{},{:e},{:e}\n",
                row.iteration, row.objective, row.gradient_norm
            ));
        }
        out
    }
}

fn inner(u: &[C64], v: &[C64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a.conj() * b).re).sum()
}

fn norm(u: &[C64]) -> f64 {
    inner(u, u).sqrt()
}

fn axpy(alpha: f64, x: &[C64], y: &[C64]) -> Vec<C64> {
    x.iter().zip(y).map(|(a, b)| alpha * a + b).collect()
}

fn scale(alpha: f64, x: &[C64]) -> Vec<C64> {
    x.iter().map(|a| alpha * a).collect()
}

/// Orthogonal projection onto the tangent space at `omega`.
pub fn project_tangent(omega: &[C64], u: &[C64]) -> Vec<C64> {
    omega
        .iter()
        .zip(u)
        .map(|(w, g)| g - (g * w.conj()).re * w)
        .collect()
}

/// Elementwise renormalization of `omega + xi`.
pub fn retract(omega: &[C64], xi: &[C64]) -> Vec<C64> {
    omega
        .iter()
        .zip(xi)
        .map(|(w, x)| {
            let v = w + x;
            let r = v.norm();
            if r > 0.0 {
                v / r
            } else {
                *w
            }
        })
        .collect()
}

pub fn riemannian_gradient(objective: &CrlbObjective, omega: &[C64], fd_step: f64) -> Vec<C64> {
    project_tangent(omega, &objective.euclidean_gradient(omega, fd_step))
}

struct Problem<'a> {
    objective: &'a CrlbObjective,
    fd_step: f64,
}

impl Problem<'_> {
    fn cost(&self, x: &[C64]) -> f64 {
        self.objective.value(x)
    }

    fn grad(&self, x: &[C64]) -> Vec<C64> {
        riemannian_gradient(self.objective, x, self.fd_step)
    }

    /// Finite-difference Hessian along `xi`, transported back by projection.
    fn hess(&self, x: &[C64], g: &[C64], xi: &[C64]) -> Vec<C64> {
        let n = norm(xi);
        if n == 0.0 {
            return vec![C64::new(0.0, 0.0); xi.len()];
        }
        let t = 2f64.powi(-14) / n;
        let moved = retract(x, &scale(t, xi));
        let g_moved = project_tangent(x, &self.grad(&moved));
        g_moved.iter().zip(g).map(|(a, b)| (a - b) / t).collect()
    }
}

struct State {
    x: Vec<C64>,
    f: f64,
    g: Vec<C64>,
}

/// Minimize `CRLB_theta + CRLB_phi` at `coarse` starting from uniform random
/// phases drawn from `cfg.seed`.
pub fn optimize_phases_crlb(
    channel: &ChannelModel,
    coarse: DoA,
    sigma_s2: f64,
    sigma_n2: f64,
    cfg: &ManifoldOptimizerConfig,
) -> Result<PhaseDesignOutcome> {
    let mut r = rng::substream(cfg.seed, "crlb-init", 0);
    let init = PhaseVector::random(channel.num_cells(), &mut r);
    optimize_phases_crlb_from(channel, coarse, sigma_s2, sigma_n2, cfg, &init)
}

/// As [`optimize_phases_crlb`] with an explicit initialization.
pub fn optimize_phases_crlb_from(
    channel: &ChannelModel,
    coarse: DoA,
    sigma_s2: f64,
    sigma_n2: f64,
    cfg: &ManifoldOptimizerConfig,
    init: &PhaseVector,
) -> Result<PhaseDesignOutcome> {
    cfg.validate()?;
    if coarse.theta() >= geometry::THETA_MAX_DEG {
        return Err(Error::Degenerate(format!(
            "theta = {}° leaves the azimuth unobservable",
            coarse.theta()
        )));
    }
    if init.len() != channel.num_cells() {
        return Err(Error::shape(
            "initial phases",
            channel.num_cells(),
            init.len(),
        ));
    }
    let objective = CrlbObjective::new(channel, coarse, sigma_s2, sigma_n2)?;
    let problem = Problem {
        objective: &objective,
        fd_step: cfg.fd_step,
    };
    let x0 = init.omega().to_vec();
    let f0 = problem.cost(&x0);
    if !f0.is_finite() {
        return Err(Error::Degenerate(
            "CRLB objective is infinite at the initial phases".into(),
        ));
    }
    let g0 = problem.grad(&x0);
    let state = State {
        x: x0,
        f: f0,
        g: g0,
    };
    let run = match cfg.method {
        ManifoldMethod::TrustRegion => trust_region(&problem, state, cfg),
        ManifoldMethod::SteepestDescent => steepest_descent(&problem, state, cfg),
        ManifoldMethod::ConjugateGradient => conjugate_gradient(&problem, state, cfg),
    };
    let phases = if run.iterations == 0 {
        init.clone()
    } else {
        phases_of(&run.state.x)
    };
    Ok(PhaseDesignOutcome {
        phases,
        omega: run.state.x,
        initial_objective: f0,
        objective: run.state.f,
        trace: run.trace,
        converged: run.converged,
        iterations: run.iterations,
    })
}

struct Run {
    state: State,
    trace: Vec<TraceRow>,
    converged: bool,
    iterations: usize,
}

fn record(trace: &mut Vec<TraceRow>, iteration: usize, s: &State) {
    trace.push(TraceRow {
        iteration,
        objective: s.f,
        gradient_norm: norm(&s.g),
    });
}

fn is_stationary(s: &State, tol: f64) -> bool {
    norm(&s.g) <= tol * s.f.abs()
}

fn trust_region(p: &Problem, mut s: State, cfg: &ManifoldOptimizerConfig) -> Run {
    let dim = s.x.len();
    let delta_bar = PI * (dim as f64).sqrt();
    let mut delta = delta_bar / 8.0;
    let mut trace = Vec::new();
    record(&mut trace, 0, &s);
    let mut iterations = 0;
    let mut converged = is_stationary(&s, cfg.gradient_tolerance);
    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        let (eta, h_eta) = truncated_cg(p, &s, delta, dim);
        let model_decrease = -(inner(&s.g, &eta) + 0.5 * inner(&eta, &h_eta));
        let candidate = retract(&s.x, &eta);
        let f_new = p.cost(&candidate);
        let rho = if model_decrease > 0.0 {
            (s.f - f_new) / model_decrease
        } else {
            -1.0
        };
        let step = norm(&eta);
        if rho < 0.25 {
            delta *= 0.25;
        } else if rho > 0.75 && step >= 0.99 * delta {
            delta = (2.0 * delta).min(delta_bar);
        }
        if rho > 0.1 && f_new < s.f {
            let g_new = p.grad(&candidate);
            s = State {
                x: candidate,
                f: f_new,
                g: g_new,
            };
            record(&mut trace, iterations, &s);
            converged = is_stationary(&s, cfg.gradient_tolerance);
        }
        if delta < 1e-12 {
            break;
        }
    }
    Run {
        state: s,
        trace,
        converged,
        iterations,
    }
}

/// Steihaug-Toint truncated conjugate gradients on the quadratic model.
/// Returns the step and its Hessian image.
fn truncated_cg(p: &Problem, s: &State, delta: f64, max_inner: usize) -> (Vec<C64>, Vec<C64>) {
    let n = s.x.len();
    let zero = vec![C64::new(0.0, 0.0); n];
    let mut eta = zero.clone();
    let mut h_eta = zero;
    let mut r = s.g.clone();
    let mut d = scale(-1.0, &r);
    let r0 = norm(&r);
    let mut rr = inner(&r, &r);
    for _ in 0..max_inner {
        let hd = project_tangent(&s.x, &p.hess(&s.x, &s.g, &d));
        let curvature = inner(&d, &hd);
        let alpha = rr / curvature;
        let next = axpy(alpha, &d, &eta);
        if curvature <= 0.0 || norm(&next) >= delta {
            // step to the boundary along d
            let ed = inner(&eta, &d);
            let dd = inner(&d, &d);
            let ee = inner(&eta, &eta);
            let tau = (-ed + (ed * ed + dd * (delta * delta - ee)).max(0.0).sqrt()) / dd;
            return (axpy(tau, &d, &eta), axpy(tau, &hd, &h_eta));
        }
        eta = next;
        h_eta = axpy(alpha, &hd, &h_eta);
        r = project_tangent(&s.x, &axpy(alpha, &hd, &r));
        let rr_new = inner(&r, &r);
        if rr_new.sqrt() <= r0 * r0.min(0.1) {
            break;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        d = axpy(beta, &d, &scale(-1.0, &r));
    }
    (eta, h_eta)
}

/// Armijo backtracking along a tangent direction. Returns the accepted point
/// and step size, if any.
fn armijo(p: &Problem, s: &State, dir: &[C64], t0: f64) -> Option<(Vec<C64>, f64, f64)> {
    let slope = inner(&s.g, dir);
    if slope >= 0.0 {
        return None;
    }
    let mut t = t0;
    for _ in 0..40 {
        let candidate = retract(&s.x, &scale(t, dir));
        let f = p.cost(&candidate);
        if f <= s.f + 1e-4 * t * slope && f < s.f {
            return Some((candidate, f, t));
        }
        t *= 0.5;
    }
    None
}

fn steepest_descent(p: &Problem, mut s: State, cfg: &ManifoldOptimizerConfig) -> Run {
    let mut trace = Vec::new();
    record(&mut trace, 0, &s);
    let mut iterations = 0;
    let mut converged = is_stationary(&s, cfg.gradient_tolerance);
    let mut t0 = 1.0 / norm(&s.g).max(f64::MIN_POSITIVE);
    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        let dir = scale(-1.0, &s.g);
        let Some((x, f, t)) = armijo(p, &s, &dir, t0) else {
            break;
        };
        let g = p.grad(&x);
        s = State { x, f, g };
        record(&mut trace, iterations, &s);
        converged = is_stationary(&s, cfg.gradient_tolerance);
        t0 = 2.0 * t;
    }
    Run {
        state: s,
        trace,
        converged,
        iterations,
    }
}

/// Polak-Ribière+ conjugate gradients with projection transport and
/// restarts whenever the direction is not a descent direction.
fn conjugate_gradient(p: &Problem, mut s: State, cfg: &ManifoldOptimizerConfig) -> Run {
    let mut trace = Vec::new();
    record(&mut trace, 0, &s);
    let mut iterations = 0;
    let mut converged = is_stationary(&s, cfg.gradient_tolerance);
    let mut dir = scale(-1.0, &s.g);
    let mut t0 = 1.0 / norm(&s.g).max(f64::MIN_POSITIVE);
    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        if inner(&s.g, &dir) >= 0.0 {
            dir = scale(-1.0, &s.g);
        }
        let Some((x, f, t)) = armijo(p, &s, &dir, t0).or_else(|| {
            dir = scale(-1.0, &s.g);
            armijo(p, &s, &dir, 1.0 / norm(&s.g).max(f64::MIN_POSITIVE))
        }) else {
            break;
        };
        let g = p.grad(&x);
        let g_old = project_tangent(&x, &s.g);
        let d_old = project_tangent(&x, &dir);
        let diff: Vec<C64> = g.iter().zip(&g_old).map(|(a, b)| a - b).collect();
        let beta = (inner(&g, &diff) / inner(&s.g, &s.g)).max(0.0);
        dir = axpy(beta, &d_old, &scale(-1.0, &g));
        t0 = 2.0 * t * norm(&s.g) / norm(&dir).max(f64::MIN_POSITIVE);
        s = State { x, f, g };
        record(&mut trace, iterations, &s);
        converged = is_stationary(&s, cfg.gradient_tolerance);
    }
    Run {
        state: s,
        trace,
        converged,
        iterations,
    }
}

#[cfg(test)]
fn random_omega<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<C64> {
    PhaseVector::random(n, rng).omega().to_vec()
}
