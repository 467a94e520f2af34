//! Non-learning IRS phase design.
//!
//! Two designs are provided: the closed-form SNR-maximizing phases, and phases
//! minimizing `CRLB_theta + CRLB_phi` over the complex circle manifold.

mod manifold;

use std::f64::consts::PI;

use ndarray::{Array1, Array2, Axis};

use crate::channel::{ChannelModel, PhaseVector, C64};
use crate::error::{Error, Result};
use crate::geometry::{self, DoA, SceneGeometry};

pub use manifold::{
    optimize_phases_crlb, optimize_phases_crlb_from, project_tangent, retract, riemannian_gradient,
    ManifoldMethod, ManifoldOptimizerConfig, PhaseDesignOutcome, TraceRow,
};

/// Closed-form SNR-maximizing phases for a coarse DoA, wrapped to `[-pi, pi)`.
pub fn snr_max_phases(geom: &SceneGeometry, coarse: DoA) -> Result<PhaseVector> {
    let dist = geometry::pairwise_distances(geom)?;
    let elements = geometry::upa_relative_positions(geom);
    let cells = geometry::irs_relative_positions(geom);
    let m_a = elements.len() as f64;
    let at_sum: f64 = elements
        .iter()
        .map(|&p| geometry::path_diff_at(p, coarse))
        .sum();
    let scale = 2.0 * PI / (m_a * geom.wavelength);
    let phases = cells
        .iter()
        .enumerate()
        .map(|(n, &cell)| {
            let ar_sum: f64 = (0..dist.rows).map(|m| dist.get(m, n)).sum();
            let rt = geometry::path_diff_rt(cell, coarse);
            scale * (ar_sum - m_a * rt + at_sum)
        })
        .collect();
    PhaseVector::new(phases)
}

/// Derivatives of the composite steering vector with respect to the DoA
/// angles (in radians).
#[derive(Debug, Clone)]
pub struct SteeringJacobian {
    pub d_theta: Array1<C64>,
    pub d_phi: Array1<C64>,
    /// `d_phi` vanishes identically at theta = 90°.
    pub phi_degenerate: bool,
}

fn rt_derivatives(channel: &ChannelModel, doa: DoA) -> (Array1<C64>, Array1<C64>, Array1<C64>) {
    let k = 2.0 * PI / channel.geometry().wavelength;
    let (st, ct) = doa.theta_rad().sin_cos();
    let (sp, cp) = doa.phi_rad().sin_cos();
    let rt = channel.steering_rt(doa);
    let j = C64::new(0.0, 1.0);
    let cells = channel.cells();
    let d_theta = cells
        .iter()
        .zip(rt.iter())
        .map(|(c, a)| {
            let dr = -(c[0] * st * sp + c[1] * st * cp);
            j * k * dr * a
        })
        .collect();
    let d_phi = cells
        .iter()
        .zip(rt.iter())
        .map(|(c, a)| {
            let dr = c[0] * ct * cp - c[1] * ct * sp;
            j * k * dr * a
        })
        .collect();
    (rt, d_theta, d_phi)
}

pub fn steering_jacobian(
    channel: &ChannelModel,
    phases: &PhaseVector,
    doa: DoA,
) -> Result<SteeringJacobian> {
    let mapping = channel.phased_mapping(phases)?;
    let (_, d_rt_theta, d_rt_phi) = rt_derivatives(channel, doa);
    Ok(SteeringJacobian {
        d_theta: mapping.dot(&d_rt_theta),
        d_phi: mapping.dot(&d_rt_phi),
        phi_degenerate: doa.theta() >= geometry::THETA_MAX_DEG,
    })
}

/// Per-angle Cramér–Rao bounds in rad². A degenerate component is reported
/// as `f64::INFINITY`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrlbValue {
    pub theta: f64,
    pub phi: f64,
}

impl CrlbValue {
    pub fn theta_degenerate(&self) -> bool {
        self.theta.is_infinite()
    }

    pub fn phi_degenerate(&self) -> bool {
        self.phi.is_infinite()
    }

    pub fn sum(&self) -> f64 {
        self.theta + self.phi
    }
}

/// Relative threshold below which the projected derivative counts as zero.
const DEGENERACY_TOL: f64 = 1e-10;

/// `Re{d^H (I - a (a^H a)^-1 a^H) d}`, or `None` when it vanishes.
fn projected_information(a: &[C64], d: &[C64]) -> Option<f64> {
    let aa: f64 = a.iter().map(|x| x.norm_sqr()).sum();
    let dd: f64 = d.iter().map(|x| x.norm_sqr()).sum();
    if dd == 0.0 || aa == 0.0 {
        return None;
    }
    let ad: C64 = a.iter().zip(d).map(|(x, y)| x.conj() * y).sum();
    let info = dd - ad.norm_sqr() / aa;
    (info > DEGENERACY_TOL * dd).then_some(info)
}

fn bound_from(a: &[C64], d: &[C64], factor: f64) -> f64 {
    projected_information(a, d).map_or(f64::INFINITY, |info| factor / info)
}

pub fn crlb(
    channel: &ChannelModel,
    phases: &PhaseVector,
    doa: DoA,
    sigma_s2: f64,
    sigma_n2: f64,
) -> Result<CrlbValue> {
    if !(sigma_s2 > 0.0) || !(sigma_n2 >= 0.0) {
        return Err(Error::Config(
            "signal variance must be positive, noise variance nonnegative".into(),
        ));
    }
    let a = crate::channel::composite_steering(channel, phases, doa)?;
    let jac = steering_jacobian(channel, phases, doa)?;
    let factor = sigma_n2 / (2.0 * sigma_s2);
    let a = a.as_slice().expect("contiguous");
    Ok(CrlbValue {
        theta: bound_from(a, jac.d_theta.as_slice().expect("contiguous"), factor),
        phi: if jac.phi_degenerate {
            f64::INFINITY
        } else {
            bound_from(a, jac.d_phi.as_slice().expect("contiguous"), factor)
        },
    })
}

/// `CRLB_theta + CRLB_phi` as a function of the reflective vector omega at a
/// fixed DoA.
///
/// The composite steering vector and both derivatives are linear in omega,
/// so they are precomputed as `M^A x M^R` matrices; a coordinate perturbation
/// of omega then costs `O(M^A)`.
#[derive(Debug, Clone)]
pub struct CrlbObjective {
    steer: Array2<C64>,
    d_theta: Array2<C64>,
    d_phi: Array2<C64>,
    factor: f64,
    phi_degenerate: bool,
}

/// Steering vector and derivatives at one omega.
#[derive(Debug, Clone)]
struct Evaluated {
    a: Vec<C64>,
    dt: Vec<C64>,
    dp: Vec<C64>,
}

impl CrlbObjective {
    pub fn new(channel: &ChannelModel, doa: DoA, sigma_s2: f64, sigma_n2: f64) -> Result<Self> {
        if !(sigma_s2 > 0.0) || !(sigma_n2 > 0.0) {
            return Err(Error::Config(
                "signal and noise variances must be positive".into(),
            ));
        }
        let (rt, drt_t, drt_p) = rt_derivatives(channel, doa);
        let combined = channel.combined();
        let scale = |v: &Array1<C64>| combined * &v.view().insert_axis(Axis(0));
        Ok(Self {
            steer: scale(&rt),
            d_theta: scale(&drt_t),
            d_phi: scale(&drt_p),
            factor: sigma_n2 / (2.0 * sigma_s2),
            phi_degenerate: doa.theta() >= geometry::THETA_MAX_DEG,
        })
    }

    pub fn dim(&self) -> usize {
        self.steer.ncols()
    }

    fn evaluate(&self, omega: &[C64]) -> Evaluated {
        let w = ndarray::ArrayView1::from(omega);
        Evaluated {
            a: self.steer.dot(&w).to_vec(),
            dt: self.d_theta.dot(&w).to_vec(),
            dp: self.d_phi.dot(&w).to_vec(),
        }
    }

    fn value_of(&self, e: &Evaluated) -> f64 {
        let theta = bound_from(&e.a, &e.dt, self.factor);
        let phi = if self.phi_degenerate {
            f64::INFINITY
        } else {
            bound_from(&e.a, &e.dp, self.factor)
        };
        theta + phi
    }

    pub fn value(&self, omega: &[C64]) -> f64 {
        self.value_of(&self.evaluate(omega))
    }

    pub fn components(&self, omega: &[C64]) -> CrlbValue {
        let e = self.evaluate(omega);
        CrlbValue {
            theta: bound_from(&e.a, &e.dt, self.factor),
            phi: if self.phi_degenerate {
                f64::INFINITY
            } else {
                bound_from(&e.a, &e.dp, self.factor)
            },
        }
    }

    /// Value at `omega + delta * e_i` given the evaluation at `omega`.
    fn perturbed(&self, base: &Evaluated, i: usize, delta: C64, scratch: &mut Evaluated) -> f64 {
        for m in 0..base.a.len() {
            scratch.a[m] = base.a[m] + delta * self.steer[[m, i]];
            scratch.dt[m] = base.dt[m] + delta * self.d_theta[[m, i]];
            scratch.dp[m] = base.dp[m] + delta * self.d_phi[[m, i]];
        }
        self.value_of(scratch)
    }

    /// Euclidean gradient by central differences over the real and imaginary
    /// part of every omega entry: `df/dRe + j df/dIm`.
    pub fn euclidean_gradient(&self, omega: &[C64], step: f64) -> Vec<C64> {
        let base = self.evaluate(omega);
        let mut scratch = base.clone();
        (0..omega.len())
            .map(|i| {
                let re = (self.perturbed(&base, i, C64::new(step, 0.0), &mut scratch)
                    - self.perturbed(&base, i, C64::new(-step, 0.0), &mut scratch))
                    / (2.0 * step);
                let im = (self.perturbed(&base, i, C64::new(0.0, step), &mut scratch)
                    - self.perturbed(&base, i, C64::new(0.0, -step), &mut scratch))
                    / (2.0 * step);
                C64::new(re, im)
            })
            .collect()
    }
}

/// Phases from a unit-modulus vector, wrapped.
pub(crate) fn phases_of(omega: &[C64]) -> PhaseVector {
    PhaseVector::from_omega(omega)
}
