//! Residual engine for the first-integral conditions: Wiener compensation,
//! the drift/time identity, Poisson-jump compensation, and the full
//! generator identity as a cross-check. This is the ground-truth oracle
//! the rest of the toolkit is tested against.

use serde::Serialize;

use crate::error::Error;
use crate::manifold::ManifoldSpec;
use crate::nlinalg::{dot, jacobian_fd, norm2, Matrix, Vector};
use crate::synthesis::SdeCoefficients;

/// Which coefficient a [`Perturbed`] wrapper displaces.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum PerturbationTarget {
    /// Drift component `component` (0-based).
    Drift { component: usize },
    /// Diffusion column `column`, component `component` (0-based).
    Diffusion { column: usize, component: usize },
    /// Jump displacement component `component` (0-based).
    Jump { component: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Perturbation {
    pub target: PerturbationTarget,
    pub epsilon: f64,
}

/// Coefficient set with an optional constant displacement in one
/// component; used to demonstrate that the residuals detect defects.
#[derive(Clone, Debug)]
pub struct Perturbed<C> {
    pub inner: C,
    pub perturbation: Option<Perturbation>,
}

impl<C> Perturbed<C> {
    pub fn unperturbed(inner: C) -> Self {
        Self {
            inner,
            perturbation: None,
        }
    }

    pub fn new(inner: C, perturbation: Perturbation) -> Self {
        Self {
            inner,
            perturbation: Some(perturbation),
        }
    }
}

impl<C: SdeCoefficients> SdeCoefficients for Perturbed<C> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn wiener_dim(&self) -> usize {
        self.inner.wiener_dim()
    }

    fn drift(&self, t: f64, x: &[f64]) -> Result<Vector, Error> {
        let mut a = self.inner.drift(t, x)?;
        if let Some(p) = &self.perturbation {
            if let PerturbationTarget::Drift { component } = p.target {
                a[component] += p.epsilon;
            }
        }
        Ok(a)
    }

    fn diffusion_column(&self, k: usize, t: f64, x: &[f64]) -> Result<Vector, Error> {
        let mut b = self.inner.diffusion_column(k, t, x)?;
        if let Some(p) = &self.perturbation {
            if let PerturbationTarget::Diffusion { column, component } = p.target {
                if column == k {
                    b[component] += p.epsilon;
                }
            }
        }
        Ok(b)
    }

    fn jump_displacement(&self, t: f64, x: &[f64], gamma: f64) -> Result<Vector, Error> {
        let mut g = self.inner.jump_displacement(t, x, gamma)?;
        if let Some(p) = &self.perturbation {
            if let PerturbationTarget::Jump { component } = p.target {
                g[component] += p.epsilon;
            }
        }
        Ok(g)
    }
}

/// max_k |B_k . grad u| / (1 + |B_k| |grad u|): the Wiener compensation
/// condition, normalized so a zero diffusion reports exactly 0.
pub fn wiener_residual(
    spec: &ManifoldSpec,
    sys: &impl SdeCoefficients,
    t: f64,
    x: &[f64],
) -> Result<f64, Error> {
    let (_, grad) = spec.grad_u(t, x)?;
    let gn = norm2(&grad);
    let mut worst = 0.0f64;
    for k in 0..sys.wiener_dim() {
        let b = sys.diffusion_column(k, t, x)?;
        let r = dot(&b, &grad).abs() / (1.0 + norm2(&b) * gn);
        worst = worst.max(r);
    }
    Ok(worst)
}

/// |du/dt + grad u . (A - (1/2) sum_k J_{B_k} B_k)|: the drift/time
/// condition, with finite-difference Jacobians.
pub fn drift_residual(
    spec: &ManifoldSpec,
    sys: &impl SdeCoefficients,
    t: f64,
    x: &[f64],
) -> Result<f64, Error> {
    let (du_dt, grad) = spec.grad_u(t, x)?;
    let a = sys.drift(t, x)?;
    let n = spec.state_dim();
    let mut inner = a;
    for k in 0..sys.wiener_dim() {
        let b = sys.diffusion_column(k, t, x)?;
        let jac = jacobian_fd(|point| sys.diffusion_column(k, t, point), x)?;
        let jb = jac.mul_vec(&b)?;
        for i in 0..n {
            inner[i] -= 0.5 * jb[i];
        }
    }
    Ok((du_dt + dot(&grad, &inner)).abs())
}

/// max over the mark grid of |u(t, x + G(t, x, gamma)) - u(t, x)|: the
/// Poisson compensation condition.
pub fn jump_residual(
    spec: &ManifoldSpec,
    sys: &impl SdeCoefficients,
    t: f64,
    x: &[f64],
    gamma_grid: &[f64],
) -> Result<f64, Error> {
    let u0 = spec.u_value(t, x)?;
    let mut worst = 0.0f64;
    for &gamma in gamma_grid {
        let g = sys.jump_displacement(t, x, gamma)?;
        let y: Vector = x.iter().zip(&g).map(|(a, b)| a + b).collect();
        worst = worst.max((spec.u_value(t, &y)? - u0).abs());
    }
    Ok(worst)
}

/// |du/dt + grad u . A + (1/2) sum_k B_k^T H_u B_k| with the Hessian of u
/// by central differences of the exact gradients. Equivalent to the drift
/// condition when the Wiener condition holds identically.
pub fn generator_residual(
    spec: &ManifoldSpec,
    sys: &impl SdeCoefficients,
    t: f64,
    x: &[f64],
) -> Result<f64, Error> {
    let (du_dt, grad) = spec.grad_u(t, x)?;
    let a = sys.drift(t, x)?;
    let hessian = hessian_fd(spec, t, x)?;
    let mut acc = du_dt + dot(&grad, &a);
    for k in 0..sys.wiener_dim() {
        let b = sys.diffusion_column(k, t, x)?;
        let hb = hessian.mul_vec(&b)?;
        acc += 0.5 * dot(&b, &hb);
    }
    Ok(acc.abs())
}

/// Hessian of u via central differences of the autodiff gradient, step
/// `1e-6 * max(1, |x_j|)` per coordinate.
fn hessian_fd(spec: &ManifoldSpec, t: f64, x: &[f64]) -> Result<Matrix, Error> {
    let n = spec.state_dim();
    let mut h = Matrix::zeros(n, n);
    let mut hi = x.to_vec();
    let mut lo = x.to_vec();
    for j in 0..n {
        let step = 1e-6 * x[j].abs().max(1.0);
        hi[j] = x[j] + step;
        lo[j] = x[j] - step;
        let (_, ghi) = spec.grad_u(t, &hi)?;
        let (_, glo) = spec.grad_u(t, &lo)?;
        for i in 0..n {
            h.set(i, j, (ghi[i] - glo[i]) / (2.0 * step));
        }
        hi[j] = x[j];
        lo[j] = x[j];
    }
    Ok(h)
}

/// Residuals at one sample point.
#[derive(Clone, Debug, Serialize)]
pub struct PointResiduals {
    pub t: f64,
    pub x: Vector,
    pub wiener: f64,
    pub drift: f64,
    pub jump: f64,
    pub generator: f64,
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct ResidualSummary {
    pub max: f64,
    pub mean: f64,
}

/// Per-point residuals over a sample set plus max/mean summaries.
#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport {
    pub points: Vec<PointResiduals>,
    pub wiener: ResidualSummary,
    pub drift: ResidualSummary,
    pub jump: ResidualSummary,
    pub generator: ResidualSummary,
}

impl ResidualReport {
    /// The first point (sample order) whose named residual exceeds its
    /// tolerance, if any.
    pub fn first_offender(
        &self,
        tolerances: &ResidualTolerances,
    ) -> Option<(&'static str, &PointResiduals)> {
        for p in &self.points {
            if p.wiener > tolerances.wiener {
                return Some(("wiener", p));
            }
            if p.drift > tolerances.drift {
                return Some(("drift", p));
            }
            if p.jump > tolerances.jump {
                return Some(("jump", p));
            }
            if p.generator > tolerances.generator {
                return Some(("generator", p));
            }
        }
        None
    }

    pub fn passes(&self, tolerances: &ResidualTolerances) -> bool {
        self.wiener.max <= tolerances.wiener
            && self.drift.max <= tolerances.drift
            && self.jump.max <= tolerances.jump
            && self.generator.max <= tolerances.generator
    }
}

/// Acceptance thresholds, split by the numerical source of error:
/// analytic cancellation, finite-difference Jacobians, the jump ODE
/// tolerance, and finite-difference Hessians.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ResidualTolerances {
    pub wiener: f64,
    pub drift: f64,
    pub jump: f64,
    pub generator: f64,
}

impl Default for ResidualTolerances {
    fn default() -> Self {
        Self {
            wiener: 1e-9,
            drift: 1e-5,
            jump: 1e-7,
            generator: 1e-4,
        }
    }
}

/// Evaluate all four residuals on each sample point.
pub fn residual_report(
    spec: &ManifoldSpec,
    sys: &impl SdeCoefficients,
    points: &[(f64, Vector)],
    gamma_grid: &[f64],
) -> Result<ResidualReport, Error> {
    let mut report = ResidualReport {
        points: Vec::with_capacity(points.len()),
        wiener: ResidualSummary::default(),
        drift: ResidualSummary::default(),
        jump: ResidualSummary::default(),
        generator: ResidualSummary::default(),
    };
    for (t, x) in points {
        let record = PointResiduals {
            t: *t,
            x: x.clone(),
            wiener: wiener_residual(spec, sys, *t, x)?,
            drift: drift_residual(spec, sys, *t, x)?,
            jump: jump_residual(spec, sys, *t, x, gamma_grid)?,
            generator: generator_residual(spec, sys, *t, x)?,
        };
        report.points.push(record);
    }
    let count = report.points.len().max(1) as f64;
    for p in &report.points {
        report.wiener.max = report.wiener.max.max(p.wiener);
        report.drift.max = report.drift.max.max(p.drift);
        report.jump.max = report.jump.max.max(p.jump);
        report.generator.max = report.generator.max.max(p.generator);
        report.wiener.mean += p.wiener / count;
        report.drift.mean += p.drift / count;
        report.jump.mean += p.jump / count;
        report.generator.mean += p.generator / count;
    }
    Ok(report)
}
