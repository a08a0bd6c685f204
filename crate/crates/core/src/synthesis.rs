//! Coefficient synthesis: diffusion columns orthogonal to the manifold
//! gradient, the drift that cancels the Ito correction, and the jump
//! response obtained by integrating the mark ODE. Together these make
//! u(t, x) a first integral of the assembled system.

use crate::error::Error;
use crate::manifold::ManifoldSpec;
use crate::nlinalg::{cross_nd, jacobian_fd, norm_inf, Matrix, Vector};

/// Absolute threshold below which the basis cofactor of the drift
/// determinant counts as degenerate.
const ADJUNCT_THRESHOLD: f64 = 1e-12;

/// Default relative tolerance for the jump ODE integration.
pub const DEFAULT_ODE_TOL: f64 = 1e-10;

/// Evaluators for the coefficients of a jump-diffusion system
/// dx = A dt + B dw + G dnu. All implementations must be pure: the same
/// point always produces the same value.
pub trait SdeCoefficients: Sync {
    fn state_dim(&self) -> usize;

    fn wiener_dim(&self) -> usize;

    /// Drift A(t, x).
    fn drift(&self, t: f64, x: &[f64]) -> Result<Vector, Error>;

    /// Diffusion column B_k(t, x), k in 0..wiener_dim().
    fn diffusion_column(&self, k: usize, t: f64, x: &[f64]) -> Result<Vector, Error>;

    /// Jump displacement G(t, x, gamma); G(t, x, 0) = 0.
    fn jump_displacement(&self, t: f64, x: &[f64], gamma: f64) -> Result<Vector, Error>;

    /// All diffusion columns as an n x m matrix.
    fn diffusion_matrix(&self, t: f64, x: &[f64]) -> Result<Matrix, Error> {
        let n = self.state_dim();
        let m = self.wiener_dim();
        let mut out = Matrix::zeros(n, m);
        for k in 0..m {
            let col = self.diffusion_column(k, t, x)?;
            for i in 0..n {
                out.set(i, k, col[i]);
            }
        }
        Ok(out)
    }
}

/// Coefficients synthesized from a [`ManifoldSpec`] so that u is a first
/// integral: every diffusion column is orthogonal to grad u, the drift
/// cancels time drift plus the Ito correction, and the jump map moves
/// along the level set of u.
#[derive(Clone, Debug)]
pub struct SynthesizedSystem {
    spec: ManifoldSpec,
    ode_tol: f64,
    /// Constant scale of the mark ODE right-hand side. Any nonzero value
    /// reparameterizes gamma without affecting the level-set property.
    alpha: f64,
}

impl SynthesizedSystem {
    pub fn new(spec: ManifoldSpec) -> Self {
        Self {
            spec,
            ode_tol: DEFAULT_ODE_TOL,
            alpha: 1.0,
        }
    }

    pub fn with_ode_tol(mut self, tol: f64) -> Self {
        self.ode_tol = tol;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn spec(&self) -> &ManifoldSpec {
        &self.spec
    }

    pub fn ode_tol(&self) -> f64 {
        self.ode_tol
    }

    /// The two summands of the drift: the normalized determinant expansion
    /// R and the Ito correction (1/2) sum_k J_{B_k} B_k.
    pub fn drift_parts(&self, t: f64, x: &[f64]) -> Result<(Vector, Vector), Error> {
        let n = self.spec.state_dim();
        let (du_dt, grad) = self.spec.grad_u(t, x)?;
        if norm_inf(&grad) == 0.0 {
            return Err(Error::DegenerateGradient { t, x: x.to_vec() });
        }

        // Expand the drift determinant along its basis row: with the u row
        // and the h rows stacked as n rows of length n+1, the cofactors of
        // the basis entries are exactly the generalized cross product.
        let mut rows = Vec::with_capacity(n);
        let mut u_row = Vec::with_capacity(n + 1);
        u_row.push(du_dt);
        u_row.extend(grad);
        rows.push(u_row);
        rows.extend(self.spec.h_row_values(t, x)?);
        let cof = cross_nd(&rows)?;
        let c0 = cof[0];
        if c0.abs() < ADJUNCT_THRESHOLD {
            return Err(Error::DegenerateAdjunct {
                t,
                x: x.to_vec(),
                cofactor: c0,
            });
        }
        let r: Vector = (1..=n).map(|i| cof[i] / c0).collect();

        let mut correction = vec![0.0; n];
        for k in 0..self.spec.wiener_dim() {
            let column = self.diffusion_column(k, t, x)?;
            let jac = jacobian_fd(|point| self.diffusion_column(k, t, point), x)?;
            let jb = jac.mul_vec(&column)?;
            for i in 0..n {
                correction[i] += 0.5 * jb[i];
            }
        }
        Ok((r, correction))
    }
}

impl SdeCoefficients for SynthesizedSystem {
    fn state_dim(&self) -> usize {
        self.spec.state_dim()
    }

    fn wiener_dim(&self) -> usize {
        self.spec.wiener_dim()
    }

    fn drift(&self, t: f64, x: &[f64]) -> Result<Vector, Error> {
        let (r, correction) = self.drift_parts(t, x)?;
        Ok(r.iter().zip(&correction).map(|(a, b)| a + b).collect())
    }

    fn diffusion_column(&self, k: usize, t: f64, x: &[f64]) -> Result<Vector, Error> {
        let (_, grad) = self.spec.grad_u(t, x)?;
        if norm_inf(&grad) == 0.0 {
            return Err(Error::DegenerateGradient { t, x: x.to_vec() });
        }
        let mut rows = vec![grad];
        rows.extend(self.spec.f_gradients(t, x)?);
        let cross = cross_nd(&rows)?;
        let q = self.spec.q00_value(k, t, x)?;
        Ok(cross.into_iter().map(|v| q * v).collect())
    }

    /// Integrates dy/dgamma = alpha * cross(grad_y u, grad_y phi_3, ...)
    /// from y(0) = x to the target mark with adaptive step-doubling RK4,
    /// then returns G = y(gamma) - x.
    fn jump_displacement(&self, t: f64, x: &[f64], gamma: f64) -> Result<Vector, Error> {
        let n = self.spec.state_dim();
        if gamma == 0.0 {
            return Ok(vec![0.0; n]);
        }
        let rhs = |y: &[f64]| -> Result<Vector, Error> {
            let (_, grad) = self.spec.grad_u(t, y)?;
            let mut rows = vec![grad];
            rows.extend(self.spec.phi_gradients(t, y)?);
            let cross = cross_nd(&rows)?;
            Ok(cross.into_iter().map(|v| self.alpha * v).collect())
        };
        let y = integrate_adaptive_rk4(&rhs, x.to_vec(), gamma, self.ode_tol)?;
        Ok(y.iter().zip(x).map(|(a, b)| a - b).collect())
    }
}

/// Classical RK4 with step doubling: each window takes one full step and
/// two half steps, accepts when they agree to `tol * (1 + |y|)`, and keeps
/// the Richardson-extrapolated value.
fn integrate_adaptive_rk4<F>(
    rhs: &F,
    y0: Vector,
    target: f64,
    tol: f64,
) -> Result<Vector, Error>
where
    F: Fn(&[f64]) -> Result<Vector, Error>,
{
    const MAX_STEPS: usize = 1_000_000;
    let mut y = y0;
    let mut s = 0.0f64; // integrated mark coordinate
    let mut h = target / 8.0;
    let underflow = 1e-14 * (1.0 + target.abs());
    let mut steps = 0;
    loop {
        let mut hit_target = false;
        if (target - (s + h)) * target.signum() <= 0.0 {
            h = target - s;
            hit_target = true;
        }
        let full = rk4_step(rhs, &y, h)?;
        let mid = rk4_step(rhs, &y, h / 2.0)?;
        let half = rk4_step(rhs, &mid, h / 2.0)?;
        let err = full
            .iter()
            .zip(&half)
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        let scale = tol * (1.0 + norm_inf(&half));
        if err <= scale {
            y = half
                .iter()
                .zip(&full)
                .map(|(fine, coarse)| fine + (fine - coarse) / 15.0)
                .collect();
            if hit_target {
                return Ok(y);
            }
            s += h;
            let grow = if err == 0.0 {
                5.0
            } else {
                (0.9 * (scale / err).powf(0.2)).clamp(0.2, 5.0)
            };
            h *= grow;
        } else {
            h *= (0.9 * (scale / err).powf(0.2)).clamp(0.2, 0.9);
        }
        if h.abs() < underflow {
            return Err(Error::OdeStepUnderflow {
                reached: s,
                target,
            });
        }
        steps += 1;
        if steps > MAX_STEPS {
            return Err(Error::OdeStepUnderflow {
                reached: s,
                target,
            });
        }
    }
}

fn rk4_step<F>(rhs: &F, y: &[f64], h: f64) -> Result<Vector, Error>
where
    F: Fn(&[f64]) -> Result<Vector, Error>,
{
    let n = y.len();
    let k1 = rhs(y)?;
    let mut stage = vec![0.0; n];
    for i in 0..n {
        stage[i] = y[i] + 0.5 * h * k1[i];
    }
    let k2 = rhs(&stage)?;
    for i in 0..n {
        stage[i] = y[i] + 0.5 * h * k2[i];
    }
    let k3 = rhs(&stage)?;
    for i in 0..n {
        stage[i] = y[i] + h * k3[i];
    }
    let k4 = rhs(&stage)?;
    Ok((0..n)
        .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}
