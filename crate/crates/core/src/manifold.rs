//! The manifold function u and the auxiliary function families that
//! parameterize the coefficient synthesis, plus the numerical independence
//! check those families must satisfy.

use serde::Serialize;

use crate::error::Error;
use crate::expr::{Bindings, Expression, Var};
use crate::nlinalg::{numerical_rank, Matrix, Vector};

/// Relative singular-value threshold for the numerical rank.
const RANK_TOL: f64 = 1e-8;

/// The rows of the drift determinant below the gradient row: either
/// potentials h_i (each row is (dh/dt, dh/dx1..dh/dxn)) or raw row entries
/// supplied directly, n+1 expressions per row with the time entry first.
#[derive(Clone, Debug)]
pub enum HRows {
    Potentials(Vec<Expression>),
    Raw(Vec<Vec<Expression>>),
}

impl HRows {
    pub fn count(&self) -> usize {
        match self {
            HRows::Potentials(list) => list.len(),
            HRows::Raw(rows) => rows.len(),
        }
    }
}

/// The conserved value u(t0, x0) a program motion must hold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ManifoldLevel {
    pub c: f64,
}

/// Manifold function plus every degree of freedom of the synthesis:
/// f-rows (diffusion determinant), h-rows (drift determinant), phi-rows
/// (jump ODE determinant), and the per-column diffusion scale q00.
#[derive(Clone, Debug)]
pub struct ManifoldSpec {
    n: usize,
    m: usize,
    u: Expression,
    f_funcs: Vec<Expression>,
    h_rows: HRows,
    phi_funcs: Vec<Expression>,
    q00: Vec<Expression>,
}

impl ManifoldSpec {
    /// Validates all dimension counts: n-2 f rows, n-1 h rows, n-2 phi
    /// rows, m q00 entries, no `gamma` references anywhere, and u must
    /// depend on at least one state coordinate.
    pub fn new(
        n: usize,
        m: usize,
        u: Expression,
        f_funcs: Vec<Expression>,
        h_rows: HRows,
        phi_funcs: Vec<Expression>,
        q00: Vec<Expression>,
    ) -> Result<Self, Error> {
        if n < 2 {
            return Err(Error::Config(format!("state dimension must be >= 2, got {n}")));
        }
        if u.dim() != n {
            return Err(Error::Config("u was parsed for a different dimension".into()));
        }
        if !u.references_state() {
            return Err(Error::Config(
                "u must depend on at least one state coordinate".into(),
            ));
        }
        if f_funcs.len() != n - 2 {
            return Err(Error::Config(format!(
                "expected {} f functions, got {}",
                n - 2,
                f_funcs.len()
            )));
        }
        if phi_funcs.len() != n - 2 {
            return Err(Error::Config(format!(
                "expected {} phi functions, got {}",
                n - 2,
                phi_funcs.len()
            )));
        }
        if h_rows.count() != n - 1 {
            return Err(Error::Config(format!(
                "expected {} h rows, got {}",
                n - 1,
                h_rows.count()
            )));
        }
        if let HRows::Raw(rows) = &h_rows {
            for (i, row) in rows.iter().enumerate() {
                if row.len() != n + 1 {
                    return Err(Error::Config(format!(
                        "raw h row {} has {} entries, expected {}",
                        i + 1,
                        row.len(),
                        n + 1
                    )));
                }
            }
        }
        if q00.len() != m {
            return Err(Error::Config(format!(
                "expected {m} q00 entries (one per Wiener column), got {}",
                q00.len()
            )));
        }
        let mut all: Vec<&Expression> = vec![&u];
        all.extend(&f_funcs);
        all.extend(&phi_funcs);
        all.extend(&q00);
        if let HRows::Potentials(list) = &h_rows {
            all.extend(list);
        }
        if let HRows::Raw(rows) = &h_rows {
            for row in rows {
                all.extend(row);
            }
        }
        for e in all {
            if e.references(Var::Gamma) {
                return Err(Error::Config(
                    "manifold functions may not reference gamma".into(),
                ));
            }
            if e.dim() != n {
                return Err(Error::Config(
                    "all manifold functions must be parsed for the same dimension".into(),
                ));
            }
        }
        Ok(Self {
            n,
            m,
            u,
            f_funcs,
            h_rows,
            phi_funcs,
            q00,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn wiener_dim(&self) -> usize {
        self.m
    }

    pub fn u(&self) -> &Expression {
        &self.u
    }

    /// u(t, x).
    pub fn u_value(&self, t: f64, x: &[f64]) -> Result<f64, Error> {
        Ok(self.u.evaluate(&Bindings::state(t, x))?)
    }

    /// (du/dt, grad_x u) at (t, x), exact forward-mode derivatives.
    pub fn grad_u(&self, t: f64, x: &[f64]) -> Result<(f64, Vector), Error> {
        let g = self.u.gradient(&Bindings::state(t, x))?;
        Ok((g.dt, g.dx))
    }

    /// x-gradients of the f family at (t, x); n-2 rows of length n.
    pub fn f_gradients(&self, t: f64, x: &[f64]) -> Result<Vec<Vector>, Error> {
        self.f_funcs
            .iter()
            .map(|f| Ok(f.gradient(&Bindings::state(t, x))?.dx))
            .collect()
    }

    /// x-gradients of the phi family evaluated at state `y`; the phi
    /// expressions are written in x1..xn which are bound to y here.
    pub fn phi_gradients(&self, t: f64, y: &[f64]) -> Result<Vec<Vector>, Error> {
        self.phi_funcs
            .iter()
            .map(|f| Ok(f.gradient(&Bindings::state(t, y))?.dx))
            .collect()
    }

    /// The n-1 drift determinant rows at (t, x), each of length n+1 with
    /// the time entry first.
    pub fn h_row_values(&self, t: f64, x: &[f64]) -> Result<Vec<Vector>, Error> {
        match &self.h_rows {
            HRows::Potentials(list) => list
                .iter()
                .map(|h| {
                    let g = h.gradient(&Bindings::state(t, x))?;
                    let mut row = Vec::with_capacity(self.n + 1);
                    row.push(g.dt);
                    row.extend(g.dx);
                    Ok(row)
                })
                .collect(),
            HRows::Raw(rows) => rows
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|e| Ok(e.evaluate(&Bindings::state(t, x))?))
                        .collect()
                })
                .collect(),
        }
    }

    /// q00 for Wiener column `k` (0-based); errors if it vanishes.
    pub fn q00_value(&self, k: usize, t: f64, x: &[f64]) -> Result<f64, Error> {
        let value = self.q00[k].evaluate(&Bindings::state(t, x))?;
        if value == 0.0 {
            return Err(Error::VanishingQ00 {
                t,
                x: x.to_vec(),
            });
        }
        Ok(value)
    }

    /// Numerical independence check at each sample point: the stacked
    /// x-gradients of {u, f} and {u, phi} must have rank n-1, and the
    /// (n+1)-column stack of the u row with the h rows must have rank n.
    pub fn check_independence(
        &self,
        points: &[(f64, Vector)],
    ) -> Result<IndependenceReport, Error> {
        if points.is_empty() {
            return Err(Error::Config(
                "independence check needs at least one sample point".into(),
            ));
        }
        let n = self.n;
        let mut report = IndependenceReport {
            gradient_rank_expected: n - 1,
            h_rank_expected: n,
            points: Vec::with_capacity(points.len()),
            independent: true,
        };
        for (t, x) in points {
            let (du_dt, grad) = self.grad_u(*t, x)?;

            let mut f_stack = vec![grad.clone()];
            f_stack.extend(self.f_gradients(*t, x)?);
            let f_rank = numerical_rank(&Matrix::from_rows(&f_stack)?, RANK_TOL);

            let mut phi_stack = vec![grad.clone()];
            phi_stack.extend(self.phi_gradients(*t, x)?);
            let phi_rank = numerical_rank(&Matrix::from_rows(&phi_stack)?, RANK_TOL);

            let mut u_row = Vec::with_capacity(n + 1);
            u_row.push(du_dt);
            u_row.extend(grad);
            let mut h_stack = vec![u_row];
            h_stack.extend(self.h_row_values(*t, x)?);
            let h_rank = numerical_rank(&Matrix::from_rows(&h_stack)?, RANK_TOL);

            let independent = f_rank == n - 1 && phi_rank == n - 1 && h_rank == n;
            report.independent &= independent;
            report.points.push(IndependencePoint {
                t: *t,
                x: x.clone(),
                f_rank,
                h_rank,
                phi_rank,
                independent,
            });
        }
        Ok(report)
    }
}

/// Rank results at one sample point.
#[derive(Clone, Debug, Serialize)]
pub struct IndependencePoint {
    pub t: f64,
    pub x: Vector,
    pub f_rank: usize,
    pub h_rank: usize,
    pub phi_rank: usize,
    pub independent: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct IndependenceReport {
    pub gradient_rank_expected: usize,
    pub h_rank_expected: usize,
    pub points: Vec<IndependencePoint>,
    /// True iff every stack has full rank at every sample point.
    pub independent: bool,
}

/// Indices (1-based) of the `count` coordinates where |grad| is smallest;
/// used to pick default coordinate projections that stay independent of u.
pub fn default_projection_indices(grad: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (1..=grad.len()).collect();
    order.sort_by(|&a, &b| {
        grad[a - 1]
            .abs()
            .partial_cmp(&grad[b - 1].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut chosen: Vec<usize> = order.into_iter().take(count).collect();
    chosen.sort_unstable();
    chosen
}

/// Default f/phi families: coordinate projections x_j for the `count`
/// coordinates where |grad u(t0, x0)| is smallest.
pub fn default_projections(
    n: usize,
    count: usize,
    grad_at_x0: &[f64],
) -> Result<Vec<Expression>, Error> {
    default_projection_indices(grad_at_x0, count)
        .into_iter()
        .map(|j| Expression::parse(&format!("x{j}"), n).map_err(Error::from))
        .collect()
}

/// Default h rows: constant rows (0, e_j) for every coordinate except the
/// one where |grad u(t0, x0)| is largest, which keeps the basis cofactor
/// of the drift determinant away from zero at the initial point.
pub fn default_h_rows(n: usize, grad_at_x0: &[f64]) -> HRows {
    let mut jmax = 1;
    for j in 2..=n {
        if grad_at_x0[j - 1].abs() > grad_at_x0[jmax - 1].abs() {
            jmax = j;
        }
    }
    let rows = (1..=n)
        .filter(|&j| j != jmax)
        .map(|j| {
            (0..=n)
                .map(|col| Expression::constant(if col == j { 1.0 } else { 0.0 }, n))
                .collect()
        })
        .collect();
    HRows::Raw(rows)
}
