//! Program control: solve the plant channel P + Q s for the control s that
//! realizes the synthesized drift, and assemble the complete controlled
//! system whose motion stays on the manifold level set.

use crate::error::Error;
use crate::expr::{Bindings, Expression, Var};
use crate::manifold::{ManifoldLevel, ManifoldSpec};
use crate::nlinalg::{norm_inf, solve_linear, Matrix, Vector};
use crate::synthesis::{SdeCoefficients, SynthesizedSystem};

/// Residual bound under which an underdetermined channel counts as
/// consistent.
const FEASIBILITY_TOL: f64 = 1e-8;

/// The plant form of the controlled drift: P(t, x) + Q(t, x) * s with an
/// n-vector P and an n x r channel matrix Q.
#[derive(Clone, Debug)]
pub struct PlantSpec {
    p: Vec<Expression>,
    q: Vec<Vec<Expression>>,
    n: usize,
    r: usize,
}

impl PlantSpec {
    pub fn new(p: Vec<Expression>, q: Vec<Vec<Expression>>) -> Result<Self, Error> {
        let n = p.len();
        if n < 2 {
            return Err(Error::Config(format!(
                "plant drift must have at least 2 components, got {n}"
            )));
        }
        if q.len() != n {
            return Err(Error::Config(format!(
                "channel matrix has {} rows, expected {n}",
                q.len()
            )));
        }
        let r = q.first().map_or(0, |row| row.len());
        if r == 0 {
            return Err(Error::Config("control dimension r must be >= 1".into()));
        }
        if q.iter().any(|row| row.len() != r) {
            return Err(Error::Config("ragged channel matrix".into()));
        }
        for e in p.iter().chain(q.iter().flatten()) {
            if e.dim() != n {
                return Err(Error::Config(
                    "plant expressions must be parsed for the state dimension".into(),
                ));
            }
            if e.references(Var::Gamma) {
                return Err(Error::Config("plant functions may not reference gamma".into()));
            }
        }
        Ok(Self { p, q, n, r })
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn control_dim(&self) -> usize {
        self.r
    }

    pub fn eval_p(&self, t: f64, x: &[f64]) -> Result<Vector, Error> {
        self.p
            .iter()
            .map(|e| Ok(e.evaluate(&Bindings::state(t, x))?))
            .collect()
    }

    pub fn eval_q(&self, t: f64, x: &[f64]) -> Result<Matrix, Error> {
        let mut q = Matrix::zeros(self.n, self.r);
        for (i, row) in self.q.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                q.set(i, j, e.evaluate(&Bindings::state(t, x))?);
            }
        }
        Ok(q)
    }
}

/// Solve P(t,x) + Q(t,x) s = target for s.
///
/// r = n: direct solve (singular Q is an error). r < n: least squares,
/// accepted only when the channel can actually reach the target. r > n:
/// minimum-norm solution.
pub fn solve_control(
    plant: &PlantSpec,
    target_drift: &[f64],
    t: f64,
    x: &[f64],
) -> Result<Vector, Error> {
    let n = plant.state_dim();
    if target_drift.len() != n {
        return Err(Error::Dimension(format!(
            "target drift has length {}, state dimension is {n}",
            target_drift.len()
        )));
    }
    let p = plant.eval_p(t, x)?;
    let q = plant.eval_q(t, x)?;
    let b: Vector = target_drift.iter().zip(&p).map(|(a, pi)| a - pi).collect();
    let r = plant.control_dim();

    let map_singular = |e: Error| match e {
        Error::SingularMatrix(_) => Error::SingularChannel { t, x: x.to_vec() },
        other => other,
    };

    if r == n {
        return solve_linear(&q, &b).map_err(map_singular);
    }
    if r < n {
        let qt = q.transpose();
        let normal = qt.mul(&q)?;
        let rhs = qt.mul_vec(&b)?;
        let s = solve_linear(&normal, &rhs).map_err(map_singular)?;
        let achieved = q.mul_vec(&s)?;
        let residual = norm_inf(
            &achieved
                .iter()
                .zip(&b)
                .map(|(a, bi)| a - bi)
                .collect::<Vector>(),
        );
        if residual < FEASIBILITY_TOL {
            return Ok(s);
        }
        return Err(Error::InfeasibleControl {
            t,
            x: x.to_vec(),
            residual,
        });
    }
    // r > n: s = Q^T w with Q Q^T w = b.
    let qt = q.transpose();
    let gram = q.mul(&qt)?;
    let w = solve_linear(&gram, &b).map_err(map_singular)?;
    qt.mul_vec(&w)
}

/// A plant under program control together with the synthesized random
/// responses and the manifold level it must hold.
#[derive(Clone, Debug)]
pub struct Controlled<C> {
    pub coeffs: C,
    pub plant: PlantSpec,
    pub manifold: ManifoldSpec,
    pub t0: f64,
    pub x0: Vector,
    pub level: ManifoldLevel,
}

pub type ControlledSystem = Controlled<SynthesizedSystem>;

impl<C: SdeCoefficients> Controlled<C> {
    /// The program control s(t, x) realizing the synthesized drift.
    pub fn control(&self, t: f64, x: &[f64]) -> Result<Vector, Error> {
        let target = self.coeffs.drift(t, x)?;
        solve_control(&self.plant, &target, t, x)
    }

    /// The controlled drift P + Q s, evaluated pointwise.
    pub fn effective_drift(&self, t: f64, x: &[f64]) -> Result<Vector, Error> {
        let s = self.control(t, x)?;
        let p = self.plant.eval_p(t, x)?;
        let q = self.plant.eval_q(t, x)?;
        let qs = q.mul_vec(&s)?;
        Ok(p.iter().zip(&qs).map(|(a, b)| a + b).collect())
    }
}

/// Assemble the controlled system: checks the independence requirement at
/// the initial point, verifies synthesis and control succeed there, and
/// records the conserved level c = u(t0, x0).
pub fn build_controlled_system(
    coeffs: SynthesizedSystem,
    plant: PlantSpec,
    t0: f64,
    x0: &[f64],
) -> Result<ControlledSystem, Error> {
    let spec = coeffs.spec();
    let n = spec.state_dim();
    if plant.state_dim() != n {
        return Err(Error::Dimension(format!(
            "plant dimension {} does not match manifold dimension {n}",
            plant.state_dim()
        )));
    }
    if x0.len() != n {
        return Err(Error::Dimension(format!(
            "initial state has length {}, expected {n}",
            x0.len()
        )));
    }
    let report = spec.check_independence(&[(t0, x0.to_vec())])?;
    if !report.independent {
        let point = &report.points[0];
        return Err(Error::DependentFunctions(format!(
            "at t0={t0}, x0={x0:?}: f rank {}/{}, h rank {}/{}, phi rank {}/{}",
            point.f_rank,
            report.gradient_rank_expected,
            point.h_rank,
            report.h_rank_expected,
            point.phi_rank,
            report.gradient_rank_expected,
        )));
    }
    let target = coeffs.drift(t0, x0)?;
    solve_control(&plant, &target, t0, x0)?;
    let manifold = spec.clone();
    let c = manifold.u_value(t0, x0)?;
    Ok(Controlled {
        coeffs,
        plant,
        manifold,
        t0,
        x0: x0.to_vec(),
        level: ManifoldLevel { c },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expression;
    use crate::manifold::HRows;
    use approx::assert_abs_diff_eq;

    fn expr(src: &str) -> Expression {
        Expression::parse(src, 2).unwrap()
    }

    fn example_manifold() -> ManifoldSpec {
        ManifoldSpec::new(
            2,
            1,
            expr("x2*exp(-2*x1)"),
            vec![],
            HRows::Raw(vec![vec![expr("0"), expr("1"), expr("0")]]),
            vec![],
            vec![expr("1")],
        )
        .unwrap()
    }

    fn example_plant() -> PlantSpec {
        PlantSpec::new(
            vec![expr("x1 + x2 + exp(-t)"), expr("x1*x2 + exp(-2*t)")],
            vec![
                vec![expr("1"), expr("0")],
                vec![expr("0"), expr("1")],
            ],
        )
        .unwrap()
    }

    #[test]
    fn control_of_worked_example_point() {
        let sys = SynthesizedSystem::new(example_manifold());
        let target = sys.drift(0.0, &[0.0, 1.0]).unwrap();
        let s = solve_control(&example_plant(), &target, 0.0, &[0.0, 1.0]).unwrap();
        // P(0, (0,1)) = (2, 1) and A = (-1, 0), so s = (-3, -1).
        assert_abs_diff_eq!(s[0], -3.0, epsilon = 1e-8);
        assert_abs_diff_eq!(s[1], -1.0, epsilon = 1e-8);
    }

    #[test]
    fn control_is_zero_when_plant_matches_target() {
        let plant = PlantSpec::new(
            vec![expr("x1"), expr("x2")],
            vec![vec![expr("1"), expr("0")], vec![expr("0"), expr("1")]],
        )
        .unwrap();
        let target = plant.eval_p(0.3, &[0.5, -0.7]).unwrap();
        let s = solve_control(&plant, &target, 0.3, &[0.5, -0.7]).unwrap();
        assert_eq!(s, vec![0.0, 0.0]);
    }

    #[test]
    fn diagonal_channel_solve() {
        let plant = PlantSpec::new(
            vec![expr("0"), expr("0")],
            vec![vec![expr("2"), expr("0")], vec![expr("0"), expr("2")]],
        )
        .unwrap();
        let s = solve_control(&plant, &[4.0, 6.0], 0.0, &[0.0, 0.0]).unwrap();
        assert_eq!(s, vec![2.0, 3.0]);
    }

    #[test]
    fn scaling_channel_scales_control_inversely() {
        let make = |gain: &str| {
            PlantSpec::new(
                vec![expr("0"), expr("0")],
                vec![
                    vec![expr(gain), expr("0")],
                    vec![expr("0"), expr(gain)],
                ],
            )
            .unwrap()
        };
        let target = [1.2, -0.4];
        let s1 = solve_control(&make("1"), &target, 0.0, &[0.0, 0.0]).unwrap();
        let s5 = solve_control(&make("5"), &target, 0.0, &[0.0, 0.0]).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(s5[i], s1[i] / 5.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn singular_square_channel_is_error() {
        let plant = PlantSpec::new(
            vec![expr("0"), expr("0")],
            vec![vec![expr("1"), expr("1")], vec![expr("1"), expr("1")]],
        )
        .unwrap();
        assert!(matches!(
            solve_control(&plant, &[1.0, 2.0], 0.0, &[0.0, 0.0]),
            Err(Error::SingularChannel { .. })
        ));
    }

    #[test]
    fn underdetermined_channel_feasible_and_infeasible() {
        // Single actuator hitting only the first component.
        let plant = PlantSpec::new(
            vec![expr("0"), expr("0")],
            vec![vec![expr("1")], vec![expr("0")]],
        )
        .unwrap();
        let s = solve_control(&plant, &[3.0, 0.0], 0.0, &[0.0, 0.0]).unwrap();
        assert_eq!(s.len(), 1);
        assert_abs_diff_eq!(s[0], 3.0, epsilon = 1e-12);

        match solve_control(&plant, &[0.0, 1.0], 0.0, &[0.0, 0.0]) {
            Err(Error::InfeasibleControl { residual, .. }) => {
                assert_abs_diff_eq!(residual, 1.0, epsilon = 1e-12);
            }
            other => panic!("expected infeasible control, got {other:?}"),
        }
    }

    #[test]
    fn overdetermined_channel_minimum_norm() {
        // Two states, three actuators; any target is reachable.
        let plant = PlantSpec::new(
            vec![expr("0"), expr("0")],
            vec![
                vec![expr("1"), expr("0"), expr("1")],
                vec![expr("0"), expr("1"), expr("1")],
            ],
        )
        .unwrap();
        let target = [1.0, 2.0];
        let s = solve_control(&plant, &target, 0.0, &[0.0, 0.0]).unwrap();
        let q = plant.eval_q(0.0, &[0.0, 0.0]).unwrap();
        let achieved = q.mul_vec(&s).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(achieved[i], target[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn build_controlled_system_records_level() {
        let sys = SynthesizedSystem::new(example_manifold());
        let controlled = build_controlled_system(sys, example_plant(), 0.0, &[0.0, 1.0]).unwrap();
        assert_eq!(controlled.level.c, 1.0);
    }

    #[test]
    fn controlled_drift_reproduces_synthesized_drift() {
        let sys = SynthesizedSystem::new(example_manifold());
        let controlled = build_controlled_system(sys, example_plant(), 0.0, &[0.0, 1.0]).unwrap();
        let mut k = 3u64;
        let mut uniform = move || {
            k = k.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (k >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let t = uniform();
            let x = [2.0 * uniform() - 1.0, 0.1 + 2.9 * uniform()];
            let a = controlled.coeffs.drift(t, &x).unwrap();
            let eff = controlled.effective_drift(t, &x).unwrap();
            for i in 0..2 {
                assert!(
                    (a[i] - eff[i]).abs() < 1e-9 * (1.0 + a[i].abs()),
                    "component {i}: {} vs {}",
                    eff[i],
                    a[i]
                );
            }
        }
    }

    #[test]
    fn build_rejects_dependent_families() {
        let spec = ManifoldSpec::new(
            2,
            1,
            expr("x2*exp(-2*x1)"),
            vec![],
            // h row proportional to the u row: dependent stack.
            HRows::Raw(vec![vec![
                expr("0"),
                expr("-2*x2*exp(-2*x1)"),
                expr("exp(-2*x1)"),
            ]]),
            vec![],
            vec![expr("1")],
        )
        .unwrap();
        let sys = SynthesizedSystem::new(spec);
        assert!(matches!(
            build_controlled_system(sys, example_plant(), 0.0, &[0.0, 1.0]),
            Err(Error::DependentFunctions(_))
        ));
    }
}
