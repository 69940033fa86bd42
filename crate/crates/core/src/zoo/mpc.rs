use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{diag_pattern, solve_dare, sqrt_upper, SimStep, SimTrace, ZooError};
use crate::ast::{Constraint, Expr, Problem, ProblemBuilder, Sign, Values};
use crate::pipeline::CachedSolver;
use crate::solver::{Settings, Status};

pub const STATES: usize = 6;
pub const INPUTS: usize = 3;

/// Numeric data for the MPC family: dynamics, weights and physical limits.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    pub t_diag: Vec<f64>,
    pub mass: f64,
    pub gravity: f64,
    pub gamma: f64,
    pub u_vmin: f64,
    pub u_vmax: f64,
}

impl MpcModel {
    /// Point mass with force inputs, sampled at `dt`: position/velocity
    /// double integrator in three axes.
    pub fn quadcopter(dt: f64) -> MpcModel {
        let mass = 0.5;
        let gravity = 9.81;
        let mut a = DMatrix::identity(STATES, STATES);
        let mut b = DMatrix::zeros(STATES, INPUTS);
        for i in 0..3 {
            a[(i, i + 3)] = dt;
            b[(i, i)] = dt * dt / (2.0 * mass);
            b[(i + 3, i)] = dt / mass;
        }
        MpcModel {
            a,
            b,
            q_diag: vec![10.0, 10.0, 10.0, 1.0, 1.0, 1.0],
            r_diag: vec![0.1; INPUTS],
            t_diag: vec![0.1; INPUTS],
            mass,
            gravity,
            gamma: (PI / 6.0).tan(),
            u_vmin: -mass * gravity / 2.0,
            u_vmax: mass * gravity,
        }
    }

    /// Same weights and limits with random dynamics: `A` scaled to spectral
    /// norm 0.95 and a standard normal `B`.
    pub fn random_stable(seed: u64) -> MpcModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |r, c| DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng));
        let a: DMatrix<f64> = draw(STATES, STATES);
        let b = draw(STATES, INPUTS);
        let norm = a.clone().svd(false, false).singular_values.max();
        MpcModel {
            a: a * (0.95 / norm),
            b,
            ..MpcModel::quadcopter(0.1)
        }
    }

    pub fn q_terminal(&self) -> Result<DMatrix<f64>, ZooError> {
        solve_dare(&self.a, &self.b, &diag(&self.q_diag), &diag(&self.r_diag))
    }
}

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_row_slice(v))
}

fn diag_sqrt(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_iterator(v.len(), v.iter().map(|x| x.sqrt())))
}

#[derive(Debug, Clone)]
pub struct MpcFamily {
    pub horizon: usize,
    pub n_hs: usize,
    /// Unit normals of the tilt polygon.
    pub normals: Vec<[f64; 2]>,
    /// False for the variant with the explicit `gamma * m * g` product.
    pub dpp: bool,
    pub problem: Problem,
}

pub fn build_mpc(horizon: usize, n_hs: usize) -> Result<MpcFamily, ZooError> {
    build(horizon, n_hs, true)
}

/// The form before the offset `d = gamma m g` is collected into a single
/// parameter. Rejected by the DPP check.
pub fn build_mpc_non_dpp(horizon: usize, n_hs: usize) -> Result<MpcFamily, ZooError> {
    build(horizon, n_hs, false)
}

fn build(h: usize, n_hs: usize, dpp: bool) -> Result<MpcFamily, ZooError> {
    if h < 2 || n_hs < 3 {
        return Err(ZooError::InvalidDimensions(format!(
            "horizon {h} (need >= 2), halfspaces {n_hs} (need >= 3)"
        )));
    }
    let (nz, nu) = (STATES, INPUTS);
    let mut b = ProblemBuilder::new(if dpp { "mpc" } else { "mpc_non_dpp" });
    let z = b.variable("Z", nz, h + 1)?;
    let u = b.variable("U", nu, h + 1)?;
    let q_t = b.parameter("Q_T_sqrt", nz, nz)?;
    let q = b.parameter_with("Q_sqrt", nz, nz, Sign::Unknown, diag_pattern(nz))?;
    let r = b.parameter_with("R_sqrt", nu, nu, Sign::Unknown, diag_pattern(nu))?;
    let t = b.parameter_with("T_sqrt", nu, nu, Sign::Unknown, diag_pattern(nu))?;
    let a = b.parameter("A", nz, nz)?;
    let bm = b.parameter("B", nz, nu)?;
    let gamma = b.parameter_with("gamma", 1, 1, Sign::Nonneg, None)?;
    let offset = if dpp {
        b.parameter("d", h - 1, 1)?.t()
    } else {
        let m = b.parameter_with("m", 1, 1, Sign::Nonneg, None)?;
        let g = b.parameter_with("g", 1, 1, Sign::Nonneg, None)?;
        gamma.mul_elem(&m)?.mul_elem(&g)?
    };
    let u_vmin = b.parameter("u_vmin", 1, 1)?;
    let u_vmax = b.parameter("u_vmax", 1, 1)?;
    let z_meas = b.parameter("z_meas", nz, 1)?;
    let u_prev = b.parameter("u_prev", nu, 1)?;

    let zs = |c0: usize, c1: usize| z.index(0..=nz - 1, c0..=c1);
    let us = |r0: usize, r1: usize, c0: usize, c1: usize| u.index(r0..=r1, c0..=c1);

    let objective = Expr::sum_of(&[
        q_t.matmul(&zs(h, h)?)?.sum_squares(),
        q.matmul(&zs(0, h - 1)?)?.sum_squares(),
        r.matmul(&us(0, nu - 1, 0, h - 1)?)?.sum_squares(),
        t.matmul(&us(0, nu - 1, 1, h)?.minus(&us(0, nu - 1, 0, h - 1)?)?)?
            .sum_squares(),
    ])?;
    b.minimize(objective);

    b.constrain(Constraint::eq(&zs(0, 0)?, &z_meas)?);
    b.constrain(Constraint::eq(&us(0, nu - 1, 0, 0)?, &u_prev)?);
    b.constrain(Constraint::eq(
        &zs(1, h)?,
        &a.matmul(&zs(0, h - 1)?)?.plus(&bm.matmul(&us(0, nu - 1, 0, h - 1)?)?)?,
    )?);
    let vert = us(2, 2, 1, h - 1)?;
    b.constrain(Constraint::ge(&vert, &u_vmin)?);
    b.constrain(Constraint::le(&vert, &u_vmax)?);
    let horiz = us(0, 1, 1, h - 1)?;
    let normals = polygon_normals(n_hs);
    let bound = gamma.mul_elem(&vert)?.plus(&offset)?;
    for c in &normals {
        let row = Expr::constant(DMatrix::from_row_slice(1, 2, c))?;
        b.constrain(Constraint::le(&row.matmul(&horiz)?, &bound)?);
    }
    Ok(MpcFamily {
        horizon: h,
        n_hs,
        normals,
        dpp,
        problem: b.build()?,
    })
}

/// Outward unit normals of a regular polygon with `k` sides.
pub fn polygon_normals(k: usize) -> Vec<[f64; 2]> {
    (0..k)
        .map(|j| {
            let a = 2.0 * PI * j as f64 / k as f64;
            [a.cos(), a.sin()]
        })
        .collect()
}

impl MpcFamily {
    /// Parameter values for `model` at the given measurement and previous
    /// input.
    pub fn values(&self, model: &MpcModel, z_meas: &[f64], u_prev: &[f64]) -> Result<Values, ZooError> {
        if z_meas.len() != STATES || u_prev.len() != INPUTS {
            return Err(ZooError::InvalidDimensions("z_meas / u_prev".into()));
        }
        let h = self.horizon;
        let mut v = Values::new();
        v.insert("Q_T_sqrt".into(), sqrt_upper(&model.q_terminal()?)?);
        v.insert("Q_sqrt".into(), diag_sqrt(&model.q_diag));
        v.insert("R_sqrt".into(), diag_sqrt(&model.r_diag));
        v.insert("T_sqrt".into(), diag_sqrt(&model.t_diag));
        v.insert("A".into(), model.a.clone());
        v.insert("B".into(), model.b.clone());
        v.insert("gamma".into(), DMatrix::from_element(1, 1, model.gamma));
        let mg = model.mass * model.gravity;
        if self.dpp {
            v.insert("d".into(), DMatrix::from_element(h - 1, 1, model.gamma * mg));
        } else {
            v.insert("m".into(), DMatrix::from_element(1, 1, model.mass));
            v.insert("g".into(), DMatrix::from_element(1, 1, model.gravity));
        }
        v.insert("u_vmin".into(), DMatrix::from_element(1, 1, model.u_vmin));
        v.insert("u_vmax".into(), DMatrix::from_element(1, 1, model.u_vmax));
        v.insert("z_meas".into(), DMatrix::from_column_slice(STATES, 1, z_meas));
        v.insert("u_prev".into(), DMatrix::from_column_slice(INPUTS, 1, u_prev));
        Ok(v)
    }

    pub fn variable_count(&self) -> usize {
        self.problem.variable_count()
    }
}

/// Closed-loop run. Each step measures the plant state, solves with
/// `Z_0 = z`, `U_0 = u_prev`, applies `U_0` to the plant
/// `z+ = a_true z + b_true U_0` and carries `U_1` over as the next
/// `u_prev`: the input decided now is applied during the next interval.
#[allow(clippy::too_many_arguments)]
pub fn simulate_mpc(
    family: &MpcFamily,
    model: &MpcModel,
    a_true: &DMatrix<f64>,
    b_true: &DMatrix<f64>,
    z0: &[f64],
    steps: usize,
    settings: Settings,
) -> Result<SimTrace, ZooError> {
    if a_true.shape() != (STATES, STATES) || b_true.shape() != (STATES, INPUTS) {
        return Err(ZooError::InvalidDimensions("plant matrices".into()));
    }
    let mut params = family.values(model, z0, &[0.0; INPUTS])?;
    let mut cs = CachedSolver::new(&family.problem, &params, settings)?;
    let mut z = DVector::from_row_slice(z0);
    let mut u_prev = DVector::zeros(INPUTS);
    let mut trace = SimTrace::default();
    let all: Vec<String> = family.problem.parameters.iter().map(|p| p.name.clone()).collect();
    let fail = |step| move |source| ZooError::Pipeline { step, source };
    for k in 0..steps {
        let updated = if k == 0 {
            all.clone()
        } else {
            let zm = DMatrix::from_column_slice(STATES, 1, z.as_slice());
            let up = DMatrix::from_column_slice(INPUTS, 1, u_prev.as_slice());
            cs.set_param("z_meas", &zm).map_err(fail(k))?;
            cs.set_param("u_prev", &up).map_err(fail(k))?;
            params.insert("z_meas".into(), zm);
            params.insert("u_prev".into(), up);
            vec!["z_meas".to_string(), "u_prev".to_string()]
        };
        let start = Instant::now();
        let res = cs.solve().map_err(fail(k))?;
        let wall_ns = start.elapsed().as_nanos() as u64;
        let status = res.solution.status;
        if status != Status::Solved {
            return Err(ZooError::SolveFailed { step: k, status });
        }
        let vars = cs.rmap.retrieve_values(&res.solution.x_tilde).map_err(|e| fail(k)(e.into()))?;
        let uu = &vars["U"];
        let applied = uu.column(0).into_owned();
        z = a_true * &z + b_true * applied;
        u_prev = uu.column(1).into_owned();
        trace.steps.push(SimStep {
            step: k,
            theta: cs.theta().to_vec(),
            updated,
            objective: family.problem.objective_value(&vars, &params)?,
            feasibility_violation: family.problem.max_violation(&vars, &params)?,
            x: res.x,
            iterations: res.solution.iterations,
            wall_ns,
            refactorized: res.refactorized || k == 0,
            status,
            touched: res.touched.into_iter().collect(),
        });
    }
    trace.factorizations = cs.factorizations();
    Ok(trace)
}

/// Initial state with entries uniform in [-1, 1), drawn from `seed`.
pub fn random_state(seed: u64) -> [f64; STATES] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::array::from_fn(|_| rng.random_range(-1.0..1.0))
}
