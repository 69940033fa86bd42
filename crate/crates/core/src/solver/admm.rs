use super::kkt::Kkt;
use super::ldl::Ldl;
use super::{Settings, Solution, SolverError, Status, INF_BOUND, RHO_EQ_SCALE, RHO_EQ_TOL, RHO_MIN};
use crate::sparse::{sym_upper_spmv, CscMatrix};

/// Problem data, KKT factorization and iterates for one QP. Exclusively
/// owned; distinct workspaces are independent.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub settings: Settings,
    n: usize,
    m: usize,
    p: CscMatrix,
    q: Vec<f64>,
    a: CscMatrix,
    l: Vec<f64>,
    u: Vec<f64>,
    rho: Vec<f64>,
    rho_inv: Vec<f64>,
    kkt: Kkt,
    ldl: Ldl,
    x: Vec<f64>,
    z: Vec<f64>,
    y: Vec<f64>,
    x_prev: Vec<f64>,
    z_prev: Vec<f64>,
    zrel: Vec<f64>,
    dy: Vec<f64>,
    work: Vec<f64>,
    ax: Vec<f64>,
    px: Vec<f64>,
    aty: Vec<f64>,
    status: Status,
    iterations: usize,
    prim_res: f64,
    dual_res: f64,
    factorizations: usize,
}

fn clamp_bound(v: f64) -> f64 {
    v.clamp(-INF_BOUND, INF_BOUND)
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn check_len(what: &'static str, v: &[f64], expected: usize) -> Result<(), SolverError> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(SolverError::DimensionMismatch {
            what,
            expected,
            found: v.len(),
        })
    }
}

fn check_bounds(l: &[f64], u: &[f64]) -> Result<(), SolverError> {
    for (i, (&li, &ui)) in l.iter().zip(u).enumerate() {
        if li.is_nan() || ui.is_nan() || li > ui {
            return Err(SolverError::BoundCrossing { row: i, l: li, u: ui });
        }
    }
    Ok(())
}

impl Workspace {
    /// Assemble and factorize the KKT matrix. `p` is the upper triangle of
    /// a positive semidefinite matrix.
    pub fn setup(
        p: &CscMatrix,
        q: &[f64],
        a: &CscMatrix,
        l: &[f64],
        u: &[f64],
        settings: Settings,
    ) -> Result<Workspace, SolverError> {
        settings.validate()?;
        let n = p.ncols;
        let m = a.nrows;
        if p.nrows != n {
            return Err(SolverError::DimensionMismatch {
                what: "P rows",
                expected: n,
                found: p.nrows,
            });
        }
        check_len("q", q, n)?;
        check_len("l", l, m)?;
        check_len("u", u, m)?;
        if a.ncols != n {
            return Err(SolverError::DimensionMismatch {
                what: "A columns",
                expected: n,
                found: a.ncols,
            });
        }
        if q.iter().chain(&p.values).chain(&a.values).any(|v| !v.is_finite()) {
            return Err(SolverError::NonFinite("P, q or A"));
        }
        check_bounds(l, u)?;
        let l: Vec<f64> = l.iter().map(|&v| clamp_bound(v)).collect();
        let u: Vec<f64> = u.iter().map(|&v| clamp_bound(v)).collect();

        let rho: Vec<f64> = (0..m)
            .map(|i| {
                if l[i] <= -INF_BOUND && u[i] >= INF_BOUND {
                    RHO_MIN
                } else if u[i] - l[i] < RHO_EQ_TOL {
                    RHO_EQ_SCALE * settings.rho
                } else {
                    settings.rho
                }
            })
            .collect();
        let rho_inv: Vec<f64> = rho.iter().map(|r| 1.0 / r).collect();
        let kkt = Kkt::build(p, a, settings.sigma, &rho_inv)?;
        let ldl = Ldl::analyze(&kkt.k)?;
        let mut ws = Workspace {
            settings,
            n,
            m,
            p: p.clone(),
            q: q.to_vec(),
            a: a.clone(),
            l,
            u,
            rho,
            rho_inv,
            kkt,
            ldl,
            x: vec![0.0; n],
            z: vec![0.0; m],
            y: vec![0.0; m],
            x_prev: vec![0.0; n],
            z_prev: vec![0.0; m],
            zrel: vec![0.0; m],
            dy: vec![0.0; m],
            work: vec![0.0; n + m],
            ax: vec![0.0; m],
            px: vec![0.0; n],
            aty: vec![0.0; n],
            status: Status::Unsolved,
            iterations: 0,
            prim_res: f64::INFINITY,
            dual_res: f64::INFINITY,
            factorizations: 0,
        };
        ws.refactor()?;
        Ok(ws)
    }

    fn refactor(&mut self) -> Result<(), SolverError> {
        self.factorizations += 1;
        self.ldl.factor(&self.kkt.k)?;
        if self.ldl.positive != self.n {
            return Err(SolverError::FactorizationBreakdown {
                positive: self.ldl.positive,
                expected: self.n,
            });
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of numeric KKT factorizations performed so far, including
    /// the one in [`Workspace::setup`].
    pub fn factorizations(&self) -> usize {
        self.factorizations
    }

    pub fn kkt(&self) -> &Kkt {
        &self.kkt
    }

    pub fn ldl(&self) -> &Ldl {
        &self.ldl
    }

    pub fn rho_vec(&self) -> &[f64] {
        &self.rho
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.l, &self.u)
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn status(&self) -> Status {
        self.status
    }

    /// Replace q, l and/or u. The factorization and the iterates are kept.
    pub fn update_vectors(
        &mut self,
        q: Option<&[f64]>,
        l: Option<&[f64]>,
        u: Option<&[f64]>,
    ) -> Result<(), SolverError> {
        if let Some(q) = q {
            check_len("q", q, self.n)?;
            if q.iter().any(|v| !v.is_finite()) {
                return Err(SolverError::NonFinite("q"));
            }
        }
        if let Some(l) = l {
            check_len("l", l, self.m)?;
        }
        if let Some(u) = u {
            check_len("u", u, self.m)?;
        }
        let new_l: Vec<f64> = l.map_or_else(|| self.l.clone(), |l| l.iter().map(|&v| clamp_bound(v)).collect());
        let new_u: Vec<f64> = u.map_or_else(|| self.u.clone(), |u| u.iter().map(|&v| clamp_bound(v)).collect());
        check_bounds(&new_l, &new_u)?;
        if let Some(q) = q {
            self.q.copy_from_slice(q);
        }
        self.l = new_l;
        self.u = new_u;
        self.status = Status::Unsolved;
        Ok(())
    }

    /// Replace the values of P and/or A on their fixed patterns and
    /// refactorize with the same ordering. Iterates are kept.
    pub fn update_matrix_values(
        &mut self,
        p_values: Option<&[f64]>,
        a_values: Option<&[f64]>,
    ) -> Result<(), SolverError> {
        if let Some(pv) = p_values {
            check_len("P values", pv, self.p.nnz())?;
        }
        if let Some(av) = a_values {
            check_len("A values", av, self.a.nnz())?;
        }
        if p_values.into_iter().chain(a_values).flatten().any(|v| !v.is_finite()) {
            return Err(SolverError::NonFinite("matrix values"));
        }
        if let Some(pv) = p_values {
            self.p.values.copy_from_slice(pv);
            self.kkt.set_p_values(pv, self.settings.sigma);
        }
        if let Some(av) = a_values {
            self.a.values.copy_from_slice(av);
            self.kkt.set_a_values(av);
        }
        self.status = Status::Unsolved;
        if p_values.is_some() || a_values.is_some() {
            self.refactor()?;
        }
        Ok(())
    }

    /// Solve the KKT system for `rhs` (original ordering) in place.
    pub fn ldl_solve(&mut self, rhs: &mut [f64]) {
        let dim = self.n + self.m;
        for k in 0..dim {
            self.work[k] = rhs[self.kkt.perm[k]];
        }
        self.ldl.solve_in_place(&mut self.work);
        for k in 0..dim {
            rhs[self.kkt.perm[k]] = self.work[k];
        }
    }

    pub fn cold_start(&mut self) {
        self.x.fill(0.0);
        self.z.fill(0.0);
        self.y.fill(0.0);
    }

    /// Set primal and dual iterates; `z` is set to `A x`.
    pub fn warm_start(&mut self, x: &[f64], y: &[f64]) -> Result<(), SolverError> {
        check_len("x", x, self.n)?;
        check_len("y", y, self.m)?;
        self.x.copy_from_slice(x);
        self.y.copy_from_slice(y);
        let mut z = vec![0.0; self.m];
        self.a.spmv_into(&self.x, &mut z)?;
        self.z = z;
        Ok(())
    }

    fn admm_step(&mut self) {
        let (n, m) = (self.n, self.m);
        let alpha = self.settings.alpha;
        let sigma = self.settings.sigma;
        self.x_prev.copy_from_slice(&self.x);
        self.z_prev.copy_from_slice(&self.z);
        for j in 0..n {
            self.work[self.kkt.pinv[j]] = sigma * self.x_prev[j] - self.q[j];
        }
        for i in 0..m {
            self.work[self.kkt.pinv[n + i]] = self.z_prev[i] - self.rho_inv[i] * self.y[i];
        }
        self.ldl.solve_in_place(&mut self.work);
        for j in 0..n {
            let xt = self.work[self.kkt.pinv[j]];
            self.x[j] = alpha * xt + (1.0 - alpha) * self.x_prev[j];
        }
        for i in 0..m {
            let nu = self.work[self.kkt.pinv[n + i]];
            let zt = self.z_prev[i] + self.rho_inv[i] * (nu - self.y[i]);
            let zrel = alpha * zt + (1.0 - alpha) * self.z_prev[i];
            let znew = (zrel + self.rho_inv[i] * self.y[i]).max(self.l[i]).min(self.u[i]);
            self.dy[i] = self.rho[i] * (zrel - znew);
            self.y[i] += self.dy[i];
            self.z[i] = znew;
            self.zrel[i] = zrel;
        }
    }

    fn compute_residuals(&mut self) -> (f64, f64, f64, f64) {
        let (n, m) = (self.n, self.m);
        self.ax.fill(0.0);
        self.aty.fill(0.0);
        for j in 0..n {
            let xj = self.x[j];
            let mut acc = 0.0;
            for k in self.a.col_ptr[j]..self.a.col_ptr[j + 1] {
                let i = self.a.row_idx[k];
                self.ax[i] += self.a.values[k] * xj;
                acc += self.a.values[k] * self.y[i];
            }
            self.aty[j] = acc;
        }
        sym_upper_spmv(&self.p, &self.x, &mut self.px);
        let mut prim: f64 = 0.0;
        let mut ax_n: f64 = 0.0;
        let mut z_n: f64 = 0.0;
        for i in 0..m {
            prim = prim.max((self.ax[i] - self.z[i]).abs());
            ax_n = ax_n.max(self.ax[i].abs());
            z_n = z_n.max(self.z[i].abs());
        }
        let mut dual: f64 = 0.0;
        let (mut px_n, mut aty_n, mut q_n): (f64, f64, f64) = (0.0, 0.0, 0.0);
        for j in 0..n {
            dual = dual.max((self.px[j] + self.q[j] + self.aty[j]).abs());
            px_n = px_n.max(self.px[j].abs());
            aty_n = aty_n.max(self.aty[j].abs());
            q_n = q_n.max(self.q[j].abs());
        }
        let s = &self.settings;
        let eps_prim = s.eps_abs + s.eps_rel * ax_n.max(z_n);
        let eps_dual = s.eps_abs + s.eps_rel * px_n.max(aty_n).max(q_n);
        (prim, dual, eps_prim, eps_dual)
    }

    /// Certificate check on the last dual increment. Overwrites `dy`.
    fn is_primal_infeasible(&mut self) -> bool {
        let eps = self.settings.eps_prim_inf;
        for i in 0..self.m {
            let (lo_inf, hi_inf) = (self.l[i] <= -INF_BOUND, self.u[i] >= INF_BOUND);
            if hi_inf && lo_inf {
                self.dy[i] = 0.0;
            } else if hi_inf {
                self.dy[i] = self.dy[i].min(0.0);
            } else if lo_inf {
                self.dy[i] = self.dy[i].max(0.0);
            }
        }
        let norm_dy = norm_inf(&self.dy);
        if norm_dy <= 1e-20 {
            return false;
        }
        let mut lhs = 0.0;
        for i in 0..self.m {
            lhs += self.u[i] * self.dy[i].max(0.0) + self.l[i] * self.dy[i].min(0.0);
        }
        if lhs >= -eps * norm_dy {
            return false;
        }
        let mut worst: f64 = 0.0;
        for j in 0..self.n {
            let mut acc = 0.0;
            for k in self.a.col_ptr[j]..self.a.col_ptr[j + 1] {
                acc += self.a.values[k] * self.dy[self.a.row_idx[k]];
            }
            worst = worst.max(acc.abs());
        }
        worst < eps * norm_dy
    }

    fn is_dual_infeasible(&mut self) -> bool {
        let eps = self.settings.eps_dual_inf;
        let dx: Vec<f64> = (0..self.n).map(|j| self.x[j] - self.x_prev[j]).collect();
        let norm_dx = norm_inf(&dx);
        if norm_dx <= 1e-20 {
            return false;
        }
        let qdx: f64 = (0..self.n).map(|j| self.q[j] * dx[j]).sum();
        if qdx >= -eps * norm_dx {
            return false;
        }
        let mut pdx = vec![0.0; self.n];
        sym_upper_spmv(&self.p, &dx, &mut pdx);
        if norm_inf(&pdx) > eps * norm_dx {
            return false;
        }
        let mut adx = vec![0.0; self.m];
        for j in 0..self.n {
            for k in self.a.col_ptr[j]..self.a.col_ptr[j + 1] {
                adx[self.a.row_idx[k]] += self.a.values[k] * dx[j];
            }
        }
        (0..self.m).all(|i| {
            let hi_ok = self.u[i] >= INF_BOUND || adx[i] <= eps * norm_dx;
            let lo_ok = self.l[i] <= -INF_BOUND || adx[i] >= -eps * norm_dx;
            hi_ok && lo_ok
        })
    }

    /// Run ADMM from the current iterates (or zeros when warm starting is
    /// disabled) until convergence, an infeasibility certificate, or
    /// `max_iter`.
    pub fn solve(&mut self) -> Solution {
        if !self.settings.warm_start {
            self.cold_start();
        }
        let max_iter = self.settings.max_iter;
        let every = self.settings.check_interval;
        self.status = Status::MaxIterReached;
        self.iterations = max_iter;
        for iter in 1..=max_iter {
            self.admm_step();
            if iter % every != 0 && iter != max_iter {
                continue;
            }
            let (prim, dual, eps_prim, eps_dual) = self.compute_residuals();
            self.prim_res = prim;
            self.dual_res = dual;
            if prim <= eps_prim && dual <= eps_dual {
                self.status = Status::Solved;
                self.iterations = iter;
                break;
            }
            if self.is_primal_infeasible() {
                self.status = Status::PrimalInfeasible;
                self.iterations = iter;
                break;
            }
            if self.is_dual_infeasible() {
                self.status = Status::DualInfeasible;
                self.iterations = iter;
                break;
            }
        }
        self.solution()
    }

    /// `1/2 x'Px + q'x` at the current iterate.
    pub fn objective(&self) -> f64 {
        let mut px = vec![0.0; self.n];
        sym_upper_spmv(&self.p, &self.x, &mut px);
        (0..self.n).map(|j| 0.5 * self.x[j] * px[j] + self.q[j] * self.x[j]).sum()
    }

    pub fn solution(&self) -> Solution {
        Solution {
            x_tilde: self.x.clone(),
            y: self.y.clone(),
            status: self.status,
            iterations: self.iterations,
            primal_res: self.prim_res,
            dual_res: self.dual_res,
            objective: self.objective(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_nonnegative_minimizer() {
        // min x^2 - 2x, x >= 0
        let p = CscMatrix::from_triplets(1, 1, &[(0, 0, 2.0)]).unwrap();
        let a = CscMatrix::identity(1);
        let mut ws = Workspace::setup(&p, &[-2.0], &a, &[0.0], &[f64::INFINITY], Settings::default()).unwrap();
        let s = ws.solve();
        assert_eq!(s.status, Status::Solved);
        assert!((s.x_tilde[0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn rejects_crossed_bounds_and_bad_lengths() {
        let p = CscMatrix::zeros(1, 1);
        let a = CscMatrix::identity(1);
        let err = Workspace::setup(&p, &[0.0], &a, &[1.0], &[0.0], Settings::default()).unwrap_err();
        assert!(matches!(err, SolverError::BoundCrossing { row: 0, .. }));
        let err = Workspace::setup(&p, &[0.0, 1.0], &a, &[0.0], &[1.0], Settings::default()).unwrap_err();
        assert!(matches!(err, SolverError::DimensionMismatch { what: "q", .. }));
    }

    #[test]
    fn indefinite_p_breaks_factorization() {
        let p = CscMatrix::from_triplets(1, 1, &[(0, 0, 1.0)]).unwrap();
        let a = CscMatrix::identity(1);
        let mut ws = Workspace::setup(&p, &[0.0], &a, &[-1.0], &[1.0], Settings::default()).unwrap();
        let err = ws.update_matrix_values(Some(&[-1.0]), None).unwrap_err();
        assert!(matches!(err, SolverError::FactorizationBreakdown { .. }));
    }

    #[test]
    fn detects_primal_infeasibility() {
        // x >= 1 and x <= -1 through two rows
        let p = CscMatrix::zeros(1, 1);
        let a = CscMatrix::from_triplets(2, 1, &[(0, 0, 1.0), (1, 0, 1.0)]).unwrap();
        let mut ws = Workspace::setup(
            &p,
            &[0.0],
            &a,
            &[1.0, f64::NEG_INFINITY],
            &[f64::INFINITY, -1.0],
            Settings::default(),
        )
        .unwrap();
        assert_eq!(ws.solve().status, Status::PrimalInfeasible);
    }

    #[test]
    fn detects_dual_infeasibility() {
        // min -x, x >= 0
        let p = CscMatrix::zeros(1, 1);
        let a = CscMatrix::identity(1);
        let mut ws = Workspace::setup(&p, &[-1.0], &a, &[0.0], &[f64::INFINITY], Settings::default()).unwrap();
        assert_eq!(ws.solve().status, Status::DualInfeasible);
    }
}
