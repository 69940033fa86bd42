//! Reference solvers and explicit formulations used as test oracles. None
//! of this goes through the canonicalizer or the ADMM solver.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Dense convex QP
/// `minimize 1/2 x'Hx + g'x + c0  s.t.  E x = e,  G x <= h`.
#[derive(Debug, Clone)]
pub struct DenseQp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub c0: f64,
    pub e_mat: DMatrix<f64>,
    pub e_vec: DVector<f64>,
    pub g_mat: DMatrix<f64>,
    pub h_vec: DVector<f64>,
}

impl DenseQp {
    pub fn new(n: usize) -> DenseQp {
        DenseQp {
            h: DMatrix::zeros(n, n),
            g: DVector::zeros(n),
            c0: 0.0,
            e_mat: DMatrix::zeros(0, n),
            e_vec: DVector::zeros(0),
            g_mat: DMatrix::zeros(0, n),
            h_vec: DVector::zeros(0),
        }
    }

    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn add_eq(&mut self, row: &[(usize, f64)], rhs: f64) {
        push_row(&mut self.e_mat, &mut self.e_vec, row, rhs);
    }

    pub fn add_le(&mut self, row: &[(usize, f64)], rhs: f64) {
        push_row(&mut self.g_mat, &mut self.h_vec, row, rhs);
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x) + self.c0
    }

    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        let eq = (&self.e_mat * x - &self.e_vec).abs().max();
        let ineq = (&self.g_mat * x - &self.h_vec).max().max(0.0);
        let eq = if self.e_vec.is_empty() { 0.0 } else { eq };
        let ineq = if self.h_vec.is_empty() { 0.0 } else { ineq };
        eq.max(ineq)
    }
}

fn push_row(mat: &mut DMatrix<f64>, vec: &mut DVector<f64>, row: &[(usize, f64)], rhs: f64) {
    let r = mat.nrows();
    let n = mat.ncols();
    *mat = mat.clone().insert_row(r, 0.0);
    *vec = vec.clone().insert_row(r, rhs);
    for &(j, v) in row {
        assert!(j < n);
        mat[(r, j)] += v;
    }
}

/// Mehrotra predictor-corrector interior point method on the dense KKT
/// system. Returns the primal solution.
pub fn solve_dense_qp(qp: &DenseQp) -> DVector<f64> {
    let n = qp.n();
    let p = qp.e_vec.len();
    let mi = qp.h_vec.len();
    let mut x = DVector::zeros(n);
    let mut y = DVector::zeros(p);
    let mut s = DVector::from_element(mi, 1.0);
    let mut z = DVector::from_element(mi, 1.0);
    let scale = 1.0 + qp.g.amax().max(qp.h_vec.amax()).max(qp.e_vec.amax());

    for _ in 0..200 {
        let rd = &qp.h * &x + &qp.g + qp.e_mat.transpose() * &y + qp.g_mat.transpose() * &z;
        let re = &qp.e_mat * &x - &qp.e_vec;
        let ri = &qp.g_mat * &x + &s - &qp.h_vec;
        let mu = if mi > 0 { s.dot(&z) / mi as f64 } else { 0.0 };
        let res = rd.amax().max(re.amax()).max(ri.amax());
        if res <= 1e-11 * scale && mu <= 1e-13 * scale {
            break;
        }
        if !(res.is_finite() && mu.is_finite()) {
            panic!("interior point iterate diverged");
        }
        let w = z.component_div(&s);
        let mut kkt = DMatrix::zeros(n + p, n + p);
        let gw = DMatrix::from_fn(mi, n, |i, j| qp.g_mat[(i, j)] * w[i]);
        let top = &qp.h + qp.g_mat.transpose() * gw;
        kkt.view_mut((0, 0), (n, n)).copy_from(&top);
        kkt.view_mut((0, n), (n, p)).copy_from(&qp.e_mat.transpose());
        kkt.view_mut((n, 0), (p, n)).copy_from(&qp.e_mat);
        let lu = kkt.full_piv_lu();

        let direction = |rc: &DVector<f64>| {
            // dz = S^-1 (Z (ri + G dx) - rc), ds = -ri - G dx
            let t = (z.component_mul(&ri) - rc).component_div(&s);
            let mut rhs = DVector::zeros(n + p);
            rhs.rows_mut(0, n).copy_from(&(-&rd - qp.g_mat.transpose() * &t));
            rhs.rows_mut(n, p).copy_from(&(-&re));
            let sol = lu.solve(&rhs)?;
            let dx = sol.rows(0, n).into_owned();
            let dy = sol.rows(n, p).into_owned();
            let gdx = &qp.g_mat * &dx;
            let ds = -&ri - &gdx;
            let dz = (z.component_mul(&(&ri + &gdx)) - rc).component_div(&s);
            Some((dx, dy, ds, dz))
        };
        let max_step = |v: &DVector<f64>, dv: &DVector<f64>| {
            let mut a: f64 = 1.0;
            for i in 0..v.len() {
                if dv[i] < 0.0 {
                    a = a.min(-v[i] / dv[i]);
                }
            }
            a
        };

        // a singular or non-finite step means the iterate sits at the
        // accuracy limit of the dense KKT solve
        let rc_aff = s.component_mul(&z);
        let Some((_, _, ds_a, dz_a)) = direction(&rc_aff) else {
            break;
        };
        let a_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
        let sigma = if mi > 0 {
            let mu_aff = (&s + &ds_a * a_aff).dot(&(&z + &dz_a * a_aff)) / mi as f64;
            (mu_aff / mu).powi(3)
        } else {
            0.0
        };
        let rc = rc_aff + ds_a.component_mul(&dz_a) - DVector::from_element(mi, sigma * mu);
        let Some((dx, dy, ds, dz)) = direction(&rc) else {
            break;
        };
        let a = (0.99 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
        if !(dx.iter().chain(ds.iter()).chain(dz.iter()).all(|v| v.is_finite())) {
            break;
        }
        x += &dx * a;
        y += &dy * a;
        s += &ds * a;
        z += &dz * a;
    }
    x
}

/// Nonnegative least squares `min ||Gx - h||^2, x >= 0` by enumerating
/// supports: for every subset, the unconstrained least-squares solution on
/// those columns; the best nonnegative candidate wins. Exponential in n.
pub fn nnls_enumerate(g: &DMatrix<f64>, h: &DVector<f64>) -> (DVector<f64>, f64) {
    let n = g.ncols();
    assert!(n <= 12);
    let mut best = (DVector::zeros(n), h.norm_squared());
    for mask in 1u32..(1 << n) {
        let cols: Vec<usize> = (0..n).filter(|j| mask & (1 << j) != 0).collect();
        let sub = g.select_columns(&cols);
        let Ok(xs) = sub.clone().svd(true, true).solve(h, 1e-12) else {
            continue;
        };
        if xs.iter().any(|&v| v < 0.0) {
            continue;
        }
        let mut x = DVector::zeros(n);
        for (k, &j) in cols.iter().enumerate() {
            x[j] = xs[k];
        }
        let f = (g * &x - h).norm_squared();
        if f < best.1 {
            best = (x, f);
        }
    }
    best
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// MPC written out directly over `v = [vec(Z); vec(U)]` (column-major),
/// quadratic objective from the square-root weights.
#[allow(clippy::too_many_arguments)]
pub fn mpc_dense_qp(
    h: usize,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q_t: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    t: &DMatrix<f64>,
    gamma: f64,
    d: f64,
    u_vmin: f64,
    u_vmax: f64,
    normals: &[[f64; 2]],
    z_meas: &[f64],
    u_prev: &[f64],
) -> DenseQp {
    let (nz, nu) = (6, 3);
    let zi = |k: usize, i: usize| k * nz + i;
    let ui = |k: usize, i: usize| nz * (h + 1) + k * nu + i;
    let n = (nz + nu) * (h + 1);
    let mut qp = DenseQp::new(n);
    // ||M v_sel||^2 contributes 2 M'M on the selected block
    let mut add_quad = |m: &DMatrix<f64>, idx: &dyn Fn(usize) -> Vec<(usize, f64)>| {
        let mtm = m.transpose() * m;
        for i in 0..m.ncols() {
            for j in 0..m.ncols() {
                for &(pi, si) in &idx(i) {
                    for &(pj, sj) in &idx(j) {
                        qp.h[(pi, pj)] += 2.0 * mtm[(i, j)] * si * sj;
                    }
                }
            }
        }
    };
    add_quad(q_t, &|i| vec![(zi(h, i), 1.0)]);
    for k in 0..h {
        add_quad(q, &|i| vec![(zi(k, i), 1.0)]);
        add_quad(r, &|i| vec![(ui(k, i), 1.0)]);
        add_quad(t, &|i| vec![(ui(k + 1, i), 1.0), (ui(k, i), -1.0)]);
    }
    for i in 0..nz {
        qp.add_eq(&[(zi(0, i), 1.0)], z_meas[i]);
    }
    for i in 0..nu {
        qp.add_eq(&[(ui(0, i), 1.0)], u_prev[i]);
    }
    for k in 0..h {
        for i in 0..nz {
            let mut row = vec![(zi(k + 1, i), 1.0)];
            for j in 0..nz {
                row.push((zi(k, j), -a[(i, j)]));
            }
            for j in 0..nu {
                row.push((ui(k, j), -b[(i, j)]));
            }
            qp.add_eq(&row, 0.0);
        }
    }
    for k in 1..h {
        qp.add_le(&[(ui(k, 2), -1.0)], -u_vmin);
        qp.add_le(&[(ui(k, 2), 1.0)], u_vmax);
        for c in normals {
            qp.add_le(&[(ui(k, 0), c[0]), (ui(k, 1), c[1]), (ui(k, 2), -gamma)], d);
        }
    }
    qp
}

/// Portfolio as a minimization over
/// `[w, dw, a >= |dw|, s >= (w)_-, u >= |w|]`; the stated (maximized)
/// objective is minus the QP objective.
pub fn portfolio_dense_qp(
    alpha: &DVector<f64>,
    f: &DMatrix<f64>,
    d_sqrt: &DVector<f64>,
    kappa_tc: &DVector<f64>,
    kappa_sh: &DVector<f64>,
    lev: f64,
    w_prev: &DVector<f64>,
) -> DenseQp {
    let na = alpha.len();
    let (w, dw, a, s, u) = (0, na, 2 * na, 3 * na, 4 * na);
    let mut qp = DenseQp::new(5 * na);
    let sigma = f * f.transpose() + DMatrix::from_diagonal(&d_sqrt.component_mul(d_sqrt));
    qp.h.view_mut((w, w), (na, na)).copy_from(&(sigma * 2.0));
    for i in 0..na {
        qp.g[w + i] = -alpha[i];
        qp.g[a + i] = kappa_tc[i];
        qp.g[s + i] = kappa_sh[i];
    }
    qp.add_eq(&(0..na).map(|i| (w + i, 1.0)).collect::<Vec<_>>(), 1.0);
    for i in 0..na {
        qp.add_eq(&[(dw + i, 1.0), (w + i, -1.0)], -w_prev[i]);
        qp.add_le(&[(dw + i, 1.0), (a + i, -1.0)], 0.0);
        qp.add_le(&[(dw + i, -1.0), (a + i, -1.0)], 0.0);
        qp.add_le(&[(w + i, -1.0), (s + i, -1.0)], 0.0);
        qp.add_le(&[(s + i, -1.0)], 0.0);
        qp.add_le(&[(w + i, 1.0), (u + i, -1.0)], 0.0);
        qp.add_le(&[(w + i, -1.0), (u + i, -1.0)], 0.0);
    }
    qp.add_le(&(0..na).map(|i| (u + i, 1.0)).collect::<Vec<_>>(), lev);
    qp
}
