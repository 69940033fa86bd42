use nalgebra::DMatrix;

use super::ZooError;

pub const DARE_TOL: f64 = 1e-10;
pub const DARE_MAX_ITER: usize = 10_000;

/// One step of the Riccati recursion
/// `Q + A'(P - PB (R + B'PB)^-1 B'P) A`.
pub fn dare_rhs(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>, ZooError> {
    let bt_p = b.transpose() * p;
    let s = r + &bt_p * b;
    let gain = s
        .clone()
        .cholesky()
        .ok_or(ZooError::NotPositiveDefinite("R + B'PB"))?
        .solve(&bt_p);
    let inner = p - bt_p.transpose() * gain;
    let next = q + a.transpose() * inner * a;
    Ok((&next + next.transpose()) * 0.5)
}

/// Fixed point of the Riccati recursion started from `P = Q`, stopped when
/// the max-abs step falls below 1e-10.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>, ZooError> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (b.ncols(), b.ncols()) {
        return Err(ZooError::InvalidDimensions("DARE inputs".into()));
    }
    let mut p = q.clone();
    let mut step = f64::INFINITY;
    for _ in 0..DARE_MAX_ITER {
        let next = dare_rhs(a, b, q, r, &p)?;
        step = (&next - &p).abs().max();
        p = next;
        if step < DARE_TOL {
            return Ok(p);
        }
        if !step.is_finite() {
            break;
        }
    }
    Err(ZooError::DareNoConvergence {
        iterations: DARE_MAX_ITER,
        step,
    })
}

/// Upper-triangular `S` with `S'S = M` (transposed Cholesky factor).
pub fn sqrt_upper(m: &DMatrix<f64>) -> Result<DMatrix<f64>, ZooError> {
    Ok(m.clone()
        .cholesky()
        .ok_or(ZooError::NotPositiveDefinite("matrix square root"))?
        .l()
        .transpose())
}
