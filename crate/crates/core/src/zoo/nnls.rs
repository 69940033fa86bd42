use crate::ast::{Constraint, ModelError, Problem, ProblemBuilder};

/// `minimize ||G x - h||^2  s.t.  x >= 0` with parameters `G` (m x n) and
/// `h` (m).
#[derive(Debug, Clone)]
pub struct NnlsFamily {
    pub m: usize,
    pub n: usize,
    pub problem: Problem,
}

pub fn build_nnls(m: usize, n: usize) -> Result<NnlsFamily, ModelError> {
    let mut b = ProblemBuilder::new("nnls");
    let x = b.variable("x", n, 1)?;
    let g = b.parameter("G", m, n)?;
    let h = b.parameter("h", m, 1)?;
    b.minimize(g.matmul(&x)?.minus(&h)?.sum_squares());
    b.constrain(Constraint::nonneg(x));
    Ok(NnlsFamily {
        m,
        n,
        problem: b.build()?,
    })
}
