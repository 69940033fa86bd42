use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{diag_pattern, Market, SimStep, SimTrace, ZooError};
use crate::ast::{Constraint, Expr, Problem, ProblemBuilder, Sign, Values};
use crate::pipeline::CachedSolver;
use crate::solver::{Settings, Status};

/// Risk aversion, cost weights and leverage limit. Per-asset costs apply to
/// the risky assets only; cash trades and shorts for free.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioCosts {
    pub gamma_risk: f64,
    pub gamma_tc: f64,
    pub gamma_sh: f64,
    pub kappa_tc: f64,
    pub kappa_sh: f64,
    pub leverage: f64,
}

impl Default for PortfolioCosts {
    fn default() -> Self {
        PortfolioCosts {
            gamma_risk: 0.5,
            gamma_tc: 1.0,
            gamma_sh: 1.0,
            kappa_tc: 0.02,
            kappa_sh: 0.01,
            leverage: 1.6,
        }
    }
}

/// Factor-model portfolio over `n` risky assets plus cash (last entry).
#[derive(Debug, Clone)]
pub struct PortfolioFamily {
    pub n: usize,
    pub k: usize,
    /// False for the variant with explicit risk and cost multipliers.
    pub dpp: bool,
    pub problem: Problem,
}

pub fn factor_count(n: usize) -> usize {
    (n / 10).max(5)
}

/// ```text
/// maximize   alpha'w - ||F'w||^2 - ||D^{1/2} w||^2 - kappa_tc'|dw| - kappa_sh'(w)_-
/// subject to 1'w = 1,  ||w||_1 <= L,  dw = w - w_prev
/// ```
/// where `alpha`, `kappa_tc` and `kappa_sh` already carry the division by
/// the risk aversion.
pub fn build_portfolio(n: usize) -> Result<PortfolioFamily, ZooError> {
    build(n, true)
}

/// Same problem with `gamma_risk`, `gamma_tc` and `gamma_sh` as separate
/// parameters multiplying the risk and cost terms. Rejected by the DPP
/// check.
pub fn build_portfolio_non_dpp(n: usize) -> Result<PortfolioFamily, ZooError> {
    build(n, false)
}

fn build(n: usize, dpp: bool) -> Result<PortfolioFamily, ZooError> {
    if n < 2 {
        return Err(ZooError::InvalidDimensions(format!("{n} assets (need >= 2)")));
    }
    let (na, k) = (n + 1, factor_count(n));
    let mut b = ProblemBuilder::new(if dpp { "portfolio" } else { "portfolio_non_dpp" });
    let w = b.variable("w", na, 1)?;
    let dw = b.variable("dw", na, 1)?;
    let alpha = b.parameter("alpha", na, 1)?;
    let f = b.parameter("F", na, k)?;
    let d = b.parameter_with("D_sqrt", na, na, Sign::Nonneg, diag_pattern(na))?;
    let kappa_tc = b.parameter_with("kappa_tc", na, 1, Sign::Nonneg, None)?;
    let kappa_sh = b.parameter_with("kappa_sh", na, 1, Sign::Nonneg, None)?;
    let lev = b.parameter_with("L", 1, 1, Sign::Nonneg, None)?;
    let w_prev = b.parameter("w_prev", na, 1)?;

    let risk = f.t().matmul(&w)?.sum_squares().plus(&d.matmul(&w)?.sum_squares())?;
    let tc = kappa_tc.t().matmul(&dw.abs())?;
    let sh = kappa_sh.t().matmul(&w.neg_part())?;
    let (risk, tc, sh) = if dpp {
        (risk, tc, sh)
    } else {
        let g_risk = b.parameter_with("gamma_risk", 1, 1, Sign::Nonneg, None)?;
        let g_tc = b.parameter_with("gamma_tc", 1, 1, Sign::Nonneg, None)?;
        let g_sh = b.parameter_with("gamma_sh", 1, 1, Sign::Nonneg, None)?;
        (g_risk.mul_elem(&risk)?, g_tc.mul_elem(&tc)?, g_sh.mul_elem(&sh)?)
    };
    let objective = alpha.t().matmul(&w)?.minus(&risk)?.minus(&tc)?.minus(&sh)?;
    b.maximize(objective);
    b.constrain(Constraint::eq(&w.sum(), &Expr::scalar(1.0))?);
    b.constrain(Constraint::le(&w.norm1(), &lev)?);
    b.constrain(Constraint::eq(&dw, &w.minus(&w_prev)?)?);
    Ok(PortfolioFamily {
        n,
        k,
        dpp,
        problem: b.build()?,
    })
}

impl PortfolioFamily {
    /// Parameter values from a forecast `(alpha, F, d_sqrt)` in the
    /// original units; the DPP form divides by the risk aversion here.
    pub fn values(
        &self,
        alpha: &DVector<f64>,
        f: &DMatrix<f64>,
        d_sqrt: &DVector<f64>,
        costs: &PortfolioCosts,
        w_prev: &DVector<f64>,
    ) -> Result<Values, ZooError> {
        let na = self.n + 1;
        if alpha.len() != na || f.shape() != (na, self.k) || d_sqrt.len() != na || w_prev.len() != na {
            return Err(ZooError::InvalidDimensions("portfolio forecast".into()));
        }
        let per_asset = |c: f64| DMatrix::from_fn(na, 1, |i, _| if i < self.n { c } else { 0.0 });
        let mut v = Values::new();
        if self.dpp {
            let gr = costs.gamma_risk;
            v.insert("alpha".into(), DMatrix::from_column_slice(na, 1, (alpha / gr).as_slice()));
            v.insert("kappa_tc".into(), per_asset(costs.gamma_tc / gr * costs.kappa_tc));
            v.insert("kappa_sh".into(), per_asset(costs.gamma_sh / gr * costs.kappa_sh));
        } else {
            v.insert("alpha".into(), DMatrix::from_column_slice(na, 1, alpha.as_slice()));
            v.insert("kappa_tc".into(), per_asset(costs.kappa_tc));
            v.insert("kappa_sh".into(), per_asset(costs.kappa_sh));
            v.insert("gamma_risk".into(), DMatrix::from_element(1, 1, costs.gamma_risk));
            v.insert("gamma_tc".into(), DMatrix::from_element(1, 1, costs.gamma_tc));
            v.insert("gamma_sh".into(), DMatrix::from_element(1, 1, costs.gamma_sh));
        }
        v.insert("F".into(), f.clone());
        v.insert("D_sqrt".into(), DMatrix::from_diagonal(d_sqrt));
        v.insert("L".into(), DMatrix::from_element(1, 1, costs.leverage));
        v.insert("w_prev".into(), DMatrix::from_column_slice(na, 1, w_prev.as_slice()));
        Ok(v)
    }

    /// All-cash portfolio `e_{N+1}`.
    pub fn all_cash(&self) -> DVector<f64> {
        let mut w = DVector::zeros(self.n + 1);
        w[self.n] = 1.0;
        w
    }

    pub fn variable_count(&self) -> usize {
        self.problem.variable_count()
    }
}

/// Rolling back-test on a synthetic market drawn from `seed`. Period 0
/// starts from all cash; later periods refresh `alpha`, `F`, `D_sqrt` from
/// the trailing window and chain `w_prev` from the previous solution.
pub fn backtest(
    family: &PortfolioFamily,
    costs: &PortfolioCosts,
    periods: usize,
    seed: u64,
    settings: Settings,
) -> Result<SimTrace, ZooError> {
    if periods == 0 {
        return Err(ZooError::InvalidDimensions("periods must be >= 1".into()));
    }
    let market = Market::generate(family.n, family.k, periods, seed);
    let (alpha, f, d) = market.estimate(0);
    let mut params = family.values(&alpha, &f, &d, costs, &family.all_cash())?;
    let mut cs = CachedSolver::new(&family.problem, &params, settings)?;
    let all: Vec<String> = family.problem.parameters.iter().map(|p| p.name.clone()).collect();
    let per_period = ["alpha", "F", "D_sqrt", "w_prev"];
    let mut trace = SimTrace::default();
    let mut w_prev = family.all_cash();
    for t in 0..periods {
        let fail = |source| ZooError::Pipeline { step: t, source };
        let updated = if t == 0 {
            all.clone()
        } else {
            let (alpha, f, d) = market.estimate(t);
            let fresh = family.values(&alpha, &f, &d, costs, &w_prev)?;
            for name in per_period {
                cs.set_param(name, &fresh[name]).map_err(fail)?;
                params.insert(name.to_string(), fresh[name].clone());
            }
            per_period.iter().map(|s| s.to_string()).collect()
        };
        let start = Instant::now();
        let res = cs.solve().map_err(fail)?;
        let wall_ns = start.elapsed().as_nanos() as u64;
        let status = res.solution.status;
        if status != Status::Solved {
            return Err(ZooError::SolveFailed { step: t, status });
        }
        let vars = cs.rmap.retrieve_values(&res.solution.x_tilde).map_err(|e| fail(e.into()))?;
        w_prev = DVector::from_column_slice(vars["w"].as_slice());
        trace.steps.push(SimStep {
            step: t,
            theta: cs.theta().to_vec(),
            updated,
            objective: family.problem.objective_value(&vars, &params)?,
            feasibility_violation: family.problem.max_violation(&vars, &params)?,
            x: res.x,
            iterations: res.solution.iterations,
            wall_ns,
            refactorized: res.refactorized || t == 0,
            status,
            touched: res.touched.into_iter().collect(),
        });
    }
    trace.factorizations = cs.factorizations();
    Ok(trace)
}
