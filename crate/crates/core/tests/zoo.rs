mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use qpgen::ast::{check_dpp, Values};
use qpgen::canon::{canonicalize, Segment};
use qpgen::pipeline::solve_full;
use qpgen::solver::{Settings, Status};
use qpgen::zoo::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tight() -> Settings {
    Settings::default().with_eps(1e-8)
}

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(rand_distr::StandardNormal))
}

fn nnls_values(g: &DMatrix<f64>, h: &DVector<f64>) -> Values {
    let mut v = Values::new();
    v.insert("G".into(), g.clone());
    v.insert("h".into(), DMatrix::from_column_slice(h.len(), 1, h.as_slice()));
    v
}

#[test]
fn nnls_zero_data_gives_zero() {
    let fam = build_nnls(3, 2).unwrap();
    assert!(check_dpp(&fam.problem).is_compliant());
    let v = nnls_values(&DMatrix::zeros(3, 2), &DVector::zeros(3));
    let res = solve_full(&fam.problem, &v, tight()).unwrap();
    assert_eq!(res.solution.status, Status::Solved);
    assert!(res.x.iter().all(|x| x.abs() < 1e-8));
}

#[test]
fn nnls_matches_support_enumeration() {
    let fam = build_nnls(5, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let g = randn(&mut rng, 5, 3);
        let h = DVector::from_column_slice(randn(&mut rng, 5, 1).as_slice());
        let (x_ref, f_ref) = nnls_enumerate(&g, &h);
        let res = solve_full(&fam.problem, &nnls_values(&g, &h), tight()).unwrap();
        assert_eq!(res.solution.status, Status::Solved);
        let x = DVector::from_column_slice(&res.x);
        let f = (&g * &x - &h).norm_squared();
        assert!(rel_err(f, f_ref) < 1e-6, "{f} vs {f_ref}");
        assert!((x - x_ref).amax() < 1e-4);
    }
}

#[test]
fn dare_scalar_golden_ratio() {
    let one = DMatrix::from_element(1, 1, 1.0);
    let p = solve_dare(&one, &one, &one, &one).unwrap();
    assert!((p[(0, 0)] - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-9);
}

#[test]
fn dare_random_stable_residual() {
    for seed in 0..5 {
        let m = MpcModel::random_stable(seed);
        let q = DMatrix::from_diagonal(&DVector::from_vec(m.q_diag.clone()));
        let r = DMatrix::from_diagonal(&DVector::from_vec(m.r_diag.clone()));
        let p = solve_dare(&m.a, &m.b, &q, &r).unwrap();
        let res = (dare_rhs(&m.a, &m.b, &q, &r, &p).unwrap() - &p).amax();
        assert!(res < 1e-8, "seed {seed}: residual {res}");
    }
}

#[test]
fn mpc_dimensions_and_dpp() {
    let fam = build_mpc(6, 8).unwrap();
    assert_eq!(fam.variable_count(), 9 * 7);
    assert!(check_dpp(&fam.problem).is_compliant());
    let bad = build_mpc_non_dpp(6, 8).unwrap();
    let report = check_dpp(&bad.problem);
    assert!(!report.is_compliant());
    assert!(report
        .offenses
        .iter()
        .any(|o| ["gamma", "m", "g"].iter().all(|p| o.parameters.contains(&p.to_string()))));
    assert!(build_mpc(1, 8).is_err());
    assert!(build_mpc(6, 2).is_err());
    for n in polygon_normals_check() {
        assert!((n - 1.0).abs() < 1e-15);
    }
}

fn polygon_normals_check() -> Vec<f64> {
    build_mpc(3, 8)
        .unwrap()
        .normals
        .iter()
        .map(|c| (c[0] * c[0] + c[1] * c[1]).sqrt())
        .collect()
}

#[test]
fn mpc_origin_is_fixed_point() {
    let fam = build_mpc(6, 8).unwrap();
    let model = MpcModel::quadcopter(0.1);
    let v = fam.values(&model, &[0.0; 6], &[0.0; 3]).unwrap();
    let res = solve_full(&fam.problem, &v, tight()).unwrap();
    assert_eq!(res.solution.status, Status::Solved);
    assert!(res.x.iter().all(|x| x.abs() < 1e-6));
}

#[test]
fn mpc_matches_dense_oracle() {
    let fam = build_mpc(6, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..10 {
        let model = MpcModel::random_stable(seed);
        let z0: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u0: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..0.5)).collect();
        let v = fam.values(&model, &z0, &u0).unwrap();
        let res = solve_full(&fam.problem, &v, tight()).unwrap();
        assert_eq!(res.solution.status, Status::Solved);
        let mg = model.mass * model.gravity;
        let qp = mpc_dense_qp(
            6, &v["A"], &v["B"], &v["Q_T_sqrt"], &v["Q_sqrt"], &v["R_sqrt"], &v["T_sqrt"],
            model.gamma, model.gamma * mg, model.u_vmin, model.u_vmax, &fam.normals, &z0, &u0,
        );
        let x_ref = solve_dense_qp(&qp);
        let f_ref = qp.objective(&x_ref);
        let x = DVector::from_column_slice(&res.x);
        assert!(qp.violation(&x_ref) < 1e-8);
        assert!(qp.violation(&x) < 1e-6, "violation {}", qp.violation(&x));
        assert!(rel_err(qp.objective(&x), f_ref) < 1e-5, "{} vs {f_ref}", qp.objective(&x));
    }
}

#[test]
fn mpc_simulation_regulates_with_one_factorization() {
    let fam = build_mpc(6, 8).unwrap();
    let model = MpcModel::quadcopter(0.1);
    let z0 = [0.8, -0.5, 0.3, 0.1, 0.0, -0.2];
    let trace = simulate_mpc(&fam, &model, &model.a, &model.b, &z0, 100, Settings::default().with_eps(1e-7))
        .unwrap();
    assert_eq!(trace.len(), 100);
    assert_eq!(trace.factorizations, 1);
    assert_eq!(trace.refactorizations(), 1);
    for s in &trace.steps[1..] {
        assert!(!s.touched.contains(&Segment::A) && !s.touched.contains(&Segment::P));
        assert!(s.feasibility_violation < 1e-6);
    }
    // replay the plant to get z_50
    let mut z = DVector::from_row_slice(&z0);
    for s in &trace.steps[..50] {
        let u = DVector::from_row_slice(&s.x[42..45]);
        z = &model.a * z + &model.b * u;
    }
    assert!(z.norm() < 1e-3 * DVector::from_row_slice(&z0).norm(), "{}", z.norm());
}

#[test]
fn mpc_simulation_edge_cases() {
    let fam = build_mpc(6, 8).unwrap();
    let model = MpcModel::quadcopter(0.1);
    let empty = simulate_mpc(&fam, &model, &model.a, &model.b, &[1.0; 6], 0, tight()).unwrap();
    assert!(empty.is_empty());
    let rest = simulate_mpc(&fam, &model, &model.a, &model.b, &[0.0; 6], 10, tight()).unwrap();
    for s in &rest.steps {
        assert!(s.x[42..].iter().all(|u| u.abs() <= 1e-6));
    }
    let csv = rest.to_csv();
    assert_eq!(csv.lines().count(), 11);
    assert!(csv.starts_with("step,objective,iterations,wall_ns,refactorized,feasibility_violation"));
}

fn random_portfolio(
    fam: &PortfolioFamily,
    rng: &mut ChaCha8Rng,
) -> (DVector<f64>, DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let na = fam.n + 1;
    let alpha = DVector::from_fn(na, |_, _| 0.3 * rng.sample::<f64, _>(rand_distr::StandardNormal));
    let f = randn(rng, na, fam.k) * 0.5;
    let d = DVector::from_fn(na, |_, _| rng.random_range(0.5..1.5));
    let mut w_prev = DVector::from_fn(na, |_, _| rng.random_range(-0.2..0.4));
    let s = w_prev.sum();
    w_prev[fam.n] += 1.0 - s;
    (alpha, f, d, w_prev)
}

#[test]
fn portfolio_dimensions_and_dpp() {
    let fam = build_portfolio(10).unwrap();
    assert_eq!(fam.k, 5);
    assert_eq!(build_portfolio(100).unwrap().k, 10);
    assert_eq!(fam.variable_count(), 22);
    assert!(check_dpp(&fam.problem).is_compliant());
    let bad = check_dpp(&build_portfolio_non_dpp(10).unwrap().problem);
    let names: Vec<_> = bad.offenses.iter().flat_map(|o| o.parameters.clone()).collect();
    for g in ["gamma_risk", "gamma_tc", "gamma_sh"] {
        assert!(names.contains(&g.to_string()), "{g} not flagged");
    }
    assert!(build_portfolio(1).is_err());
}

#[test]
fn portfolio_min_norm_case_is_uniform() {
    let fam = build_portfolio(10).unwrap();
    let na = 11;
    let costs = PortfolioCosts {
        kappa_tc: 0.0,
        kappa_sh: 0.0,
        leverage: 100.0,
        ..PortfolioCosts::default()
    };
    let v = fam
        .values(&DVector::zeros(na), &DMatrix::zeros(na, 5), &DVector::from_element(na, 1.0), &costs, &fam.all_cash())
        .unwrap();
    let res = solve_full(&fam.problem, &v, tight()).unwrap();
    for i in 0..na {
        assert!((res.x[i] - 1.0 / na as f64).abs() < 1e-6);
    }
}

#[test]
fn portfolio_matches_dense_oracle() {
    let costs = PortfolioCosts::default();
    for n in [10, 20] {
        let fam = build_portfolio(n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        for _ in 0..20 {
            let (alpha, f, d, w_prev) = random_portfolio(&fam, &mut rng);
            let v = fam.values(&alpha, &f, &d, &costs, &w_prev).unwrap();
            let res = solve_full(&fam.problem, &v, tight()).unwrap();
            assert_eq!(res.solution.status, Status::Solved);
            let to_vec = |m: &DMatrix<f64>| DVector::from_column_slice(m.as_slice());
            let qp = portfolio_dense_qp(
                &to_vec(&v["alpha"]), &f, &d, &to_vec(&v["kappa_tc"]), &to_vec(&v["kappa_sh"]),
                costs.leverage, &w_prev,
            );
            let x_ref = solve_dense_qp(&qp);
            assert!(qp.violation(&x_ref) < 1e-8);
            let f_ref = -qp.objective(&x_ref);
            let mut sol = Values::new();
            sol.insert("w".into(), DMatrix::from_column_slice(n + 1, 1, &res.x[..n + 1]));
            sol.insert("dw".into(), DMatrix::from_column_slice(n + 1, 1, &res.x[n + 1..]));
            let f_ours = fam.problem.objective_value(&sol, &v).unwrap();
            assert!(rel_err(f_ours, f_ref) < 1e-5, "N={n}: {f_ours} vs {f_ref}");
            assert!(fam.problem.max_violation(&sol, &v).unwrap() < 1e-6);
        }
    }
}

#[test]
fn backtest_single_period_starts_from_cash() {
    let fam = build_portfolio(10).unwrap();
    let trace = backtest(&fam, &PortfolioCosts::default(), 1, 3, tight()).unwrap();
    assert_eq!(trace.len(), 1);
    let (_, cmap, ..) = canonicalize(&fam.problem).unwrap();
    let k = cmap.param_index("w_prev").unwrap();
    let b = cmap.layout.block(k);
    let w_prev = &trace.steps[0].theta[b.offset..b.offset + b.len()];
    assert_eq!(w_prev, fam.all_cash().as_slice());
}

#[test]
fn backtest_is_deterministic_and_feasible() {
    let fam = build_portfolio(10).unwrap();
    let costs = PortfolioCosts::default();
    let s = Settings::default().with_eps(1e-7);
    let a = backtest(&fam, &costs, 60, 9, s).unwrap();
    let b = backtest(&fam, &costs, 60, 9, s).unwrap();
    let strip = |t: &SimTrace| t.steps.iter().map(|s| (s.x.clone(), s.iterations, s.theta.clone())).collect::<Vec<_>>();
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(a.factorizations, 60);
    for st in &a.steps {
        let w = &st.x[..11];
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(w.iter().map(|x| x.abs()).sum::<f64>() <= costs.leverage + 1e-6);
        if st.step > 0 {
            assert!(st.touched.contains(&Segment::A));
        }
    }
}
