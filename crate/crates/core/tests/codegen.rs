use nalgebra::DMatrix;
use qpgen::ast::{Constraint, Expr, ProblemBuilder, Values};
use qpgen::canon::canonicalize;
use qpgen::codegen::*;
use qpgen::solver::Settings;
use qpgen::zoo::*;

fn nnls_bundle(m: usize, n: usize, config: &GenConfig) -> SourceBundle {
    let fam = build_nnls(m, n).unwrap();
    let (c, a, r, d) = canonicalize(&fam.problem).unwrap();
    generate(&c, &a, &r, &d, config).unwrap()
}

fn mpc_bundle(h: usize) -> SourceBundle {
    let fam = build_mpc(h, 8).unwrap();
    let (c, a, r, d) = canonicalize(&fam.problem).unwrap();
    generate(&c, &a, &r, &d, &GenConfig::new("mpc")).unwrap()
}

/// Drop `/* */` and `//` comments so grep contracts see code only.
fn strip_comments(src: &str) -> String {
    let mut out = String::new();
    let mut rest = src;
    loop {
        let block = rest.find("/*");
        let line = rest.find("//");
        match (block, line) {
            (Some(b), l) if l.is_none_or(|l| b < l) => {
                out.push_str(&rest[..b]);
                let end = rest[b + 2..].find("*/").map_or(rest.len(), |e| b + 2 + e + 2);
                rest = &rest[end..];
            }
            (_, Some(l)) => {
                out.push_str(&rest[..l]);
                rest = rest[l..].find('\n').map_or("", |e| &rest[l + e..]);
            }
            _ => {
                out.push_str(rest);
                return out;
            }
        }
    }
}

#[test]
fn regeneration_is_byte_identical() {
    let cfg = GenConfig::new("cpg");
    assert_eq!(nnls_bundle(3, 2, &cfg), nnls_bundle(3, 2, &cfg));
    assert_eq!(mpc_bundle(6), mpc_bundle(6));
}

#[test]
fn header_exposes_named_api() {
    let b = nnls_bundle(3, 2, &GenConfig::new("cpg"));
    let h = &b.header().text;
    for sig in [
        "void cpg_update_G(const double *values);",
        "void cpg_update_h(const double *values);",
        "int cpg_solve(void);",
        "int cpg_iterations(void);",
        "const double *cpg_get_x(void);",
    ] {
        assert!(h.contains(sig), "missing {sig}");
    }
    assert!(!h.contains("#include"));
    let names: Vec<_> = b.files.iter().map(|f| f.name.as_str()).collect();
    for f in ["cpg.h", "cpg_workspace.c", "cpg_canon.c", "cpg_solve.c", "cpg_example_main.c"] {
        assert!(names.contains(&f), "{f}");
    }
}

#[test]
fn float32_header_uses_float() {
    let mut cfg = GenConfig::new("cpg");
    cfg.float = FloatWidth::F32;
    let b = nnls_bundle(3, 2, &cfg);
    assert!(b.header().text.contains("void cpg_update_G(const float *values);"));
    assert!(b.file("qpg_config.h").unwrap().text.contains("typedef float qpg_float;"));
}

#[test]
fn canon_unit_is_allocation_and_division_free() {
    for b in [nnls_bundle(3, 2, &GenConfig::new("cpg")), mpc_bundle(6)] {
        let canon = b.files.iter().find(|f| f.name.ends_with("_canon.c")).unwrap();
        let code = strip_comments(&canon.text);
        for bad in ["malloc", "calloc", "realloc", "free(", "alloca"] {
            assert!(!code.contains(bad), "{bad}");
        }
        assert!(!code.contains('/'), "division in {}", canon.name);
        for line in code.lines().filter(|l| l.trim_start().starts_with("#include")) {
            let inc = line.trim_start().trim_start_matches("#include").trim();
            let local = inc.trim_matches('"');
            assert!(
                inc.starts_with('"') && b.file(local).is_some(),
                "non-bundle include {inc}"
            );
        }
        // the solver path includes nothing outside the bundle either
        for f in b.files.iter().filter(|f| f.role != FileRole::Example) {
            for line in strip_comments(&f.text).lines() {
                assert!(!line.contains("#include <"), "{}: {line}", f.name);
            }
        }
    }
}

#[test]
fn zero_parameter_family_has_no_updates() {
    let mut pb = ProblemBuilder::new("fixed");
    let x = pb.variable("x", 2, 1).unwrap();
    let c = Expr::constant(DMatrix::from_column_slice(2, 1, &[1.0, -2.0])).unwrap();
    pb.minimize(x.minus(&c).unwrap().sum_squares());
    pb.constrain(Constraint::nonneg(x));
    let p = pb.build().unwrap();
    let (c, a, r, d) = canonicalize(&p).unwrap();
    let b = generate(&c, &a, &r, &d, &GenConfig::new("cpg")).unwrap();
    assert!(!b.header().text.contains("_update_"));
    assert!(b.header().text.contains("int cpg_solve(void);"));
}

#[test]
fn bad_prefix_and_missing_fixtures() {
    let fam = build_nnls(2, 2).unwrap();
    let (c, a, r, d) = canonicalize(&fam.problem).unwrap();
    let err = generate(&c, &a, &r, &d, &GenConfig::new("9x")).unwrap_err();
    assert!(matches!(err, CodegenError::BadPrefix(_)));
    let mut cfg = GenConfig::new("cpg");
    cfg.emit_fixtures = true;
    let err = generate(&c, &a, &r, &d, &cfg).unwrap_err();
    assert!(matches!(err, CodegenError::MissingFixtures));
}

#[test]
fn no_fixture_files_unless_requested() {
    let b = nnls_bundle(3, 2, &GenConfig::new("cpg"));
    assert_eq!(b.manifest.fixture_steps, 0);
    assert!(b.manifest.files.iter().all(|(n, _)| !n.contains("fixtures")));
}

#[test]
fn static_bytes_match_manifest_arrays() {
    for (cfg_float, fb) in [(FloatWidth::F64, 8), (FloatWidth::F32, 4)] {
        let mut cfg = GenConfig::new("cpg");
        cfg.float = cfg_float;
        let b = nnls_bundle(4, 3, &cfg);
        let mut total = 0;
        for a in b.manifest.arrays.iter() {
            let per = match a.kind {
                ElemKind::Float => fb,
                ElemKind::Int => 4,
                ElemKind::Byte => 1,
            };
            assert_eq!(a.elem_bytes, per);
            // every array is declared in its file with the recorded length
            let f = b.file(&a.file).unwrap();
            assert!(f.text.contains(&format!("{}[{}]", a.name, a.len)), "{}", a.name);
            total += a.len * per;
        }
        assert_eq!(b.manifest.static_data_bytes, total);
        let src: usize = b.files.iter().map(|f| f.text.len()).sum();
        assert_eq!(b.manifest.total_bytes, src);
    }
}

#[test]
fn mpc_static_bytes_grow_with_horizon() {
    let sizes: Vec<usize> = [6, 12, 18]
        .iter()
        .map(|&h| mpc_bundle(h).manifest.static_data_bytes)
        .collect();
    assert!(sizes[0] < sizes[1] && sizes[1] < sizes[2], "{sizes:?}");
}

#[test]
fn mpc_retrieval_aliases_solver_iterate() {
    let b = mpc_bundle(6);
    let canon = b.file("mpc_canon.c").unwrap();
    assert!(canon.text.contains("return mpc_x + 0;"));
    assert!(!canon.text.contains("mpc_r_val"));
}

#[test]
fn size_report_without_toolchain() {
    let b = nnls_bundle(3, 2, &GenConfig::new("cpg"));
    let r = emit_report(&b, None);
    assert!(r.object_bytes.is_none());
    assert_eq!(r.static_data_bytes, b.manifest.static_data_bytes);
    assert!(r.note.is_some());
}

#[test]
fn fixtures_from_recorded_updates() {
    let fam = build_nnls(2, 2).unwrap();
    let (c, a, r, d) = canonicalize(&fam.problem).unwrap();
    let mut v = Values::new();
    v.insert("G".into(), DMatrix::identity(2, 2));
    v.insert("h".into(), DMatrix::from_column_slice(2, 1, &[1.0, -1.0]));
    let theta = a.flatten(&v).unwrap();
    let mut cs = qpgen::pipeline::CachedSolver::from_parts(c.clone(), a.clone(), r.clone(), d.clone(), theta, Settings::default().with_eps(1e-8)).unwrap();
    let fx = FixtureSet::record(&mut cs, &[vec![]]).unwrap();
    assert_eq!(fx.len(), 1);
    assert!((fx.steps[0].x[0] - 1.0).abs() < 1e-6 && fx.steps[0].x[1].abs() < 1e-6);
    let mut cfg = GenConfig::new("cpg");
    cfg.emit_fixtures = true;
    cfg.fixtures = Some(fx);
    let b = generate(&c, &a, &r, &d, &cfg).unwrap();
    assert_eq!(b.manifest.fixture_steps, 1);
    assert!(b.file("cpg_fixtures.c").is_some());
    // fixture arrays are not solver data
    let fixture_bytes: usize = b.manifest.arrays.iter().filter(|x| x.file == "cpg_fixtures.c").map(|x| x.bytes()).sum();
    let all: usize = b.manifest.arrays.iter().map(|x| x.bytes()).sum();
    assert_eq!(b.manifest.static_data_bytes, all - fixture_bytes);
}

#[cfg(feature = "c-harness")]
mod harness {
    use super::*;
    use qpgen::canon::{AffineMap, CanonQP, DependencyTable, RetrievalMap};
    use qpgen::pipeline::CachedSolver;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cc() -> String {
        std::env::var("CC").unwrap_or_else(|_| "cc".into())
    }

    fn settings() -> Settings {
        Settings::default().with_eps(1e-7)
    }

    fn run(
        parts: (CanonQP, AffineMap, RetrievalMap, DependencyTable),
        theta0: Vec<f64>,
        fx: FixtureSet,
        prefix: &str,
    ) -> (HarnessReport, tempfile::TempDir) {
        let (c, a, r, d) = parts;
        let mut cfg = GenConfig::new(prefix);
        cfg.settings = settings();
        cfg.emit_fixtures = true;
        cfg.initial_theta = Some(theta0);
        cfg.fixtures = Some(fx);
        let b = generate(&c, &a, &r, &d, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        b.write_to(dir.path()).unwrap();
        (run_harness(dir.path(), &cc()).unwrap(), dir)
    }

    #[test]
    fn nnls_projection_case_and_random_updates() {
        let fam = build_nnls(3, 2).unwrap();
        let parts = canonicalize(&fam.problem).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut v = Values::new();
        let mut g = DMatrix::zeros(3, 2);
        g[(0, 0)] = 1.0;
        g[(1, 1)] = 1.0;
        v.insert("G".into(), g);
        v.insert("h".into(), DMatrix::from_column_slice(3, 1, &[1.0, -1.0, 0.0]));
        let theta = parts.1.flatten(&v).unwrap();
        let mut cs = CachedSolver::from_parts(parts.0.clone(), parts.1.clone(), parts.2.clone(), parts.3.clone(), theta.clone(), settings()).unwrap();
        let mut batches = vec![vec![]];
        for i in 0..20 {
            let mut batch = vec![(1, (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())];
            if i % 3 == 0 {
                batch.push((0, (0..6).map(|_| rng.random_range(-2.0..2.0)).collect()));
            }
            batches.push(batch);
        }
        let fx = FixtureSet::record(&mut cs, &batches).unwrap();
        assert!((fx.steps[0].x[0] - 1.0).abs() < 1e-6 && fx.steps[0].x[1].abs() < 1e-6);
        let (rep, _dir) = run(parts, theta, fx, "cpg");
        assert!(rep.passed(), "{rep:?}");
        assert_eq!(rep.cases, 21);
        assert_eq!(rep.factorizations, cs.factorizations());
    }

    #[test]
    fn corrupted_fixture_fails_exactly_once() {
        let fam = build_nnls(3, 2).unwrap();
        let parts = canonicalize(&fam.problem).unwrap();
        let theta = vec![1.0; parts.1.d()];
        let mut cs = CachedSolver::from_parts(parts.0.clone(), parts.1.clone(), parts.2.clone(), parts.3.clone(), theta.clone(), settings()).unwrap();
        let batches: Vec<_> = (0..5).map(|i| vec![(1, vec![i as f64, 1.0, -1.0])]).collect();
        let mut fx = FixtureSet::record(&mut cs, &batches).unwrap();
        fx.steps[2].x[1] += 0.5;
        let (rep, _dir) = run(parts, theta, fx, "cpg");
        assert!(!rep.passed());
        assert_eq!(rep.failed, 1);
        assert_eq!(rep.failures.len(), 1);
        assert_eq!(rep.failures[0].step, 2);
    }

    #[test]
    fn mpc_trace_replays_in_c() {
        let fam = build_mpc(6, 8).unwrap();
        let model = MpcModel::quadcopter(0.1);
        let z0 = [1.0, -0.5, 0.3, 0.0, 0.2, 0.0];
        let trace = simulate_mpc(&fam, &model, &model.a, &model.b, &z0, 100, settings()).unwrap();
        let parts = canonicalize(&fam.problem).unwrap();
        let fx = FixtureSet::from_trace(&parts.0, &parts.1, &parts.2, &parts.3, settings(), &trace).unwrap();
        assert_eq!(fx.len(), 100);
        let theta0 = trace.steps[0].theta.clone();
        let (rep, _dir) = run(parts, theta0, fx, "mpc");
        assert!(rep.passed(), "{:?}", &rep.failures[..rep.failures.len().min(3)]);
        assert_eq!(rep.cases, 100);
        assert_eq!(rep.factorizations, 1);
    }

    #[test]
    fn portfolio_backtest_replays_in_c() {
        let fam = build_portfolio(10).unwrap();
        let trace = backtest(&fam, &PortfolioCosts::default(), 50, 5, settings()).unwrap();
        let parts = canonicalize(&fam.problem).unwrap();
        let fx = FixtureSet::from_trace(&parts.0, &parts.1, &parts.2, &parts.3, settings(), &trace).unwrap();
        let theta0 = trace.steps[0].theta.clone();
        let (rep, _dir) = run(parts, theta0, fx, "port");
        assert!(rep.passed(), "{:?}", &rep.failures[..rep.failures.len().min(3)]);
        assert_eq!(rep.cases, 50);
    }

    #[test]
    fn object_sizes_reported_with_toolchain() {
        let b = mpc_bundle(6);
        let r = emit_report(&b, Some(&cc()));
        let objs = r.object_bytes.expect("object sizes");
        assert!(objs.iter().any(|(n, s)| n == "mpc_canon.o" && *s > 0));
    }
}
