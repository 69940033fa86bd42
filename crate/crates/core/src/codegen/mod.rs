//! Embedded C source generation for one problem family: static workspace
//! data, per-parameter update and canonicalization code, solver glue around
//! the hand-written runtime in `c_runtime/`, retrieval accessors and
//! optional replay fixtures.

mod emit;
mod fixtures;
pub mod harness;

pub use emit::{float_lit, ElemKind, StaticArray};
pub use fixtures::{FixtureSet, FixtureStep};
pub use harness::{run_harness, HarnessFailure, HarnessReport, COMPILE_FLAGS};

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::ast::is_c_identifier;
use crate::canon::{AffineMap, CanonQP, DependencyTable, RetrievalMap, Segment};
use crate::solver::{Kkt, Ldl, Settings, SolverError, INF_BOUND, RHO_EQ_SCALE, RHO_EQ_TOL, RHO_MIN};
use emit::{usize_vec, CWriter};

pub const RUNTIME_HEADER: &str = include_str!("../../c_runtime/qpg_runtime.h");
pub const RUNTIME_SOURCE: &str = include_str!("../../c_runtime/qpg_runtime.c");

#[derive(Debug, Error)]
pub enum CodegenError {
    #[error("`{0}` is not a valid C identifier prefix")]
    BadPrefix(String),
    #[error("generated identifier `{0}` is defined twice")]
    IdentifierCollision(String),
    #[error("{what} ({size}) does not fit 32-bit indices")]
    PatternTooLarge { what: &'static str, size: usize },
    #[error("initial parameter vector has length {found}, expected {expected}")]
    InitialTheta { expected: usize, found: usize },
    #[error("fixtures requested but none were supplied")]
    MissingFixtures,
    #[error("fixture step {step}: {msg}")]
    BadFixture { step: usize, msg: String },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("harness: {0}")]
    Harness(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub enum FloatWidth {
    F32,
    #[default]
    F64,
}

impl FloatWidth {
    pub fn bytes(self) -> usize {
        match self {
            FloatWidth::F32 => 4,
            FloatWidth::F64 => 8,
        }
    }

    pub fn c_type(self) -> &'static str {
        match self {
            FloatWidth::F32 => "float",
            FloatWidth::F64 => "double",
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenConfig {
    /// Prefix of every emitted identifier and file name.
    pub prefix: String,
    pub float: FloatWidth,
    pub emit_fixtures: bool,
    /// Where [`SourceBundle::write_to`] puts the files when called through
    /// [`generate_to_dir`].
    pub output_dir: Option<PathBuf>,
    pub settings: Settings,
    /// Hard iteration cap for real-time use; overrides `settings.max_iter`.
    pub max_iter_cap: Option<usize>,
    /// Parameter values compiled into the staging area; zeros otherwise.
    pub initial_theta: Option<Vec<f64>>,
    pub fixtures: Option<FixtureSet>,
}

impl GenConfig {
    pub fn new(prefix: impl Into<String>) -> GenConfig {
        GenConfig {
            prefix: prefix.into(),
            float: FloatWidth::F64,
            emit_fixtures: false,
            output_dir: None,
            settings: Settings::default(),
            max_iter_cap: None,
            initial_theta: None,
            fixtures: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FileRole {
    Header,
    Implementation,
    Runtime,
    Fixtures,
    Example,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SourceFile {
    pub name: String,
    pub role: FileRole,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Manifest {
    /// `(file name, bytes)` in emission order.
    pub files: Vec<(String, usize)>,
    pub total_bytes: usize,
    /// Bytes of statically allocated solver data (fixtures excluded).
    pub static_data_bytes: usize,
    pub arrays: Vec<StaticArray>,
    pub fixture_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SourceBundle {
    pub prefix: String,
    pub files: Vec<SourceFile>,
    pub manifest: Manifest,
}

impl SourceBundle {
    pub fn file(&self, name: &str) -> Option<&SourceFile> {
        self.files.iter().find(|f| f.name == name)
    }

    pub fn header(&self) -> &SourceFile {
        self.files
            .iter()
            .find(|f| f.role == FileRole::Header)
            .expect("bundle always has a header")
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), CodegenError> {
        std::fs::create_dir_all(dir)?;
        for f in &self.files {
            std::fs::write(dir.join(&f.name), &f.text)?;
        }
        Ok(())
    }
}

const SEG_BITS: [(Segment, u32); 5] = [
    (Segment::P, 1),
    (Segment::Q, 2),
    (Segment::L, 4),
    (Segment::U, 8),
    (Segment::A, 16),
];

fn seg_mask(segs: &BTreeSet<Segment>) -> u32 {
    SEG_BITS
        .iter()
        .filter(|(s, _)| segs.contains(s))
        .map(|(_, b)| b)
        .sum()
}

fn check_index(what: &'static str, size: usize) -> Result<(), CodegenError> {
    if size >= i32::MAX as usize {
        Err(CodegenError::PatternTooLarge { what, size })
    } else {
        Ok(())
    }
}

/// How accessors obtain user variables from the solver iterate.
enum Retrieval {
    /// Variable `i` lives at `x + offsets[i]`.
    Alias(Vec<usize>),
    /// `out[i] = x[sel[i]]`.
    Gather(Vec<usize>),
    /// `out = R [x; 1]` with R stored by rows.
    MatVec,
}

fn retrieval_mode(rmap: &RetrievalMap) -> Retrieval {
    if !rmap.selector {
        return Retrieval::MatVec;
    }
    let mut offsets = Vec::new();
    let mut at = 0;
    for b in &rmap.blocks {
        let len = b.rows * b.cols;
        let src = &rmap.select[at..at + len];
        if src.windows(2).any(|w| w[1] != w[0] + 1) {
            return Retrieval::Gather(rmap.select.clone());
        }
        offsets.push(src.first().copied().unwrap_or(0));
        at += len;
    }
    Retrieval::Alias(offsets)
}

/// Emit the source bundle for a canonicalized family.
pub fn generate(
    canon: &CanonQP,
    cmap: &AffineMap,
    rmap: &RetrievalMap,
    deps: &DependencyTable,
    config: &GenConfig,
) -> Result<SourceBundle, CodegenError> {
    let pre = config.prefix.as_str();
    if !is_c_identifier(pre) || pre.starts_with("qpg") {
        return Err(CodegenError::BadPrefix(pre.to_string()));
    }
    let fb = config.float.bytes();
    let ftype = config.float.c_type();
    let (n, m) = (canon.n, canon.m);
    let d = cmap.d();
    let tlen = cmap.len();
    let segs = &canon.segments;

    let ones = vec![1.0; m];
    let kkt = Kkt::build(&canon.p_pattern, &canon.a_pattern, config.settings.sigma, &ones)?;
    let ldl = Ldl::analyze(&kkt.k)?;
    check_index("KKT dimension", n + m)?;
    check_index("KKT nonzeros", kkt.k.nnz())?;
    check_index("L nonzeros", ldl.nnz())?;
    check_index("canonical parameter vector", tlen)?;
    check_index("C nonzeros", cmap.c.nnz())?;
    check_index("parameter vector", d)?;

    let theta0 = match &config.initial_theta {
        Some(t) if t.len() != d => {
            return Err(CodegenError::InitialTheta {
                expected: d,
                found: t.len(),
            })
        }
        Some(t) => t.clone(),
        None => vec![0.0; d],
    };
    let tt0 = cmap.eval_params(&theta0).map_err(|e| CodegenError::Harness(e.to_string()))?;

    let fixtures = if config.emit_fixtures {
        Some(config.fixtures.as_ref().ok_or(CodegenError::MissingFixtures)?)
    } else {
        None
    };

    let params: Vec<(String, usize, usize)> = cmap
        .names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let b = cmap.layout.block(k);
            (name.clone(), b.offset, b.len())
        })
        .collect();
    let vars: Vec<(String, usize, usize)> = rmap
        .blocks
        .iter()
        .map(|b| (b.name.clone(), b.rows, b.cols))
        .collect();
    let n_out: usize = vars.iter().map(|v| v.1 * v.2).sum();
    let retrieval = retrieval_mode(rmap);

    // symbol table for collision checks
    let mut symbols: Vec<String> = vec![
        format!("{pre}_solve"),
        format!("{pre}_iterations"),
        format!("{pre}_canonicalize"),
        format!("{pre}_retrieve"),
        format!("{pre}_factorization_count"),
        format!("{pre}_ws"),
    ];
    symbols.extend(params.iter().map(|p| format!("{pre}_update_{}", p.0)));
    symbols.extend(vars.iter().map(|v| format!("{pre}_get_{}", v.0)));

    let header_name = format!("{pre}.h");
    let internal_name = format!("{pre}_internal.h");
    let guard = format!("{}_H", pre.to_uppercase());

    // ---- public header
    let mut h = String::new();
    let _ = writeln!(h, "#ifndef {guard}");
    let _ = writeln!(h, "#define {guard}");
    h.push('\n');
    let _ = writeln!(
        h,
        "/* Solver for the `{pre}` problem family: {n} canonical variables, {m} constraints."
    );
    h.push_str("   All state is one static workspace; calls are not re-entrant. */\n\n");
    let _ = writeln!(h, "#define {pre}_STATUS_SOLVED 0");
    let _ = writeln!(h, "#define {pre}_STATUS_MAX_ITER 1");
    let _ = writeln!(h, "#define {pre}_STATUS_PRIMAL_INFEASIBLE 2");
    let _ = writeln!(h, "#define {pre}_STATUS_DUAL_INFEASIBLE 3");
    h.push('\n');
    h.push_str("/* Parameter updates take the stored entries in column-major order. */\n");
    for (k, (name, _, len)) in params.iter().enumerate() {
        let b = cmap.layout.block(k);
        let kind = if b.entries.is_some() { "sparse" } else { "dense" };
        let _ = writeln!(h, "/* {name}: {}x{} {kind}, {len} stored entries */", b.rows, b.cols);
        let _ = writeln!(h, "#define {pre}_{name}_SIZE {len}");
        let _ = writeln!(h, "void {pre}_update_{name}(const {ftype} *values);");
    }
    if !params.is_empty() {
        h.push('\n');
    }
    h.push_str("/* Returns one of the status codes above. */\n");
    let _ = writeln!(h, "int {pre}_solve(void);");
    let _ = writeln!(h, "int {pre}_iterations(void);");
    h.push('\n');
    h.push_str("/* Solution blocks in column-major order, valid until the next solve. */\n");
    for (name, r, c) in &vars {
        let _ = writeln!(h, "#define {pre}_{name}_SIZE {}", r * c);
        let _ = writeln!(h, "const {ftype} *{pre}_get_{name}(void);");
    }
    h.push_str("\n#endif\n");

    // ---- internal header
    let mut ih = String::new();
    let iguard = format!("{}_INTERNAL_H", pre.to_uppercase());
    let _ = writeln!(ih, "#ifndef {iguard}");
    let _ = writeln!(ih, "#define {iguard}");
    ih.push('\n');
    ih.push_str("#include \"qpg_runtime.h\"\n");
    let _ = writeln!(ih, "#include \"{header_name}\"");
    ih.push('\n');
    let _ = writeln!(ih, "#define {pre}_N_PARAMS {}", params.len());
    let _ = writeln!(ih, "#define {pre}_THETA_LEN {d}");
    let _ = writeln!(ih, "#define {pre}_THETA_TILDE_LEN {tlen}");
    let _ = writeln!(ih, "#define {pre}_OUT_LEN {n_out}");
    ih.push('\n');

    // ---- workspace data
    let ws_name = format!("{pre}_workspace.c");
    let mut w = CWriter::new(ws_name.clone(), fb);
    w.line(&format!("#include \"{internal_name}\""));
    w.blank();
    w.line("/* parameter staging area and canonical parameter vector */");
    w.floats(false, &format!("{pre}_theta"), &theta0);
    w.floats(false, &format!("{pre}_theta_tilde"), &tt0);
    w.zeros(ElemKind::Byte, &format!("{pre}_dirty"), params.len());
    w.blank();
    w.line("/* affine map, rows of the parameter part plus the constant column */");
    w.floats(true, &format!("{pre}_c_const"), &cmap.constant);
    w.ints(true, &format!("{pre}_c_rowptr"), &usize_vec(&cmap.by_row.col_ptr));
    w.ints(true, &format!("{pre}_c_col"), &usize_vec(&cmap.by_row.row_idx));
    w.floats(true, &format!("{pre}_c_val"), &cmap.by_row.values);
    w.blank();
    w.line("/* rows of theta_tilde depending on each parameter */");
    for (k, rows) in deps.rows.iter().enumerate() {
        if !rows.is_empty() {
            w.ints(true, &format!("{pre}_rows{k}"), &usize_vec(rows));
        }
    }
    w.blank();
    w.line("/* P (upper triangle) and A patterns */");
    w.ints(true, &format!("{pre}_p_colptr"), &usize_vec(&canon.p_pattern.col_ptr));
    w.ints(true, &format!("{pre}_p_rowidx"), &usize_vec(&canon.p_pattern.row_idx));
    w.ints(true, &format!("{pre}_a_colptr"), &usize_vec(&canon.a_pattern.col_ptr));
    w.ints(true, &format!("{pre}_a_rowidx"), &usize_vec(&canon.a_pattern.row_idx));
    w.zeros(ElemKind::Float, &format!("{pre}_rho"), m);
    w.zeros(ElemKind::Float, &format!("{pre}_rho_inv"), m);
    w.blank();
    w.line("/* KKT pattern and value maps */");
    w.ints(true, &format!("{pre}_k_colptr"), &usize_vec(&kkt.k.col_ptr));
    w.ints(true, &format!("{pre}_k_rowidx"), &usize_vec(&kkt.k.row_idx));
    w.zeros(ElemKind::Float, &format!("{pre}_k_val"), kkt.k.nnz());
    w.ints(true, &format!("{pre}_pinv"), &usize_vec(&kkt.pinv));
    w.ints(true, &format!("{pre}_p_to_kkt"), &usize_vec(&kkt.p_to_kkt));
    w.ints(true, &format!("{pre}_a_to_kkt"), &usize_vec(&kkt.a_to_kkt));
    w.ints(true, &format!("{pre}_diag_x"), &usize_vec(&kkt.diag_x));
    w.ints(true, &format!("{pre}_rho_to_kkt"), &usize_vec(&kkt.rho_to_kkt));
    w.blank();
    w.line("/* LDL' structure and factors */");
    let etree: Vec<i64> = ldl
        .etree
        .iter()
        .map(|&p| if p == usize::MAX { -1 } else { p as i64 })
        .collect();
    let dim = n + m;
    w.ints(true, &format!("{pre}_etree"), &etree);
    w.ints(true, &format!("{pre}_lp"), &usize_vec(&ldl.lp));
    w.zeros(ElemKind::Int, &format!("{pre}_li"), ldl.nnz());
    w.zeros(ElemKind::Float, &format!("{pre}_lx"), ldl.nnz());
    w.zeros(ElemKind::Float, &format!("{pre}_d"), dim);
    w.zeros(ElemKind::Float, &format!("{pre}_dinv"), dim);
    w.zeros(ElemKind::Byte, &format!("{pre}_y_markers"), dim);
    w.zeros(ElemKind::Int, &format!("{pre}_y_idx"), dim);
    w.zeros(ElemKind::Int, &format!("{pre}_elim"), dim);
    w.zeros(ElemKind::Int, &format!("{pre}_next_space"), dim);
    w.zeros(ElemKind::Float, &format!("{pre}_y_vals"), dim);
    w.blank();
    w.line("/* iterates */");
    for (name, len) in [
        ("x", n),
        ("z", m),
        ("y", m),
        ("x_prev", n),
        ("z_prev", m),
        ("dy", m),
        ("work", dim),
        ("ax", m),
        ("px", n),
        ("aty", n),
    ] {
        w.zeros(ElemKind::Float, &format!("{pre}_{name}"), len);
    }
    match &retrieval {
        Retrieval::Alias(_) => {}
        Retrieval::Gather(sel) => {
            w.blank();
            w.line("/* retrieval */");
            w.ints(true, &format!("{pre}_sel"), &usize_vec(sel));
            w.zeros(ElemKind::Float, &format!("{pre}_out"), n_out);
        }
        Retrieval::MatVec => {
            w.blank();
            w.line("/* retrieval matrix by rows */");
            let rt = rmap.r.transpose();
            w.ints(true, &format!("{pre}_r_rowptr"), &usize_vec(&rt.col_ptr));
            w.ints(true, &format!("{pre}_r_col"), &usize_vec(&rt.row_idx));
            w.floats(true, &format!("{pre}_r_val"), &rt.values);
            w.zeros(ElemKind::Float, &format!("{pre}_out"), n_out);
        }
    }

    let s = &config.settings;
    let max_iter = config.max_iter_cap.unwrap_or(s.max_iter);
    check_index("max_iter", max_iter)?;
    let rho_class = [RHO_MIN, RHO_EQ_SCALE * s.rho, s.rho];
    let lit = |v: f64| emit::float_lit(v);
    w.blank();
    let off = |seg: Segment| segs.range(seg).start;
    let fields: Vec<(String, String)> = vec![
        ("n".into(), n.to_string()),
        ("m".into(), m.to_string()),
        ("sigma".into(), lit(s.sigma)),
        ("alpha".into(), lit(s.alpha)),
        ("eps_abs".into(), lit(s.eps_abs)),
        ("eps_rel".into(), lit(s.eps_rel)),
        ("eps_prim_inf".into(), lit(s.eps_prim_inf)),
        ("eps_dual_inf".into(), lit(s.eps_dual_inf)),
        ("max_iter".into(), max_iter.to_string()),
        ("check_interval".into(), s.check_interval.to_string()),
        ("warm_start".into(), (s.warm_start as u8).to_string()),
        ("rho_eq_tol".into(), lit(RHO_EQ_TOL)),
        (
            "rho_class".into(),
            format!("{{{}}}", rho_class.map(lit).join(", ")),
        ),
        (
            "rho_inv_class".into(),
            format!("{{{}}}", rho_class.map(|r| lit(1.0 / r)).join(", ")),
        ),
        ("p_nnz".into(), canon.p_pattern.nnz().to_string()),
        ("p_colptr".into(), format!("{pre}_p_colptr")),
        ("p_rowidx".into(), format!("{pre}_p_rowidx")),
        ("p_val".into(), format!("{pre}_theta_tilde + {}", off(Segment::P))),
        ("a_nnz".into(), canon.a_pattern.nnz().to_string()),
        ("a_colptr".into(), format!("{pre}_a_colptr")),
        ("a_rowidx".into(), format!("{pre}_a_rowidx")),
        ("a_val".into(), format!("{pre}_theta_tilde + {}", off(Segment::A))),
        ("q".into(), format!("{pre}_theta_tilde + {}", off(Segment::Q))),
        ("l".into(), format!("{pre}_theta_tilde + {}", off(Segment::L))),
        ("u".into(), format!("{pre}_theta_tilde + {}", off(Segment::U))),
        ("rho".into(), format!("{pre}_rho")),
        ("rho_inv".into(), format!("{pre}_rho_inv")),
        ("k_colptr".into(), format!("{pre}_k_colptr")),
        ("k_rowidx".into(), format!("{pre}_k_rowidx")),
        ("k_val".into(), format!("{pre}_k_val")),
        ("pinv".into(), format!("{pre}_pinv")),
        ("p_to_kkt".into(), format!("{pre}_p_to_kkt")),
        ("a_to_kkt".into(), format!("{pre}_a_to_kkt")),
        ("diag_x".into(), format!("{pre}_diag_x")),
        ("rho_to_kkt".into(), format!("{pre}_rho_to_kkt")),
        ("etree".into(), format!("{pre}_etree")),
        ("lp".into(), format!("{pre}_lp")),
        ("li".into(), format!("{pre}_li")),
        ("lx".into(), format!("{pre}_lx")),
        ("d".into(), format!("{pre}_d")),
        ("dinv".into(), format!("{pre}_dinv")),
        ("y_markers".into(), format!("{pre}_y_markers")),
        ("y_idx".into(), format!("{pre}_y_idx")),
        ("elim".into(), format!("{pre}_elim")),
        ("next_space".into(), format!("{pre}_next_space")),
        ("y_vals".into(), format!("{pre}_y_vals")),
        ("x".into(), format!("{pre}_x")),
        ("z".into(), format!("{pre}_z")),
        ("y".into(), format!("{pre}_y")),
        ("x_prev".into(), format!("{pre}_x_prev")),
        ("z_prev".into(), format!("{pre}_z_prev")),
        ("dy".into(), format!("{pre}_dy")),
        ("work".into(), format!("{pre}_work")),
        ("ax".into(), format!("{pre}_ax")),
        ("px".into(), format!("{pre}_px")),
        ("aty".into(), format!("{pre}_aty")),
        ("status".into(), "-1".into()),
    ];
    w.line(&format!("qpg_workspace {pre}_ws = {{"));
    for (f, v) in &fields {
        w.line(&format!("    .{f} = {v},"));
    }
    w.line("};");

    // externs for the arrays used outside the workspace file
    for a in &w.arrays {
        let ty = match a.kind {
            ElemKind::Float => "qpg_float",
            ElemKind::Int => "int",
            ElemKind::Byte => "unsigned char",
        };
        let konst = w.text.contains(&format!("const {ty} {}[", a.name));
        let _ = writeln!(ih, "extern {}{ty} {}[{}];", if konst { "const " } else { "" }, a.name, a.len);
    }
    let _ = writeln!(ih, "extern qpg_workspace {pre}_ws;");
    ih.push('\n');
    let _ = writeln!(ih, "/* Recompute the theta_tilde rows of dirty parameters; returns the");
    let _ = writeln!(ih, "   touched segments as bits P=1, q=2, l=4, u=8, A=16. */");
    let _ = writeln!(ih, "int {pre}_canonicalize(void);");
    let _ = writeln!(ih, "void {pre}_retrieve(void);");
    let _ = writeln!(ih, "int {pre}_factorization_count(void);");
    ih.push_str("\n#endif\n");
    symbols.extend(w.arrays.iter().map(|a| a.name.clone()));

    // ---- canonicalization, updates and retrieval
    let mut c = String::new();
    let _ = writeln!(c, "#include \"{internal_name}\"");
    c.push('\n');
    for (k, (name, offset, len)) in params.iter().enumerate() {
        let _ = writeln!(c, "void {pre}_update_{name}(const {ftype} *values)");
        c.push_str("{\n    int i;\n");
        let _ = writeln!(c, "    for (i = 0; i < {len}; ++i) {{");
        let _ = writeln!(c, "        {pre}_theta[{offset} + i] = values[i];");
        c.push_str("    }\n");
        let _ = writeln!(c, "    {pre}_dirty[{k}] = 1;");
        c.push_str("}\n\n");
    }
    let any_rows = deps.rows.iter().any(|r| !r.is_empty());
    if any_rows {
        let _ = writeln!(c, "static void {pre}_recompute(const int *rows, int count)");
        c.push_str("{\n    int i, k, r;\n    qpg_float acc;\n");
        c.push_str("    for (i = 0; i < count; ++i) {\n");
        c.push_str("        r = rows[i];\n");
        let _ = writeln!(c, "        acc = {pre}_c_const[r];");
        let _ = writeln!(c, "        for (k = {pre}_c_rowptr[r]; k < {pre}_c_rowptr[r + 1]; ++k) {{");
        let _ = writeln!(c, "            acc += {pre}_c_val[k] * {pre}_theta[{pre}_c_col[k]];");
        c.push_str("        }\n");
        let _ = writeln!(c, "        {pre}_theta_tilde[r] = acc;");
        c.push_str("    }\n}\n\n");
    }
    let _ = writeln!(c, "int {pre}_canonicalize(void)");
    c.push_str("{\n    int touched = 0;\n");
    for (k, rows) in deps.rows.iter().enumerate() {
        let _ = writeln!(c, "    if ({pre}_dirty[{k}]) {{");
        if !rows.is_empty() {
            let _ = writeln!(c, "        {pre}_recompute({pre}_rows{k}, {});", rows.len());
            let _ = writeln!(c, "        touched |= {};", seg_mask(&deps.segments[k]));
        }
        let _ = writeln!(c, "        {pre}_dirty[{k}] = 0;");
        c.push_str("    }\n");
    }
    c.push_str("    return touched;\n}\n\n");
    let _ = writeln!(c, "void {pre}_retrieve(void)");
    match &retrieval {
        Retrieval::Alias(_) => c.push_str("{\n}\n\n"),
        Retrieval::Gather(_) => {
            c.push_str("{\n    int i;\n");
            let _ = writeln!(c, "    for (i = 0; i < {n_out}; ++i) {{");
            let _ = writeln!(c, "        {pre}_out[i] = {pre}_x[{pre}_sel[i]];");
            c.push_str("    }\n}\n\n");
        }
        Retrieval::MatVec => {
            c.push_str("{\n    int i, k, j;\n    qpg_float acc;\n");
            let _ = writeln!(c, "    for (i = 0; i < {n_out}; ++i) {{");
            c.push_str("        acc = 0;\n");
            let _ = writeln!(c, "        for (k = {pre}_r_rowptr[i]; k < {pre}_r_rowptr[i + 1]; ++k) {{");
            let _ = writeln!(c, "            j = {pre}_r_col[k];");
            let _ = writeln!(
                c,
                "            acc += {pre}_r_val[k] * (j < {n} ? {pre}_x[j] : 1);"
            );
            c.push_str("        }\n");
            let _ = writeln!(c, "        {pre}_out[i] = acc;");
            c.push_str("    }\n}\n\n");
        }
    }
    let mut at = 0;
    for (i, (name, r, cc)) in vars.iter().enumerate() {
        let _ = writeln!(c, "const {ftype} *{pre}_get_{name}(void)");
        match &retrieval {
            Retrieval::Alias(offsets) => {
                let _ = writeln!(c, "{{\n    return {pre}_x + {};\n}}\n", offsets[i]);
            }
            _ => {
                let _ = writeln!(c, "{{\n    return {pre}_out + {at};\n}}\n");
            }
        }
        at += r * cc;
    }

    // ---- solver glue
    let mut sv = String::new();
    let _ = writeln!(sv, "#include \"{internal_name}\"");
    sv.push('\n');
    let _ = writeln!(sv, "static int {pre}_ready = 0;");
    sv.push('\n');
    let _ = writeln!(sv, "int {pre}_solve(void)");
    sv.push_str("{\n");
    let _ = writeln!(sv, "    int touched = {pre}_canonicalize();");
    sv.push_str("    int status;\n");
    let _ = writeln!(sv, "    if (!{pre}_ready) {{");
    let _ = writeln!(sv, "        qpg_setup_rho(&{pre}_ws);");
    let _ = writeln!(sv, "        qpg_kkt_set_p(&{pre}_ws);");
    let _ = writeln!(sv, "        qpg_kkt_set_a(&{pre}_ws);");
    let _ = writeln!(sv, "        qpg_kkt_set_rho(&{pre}_ws);");
    let _ = writeln!(sv, "        if (qpg_factor(&{pre}_ws) != 0) {{");
    let _ = writeln!(sv, "            {pre}_ws.status = QPG_UNSOLVED;");
    sv.push_str("            return QPG_UNSOLVED;\n        }\n");
    let _ = writeln!(sv, "        {pre}_ready = 1;");
    sv.push_str("    } else if (touched & 17) {\n");
    sv.push_str("        if (touched & 1) {\n");
    let _ = writeln!(sv, "            qpg_kkt_set_p(&{pre}_ws);");
    sv.push_str("        }\n        if (touched & 16) {\n");
    let _ = writeln!(sv, "            qpg_kkt_set_a(&{pre}_ws);");
    sv.push_str("        }\n");
    let _ = writeln!(sv, "        if (qpg_factor(&{pre}_ws) != 0) {{");
    let _ = writeln!(sv, "            {pre}_ws.status = QPG_UNSOLVED;");
    sv.push_str("            return QPG_UNSOLVED;\n        }\n    }\n");
    let _ = writeln!(sv, "    status = qpg_solve(&{pre}_ws);");
    let _ = writeln!(sv, "    {pre}_retrieve();");
    sv.push_str("    return status;\n}\n\n");
    let _ = writeln!(sv, "int {pre}_iterations(void)\n{{\n    return {pre}_ws.iterations;\n}}\n");
    let _ = writeln!(
        sv,
        "int {pre}_factorization_count(void)\n{{\n    return {pre}_ws.factorizations;\n}}"
    );

    // ---- config
    let mut cfg = String::new();
    cfg.push_str("#ifndef QPG_CONFIG_H\n#define QPG_CONFIG_H\n\n");
    let _ = writeln!(cfg, "typedef {ftype} qpg_float;");
    cfg.push_str("/* bounds at or beyond this magnitude are infinite */\n");
    let _ = writeln!(cfg, "#define QPG_INF (({ftype}){})", emit::float_lit(INF_BOUND));
    cfg.push_str("\n#endif\n");

    // ---- fixtures and example
    let mut fix_arrays = Vec::new();
    let fixture_text = match fixtures {
        Some(fx) => {
            let (text, arrays) = emit_fixtures(pre, fx, &params, tlen, n_out, fb)?;
            fix_arrays = arrays;
            Some(text)
        }
        None => None,
    };
    let example = emit_example(pre, &internal_name, &params, &vars, fixtures.map(|f| f.len()), ftype);

    let mut files = vec![
        SourceFile {
            name: header_name,
            role: FileRole::Header,
            text: h,
        },
        SourceFile {
            name: internal_name.clone(),
            role: FileRole::Implementation,
            text: ih,
        },
        SourceFile {
            name: ws_name,
            role: FileRole::Implementation,
            text: w.text,
        },
        SourceFile {
            name: format!("{pre}_canon.c"),
            role: FileRole::Implementation,
            text: c,
        },
        SourceFile {
            name: format!("{pre}_solve.c"),
            role: FileRole::Implementation,
            text: sv,
        },
    ];
    if let Some(text) = fixture_text {
        files.push(SourceFile {
            name: format!("{pre}_fixtures.c"),
            role: FileRole::Fixtures,
            text,
        });
    }
    files.push(SourceFile {
        name: format!("{pre}_example_main.c"),
        role: FileRole::Example,
        text: example,
    });
    files.push(SourceFile {
        name: "qpg_config.h".into(),
        role: FileRole::Runtime,
        text: cfg,
    });
    files.push(SourceFile {
        name: "qpg_runtime.h".into(),
        role: FileRole::Runtime,
        text: RUNTIME_HEADER.to_string(),
    });
    files.push(SourceFile {
        name: "qpg_runtime.c".into(),
        role: FileRole::Runtime,
        text: RUNTIME_SOURCE.to_string(),
    });

    symbols.extend(fix_arrays.iter().map(|a: &StaticArray| a.name.clone()));
    let mut seen = BTreeSet::new();
    for s in &symbols {
        if !seen.insert(s.as_str()) {
            return Err(CodegenError::IdentifierCollision(s.clone()));
        }
    }

    let static_data_bytes = w.arrays.iter().map(StaticArray::bytes).sum();
    let mut arrays = w.arrays;
    arrays.extend(fix_arrays);
    let file_sizes: Vec<(String, usize)> = files.iter().map(|f| (f.name.clone(), f.text.len())).collect();
    let manifest = Manifest {
        total_bytes: file_sizes.iter().map(|f| f.1).sum(),
        files: file_sizes,
        static_data_bytes,
        arrays,
        fixture_steps: fixtures.map_or(0, |f| f.len()),
    };
    Ok(SourceBundle {
        prefix: pre.to_string(),
        files,
        manifest,
    })
}

/// [`generate`] followed by writing into `config.output_dir`.
pub fn generate_to_dir(
    canon: &CanonQP,
    cmap: &AffineMap,
    rmap: &RetrievalMap,
    deps: &DependencyTable,
    config: &GenConfig,
) -> Result<SourceBundle, CodegenError> {
    let bundle = generate(canon, cmap, rmap, deps, config)?;
    if let Some(dir) = &config.output_dir {
        bundle.write_to(dir)?;
    }
    Ok(bundle)
}

fn emit_fixtures(
    pre: &str,
    fx: &FixtureSet,
    params: &[(String, usize, usize)],
    tlen: usize,
    n_out: usize,
    fb: usize,
) -> Result<(String, Vec<StaticArray>), CodegenError> {
    let name = format!("{pre}_fixtures.c");
    let mut w = CWriter::new(name, fb);
    w.line(&format!("#include \"{pre}_internal.h\""));
    w.blank();
    let mut ptr = vec![0i64];
    let mut which = Vec::new();
    let mut offs = Vec::new();
    let mut data = Vec::new();
    let mut tt = Vec::with_capacity(fx.len() * tlen);
    let mut xs = Vec::with_capacity(fx.len() * n_out);
    let mut status = Vec::new();
    for (s, step) in fx.steps.iter().enumerate() {
        for (k, vals) in &step.updates {
            let Some(p) = params.get(*k) else {
                return Err(CodegenError::BadFixture {
                    step: s,
                    msg: format!("unknown parameter {k}"),
                });
            };
            if vals.len() != p.2 {
                return Err(CodegenError::BadFixture {
                    step: s,
                    msg: format!("{} has {} values, expected {}", p.0, vals.len(), p.2),
                });
            }
            which.push(*k as i64);
            offs.push(data.len() as i64);
            data.extend_from_slice(vals);
        }
        ptr.push(which.len() as i64);
        if step.theta_tilde.len() != tlen || step.x.len() != n_out {
            return Err(CodegenError::BadFixture {
                step: s,
                msg: "result lengths do not match the family".into(),
            });
        }
        tt.extend_from_slice(&step.theta_tilde);
        xs.extend_from_slice(&step.x);
        status.push(step.status as i64);
    }
    w.line(&format!("const int {pre}_fix_steps = {};", fx.len()));
    w.ints(true, &format!("{pre}_fix_upd_ptr"), &ptr);
    w.ints(true, &format!("{pre}_fix_upd_param"), &which);
    w.ints(true, &format!("{pre}_fix_upd_off"), &offs);
    w.floats(true, &format!("{pre}_fix_data"), &data);
    w.floats(true, &format!("{pre}_fix_theta_tilde"), &tt);
    w.floats(true, &format!("{pre}_fix_x"), &xs);
    w.ints(true, &format!("{pre}_fix_status"), &status);
    Ok((w.text, w.arrays))
}

fn emit_example(
    pre: &str,
    internal: &str,
    params: &[(String, usize, usize)],
    vars: &[(String, usize, usize)],
    fixture_steps: Option<usize>,
    ftype: &str,
) -> String {
    let mut e = String::new();
    e.push_str("/* Host-side example. Replays the fixtures when present and prints a\n");
    e.push_str("   JSON report, otherwise solves once with the compiled-in values. */\n");
    e.push_str("#include <stdio.h>\n");
    let _ = writeln!(e, "#include \"{internal}\"");
    e.push('\n');
    e.push_str("#define ABSV(v) ((v) < 0 ? -(v) : (v))\n\n");
    let Some(_) = fixture_steps else {
        e.push_str("int main(void)\n{\n    int i;\n");
        let _ = writeln!(e, "    int status = {pre}_solve();");
        let _ = writeln!(
            e,
            "    printf(\"status %d iterations %d\\n\", status, {pre}_iterations());"
        );
        for (name, r, c) in vars {
            let _ = writeln!(e, "    printf(\"{name}:\");");
            let _ = writeln!(e, "    for (i = 0; i < {}; ++i) {{", r * c);
            let _ = writeln!(e, "        printf(\" %.17g\", (double){pre}_get_{name}()[i]);");
            e.push_str("    }\n    printf(\"\\n\");\n");
        }
        e.push_str("    return status == 0 ? 0 : 1;\n}\n");
        return e;
    };
    let _ = writeln!(e, "extern const int {pre}_fix_steps;");
    for (name, ty) in [
        ("fix_upd_ptr", "int"),
        ("fix_upd_param", "int"),
        ("fix_upd_off", "int"),
        ("fix_data", "qpg_float"),
        ("fix_theta_tilde", "qpg_float"),
        ("fix_x", "qpg_float"),
        ("fix_status", "int"),
    ] {
        let _ = writeln!(e, "extern const {ty} {pre}_{name}[];");
    }
    e.push('\n');
    if params.is_empty() {
        e.push_str("static void update(int k, const qpg_float *v)\n{\n    (void)k;\n    (void)v;\n}\n\n");
    } else {
        e.push_str("static void update(int k, const qpg_float *v)\n{\n    switch (k) {\n");
        for (k, (name, _, _)) in params.iter().enumerate() {
            let _ = writeln!(e, "    case {k}:\n        {pre}_update_{name}(v);\n        break;");
        }
        e.push_str("    default:\n        break;\n    }\n}\n\n");
    }
    let _ = writeln!(e, "static {ftype} out[{pre}_OUT_LEN + 1];\n");
    e.push_str("static void gather(void)\n{\n    int at = 0, i;\n    const qpg_float *p;\n");
    for (name, r, c) in vars {
        let _ = writeln!(e, "    p = {pre}_get_{name}();");
        let _ = writeln!(e, "    for (i = 0; i < {}; ++i) {{\n        out[at++] = p[i];\n    }}", r * c);
    }
    e.push_str("    (void)p;\n    (void)at;\n    (void)i;\n}\n\n");
    e.push_str("int main(void)\n{\n");
    e.push_str("    int s, k, i, status, bad, failed = 0, reported = 0;\n");
    e.push_str("    double got, want, err;\n");
    e.push_str("    printf(\"{\\\"failures\\\": [\");\n");
    let _ = writeln!(e, "    for (s = 0; s < {pre}_fix_steps; ++s) {{");
    let _ = writeln!(
        e,
        "        for (k = {pre}_fix_upd_ptr[s]; k < {pre}_fix_upd_ptr[s + 1]; ++k) {{"
    );
    let _ = writeln!(
        e,
        "            update({pre}_fix_upd_param[k], {pre}_fix_data + {pre}_fix_upd_off[k]);"
    );
    e.push_str("        }\n");
    let _ = writeln!(e, "        status = {pre}_solve();");
    e.push_str("        gather();\n        bad = 0;\n");
    let _ = writeln!(e, "        for (i = 0; i < {pre}_THETA_TILDE_LEN && !bad; ++i) {{");
    let _ = writeln!(e, "            got = {pre}_theta_tilde[i];");
    let _ = writeln!(e, "            want = {pre}_fix_theta_tilde[s * {pre}_THETA_TILDE_LEN + i];");
    e.push_str("            err = ABSV(got - want);\n");
    e.push_str("            if (err > 1e-12 * (ABSV(want) > 1 ? ABSV(want) : 1)) {\n");
    e.push_str("                bad = 1;\n");
    e.push_str("                printf(\"%s{\\\"step\\\": %d, \\\"field\\\": \\\"theta_tilde\\\", \\\"index\\\": %d, \\\"expected\\\": %.17g, \\\"got\\\": %.17g}\", reported++ ? \", \" : \"\", s, i, want, got);\n");
    e.push_str("            }\n        }\n");
    let _ = writeln!(e, "        for (i = 0; i < {pre}_OUT_LEN && !bad; ++i) {{");
    e.push_str("            got = out[i];\n");
    let _ = writeln!(e, "            want = {pre}_fix_x[s * {pre}_OUT_LEN + i];");
    e.push_str("            if (ABSV(got - want) > 1e-6) {\n                bad = 1;\n");
    e.push_str("                printf(\"%s{\\\"step\\\": %d, \\\"field\\\": \\\"x\\\", \\\"index\\\": %d, \\\"expected\\\": %.17g, \\\"got\\\": %.17g}\", reported++ ? \", \" : \"\", s, i, want, got);\n");
    e.push_str("            }\n        }\n");
    let _ = writeln!(e, "        if (!bad && status != {pre}_fix_status[s]) {{");
    e.push_str("            bad = 1;\n");
    let _ = writeln!(e, "            printf(\"%s{{\\\"step\\\": %d, \\\"field\\\": \\\"status\\\", \\\"index\\\": 0, \\\"expected\\\": %d, \\\"got\\\": %d}}\", reported++ ? \", \" : \"\", s, {pre}_fix_status[s], status);");
    e.push_str("        }\n        failed += bad;\n    }\n");
    let _ = writeln!(
        e,
        "    printf(\"], \\\"cases\\\": %d, \\\"failed\\\": %d, \\\"factorizations\\\": %d}}\\n\", {pre}_fix_steps, failed, {pre}_factorization_count());"
    );
    e.push_str("    return failed == 0 ? 0 : 1;\n}\n");
    e
}

/// Source and data sizes of a bundle, plus compiled object sizes when a C
/// compiler is available.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeReport {
    pub source_bytes: Vec<(String, usize)>,
    pub total_source_bytes: usize,
    pub static_data_bytes: usize,
    /// `(object file, bytes)` per compiled translation unit.
    pub object_bytes: Option<Vec<(String, u64)>>,
    pub note: Option<String>,
}

/// Sizes of a bundle. With `cc` set, each translation unit (example and
/// fixtures excluded) is compiled with `-c -O2` in a scratch directory.
pub fn emit_report(bundle: &SourceBundle, cc: Option<&str>) -> SizeReport {
    let mut report = SizeReport {
        source_bytes: bundle.manifest.files.clone(),
        total_source_bytes: bundle.manifest.total_bytes,
        static_data_bytes: bundle.manifest.static_data_bytes,
        object_bytes: None,
        note: None,
    };
    let Some(cc) = cc else {
        report.note = Some("no C toolchain configured; source-level metrics only".into());
        return report;
    };
    match harness::compile_objects(bundle, cc) {
        Ok(objs) => report.object_bytes = Some(objs),
        Err(e) => report.note = Some(format!("object sizes unavailable: {e}")),
    }
    report
}
