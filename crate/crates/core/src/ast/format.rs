//! JSON problem-file format.
//!
//! ```json
//! {
//!   "name": "nnls",
//!   "variables": [{"name": "x", "rows": 2, "cols": 1}],
//!   "parameters": [{"name": "G", "rows": 3, "cols": 2},
//!                  {"name": "h", "rows": 3, "cols": 1}],
//!   "minimize": {"op": "sum_squares", "args": [
//!       {"op": "sub", "args": [
//!           {"op": "matmul", "args": [{"param": "G"}, {"var": "x"}]},
//!           {"param": "h"}]}]},
//!   "constraints": [{"op": ">=0", "lhs": {"var": "x"}}]
//! }
//! ```

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde_json::{json, Map, Value};

use super::expr::{Expr, Op, Parameter, Sign, Variable};
use super::problem::{Constraint, ConstraintKind, Problem, ProblemBuilder, Sense};
use super::ModelError;

struct Scope {
    vars: HashMap<String, Expr>,
    params: HashMap<String, Expr>,
}

fn schema(path: &str, msg: impl Into<String>) -> ModelError {
    ModelError::Schema {
        path: path.to_string(),
        msg: msg.into(),
    }
}

fn get_usize(obj: &Map<String, Value>, key: &str, default: Option<usize>, path: &str) -> Result<usize, ModelError> {
    match obj.get(key) {
        None => default.ok_or_else(|| schema(path, format!("missing key `{key}`"))),
        Some(v) => v
            .as_u64()
            .map(|n| n as usize)
            .ok_or_else(|| schema(&format!("{path}.{key}"), "expected a nonnegative integer")),
    }
}

fn get_str<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a str, ModelError> {
    obj.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| schema(path, format!("missing string `{key}`")))
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, ModelError> {
    v.as_object().ok_or_else(|| schema(path, "expected an object"))
}

fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>, ModelError> {
    v.as_array().ok_or_else(|| schema(path, "expected an array"))
}

/// Parse nested numeric arrays: a number is 1x1, a flat list is a column
/// vector, a list of lists is a row-major matrix.
pub fn parse_matrix(v: &Value, path: &str) -> Result<DMatrix<f64>, ModelError> {
    let num = |v: &Value, p: &str| v.as_f64().ok_or_else(|| schema(p, "expected a number"));
    match v {
        Value::Number(_) => Ok(DMatrix::from_element(1, 1, num(v, path)?)),
        Value::Array(items) if items.iter().all(Value::is_array) && !items.is_empty() => {
            let rows: Vec<&Vec<Value>> = items.iter().map(|r| r.as_array().expect("checked")).collect();
            let ncols = rows[0].len();
            if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
                return Err(schema(path, "ragged or empty matrix rows"));
            }
            let mut m = DMatrix::zeros(rows.len(), ncols);
            for (i, r) in rows.iter().enumerate() {
                for (j, x) in r.iter().enumerate() {
                    m[(i, j)] = num(x, &format!("{path}[{i}][{j}]"))?;
                }
            }
            Ok(m)
        }
        Value::Array(items) if !items.is_empty() => {
            let vals = items
                .iter()
                .enumerate()
                .map(|(i, x)| num(x, &format!("{path}[{i}]")))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(DMatrix::from_column_slice(vals.len(), 1, &vals))
        }
        _ => Err(schema(path, "expected a number or a nonempty nested numeric array")),
    }
}

/// Inverse of [`parse_matrix`].
pub fn matrix_to_json(m: &DMatrix<f64>) -> Value {
    if m.nrows() == 1 && m.ncols() == 1 {
        json!(m[(0, 0)])
    } else if m.ncols() == 1 {
        json!(m.iter().copied().collect::<Vec<_>>())
    } else {
        Value::Array(
            (0..m.nrows())
                .map(|i| json!((0..m.ncols()).map(|j| m[(i, j)]).collect::<Vec<_>>()))
                .collect(),
        )
    }
}

fn parse_bounds(v: Option<&Value>, path: &str) -> Result<(usize, usize), ModelError> {
    let arr = v
        .and_then(Value::as_array)
        .filter(|a| a.len() == 2)
        .ok_or_else(|| schema(path, "expected [first, last] inclusive bounds"))?;
    let get = |k: usize| {
        arr[k]
            .as_u64()
            .map(|n| n as usize)
            .ok_or_else(|| schema(path, "bounds must be nonnegative integers"))
    };
    Ok((get(0)?, get(1)?))
}

fn parse_expr(v: &Value, scope: &Scope, path: &str) -> Result<Expr, ModelError> {
    let obj = as_object(v, path)?;
    if let Some(name) = obj.get("var") {
        let name = name.as_str().ok_or_else(|| schema(path, "`var` must be a string"))?;
        return scope
            .vars
            .get(name)
            .cloned()
            .ok_or_else(|| ModelError::Undeclared(name.to_string()));
    }
    if let Some(name) = obj.get("param") {
        let name = name.as_str().ok_or_else(|| schema(path, "`param` must be a string"))?;
        return scope
            .params
            .get(name)
            .cloned()
            .ok_or_else(|| ModelError::Undeclared(name.to_string()));
    }
    if let Some(c) = obj.get("const") {
        return Expr::constant(parse_matrix(c, &format!("{path}.const"))?);
    }
    let op = get_str(obj, "op", path)?;
    let raw_args = match obj.get("args") {
        Some(a) => as_array(a, &format!("{path}.args"))?.as_slice(),
        None => &[],
    };
    let args = raw_args
        .iter()
        .enumerate()
        .map(|(k, a)| parse_expr(a, scope, &format!("{path}.args[{k}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let arity = |n: usize| {
        if args.len() == n {
            Ok(())
        } else {
            Err(ModelError::Arity {
                op: op_static(op),
                expected: n,
                found: args.len(),
            })
        }
    };
    match op {
        "add" => Expr::sum_of(&args).and_then(|e| {
            if args.len() < 2 {
                arity(2).map(|_| e)
            } else {
                Ok(e)
            }
        }),
        "sub" => arity(2).and_then(|_| args[0].minus(&args[1])),
        "neg" => arity(1).map(|_| args[0].neg()),
        "mul" => arity(2).and_then(|_| args[0].mul_elem(&args[1])),
        "matmul" => arity(2).and_then(|_| args[0].matmul(&args[1])),
        "index" => {
            arity(1)?;
            let rows = parse_bounds(obj.get("rows"), &format!("{path}.rows"))?;
            let cols = parse_bounds(obj.get("cols"), &format!("{path}.cols"))?;
            args[0].index(rows.0..=rows.1, cols.0..=cols.1)
        }
        "transpose" => arity(1).map(|_| args[0].t()),
        "sum" => arity(1).map(|_| args[0].sum()),
        "hstack" => Expr::hstack(&args),
        "vstack" => Expr::vstack(&args),
        "sum_squares" => arity(1).map(|_| args[0].sum_squares()),
        "norm1" => arity(1).map(|_| args[0].norm1()),
        "abs" => arity(1).map(|_| args[0].abs()),
        "pos" => arity(1).map(|_| args[0].pos()),
        "neg_part" => arity(1).map(|_| args[0].neg_part()),
        other => Err(schema(path, format!("unknown operator `{other}`"))),
    }
}

fn op_static(op: &str) -> &'static str {
    const OPS: [&str; 15] = [
        "add", "sub", "neg", "mul", "matmul", "index", "transpose", "sum", "hstack", "vstack",
        "sum_squares", "norm1", "abs", "pos", "neg_part",
    ];
    OPS.iter().find(|o| **o == op).copied().unwrap_or("op")
}

fn parse_sign(v: Option<&Value>, path: &str) -> Result<Sign, ModelError> {
    match v.map(|s| s.as_str()) {
        None => Ok(Sign::Unknown),
        Some(Some("nonneg")) => Ok(Sign::Nonneg),
        Some(Some("nonpos")) => Ok(Sign::Nonpos),
        Some(Some("unknown")) => Ok(Sign::Unknown),
        _ => Err(schema(path, "sign must be one of nonneg, nonpos, unknown")),
    }
}

/// Parse a JSON problem file.
pub fn parse_problem(text: &str) -> Result<Problem, ModelError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| ModelError::Syntax {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    let root = as_object(&doc, "$")?;
    let name = root.get("name").and_then(Value::as_str).unwrap_or("problem");
    let mut b = ProblemBuilder::new(name);
    let mut scope = Scope {
        vars: HashMap::new(),
        params: HashMap::new(),
    };

    let empty = Vec::new();
    let vars = match root.get("variables") {
        Some(v) => as_array(v, "$.variables")?,
        None => &empty,
    };
    for (i, v) in vars.iter().enumerate() {
        let path = format!("$.variables[{i}]");
        let o = as_object(v, &path)?;
        let name = get_str(o, "name", &path)?;
        let rows = get_usize(o, "rows", Some(1), &path)?;
        let cols = get_usize(o, "cols", Some(1), &path)?;
        if scope.vars.contains_key(name) || scope.params.contains_key(name) {
            return Err(ModelError::DuplicateName(name.to_string()));
        }
        scope.vars.insert(name.to_string(), b.variable(name, rows, cols)?);
    }
    let params = match root.get("parameters") {
        Some(v) => as_array(v, "$.parameters")?,
        None => &empty,
    };
    for (i, v) in params.iter().enumerate() {
        let path = format!("$.parameters[{i}]");
        let o = as_object(v, &path)?;
        let name = get_str(o, "name", &path)?;
        let rows = get_usize(o, "rows", Some(1), &path)?;
        let cols = get_usize(o, "cols", Some(1), &path)?;
        let sign = parse_sign(o.get("sign"), &format!("{path}.sign"))?;
        let sparsity = match o.get("sparsity") {
            None | Some(Value::Null) => None,
            Some(s) => {
                let sp = format!("{path}.sparsity");
                let list = as_array(s, &sp)?
                    .iter()
                    .map(|rc| parse_bounds(Some(rc), &sp))
                    .collect::<Result<Vec<_>, _>>()?;
                Some(list)
            }
        };
        if scope.vars.contains_key(name) || scope.params.contains_key(name) {
            return Err(ModelError::DuplicateName(name.to_string()));
        }
        scope
            .params
            .insert(name.to_string(), b.parameter_with(name, rows, cols, sign, sparsity)?);
    }

    match (root.get("minimize"), root.get("maximize")) {
        (Some(e), None) => {
            b.minimize(parse_expr(e, &scope, "$.minimize")?);
        }
        (None, Some(e)) => {
            b.maximize(parse_expr(e, &scope, "$.maximize")?);
        }
        _ => return Err(schema("$", "exactly one of `minimize` or `maximize` is required")),
    }

    let cons = match root.get("constraints") {
        Some(v) => as_array(v, "$.constraints")?,
        None => &empty,
    };
    for (i, c) in cons.iter().enumerate() {
        let path = format!("$.constraints[{i}]");
        let o = as_object(c, &path)?;
        let op = get_str(o, "op", &path)?;
        let lhs = parse_expr(
            o.get("lhs").ok_or_else(|| schema(&path, "missing `lhs`"))?,
            &scope,
            &format!("{path}.lhs"),
        )?;
        let c = match op {
            "<=0" => Constraint::nonpos(lhs),
            "==0" => Constraint::eq_zero(lhs),
            ">=0" => Constraint::nonneg(lhs),
            other => return Err(schema(&path, format!("unknown constraint op `{other}`"))),
        };
        b.constrain(c);
    }
    b.build()
}

fn expr_to_json(e: &Expr) -> Value {
    match &e.op {
        Op::Const(m) => json!({ "const": matrix_to_json(m) }),
        Op::Var(v) => json!({ "var": v.name }),
        Op::Param(p) => json!({ "param": p.name }),
        op => {
            let args: Vec<Value> = e.args.iter().map(expr_to_json).collect();
            let mut obj = json!({ "op": op.name(), "args": args });
            if let Op::Index { rows, cols } = op {
                obj["rows"] = json!([rows.0, rows.1]);
                obj["cols"] = json!([cols.0, cols.1]);
            }
            obj
        }
    }
}

fn variable_to_json(v: &Arc<Variable>) -> Value {
    json!({ "name": v.name, "rows": v.shape.rows, "cols": v.shape.cols })
}

fn parameter_to_json(p: &Arc<Parameter>) -> Value {
    let mut obj = json!({ "name": p.name, "rows": p.shape.rows, "cols": p.shape.cols });
    match p.sign {
        Sign::Nonneg => obj["sign"] = json!("nonneg"),
        Sign::Nonpos => obj["sign"] = json!("nonpos"),
        Sign::Unknown => {}
    }
    if let Some(s) = &p.sparsity {
        obj["sparsity"] = json!(s.iter().map(|&(r, c)| [r, c]).collect::<Vec<_>>());
    }
    obj
}

/// Serialize a problem to the JSON file format.
pub fn print_problem(p: &Problem) -> String {
    let key = match p.sense {
        Sense::Minimize => "minimize",
        Sense::Maximize => "maximize",
    };
    let constraints: Vec<Value> = p
        .constraints
        .iter()
        .map(|c| match (c.kind, &c.expr.op) {
            (ConstraintKind::NonPos, Op::Neg) => json!({ "op": ">=0", "lhs": expr_to_json(&c.expr.args[0]) }),
            (ConstraintKind::NonPos, _) => json!({ "op": "<=0", "lhs": expr_to_json(&c.expr) }),
            (ConstraintKind::EqZero, _) => json!({ "op": "==0", "lhs": expr_to_json(&c.expr) }),
        })
        .collect();
    let mut doc = Map::new();
    doc.insert("name".into(), json!(p.name));
    doc.insert(
        "variables".into(),
        Value::Array(p.variables.iter().map(variable_to_json).collect()),
    );
    doc.insert(
        "parameters".into(),
        Value::Array(p.parameters.iter().map(parameter_to_json).collect()),
    );
    doc.insert(key.into(), expr_to_json(&p.objective));
    doc.insert("constraints".into(), Value::Array(constraints));
    serde_json::to_string_pretty(&Value::Object(doc)).expect("JSON values always serialize")
}

/// Parse a parameter-values file `{name: nested arrays}` against a problem.
pub fn parse_values(text: &str, problem: &Problem) -> Result<super::Values, ModelError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| ModelError::Syntax {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    let obj = as_object(&doc, "$")?;
    let mut out = super::Values::new();
    for (name, v) in obj {
        let p = problem
            .parameter(name)
            .ok_or_else(|| ModelError::Undeclared(name.clone()))?;
        let m = parse_matrix(v, &format!("$.{name}"))?;
        if m.nrows() != p.shape.rows || m.ncols() != p.shape.cols {
            return Err(ModelError::ValueShape {
                name: name.clone(),
                expected: p.shape,
                found: super::Shape {
                    rows: m.nrows(),
                    cols: m.ncols(),
                },
            });
        }
        out.insert(name.clone(), m);
    }
    Ok(out)
}
