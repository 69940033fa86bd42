use std::fmt::Write as _;

use serde::Serialize;

use crate::solver::INF_BOUND;

/// Element type of an emitted array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ElemKind {
    Float,
    Int,
    Byte,
}

/// A statically allocated array in the emitted sources.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StaticArray {
    pub name: String,
    pub file: String,
    pub kind: ElemKind,
    /// Emitted length (at least 1: C has no empty arrays).
    pub len: usize,
    pub elem_bytes: usize,
}

impl StaticArray {
    pub fn bytes(&self) -> usize {
        self.len * self.elem_bytes
    }
}

/// Literal for a float value; infinities become the 1e30 sentinel.
pub fn float_lit(v: f64) -> String {
    if v >= INF_BOUND {
        "1e30".to_string()
    } else if v <= -INF_BOUND {
        "-1e30".to_string()
    } else {
        format!("{v:e}")
    }
}

/// Accumulates one C source file and records its arrays.
pub struct CWriter {
    pub file: String,
    pub text: String,
    pub arrays: Vec<StaticArray>,
    float_bytes: usize,
}

const PER_LINE: usize = 8;

impl CWriter {
    pub fn new(file: impl Into<String>, float_bytes: usize) -> CWriter {
        CWriter {
            file: file.into(),
            text: String::new(),
            arrays: Vec::new(),
            float_bytes,
        }
    }

    pub fn line(&mut self, s: &str) {
        self.text.push_str(s);
        self.text.push('\n');
    }

    pub fn blank(&mut self) {
        self.text.push('\n');
    }

    fn array(&mut self, konst: bool, kind: ElemKind, name: &str, items: Vec<String>) {
        let ty = match kind {
            ElemKind::Float => "qpg_float",
            ElemKind::Int => "int",
            ElemKind::Byte => "unsigned char",
        };
        let elem_bytes = match kind {
            ElemKind::Float => self.float_bytes,
            ElemKind::Int => 4,
            ElemKind::Byte => 1,
        };
        let items = if items.is_empty() { vec!["0".to_string()] } else { items };
        let qual = if konst { "const " } else { "" };
        let _ = writeln!(self.text, "{qual}{ty} {name}[{}] = {{", items.len());
        for chunk in items.chunks(PER_LINE) {
            let _ = writeln!(self.text, "    {},", chunk.join(", "));
        }
        self.text.push_str("};\n");
        self.arrays.push(StaticArray {
            name: name.to_string(),
            file: self.file.clone(),
            kind,
            len: items.len(),
            elem_bytes,
        });
    }

    pub fn floats(&mut self, konst: bool, name: &str, vals: &[f64]) {
        self.array(konst, ElemKind::Float, name, vals.iter().map(|&v| float_lit(v)).collect());
    }

    pub fn ints(&mut self, konst: bool, name: &str, vals: &[i64]) {
        self.array(konst, ElemKind::Int, name, vals.iter().map(|v| v.to_string()).collect());
    }

    /// Zero-initialized mutable array of the given length.
    pub fn zeros(&mut self, kind: ElemKind, name: &str, len: usize) {
        let ty = match kind {
            ElemKind::Float => "qpg_float",
            ElemKind::Int => "int",
            ElemKind::Byte => "unsigned char",
        };
        let elem_bytes = match kind {
            ElemKind::Float => self.float_bytes,
            ElemKind::Int => 4,
            ElemKind::Byte => 1,
        };
        let len = len.max(1);
        let _ = writeln!(self.text, "{ty} {name}[{len}];");
        self.arrays.push(StaticArray {
            name: name.to_string(),
            file: self.file.clone(),
            kind,
            len,
            elem_bytes,
        });
    }
}

pub fn usize_vec(v: &[usize]) -> Vec<i64> {
    v.iter().map(|&x| x as i64).collect()
}
