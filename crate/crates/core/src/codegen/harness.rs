//! Host-side compile-and-compare for generated bundles.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use super::{CodegenError, FileRole, SourceBundle};

pub const COMPILE_FLAGS: &[&str] = &["-std=c99", "-O2", "-Wall", "-Wextra", "-Werror", "-pedantic"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessFailure {
    pub step: usize,
    pub field: String,
    pub index: usize,
    pub expected: f64,
    pub got: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessReport {
    pub cases: usize,
    pub failed: usize,
    pub factorizations: usize,
    pub failures: Vec<HarnessFailure>,
    #[serde(default)]
    pub exit_ok: bool,
    #[serde(default)]
    pub object_bytes: Vec<(String, u64)>,
}

impl HarnessReport {
    pub fn passed(&self) -> bool {
        self.exit_ok && self.failed == 0
    }
}

fn c_sources(dir: &Path) -> Result<Vec<PathBuf>, CodegenError> {
    let mut srcs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "c"))
        .collect();
    srcs.sort();
    Ok(srcs)
}

fn run(cmd: &mut Command) -> Result<std::process::Output, CodegenError> {
    let out = cmd
        .output()
        .map_err(|e| CodegenError::Harness(format!("cannot run {:?}: {e}", cmd.get_program())))?;
    Ok(out)
}

/// Compile every `.c` file of a written bundle (which must contain fixtures)
/// into one executable, run it and parse its JSON report.
pub fn run_harness(dir: &Path, cc: &str) -> Result<HarnessReport, CodegenError> {
    let srcs = c_sources(dir)?;
    if !srcs.iter().any(|p| p.to_string_lossy().ends_with("_fixtures.c")) {
        return Err(CodegenError::MissingFixtures);
    }
    let scratch = tempfile::tempdir()?;
    let exe = scratch.path().join("harness.bin");
    let out = run(Command::new(cc)
        .args(COMPILE_FLAGS)
        .arg("-I")
        .arg(dir)
        .args(&srcs)
        .arg("-o")
        .arg(&exe))?;
    if !out.status.success() {
        return Err(CodegenError::Harness(format!(
            "compile failed:\n{}",
            String::from_utf8_lossy(&out.stderr)
        )));
    }
    let out = run(&mut Command::new(&exe))?;
    let stdout = String::from_utf8_lossy(&out.stdout);
    let mut report: HarnessReport = serde_json::from_str(stdout.trim())
        .map_err(|e| CodegenError::Harness(format!("bad report ({e}): {stdout}")))?;
    report.exit_ok = out.status.success();
    let mut sizes = Vec::new();
    for src in srcs.iter().filter(|p| !p.to_string_lossy().ends_with("_main.c")) {
        let Some(stem) = src.file_stem() else { continue };
        let obj = scratch.path().join(stem).with_extension("o");
        let o = run(Command::new(cc).args(COMPILE_FLAGS).arg("-I").arg(dir).arg("-c").arg(src).arg("-o").arg(&obj))?;
        if o.status.success() {
            let name = obj.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            sizes.push((name, std::fs::metadata(&obj)?.len()));
        }
    }
    report.object_bytes = sizes;
    Ok(report)
}

/// Object file size of every non-example, non-fixture translation unit.
pub(crate) fn compile_objects(bundle: &SourceBundle, cc: &str) -> Result<Vec<(String, u64)>, CodegenError> {
    let dir = tempfile::tempdir()?;
    bundle.write_to(dir.path())?;
    let mut sizes = Vec::new();
    for f in &bundle.files {
        if !f.name.ends_with(".c") || matches!(f.role, FileRole::Example | FileRole::Fixtures) {
            continue;
        }
        let obj = dir.path().join(f.name.replace(".c", ".o"));
        let out = run(Command::new(cc)
            .args(COMPILE_FLAGS)
            .arg("-I")
            .arg(dir.path())
            .arg("-c")
            .arg(dir.path().join(&f.name))
            .arg("-o")
            .arg(&obj))?;
        if !out.status.success() {
            return Err(CodegenError::Harness(format!(
                "{} failed to compile:\n{}",
                f.name,
                String::from_utf8_lossy(&out.stderr)
            )));
        }
        sizes.push((f.name.replace(".c", ".o"), std::fs::metadata(&obj)?.len()));
    }
    Ok(sizes)
}
