//! Shared locations and reporting for the acceptance checks.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use saarthi_core::config::RunConfig;

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn demo_dir() -> PathBuf {
    repo_root().join("demo/fifo")
}

pub fn core_fixtures() -> PathBuf {
    repo_root().join("crates/core/tests/fixtures")
}

/// The bundled FIFO demo, writing runs under `out`.
pub fn demo_config(out: &Path) -> RunConfig {
    let d = demo_dir();
    RunConfig {
        spec_path: d.join("spec.md"),
        rtl_paths: vec![d.join("fifo.sv")],
        out_dir: out.to_path_buf(),
        cassette: Some(d.join("cassette.json")),
        prover_fixture: Some(d.join("prover.json")),
        ..RunConfig::default()
    }
}

/// The `saarthi` binary of this workspace, building it if needed.
pub fn saarthi_bin() -> PathBuf {
    let exe = std::env::current_exe().expect("test executable path");
    let profile_dir = exe
        .parent()
        .and_then(Path::parent)
        .expect("test executables live in <target>/<profile>/deps");
    let bin = profile_dir.join(format!("saarthi{}", std::env::consts::EXE_SUFFIX));
    if !bin.is_file() {
        let status = Command::new(env!("CARGO"))
            .args(["build", "-p", "saarthi-cli", "--bin", "saarthi"])
            .current_dir(repo_root())
            .status()
            .expect("cargo runs");
        assert!(status.success(), "building the saarthi binary failed");
    }
    bin
}

/// Prints `PASS: name` or `FAIL: name: detail` straight to stdout, past the
/// test harness's output capture, then fails the test on FAIL.
pub fn verdict(name: &str, failures: &[String]) {
    let line = if failures.is_empty() {
        format!("PASS: {name}\n")
    } else {
        format!("FAIL: {name}: {}\n", failures.join("; "))
    };
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(failures.is_empty(), "{}", line.trim_end());
}

/// Collects failed checks of one criterion.
#[derive(Default)]
pub struct Checks(pub Vec<String>);

impl Checks {
    pub fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.0.push(what());
        }
    }

    pub fn eq<T: PartialEq + std::fmt::Debug>(&mut self, what: &str, got: T, want: T) {
        if got != want {
            self.0.push(format!("{what}: got {got:?}, want {want:?}"));
        }
    }

    pub fn finish(self, name: &str) {
        verdict(name, &self.0);
    }
}
