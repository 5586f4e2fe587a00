#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const STAGES: [&str; 10] =
    ["build-kb", "embed", "build-index", "retrieve", "elicit", "train", "predict", "evaluate", "sweep", "report"];

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Fresh copy of the bundled fixture inputs and config.
pub fn fixture_copy() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for entry in std::fs::read_dir(fixtures_dir()).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_file() {
            std::fs::copy(entry.path(), dir.path().join(entry.file_name())).unwrap();
        }
    }
    dir
}

pub fn kat(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kat"))
        .args(args)
        .arg("--config")
        .arg(dir.join("kat.toml"))
        .env("RUST_LOG", "warn")
        .env_remove("KAT_LM_API_KEY")
        .output()
        .unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Runs every stage in order with the same overrides; panics on failure.
pub fn run_pipeline(dir: &Path, overrides: &[&str]) {
    for stage in STAGES {
        let mut args = vec![stage];
        for o in overrides {
            args.extend(["--set", o]);
        }
        let out = kat(dir, &args);
        assert!(out.status.success(), "kat {stage} failed: {}", stderr(&out));
    }
}
