//! Helpers shared by the acceptance checks.

use std::path::PathBuf;
use std::process::Command;

/// Path of the `apmimo` binary next to the running test executable, building
/// it first if this test target was run on its own.
pub fn apmimo_bin() -> PathBuf {
    let exe = std::env::current_exe().expect("test executable path");
    let dir = exe.parent().and_then(|d| d.parent()).expect("target directory");
    let bin = dir.join(format!("apmimo{}", std::env::consts::EXE_SUFFIX));
    if !bin.exists() {
        let cargo = std::env::var("CARGO").unwrap_or_else(|_| "cargo".into());
        let mut cmd = Command::new(cargo);
        cmd.args(["build", "-p", "apmimo", "--bin", "apmimo"]);
        if dir.file_name().is_some_and(|n| n == "release") {
            cmd.arg("--release");
        }
        let status = cmd.status().expect("cargo runs");
        assert!(status.success(), "building apmimo failed");
    }
    bin
}
