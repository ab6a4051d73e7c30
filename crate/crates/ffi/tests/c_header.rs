//! Compiles a C program against the generated header and the static library.

use std::path::PathBuf;
use std::process::Command;

fn static_lib() -> PathBuf {
    // target/<profile>/deps/c_header-… → target/<profile>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().join("libqpforce_ffi.a")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/qpforce.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|l| l.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 10);
    for f in exports {
        assert!(h.contains(&format!("{f}(")), "{f} missing from header");
    }
}

#[test]
fn c_program_links_and_runs() {
    let lib = static_lib();
    assert!(lib.exists(), "{lib:?}");
    let dir = env!("CARGO_MANIFEST_DIR");
    let exe = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("qpforce_smoke");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(format!("{dir}/include"))
        .arg(format!("{dir}/tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{:?} {stdout}", out.status);
    // ρ = 1/4 = −(−1 + 0·ω)/4, and a rigid map has no cocycle
    assert!(stdout.starts_with("rho 0.250000000000 relation -1 0 4 lyapunov_status 4"), "{stdout}");
}
