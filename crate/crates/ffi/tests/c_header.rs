//! Builds a C program against the generated header and the static library.

use std::path::{Path, PathBuf};
use std::process::Command;

use quomerge::bundle::{read_bundle, write_bundle};
use quomerge::synth::{synth_family, SynthConfig};

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn static_lib() -> PathBuf {
    // Integration tests run from target/<profile>/deps, next to the library.
    let exe = std::env::current_exe().unwrap();
    let deps = exe.parent().unwrap();
    [deps.join("libquomerge_ffi.a"), deps.parent().unwrap().join("libquomerge_ffi.a")]
        .into_iter()
        .find(|p| p.exists())
        .expect("libquomerge_ffi.a not found next to the test binary")
}

fn cc(args: &[&std::ffi::OsStr]) {
    let out = Command::new("cc").args(args).output().expect("cc is required for this test");
    assert!(out.status.success(), "cc failed:\n{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn header_parses_as_c_and_cpp() {
    let header = crate_dir().join("include/quomerge.h");
    for lang in ["c", "c++"] {
        cc(&[
            "-fsyntax-only".as_ref(),
            "-Wall".as_ref(),
            "-Werror".as_ref(),
            "-x".as_ref(),
            lang.as_ref(),
            header.as_os_str(),
        ]);
    }
}

#[test]
fn c_program_merges_bundles() {
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let include = crate_dir().join("include");
    let src = crate_dir().join("tests/c/smoke.c");
    let lib = static_lib();
    cc(&[
        "-std=c99".as_ref(),
        "-Wall".as_ref(),
        "-Werror".as_ref(),
        "-I".as_ref(),
        include.as_os_str(),
        src.as_os_str(),
        lib.as_os_str(),
        "-lpthread".as_ref(),
        "-ldl".as_ref(),
        "-lm".as_ref(),
        "-o".as_ref(),
        exe.as_os_str(),
    ]);

    let bundles = synth_family(&SynthConfig::uniform(2, 10, 3, 2, 5)).unwrap();
    let paths: Vec<_> = bundles
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let p = dir.path().join(format!("in{i}"));
            write_bundle(b, &p).unwrap();
            p
        })
        .collect();
    let merged = dir.path().join("merged");
    let out = Command::new(&exe).arg(&paths[0]).arg(&paths[1]).arg(&merged).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}\n{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("layer0 ") && stdout.contains("layer1 "), "{stdout}");
    assert!(stdout.contains(env!("CARGO_PKG_VERSION")));

    let read = read_bundle(Path::new(&merged)).unwrap();
    assert_eq!(read.layers.len(), 2);
    assert_eq!(read.metadata.get("merge.mode").map(String::as_str), Some("geodesic-cayley"));
}
