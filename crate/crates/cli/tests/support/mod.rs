//! Helpers for driving the `thzcabin` binary from tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
}

pub fn thzcabin<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_thzcabin"))
        .args(args)
        .output()
        .expect("spawn thzcabin")
}

/// Runs and panics with stderr unless the exit status is 0.
pub fn ok(args: &[&str]) -> Output {
    let out = thzcabin(args);
    assert!(
        out.status.success(),
        "thzcabin {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn without_version(text: &str) -> String {
    text.lines()
        .filter(|l| !l.contains("# version:"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every subcommand once, chained where one feeds the next. Returns each
/// artifact by file name with version lines removed.
pub fn pipeline(dir: &Path, workers: usize) -> BTreeMap<String, String> {
    std::fs::create_dir_all(dir).unwrap();
    let f = |n: &str| dir.join(n);
    let scene = fixture("cabin.json");
    let config = fixture("cabin_config.json");
    let w = workers.to_string();
    let base = ["--config", s(&config), "--workers", &w];
    let run = |args: &[&str]| {
        let all: Vec<&str> = base.iter().copied().chain(args.iter().copied()).collect();
        ok(&all)
    };
    run(&[
        "trace",
        "--scene",
        s(&scene),
        "--tx",
        "tx1",
        "--rx",
        "rx2",
        "--out",
        s(&f("trace.csv")),
    ]);
    run(&[
        "synth",
        "--paths",
        s(&f("trace.csv")),
        "--out",
        s(&f("cfr.csv")),
    ]);
    run(&[
        "extract",
        "--cfr",
        s(&f("cfr.csv")),
        "--window",
        "hann",
        "--out",
        s(&f("extract.csv")),
    ]);
    run(&[
        "fit",
        "--measured",
        s(&f("extract.csv")),
        "--scene",
        s(&scene),
        "--tx",
        "tx1",
        "--rx",
        "rx2",
        "--realize",
        "4",
        "--seed",
        "5",
        "--realization",
        s(&f("realization.csv")),
        "--out",
        s(&f("model.json")),
    ]);
    run(&[
        "identify",
        "--model",
        s(&f("model.json")),
        "--materials",
        s(&fixture("material_id.csv")),
        "--out",
        s(&f("identify.csv")),
    ]);
    run(&[
        "covermap",
        "--scene",
        s(&scene),
        "--tx",
        "tx4,tx7",
        "--res",
        "0.1",
        "--out",
        s(&f("map.csv")),
    ]);
    run(&[
        "plan",
        "--scene",
        s(&scene),
        "--tx",
        "tx4,tx7",
        "--summary",
        s(&f("summary.json")),
        "--out",
        s(&f("curve.csv")),
    ]);
    run(&[
        "optimize",
        "--scene",
        s(&scene),
        "--candidates",
        "tx1,tx2,tx3,tx4",
        "--max-iter",
        "2",
        "--map-out",
        s(&f("opt_map.csv")),
        "--map-res",
        "0.1",
        "--out",
        s(&f("opt.json")),
    ]);
    let mut artifacts = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        let text = std::fs::read_to_string(&p).unwrap();
        artifacts.insert(
            p.file_name().unwrap().to_string_lossy().into_owned(),
            without_version(&text),
        );
    }
    artifacts
}
