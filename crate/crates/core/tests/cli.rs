//! End-to-end runs of the `salr` binary.

use std::path::Path;
use std::process::{Command, Output};

use salr::codec::{decode, read_container};
use salr::linalg::{read_dmat, DmatDtype};
use salr::prune::{build_mask, PruneConfig, PruneMethod};

fn salr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_salr")).args(args).env_remove("SALR_SEED").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = salr(args);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn value<'a>(report: &'a str, key: &str) -> &'a str {
    report
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {key} in\n{report}"))
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_owned()
}

#[test]
fn gen_prune_encode_decode_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let w = p(dir.path(), "w.dmat");
    ok(&["--seed", "11", "--out", &w, "gen", "--rows", "37", "--cols", "29"]);
    for method in ["static", "dynamic-w0", "dynamic-u"] {
        let pruned = p(dir.path(), "p.dmat");
        let c = p(dir.path(), "c.salr");
        let back = p(dir.path(), "d.dmat");
        let common = ["--input", &w, "--sparsity", "0.6", "--method", method];
        ok(&[&["--seed", "3", "--out", &pruned, "prune"][..], &common].concat());
        ok(&[&["--seed", "3", "--out", &c, "encode"][..], &common].concat());
        ok(&["--out", &back, "decode", "--input", &c]);
        let (a, _) = read_dmat(&pruned).unwrap();
        let (b, dtype) = read_dmat(&back).unwrap();
        assert_eq!(dtype, DmatDtype::F32);
        assert_eq!(a, b, "{method}");
    }
}

#[test]
fn static_prune_matches_library_mask() {
    let dir = tempfile::tempdir().unwrap();
    let w = p(dir.path(), "w.dmat");
    let pruned = p(dir.path(), "p.dmat");
    ok(&["--out", &w, "gen", "--rows", "16", "--cols", "24", "--dtype", "f64"]);
    let report = ok(&["--out", &pruned, "prune", "--input", &w, "--sparsity", "0.25"]);
    assert_eq!(value(&report, "kept"), "288");
    let (orig, _) = read_dmat(&w).unwrap();
    let mask = build_mask(&orig, None, &PruneConfig::new(0.25, PruneMethod::StaticOnW0)).unwrap();
    assert_eq!(read_dmat(&pruned).unwrap().0, mask.apply(&orig).unwrap());
}

#[test]
fn outputs_are_deterministic_given_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str, seed: &str| {
        let w = p(dir.path(), &format!("w{tag}.dmat"));
        let c = p(dir.path(), &format!("c{tag}.salr"));
        ok(&["--seed", seed, "--out", &w, "gen", "--rows", "48", "--cols", "40"]);
        let report = ok(&[
            "--seed",
            seed,
            "--out",
            &c,
            "compress",
            "--input",
            &w,
            "--sparsity",
            "0.5",
            "--rank",
            "4",
            "--lora-rank",
            "2",
            "--method",
            "dynamic-u",
        ]);
        let strip = |r: &str| r.lines().filter(|l| !l.starts_with("out=")).collect::<Vec<_>>().join("\n");
        (std::fs::read(&w).unwrap(), std::fs::read(&c).unwrap(), strip(&report))
    };
    let a = run("a", "5");
    let b = run("b", "5");
    let c = run("c", "6");
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let a = p(dir.path(), "a.dmat");
    let b = p(dir.path(), "b.dmat");
    ok(&["--seed", "42", "--out", &a, "gen", "--rows", "3", "--cols", "3"]);
    let out = Command::new(env!("CARGO_BIN_EXE_salr"))
        .args(["--out", &b, "gen", "--rows", "3", "--cols", "3"])
        .env("SALR_SEED", "42")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn exit_codes_follow_error_classes() {
    let dir = tempfile::tempdir().unwrap();
    let w = p(dir.path(), "w.dmat");
    ok(&["--out", &w, "gen", "--rows", "8", "--cols", "8"]);
    let c = p(dir.path(), "c.salr");

    let out = salr(&["--out", &c, "compress", "--input", &w, "--sparsity", "1.0", "--rank", "2"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--sparsity"));

    assert_eq!(salr(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(salr(&["verify", "--theorem", "5"]).status.code(), Some(2));
    assert_eq!(salr(&["gen", "--rows", "2", "--cols", "2"]).status.code(), Some(2));
    assert_eq!(salr(&["--out", &c, "prune", "--input", &w, "--method", "magic"]).status.code(), Some(2));
    assert_eq!(salr(&["--help"]).status.code(), Some(0));

    assert_eq!(salr(&["stats", "--input", &w]).status.code(), Some(3));
    assert_eq!(salr(&["stats", "--input", &p(dir.path(), "missing.salr")]).status.code(), Some(3));
    assert_eq!(salr(&["--out", &c, "compress", "--input", &w, "--rank", "9"]).status.code(), Some(4));
    assert_eq!(salr(&["--out", &c, "prune", "--input", &w, "--method", "nm:2:3"]).status.code(), Some(4));
}

#[test]
fn compress_at_zero_sparsity_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let w = p(dir.path(), "w.dmat");
    let c = p(dir.path(), "c.salr");
    ok(&["--out", &w, "gen", "--rows", "20", "--cols", "12"]);
    let report = ok(&["--out", &c, "compress", "--input", &w, "--sparsity", "0", "--rank", "3"]);
    assert_eq!(value(&report, "per_entry_error"), "0.000000000000");
    let (s, adapters) = read_container(&c).unwrap();
    assert_eq!(decode(&s), read_dmat(&w).unwrap().0);
    assert_eq!(adapters.len(), 1);
    assert_eq!(adapters[0].delta().count_nonzero(), 0);
}

#[test]
fn stats_sizes_add_up_and_merge_applies_adapters() {
    let dir = tempfile::tempdir().unwrap();
    let w = p(dir.path(), "w.dmat");
    let c = p(dir.path(), "c.salr");
    let merged = p(dir.path(), "m.dmat");
    ok(&["--out", &w, "gen", "--rows", "30", "--cols", "21"]);
    ok(&["--out", &c, "compress", "--input", &w, "--sparsity", "0.5", "--rank", "21", "--dtype", "f16"]);
    let stats = ok(&["stats", "--input", &c]);
    let n = |k: &str| value(&stats, k).parse::<usize>().unwrap();
    assert_eq!(n("header_bytes") + n("bitmap_bytes") + n("values_bytes") + n("adapters_bytes"), n("file_bytes"));
    assert_eq!(value(&stats, "dtype"), "f16");
    ok(&["--out", &merged, "decode", "--input", &c, "--merge"]);
    let (m, dtype) = read_dmat(&merged).unwrap();
    assert_eq!(dtype, DmatDtype::F64);
    // A full-rank residual restores the original up to f32 storage of the factors.
    assert!(m.rel_frobenius_diff(&read_dmat(&w).unwrap().0) < 1e-5);
}

#[test]
fn spectrum_writes_cumulative_energy_csv() {
    let dir = tempfile::tempdir().unwrap();
    let w = p(dir.path(), "w.dmat");
    let csv = p(dir.path(), "s.csv");
    ok(&["--out", &w, "gen", "--rows", "10", "--cols", "6"]);
    let report = ok(&["--out", &csv, "spectrum", "--input", &w]);
    assert_eq!(value(&report, "q"), "6");
    let text = std::fs::read_to_string(&csv).unwrap();
    let last = text.lines().last().unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!((last.split(',').nth(1).unwrap().parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn verify_reports_and_sets_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let csv = p(dir.path(), "t3.csv");
    let out = ok(&["verify", "--theorem", "3", "--trials", "10", "--csv", &csv]);
    assert_eq!(value(&out, "passed"), "true");
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("trial,"));
    assert_eq!(value(&ok(&["verify", "--theorem", "4", "--trials", "3"]), "failures"), "0");

    // The claimed ordering does not hold at high sparsity; the run says so.
    let out = salr(&["verify", "--theorem", "2", "--samples", "20000", "--grid", "9"]);
    assert_eq!(out.status.code(), Some(5));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("ordering"), "{stderr}");
    assert_eq!(value(&String::from_utf8_lossy(&out.stdout), "passed"), "false");
}

#[test]
fn bench_reports_equal_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let w = p(dir.path(), "w.dmat");
    let c = p(dir.path(), "c.salr");
    ok(&["--out", &w, "gen", "--rows", "64", "--cols", "64"]);
    ok(&["--out", &c, "encode", "--input", &w, "--sparsity", "0.5"]);
    let report = ok(&["bench", "--input", &c, "--batch", "4", "--tile-rows", "16", "--ring", "2", "--repeats", "3"]);
    assert_eq!(value(&report, "outputs_equal"), "true");
    assert!(value(&report, "speedup").parse::<f64>().unwrap() > 0.0);
    assert_eq!(salr(&["bench", "--input", &c, "--ring", "1"]).status.code(), Some(4));
}
