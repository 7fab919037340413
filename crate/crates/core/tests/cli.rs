use std::fs;
use std::path::Path;
use std::process::Command;

use bplc::cli::{run, EXIT_DATA, EXIT_OK, EXIT_USAGE};
use serde_json::Value;

const PLAN: &str = r#"{"tensors": [
  {"name": "mlp.w", "dtype": "bf16", "seed": 42, "kind": "gaussian_weights", "count": 50000, "sigma": 0.05},
  {"name": "h.w", "dtype": "fp16", "seed": 3, "kind": "gaussian_weights", "count": 20000, "sigma": 0.1},
  {"name": "kv.k", "dtype": "bf16", "seed": 7, "kind": "channel_correlated_kv",
   "tokens": 32, "channels": 2048, "sigma_b": 1.0, "sigma_eps": 0.01}
]}"#;

fn bplc(args: &[&str]) -> i32 {
    run(std::iter::once("bplc").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn corpus(dir: &Path) -> std::path::PathBuf {
    let plan = dir.join("plan.json");
    fs::write(&plan, PLAN).unwrap();
    let out = dir.join("corpus");
    assert_eq!(bplc(&["synth", p(&plan), "--out", p(&out)]), EXIT_OK);
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_is_deterministic_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    let a = corpus(dir.path());
    let again = dir.path().join("again");
    assert_eq!(
        bplc(&[
            "synth",
            p(&dir.path().join("plan.json")),
            "--out",
            p(&again)
        ]),
        EXIT_OK
    );
    for f in ["mlp.w.bin", "h.w.bin", "kv.k.bin", "manifest.json"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(again.join(f)).unwrap(),
            "{f}"
        );
    }
    assert_eq!(
        fs::metadata(a.join("kv.k.bin")).unwrap().len(),
        32 * 2048 * 2
    );
    let manifest = json(&a.join("manifest.json"));
    assert_eq!(manifest["tensors"].as_array().unwrap().len(), 3);
}

#[test]
fn compress_decompress_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let manifest = c.join("manifest.json");
    for algo in ["none", "lz4", "zstd"] {
        let container = dir.path().join(format!("{algo}.bplc"));
        assert_eq!(
            bplc(&[
                "compress",
                p(&manifest),
                "--out",
                p(&container),
                "--algo",
                algo,
                "--superblock",
                "8192"
            ]),
            EXIT_OK
        );
        let out = dir.path().join(format!("dec-{algo}"));
        assert_eq!(
            bplc(&["decompress", p(&container), "--out", p(&out)]),
            EXIT_OK
        );
        for f in ["mlp.w.bin", "h.w.bin", "kv.k.bin"] {
            assert_eq!(
                fs::read(c.join(f)).unwrap(),
                fs::read(out.join(f)).unwrap(),
                "{algo} {f}"
            );
        }
    }
}

#[test]
fn uncompressed_container_adds_only_headers() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let container = dir.path().join("c.bplc");
    assert_eq!(
        bplc(&[
            "compress",
            p(&c.join("manifest.json")),
            "--out",
            p(&container),
            "--algo",
            "none",
            "--superblock",
            "8192"
        ]),
        EXIT_OK
    );
    let size = fs::metadata(&container).unwrap().len();
    let original: u64 = 50000 * 2 + 20000 * 2 + 32 * 2048 * 2;
    // file header, three directory entries, superblock headers and base exponents
    let directory =
        (2 + 5 + 1 + 1 + 8 + 4 + 8) + (2 + 3 + 1 + 1 + 8 + 4 + 8) + (2 + 4 + 1 + 1 + 8 + 6 + 4 + 8);
    let superblocks = 7 + 3 + 2;
    let expected = 18 + directory + superblocks * (9 + 4 * 16) + 2 * 2048;
    assert_eq!(size, original + expected as u64);
}

#[test]
fn prefix_decode_zeroes_low_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let container = dir.path().join("c.bplc");
    assert_eq!(
        bplc(&[
            "compress",
            p(&c.join("manifest.json")),
            "--out",
            p(&container)
        ]),
        EXIT_OK
    );
    let out = dir.path().join("dec");
    assert_eq!(
        bplc(&[
            "decompress",
            p(&container),
            "--out",
            p(&out),
            "--planes",
            "8",
            "--tensor",
            "h.w"
        ]),
        EXIT_OK
    );
    let orig = fs::read(c.join("h.w.bin")).unwrap();
    let got = fs::read(out.join("h.w.bin")).unwrap();
    assert!(!out.join("mlp.w.bin").exists());
    for (i, (a, b)) in orig.chunks(2).zip(got.chunks(2)).enumerate() {
        assert_eq!(b[0], 0, "word {i}");
        assert_eq!(b[1], a[1], "word {i}");
    }
}

#[test]
fn stats_files_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let container = dir.path().join("c.bplc");
    assert_eq!(
        bplc(&[
            "compress",
            p(&c.join("manifest.json")),
            "--out",
            p(&container)
        ]),
        EXIT_OK
    );
    let prefix = dir.path().join("stats");
    assert_eq!(
        bplc(&["stats", p(&container), "--out", p(&prefix)]),
        EXIT_OK
    );
    let report = json(&dir.path().join("stats.json"));
    assert_eq!(report["schema_version"], 1);
    for t in report["tensors"].as_array().unwrap() {
        let orig = t["original_bytes"].as_f64().unwrap();
        let comp = t["stored_bytes"].as_f64().unwrap();
        assert_eq!(t["ratio"].as_f64().unwrap(), orig / comp);
        let planes: f64 = t["planes"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| p["stored_bytes"].as_f64().unwrap())
            .sum();
        assert_eq!(planes + t["overhead_bytes"].as_f64().unwrap(), comp);
    }
    let csv = fs::read_to_string(dir.path().join("stats.csv")).unwrap();
    assert!(csv.starts_with("schema_version,"));

    let cmp = dir.path().join("cmp");
    assert_eq!(
        bplc(&[
            "stats",
            "--manifest",
            p(&c.join("manifest.json")),
            "--out",
            p(&cmp)
        ]),
        EXIT_OK
    );
    let report = json(&dir.path().join("cmp.json"));
    let variants: Vec<&str> = report["aggregates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["variant"].as_str().unwrap())
        .collect();
    assert_eq!(variants, ["raw", "bitplane", "kv"]);
    let kv_rows: Vec<&Value> = report["tensors"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|t| t["tensor"] == "kv.k")
        .collect();
    assert_eq!(kv_rows.len(), 3);
}

fn simulate(dir: &Path, container: &Path, schedule: &str, tag: &str) -> Value {
    let sched = dir.join(format!("{tag}.sched.json"));
    fs::write(&sched, schedule).unwrap();
    let prefix = dir.join(tag);
    assert_eq!(
        bplc(&[
            "simulate",
            p(container),
            "--schedule",
            p(&sched),
            "--out",
            p(&prefix)
        ]),
        EXIT_OK
    );
    json(&dir.join(format!("{tag}.json")))
}

#[test]
fn simulate_reports() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let none = dir.path().join("none.bplc");
    let zstd = dir.path().join("zstd.bplc");
    let manifest = c.join("manifest.json");
    assert_eq!(
        bplc(&[
            "compress",
            p(&manifest),
            "--out",
            p(&none),
            "--algo",
            "none"
        ]),
        EXIT_OK
    );
    assert_eq!(
        bplc(&["compress", p(&manifest), "--out", p(&zstd)]),
        EXIT_OK
    );

    let full = simulate(dir.path(), &none, r#"{"default": "full"}"#, "full");
    let pb = full["bitplane"]["bytes_fetched"].as_i64().unwrap();
    let tb = full["byte_level"]["bytes_fetched"].as_i64().unwrap();
    // the two kv groups carry 2048 base exponents each; headers are identical
    assert_eq!(pb - tb, 2 * 2048);

    let mut last = i64::MAX;
    for k in [16, 12, 8, 4] {
        let r = simulate(
            dir.path(),
            &none,
            &format!(r#"{{"default": {k}}}"#),
            &format!("k{k}"),
        );
        let b = r["bitplane"]["bytes_fetched"].as_i64().unwrap();
        assert!(b < last);
        last = b;
    }

    let fp8 = simulate(
        dir.path(),
        &zstd,
        r#"{"default": "full", "rules": [{"pattern": "mlp.*", "precision": "fp8"}, {"pattern": "kv.?", "precision": "fp8"}]}"#,
        "fp8",
    );
    assert!(
        fp8["bitplane"]["energy_joules"].as_f64().unwrap()
            < fp8["byte_level"]["energy_joules"].as_f64().unwrap()
    );
    let csv = fs::read_to_string(dir.path().join("fp8.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 4);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let manifest = c.join("manifest.json");
    let container = dir.path().join("c.bplc");
    assert_eq!(bplc(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(bplc(&["compress", p(&manifest)]), EXIT_USAGE);
    assert_eq!(
        bplc(&[
            "compress",
            p(&manifest),
            "--out",
            p(&container),
            "--superblock",
            "1000"
        ]),
        EXIT_USAGE
    );
    assert_eq!(
        bplc(&[
            "compress",
            p(&manifest),
            "--out",
            p(&container),
            "--group-tokens",
            "0"
        ]),
        EXIT_USAGE
    );
    assert_eq!(
        bplc(&["compress", p(&manifest), "--out", p(&container)]),
        EXIT_OK
    );
    assert_eq!(
        bplc(&[
            "decompress",
            p(&container),
            "--out",
            p(&dir.path().join("x")),
            "--tensor",
            "nope"
        ]),
        EXIT_USAGE
    );
    assert_eq!(
        bplc(&[
            "decompress",
            p(&container),
            "--out",
            p(&dir.path().join("x")),
            "--planes",
            "fp4"
        ]),
        EXIT_USAGE
    );

    let bytes = fs::read(&container).unwrap();
    let truncated = dir.path().join("t.bplc");
    fs::write(&truncated, &bytes[..bytes.len() - 10]).unwrap();
    assert_eq!(bplc(&["stats", p(&truncated)]), EXIT_DATA);
    let mut flipped = bytes.clone();
    flipped[0] = b'X';
    fs::write(&truncated, &flipped).unwrap();
    assert_eq!(bplc(&["stats", p(&truncated)]), EXIT_DATA);

    fs::write(c.join("h.w.bin"), [0u8; 10]).unwrap();
    assert_eq!(
        bplc(&["compress", p(&manifest), "--out", p(&container)]),
        EXIT_DATA
    );
}

#[test]
fn binary_exit_status() {
    let exe = env!("CARGO_BIN_EXE_bplc");
    let status = Command::new(exe).arg("--bogus").output().unwrap().status;
    assert_eq!(status.code(), Some(EXIT_USAGE));
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.bplc");
    fs::write(&junk, b"not a container").unwrap();
    let status = Command::new(exe)
        .args(["stats", p(&junk)])
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(EXIT_DATA));
    let out = Command::new(exe).arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_OK));
}
