//! Drives the command-line entry point end to end on small files.

use std::path::{Path, PathBuf};

use evdn::cli::run;
use evdn::events::{read_events, Format};
use serde_json::Value;

fn evdn(args: &[&str]) -> i32 {
    run(std::iter::once("evdn").chain(args.iter().copied()))
}

fn p(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn manifest(out: &Path) -> Value {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    serde_json::from_str(&std::fs::read_to_string(name).unwrap()).unwrap()
}

const SMALL: [&str; 6] = [
    "--set",
    "width=24",
    "--set",
    "height=24",
    "--set",
    "duration_s=0.1",
];

#[test]
fn generate_denoise_eval_with_classical_filter() {
    let dir = tempfile::tempdir().unwrap();
    let events = p(dir.path(), "scene.evdn");
    let mut args = vec!["generate", "--seed", "3", "--out", s(&events)];
    args.extend(SMALL);
    assert_eq!(evdn(&args), 0);
    let stream = read_events(&events, Format::Bin).unwrap();
    assert!(stream.labels.is_some());
    let m = manifest(&events);
    assert_eq!(
        m["results"]["signal_events"].as_u64().unwrap()
            + m["results"]["noise_events"].as_u64().unwrap(),
        stream.len() as u64
    );

    let scores = p(dir.path(), "baf.csv");
    let kept = p(dir.path(), "kept.csv");
    let render = p(dir.path(), "kept.pgm");
    assert_eq!(
        evdn(&[
            "denoise",
            "--events",
            s(&events),
            "--method",
            "baf",
            "--out",
            s(&scores),
            "--kept",
            s(&kept),
            "--render",
            s(&render)
        ]),
        0
    );
    assert!(std::fs::read_to_string(&render).unwrap().starts_with("P2"));
    let kept_stream = read_events(&kept, Format::Csv).unwrap();
    assert!(kept_stream.len() <= stream.len());

    let report = p(dir.path(), "eval.json");
    let roc = p(dir.path(), "roc.csv");
    assert_eq!(
        evdn(&[
            "eval",
            "--events",
            s(&events),
            "--scores",
            s(&scores),
            "--out",
            s(&report),
            "--roc",
            s(&roc),
            "--inclusive",
            "--threshold",
            "1"
        ]),
        0
    );
    let m = manifest(&report);
    let auc = m["results"]["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    assert_eq!(
        m["results"]["kept"].as_u64().unwrap(),
        kept_stream.len() as u64
    );
}

#[test]
fn train_then_denoise_and_bench_are_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = p(dir.path(), "tiny.ckpt");
    let mut args = vec![
        "train",
        "--preset",
        "tiny",
        "--scenes",
        "1",
        "--seed",
        "2",
        "--set",
        "epochs=1",
        "--set",
        "segment_len=256",
        "--out",
        s(&ckpt),
    ];
    args.extend(SMALL);
    assert_eq!(evdn(&args), 0);
    assert!(
        std::fs::read_to_string(format!("{}.history.csv", ckpt.display()))
            .unwrap()
            .lines()
            .count()
            >= 2
    );

    let events = p(dir.path(), "scene.csv");
    let mut args = vec!["generate", "--seed", "9", "--out", s(&events)];
    args.extend(SMALL);
    assert_eq!(evdn(&args), 0);

    let scores = p(dir.path(), "model.csv");
    assert_eq!(
        evdn(&[
            "denoise",
            "--events",
            s(&events),
            "--method",
            "model",
            "--model",
            s(&ckpt),
            "--out",
            s(&scores)
        ]),
        0
    );
    let n = read_events(&events, Format::Csv).unwrap().len();
    assert_eq!(
        std::fs::read_to_string(&scores).unwrap().lines().count(),
        n + 1
    );

    let a = p(dir.path(), "a.csv");
    let b = p(dir.path(), "b.csv");
    for out in [&a, &b] {
        assert_eq!(
            evdn(&[
                "bench",
                "--model",
                s(&ckpt),
                "--events",
                s(&events),
                "--out",
                s(out),
                "--repeat",
                "2"
            ]),
            0
        );
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(manifest(&a)["events_per_sec"].as_f64().unwrap() > 0.0);
}

#[test]
fn sample_and_serialize_debug() {
    let dir = tempfile::tempdir().unwrap();
    let events = p(dir.path(), "scene.evdn");
    let mut args = vec!["generate", "--out", s(&events)];
    args.extend(SMALL);
    assert_eq!(evdn(&args), 0);
    let sampled = p(dir.path(), "sampled.txt");
    assert_eq!(
        evdn(&[
            "sample",
            "--events",
            s(&events),
            "--voxel",
            "0.2",
            "--out",
            s(&sampled)
        ]),
        0
    );
    let order = p(dir.path(), "order.txt");
    assert_eq!(
        evdn(&[
            "serialize-debug",
            "--events",
            s(&events),
            "--curve",
            "zorder",
            "--out",
            s(&order)
        ]),
        0
    );
    assert!(order.exists() && sampled.exists());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = p(dir.path(), "missing.evdn");
    let out = p(dir.path(), "out.csv");
    assert_eq!(
        evdn(&[
            "denoise",
            "--events",
            s(&missing),
            "--method",
            "baf",
            "--out",
            s(&out)
        ]),
        2
    );
    assert_eq!(
        evdn(&["generate", "--set", "no_such_key=1", "--out", s(&out)]),
        2
    );
    assert_eq!(evdn(&["frobnicate"]), 2);
    assert!(!out.exists());
}
