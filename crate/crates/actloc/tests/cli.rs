use std::path::Path;

use actloc::run_command;

fn run(args: &[&str]) -> i32 {
    run_command(std::iter::once("actloc").chain(args.iter().copied()))
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

const SMALL: [&str; 10] = ["--videos", "8", "--test-videos", "3", "--frames", "240", "--actions", "2", "--dim", "8"];

#[test]
fn staged_commands_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = p(d, "data");
    let mut synth = vec!["synth", "--seed", "7", "--out-dir", &data];
    synth.extend(SMALL);
    assert_eq!(run(&synth), 0);
    let data = d.join("data");
    for f in ["train.tracks.jsonl", "train.features.dfc", "test.annotations.jsonl", "manifest.json"] {
        assert!(data.join(f).is_file(), "{f} missing");
    }

    let cons = p(d, "cons");
    let build = [
        "build-constraints",
        "--tracks",
        &p(&data, "train.tracks.jsonl"),
        "--annotations",
        &p(&data, "train.annotations.jsonl"),
        "--level",
        "temporal",
        "--out-dir",
        &cons,
    ];
    assert_eq!(run(&build), 0);

    let model = p(d, "model");
    let solve = [
        "solve",
        "--features",
        &p(&data, "train.features.dfc"),
        "--tracks",
        &p(&data, "train.tracks.jsonl"),
        "--constraints",
        &p(&d.join("cons"), "constraints.jsonl"),
        "--iterations",
        "2000",
        "--out-dir",
        &model,
    ];
    assert_eq!(run(&solve), 0);
    let trace = std::fs::read_to_string(d.join("model/trace.csv")).unwrap();
    assert!(trace.lines().count() > 1);

    let det = p(d, "det");
    let infer = [
        "infer",
        "--classifier",
        &p(&d.join("model"), "classifier.json"),
        "--features",
        &p(&data, "test.features.dfc"),
        "--tracks",
        &p(&data, "test.tracks.jsonl"),
        "--train-tracks",
        &p(&data, "train.tracks.jsonl"),
        "--train-features",
        &p(&data, "train.features.dfc"),
        "--out-dir",
        &det,
    ];
    assert_eq!(run(&infer), 0);

    let ev = p(d, "eval");
    let eval = [
        "eval",
        "--detections",
        &p(&d.join("det"), "detections.jsonl"),
        "--tracks",
        &p(&data, "test.tracks.jsonl"),
        "--out-dir",
        &ev,
    ];
    assert_eq!(run(&eval), 0);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("eval/report.json")).unwrap()).unwrap();
    let text = report.to_string();
    assert!(text.contains("0.2") && text.contains("0.5"), "{text}");
}

#[test]
fn exit_codes_separate_usage_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = p(d, "out");
    assert_eq!(run(&["e2e", "--level", "sideways", "--out-dir", &out]), 1);
    assert_eq!(run(&["e2e", "--mode", "partial", "--out-dir", &out]), 1);
    assert_eq!(run(&["eval", "--detections", &p(d, "missing.jsonl"), "--tracks", &p(d, "missing.jsonl"), "--out-dir", &out]), 2);

    let tracks = p(d, "tracks.jsonl");
    std::fs::write(&tracks, "{\"type\":\"video\",\"video_id\":\"v\",\"frames\":10}\nnot json\n").unwrap();
    assert_eq!(run(&["eval", "--detections", &tracks, "--tracks", &tracks, "--out-dir", &out]), 2);

    let feats = p(d, "features.dfc");
    std::fs::write(&feats, b"DFC1 but not really").unwrap();
    assert_eq!(run(&["solve", "--features", &feats, "--tracks", &tracks, "--level", "video", "--out-dir", &out]), 2);
}

#[test]
fn mix_curve_writes_one_point_per_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "mix");
    let mut args = vec!["mix-curve", "--fractions", "0,0.5,1", "--iterations", "1500", "--out-dir", &out];
    args.extend(SMALL);
    assert_eq!(run(&args), 0);
    assert!(dir.path().join("mix/manifest.json").is_file());
    let csv = std::fs::read_to_string(dir.path().join("mix/curve.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "fraction,strong_videos,map@0.2,map@0.5");
    let fractions: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(fractions, ["0", "0.5", "1"]);
}
