use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn brag(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brag"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const QUICK: [&str; 6] = ["--max-steps", "30", "--eval-every", "15", "--dim", "16"];

fn synth(dir: &Path, size: &str) {
    let out = brag(&["synth", "--out", "data.jsonl", "--size", size, "--seed", "3"], dir);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn train(dir: &Path, out_dir: &str, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", "data.jsonl", "--out", out_dir, "--seed", "7"];
    args.extend(QUICK);
    args.extend(extra);
    brag(&args, dir)
}

#[test]
fn train_is_deterministic_and_eval_reproduces_its_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "400");
    let before = fs::read(d.join("data.jsonl")).unwrap();
    for run in ["a", "b"] {
        let out = train(d, run, &[]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("Macro Average"));
    }
    assert_eq!(fs::read(d.join("data.jsonl")).unwrap(), before, "input mutated");
    for file in ["losses.csv", "checkpoint.bin", "metrics.json", "dev.jsonl", "config.json"] {
        assert_eq!(
            fs::read(d.join("a").join(file)).unwrap(),
            fs::read(d.join("b").join(file)).unwrap(),
            "{file} differs"
        );
    }
    let csv = fs::read_to_string(d.join("a/losses.csv")).unwrap();
    assert!(csv.starts_with("step,clf,clf_aug,kl,adv,dis,total\n"));
    assert_eq!(csv.lines().count(), 31);

    let out = brag(
        &["eval", "--checkpoint", "a/checkpoint.bin", "--data", "a/dev.jsonl", "--json", "eval.json"],
        d,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(d.join("eval.json")).unwrap(), fs::read(d.join("a/metrics.json")).unwrap());

    let out = brag(
        &["eval", "--checkpoint", "a/checkpoint.bin", "--data", "a/dev.jsonl", "--binary"],
        d,
    );
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("bragging"));

    let out = brag(&["project", "--checkpoint", "a/checkpoint.bin", "--data", "data.jsonl", "--out", "p.csv"], d);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(d.join("p.csv")).unwrap();
    assert!(csv.starts_with("x,y,label\n"));
    assert_eq!(csv.lines().count(), 401);
}

#[test]
fn configuration_problems_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "200");
    assert_eq!(code(&brag(&["train", "--out", "x"], d)), 2);
    assert_eq!(code(&brag(&["train", "--data", "missing.jsonl"], d)), 2);
    assert_eq!(code(&brag(&["train", "--data", "data.jsonl", "--lr-model", "-1"], d)), 2);
    assert_eq!(code(&brag(&["train", "--data", "data.jsonl", "--pairing", "sideways"], d)), 2);
    assert_eq!(code(&brag(&["synth", "--out", "y.jsonl", "--priors", "0.5,abc"], d)), 2);
    assert_eq!(code(&brag(&["synth", "--out", "y.jsonl", "--priors", "0.5,0.6"], d)), 2);
    assert_eq!(code(&brag(&["gradcheck", "--dim", "64"], d)), 2);
    assert_eq!(code(&brag(&["bogus"], d)), 2);

    fs::write(d.join("cfg.json"), "{\"alpha\": 1.0, \"unknown_key\": 3}").unwrap();
    assert_eq!(code(&brag(&["train", "--data", "data.jsonl", "--config", "cfg.json"], d)), 2);
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "200");
    fs::write(d.join("cfg.json"), "{\"beta\": 0.0, \"lambda\": 0.0, \"gamma\": 0.0}").unwrap();
    let out = train(d, "run", &["--config", "cfg.json", "--profile", "desk", "--alpha", "2.0"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let written: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("run/config.json")).unwrap()).unwrap();
    assert_eq!(written["alpha"], 2.0);
    assert_eq!(written["beta"], 0.0);
    assert_eq!(written["max_steps"], 30);
    assert_eq!(written["profile"], "desk");
}

#[test]
fn checkpoint_problems_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "200");
    assert_eq!(code(&train(d, "run", &[])), 0);
    let args = |ckpt: &'static str, extra: &'static [&'static str]| {
        let mut a = vec!["eval", "--checkpoint", ckpt, "--data", "data.jsonl"];
        a.extend(extra);
        a
    };
    assert_eq!(code(&brag(&args("run/checkpoint.bin", &["--vocab-size", "100"]), d)), 2);
    assert_eq!(code(&brag(&args("run/checkpoint.bin", &["--max-len", "64"]), d)), 2);
    assert_eq!(code(&brag(&args("run/checkpoint.bin", &["--dim", "16"]), d)), 0);

    let mut bytes = fs::read(d.join("run/checkpoint.bin")).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x40;
    fs::write(d.join("flipped.bin"), &bytes).unwrap();
    assert_eq!(code(&brag(&args("flipped.bin", &[]), d)), 2);
    fs::write(d.join("short.bin"), &bytes[..bytes.len() / 2]).unwrap();
    assert_eq!(code(&brag(&args("short.bin", &[]), d)), 2);

    fs::write(d.join("two.jsonl"), "{\"text\":\"a b\",\"label\":\"trait\"}\n{\"text\":\"c\",\"label\":\"not_bragging\"}\n").unwrap();
    let out = brag(&["project", "--checkpoint", "run/checkpoint.bin", "--data", "two.jsonl", "--out", "p.csv"], d);
    assert_eq!(code(&out), 2);
}

#[test]
fn gradcheck_reports_and_flags_faults() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = brag(&["gradcheck", "--dim", "4", "--batch", "3", "--json", "g.json"], d);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("g.json")).unwrap()).unwrap();
    assert_eq!(report["groups"].as_array().unwrap().len(), 21);

    let out = brag(&["gradcheck", "--dim", "4", "--batch", "3", "--inject-fault"], d);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn synthetic_training_needs_no_input_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut args = vec!["train", "--synthetic", "--out", "run", "--binary"];
    args.extend(QUICK);
    let out = brag(&args, d);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("run/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["per_class"].as_array().unwrap().len(), 2);
}

#[test]
fn gradcheck_and_synth_repeat_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for name in ["g1.json", "g2.json"] {
        assert_eq!(code(&brag(&["gradcheck", "--dim", "4", "--batch", "2", "--seed", "9", "--json", name], d)), 0);
    }
    assert_eq!(fs::read(d.join("g1.json")).unwrap(), fs::read(d.join("g2.json")).unwrap());

    for name in ["s1.jsonl", "s2.jsonl"] {
        assert_eq!(code(&brag(&["synth", "--out", name], d)), 0);
    }
    let text = fs::read_to_string(d.join("s1.jsonl")).unwrap();
    assert_eq!(text.as_bytes(), fs::read(d.join("s2.jsonl")).unwrap());
    for label in ["not_bragging", "achievement", "action", "feeling", "trait", "possession", "affiliation"] {
        assert!(text.contains(&format!("\"{label}\"")), "{label} missing");
    }
}

#[test]
fn projection_separates_noiseless_classes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let priors = "0.4,0.1,0.1,0.1,0.1,0.1,0.1";
    let out = brag(&["synth", "--out", "data.jsonl", "--noise", "0", "--size", "500", "--priors", priors], d);
    assert_eq!(code(&out), 0);
    let out = brag(&["train", "--data", "data.jsonl", "--out", "run", "--max-steps", "200", "--eval-every", "100", "--dim", "16"], d);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = brag(&["project", "--checkpoint", "run/checkpoint.bin", "--data", "data.jsonl", "--out", "p.csv"], d);
    assert_eq!(code(&out), 0);

    let mut groups: std::collections::BTreeMap<String, Vec<[f64; 2]>> = Default::default();
    for line in fs::read_to_string(d.join("p.csv")).unwrap().lines().skip(1) {
        let mut f = line.split(',');
        let x: f64 = f.next().unwrap().parse().unwrap();
        let y: f64 = f.next().unwrap().parse().unwrap();
        groups.entry(f.next().unwrap().to_string()).or_default().push([x, y]);
    }
    let dist = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let centroids: Vec<[f64; 2]> = groups
        .values()
        .map(|pts| {
            let n = pts.len() as f64;
            [pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n]
        })
        .collect();
    let within = groups
        .values()
        .zip(&centroids)
        .map(|(pts, &c)| pts.iter().map(|&p| dist(p, c)).sum::<f64>() / pts.len() as f64)
        .sum::<f64>()
        / centroids.len() as f64;
    let mut between = Vec::new();
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            between.push(dist(centroids[i], centroids[j]));
        }
    }
    let between = between.iter().sum::<f64>() / between.len() as f64;
    assert!(between > within, "between {between} vs within {within}");
}
