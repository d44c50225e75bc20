use std::fs;
use std::path::Path;

use forge_cli::{run_cli, EXIT_INVALID, EXIT_OK, EXIT_USAGE};
use forge_core::io::manifest::Manifest;

fn forge(args: &[&str]) -> i32 {
    let mut argv = vec!["forge"];
    argv.extend_from_slice(args);
    run_cli(argv)
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

#[test]
fn unknown_verb_and_bad_flags_are_usage_errors() {
    assert_eq!(forge(&["juggle"]), EXIT_USAGE);
    assert_eq!(forge(&[]), EXIT_USAGE);
    assert_eq!(forge(&["gen-spatial", "--out", "x.jsonl"]), EXIT_USAGE);
    assert_eq!(forge(&["--help"]), EXIT_OK);
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "t.jsonl");
    assert_eq!(forge(&["gen-planning", "--env", "kitchen", "--out", &out]), EXIT_USAGE);
    assert_eq!(forge(&["gen-planning", "--agent", "genius", "--out", &out]), EXIT_USAGE);
    assert_eq!(forge(&["collect-demos", "--task", "juggle", "--out", &out]), EXIT_USAGE);
    assert_eq!(forge(&["collect-demos", "--jobs", "0", "--out", &out]), EXIT_USAGE);
    assert_eq!(forge(&["validate", &out, "--schema", "nope/1"]), EXIT_USAGE);
}

#[test]
fn generated_corpora_validate_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let runs: [(&str, Vec<String>); 5] = [
        ("g.jsonl", vec!["gen-grounding".into(), "--synthetic".into(), "300".into()]),
        ("s.jsonl", vec!["gen-spatial".into(), "--synthetic".into(), "40".into()]),
        ("p.jsonl", vec!["gen-planning".into(), "--agent".into(), "random".into(), "--episodes".into(), "40".into()]),
        ("i.jsonl", vec!["gen-indomain".into(), "--episodes".into(), "3".into()]),
        ("e.jsonl", vec!["collect-demos".into(), "--episodes".into(), "5".into()]),
    ];
    for (name, args) in &runs {
        let out = p(d, name);
        let mut a: Vec<&str> = args.iter().map(String::as_str).collect();
        a.extend(["--seed", "3", "--out", &out]);
        assert_eq!(forge(&a), EXIT_OK, "{a:?}");
        assert_eq!(forge(&["validate", &out]), EXIT_OK, "{name}");
        let m = Manifest::read(d.join(name.replace(".jsonl", ".manifest.json"))).unwrap();
        assert!(m.verify(d).unwrap().is_empty());
        assert_eq!(m.global_seed, 3);
        assert!(m.config_hash.is_some());
    }
    assert_eq!(forge(&["validate", &p(d, "p.trajectories.jsonl"), "--schema", "trajectory/1"]), EXIT_OK);
    assert_eq!(forge(&["validate", &p(d, "g.jsonl"), "--schema", "spatial/1"]), EXIT_INVALID);
}

#[test]
fn validate_flags_out_of_range_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "g.jsonl");
    assert_eq!(forge(&["gen-grounding", "--synthetic", "20", "--out", &out]), EXIT_OK);
    let text = fs::read_to_string(&out).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut v: serde_json::Value = serde_json::from_str(&lines[1]).unwrap();
    v["norm_geometry"][0] = 1001.into();
    lines[1] = v.to_string();
    fs::write(&out, lines.join("\n") + "\n").unwrap();
    assert_eq!(forge(&["validate", &out]), EXIT_INVALID);
    let empty = p(dir.path(), "empty.jsonl");
    fs::write(&empty, "").unwrap();
    assert_eq!(forge(&["validate", &empty]), EXIT_OK);
    assert_eq!(forge(&["validate", &p(dir.path(), "missing.jsonl")]), EXIT_INVALID);
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = p(d, "c.cfg");
    fs::write(&cfg, "seed = 5\n[collect-demos]\nepisodes = 4\n[task]\nmax_steps = 60\n").unwrap();
    let out = p(d, "a.jsonl");
    assert_eq!(forge(&["collect-demos", "--config", &cfg, "--out", &out]), EXIT_OK);
    let m = Manifest::read(d.join("a.manifest.json")).unwrap();
    assert_eq!((m.global_seed, m.outputs[0].records), (5, 4));
    assert_eq!(forge(&["collect-demos", "--config", &cfg, "--episodes", "2", "--out", &out]), EXIT_OK);
    let m2 = Manifest::read(d.join("a.manifest.json")).unwrap();
    assert_eq!(m2.outputs[0].records, 2);
    assert_ne!(m.config_hash, m2.config_hash);
    fs::write(&cfg, "episodes = lots\n").unwrap();
    assert_eq!(forge(&["collect-demos", "--config", &cfg, "--out", &out]), EXIT_USAGE);
}

#[test]
fn grounding_input_file_and_synthetic_agree() {
    use forge_core::grounding::{synthetic_mask_records, MaskRecordLine};
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let lines: Vec<MaskRecordLine> = synthetic_mask_records(2, 50).iter().map(MaskRecordLine::from).collect();
    forge_core::io::jsonl::write(d.join("masks.jsonl"), &lines).unwrap();
    let (a, b) = (p(d, "a.jsonl"), p(d, "b.jsonl"));
    assert_eq!(forge(&["gen-grounding", "--in", &p(d, "masks.jsonl"), "--seed", "2", "--out", &a]), EXIT_OK);
    assert_eq!(forge(&["gen-grounding", "--synthetic", "50", "--seed", "2", "--out", &b]), EXIT_OK);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn train_then_evaluate_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let demos = p(d, "demos.jsonl");
    let ckpt = p(d, "policy.json");
    assert_eq!(forge(&["collect-demos", "--task", "reach", "--episodes", "10", "--out", &demos]), EXIT_OK);
    assert_eq!(forge(&["train-policy", "--demos", &demos, "--steps", "20", "--lr", "1e-3", "--out", &ckpt]), EXIT_OK);
    let m = Manifest::read(d.join("policy.manifest.json")).unwrap();
    assert_eq!(m.outputs.len(), 2);
    assert_eq!(m.outputs[1].records, 21);
    let report = p(d, "eval.json");
    let eps = p(d, "eval.jsonl");
    let args = ["eval-policy", "--checkpoint", &ckpt, "--task", "reach", "--episodes", "4", "--out", &report];
    assert_eq!(forge(&[&args[..], &["--episodes-out", &eps]].concat()), EXIT_OK);
    assert_eq!(forge(&["validate", &eps, "--schema", "episode/1"]), EXIT_OK);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["episodes"], 4);
    assert_eq!(forge(&["eval-policy", "--policy", "expert", "--episodes", "6", "--out", &report]), EXIT_OK);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["success_rate"], 1.0);
    fs::write(&ckpt, "{}").unwrap();
    assert_eq!(forge(&["eval-policy", "--checkpoint", &ckpt, "--out", &report]), EXIT_INVALID);
}

#[test]
fn experiment_writes_cells_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let matrix = p(d, "matrix.cfg");
    fs::write(
        &matrix,
        "variants = random, in_domain, expert\nseeds = 1, 2\ntask = reach\ndemos = 8\n\
         [train]\nsteps = 20\nbatch_size = 4\n[eval]\nevery = 10\nepisodes = 4\nfinal_episodes = 4\n\
         [pretrain]\nsteps = 5\nbatch_size = 4\n[corpus]\nin_domain_episodes = 2\n",
    )
    .unwrap();
    let out = d.join("reports");
    assert_eq!(forge(&["experiment", "--matrix", &matrix, "--out", &out.display().to_string()]), EXIT_OK);
    let m = Manifest::read(out.join("manifest.json")).unwrap();
    assert!(m.verify(&out).unwrap().is_empty());
    assert!(out.join("cells/in_domain-seed2.json").exists());
    assert!(out.join("cells/random-seed1-loss.csv").exists());
    assert!(!out.join("cells/expert-seed1-loss.csv").exists());
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    let reports = fs::read_to_string(out.join("reports.jsonl")).unwrap();
    assert_eq!(reports.lines().count(), 6);
    fs::write(&matrix, "variants = random, random\n").unwrap();
    assert_eq!(forge(&["experiment", "--matrix", &matrix, "--out", &out.display().to_string()]), EXIT_USAGE);
}
