use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use slicearb::config::ExperimentConfig;
use slicearb::metrics::{OVERHEAD, REWARD_CURVE, SATISFACTION, SUMMARY, TIMING};
use slicearb::runner::{checkpoint_path, load_summary, run, RunOptions};
use slicearb::summary::compare;
use slicearb_core::trainer::Algo;

const TINY: &str = r#"
seeds = [1, 2]
eval_episodes = 2

[scenario]
preset = "slices-10"
horizon = 5
reward_mode = "satisfaction"

[train]
algo = "gcn"
episodes = 3
batch_size = 4
warmup = 8
epsilon_decay_steps = 10
hidden = 8
heads = 2

[graph]
mode = "knn"
k = 3
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("exp.toml");
    fs::write(&path, text).unwrap();
    path
}

fn slicearb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slicearb")).args(args).env_remove("SLICEARB_EPISODES").output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_owned).collect()
}

fn tiny(dir: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::from_toml_str(TINY).unwrap();
    c.output_dir = dir.to_owned();
    c
}

#[test]
fn run_writes_every_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("out");
    let o = slicearb(&["--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("seed 1:") && stdout.contains("seed 2:"));
    for f in [REWARD_CURVE, SATISFACTION, OVERHEAD, SUMMARY, TIMING] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert!(checkpoint_path(&out, 1).is_file() && checkpoint_path(&out, 2).is_file());
    assert!(fs::read_dir(&out).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".part.csv")));

    let rewards = lines(&out.join(REWARD_CURVE));
    assert_eq!(rewards[0], "episode,seed,cumulative_reward");
    assert_eq!(rewards.len(), 1 + 2 * 3);
    let sat = lines(&out.join(SATISFACTION));
    assert_eq!(sat.len(), 1 + 2 * 10);
    let overhead = lines(&out.join(OVERHEAD));
    assert_eq!(overhead[1], "1,gcn,10,3,30,66.67");
}

#[test]
fn csvs_are_rederivable_from_the_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let summary = run(&tiny(tmp.path()), &RunOptions { threads: 1, eval_checkpoint: None }).unwrap();
    let mut loaded = load_summary(&tmp.path().join(SUMMARY)).unwrap();
    loaded.config.output_dir.clone_from(&summary.config.output_dir);
    assert_eq!(loaded, summary);

    let mut expected = vec!["episode,seed,cumulative_reward".to_owned()];
    for seed in &summary.seeds {
        for (e, r) in seed.reward_curve.iter().enumerate() {
            expected.push(format!("{e},{},{r}", seed.seed));
        }
    }
    let got = lines(&tmp.path().join(REWARD_CURVE));
    assert_eq!(got, expected);
    for (line, value) in got[1..].iter().zip(summary.seeds.iter().flat_map(|s| &s.reward_curve)) {
        let parsed: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(parsed.to_bits(), value.to_bits());
    }

    let sat = lines(&tmp.path().join(SATISFACTION));
    for (line, sl) in sat[1..].iter().zip(summary.seeds.iter().flat_map(|s| &s.satisfaction)) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[1].parse::<u32>().unwrap(), sl.slice_id);
        assert_eq!(cols[4].parse::<f64>().unwrap().to_bits(), sl.mean_satisfaction.to_bits());
    }
    assert!(summary.seeds.iter().all(|s| s.satisfaction.iter().all(|x| (0.0..=1.0).contains(&x.mean_satisfaction))));
}

#[test]
fn coop_talks_to_everyone() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path());
    cfg.train.algo = Algo::CoopMarl;
    cfg.seeds = vec![4];
    let summary = run(&cfg, &RunOptions { threads: 1, eval_checkpoint: None }).unwrap();
    assert_eq!(lines(&tmp.path().join(OVERHEAD))[1], "4,coop,10,9,90,0");
    let steps = u64::from(cfg.train.episodes + cfg.eval_episodes) * 5;
    assert_eq!(summary.seeds[0].messages_total, 90 * steps);
}

#[test]
fn reruns_are_byte_identical_and_threads_do_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    run(&tiny(&a), &RunOptions { threads: 1, eval_checkpoint: None }).unwrap();
    run(&tiny(&b), &RunOptions { threads: 1, eval_checkpoint: None }).unwrap();
    run(&tiny(&c), &RunOptions { threads: 2, eval_checkpoint: None }).unwrap();
    for f in [REWARD_CURVE, SATISFACTION, OVERHEAD, SUMMARY] {
        let base = fs::read(a.join(f)).unwrap();
        assert_eq!(base, fs::read(b.join(f)).unwrap(), "{f} differs between reruns");
        assert_eq!(base, fs::read(c.join(f)).unwrap(), "{f} differs with two threads");
    }
    assert_eq!(fs::read(checkpoint_path(&a, 2)).unwrap(), fs::read(checkpoint_path(&b, 2)).unwrap());
}

#[test]
fn environment_overrides_config_and_flags_override_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_slicearb"))
        .args(["--config", s(&cfg), "--out", s(&out), "--seed", "9"])
        .env("SLICEARB_EPISODES", "2")
        .env("SLICEARB_SEED", "1,2")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = load_summary(&out.join(SUMMARY)).unwrap();
    assert_eq!(summary.config.train.episodes, 2);
    assert_eq!(summary.seeds.iter().map(|s| s.seed).collect::<Vec<_>>(), [9]);
}

#[test]
fn config_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let o = slicearb(&["--config", s(&tmp.path().join("missing.toml"))]);
    assert_eq!(o.status.code(), Some(2));
    let o = slicearb(&["--config", s(&cfg), "--k", "10", "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("k <= n - 1"));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn eval_only_reuses_a_checkpoint_and_rejects_the_wrong_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("train");
    assert!(slicearb(&["--config", s(&cfg), "--out", s(&out), "--seed", "1"]).status.success());
    let ckpt = checkpoint_path(&out, 1);
    let before = fs::read(out.join(SUMMARY)).unwrap();

    let o = slicearb(&[
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--seed",
        "1",
        "--algo",
        "coop",
        "--eval-only",
        "--checkpoint",
        s(&ckpt),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("expected the all-to-all baseline"));
    assert_eq!(fs::read(out.join(SUMMARY)).unwrap(), before, "failed run touched earlier outputs");
    assert!(ckpt.is_file());

    let eval = tmp.path().join("eval");
    let o = slicearb(&["--config", s(&cfg), "--out", s(&eval), "--seed", "1", "--eval-only", "--checkpoint", s(&ckpt)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = load_summary(&eval.join(SUMMARY)).unwrap();
    assert!(summary.eval_only);
    assert!(summary.seeds[0].reward_curve.is_empty());
    assert_eq!(summary.seeds[0].eval_rewards.len(), 2);
    assert_eq!(lines(&eval.join(REWARD_CURVE)).len(), 1);
    assert!(!checkpoint_path(&eval, 1).exists());

    // Evaluation of the trained network is deterministic.
    let trained = load_summary(&out.join(SUMMARY)).unwrap();
    assert_eq!(trained.seeds[0].satisfaction, summary.seeds[0].satisfaction);

    let o = slicearb(&["--config", s(&cfg), "--eval-only"]);
    assert_eq!(o.status.code(), Some(2), "clap rejects --eval-only without --checkpoint");
}

#[test]
fn compare_prints_deltas_and_rejects_mismatched_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(slicearb(&["--config", s(&cfg), "--out", s(&a), "--seed", "1"]).status.success());
    assert!(slicearb(&["--config", s(&cfg), "--out", s(&b), "--seed", "1", "--algo", "coop"]).status.success());

    let o = slicearb(&["compare", s(&a), s(&a.join(SUMMARY))]);
    assert!(o.status.success());
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("messages total"));
    let same = compare(&load_summary(&a.join(SUMMARY)).unwrap(), &load_summary(&a.join(SUMMARY)).unwrap()).unwrap();
    assert!(same.slices.iter().all(|x| x.delta() == 0.0) && same.messages_delta() == 0);

    let o = slicearb(&["compare", s(&a), s(&b)]);
    assert!(o.status.success());
    let c = compare(&load_summary(&a.join(SUMMARY)).unwrap(), &load_summary(&b.join(SUMMARY)).unwrap()).unwrap();
    assert_eq!(c.messages_delta(), (90 - 30) * 5 * 5);

    let other = tmp.path().join("other");
    assert!(slicearb(&["--config", s(&cfg), "--out", s(&other), "--seed", "2"]).status.success());
    assert_eq!(slicearb(&["compare", s(&a), s(&other)]).status.code(), Some(6));
    assert_eq!(slicearb(&["compare", s(&a), s(&tmp.path().join("nowhere"))]).status.code(), Some(3));
}

#[test]
fn trace_config_replays_the_sample() {
    let tmp = tempfile::tempdir().unwrap();
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/trace.toml");
    let o = slicearb(&["--config", s(&root), "--out", s(tmp.path()), "--episodes", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = load_summary(&tmp.path().join(SUMMARY)).unwrap();
    assert!(summary.config.trace.is_some());
    assert_eq!(summary.seeds[0].reward_curve.len(), 2);
}

#[test]
fn gen_trace_output_loads_as_a_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let trace = tmp.path().join("t.csv");
    let o = slicearb(&["gen-trace", "--config", s(&cfg), "--steps", "6", "--seed", "3", "--out", s(&trace)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(lines(&trace).len(), 1 + 6 * 10);

    let mut with_trace = TINY.replace("seeds = [1, 2]", "seeds = [1]");
    with_trace.insert_str(0, "trace = \"t.csv\"\n");
    let cfg = write_config(tmp.path(), &with_trace);
    let o = slicearb(&["--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    fs::write(&trace, "t,slice_id,required_throughput_mbps,cqi\n0,0,1.0,16\n").unwrap();
    assert_eq!(slicearb(&["--config", s(&cfg), "--out", s(&tmp.path().join("p"))]).status.code(), Some(3));
}
