use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--steps",
    "4",
    "--set",
    "eval_every=2",
    "--set",
    "eval_samples=8",
    "--set",
    "eval_k=1,4,8",
];

fn thrlab(out_root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thrlab"))
        .env("THRLAB_OUT", out_root)
        .env_remove("RUST_LOG")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn train_writes_run_and_refuses_overwrite() {
    let root = tempfile::tempdir().unwrap();
    let args: Vec<&str> = ["train", "--scheme", "thr_p", "--p", "-0.2", "--seed", "3"]
        .into_iter()
        .chain(SMALL.iter().copied())
        .collect();
    let o = thrlab(root.path(), &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = root.path().join("train-thr_p-seed3");
    for f in ["config.txt", "metrics.jsonl", "eval.csv", "checkpoint.bin"] {
        assert!(run.join(f).is_file(), "{f}");
    }

    let again = thrlab(root.path(), &args);
    assert_eq!(again.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));

    let forced: Vec<&str> = args.iter().copied().chain(["--force"]).collect();
    assert!(thrlab(root.path(), &forced).status.success());
}

#[test]
fn eval_reproduces_final_training_eval() {
    let root = tempfile::tempdir().unwrap();
    let args: Vec<&str> = ["train"].into_iter().chain(SMALL.iter().copied()).collect();
    assert!(thrlab(root.path(), &args).status.success());
    let run = root.path().join("train-grpo-seed0");
    let eval_csv = std::fs::read_to_string(run.join("eval.csv")).unwrap();
    let last_greedy = eval_csv
        .lines()
        .filter(|l| l.starts_with("4,greedy_acc"))
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .next()
        .unwrap();

    let ckpt = run.join("checkpoint.bin");
    let config = run.join("config.txt");
    let o = thrlab(
        root.path(),
        &[
            "eval",
            "--config",
            config.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let greedy: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("greedy_acc "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((greedy - last_greedy).abs() < 1e-4, "{greedy} vs {last_greedy}");
    assert!(out.contains("pass@8 "));
}

#[test]
fn flags_override_file_and_set_overrides_flags() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("base.txt");
    std::fs::write(&cfg, "# base\nlr = 1\nseed = 5\nsteps = 2\n").unwrap();
    let out = root.path().join("run");
    let o = thrlab(
        root.path(),
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--lr",
            "0.5",
            "--seed",
            "6",
            "--set",
            "seed=7",
            "--out",
            out.to_str().unwrap(),
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let written = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(written.contains("lr = 0.5\n"));
    assert!(written.contains("seed = 7\n"));
    assert!(written.contains("steps = 2\n"));
}

#[test]
fn validation_errors_exit_2() {
    let root = tempfile::tempdir().unwrap();
    for args in [
        &["train", "--set", "no_such_key=1"][..],
        &["train", "--scheme", "nope"],
        &["train", "--set", "updates_per_batch=99"],
        &["sweep", "--axis", "p", "--values", "0.1", "--seeds", "0..2"],
    ] {
        let o = thrlab(root.path(), args);
        assert_eq!(
            o.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

#[test]
fn starvation_exits_4() {
    let root = tempfile::tempdir().unwrap();
    let o = thrlab(root.path(), &["train", "--set", "max_attempts=1", "--steps", "2"]);
    assert_eq!(o.status.code(), Some(4));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("training step 1"), "{err}");
}

#[test]
fn verify_writes_csv() {
    let root = tempfile::tempdir().unwrap();
    let o = thrlab(root.path(), &["verify", "--suite", "entropy", "--n", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(root.path().join("verify-entropy.csv")).unwrap();
    assert!(csv.starts_with("check,instance_seed,lhs,rhs,rel_err,eta\n"));
    assert!(stdout(&o).contains("entropy: pass"));
}

#[test]
fn sweep_writes_summary_and_medians() {
    let root = tempfile::tempdir().unwrap();
    let args: Vec<&str> = [
        "sweep", "--scheme", "thr_p", "--axis", "p", "--values", "-0.2,0.2", "--seeds", "0,1",
    ]
    .into_iter()
    .chain(SMALL.iter().copied())
    .collect();
    let o = thrlab(root.path(), &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = root.path().join("sweep-p");
    assert!(dir.join("p=0.2/seed-1/metrics.jsonl").is_file());
    let median = std::fs::read_to_string(dir.join("median.csv")).unwrap();
    assert!(median.lines().any(|l| l.starts_with("p=-0.2,greedy_acc,0,")));
}
