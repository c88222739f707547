use std::path::Path;
use std::process::{Command, Output};

const SMALL: [&str; 2] = ["--set", "sim.image_size=16"];

fn vrdrive(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vrdrive"))
        .args(args)
        .current_dir(dir)
        .env("RUST_BACKTRACE", "0")
        .env("RUST_LIB_BACKTRACE", "0")
        .output()
        .expect("spawn vrdrive")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = vrdrive(dir, args);
    assert!(
        o.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn fails(dir: &Path, args: &[&str]) -> String {
    let o = vrdrive(dir, args);
    assert!(!o.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend(SMALL);
    v
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_refuses_tiny_sets_and_is_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let err = fails(t.path(), &["gen-data", "--n", "10", "--out", "d"]);
    assert!(err.contains("64"), "{err}");
    ok(t.path(), &with_small(&["gen-data", "--n", "64", "--seed", "3", "--out", "a"]));
    ok(t.path(), &with_small(&["gen-data", "--n", "64", "--seed", "3", "--out", "b"]));
    let (a, b) = (dir_bytes(&t.path().join("a")), dir_bytes(&t.path().join("b")));
    assert!(a.iter().any(|(n, _)| n.ends_with("index.txt")));
    assert_eq!(a, b);
    let idx = std::fs::read_to_string(t.path().join("a/stage2/index.txt")).unwrap();
    assert_eq!(idx.lines().count(), 64);
}

#[test]
fn config_precedence_is_echoed() {
    let t = tempfile::tempdir().unwrap();
    std::fs::write(
        t.path().join("run.cfg"),
        "# run file\ngan.pairs = 70\ngan.drive_policy = center\n",
    )
    .unwrap();
    let args = with_small(&["gen-data", "--config", "run.cfg", "--set", "gan.pairs=90", "--n", "72", "--out", "d"]);
    ok(t.path(), &args);
    let resolved = std::fs::read_to_string(t.path().join("d/config.resolved")).unwrap();
    assert!(resolved.contains("gan.pairs = 72"));
    assert!(resolved.contains("gan.drive_policy = center"));
    assert!(resolved.contains("a3c.workers = 12"));
    let idx = std::fs::read_to_string(t.path().join("d/stage1/index.txt")).unwrap();
    assert_eq!(idx.lines().count(), 72);
    let err = fails(t.path(), &["gen-data", "--set", "gan.nope=1", "--out", "e"]);
    assert!(err.contains("gan.nope"), "{err}");
}

#[test]
fn translated_mode_requires_a_pipeline() {
    let t = tempfile::tempdir().unwrap();
    let err = fails(t.path(), &with_small(&["train-agent", "--mode", "translated", "--budget", "50", "--out", "a"]));
    assert!(err.contains("--pipeline"), "{err}");
    let err = fails(t.path(), &["train-agent", "--mode", "sideways", "--out", "a"]);
    assert!(err.contains("sideways"), "{err}");
}

#[test]
fn gradcheck_passes_and_fails_by_tolerance() {
    let t = tempfile::tempdir().unwrap();
    let out = ok(t.path(), &["gradcheck"]);
    assert!(out.contains("policy-16x16"));
    assert!(!out.contains("FAIL"));
    let err = fails(t.path(), &["gradcheck", "--tolerance", "1e-14"]);
    assert!(err.contains("gradient check failed"), "{err}");
}

#[test]
fn full_pipeline_on_reduced_networks() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(d, &with_small(&["gen-data", "--n", "80", "--out", "data"]));
    ok(d, &with_small(&["train-g1", "--data", "data/stage1", "--epochs", "1", "--out", "pipe"]));
    ok(d, &with_small(&["train-g2", "--data", "data/stage2", "--epochs", "1", "--out", "pipe"]));
    for f in ["g1.ckpt", "g2.ckpt", "g1_curve.csv", "g2_curve.csv"] {
        assert!(d.join("pipe").join(f).exists(), "{f}");
    }

    let agent = [
        "train-agent", "--mode", "translated", "--pipeline", "pipe", "--budget", "120", "--workers", "2", "--out", "agent",
    ];
    ok(d, &with_small(&agent));
    let curve = std::fs::read_to_string(d.join("agent/curve.csv")).unwrap();
    assert!(curve.starts_with("wall_clock_s,global_step,worker_id,episode_reward,episode_len"));
    ok(d, &with_small(&["train-agent", "--mode", "randomized", "--styles", "3", "--budget", "60", "--workers", "1", "--out", "dr"]));
    let resolved = std::fs::read_to_string(d.join("dr/config.resolved")).unwrap();
    assert!(resolved.contains("a3c.styles = 3"));

    ok(d, &with_small(&["gen-log", "--frames", "40", "--out", "log"]));
    let out = ok(d, &with_small(&["evaluate", "--policy", "agent/policy.ckpt", "--log", "log", "--out", "ev"]));
    assert!(out.contains("Ours"));
    let csv = std::fs::read_to_string(d.join("ev/eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);

    ok(d, &with_small(&["train-supervised", "--log", "log", "--out", "sv", "--set", "eval.sv_epochs=1"]));
    ok(d, &with_small(&["evaluate", "--policy", "sv/policy.ckpt", "--log", "log", "--method", "SV", "--out", "ev_sv"]));

    ok(d, &with_small(&["translate", "--pipeline", "pipe", "--in", "data/stage1/frames", "--out", "tr"]));
    let n_in = std::fs::read_dir(d.join("data/stage1/frames")).unwrap().count();
    let n_out = std::fs::read_dir(d.join("tr")).unwrap().filter(|e| {
        e.as_ref().unwrap().path().to_string_lossy().ends_with("_real.ppm")
    });
    assert_eq!(n_out.count(), n_in);

    ok(d, &with_small(&["render-rollout", "--policy", "agent/policy.ckpt", "--style", "randomized:4", "--steps", "3", "--out", "ro"]));
    let ppm = std::fs::read(d.join("ro/frame_0000.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n16 16\n255\n"));

    let full = std::fs::read(d.join("agent/policy.ckpt")).unwrap();
    std::fs::write(d.join("broken.ckpt"), &full[..full.len() / 2]).unwrap();
    let err = fails(d, &with_small(&["evaluate", "--policy", "broken.ckpt", "--log", "log", "--out", "ev2"]));
    assert!(err.contains("broken.ckpt"), "{err}");
    let err = fails(d, &with_small(&["render-rollout", "--policy", "pipe/g1.ckpt", "--out", "ro2"]));
    assert!(err.contains("g1.ckpt"), "{err}");
}

#[test]
fn help_documents_every_command() {
    let t = tempfile::tempdir().unwrap();
    let out = ok(t.path(), &["--help"]);
    for c in [
        "gen-data", "train-g1", "train-g2", "train-agent", "evaluate", "translate", "gradcheck", "render-rollout",
    ] {
        assert!(out.contains(c), "{c}");
    }
    let out = ok(t.path(), &["train-agent", "--help"]);
    for f in ["--mode", "--styles", "--pipeline", "--budget", "--seed", "--out", "--config", "--set"] {
        assert!(out.contains(f), "{f}");
    }
}
