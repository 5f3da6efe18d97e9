use std::path::Path;
use std::process::Command;

fn run(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_phasebranch"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_bench_report_and_train() {
    let dir = tempfile::tempdir().unwrap();
    let suite_dir = dir.path().join("suite");
    run(&[
        "gen-suite",
        "--out",
        s(&suite_dir),
        "--count",
        "6",
        "--seed",
        "3",
    ]);
    let suite = suite_dir.join("suite.toml");

    let net = suite_dir.join("net_q0000.nnet");
    let prop = suite_dir.join("prop_q0000.prop");
    let oracle = run(&["oracle", "--net", s(&net), "--prop", s(&prop)]);
    let verified = run(&[
        "verify",
        "--net",
        s(&net),
        "--prop",
        s(&prop),
        "--strategy",
        "babsr",
    ]);
    let verdict = |text: &str| {
        text.lines()
            .find(|l| l.starts_with("verdict"))
            .map(str::to_owned)
    };
    assert_eq!(verdict(&oracle), verdict(&verified));

    let results = dir.path().join("results");
    let table = run(&[
        "bench",
        "--suite",
        s(&suite),
        "--strategy",
        "soi,polarity",
        "--out",
        s(&results),
        "--workers",
        "1",
    ]);
    assert!(table.contains("soi") && table.contains("polarity"));
    let csv = results.join("results.csv");
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 13);

    let curves = dir.path().join("curves");
    run(&["report", "--results", s(&csv), "--out", s(&curves)]);
    assert!(curves.join("curve_soi.csv").exists());

    let config = dir.path().join("train.toml");
    std::fs::write(
        &config,
        "demo_epochs = 1\ndemo_steps = 20\nfinetune_epochs = 1\nfinetune_steps = 20\n",
    )
    .unwrap();
    // Larger networks so the searches reach the depth where the agent decides.
    let train_dir = dir.path().join("train");
    run(&[
        "gen-suite",
        "--out",
        s(&train_dir),
        "--count",
        "4",
        "--seed",
        "4",
        "--min-relus",
        "30",
        "--max-relus",
        "40",
        "--max-hidden-layers",
        "3",
    ]);
    let ckpt = dir.path().join("ckpt");
    run(&[
        "train",
        "--suite",
        s(&train_dir.join("suite.toml")),
        "--out",
        s(&ckpt),
        "--config",
        s(&config),
        "--demo-fraction",
        "1",
        "--tightening",
        "interval",
        "--max-iterations",
        "500",
    ]);
    let final_ckpt = ckpt.join("final.json");
    let agent = run(&[
        "verify",
        "--net",
        s(&net),
        "--prop",
        s(&prop),
        "--strategy",
        "agent",
        "--checkpoint",
        s(&final_ckpt),
    ]);
    assert_eq!(verdict(&agent), verdict(&oracle));
}
