use std::path::Path;
use std::process::{Command, Output};

fn polycstr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polycstr"))
        .args(args)
        .current_dir(cwd)
        .env_remove("POLYCSTR_DATA_DIR")
        .env_remove("POLYCSTR_REPORT_DIR")
        .output()
        .expect("spawn polycstr")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}\nstdout:\n{}\nstderr:\n{}", out.status.code(), String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(polycstr(&["generate", "--scenario", "nowhere"], d).status.code(), Some(2));
    assert_eq!(polycstr(&["frobnicate"], d).status.code(), Some(2));
    assert_eq!(polycstr(&["train", "bc", "--dataset", "missing.csv", "--out", "bc.json"], d).status.code(), Some(2));
    assert_eq!(polycstr(&["--config", "missing.toml", "generate", "--scenario", "startup"], d).status.code(), Some(2));

    std::fs::write(d.join("bad.toml"), "[iql]\ntau = 2.0\n").unwrap();
    assert_eq!(polycstr(&["--config", "bad.toml", "generate", "--scenario", "startup"], d).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("garbage.csv"), "not,a,dataset\n1,2,3\n").unwrap();
    let out = polycstr(&["train", "bc", "--dataset", "garbage.csv", "--out", "bc.json"], d);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn generate_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["a", "b"] {
        ok(&polycstr(&["generate", "--scenario", "grade_down", "--seed", "3", "--episodes", "4", "--out", out], d));
    }
    for file in ["grade_down.csv", "grade_down.json"] {
        assert_eq!(std::fs::read(d.join("a").join(file)).unwrap(), std::fs::read(d.join("b").join(file)).unwrap(), "{file}");
    }
}

#[test]
fn train_evaluate_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&polycstr(&["generate", "--scenario", "grade_up", "--seed", "1", "--episodes", "6", "--out", "data"], d));
    ok(&polycstr(&["train", "bc", "--dataset", "data/grade_up.csv", "--out", "models/bc.json", "--epochs", "3"], d));
    ok(&polycstr(&["train", "cost-picnn", "--dataset", "data/grade_up.csv", "--out", "models/picnn.json", "--epochs", "3"], d));
    assert!(d.join("models/bc.history.csv").is_file());
    assert!(d.join("models/picnn.history.csv").is_file());

    let eval = |extra: &[&str], name: &str| {
        let mut args = vec!["evaluate", "--agent", "models/bc.json", "--dataset", "data/grade_up.csv", "--episodes", "3", "--out", "reports", "--name", name];
        args.extend_from_slice(extra);
        ok(&polycstr(&args, d));
        std::fs::read_to_string(d.join(format!("reports/{name}_grade_up_episodes.csv"))).unwrap()
    };
    let plain = eval(&[], "plain");
    let off = eval(&["--cost-model", "models/picnn.json", "--correct", "off"], "off");
    let eta0 = eval(&["--cost-model", "models/picnn.json", "--correct", "gradient", "--eta", "0"], "eta0");
    // drop the header and the agent column
    let strip = |s: &str| s.lines().skip(1).map(|l| l.split_once(',').unwrap().1.to_string()).collect::<Vec<_>>();
    assert_eq!(strip(&plain), strip(&off));
    assert_eq!(strip(&plain), strip(&eta0));

    let missing_model = polycstr(&["evaluate", "--agent", "models/bc.json", "--dataset", "data/grade_up.csv", "--correct", "newton"], d);
    assert_eq!(missing_model.status.code(), Some(2));

    ok(&polycstr(&["report", "reports/plain_grade_up.json", "reports/eta0_grade_up.json", "--dataset", "data/grade_up.csv", "--out", "summary"], d));
    let md = std::fs::read_to_string(d.join("summary/summary.md")).unwrap();
    assert!(md.contains("Data") && md.contains("plain") && md.contains("eta0"), "{md}");
    assert!(d.join("summary/summary.csv").is_file());
}
