use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn stiffsde(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_stiffsde"));
    c.args(args).env_remove("STIFFSDE_OUT");
    for (k, v) in envs {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn run(args: &[&str]) -> Output {
    stiffsde(args, &[])
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

const SMALL_STRONG: &[&str] = &["--paths", "100", "--set", "ref_level=8", "--set", "levels=7,5,3"];

#[test]
fn empty_argv_prints_usage() {
    let o = run(&[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("Usage"));
}

#[test]
fn list_models_names_the_catalog() {
    let o = run(&["list-models"]);
    assert_eq!(o.status.code(), Some(0));
    let out = text(&o.stdout);
    for label in ["cubic", "electricity", "lotka2", "ait-sahalia", "stable-cubic"] {
        assert!(out.contains(label), "{label}");
    }
}

#[test]
fn strong_error_writes_tables_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("se");
    let mut args = vec!["strong-error", "--out", out.to_str().unwrap()];
    args.extend_from_slice(SMALL_STRONG);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    let summary = text(&o.stdout);
    assert_eq!(summary.lines().count(), 1);
    assert!(summary.contains("fitted slope"));

    let levels = fs::read_to_string(out.join("levels.csv")).unwrap();
    let mut lines = levels.lines();
    assert_eq!(lines.next(), Some("# schema=1"));
    assert_eq!(
        lines.next(),
        Some("level,dt,n_paths,mse,ci_halfwidth,err_s1,err_s1_ci,err_s1_5,err_s1_5_ci")
    );
    assert_eq!(lines.count(), 3);
    assert!(out.join("fit.csv").exists());
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    for key in [
        "command=strong-error",
        "model=cubic",
        "param.mu=0.5",
        "seed=42",
        "paths=100",
        "levels=7,5,3",
    ] {
        assert!(manifest.lines().any(|l| l == key), "{key} missing from\n{manifest}");
    }
}

#[test]
fn manifest_reruns_the_same_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let mut args = vec!["strong-error", "--seed", "5", "--out", first.to_str().unwrap()];
    args.extend_from_slice(SMALL_STRONG);
    assert_eq!(run(&args).status.code(), Some(0));

    let second = dir.path().join("b");
    let manifest = first.join("manifest.txt");
    let o = run(&[
        "strong-error",
        "--config",
        manifest.to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    for f in ["levels.csv", "fit.csv"] {
        assert_eq!(
            fs::read(first.join(f)).unwrap(),
            fs::read(second.join(f)).unwrap(),
            "{f}"
        );
    }
    let strip_out = |p: &Path| {
        fs::read_to_string(p)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("out="))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip_out(&manifest), strip_out(&second.join("manifest.txt")));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# divergence demo\nseed = 3\npaths = 40\nparam.mu = 0.3\n").unwrap();
    let out = dir.path().join("d");
    let o = run(&[
        "divergence",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "9",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("\nseed=9\n"));
    assert!(manifest.contains("\npaths=40\n"));
    assert!(manifest.contains("\nparam.mu=0.3\n"));
}

#[test]
fn divergence_summary_names_both_schemes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["divergence", "--paths", "200", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let s = text(&o.stdout);
    assert!(
        s.contains("explicit_em") && s.contains("theta_em") && s.matches("blow-up fraction").count() == 2,
        "{s}"
    );
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = stiffsde(&["bounds"], &[("STIFFSDE_OUT", dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    let bounds = fs::read_to_string(dir.path().join("bounds").join("bounds.csv")).unwrap();
    let ids: Vec<&str> = bounds.lines().skip(2).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids, ["thm22_moment", "thm22_exit_prob", "thm37_moment", "lemma33"]);
}

#[test]
fn check_conditions_reports_each_condition() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "check-conditions",
        "--model",
        "electricity",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("conditions.csv")).unwrap();
    assert!(csv
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("condition_id,verdict,worst_margin,worst_point"));
    for id in [
        "monotone",
        "one_sided_lipschitz",
        "poly_growth",
        "split_con2",
        "stab_em",
        "lemma33",
    ] {
        assert!(csv.lines().any(|l| l.starts_with(&format!("{id},"))), "{id}");
    }
}

#[test]
fn config_errors_exit_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    for args in [
        vec!["bounds", "--model", "nope"],
        vec!["bounds", "--param", "zeta=1"],
        vec!["bounds", "--set", "colour=blue"],
        vec!["bounds", "--theta", "1.5"],
        vec!["moment-bound", "--theta", "0.25"],
        vec!["strong-error", "--set", "levels=13"],
        vec!["bounds", "--x0", "1,2"],
        vec!["bounds", "--model", "cubic", "--param", "a=0.01"],
        vec!["bounds", "--dt", "fast"],
    ] {
        let mut a = args.clone();
        a.extend(["--out", out.to_str().unwrap()]);
        let o = run(&a);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", text(&o.stderr));
        assert!(text(&o.stderr).starts_with("error"), "{args:?}");
    }
    assert!(!out.exists());
}

#[test]
fn low_theta_needs_the_override() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["moment-bound", "--theta", "0.25", "--paths", "50", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&[
        "moment-bound",
        "--theta",
        "0.25",
        "--paths",
        "50",
        "--allow-unsafe",
        "--out",
        out,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
}

#[test]
fn runtime_failure_leaves_manifest_and_error_only() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("moment.csv"), "stale").unwrap();
    let o = run(&[
        "moment-bound",
        "--paths",
        "20",
        "--solver",
        "fixed_point",
        "--max-iter",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let mut names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["error.txt", "manifest.txt"]);
    assert!(fs::read_to_string(dir.path().join("error.txt"))
        .unwrap()
        .contains("did not converge"));
}

#[test]
fn trajectory_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "moment-bound",
        "--paths",
        "30",
        "--set",
        "dump_paths=2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    let t = fs::read_to_string(dir.path().join("trajectory_1.csv")).unwrap();
    assert_eq!(t.lines().nth(1), Some("step,t,x_1,norm_sq,blownup"));
    assert_eq!(t.lines().count(), 2 + 65);
    assert!(!dir.path().join("trajectory_2.csv").exists());
}
