//! Acceptance criteria, one test each. Every test prints a single
//! `[PASS]`/`[FAIL]` line straight to stdout, so the lines show up even when
//! libtest captures output.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use stiffsde::noise::NormalStream;
use stiffsde::{
    audit_condition, catalog, divergence_demo, explicit_em_step, moment_bound_study, run_path, solve_implicit,
    stability_study, strong_error_study, theta_em_step, BrownianGrid, Condition, Monitors, PathState, ProbeSpec,
    SchemeConfig, SolverConfig, SolverMethod, StabilitySpec, StrongErrorSpec, TimePartition,
};

fn verdict(name: &str, pass: bool, detail: String) {
    let line = format!("[{}] {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stdout().write_all(line.as_bytes());
    assert!(pass, "{name}: {detail}");
}

fn stiffsde(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_stiffsde"))
        .args(args)
        .env_remove("STIFFSDE_OUT")
        .output()
        .expect("binary runs")
}

#[test]
fn desk_scale_strong_error_slope() {
    let entry = catalog::build("cubic", &[]).unwrap();
    assert_eq!(entry.parameter("b"), Some(0.2f64.sqrt()));
    let spec = StrongErrorSpec::desk_scale(42);
    let start = Instant::now();
    let r = strong_error_study(&entry, &spec).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = (0.8..=1.2).contains(&r.fitted_slope) && secs <= 180.0;
    verdict(
        "desk-scale strong error",
        pass,
        format!(
            "MSE slope {:.4} (se {:.4}) in [0.8, 1.2], {secs:.1} s",
            r.fitted_slope, r.slope_se
        ),
    );
}

#[test]
fn fbem_identity() {
    let entry = catalog::build("cubic", &[]).unwrap();
    let partition = TimePartition::dyadic(1.0, 6).unwrap();
    let cfg = SchemeConfig::theta_em(1.0, partition.dt());
    let mon = Monitors {
        fbem: true,
        ..Monitors::none()
    };
    let mut worst: f64 = 0.0;
    for p in 0..100 {
        let grid = BrownianGrid::generate_path(partition, 1, 42, p).unwrap();
        let t = run_path(entry.model(), &cfg, &grid, &[1.0], &mon).unwrap();
        assert!(!t.blew_up());
        worst = worst.max(t.fbem.unwrap().max_defect);
    }
    verdict(
        "FBEM identity",
        worst <= 1e-10,
        format!("max scaled defect {worst:.3e} <= 1e-10 over 100 paths"),
    );
}

#[test]
fn theta_zero_is_explicit_em() {
    let entry = catalog::build("cubic", &[]).unwrap();
    let model = entry.model();
    let dt = 2f64.powi(-10);
    let grid = BrownianGrid::generate_path(TimePartition::new(1000.0 * dt, 1000).unwrap(), 1, 42, 0).unwrap();
    let theta0 = SchemeConfig {
        allow_low_theta: true,
        ..SchemeConfig::theta_em(0.0, dt)
    };
    let explicit = SchemeConfig::explicit_em(dt);
    let mut a = PathState::new(model, &[1.0], false).unwrap();
    let mut b = a.clone();
    let mut worst: f64 = 0.0;
    for k in 0..1000 {
        a = theta_em_step(&a, grid.increment(k), model, &theta0).unwrap();
        b = explicit_em_step(&b, grid.increment(k), model, &explicit).unwrap();
        worst = worst.max((a.x[0] - b.x[0]).abs());
    }
    verdict(
        "theta degeneracy",
        worst <= 1e-12,
        format!("max |θ=0 − explicit| {worst:.3e} <= 1e-12 over 1000 steps"),
    );
}

#[test]
fn solver_methods_agree() {
    let entry = catalog::build("cubic", &[]).unwrap();
    let field = entry.model().drift_field();
    let mut rng = NormalStream::new(42, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let b = 200.0 * rng.next_uniform() - 100.0;
        let root = |m: SolverMethod| {
            solve_implicit(field, 1.0, 0.25, &[b], &SolverConfig::with_method(m), &[b])
                .unwrap()
                .root[0]
        };
        let newton = root(SolverMethod::Newton);
        let hybrid = root(SolverMethod::ScalarHybrid);
        let closed = root(SolverMethod::ClosedFormCubic);
        worst = worst
            .max((newton - hybrid).abs())
            .max((newton - closed).abs())
            .max((hybrid - closed).abs());
    }
    verdict(
        "solver agreement",
        worst <= 1e-10,
        format!("max pairwise gap {worst:.3e} <= 1e-10 over 1000 b"),
    );
}

#[test]
fn divergence_contrast() {
    let entry = catalog::build("cubic", &[]).unwrap();
    let r = divergence_demo(&entry, &[0.25], 1000, &[5.0], 1.0, 42).unwrap();
    let explicit = r.rows.iter().find(|row| !row.scheme.is_implicit()).unwrap();
    let bem = r.rows.iter().find(|row| row.scheme.is_implicit()).unwrap();
    let moment = bem.endpoint_second_moment.unwrap_or(f64::INFINITY);
    let bound = bem.bound_thm37.unwrap_or(f64::NAN);
    let pass = explicit.blowup_fraction >= 0.5 && bem.blowups == 0 && moment <= bound;
    verdict(
        "divergence contrast",
        pass,
        format!(
            "explicit blow-up fraction {:.3} (need >= 0.5), BEM blow-ups {} (need 0), BEM E|X_T|^2 {moment:.4} <= bound {bound:.4}",
            explicit.blowup_fraction, bem.blowups
        ),
    );
}

#[test]
fn moment_bounds_hold() {
    let entry = catalog::build("cubic", &[]).unwrap();
    let cfg = SchemeConfig::theta_em(1.0, 2f64.powi(-6));
    let r = moment_bound_study(&entry, &cfg, 1.0, 10_000, &[1.0], 42, 16).unwrap();
    // (‖x₀‖² + 2αT)·e^{2βT} with α = β = μ/2 = 0.25.
    let thm22 = (1.0 + 0.5f64) * 0.5f64.exp();
    assert!((r.bound_thm22 - thm22).abs() < 1e-12);
    verdict(
        "moment bounds",
        r.thm37_pass() && r.thm22_pass(),
        format!(
            "scheme sup E|X|^2 + CI {:.4} <= {:.4}, proxy {:.4} <= {:.4}",
            r.scheme_sup_upper, r.bound_thm37, r.proxy_sup_upper, r.bound_thm22
        ),
    );
}

#[test]
fn lemma33_on_random_probes() {
    let entry = catalog::build("cubic", &[]).unwrap();
    let (model, profile) = (entry.model(), entry.profile());
    let probes = ProbeSpec {
        grid_per_axis: 0,
        cloud_points: 1000,
        sweep_radius: None,
        sweep_points: 0,
        pair_count: 0,
        ..ProbeSpec::default_for(1).with_seed(42)
    };
    let mut worst = f64::INFINITY;
    let mut probes_seen = 0;
    for (theta, dt) in [(0.5, 0.5), (0.75, 1.0), (1.0, 0.25), (1.0, 1.9)] {
        let a = audit_condition(model, profile, &Condition::Lemma33 { theta, dt }, &probes).unwrap();
        worst = worst.min(a.worst_margin);
        probes_seen = a.probes;

        // Direct evaluation on an independent sample.
        let mut rng = NormalStream::new(7, 0);
        for _ in 0..1000 {
            let x = 20.0 * rng.next_uniform() - 10.0;
            let f = 0.5 - 0.2 * x * x * x;
            let fx = x - theta * f * dt;
            let rhs = (fx * fx + 2.0 * theta * profile.alpha * dt) / (1.0 - 2.0 * profile.beta * theta * dt);
            worst = worst.min(rhs - x * x);
        }
    }
    verdict(
        "lemma33 probes",
        probes_seen == 1000 && worst >= -1e-12,
        format!("worst margin {worst:.3e} >= -1e-12 over 1000 probes at 4 admissible (θ, Δt)"),
    );
}

#[test]
fn long_horizon_stability() {
    let entry = catalog::build("stable-cubic", &[]).unwrap();
    let spec = StabilitySpec {
        cfg: SchemeConfig::theta_em(1.0, 0.01),
        z: std::sync::Arc::new(|x: &[f64]| 0.5 * x[0] * x[0]),
        horizon_steps: 100_000,
        n_paths: 100,
        x0: vec![1.0],
        seed: 42,
        tol_stab: 1e-2,
        trace_points: 100,
    };
    let start = Instant::now();
    let r = stability_study(&entry, &spec).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = r.audit.passed() && r.fraction_converged == 1.0 && r.all_nondecreasing && secs <= 60.0;
    verdict(
        "stability",
        pass,
        format!(
            "stab_em audit {}, fraction converged {}, LaSalle sums nondecreasing {}, {secs:.1} s",
            r.audit.verdict(),
            r.fraction_converged,
            r.all_nondecreasing
        ),
    );
}

#[test]
fn step_guard_rejects_large_steps() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let profile = *catalog::build("cubic", &[]).unwrap().profile();
    let mut failures = Vec::new();
    for (theta, dt) in [(1.0, 2.0), (1.0, 5.0), (0.5, 4.0)] {
        let dt_star = 1.0 / (theta * profile.one_sided_lipschitz.max(2.0 * profile.beta));
        assert!(dt >= dt_star);
        let o = stiffsde(&[
            "moment-bound",
            "--theta",
            &theta.to_string(),
            "--dt",
            &dt.to_string(),
            "--out",
            out,
        ]);
        let stderr = String::from_utf8_lossy(&o.stderr);
        let want = format!("Δt={dt} ≥ 1/(θ·max{{L,2β}})={dt_star}");
        if o.status.code() != Some(2) || !stderr.contains(&want) {
            failures.push(format!(
                "θ={theta} Δt={dt}: exit {:?}, stderr {stderr:?}",
                o.status.code()
            ));
        }
    }
    let ok = stiffsde(&["bounds", "--dt", "1.99", "--out", out]);
    if ok.status.code() != Some(0) {
        failures.push(format!(
            "admissible Δt=1.99 rejected: {}",
            String::from_utf8_lossy(&ok.stderr)
        ));
    }
    verdict(
        "Δt* guard",
        failures.is_empty(),
        if failures.is_empty() {
            "3 inadmissible configs exit 2 with the inequality, admissible one runs".into()
        } else {
            failures.join("; ")
        },
    );
}

fn csv_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn reproducible_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let runs: &[(&str, &[&str])] = &[
        (
            "strong-error",
            &["--paths", "300", "--set", "ref_level=10", "--set", "levels=9,7,5"],
        ),
        ("divergence", &["--paths", "500", "--set", "dt_list=0.25,0.125"]),
        ("moment-bound", &["--paths", "500", "--set", "dump_paths=2"]),
        ("stability", &["--paths", "20", "--set", "steps=20000"]),
    ];
    let mut failures = Vec::new();
    for (command, extra) in runs {
        let mut outputs = Vec::new();
        for (i, workers) in ["1", "4", "4", "3"].iter().enumerate() {
            let out = dir.path().join(format!("{command}-{i}"));
            let mut args = vec![
                *command,
                "--seed",
                "7",
                "--workers",
                workers,
                "--out",
                out.to_str().unwrap(),
            ];
            args.extend_from_slice(extra);
            let o = stiffsde(&args);
            assert_eq!(
                o.status.code(),
                Some(0),
                "{command}: {}",
                String::from_utf8_lossy(&o.stderr)
            );
            outputs.push(csv_bytes(&out));
        }
        assert!(!outputs[0].is_empty());
        if outputs.iter().any(|o| *o != outputs[0]) {
            failures.push(command.to_string());
        }
    }
    verdict(
        "reproducibility",
        failures.is_empty(),
        if failures.is_empty() {
            "byte-identical CSVs for 4 experiments at workers 1, 3, 4".into()
        } else {
            format!("CSV bytes differ for {}", failures.join(", "))
        },
    );
}
