//! CSV rendering of study reports.
//!
//! Every table starts with a `# schema=1` comment line, then a header row.
//! Reals are written in shortest round-trip exponent form, fields are comma
//! separated, lines end in LF. Vector-valued fields join components with `;`.

use std::fmt::Write;

use crate::analysis::{BoundReport, ConditionAudit};
use crate::experiments::{DivergenceReport, MomentReport, StabilityReport, StrongErrorReport};
use crate::scheme::Trajectory;

pub const SCHEMA_LINE: &str = "# schema=1";

/// Shortest representation that parses back to the same `f64`.
pub fn real(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:e}")
    }
}

fn vector(v: &[f64]) -> String {
    v.iter().map(|x| real(*x)).collect::<Vec<_>>().join(";")
}

fn table(header: &str) -> String {
    format!("{SCHEMA_LINE}\n{header}\n")
}

/// `levels.csv`: one row per test level.
pub fn levels_csv(r: &StrongErrorReport) -> String {
    let mut out = table("level,dt,n_paths,mse,ci_halfwidth,err_s1,err_s1_ci,err_s1_5,err_s1_5_ci");
    for l in &r.levels {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            l.level,
            real(l.dt),
            l.n_paths,
            real(l.mse),
            real(l.ci_halfwidth),
            real(l.err_s1),
            real(l.err_s1_ci),
            real(l.err_s15),
            real(l.err_s15_ci)
        );
    }
    out
}

/// `fit.csv`: the log-log slope fit.
pub fn fit_csv(r: &StrongErrorReport) -> String {
    let mut out = table("fitted_slope,fit_intercept,slope_se,reference_dt,reference_level,seed,weighted");
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{}",
        real(r.fitted_slope),
        real(r.fit_intercept),
        real(r.slope_se),
        real(r.reference_dt),
        r.reference_level,
        r.seed,
        r.weighted_fit
    );
    out
}

/// `divergence.csv`: one row per (scheme, Δt). An empty moment field means
/// the sample moment is infinite because some path blew up.
pub fn divergence_csv(r: &DivergenceReport) -> String {
    let mut out = table(
        "scheme,dt,n_paths,blowups,blowup_fraction,max_finite_norm,endpoint_second_moment,endpoint_ci,moment_infinite,bound_thm37",
    );
    let opt = |v: Option<f64>| v.map(real).unwrap_or_default();
    for row in &r.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            row.scheme,
            real(row.dt),
            row.n_paths,
            row.blowups,
            real(row.blowup_fraction),
            real(row.max_finite_norm),
            opt(row.endpoint_second_moment),
            opt(row.endpoint_ci),
            row.endpoint_second_moment.is_none(),
            opt(row.bound_thm37)
        );
    }
    out
}

/// `moment.csv`: scheme and proxy second moments per grid time.
pub fn moment_csv(r: &MomentReport) -> String {
    let mut out = table("k,t,scheme_moment,scheme_ci,proxy_moment,proxy_ci,thm22_at_t");
    for p in &r.points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.k,
            real(p.t),
            real(p.scheme.mean),
            real(p.scheme.ci_halfwidth),
            real(p.proxy.mean),
            real(p.proxy.ci_halfwidth),
            real(p.thm22_at_t)
        );
    }
    out
}

/// `moment_summary.csv`: each bound against its empirical counterpart.
pub fn moment_summary_csv(r: &MomentReport) -> String {
    let mut out = table("bound_id,bound,empirical_upper,pass,n_paths,dt,proxy_dt,T");
    for (id, bound, emp, pass) in [
        ("thm37_moment", r.bound_thm37, r.scheme_sup_upper, r.thm37_pass()),
        ("thm22_moment", r.bound_thm22, r.proxy_sup_upper, r.thm22_pass()),
    ] {
        let _ = writeln!(
            out,
            "{id},{},{},{},{},{},{},{}",
            real(bound),
            real(emp),
            pass,
            r.n_paths,
            real(r.dt),
            real(r.proxy_dt),
            real(r.t_end)
        );
    }
    out
}

/// `stability.csv`: one row per path.
pub fn stability_csv(r: &StabilityReport) -> String {
    let mut out = table(
        "path,final_norm,sup_tail_norm,z_final,converged,blowup_step,lasalle_min_term,lasalle_nondecreasing,failure",
    );
    for p in &r.paths {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            p.path,
            real(p.final_norm),
            real(p.sup_tail_norm),
            real(p.z_final),
            p.converged,
            p.blowup_step.map(|s| s.to_string()).unwrap_or_default(),
            real(p.lasalle_min_term),
            p.lasalle_nondecreasing,
            p.failure.as_deref().map(quote).unwrap_or_default()
        );
    }
    out
}

/// `stability_traces.csv`: downsampled norm and LaSalle-sum traces.
pub fn stability_traces_csv(r: &StabilityReport) -> String {
    let mut out = table("path,k,t,norm_sq,lasalle_sum");
    for p in &r.paths {
        for &(k, n2, s) in &p.trace {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                p.path,
                k,
                real(k as f64 * r.dt),
                real(n2),
                real(s)
            );
        }
    }
    out
}

/// `conditions.csv`: one row per audited condition.
pub fn conditions_csv(audits: &[ConditionAudit]) -> String {
    let mut out = table("condition_id,verdict,worst_margin,worst_point,probes,radius");
    for a in audits {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            a.condition,
            a.verdict(),
            real(a.worst_margin),
            vector(&a.worst_point),
            a.probes,
            real(a.radius)
        );
    }
    out
}

/// `bounds.csv`: one row per bound with its inputs as `name=value` pairs.
pub fn bounds_csv(bounds: &[BoundReport]) -> String {
    let mut out = table("bound_id,value,inputs");
    for b in bounds {
        let inputs = b
            .inputs
            .iter()
            .map(|(k, v)| format!("{k}={}", real(*v)))
            .collect::<Vec<_>>()
            .join(";");
        let _ = writeln!(out, "{},{},{}", b.bound, real(b.value), inputs);
    }
    out
}

/// Trajectory dump: `step,t,x_1..x_n,norm_sq,blownup`. Needs a trajectory
/// recorded with the `states` monitor; `None` otherwise. A blown-up path ends
/// with a row at the blow-up step whose state columns are empty.
pub fn trajectory_csv(traj: &Trajectory) -> Option<String> {
    let states = traj.states.as_ref()?;
    let n = traj.x0.len();
    let xs: Vec<String> = (1..=n).map(|i| format!("x_{i}")).collect();
    let mut out = table(&format!("step,t,{},norm_sq,blownup", xs.join(",")));
    for (k, x) in states.chunks(n).enumerate() {
        let cols: Vec<String> = x.iter().map(|v| real(*v)).collect();
        let n2: f64 = x.iter().map(|v| v * v).sum();
        let _ = writeln!(
            out,
            "{k},{},{},{},false",
            real(k as f64 * traj.dt),
            cols.join(","),
            real(n2)
        );
    }
    if let Some(b) = traj.blowup {
        let _ = writeln!(
            out,
            "{},{},{},{},true",
            b.step,
            real(b.step as f64 * traj.dt),
            vec![""; n].join(","),
            real(b.norm * b.norm)
        );
    }
    Some(out)
}

/// RFC-4180 quoting for free text.
fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\"").replace('\n', " "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{BoundId, ConditionId};

    #[test]
    fn reals_round_trip() {
        for v in [0.0, 1.0, -2.5, 1e-300, 0.1 + 0.2, 2f64.powi(-12), 12345.678] {
            assert_eq!(real(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(real(f64::INFINITY), "inf");
        assert_eq!(real(f64::NAN), "nan");
    }

    #[test]
    fn tables_carry_schema_and_header() {
        let a = ConditionAudit {
            condition: ConditionId::Monotone,
            worst_margin: -0.5,
            worst_point: vec![1.0, 2.0],
            probes: 3,
            radius: 10.0,
        };
        let csv = conditions_csv(&[a]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], SCHEMA_LINE);
        assert_eq!(lines[1], "condition_id,verdict,worst_margin,worst_point,probes,radius");
        assert_eq!(lines[2], "monotone,fail,-5e-1,1e0;2e0,3,1e1");
        assert!(csv.ends_with('\n') && !csv.contains('\r'));

        let b = BoundReport {
            bound: BoundId::Lemma33,
            value: 2.0,
            inputs: vec![("alpha", 0.25)],
        };
        assert_eq!(bounds_csv(&[b]).lines().nth(2).unwrap(), "lemma33,2e0,alpha=2.5e-1");
    }

    #[test]
    fn trajectory_dump_marks_blowup() {
        use crate::model::catalog;
        use crate::noise::{BrownianGrid, TimePartition};
        use crate::scheme::{run_path, Monitors, SchemeConfig};

        let entry = catalog::build("cubic", &[]).unwrap();
        let grid = BrownianGrid::zeros(TimePartition::new(1.0, 4).unwrap(), 1).unwrap();
        let mon = Monitors {
            states: true,
            ..Monitors::none()
        };
        let ok = run_path(entry.model(), &SchemeConfig::theta_em(1.0, 0.25), &grid, &[1.0], &mon).unwrap();
        let csv = trajectory_csv(&ok).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[1], "step,t,x_1,norm_sq,blownup");
        assert_eq!(lines.len(), 2 + 5);
        assert_eq!(lines[2], "0,0e0,1e0,1e0,false");

        // x0 = 10 with Δt = 0.25: explicit EM overflows within a few steps.
        let grid = BrownianGrid::zeros(TimePartition::new(2.0, 8).unwrap(), 1).unwrap();
        let bad = run_path(entry.model(), &SchemeConfig::explicit_em(0.25), &grid, &[10.0], &mon).unwrap();
        assert!(bad.blew_up());
        let last = trajectory_csv(&bad).unwrap().lines().last().unwrap().to_string();
        assert!(last.ends_with(",true"));
        assert_eq!(last.split(',').nth(2), Some(""));
        assert!(trajectory_csv(
            &run_path(
                entry.model(),
                &SchemeConfig::theta_em(1.0, 0.25),
                &grid,
                &[1.0],
                &Monitors::none()
            )
            .unwrap()
        )
        .is_none());
    }

    #[test]
    fn quoting_escapes_quotes() {
        assert_eq!(quote("a \"b\", c"), "\"a \"\"b\"\", c\"");
    }
}
