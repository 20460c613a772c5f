//! One function per verification suite. Each writes its CSVs and returns a
//! status with a JSON summary.

use crate::config::RunConfig;
use crate::output::{cell, matrix_csv, Csv, OutputDir, Status};
use crate::CliError;
use kicksim_core::dynamics::{NoObserver, SimParams, Simulator};
use kicksim_core::ensemble::{
    abs_momentum_test, clt_tests, drift_decay_scan, energy_growth, estimate_sigma, momentum_ks, run_ensemble,
    run_ensemble_map, EnsembleConfig, GaussianJointReference,
};
use kicksim_core::incursions::{
    count_scaling, detect, drift_antisymmetry, exit_symmetry, Detection, IncursionStats, Thresholds, Verdict,
};
use kicksim_core::records::{
    first_jump_flattening, ladder_cached, memoryless_l1, overshoot_scan, pi_infinity, torus_crossing_scan,
    AveragedWalk, FlatteningConfig, Grid, OvershootConfig, StepLaw, TorusCrossingConfig,
};
use kicksim_core::dynamics::FlowParams;
use kicksim_core::{validate, ModelSpec};
use serde::Serialize;
use serde_json::{json, Value};
use std::path::PathBuf;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Validate,
    Simulate,
    Clt,
    Drift,
    Incursions,
    Records,
    Flatten,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Validate,
        Suite::Simulate,
        Suite::Clt,
        Suite::Drift,
        Suite::Incursions,
        Suite::Records,
        Suite::Flatten,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Validate => "validate",
            Suite::Simulate => "simulate",
            Suite::Clt => "clt",
            Suite::Drift => "drift",
            Suite::Incursions => "incursions",
            Suite::Records => "records",
            Suite::Flatten => "flatten",
        }
    }
}

pub struct SuiteOutcome {
    pub status: Status,
    pub summary: Value,
}

/// Shared state of one run.
pub struct Context<'a> {
    pub cfg: &'a RunConfig,
    pub model: &'a ModelSpec,
    pub workers: usize,
    pub out: &'a mut OutputDir,
}

impl Context<'_> {
    fn ensemble(&self, n: usize, horizon: f64) -> EnsembleConfig {
        let s = &self.cfg.simulation;
        let mut c = EnsembleConfig::new(n, horizon, self.cfg.seed);
        c.s_grid = s.s_grid.clone();
        c.initial = s.initial.clone();
        c.h = s.h;
        c.energy_tol = s.energy_tol;
        c.workers = self.workers;
        c
    }

    fn flow_params(&self) -> FlowParams {
        FlowParams {
            h: self.cfg.simulation.h,
            energy_tol: self.cfg.simulation.energy_tol,
        }
    }
}

pub fn run_suite(suite: Suite, ctx: &mut Context) -> Result<SuiteOutcome, CliError> {
    match suite {
        Suite::Validate => run_validate(ctx),
        Suite::Simulate => run_simulate(ctx),
        Suite::Clt => run_clt(ctx),
        Suite::Drift => run_drift(ctx),
        Suite::Incursions => run_incursions(ctx),
        Suite::Records => run_records(ctx),
        Suite::Flatten => run_flatten(ctx),
    }
}

fn verdict_status(v: Verdict) -> Status {
    match v {
        Verdict::Pass => Status::Pass,
        Verdict::Fail => Status::Fail,
        Verdict::Inconclusive => Status::Inconclusive,
    }
}

fn run_validate(ctx: &mut Context) -> Result<SuiteOutcome, CliError> {
    let report = validate(ctx.model, ctx.cfg.validation.grid)?;
    ctx.out.write_json("validation.json", &report)?;
    Ok(SuiteOutcome {
        status: Status::from_bool(report.passed),
        summary: serde_json::to_value(&report)?,
    })
}

fn run_simulate(ctx: &mut Context) -> Result<SuiteOutcome, CliError> {
    let s = &ctx.cfg.simulation;
    let mut p = SimParams::new(s.t, ctx.cfg.seed);
    p.h = s.h;
    p.energy_tol = s.energy_tol;
    p.record_events = true;
    p.drift_quadrature = true;
    p.predictable_qv = true;
    p.sample_times = s.s_grid.iter().map(|x| x * s.t).collect();
    let sim = Simulator::new(ctx.model, p)?;
    let tr = sim.run_from(&s.initial, 0, &mut NoObserver)?;
    let mut csv = Csv::new(&["t", "cell", "a", "k_pre", "w", "k_post", "fired", "pred_qv"]);
    for e in &tr.events {
        csv.row(&[
            cell(e.t),
            cell(e.cell),
            cell(e.a),
            cell(e.k_pre),
            cell(e.w),
            cell(e.k_post),
            cell(e.fired as u8),
            cell(e.pred_qv),
        ]);
    }
    ctx.out.write("events.csv", &csv.finish())?;
    let mut snaps = Csv::new(&["t", "x", "k", "energy", "kick_sum", "qv", "drift"]);
    for sn in &tr.snapshots {
        snaps.row(&[
            cell(sn.t),
            cell(sn.x),
            cell(sn.k),
            cell(sn.energy),
            cell(sn.kick_sum),
            cell(sn.qv),
            cell(sn.drift),
        ]);
    }
    ctx.out.write("snapshots.csv", &snaps.finish())?;
    let tol = tr.functionals.segments as f64 * s.energy_tol;
    let energy_residual = tr.final_state.energy(ctx.model.potential()) - tr.functionals.energy_bookkeeping;
    let decomposition_residual = tr.decomposition_residual();
    let ok = energy_residual.abs() <= tol && decomposition_residual.abs() <= tol;
    let summary = json!({
        "functionals": tr.functionals,
        "final_state": {"x": tr.final_state.x_line(), "k": tr.final_state.k, "t": tr.final_state.t},
        "energy_residual": energy_residual,
        "decomposition_residual": decomposition_residual,
        "tolerance": tol,
    });
    ctx.out.write_json("trajectory.json", &summary)?;
    Ok(SuiteOutcome {
        status: Status::from_bool(ok),
        summary,
    })
}

fn run_clt(ctx: &mut Context) -> Result<SuiteOutcome, CliError> {
    let s = &ctx.cfg.simulation;
    let c = &ctx.cfg.clt;
    let ec = ctx.ensemble(s.n, s.t);
    let run = run_ensemble(ctx.model, &ec)?;
    let samples = &run.results;
    let sig = estimate_sigma(samples, ctx.model, s.t, c.resamples, ctx.cfg.seed)?;
    let reference = GaussianJointReference::new(sig.quadrature);
    let stats = clt_tests(samples, &s.s_grid, &reference)?;
    let k_ks = momentum_ks(samples, sig.quadrature);
    let abs_ks = abs_momentum_test(samples, sig.quadrature)?;
    let times: Vec<f64> = s.s_grid.iter().map(|x| x * s.t).collect();
    let energy = if times.len() >= 3 {
        Some(energy_growth(samples, &times, c.resamples, ctx.cfg.seed)?)
    } else {
        None
    };
    let d = ctx.model.derived();
    let energy_ok = energy.map(|e| {
        let z = 3.0 * e.slope.se;
        if ctx.model.kicks().is_homogeneous() {
            (e.slope.value - 0.5 * sig.quadrature).abs() <= z
        } else {
            e.slope.value >= 0.5 * d.r1 - z && e.slope.value <= 0.5 * d.r2 + z
        }
    });

    let mut csv = Csv::new(&[
        "s", "mean_x", "mean_k", "cov_xx", "cov_xk", "cov_kk", "ref_xx", "ref_xk", "ref_kk", "ks_statistic", "ks_p",
    ]);
    for r in &stats.rows {
        let cov = reference.covariance(r.s);
        csv.row(&[
            cell(r.s),
            cell(r.mean_x),
            cell(r.mean_k),
            cell(r.cov_xx),
            cell(r.cov_xk),
            cell(r.cov_kk),
            cell(cov[0][0]),
            cell(cov[0][1]),
            cell(cov[1][1]),
            cell(r.ks.statistic),
            cell(r.ks.p_value),
        ]);
    }
    ctx.out.write("clt.csv", &csv.finish())?;

    let checks = json!({
        "sigma_concordant": sig.concordant(3.0),
        "covariance": stats.covariance_rel_error <= c.covariance_tolerance,
        "marginal_ks": stats.rows.iter().all(|r| r.ks.p_value > c.alpha),
        "joint_chi2": stats.joint_chi2_p > c.alpha,
        "momentum_ks": k_ks.p_value > c.alpha,
        "abs_momentum_ks": abs_ks.p_value > c.alpha,
        "energy_slope": energy_ok,
    });
    let ok = checks.as_object().unwrap().values().all(|v| v.as_bool() != Some(false));
    Ok(SuiteOutcome {
        status: Status::from_bool(ok),
        summary: json!({
            "failed_trajectories": run.failed,
            "sigma": sig,
            "stats": stats,
            "momentum_ks": k_ks,
            "abs_momentum_ks": abs_ks,
            "energy_slope": energy,
            "checks": checks,
        }),
    })
}

fn run_drift(ctx: &mut Context) -> Result<SuiteOutcome, CliError> {
    let dc = &ctx.cfg.drift;
    let base = ctx.ensemble(dc.n, dc.horizons[0]);
    let rows = drift_decay_scan(ctx.model, &dc.horizons, &base, dc.resamples)?;
    let mut csv = Csv::new(&["t", "mean", "se"]);
    for r in &rows {
        csv.row(&[cell(r.t), cell(r.mean), cell(r.se)]);
    }
    ctx.out.write("drift.csv", &csv.finish())?;
    let (first, last) = (rows[0], rows[rows.len() - 1]);
    let margin = 2.0 * (first.se.powi(2) + last.se.powi(2)).sqrt();
    let ok = last.mean < first.mean - margin;
    Ok(SuiteOutcome {
        status: Status::from_bool(ok),
        summary: json!({"rows": rows, "decrease": first.mean - last.mean, "margin": margin}),
    })
}

fn run_incursions(ctx: &mut Context) -> Result<SuiteOutcome, CliError> {
    let ic = ctx.cfg.incursions.clone();
    let th = Thresholds {
        lower: ic.lower_exponent,
        upper: ic.upper_exponent,
    };
    let mut per_t = Vec::new();
    let mut last: Vec<Detection> = Vec::new();
    for &t in &ic.horizons {
        let mut ec = ctx.ensemble(ic.n, t);
        ec.record_events = true;
        let run = run_ensemble_map(ctx.model, &ec, |tr| detect(tr, t, &th))?;
        let dets = run.results.into_iter().collect::<Result<Vec<_>, _>>()?;
        per_t.push(IncursionStats::aggregate(t, &dets));
        last = dets;
    }
    let r2 = ctx.model.derived().r2;
    let scaling = count_scaling(&per_t, r2, ic.slack)?;
    let top = per_t.last().unwrap();
    // symmetry verdicts only apply with a declared, verified reflection point
    let pot = ctx.model.potential();
    let declared = pot.reflection_point().is_some() || pot.is_zero();
    let symmetric = declared
        && validate(ctx.model, ctx.cfg.validation.grid)?
            .check("iii")
            .is_some_and(|c| c.passed);
    let sym = exit_symmetry(top);
    let anti = drift_antisymmetry(top);

    let mut csv = Csv::new(&[
        "t", "trajectories", "n_y", "n_plus", "n_minus", "mean_count", "mean_count_se", "normalized", "bound",
        "mean_duration", "rho_pp", "rho_pm", "rho_mp", "rho_mm", "c_pp", "c_pm", "c_mp", "c_mm", "rms_y",
    ]);
    for (s, row) in per_t.iter().zip(&scaling.rows) {
        csv.row(&[
            cell(s.t),
            cell(s.trajectories),
            cell(s.n_y),
            cell(s.n_plus),
            cell(s.n_minus),
            cell(s.mean_count),
            cell(s.mean_count_se),
            cell(row.normalized),
            cell(row.bound),
            cell(s.mean_duration),
            cell(s.rho[0][0]),
            cell(s.rho[0][1]),
            cell(s.rho[1][0]),
            cell(s.rho[1][1]),
            cell(s.c[0][0].mean),
            cell(s.c[0][1].mean),
            cell(s.c[1][0].mean),
            cell(s.c[1][1].mean),
            cell(s.rms_y),
        ]);
    }
    ctx.out.write("incursions.csv", &csv.finish())?;
    let mut ev = Csv::new(&["trajectory", "j", "sigma", "varsigma", "theta", "s1", "s2", "Y"]);
    for (i, d) in last.iter().take(ic.csv_trajectories).enumerate() {
        for inc in &d.complete {
            ev.row(&[
                cell(i),
                cell(inc.j),
                cell(inc.sigma),
                cell(inc.varsigma),
                cell(inc.theta),
                cell(inc.s1),
                cell(inc.s2),
                cell(inc.y),
            ]);
        }
    }
    ctx.out.write("incursion_events.csv", &ev.finish())?;

    let mut status = Status::from_bool(scaling.passed && per_t.iter().all(|s| s.rms_y < 5.0));
    if symmetric {
        status = status.and(verdict_status(sym.verdict)).and(verdict_status(anti.verdict));
    } else {
        status = status.and(Status::Inconclusive);
    }
    Ok(SuiteOutcome {
        status,
        summary: json!({
            "per_horizon": per_t,
            "count_scaling": scaling,
            "reflection_symmetric": symmetric,
            "exit_symmetry": sym,
            "drift_antisymmetry": anti,
        }),
    })
}

fn run_records(ctx: &mut Context) -> Result<SuiteOutcome, CliError> {
    let rc = ctx.cfg.records.clone();
    let walk = AveragedWalk::from_model(ctx.model)?;
    let grid = Grid::for_scale(walk.scale(), rc.bins);
    let cache = rc.cache_dir.as_ref().map(PathBuf::from);
    let table = ladder_cached(&walk, rc.records, ctx.cfg.seed, grid, cache.as_deref())?;
    let pi = pi_infinity(&table)?;
    let meta = |what: &str, level: Option<f64>| {
        let lv = level.map(|l| format!(" level={l}")).unwrap_or_default();
        format!(
            "matrix={what}{lv} rows=v cols=w bins={} v_max={} w_max={}",
            grid.bins, grid.v_max, grid.v_max
        )
    };
    ctx.out.write("ladder.csv", &matrix_csv(&meta("D", None), grid.bins, &table.masses))?;
    ctx.out.write("pi_infinity.csv", &matrix_csv(&meta("pi_infinity", None), grid.bins, &pi))?;
    let oc = OvershootConfig {
        levels: rc.levels.clone(),
        samples: rc.samples,
        seed: ctx.cfg.seed,
        resamples: rc.resamples,
    };
    let tabs = overshoot_scan(&table, &oc)?;
    let mut dist = Csv::new(&["level", "l1", "l1_se", "folded"]);
    for t in &tabs {
        ctx.out.write(
            &format!("overshoot_L{}.csv", t.level),
            &matrix_csv(&meta("pi_L", Some(t.level)), grid.bins, &t.masses),
        )?;
        dist.row(&[cell(t.level), cell(t.l1), cell(t.l1_se), cell(t.folded)]);
    }
    ctx.out.write("records_distances.csv", &dist.finish())?;

    let positive: Vec<_> = tabs.iter().filter(|t| t.level > 0.0).cloned().collect();
    let mut checks = serde_json::Map::new();
    if let Some(zero) = tabs.iter().find(|t| t.level == 0.0) {
        if rc.samples == rc.records {
            checks.insert("pi0_equals_d".into(), json!(zero.masses == table.masses));
        }
    }
    checks.insert(
        "monotone".into(),
        json!(kicksim_core::records::monotone_within(&positive, 2.0)),
    );
    let top = tabs.last().unwrap();
    checks.insert("top_level_l1".into(), json!(top.l1 < rc.l1_tolerance));
    let memoryless = match walk.law {
        StepLaw::Laplace { scale } => {
            let d = memoryless_l1(&pi, &grid, scale);
            checks.insert("memoryless".into(), json!(d < rc.memoryless_tolerance));
            Some(d)
        }
        _ => None,
    };
    let mut torus = Vec::new();
    if !rc.torus_levels.is_empty() {
        let mut tc = TorusCrossingConfig::new(rc.torus_levels.clone(), rc.torus_samples, ctx.cfg.seed);
        tc.flow = ctx.flow_params();
        torus = torus_crossing_scan(ctx.model, &table, &tc)?;
        let mut csv = Csv::new(&["level", "samples", "truncated", "l1", "a_l1", "a_p_value"]);
        for t in &torus {
            csv.row(&[
                cell(t.level),
                cell(t.samples),
                cell(t.truncated),
                cell(t.l1),
                cell(t.a_l1),
                cell(t.a_p_value),
            ]);
            let m = format!("matrix=phi level={} rows=a cols=v a_bins={} v_bins={} v_max={}", t.level, t.a_bins, t.v_bins, t.v_max);
            ctx.out.write(&format!("torus_L{}.csv", t.level), &matrix_csv(&m, t.v_bins, &t.empirical))?;
        }
        ctx.out.write("torus_crossings.csv", &csv.finish())?;
    }
    let ok = checks.values().all(|v| v.as_bool() == Some(true));
    let rows: Vec<Value> = tabs
        .iter()
        .map(|t| json!({"level": t.level, "l1": t.l1, "l1_se": t.l1_se, "folded": t.folded}))
        .collect();
    let torus_rows: Vec<Value> = torus
        .iter()
        .map(|t| json!({"level": t.level, "samples": t.samples, "truncated": t.truncated, "l1": t.l1, "a_l1": t.a_l1, "a_p_value": t.a_p_value}))
        .collect();
    Ok(SuiteOutcome {
        status: Status::from_bool(ok),
        summary: json!({
            "ladder": {
                "records": table.records(),
                "truncated": table.truncated,
                "mean_height": table.mean_height,
                "mean_height_se": table.mean_height_se,
                "folded": table.folded,
                "grid": grid,
            },
            "overshoots": rows,
            "memoryless_l1": memoryless,
            "torus": torus_rows,
            "checks": checks,
        }),
    })
}

fn run_flatten(ctx: &mut Context) -> Result<SuiteOutcome, CliError> {
    let fc = &ctx.cfg.flatten;
    let cfg = FlatteningConfig {
        momenta: fc.momenta.clone(),
        bins: fc.bins,
        x0: fc.x0,
        slack: fc.slack,
        seed: ctx.cfg.seed,
        flow: ctx.flow_params(),
    };
    let report = first_jump_flattening(ctx.model, &cfg)?;
    let mut csv = Csv::new(&["k", "samples", "sup_deviation", "envelope", "bound", "chi2_p"]);
    for r in &report.rows {
        csv.row(&[
            cell(r.k),
            cell(r.samples),
            cell(r.sup_deviation),
            cell(r.envelope),
            cell(r.bound),
            cell(r.chi2_p),
        ]);
    }
    ctx.out.write("flatten.csv", &csv.finish())?;
    let slope_ok = report.rows.len() < 2 || (report.slope >= fc.slope_range.0 && report.slope <= fc.slope_range.1);
    Ok(SuiteOutcome {
        status: Status::from_bool(report.passed && slope_ok),
        summary: json!({"report": report, "slope_ok": slope_ok}),
    })
}
