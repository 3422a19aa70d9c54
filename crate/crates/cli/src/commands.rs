use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;

use wdiff::bel::{check_idiosyncratic_ibp, estimate_gradient_bel, rate_sweep, IbpReport, RateTable};
use wdiff::config::{ExperimentConfig, Manifest, Scenario};
use wdiff::functional::GradientReport;
use wdiff::geometry::{quantile_to_density, TWO_PI};
use wdiff::montecarlo::{effective_direction, gradient_direct, gradient_fd, SimParams};
use wdiff::noise::{CommonNoise, NoiseKey};
use wdiff::sde::{evolve, moment_suite, realized_qv, steps_for, MomentReport};
use wdiff::spde::{density_compare, evolve_density, DensityComparison, LambdaMode};
use wdiff::validation::{sweep_with_k, CheckResult, Validator, CRITERIA};
use wdiff::{Error, Result};

use crate::plot::{line_chart, Series};
use crate::{Command, Outcome};

/// Output directory, manifest and plot switch of one run.
struct Run {
    dir: PathBuf,
    name: &'static str,
    manifest: Manifest,
    plot: bool,
}

impl Run {
    fn new(name: &'static str, config: &ExperimentConfig, plot: bool) -> Result<Self> {
        let dir = config.output_dir.clone();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            name,
            manifest: Manifest::new(name, config)?,
            plot,
        })
    }

    fn write(&mut self, file: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let mut w = BufWriter::new(File::create(self.dir.join(file))?);
        f(&mut w)?;
        w.flush()?;
        self.manifest.push("output", file);
        Ok(())
    }

    fn chart(&mut self, file: &str, title: &str, x: &str, y: &str, series: &[Series]) -> Result<()> {
        if !self.plot {
            return Ok(());
        }
        line_chart(&self.dir.join(file), title, x, y, series).map_err(Error::Io)?;
        self.manifest.push("plot", file);
        Ok(())
    }

    fn finish(self, outcome: Outcome) -> Result<Outcome> {
        let mut m = self.manifest;
        match &outcome {
            Outcome::Passed => m.push("status", "pass"),
            Outcome::Failed(what) => m.push("status", format!("fail: {what}")),
        }
        m.write(&self.dir.join(format!("{}_manifest.txt", self.name)))?;
        Ok(outcome)
    }
}

pub fn run(cmd: &Command, config: &ExperimentConfig, plot: bool) -> Result<Outcome> {
    let sc = config.build()?;
    let mut r = Run::new(cmd.name(), config, plot)?;
    let outcome = match cmd {
        Command::Simulate { paths, stride } => simulate(&mut r, config, &sc, *paths, *stride)?,
        Command::Gradient => gradient(&mut r, config, &sc)?,
        Command::EpsSweep { k_paths } => eps_sweep(&mut r, config, &sc, *k_paths)?,
        Command::RateSweep => rate(&mut r, config, &sc)?,
        Command::IbpCheck => ibp(&mut r, config, &sc)?,
        Command::DensityCompare { m_beta, w_replica } => density(&mut r, config, &sc, *m_beta, *w_replica)?,
        Command::Validate { only } => validate(&mut r, config, only)?,
        Command::Moments => moments(&mut r, config, &sc)?,
    };
    r.finish(outcome)
}

fn simulate(r: &mut Run, c: &ExperimentConfig, sc: &Scenario, paths: usize, stride: usize) -> Result<Outcome> {
    if paths == 0 {
        return Err(Error::Config("--paths must be positive".into()));
    }
    let n = steps_for(c.t, c.dt)?;
    let n_u = sc.g.n_u();
    let expected_qv = sc.profile.qv_rate() * c.t;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut snapshots = Vec::new();
    for w in 0..paths as u64 {
        let common = Arc::new(CommonNoise::sample(NoiseKey::new(c.seed, w), sc.profile.k_max(), n, c.dt)?);
        let path = evolve(&sc.g, &sc.profile, &common.with_beta(0), 1)?;
        r.write(&format!("simulate_w{w}.csv"), |f| path.write_trajectory_csv(f, stride))?;
        let (mut periodic_bad, mut min_d1) = (0usize, f64::INFINITY);
        for s in 0..=n {
            let x = path.x_at(s);
            if x[n_u].to_bits() != (x[0] + TWO_PI).to_bits() {
                periodic_bad += 1;
            }
            min_d1 = path.d1_at(s).iter().cloned().fold(min_d1, f64::min);
        }
        if periodic_bad > 0 {
            failures.push(format!("pseudo-periodicity broken on {periodic_bad} steps of path {w}"));
        }
        if !(min_d1 > 0.0) {
            failures.push(format!("d_u x not positive on path {w} (min {min_d1:e})"));
        }
        let qv = realized_qv(&path, 0);
        rows.push(format!("{w},{min_d1:.12e},{periodic_bad},{qv:.12e},{expected_qv:.12e}"));
        if w == 0 {
            let u: Vec<f64> = (0..=n_u).map(|j| j as f64 / n_u as f64).collect();
            for s in (0..=n).step_by((n / 4).max(1)) {
                let pts = u.iter().zip(path.x_at(s)).map(|(&a, b)| (a, b - TWO_PI * a)).collect();
                snapshots.push(Series::new(format!("t = {:.3}", path.time(s)), pts));
            }
        }
    }
    r.write("simulate_invariants.csv", |f| {
        writeln!(f, "w_replica,min_dx_du,periodicity_violations,realized_qv,expected_qv")?;
        for row in &rows {
            writeln!(f, "{row}")?;
        }
        Ok(())
    })?;
    r.manifest.push("paths", paths);
    r.manifest.push("stride", stride);
    r.chart("simulate.svg", "x_t(u) - 2 pi u, path 0", "u", "x - 2 pi u", &snapshots)?;
    Ok(match failures.first() {
        None => Outcome::Passed,
        Some(f) => Outcome::Failed(f.clone()),
    })
}

fn gradient(r: &mut Run, c: &ExperimentConfig, sc: &Scenario) -> Result<Outcome> {
    let direct = gradient_direct(&sc.g, &sc.h, &sc.phi, &sc.profile, c.t, &sc.params, sc.direction)?;
    let fd = gradient_fd(&sc.g, &sc.h, &sc.phi, &sc.profile, c.t, c.rho, &sc.params, sc.direction)?;
    let (bel, sm) = estimate_gradient_bel(&sc.bel_setup(), c.t, c.eps, &sc.params)?;
    let mut i1 = bel.clone();
    i1.estimator = "I1".into();
    i1.value = sm.i1;
    i1.std_error = sm.i1_se;
    let mut i2 = bel.clone();
    i2.estimator = "I2".into();
    i2.value = sm.i2;
    i2.std_error = sm.i2_se;
    let reports = vec![direct, fd, bel, i1, i2];
    r.write("gradient.csv", |f| GradientReport::write_csv(&reports, f))?;
    for rep in &reports {
        r.manifest.push(format!("{}_value", rep.estimator), format!("{:.12e}", rep.value));
        for w in &rep.warnings {
            r.manifest.push("warning", w);
        }
    }
    r.manifest.push("weight_l2", format!("{:.6e}", sm.weight_l2));
    r.manifest.push("dropped_energy", format!("{:.6e}", sm.dropped_energy));
    let pts = |k: f64| -> Vec<(f64, f64)> {
        reports.iter().enumerate().map(|(i, rep)| (i as f64, rep.value + k * rep.std_error)).collect()
    };
    r.chart(
        "gradient.svg",
        "gradient estimates: direct, fd, bel, I1, I2",
        "estimator index",
        "value",
        &[Series::new("value", pts(0.0)), Series::new("+2 se", pts(2.0)), Series::new("-2 se", pts(-2.0))],
    )?;
    Ok(Outcome::Passed)
}

fn eps_sweep(r: &mut Run, c: &ExperimentConfig, sc: &Scenario, k_paths: usize) -> Result<Outcome> {
    let data = sweep_with_k(sc, c.t, &c.eps_sweep, &sc.params, k_paths)?;
    r.write("eps_sweep.csv", |f| data.write_csv(f))?;
    r.write("eps_sweep_fit.csv", |f| data.write_fit_csv(f))?;
    r.manifest.push("k_paths", k_paths);
    for fit in data.fits() {
        r.manifest.push(format!("slope_{}", fit.quantity), format!("{:.6}", fit.slope));
    }
    let le: Vec<f64> = data.rows.iter().map(|s| s.eps.log10()).collect();
    let series = |label: &str, y: Vec<f64>| Series::new(label, le.iter().cloned().zip(y.iter().map(|v| v.abs().log10())).collect());
    r.chart(
        "eps_sweep.svg",
        "width sweep",
        "log10 eps",
        "log10 value",
        &[
            series("|I2|", data.rows.iter().map(|s| s.i2).collect()),
            series("E sup|K|", data.k_sup.clone()),
            series("weight l2", data.rows.iter().map(|s| s.weight_l2).collect()),
        ],
    )?;
    Ok(Outcome::Passed)
}

fn rate(r: &mut Run, c: &ExperimentConfig, sc: &Scenario) -> Result<Outcome> {
    let table: RateTable = rate_sweep(&sc.bel_setup(), &c.t_grid, c.eps_rule, c.theta, c.rho, &sc.params)?;
    r.write("rate_sweep.csv", |f| table.write_csv(f))?;
    r.manifest.push("C_g_empirical", format!("{:.6e}", table.c_empirical));
    r.manifest.push("monotone_blow_up", table.monotone_blow_up());
    let ts: Vec<f64> = table.rows.iter().map(|x| x.bel.t).collect();
    let s = |label: &str, y: Vec<f64>| Series::new(label, ts.iter().cloned().zip(y).collect());
    r.chart(
        "rate_sweep.svg",
        "BEL against finite differences over t",
        "t",
        "value",
        &[
            s("I1 + I2", table.rows.iter().map(|x| x.bel.total).collect()),
            s("fd", table.rows.iter().map(|x| x.fd).collect()),
            s("t^(2+theta) |I1 + I2|", table.rows.iter().map(|x| x.scaled).collect()),
        ],
    )?;
    Ok(if table.monotone_blow_up() {
        Outcome::Failed("t^(2+theta)|gradient| grows monotonically towards small t".into())
    } else {
        Outcome::Passed
    })
}

fn ibp(r: &mut Run, c: &ExperimentConfig, sc: &Scenario) -> Result<Outcome> {
    let h_eff = effective_direction(&sc.g, &sc.h, sc.direction)?;
    let rep = check_idiosyncratic_ibp(&sc.g, &h_eff, &sc.phi, &sc.profile, c.ibp_s, c.t, c.ibp_u, c.eps, &sc.params)?;
    r.write("ibp_check.csv", |f| {
        writeln!(f, "{}", IbpReport::CSV_HEADER)?;
        writeln!(f, "{}", rep.csv_row())?;
        Ok(())
    })?;
    let gap = (rep.lhs - rep.rhs).abs();
    r.manifest.push("gap_over_combined_se", format!("{:.4}", gap / rep.combined_se));
    r.chart(
        "ibp_check.svg",
        "integration by parts: lhs (x = 0) and rhs (x = 1)",
        "side",
        "value",
        &[
            Series::new("estimate", vec![(0.0, rep.lhs), (1.0, rep.rhs)]),
            Series::new("+3 se", vec![(0.0, rep.lhs + 3.0 * rep.lhs_se), (1.0, rep.rhs + 3.0 * rep.rhs_se)]),
            Series::new("-3 se", vec![(0.0, rep.lhs - 3.0 * rep.lhs_se), (1.0, rep.rhs - 3.0 * rep.rhs_se)]),
        ],
    )?;
    Ok(if gap <= 3.0 * rep.combined_se {
        Outcome::Passed
    } else {
        Outcome::Failed(format!("|lhs - rhs| = {gap:.3e} exceeds 3 combined se = {:.3e}", 3.0 * rep.combined_se))
    })
}

fn density(r: &mut Run, c: &ExperimentConfig, sc: &Scenario, m_beta: usize, w: u64) -> Result<Outcome> {
    let params = SimParams::new(c.dt, 1, m_beta, c.seed)?;
    let (cmp, spde, kde) = density_compare(&sc.g, &sc.profile, &params, w, c.t, c.bandwidth, c.k_p, c.n_x)?;
    r.write("density_compare.csv", |f| {
        writeln!(f, "{}", DensityComparison::CSV_HEADER)?;
        writeln!(f, "{}", cmp.csv_row())?;
        Ok(())
    })?;
    r.write("density_spde.csv", |f| spde.write_csv(c.n_x, f))?;
    r.write("density_kde.csv", |f| kde.write_csv(f))?;
    // critical diffusion on the same noise, reported as a diagnostic only
    let n = steps_for(c.t, c.dt)?;
    let common = CommonNoise::sample(NoiseKey::new(c.seed, w), sc.profile.k_max(), n, c.dt)?;
    let p0 = quantile_to_density(&sc.g, c.n_x)?;
    let crit = evolve_density(&p0, &sc.profile, &common, LambdaMode::Critical, c.k_p, c.n_x, n.max(1))?;
    let from = c.k_p / 4;
    let ratio = crit.last().energy_from(from) / spde.last().energy_from(from);
    r.manifest.push("m_beta", m_beta);
    r.manifest.push("w_replica", w);
    r.manifest.push("L1_distance", format!("{:.6e}", cmp.l1_distance));
    r.manifest.push("spde_min_value", format!("{:.6e}", cmp.spde_min));
    r.manifest.push("critical_over_super_high_mode_energy", format!("{ratio:.6e}"));
    r.manifest.push("high_mode_threshold", from);
    if cmp.spde_min <= 0.0 {
        r.manifest.push("warning", "spectral density took non-positive grid values");
    }
    let xs = kde.grid();
    let spde_vals = spde.last().grid_values(c.n_x);
    r.chart(
        "density_compare.svg",
        &format!("density at t = {}", c.t),
        "x",
        "p",
        &[
            Series::new("spectral", xs.iter().cloned().zip(spde_vals).collect()),
            Series::new("particle KDE", xs.iter().cloned().zip(kde.values().iter().cloned()).collect()),
        ],
    )?;
    Ok(if cmp.l1_distance <= 0.05 {
        Outcome::Passed
    } else {
        Outcome::Failed(format!("L1 distance {:.4e} exceeds 0.05", cmp.l1_distance))
    })
}

fn validate(r: &mut Run, c: &ExperimentConfig, only: &[usize]) -> Result<Outcome> {
    for id in only {
        if !CRITERIA.iter().any(|x| x.0 == *id) {
            return Err(Error::Config(format!("no criterion {id}")));
        }
    }
    let v = Validator::new(c.clone())?;
    let mut results: Vec<CheckResult> = Vec::new();
    for &(id, name) in CRITERIA.iter() {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let res = v.check(id).unwrap_or_else(|e| CheckResult {
            id,
            name,
            passed: false,
            detail: format!("error: {e}"),
            seconds: 0.0,
        });
        println!("{}", res.line());
        r.manifest.push(format!("check_{id:02}"), res.line());
        results.push(res);
    }
    r.write("validate.csv", |f| {
        writeln!(f, "{}", CheckResult::CSV_HEADER)?;
        for x in &results {
            writeln!(f, "{}", x.csv_row())?;
        }
        Ok(())
    })?;
    r.chart(
        "validate.svg",
        "acceptance checks (1 = pass)",
        "criterion",
        "passed",
        &[Series::new(
            "passed",
            results.iter().map(|x| (x.id as f64, f64::from(u8::from(x.passed)))).collect(),
        )],
    )?;
    let failed: Vec<String> = results
        .iter()
        .filter(|x| !x.passed)
        .map(|x| format!("criterion {} ({})", x.id, x.name))
        .collect();
    Ok(if failed.is_empty() {
        Outcome::Passed
    } else {
        Outcome::Failed(failed.join("; "))
    })
}

fn moments(r: &mut Run, c: &ExperimentConfig, sc: &Scenario) -> Result<Outcome> {
    let reps = moment_suite(&sc.g, &sc.profile, c.moments_paths, c.moments_p, c.moments_j, c.t, c.dt, c.seed)?;
    r.write("moments.csv", |f| MomentReport::write_csv(&reps, f))?;
    let bad: Vec<&str> = reps
        .iter()
        .filter(|x| !(x.estimate.is_finite() && x.std_error.is_finite()))
        .map(|x| x.statistic.name())
        .collect();
    r.chart(
        "moments.svg",
        "estimate / initial-condition reference",
        "statistic index",
        "ratio",
        &[Series::new("ratio", reps.iter().enumerate().map(|(i, x)| (i as f64, x.ratio)).collect())],
    )?;
    Ok(match bad.first() {
        None => Outcome::Passed,
        Some(s) => Outcome::Failed(format!("statistic {s} is not finite")),
    })
}
