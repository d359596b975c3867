//! The four subcommands. Each writes its artifacts under `cfg.out` and also
//! returns its main result for programmatic use.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use multisoliton::diagnostics::{
    energy_e, fit_c1, inequality_monitor, lyapunov_e1_e2, MonitorOptions,
};
use multisoliton::grid::{make_grid, Field, State};
use multisoliton::modulation::{
    decompose, track, track_csv_header, ModulationOptions, TrackOptions, TrackOutcome,
};
use multisoliton::pde::{build_initial_data, initial_params, soliton_sum};
use multisoliton::quadrature::{gauss_jacobi, total_mass};
use multisoliton::reduced::{
    bar_zeta, bar_zeta_dot, csv_header, eigen_system, from_phi_coords, integrate_tl,
    interaction_matrix, rhs_tl, xi_coords, ReducedConfig, ReducedState, TlOptions,
};
use multisoliton::shooting::{shrink_norm, ExitAxis, SearchReport, Shooter};
use multisoliton::solitons::{project, projector_basis, stationary_residual, SolitonParam};
use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{Fault, RunConfig};
use crate::svg::{Plot, Series};

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn prepare(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    write_json(&cfg.out.join("config.json"), cfg)
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn new(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            value,
            tolerance,
            pass: value <= tolerance,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub n: usize,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<40} {:>12} {:>12}  result\n",
            "check", "value", "tolerance"
        );
        for c in &self.checks {
            s += &format!(
                "{:<40} {:>12.3e} {:>12.1e}  {}\n",
                c.name,
                c.value,
                c.tolerance,
                if c.pass { "PASS" } else { "FAIL" }
            );
        }
        s
    }
}

/// Stationarity tolerance for `|d| ≤ 0.7` at `n` nodes.
pub fn stationarity_tolerance(n: usize) -> f64 {
    match n {
        0..=15 => 0.5,
        16..=31 => 1e-3,
        _ => 1e-6,
    }
}

/// Projector duality tolerance for `|d| ≤ 0.5` at `n` nodes.
pub fn duality_tolerance(n: usize) -> f64 {
    match n {
        0..=23 => 1e-2,
        24..=47 => 1e-5,
        _ => 1e-8,
    }
}

/// Runs the invariant suite at the configured `n` and `p`.
pub fn cmd_verify(cfg: &RunConfig) -> Result<VerifyReport> {
    prepare(cfg)?;
    let p = cfg.problem.p;
    let n = cfg.n;
    let a = 2.0 / (p - 1.0);
    let mut checks = Vec::new();

    // even moments ∫y^{2j}ρ by the recursion m_j = m_{j-1}(2j-1)/(2j+2a+1)
    let rule = gauss_jacobi(n, a)?;
    let mut m = total_mass(a);
    let mut worst = 0.0f64;
    for j in 0..n {
        if j > 0 {
            m *= (2 * j - 1) as f64 / (2.0 * j as f64 + 2.0 * a + 1.0);
        }
        let q: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(y, w)| w * y.powi(2 * j as i32))
            .sum();
        worst = worst.max((q - m).abs() / m);
    }
    checks.push(Check::new("quadrature: even moments (rel)", worst, 1e-12));

    let mut worst = 0.0f64;
    for k in 2..=10 {
        let red = ReducedConfig::new(k, p, cfg.problem.c1, 0.0)?;
        let mut mat = interaction_matrix(&red)?;
        if cfg.verify.fault == Some(Fault::Sigma) {
            let e = 1e-3;
            mat[(0, 0)] -= e;
            mat[(1, 1)] -= e;
            mat[(0, 1)] += e;
            mat[(1, 0)] += e;
        }
        let mut ev: Vec<f64> = SymmetricEigen::new(mat)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|x, y| y.partial_cmp(x).unwrap());
        for (i, v) in ev.iter().enumerate() {
            let want = -(((i + 1) * i) as f64) / 2.0;
            worst = worst.max((v - want).abs());
        }
    }
    checks.push(Check::new("spectrum of M, k=2..10", worst, 1e-10));

    let mut worst = 0.0f64;
    for k in 2..=5 {
        let red = ReducedConfig::new(k, p, cfg.problem.c1, 0.0)?;
        for e in 1..=6 {
            let s = 10f64.powi(e);
            let z = bar_zeta(&red, s)?;
            let r = rhs_tl(&red, &z);
            let dz = bar_zeta_dot(&red, s);
            worst = worst.max(
                r.iter()
                    .zip(&dz)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max),
            );
        }
    }
    checks.push(Check::new(
        "explicit reduced solution residual",
        worst,
        1e-13,
    ));

    let g = make_grid(n, p)?;
    let mut worst = 0.0f64;
    for d in [0.0, 0.3, 0.5, 0.7] {
        worst = worst.max(stationary_residual(p, d, &g)?);
    }
    checks.push(Check::new(
        "stationarity of kappa(d), |d|<=0.7",
        worst,
        stationarity_tolerance(n),
    ));

    let mut worst = 0.0f64;
    for d in [0.0, 0.5, -0.5] {
        let b = projector_basis(p, d, &g)?;
        for l in 0..2 {
            for m in 0..2 {
                let want = if l == m { 1.0 } else { 0.0 };
                worst = worst.max((project(&b, l, b.f(m)) - want).abs());
            }
        }
    }
    checks.push(Check::new(
        "projector duality, d in {0, +-0.5}",
        worst,
        duality_tolerance(n),
    ));

    let (orth, perr) = modulation_round_trip(cfg, &g)?;
    checks.push(Check::new("modulation orthogonality", orth, 1e-9));
    checks.push(Check::new(
        "modulation parameter error / delta",
        perr,
        100.0,
    ));

    let report = VerifyReport { n, checks };
    write_json(&cfg.out.join("verify.json"), &report)?;
    Ok(report)
}

/// Soliton sum at `s = 10` plus `δ = 1e-4` of seeded smooth noise.
fn modulation_round_trip(cfg: &RunConfig, g: &multisoliton::Grid) -> Result<(f64, f64)> {
    let p = cfg.problem.p;
    let mut pc = cfg.problem;
    pc.s0 = 10.0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let nu0: Vec<f64> = (0..pc.k).map(|_| rng.gen_range(-1e-3..1e-3)).collect();
    let truth = initial_params(&pc, 10.0, &nu0, 0.0)?;
    let delta = 1e-4;
    let coef: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let noise = State::new(
        Field::from_fn(g, |y| {
            coef[0] + coef[1] * y + coef[2] * y * y + coef[3] * (3.0 * y).sin()
        }),
        Field::from_fn(g, |y| {
            coef[4] + coef[5] * y + coef[6] * y * y + coef[7] * (2.0 * y).cos()
        }),
    );
    let st = &soliton_sum(p, g, &truth)? + &noise.scaled(delta);
    let dec = decompose(p, g, 10.0, &st, &truth, &ModulationOptions::default())?;
    let perr = dec
        .params
        .iter()
        .zip(&truth)
        .map(|(a, b)| ((a.d - b.d).abs()).max((a.nu - b.nu).abs()))
        .fold(0.0, f64::max);
    Ok((dec.max_residual(), perr / delta))
}

/// Integrates the reduced system from `ζ̄(s_start) + ζ₀ + φ0` to the horizon.
pub fn cmd_reduced(cfg: &RunConfig) -> Result<Vec<Vec<f64>>> {
    prepare(cfg)?;
    let red = cfg.problem.reduced();
    let k = red.k;
    let s_start = cfg.reduced.s_start.unwrap_or(cfg.problem.s0);
    let s_end = cfg.horizon;
    if s_end < s_start {
        bail!("horizon {s_end} precedes the reduced start {s_start}");
    }
    let phi0 = if cfg.reduced.phi0.is_empty() {
        vec![0.0; k]
    } else {
        cfg.reduced.phi0.clone()
    };
    let st0 = from_phi_coords(&red, s_start, &phi0)?;
    let mut rows = Vec::new();
    if s_end > s_start {
        let traj = integrate_tl(&red, &st0, s_end, None, TlOptions::default())?;
        let eig = eigen_system(&red)?;
        let m = cfg.reduced.samples.max(2);
        let (l0, l1) = (s_start.ln(), s_end.ln());
        for i in 0..m {
            let s = if i == 0 {
                s_start
            } else if i + 1 == m {
                s_end
            } else {
                (l0 + (l1 - l0) * i as f64 / (m - 1) as f64).exp()
            };
            let zeta = traj.at(&red, s, None);
            let st = ReducedState {
                s,
                zeta: zeta.clone(),
            };
            let xi = xi_coords(&red, &st)?;
            let phi = eig.to_phi(&xi);
            let mut row = vec![s];
            row.extend(zeta);
            row.extend(xi);
            row.extend(phi);
            rows.push(row);
        }
    }
    write_csv(&cfg.out.join("reduced.csv"), &csv_header(k), &rows)?;

    let s: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let mut plot = Plot::new("reduced centers", "s", "zeta_i").log_x();
    for i in 0..k {
        plot = plot.with(Series::new(
            format!("zeta_{}", i + 1),
            s.clone(),
            rows.iter().map(|r| r[1 + i]).collect(),
        ));
    }
    for i in 0..k {
        let bar: Vec<f64> = s
            .iter()
            .map(|&t| {
                bar_zeta(&red, t)
                    .map(|b| b[i] + red.zeta0)
                    .unwrap_or(f64::NAN)
            })
            .collect();
        plot =
            plot.with(Series::new(format!("bar zeta_{} + zeta0", i + 1), s.clone(), bar).dashed());
    }
    fs::write(cfg.out.join("reduced.svg"), plot.render())?;

    let mut phi_plot = Plot::new("eigen-coordinates", "s", "phi_i").log_x();
    for i in 0..k {
        phi_plot = phi_plot.with(Series::new(
            format!("phi_{}", i + 1),
            s.clone(),
            rows.iter().map(|r| r[1 + 2 * k + i]).collect(),
        ));
    }
    fs::write(cfg.out.join("reduced_phi.svg"), phi_plot.render())?;
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct FirstExit {
    pub s: f64,
    pub axis: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateSummary {
    pub outcome: String,
    pub s0: f64,
    pub s_last: f64,
    pub n: usize,
    pub nu0: Vec<f64>,
    pub phi10: f64,
    pub eta: f64,
    pub first_exit: Option<FirstExit>,
    /// End of the survival window: first exit, or the last tracked time.
    pub survival_end: f64,
    /// `max_i max_s |ζ_i - ζ̄_i - ζ₀|` over the survival window.
    pub max_center_offset: f64,
    /// `max_s |mean(ζ) - ζ₀|` over the survival window.
    pub max_center_of_mass_offset: f64,
    pub max_n: f64,
    /// Last time with modal tail of `w₁` within `simulate.tail_tol`.
    pub resolved_until: f64,
    /// Largest increase rate of `E` between outputs (per unit `s`).
    pub max_energy_increase_rate: f64,
    /// `c₁` fitted over the monitor window.
    pub fitted_c1: Option<f64>,
    /// Range of `J*/J` and `Ĵ*/(J*)^{p̄/2}` along the trajectory.
    pub jstar_over_j: [f64; 2],
    pub jhat_over_jstar_pow: [f64; 2],
    pub monitors_bounded: Option<bool>,
}

/// Simulates from the configured initial data, tracks the modulation and
/// writes time series, monitors and plots.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<SimulateSummary> {
    prepare(cfg)?;
    let pc = cfg.problem;
    let p = pc.p;
    let s0 = pc.s0;
    let shooter = Shooter::new(pc, cfg.shooting, cfg.n, cfg.horizon)?;
    let eta = shooter.eta;
    let g = shooter.grid().clone();
    let (nu0, phi10) = match &cfg.simulate.ball {
        Some(b) => shooter.gamma_rescale(s0, b)?,
        None => (
            cfg.simulate.nu0.clone().unwrap_or(vec![0.0; pc.k]),
            cfg.simulate.phi10,
        ),
    };
    let st0 = build_initial_data(&pc, &g, s0, &nu0, phi10, eta)?;
    let guess = initial_params(&pc, s0, &nu0, phi10)?;
    let opts = TrackOptions {
        cadence: cfg.simulate.cadence,
        modulation: ModulationOptions::default(),
        eta: Some(eta),
    };
    let tr = track(&pc, &g, &st0, &guess, s0, cfg.horizon, opts, |_| true)?;
    let recs = &tr.records;
    if recs.is_empty() {
        bail!("no decomposable state at s0");
    }
    let k = pc.k;
    let red = pc.reduced();

    write_csv(
        &cfg.out.join("trajectory.csv"),
        &track_csv_header(k),
        &recs.iter().map(|r| r.csv_row()).collect::<Vec<_>>(),
    )?;

    let mut gh: Vec<String> = [
        "s",
        "normH_q",
        "J",
        "Jbar",
        "Jstar",
        "Jhat_star",
        "E",
        "E1",
        "E2",
        "tail",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    gh.extend((1..=k).map(|i| format!("nu_ratio_{i}")));
    let mut grows = Vec::with_capacity(recs.len());
    let mut energies = Vec::with_capacity(recs.len());
    let mut tails = Vec::with_capacity(recs.len());
    for r in recs {
        let st = &soliton_sum(p, &g, &r.dec.params)? + &r.dec.q;
        let e = energy_e(p, &g, &st);
        let tail = g.modal_tail(&st.w1);
        tails.push(tail);
        let ly = lyapunov_e1_e2(&pc, &g, &r.dec, cfg.simulate.lyapunov_eta)?;
        energies.push(e);
        let ga = &r.gauges;
        let mut row = vec![
            r.dec.s,
            r.norm_q,
            ga.j,
            ga.jbar,
            ga.jstar,
            ga.jhat_star,
            e,
            ly.e1,
            ly.e2,
            tail,
        ];
        row.extend(ga.nu_ratio.iter().copied());
        grows.push(row);
    }
    write_csv(&cfg.out.join("gauges.csv"), &gh, &grows)?;

    let mut first_exit = None;
    for r in recs {
        let n = shrink_norm(&red, eta, r.dec.s, r.norm_q, &r.dec.nu(), &r.phi);
        if n > 1.0 + 1e-9 {
            first_exit = Some(FirstExit {
                s: r.dec.s,
                axis: binding_axis(&red, eta, r),
            });
            break;
        }
    }
    let last_s = recs.last().unwrap().dec.s;
    let survival_end = first_exit.as_ref().map(|e| e.s).unwrap_or(last_s);
    let mut max_off = 0.0f64;
    let mut max_com = 0.0f64;
    for r in recs.iter().filter(|r| r.dec.s <= survival_end) {
        let bar = bar_zeta(&red, r.dec.s)?;
        let z = r.dec.zeta();
        for i in 0..k {
            max_off = max_off.max((z[i] - bar[i] - pc.zeta0).abs());
        }
        let com = z.iter().sum::<f64>() / k as f64;
        max_com = max_com.max((com - pc.zeta0).abs());
    }
    let max_n = recs.iter().filter_map(|r| r.n_value).fold(0.0, f64::max);
    let mut max_inc = f64::NEG_INFINITY;
    for (w, e) in recs.windows(2).zip(energies.windows(2)) {
        max_inc = max_inc.max((e[1] - e[0]) / (w[1].dec.s - w[0].dec.s));
    }
    let pb = multisoliton::diagnostics::p_bar(p);
    let range = |v: Vec<f64>| {
        [
            v.iter().copied().fold(f64::INFINITY, f64::min),
            v.iter().copied().fold(0.0, f64::max),
        ]
    };
    let jr = range(recs.iter().map(|r| r.gauges.jstar / r.gauges.j).collect());
    let jh = range(
        recs.iter()
            .map(|r| r.gauges.jhat_star / r.gauges.jstar.powf(pb / 2.0))
            .collect(),
    );

    let resolved_until = recs
        .iter()
        .zip(&tails)
        .take_while(|(_, t)| **t <= cfg.simulate.tail_tol)
        .last()
        .map(|(r, _)| r.dec.s)
        .unwrap_or(s0);
    // the estimates concern solutions inside the shrinking set, and are only
    // measurable while the grid resolves them
    let window: Vec<_> = recs
        .iter()
        .filter(|r| r.dec.s <= survival_end.min(resolved_until))
        .cloned()
        .collect();
    let monitors = if cfg.simulate.monitor && window.len() >= 5 {
        let rep = inequality_monitor(
            &pc,
            &window,
            MonitorOptions {
                delta: cfg.simulate.delta,
                ..Default::default()
            },
        )?;
        write_json(&cfg.out.join("monitor.json"), &rep)?;
        for m in &rep.monitors {
            let rows: Vec<Vec<f64>> = m
                .rows
                .iter()
                .map(|r| vec![r.s, r.lhs, r.rhs, r.ratio])
                .collect();
            let header: Vec<String> = ["s", "LHS", "RHS", "ratio"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            write_csv(
                &cfg.out.join(format!("monitor_{}.csv", m.name)),
                &header,
                &rows,
            )?;
        }
        Some(rep.all_bounded())
    } else {
        None
    };

    let summary = SimulateSummary {
        outcome: outcome_label(&tr.outcome),
        s0,
        s_last: last_s,
        n: cfg.n,
        nu0,
        phi10,
        eta,
        first_exit,
        survival_end,
        resolved_until,
        max_center_offset: max_off,
        max_center_of_mass_offset: max_com,
        max_n,
        max_energy_increase_rate: if max_inc.is_finite() { max_inc } else { 0.0 },
        fitted_c1: if window.len() >= 3 {
            fit_c1(p, &window).ok()
        } else {
            None
        },
        jstar_over_j: jr,
        jhat_over_jstar_pow: jh,
        monitors_bounded: monitors,
    };
    write_json(&cfg.out.join("summary.json"), &summary)?;
    plots_simulate(cfg, recs)?;
    Ok(summary)
}

fn outcome_label(o: &TrackOutcome) -> String {
    match o {
        TrackOutcome::Completed => "completed".into(),
        TrackOutcome::Stopped => "stopped".into(),
        TrackOutcome::DecompositionLost {
            last_good_s,
            reason,
        } => format!("decomposition lost after s = {last_good_s}: {reason}"),
        TrackOutcome::Unstable { last_stable_s } => format!("unstable after s = {last_stable_s}"),
    }
}

fn binding_axis(
    red: &ReducedConfig,
    eta: f64,
    r: &multisoliton::modulation::TrackRecord,
) -> String {
    let s = r.dec.s;
    let mut best = (s.powf(0.5 + eta) * r.norm_q, ExitAxis::Q);
    for (i, (nu, g)) in r.dec.nu().iter().zip(red.gamma()).enumerate() {
        let v = s.powf(0.5 + g.abs()) * nu.abs();
        if v > best.0 {
            best = (v, ExitAxis::Nu(i + 1));
        }
    }
    for (i, f) in r.phi.iter().enumerate() {
        let v = s.powf(eta) * f.abs();
        if v > best.0 {
            best = (v, ExitAxis::Phi(i + 1));
        }
    }
    best.1.to_string()
}

fn plots_simulate(cfg: &RunConfig, recs: &[multisoliton::modulation::TrackRecord]) -> Result<()> {
    let red = cfg.problem.reduced();
    let k = red.k;
    let s: Vec<f64> = recs.iter().map(|r| r.dec.s).collect();
    let q = Plot::new("remainder", "s", "||q||_H")
        .log_y()
        .with(Series::new(
            "||q||",
            s.clone(),
            recs.iter().map(|r| r.norm_q).collect(),
        ));
    fs::write(cfg.out.join("norm_q.svg"), q.render())?;

    let mut z = Plot::new("soliton centers", "s", "zeta_i");
    for i in 0..k {
        z = z.with(Series::new(
            format!("zeta_{}", i + 1),
            s.clone(),
            recs.iter().map(|r| r.dec.zeta()[i]).collect(),
        ));
    }
    for i in 0..k {
        let bar = s
            .iter()
            .map(|&t| {
                bar_zeta(&red, t)
                    .map(|b| b[i] + red.zeta0)
                    .unwrap_or(f64::NAN)
            })
            .collect();
        z = z.with(Series::new(format!("bar zeta_{} + zeta0", i + 1), s.clone(), bar).dashed());
    }
    fs::write(cfg.out.join("zeta.svg"), z.render())?;

    let n = Plot::new("shrinking-set norm", "s", "N")
        .with(Series::new(
            "N(s)",
            s.clone(),
            recs.iter().map(|r| r.n_value.unwrap_or(f64::NAN)).collect(),
        ))
        .with(Series::new("1", s.clone(), vec![1.0; s.len()]).dashed());
    fs::write(cfg.out.join("n.svg"), n.render())?;

    let com = Plot::new("center of mass", "s", "mean zeta")
        .with(Series::new(
            "mean zeta_i",
            s.clone(),
            recs.iter()
                .map(|r| r.dec.zeta().iter().sum::<f64>() / k as f64)
                .collect(),
        ))
        .with(Series::new("zeta0", s.clone(), vec![red.zeta0; s.len()]).dashed());
    fs::write(cfg.out.join("center_of_mass.svg"), com.render())?;
    Ok(())
}

/// Runs the subdivision search and writes the report.
pub fn cmd_shoot(cfg: &RunConfig) -> Result<SearchReport> {
    prepare(cfg)?;
    let shooter = Shooter::new(cfg.problem, cfg.shooting, cfg.n, cfg.horizon)?;
    let rep = shooter.search()?;
    write_json(&cfg.out.join("search.json"), &rep)?;
    let lv: Vec<f64> = rep.levels.iter().map(|l| l.level as f64).collect();
    let plot = Plot::new("subdivision search", "level", "best exit s").with(Series::new(
        "best exit",
        lv,
        rep.levels.iter().map(|l| l.best_exit_s).collect(),
    ));
    fs::write(cfg.out.join("search.svg"), plot.render())?;
    Ok(rep)
}

/// Used by tests: a soliton parameter list at `s` for the configured problem.
pub fn demo_params(cfg: &RunConfig) -> Result<Vec<SolitonParam>> {
    Ok(initial_params(
        &cfg.problem,
        cfg.problem.s0,
        &vec![0.0; cfg.problem.k],
        0.0,
    )?)
}
