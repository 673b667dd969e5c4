//! One function per subcommand. Each reads its keys, runs the pipeline and
//! writes CSV artifacts; parallel work is collected in input order.

use homog_core::cellsolve::{
    diophantine_check, extract_fperp, fourier_corrector, oscillating_corrector, FperpOptions,
};
use homog_core::coeffs::{project_a, CoefficientField, TrigSeries};
use homog_core::front::{
    pulsating_profile, simulate_front, verify_traveling, FrontOptions, TimeScheme,
};
use homog_core::grid::unravel;
use homog_core::lattice::{approach_sequence, slice_lattice_basis, Direction};
use homog_core::measures::{
    effective_tensors, effective_tensors_irrational, invariant_measure_slice,
    sde_empirical_measure_chains, tv_distance,
};
use homog_core::obstacle::{critical_mu, solve_obstacle, CriticalOptions, CubeSpec, ObstacleKind};
use homog_core::HomogError;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{Config, ConfigError};
use crate::output::{mat_cols, vec_cols, Row, Sink, Table};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: HomogError,
    },
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

trait Context<T> {
    fn ctx(self, context: impl FnOnce() -> String) -> Result<T>;
}

impl<T> Context<T> for std::result::Result<T, HomogError> {
    fn ctx(self, context: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| CliError::Core {
            context: context(),
            source,
        })
    }
}

/// Shared state of one invocation.
pub struct Run<'a> {
    pub name: &'static str,
    pub cfg: &'a Config,
    pub sink: &'a mut Sink,
}

impl Run<'_> {
    fn emit(&mut self, file: &str, table: &Table) -> Result<()> {
        let prov = format!("homog {} {}", self.name, self.cfg.provenance());
        self.sink.write(file, &table.render(&prov))?;
        Ok(())
    }
}

fn check_dim(key: &str, got: usize, d: usize) -> Result<()> {
    if got != d {
        return Err(ConfigError::Invalid {
            key: key.to_string(),
            reason: format!("expected {d} components, found {got}"),
        }
        .into());
    }
    Ok(())
}

fn rational(key: &str, e: Direction, d: usize) -> Result<Direction> {
    check_dim(key, e.dim(), d)?;
    if !e.is_rational() {
        return Err(ConfigError::Invalid {
            key: key.to_string(),
            reason: format!("{e} is not a lattice direction"),
        }
        .into());
    }
    Ok(e)
}

fn fperp_options(cfg: &Config) -> std::result::Result<FperpOptions, ConfigError> {
    let def = FperpOptions::default();
    Ok(FperpOptions {
        schedule: cfg.f64_list_or("cell.schedule", &def.schedule)?,
        levels: cfg.usize_or("cell.levels", def.levels)?,
        tol: cfg.f64_or("cell.tol", def.tol)?,
    })
}

pub fn effective(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let field = cfg.field()?;
    let d = field.dim();
    let dirs = cfg
        .directions("effective.directions")?
        .into_iter()
        .map(|e| rational("effective.directions", e, d))
        .collect::<Result<Vec<_>>>()?;
    let n_s = cfg.grid_or("grid.s", 32)?;
    let m = cfg.grid_or("grid.m", 32)?;
    let res = dirs
        .par_iter()
        .map(|e| effective_tensors(&field, e, n_s, m).ctx(|| format!("effective tensors in {e}")))
        .collect::<Result<Vec<_>>>()?;
    let mut t = Table::new(
        ["direction".to_string()]
            .into_iter()
            .chain(vec_cols("e", d))
            .chain(["m_bar".into(), "m_pl".into()])
            .chain(mat_cols("a_bar", d)),
    );
    for r in &res {
        t.push(
            Row::new()
                .text(&r.e)
                .nums(r.e.unit())
                .num(r.m_bar)
                .num(r.m_pl)
                .mat(&r.a_bar),
        );
    }
    run.emit("effective.csv", &t)
}

pub fn limits(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let field = cfg.field()?;
    let d = field.dim();
    let e = rational("limits.direction", cfg.direction("limits.direction")?, d)?;
    let etas = cfg.vectors("limits.etas")?;
    for eta in &etas {
        check_dim("limits.etas", eta.len(), d)?;
    }
    let n_s = cfg.grid_or("grid.s", 32)?;
    let m = cfg.grid_or("grid.m", 32)?;
    let eff = effective_tensors(&field, &e, n_s, m).ctx(|| format!("effective tensors in {e}"))?;
    let lims = etas
        .iter()
        .map(|eta| {
            eff.tilde(eta)
                .ctx(|| format!("limiting tensors for eta {eta:?}"))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = Table::new(
        ["direction".to_string()]
            .into_iter()
            .chain(vec_cols("eta", d))
            .chain(["m_tilde".into()])
            .chain(mat_cols("a_tilde", d)),
    );
    for l in &lims {
        t.push(
            Row::new()
                .text(&e)
                .nums(&l.eta)
                .num(l.m_tilde)
                .mat(&l.a_tilde),
        );
    }
    run.emit("limits.csv", &t)
}

pub fn sweep(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let field = cfg.field()?;
    let d = field.dim();
    let e = rational("sweep.direction", cfg.direction("sweep.direction")?, d)?;
    let etas = cfg.vectors("sweep.etas")?;
    for eta in &etas {
        check_dim("sweep.etas", eta.len(), d)?;
    }
    let depth = cfg.usize_or("sweep.depth", 4)?;
    let n_s = cfg.grid_or("grid.s", 32)?;
    let m = cfg.grid_or("grid.m", 32)?;
    let eff = effective_tensors(&field, &e, n_s, m).ctx(|| format!("effective tensors in {e}"))?;
    let runs = etas
        .iter()
        .map(|eta| {
            let approach = approach_sequence(&e, eta, depth)
                .ctx(|| format!("approach sequence for eta {eta:?}"))?;
            let res = effective_tensors_irrational(&field, &approach, n_s, m)
                .ctx(|| format!("sweep along eta {eta:?}"))?;
            let lim = eff
                .tilde(eta)
                .ctx(|| format!("limiting tensors for eta {eta:?}"))?;
            Ok((approach, res, lim))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut per_n = Table::new(
        [
            "eta_index".to_string(),
            "n".into(),
            "direction".into(),
            "theta".into(),
        ]
        .into_iter()
        .chain(["m_bar".into()])
        .chain(mat_cols("a_bar", d)),
    );
    let mut summary = Table::new(
        ["eta_index".to_string()]
            .into_iter()
            .chain(vec_cols("eta", d))
            .chain(["m_limit".into(), "m_tilde".into(), "error_estimate".into()])
            .chain(mat_cols("a_limit", d))
            .chain(mat_cols("a_tilde", d)),
    );
    for (i, (approach, res, lim)) in runs.iter().enumerate() {
        for (n, dir) in res.directions.iter().enumerate() {
            per_n.push(
                Row::new()
                    .text(i)
                    .text(n)
                    .text(dir)
                    .num(approach.thetas[n])
                    .num(res.m_terms[n])
                    .mat(&res.a_terms[n]),
            );
        }
        summary.push(
            Row::new()
                .text(i)
                .nums(&lim.eta)
                .num(res.m_limit)
                .num(lim.m_tilde)
                .num(res.error_estimate)
                .mat(&res.a_limit)
                .mat(&lim.a_tilde),
        );
    }
    run.emit("sweep.csv", &per_n)?;
    run.emit("sweep_limits.csv", &summary)
}

fn scheme(cfg: &Config) -> Result<TimeScheme> {
    match cfg.string_or("front.scheme", "imex")?.as_str() {
        "imex" => Ok(TimeScheme::Imex),
        "forward-euler" => Ok(TimeScheme::ForwardEuler),
        other => Err(ConfigError::Invalid {
            key: "front.scheme".into(),
            reason: format!("unknown scheme `{other}` (imex or forward-euler)"),
        }
        .into()),
    }
}

pub fn front(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let alpha = cfg.f64("front.alpha")?;
    let field = cfg.field()?;
    let d = field.dim();
    let e = rational("front.direction", cfg.direction("front.direction")?, d)?;
    let eps = cfg.f64_list_or("front.epsilon", &[0.125, 0.0625])?;
    let t_final = cfg.f64_or("front.T", 0.5)?;
    let n = cfg.grid_or("front.grid", 32)?;
    let opts = FrontOptions {
        n,
        scheme: scheme(cfg)?,
        dt: cfg.f64_opt("front.dt")?,
    };

    let op = project_a(&field, &e).ctx(|| format!("projecting in {e}"))?;
    let (v, prof) = oscillating_corrector(&op, |y: &[f64]| field.m(y, e.unit()), n)
        .ctx(|| format!("oscillating corrector in {e}"))?;
    let wave = pulsating_profile(&prof).ctx(|| "pulsating profile".into())?;
    let predicted = alpha / wave.m_pl;

    let results = eps
        .par_iter()
        .map(|&ep| {
            let st = simulate_front(&field, &e, alpha, ep, t_final, &opts)
                .ctx(|| format!("front at epsilon {ep}"))?;
            let b = verify_traveling(&field, &e, alpha, ep, &v, &wave)
                .ctx(|| format!("traveling bounds at epsilon {ep}"))?;
            Ok((st, b))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut t = Table::new([
        "epsilon",
        "alpha",
        "speed",
        "predicted",
        "rel_error",
        "fit_residual",
        "steps",
        "dt",
        "max_gradient",
        "alpha_minus",
        "alpha_plus",
        "margin",
    ]);
    for (st, b) in &results {
        t.push(
            Row::new()
                .num(st.epsilon)
                .num(alpha)
                .num(st.speed)
                .num(predicted)
                .num(st.speed / predicted - 1.0)
                .num(st.fit_residual)
                .text(st.steps)
                .num(st.dt)
                .num(st.max_gradient)
                .num(b.alpha_minus)
                .num(b.alpha_plus)
                .num(b.margin),
        );
    }
    run.emit("front.csv", &t)?;
    for (i, (st, _)) in results.iter().enumerate() {
        let mut s = Table::new(["t", "mean_w", "speed_fit"]);
        for &(tt, w) in &st.series {
            s.push(Row::new().num(tt).num(w).num(st.speed));
        }
        run.emit(&format!("front_series_{i}.csv"), &s)?;
    }
    Ok(())
}

pub fn speed2d(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let field = cfg.field()?;
    check_dim("field.params", field.dim(), 2)?;
    let e = rational("speed2d.direction", cfg.direction("speed2d.direction")?, 2)?;
    let alphas = cfg.f64_list_or("speed2d.alphas", &[0.5, 0.25, 0.125])?;
    let periods = cfg.f64_or("speed2d.periods", 8.0)?;
    let opts = FrontOptions {
        n: cfg.grid_or("speed2d.grid", 32)?,
        scheme: TimeScheme::Imex,
        dt: None,
    };
    let n_s = cfg.grid_or("grid.s", 32)?;
    let m = cfg.grid_or("grid.m", 32)?;
    if let Some(pos) = alphas.iter().position(|&a| a == 0.0) {
        return Err(ConfigError::Invalid {
            key: "speed2d.alphas".into(),
            reason: format!("entry {pos} is zero"),
        }
        .into());
    }
    let m_pl = effective_tensors(&field, &e, n_s, m)
        .ctx(|| format!("effective tensors in {e}"))?
        .m_pl;
    let rows = alphas
        .par_iter()
        .map(|&a| {
            let t_final = periods * m_pl / a.abs();
            // ε = 1, so cell time equals physical time.
            let st = simulate_front(&field, &e, a, 1.0, t_final, &opts)
                .ctx(|| format!("speed at alpha {a}"))?;
            Ok((a, t_final, st.speed))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = Table::new([
        "alpha",
        "T",
        "speed",
        "speed_over_alpha",
        "inv_m_pl",
        "deviation",
    ]);
    for (a, tf, s) in rows {
        t.push(
            Row::new()
                .num(a)
                .num(tf)
                .num(s)
                .num(s / a)
                .num(1.0 / m_pl)
                .num(s / a - 1.0 / m_pl),
        );
    }
    run.emit("speed2d.csv", &t)
}

pub fn obstacle(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let field = cfg.field()?;
    let d = field.dim();
    let e = rational(
        "obstacle.direction",
        cfg.direction("obstacle.direction")?,
        d,
    )?;
    let xs = cfg.matrices("obstacle.X", d)?;
    let rs = cfg.f64_list_or("obstacle.R", &[8.0])?;
    let tol = cfg.f64_or("obstacle.tol", 0.025)?;
    let mask = cfg.bool_or("obstacle.mask", false)?;
    let n = cfg.grid_or("grid.n", 32)?;
    let fopts = fperp_options(cfg)?;
    let op = project_a(&field, &e).ctx(|| format!("projecting in {e}"))?;

    let cell = xs
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let est =
                extract_fperp(&op, x, &fopts, n).ctx(|| format!("cell problem for X #{i}"))?;
            Ok((-est.profile.mean(), est.spread))
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, f64)> = (0..xs.len())
        .flat_map(|i| rs.iter().map(move |&r| (i, r)))
        .collect();
    let crit = jobs
        .par_iter()
        .map(|&(i, r)| {
            let opts = CriticalOptions::with_default_shifts(d, r, tol);
            let c = critical_mu(&op, &xs[i], &opts)
                .ctx(|| format!("critical mu for X #{i}, R = {r}"))?;
            Ok((opts, c))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut t = Table::new(
        ["x_index".to_string(), "R".into()]
            .into_iter()
            .chain(mat_cols("X", d))
            .chain(
                [
                    "mu_hat",
                    "sub_lo",
                    "sub_hi",
                    "super_lo",
                    "super_hi",
                    "mu_cell",
                    "cell_spread",
                    "difference",
                ]
                .map(String::from),
            ),
    );
    for (&(i, r), (_, c)) in jobs.iter().zip(&crit) {
        let (mu_cell, spread) = cell[i];
        t.push(
            Row::new()
                .text(i)
                .num(r)
                .mat(&xs[i])
                .num(c.mu_hat)
                .num(c.sub_bracket.0)
                .num(c.sub_bracket.1)
                .num(c.super_bracket.0)
                .num(c.super_bracket.1)
                .num(mu_cell)
                .num(spread)
                .num(c.mu_hat - mu_cell),
        );
    }
    run.emit("obstacle.csv", &t)?;

    // Shift-averaged densities on a μ-grid spanning the transition.
    let points = cfg.usize_or("obstacle.curve_points", 9)?;
    let span = cfg.f64_or("obstacle.curve_span", 0.25)?;
    if points >= 2 {
        let samples: Vec<(usize, f64)> = (0..jobs.len())
            .flat_map(|j| {
                let mu0 = crit[j].1.mu_hat;
                (0..points)
                    .map(move |p| (j, mu0 - span + 2.0 * span * p as f64 / (points - 1) as f64))
            })
            .collect();
        let dens = samples
            .par_iter()
            .map(|&(j, mu)| {
                let (i, r) = jobs[j];
                let opts = &crit[j].0;
                let mut acc = [0.0; 2];
                for shift in &opts.shifts {
                    let cube = CubeSpec {
                        r,
                        x_shift: shift.clone(),
                        theta: opts.theta,
                        m: opts.m,
                    };
                    for (slot, kind) in [ObstacleKind::Sub, ObstacleKind::Super]
                        .into_iter()
                        .enumerate()
                    {
                        acc[slot] += solve_obstacle(&op, kind, &xs[i], mu, &cube)
                            .ctx(|| format!("density curve for X #{i}, R = {r}, mu = {mu}"))?
                            .density;
                    }
                }
                let k = opts.shifts.len() as f64;
                Ok((acc[0] / k, acc[1] / k))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut curve = Table::new(["x_index", "R", "mu", "sub_density", "super_density"]);
        for (&(j, mu), (sub, sup)) in samples.iter().zip(dens) {
            let (i, r) = jobs[j];
            curve.push(Row::new().text(i).num(r).num(mu).num(sub).num(sup));
        }
        run.emit("obstacle_density.csv", &curve)?;
    }

    if mask {
        for (&(i, r), (opts, c)) in jobs.iter().zip(&crit) {
            let cube = CubeSpec {
                r,
                x_shift: vec![0.0; d],
                theta: opts.theta,
                m: opts.m,
            };
            for (kind, tag) in [(ObstacleKind::Sub, "sub"), (ObstacleKind::Super, "super")] {
                let sol = solve_obstacle(&op, kind, &xs[i], c.mu_hat, &cube)
                    .ctx(|| format!("{tag} obstacle for X #{i}, R = {r}"))?;
                run.sink.write(
                    &format!("obstacle_mask_{i}_r{r}_{tag}.pbm"),
                    &sol.mask_pbm(),
                )?;
            }
        }
    }
    Ok(())
}

fn trig_mobility(field: &CoefficientField) -> Result<&TrigSeries> {
    field.mobility().ok_or_else(|| {
        ConfigError::Invalid {
            key: "field.family".into(),
            reason: "the Fourier corrector needs a trigonometric mobility".into(),
        }
        .into()
    })
}

pub fn fourier(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let field = cfg.field()?;
    let d = field.dim();
    let e = cfg.direction("fourier.direction")?;
    check_dim("fourier.direction", e.dim(), d)?;
    let c = cfg.f64_or("fourier.c", 0.1)?;
    let tau = cfg.f64_or("fourier.tau", (d - 1) as f64 + 0.5)?;
    let kmax = cfg.usize_or("fourier.kmax", 32)?;
    let ktrunc = cfg.usize_or("fourier.ktrunc", 8)?;
    let n = cfg.grid_or("fourier.grid", 32)?;
    let mobility = trig_mobility(&field)?;
    let report = diophantine_check(e.unit(), c, tau, kmax);
    let fc =
        fourier_corrector(mobility, &e, ktrunc, n).ctx(|| format!("Fourier corrector in {e}"))?;

    let mut t = Table::new([
        "direction",
        "diophantine_passed",
        "worst_k",
        "worst_value",
        "m_bar",
        "tail_bound",
        "residual_inf",
        "modes",
    ]);
    let worst: Vec<String> = report.worst_k.iter().map(|k| k.to_string()).collect();
    t.push(
        Row::new()
            .text(&e)
            .text(report.passed)
            .text(format!("[{}]", worst.join(",")))
            .num(report.worst_value)
            .num(fc.m_bar)
            .num(fc.tail_bound)
            .num(fc.corrector.residual_inf)
            .text(fc.modes.len()),
    );
    run.emit("fourier.csv", &t)?;
    let mut modes = Table::new(
        vec_cols("k", d)
            .into_iter()
            .chain(["amplitude".into(), "phase".into()]),
    );
    for (k, amp, ph) in &fc.modes {
        let kf: Vec<f64> = k.iter().map(|&x| x as f64).collect();
        modes.push(Row::new().nums(&kf).num(*amp).num(*ph));
    }
    run.emit("fourier_modes.csv", &modes)
}

pub fn invariant(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let field = cfg.field()?;
    let d = field.dim();
    let e = rational(
        "invariant.direction",
        cfg.direction("invariant.direction")?,
        d,
    )?;
    let m = cfg.grid_or("grid.m", 32)?;
    let steps = cfg.usize_or("invariant.steps", 1_000_000)?;
    let dt = cfg.f64_or("invariant.dt", 0.002)?;
    let chains = cfg.usize_or("invariant.chains", 4)?;
    let seed = cfg.usize_or("run.seed", 0)? as u64;

    let op = project_a(&field, &e).ctx(|| format!("projecting in {e}"))?;
    let chart = slice_lattice_basis(&e).ctx(|| format!("slice chart of {e}"))?;
    let meas =
        invariant_measure_slice(&op, &chart, m).ctx(|| format!("invariant measure in {e}"))?;
    let sde = sde_empirical_measure_chains(&op, &chart, m, steps, dt, seed, chains)
        .ctx(|| format!("SDE histogram in {e}"))?;
    let tv = tv_distance(&meas.rho, &sde).ctx(|| "total variation".into())?;

    let rank = meas.rho.dims.len();
    let mut t = Table::new(
        vec_cols("i", rank)
            .into_iter()
            .chain(["rho".into(), "sde".into()]),
    );
    let mut idx = vec![0; rank];
    for (lin, (&p, &q)) in meas.rho.values.iter().zip(&sde.values).enumerate() {
        unravel(lin, &meas.rho.dims, &mut idx);
        let mut row = Row::new();
        for &i in &idx {
            row = row.text(i);
        }
        t.push(row.num(p).num(q));
    }
    run.emit("invariant.csv", &t)?;
    let mut s = Table::new(["direction", "tv", "nullspace_residual", "rho_min"]);
    s.push(
        Row::new()
            .text(&e)
            .num(tv)
            .num(meas.residual)
            .num(meas.min()),
    );
    run.emit("invariant_summary.csv", &s)
}
