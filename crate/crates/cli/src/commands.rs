//! One function per subcommand: resolve the configuration, run, write artifacts.

use std::path::{Path, PathBuf};

use kr_core::anderson::{hopping_coefficients, pseudo_disorder, resolve_hopping_sign, LatticeBox};
use kr_core::classical::classical_diffusion;
use kr_core::engine::{run_ensemble, EnsembleResult, MomentumDistribution, ObservableSeries, TimeGrid};
use kr_core::params::{default_omegas, validate, EnsembleSpec, RunConfig, SimParams};
use kr_core::scaling::{
    critical_collapse, curve_from_series, finite_time_scaling, fit_distribution_shape, late_beta, phase_diagram, Branch, PhaseDiagram,
    PhaseDiagramSpec, ScalingResult, TransportCurve,
};
use serde::Serialize;
use serde_json::json;

use crate::artifacts::{num, ArtifactDir, Table};
use crate::recipes::{self, PathSpec, RecipeError};
use crate::{AndersonArgs, ClassicalArgs, Cli, CliError, CollapseArgs, Command, EvolveArgs, Figure, PhaseArgs, ScalingArgs};

const P_UNIT: &str = "kbar (m+beta)";
const P2_UNIT: &str = "kbar^2 (m+beta)^2";

impl From<RecipeError> for CliError {
    fn from(e: RecipeError) -> Self {
        match e {
            RecipeError::Param(p) => p.into(),
            RecipeError::Engine(e) => e.into(),
            RecipeError::Scaling(e) => e.into(),
        }
    }
}

struct Run<'a> {
    cli: &'a Cli,
    argv: &'a [String],
}

impl Run<'_> {
    fn dir(&self) -> Result<ArtifactDir, CliError> {
        Ok(ArtifactDir::create(&self.cli.out)?)
    }

    fn seed(&self, default: u64) -> u64 {
        self.cli.seed.unwrap_or(default)
    }

    fn finish<C: Serialize>(&self, dir: ArtifactDir, command: &str, config: &C, seeds: &[u64], reductions: &[String]) -> Result<PathBuf, CliError> {
        let config = serde_json::to_value(config).map_err(anyhow::Error::from)?;
        Ok(dir.finish(command, self.argv, &config, seeds, self.cli.threads, reductions)?)
    }
}

pub fn dispatch(cli: &Cli, argv: &[String]) -> Result<PathBuf, CliError> {
    let run = Run { cli, argv };
    match &cli.command {
        Command::Classical(a) => classical(&run, a),
        Command::Evolve(a) => evolve(&run, a),
        Command::AndersonMap(a) => anderson_map(&run, a),
        Command::PhaseDiagram(a) => phase(&run, a),
        Command::Scaling(a) => scaling(&run, a),
        Command::Collapse(a) => collapse(&run, a),
        Command::Reproduce(a) => reproduce(&run, a.figure),
    }
}

fn require(cond: bool, msg: &str) -> Result<(), CliError> {
    if cond {
        Ok(())
    } else {
        Err(CliError::Validation(msg.to_string()))
    }
}

fn classical(run: &Run, a: &ClassicalArgs) -> Result<PathBuf, CliError> {
    require(a.kick >= 0.0 && a.kick.is_finite(), "K must be non-negative")?;
    require(a.trajectories >= 20, "need at least 20 trajectories")?;
    require(a.steps >= 2, "need at least 2 steps")?;
    let seed = run.seed(0);
    let est = classical_diffusion(a.kick, a.trajectories, a.steps, seed);
    let mut dir = run.dir()?;
    let mut t = Table::new(["step [kicks]", "mean_L2 [1]"]);
    for (n, v) in est.mean_l2.iter().enumerate() {
        t.push(vec![(n + 1).to_string(), num(*v)]);
    }
    dir.csv("classical.csv", &t)?;
    dir.json("summary.json", &json!({ "K": a.kick, "D": est.d, "std_err": est.std_err, "quasilinear": a.kick * a.kick / 4.0, "warning": est.warning }))?;
    let config = json!({ "K": a.kick, "trajectories": a.trajectories, "steps": a.steps, "seed": seed });
    run.finish(dir, "classical", &config, &[seed], &[])
}

pub fn series_table(s: &ObservableSeries) -> Table {
    let mut t = Table::new(["t [kicks]".to_string(), format!("p2 [{P2_UNIT}]"), "pi0 [1]".to_string()]);
    for i in 0..s.times.len() {
        t.push(vec![s.times[i].to_string(), num(s.p2[i]), num(s.pi0[i])]);
    }
    t
}

pub fn distribution_table(d: &MomentumDistribution) -> Table {
    let mut t = Table::new([format!("p [{P_UNIT}]"), "m [1]".to_string(), "Pi [1]".to_string()]);
    for (i, pi) in d.probs.iter().enumerate() {
        t.push(vec![num(d.momentum(i)), (d.m_min + i as i64).to_string(), num(*pi)]);
    }
    t
}

fn curves_table(curves: &[TransportCurve]) -> Table {
    let mut t = Table::new(["K [1]".to_string(), "epsilon [1]".to_string(), "t [kicks]".to_string(), format!("p2 [{P2_UNIT}]")]);
    for c in curves {
        for (tt, p) in c.times.iter().zip(&c.p2) {
            t.push_f64(&[c.kick, c.epsilon, *tt, *p]);
        }
    }
    t
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn evolve(run: &Run, a: &EvolveArgs) -> Result<PathBuf, CliError> {
    let mut cfg: RunConfig = match &a.config {
        Some(path) => load_json(path)?,
        None => {
            let omegas = a.omegas.clone().unwrap_or_else(|| if a.epsilon > 0.0 { default_omegas() } else { Vec::new() });
            let params = SimParams::quasiperiodic(a.kick, a.kbar, a.epsilon, omegas, a.kicks, a.half_width);
            RunConfig { params, ensemble: EnsembleSpec::uniform(a.members), initial_state: Default::default(), samples_per_decade: 30 }
        }
    };
    if let Some(s) = run.cli.seed {
        cfg.params.seed = s;
    }
    require(cfg.ensemble.n_members >= 1, "ensemble needs at least one member")?;
    require(cfg.samples_per_decade >= 1, "samples_per_decade must be positive")?;
    let params = validate(cfg.params.clone())?;
    let grid = TimeGrid::log_spaced(params.n_kicks, cfg.samples_per_decade);
    let result: EnsembleResult = run_ensemble(&params, &cfg.ensemble, &grid, cfg.initial_state, false)?;
    let mean = &result.mean;
    let curve = curve_from_series(params.kick, params.epsilon, mean, None, String::new());
    let summary = json!({
        "final_p2": mean.p2.last(),
        "final_beta_transport": late_beta(&curve, 1.0).ok(),
        "xi_m": mean.final_distribution.decay_length(1e-10),
        "shape": fit_distribution_shape(&mean.final_distribution).ok(),
        "p_loc_m": params.kick * params.kick / (4.0 * params.kbar),
        "fgp_applicable": params.fgp_applicable(),
        "members": mean.members.len(),
    });
    let mut dir = run.dir()?;
    dir.csv("series.csv", &series_table(mean))?;
    dir.csv("dist.csv", &distribution_table(&mean.final_distribution))?;
    dir.json("summary.json", &summary)?;
    run.finish(dir, "evolve", &cfg, &[cfg.params.seed], &[])
}

fn anderson_map(run: &Run, a: &AndersonArgs) -> Result<PathBuf, CliError> {
    require(a.kbar > 0.0, "kbar must be positive")?;
    require((0.0..1.0).contains(&a.beta_qm), "beta must lie in [0, 1)")?;
    let kappa = a.kick / a.kbar;
    let lattice = LatticeBox::centered(&[a.sites]);
    let onsite = pseudo_disorder(a.omega, a.kbar, a.beta_qm, &[], &lattice);
    let (best, other) = resolve_hopping_sign(a.kick, a.kbar, a.beta_qm, a.m_small)?;
    let hop = hopping_coefficients(kappa, 0.0, 1, a.r_max, a.n_quad, best.sign)?;

    let mut dir = run.dir()?;
    let mut t = Table::new(["m [1]", "E_m [1]"]);
    for (i, e) in onsite.iter().enumerate() {
        t.push(vec![(i as i64 - a.sites as i64).to_string(), num(*e)]);
    }
    dir.csv("onsite.csv", &t)?;
    let mut h = Table::new(["r [1]", "t_r [1]"]);
    for r in -(a.r_max as i64)..=(a.r_max as i64) {
        h.push(vec![r.to_string(), num(hop.get(&[r]))]);
    }
    dir.csv("hopping.csv", &h)?;
    dir.json("oracle.json", &json!({ "resolved_sign": best.sign, "selected": best, "rejected": other }))?;
    let config = json!({
        "K": a.kick, "kbar": a.kbar, "beta_qm": a.beta_qm, "omega": a.omega, "sites": a.sites,
        "r_max": a.r_max, "n_quad": a.n_quad, "m_small": a.m_small,
    });
    run.finish(dir, "anderson-map", &config, &[], &[])
}

fn write_phase_diagram(dir: &mut ArtifactDir, pd: &PhaseDiagram) -> Result<(), CliError> {
    let mut t = Table::new(["epsilon [1]", "K [1]", "beta [1]"]);
    for (i, eps) in pd.epsilons.iter().enumerate() {
        for (j, k) in pd.kicks.iter().enumerate() {
            t.push_f64(&[*eps, *k, pd.beta[i][j]]);
        }
    }
    dir.csv("beta.csv", &t)?;
    let mut c = Table::new(["epsilon [1]", "K [1]"]);
    for (eps, k) in &pd.contour {
        c.push_f64(&[*eps, *k]);
    }
    dir.csv("contour.csv", &c)?;
    Ok(())
}

fn lin(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn phase(run: &Run, a: &PhaseArgs) -> Result<PathBuf, CliError> {
    require(a.nk >= 1 && a.neps >= 1 && a.members >= 1, "grid and ensemble must be non-empty")?;
    let seed = run.seed(0);
    let spec = PhaseDiagramSpec {
        epsilons: lin(a.eps_min, a.eps_max, a.neps),
        kicks: lin(a.k_min, a.k_max, a.nk),
        base: SimParams::quasiperiodic(0.0, recipes::KBAR, 0.0, default_omegas(), a.t_eval, a.half_width).with_seed(seed),
        ensemble: EnsembleSpec::uniform(a.members),
        t_eval: a.t_eval,
        window_decades: a.window,
        samples_per_decade: 20,
    };
    let pd = phase_diagram(&spec)?;
    let mut dir = run.dir()?;
    write_phase_diagram(&mut dir, &pd)?;
    run.finish(dir, "phase-diagram", &spec, &[seed], &[])
}

fn write_scaling(dir: &mut ArtifactDir, curves: &[TransportCurve], r: &ScalingResult) -> Result<(), CliError> {
    dir.csv("curves.csv", &curves_table(curves))?;
    let mut l = Table::new(["K [1]", "x [ln t^(-1/3)]", "ln_Lambda [ln(p2 t^(-2/3))]", "x_shifted [x + ln xi]"]);
    for (c, shift) in r.lambda_curves.iter().zip(&r.ln_xi) {
        for (x, y) in c.x.iter().zip(&c.ln_lambda) {
            let xs = shift.map_or(String::new(), |s| num(x + s));
            l.push(vec![num(c.kick), num(*x), num(*y), xs]);
        }
    }
    dir.csv("lambda.csv", &l)?;
    let mut x = Table::new(["K [1]", "epsilon [1]", "late_beta [1]", "branch", "ln_xi [1]"]);
    for (i, c) in curves.iter().enumerate() {
        let branch = match r.branches[i] {
            Branch::Localized => "localized",
            Branch::Diffusive => "diffusive",
            Branch::Critical => "critical",
        };
        x.push(vec![num(c.kick), num(c.epsilon), num(r.late_beta[i]), branch.into(), r.ln_xi[i].map_or(String::new(), num)]);
    }
    dir.csv("xi.csv", &x)?;
    dir.json(
        "fit.json",
        &json!({
            "K_c": r.k_c, "nu": r.nu, "nu_se": r.nu_se, "localized": r.localized, "diffusive": r.diffusive,
            "collapse_residual": r.collapse_residual, "bootstrap": r.bootstrap,
        }),
    )?;
    Ok(())
}

fn scaling(run: &Run, a: &ScalingArgs) -> Result<PathBuf, CliError> {
    let seed = run.seed(0);
    let opts = kr_core::scaling::FtsOptions { k_c: a.k_c, min_time: a.min_time, n_bootstrap: a.bootstrap, seed, ..recipes::fts_options(seed) };
    let (curves, config) = match &a.curves {
        Some(path) => (load_json::<Vec<TransportCurve>>(path)?, json!({ "curves": path, "options": opts })),
        None => {
            require(a.nk >= 2 && a.members >= 1, "need at least two K values and one member")?;
            let path = PathSpec {
                kicks: lin(a.k_min, a.k_max, a.nk),
                k_ref: a.k_ref,
                eps_ref: a.eps_ref,
                eps_slope: a.eps_slope,
                n_kicks: a.kicks,
                members: a.members,
                half_width: a.half_width,
            };
            (recipes::path_curves(&path, seed)?, json!({ "path": path, "options": opts }))
        }
    };
    let result = finite_time_scaling(&curves, &opts)?;
    let mut dir = run.dir()?;
    write_scaling(&mut dir, &curves, &result)?;
    run.finish(dir, "scaling", &config, &[seed], &[])
}

fn write_collapse(dir: &mut ArtifactDir, name: &str, times: &[u64], dists: &[MomentumDistribution]) -> Result<(), CliError> {
    let mut t = Table::new(["t [kicks]", "q [p t^(-1/3)]", "g [t^(1/3) Pi / dp]"]);
    for (&tt, d) in times.iter().zip(dists) {
        let s = (tt as f64).powf(1.0 / 3.0);
        for (i, pi) in d.probs.iter().enumerate() {
            t.push_f64(&[tt as f64, d.momentum(i) / s, pi * s / d.kbar]);
        }
    }
    Ok(dir.csv(name, &t)?)
}

fn collapse(run: &Run, a: &CollapseArgs) -> Result<PathBuf, CliError> {
    require(a.times.len() >= 2 && a.times.iter().all(|&t| t > 0), "need at least two positive times")?;
    let seed = run.seed(0);
    let dists: Vec<MomentumDistribution> = a
        .times
        .iter()
        .map(|&t| recipes::distribution_at(SimParams::quasiperiodic(a.kick, recipes::KBAR, a.epsilon, default_omegas(), t, a.half_width).with_seed(seed), a.members, t))
        .collect::<Result<_, _>>()?;
    let pairs: Vec<(f64, &MomentumDistribution)> = a.times.iter().zip(&dists).map(|(&t, d)| (t as f64, d)).collect();
    let report = critical_collapse(&pairs);
    let mut dir = run.dir()?;
    write_collapse(&mut dir, "collapse.csv", &a.times, &dists)?;
    dir.json("report.json", &report)?;
    let config = json!({ "K": a.kick, "epsilon": a.epsilon, "times": a.times, "members": a.members, "half_width": a.half_width, "seed": seed });
    run.finish(dir, "collapse", &config, &[seed], &[])
}

const RECIPE_SEED: u64 = 1;

fn reproduce(run: &Run, fig: Figure) -> Result<PathBuf, CliError> {
    let seed = run.seed(RECIPE_SEED);
    let config = json!({ "figure": format!("{fig:?}"), "seed": seed });
    let (dir, reductions) = match fig {
        Figure::Fig3 => {
            let r = recipes::fig3(seed)?;
            let mut dir = run.dir()?;
            dir.csv("curves.csv", &curves_table(std::slice::from_ref(&r.curve)))?;
            dir.csv("dist_30.csv", &distribution_table(&r.dist_30))?;
            dir.csv("dist_final.csv", &distribution_table(&r.dist_final))?;
            dir.json("fit.json", &json!({ "late_beta": r.late_beta, "fit_30": r.fit_30, "fit_final": r.fit_final }))?;
            (dir, recipes::fig3_reductions())
        }
        Figure::Fig4 => {
            let r = recipes::fig4(seed)?;
            let mut dir = run.dir()?;
            let curves: Vec<TransportCurve> = r.iter().map(|c| c.curve.clone()).collect();
            dir.csv("curves.csv", &curves_table(&curves))?;
            for (i, c) in r.iter().enumerate() {
                dir.csv(&format!("dist150_{i}.csv"), &distribution_table(&c.dist_150))?;
            }
            let fits: Vec<_> = r.iter().map(|c| json!({ "K": c.kick, "epsilon": c.epsilon, "late_beta": c.late_beta, "fit_150": c.fit_150 })).collect();
            dir.json("fit.json", &fits)?;
            (dir, recipes::fig4_reductions())
        }
        Figure::Fig5Small => {
            let pd = recipes::fig5_small(seed)?;
            let mut dir = run.dir()?;
            write_phase_diagram(&mut dir, &pd)?;
            (dir, recipes::fig5_reductions())
        }
        Figure::Fig6 => {
            let (curves, result) = recipes::fig6(seed)?;
            let mut dir = run.dir()?;
            write_scaling(&mut dir, &curves, &result)?;
            (dir, recipes::fig6_reductions())
        }
        Figure::Fig7 => {
            let r = recipes::fig7(seed)?;
            let mut dir = run.dir()?;
            write_collapse(&mut dir, "critical.csv", &r.critical_times, &r.critical_dists)?;
            write_collapse(&mut dir, "control.csv", &r.control_times, &r.control_dists)?;
            dir.json("report.json", &json!({ "critical": r.critical, "critical_report": r.critical_report, "control": r.control, "control_report": r.control_report }))?;
            (dir, recipes::fig7_reductions())
        }
        Figure::Fig8 => {
            let (runs, report) = recipes::fig8(seed)?;
            let mut dir = run.dir()?;
            let curves: Vec<TransportCurve> = runs.iter().map(|r| r.curve.clone()).collect();
            dir.csv("curves.csv", &curves_table(&curves))?;
            let mut t = Table::new(["epsilon [1]", "ln_p2_sat [ln kbar^2 (m+beta)^2]"]);
            for (e, p) in report.epsilons.iter().zip(&report.p2_sat) {
                t.push_f64(&[*e, p.ln()]);
            }
            dir.csv("law.csv", &t)?;
            dir.json("fit.json", &report)?;
            (dir, recipes::fig8_reductions())
        }
    };
    run.finish(dir, &format!("reproduce {fig:?}").to_lowercase(), &config, &[seed], &reductions)
}
