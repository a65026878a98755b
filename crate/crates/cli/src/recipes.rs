//! Desk-scale recipes for the reference experiments. Each recipe pins its
//! ensemble size, run length and basis, and lists how it departs from the
//! full-scale run.

use std::f64::consts::TAU;

use kr_core::engine::{run_ensemble, EngineError, EnsembleResult, MomentumDistribution, TimeGrid};
use kr_core::params::{default_omegas, validate, EnsembleSpec, InitialState, SimParams};
use kr_core::scaling::{
    critical_collapse, curve_from_series, fit_distribution_shape, late_beta, phase_diagram, two_d_localization_law, finite_time_scaling,
    CollapseReport, FtsOptions, PhaseDiagram, PhaseDiagramSpec, SaturationRun, ScalingError, ScalingResult, ShapeFit, TransportCurve,
    TwoDLawReport,
};
use serde::Serialize;

pub const KBAR: f64 = 2.89;
pub const SAMPLES_PER_DECADE: usize = 30;

/// Failure inside a recipe.
#[derive(Debug, thiserror::Error)]
pub enum RecipeError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Scaling(#[from] ScalingError),
    #[error(transparent)]
    Param(#[from] kr_core::params::ParamError),
}

pub fn ensemble(params: SimParams, members: usize, sampling: &TimeGrid, keep: bool) -> Result<EnsembleResult, RecipeError> {
    let p = validate(params)?;
    Ok(run_ensemble(&p, &EnsembleSpec::uniform(members), sampling, InitialState::MomentumDelta, keep)?)
}

fn tag(p: &SimParams) -> String {
    format!("K={} kbar={} eps={} M={} seed={}", p.kick, p.kbar, p.epsilon, p.basis_half_width, p.seed)
}

/// Ensemble curve on a log-spaced grid plus the final distribution.
pub fn transport(params: SimParams, members: usize, keep_members: bool) -> Result<(TransportCurve, MomentumDistribution), RecipeError> {
    let grid = TimeGrid::log_spaced(params.n_kicks, SAMPLES_PER_DECADE);
    let r = ensemble(params.clone(), members, &grid, keep_members)?;
    let c = curve_from_series(params.kick, params.epsilon, &r.mean, r.members.as_deref(), tag(&params));
    Ok((c, r.mean.final_distribution))
}

/// Distribution at one time only.
pub fn distribution_at(mut params: SimParams, members: usize, t: u64) -> Result<MomentumDistribution, RecipeError> {
    params.n_kicks = t;
    Ok(ensemble(params, members, &TimeGrid::from_times(vec![t]), false)?.mean.final_distribution)
}

#[derive(Debug, Clone, Serialize)]
pub struct Fig3 {
    pub curve: TransportCurve,
    pub late_beta: f64,
    /// Distribution after 30 kicks, the reference time for the shape fit.
    pub dist_30: MomentumDistribution,
    pub fit_30: ShapeFit,
    pub dist_final: MomentumDistribution,
    pub fit_final: ShapeFit,
}

pub const FIG3_MEMBERS: usize = 200;
pub const FIG3_KICKS: u64 = 200;

/// Dynamical localization at `K = 7.2`, `kbar = 2.89`.
pub fn fig3(seed: u64) -> Result<Fig3, RecipeError> {
    let p = SimParams::periodic(7.2, KBAR, FIG3_KICKS, 1024).with_seed(seed);
    let (curve, dist_final) = transport(p.clone(), FIG3_MEMBERS, false)?;
    let dist_30 = distribution_at(p, FIG3_MEMBERS, 30)?;
    Ok(Fig3 {
        late_beta: late_beta(&curve, 1.0)?,
        fit_30: fit_distribution_shape(&dist_30)?,
        fit_final: fit_distribution_shape(&dist_final)?,
        curve,
        dist_30,
        dist_final,
    })
}

pub fn fig3_reductions() -> Vec<String> {
    vec![format!("{FIG3_MEMBERS} quasimomenta, {FIG3_KICKS} kicks, M = 1024")]
}

#[derive(Debug, Clone, Serialize)]
pub struct Fig4Curve {
    pub kick: f64,
    pub epsilon: f64,
    pub curve: TransportCurve,
    pub late_beta: f64,
    /// Distribution after 150 kicks, the reference time for the shape fits.
    pub dist_150: MomentumDistribution,
    pub fit_150: ShapeFit,
}

pub const FIG4_POINTS: [(f64, f64); 3] = [(4.0, 0.35), (6.3, 0.55), (9.0, 0.8)];
pub const FIG4_MEMBERS: usize = 500;
pub const FIG4_KICKS: u64 = 1000;

/// Localized, near-critical and diffusive curves with three frequencies.
pub fn fig4(seed: u64) -> Result<Vec<Fig4Curve>, RecipeError> {
    FIG4_POINTS
        .iter()
        .map(|&(k, eps)| {
            let p = SimParams::quasiperiodic(k, KBAR, eps, default_omegas(), FIG4_KICKS, 1024).with_seed(seed);
            let (curve, _) = transport(p.clone(), FIG4_MEMBERS, false)?;
            let dist_150 = distribution_at(p, FIG4_MEMBERS, 150)?;
            Ok(Fig4Curve { kick: k, epsilon: eps, late_beta: late_beta(&curve, 1.0)?, fit_150: fit_distribution_shape(&dist_150)?, curve, dist_150 })
        })
        .collect()
}

pub fn fig4_reductions() -> Vec<String> {
    vec![format!("t = {FIG4_KICKS} instead of 10^4, {FIG4_MEMBERS} members, M = 1024")]
}

pub fn fig5_spec(seed: u64) -> PhaseDiagramSpec {
    let lin = |a: f64, b: f64, n: usize| (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect::<Vec<_>>();
    PhaseDiagramSpec {
        epsilons: lin(0.1, 0.9, 16),
        kicks: lin(4.0, 10.0, 16),
        base: SimParams::quasiperiodic(0.0, KBAR, 0.0, default_omegas(), 1000, 512).with_seed(seed),
        ensemble: EnsembleSpec::uniform(24),
        t_eval: 1000,
        window_decades: 0.5,
        samples_per_decade: 20,
    }
}

/// 16 x 16 phase diagram.
pub fn fig5_small(seed: u64) -> Result<PhaseDiagram, RecipeError> {
    Ok(phase_diagram(&fig5_spec(seed))?)
}

pub fn fig5_reductions() -> Vec<String> {
    vec!["16 x 16 grid, beta at t = 10^3 over half a decade, 24 members per cell, M = 512".into()]
}

/// Path `epsilon = 0.72 + 0.2 (K - 4.7)` through the transition near `K = 4.7`.
#[derive(Debug, Clone, Serialize)]
pub struct PathSpec {
    pub kicks: Vec<f64>,
    pub k_ref: f64,
    pub eps_ref: f64,
    pub eps_slope: f64,
    pub n_kicks: u64,
    pub members: usize,
    pub half_width: usize,
}

impl Default for PathSpec {
    fn default() -> Self {
        PathSpec {
            kicks: (0..13).map(|i| 3.3 + 0.2 * i as f64).collect(),
            k_ref: 4.7,
            eps_ref: 0.72,
            eps_slope: 0.2,
            n_kicks: 1000,
            members: 500,
            half_width: 512,
        }
    }
}

impl PathSpec {
    pub fn epsilon(&self, k: f64) -> f64 {
        self.eps_ref + self.eps_slope * (k - self.k_ref)
    }
}

/// Curves along a path, with per-member data kept for the bootstrap.
pub fn path_curves(path: &PathSpec, seed: u64) -> Result<Vec<TransportCurve>, RecipeError> {
    path.kicks
        .iter()
        .map(|&k| {
            let p = SimParams::quasiperiodic(k, KBAR, path.epsilon(k), default_omegas(), path.n_kicks, path.half_width).with_seed(seed);
            Ok(transport(p, path.members, true)?.0)
        })
        .collect()
}

pub fn fts_options(seed: u64) -> FtsOptions {
    FtsOptions { min_time: 10.0, n_bootstrap: 200, seed, ..FtsOptions::default() }
}

/// Finite-time scaling along the default path.
pub fn fig6(seed: u64) -> Result<(Vec<TransportCurve>, ScalingResult), RecipeError> {
    let curves = path_curves(&PathSpec::default(), seed)?;
    let result = finite_time_scaling(&curves, &fts_options(seed))?;
    Ok((curves, result))
}

pub fn fig6_reductions() -> Vec<String> {
    vec!["13 curves to t = 10^3 instead of 10^4, 500 members, M = 512; first 10 kicks left out".into()]
}

#[derive(Debug, Clone, Serialize)]
pub struct Fig7 {
    pub critical: (f64, f64),
    pub critical_times: Vec<u64>,
    pub critical_dists: Vec<MomentumDistribution>,
    pub critical_report: CollapseReport,
    pub control: (f64, f64),
    pub control_times: Vec<u64>,
    pub control_dists: Vec<MomentumDistribution>,
    pub control_report: CollapseReport,
}

pub const FIG7_MEMBERS: usize = 500;

/// Critical-state collapse at `(6.3, 0.55)` with a localized control at `(4, 0.35)`.
pub fn fig7(seed: u64) -> Result<Fig7, RecipeError> {
    let run = |k: f64, eps: f64, times: &[u64]| -> Result<Vec<MomentumDistribution>, RecipeError> {
        times
            .iter()
            .map(|&t| distribution_at(SimParams::quasiperiodic(k, KBAR, eps, default_omegas(), t, 512).with_seed(seed), FIG7_MEMBERS, t))
            .collect()
    };
    let report = |times: &[u64], d: &[MomentumDistribution]| {
        let pairs: Vec<(f64, &MomentumDistribution)> = times.iter().zip(d).map(|(&t, x)| (t as f64, x)).collect();
        critical_collapse(&pairs)
    };
    let critical_times = vec![300, 1000];
    let control_times = vec![300, 1000, 3000];
    let critical_dists = run(6.3, 0.55, &critical_times)?;
    let control_dists = run(4.0, 0.35, &control_times)?;
    Ok(Fig7 {
        critical: (6.3, 0.55),
        critical_report: report(&critical_times, &critical_dists),
        control: (4.0, 0.35),
        control_report: report(&control_times, &control_dists),
        critical_times,
        critical_dists,
        control_times,
        control_dists,
    })
}

pub fn fig7_reductions() -> Vec<String> {
    vec![format!("{FIG7_MEMBERS} members, M = 512")]
}

pub const FIG8_KICK: f64 = 5.34;
pub const FIG8_EPSILONS: [f64; 5] = [0.0, 0.2, 0.4, 0.6, 0.8];
pub const FIG8_MEMBERS: usize = 300;
/// The reference points are taken after 10^3 kicks, before full saturation.
pub const FIG8_BETA_THRESHOLD: f64 = 0.5;

/// One extra frequency: 2D localization length against epsilon.
pub fn fig8_runs(epsilons: &[f64], seed: u64) -> Result<Vec<SaturationRun>, RecipeError> {
    epsilons
        .iter()
        .map(|&eps| {
            let p = SimParams::quasiperiodic(FIG8_KICK, KBAR, eps, vec![TAU * 5f64.sqrt()], 1000, 1024).with_seed(seed);
            Ok(SaturationRun { epsilon: eps, curve: transport(p, FIG8_MEMBERS, false)?.0 })
        })
        .collect()
}

pub fn fig8(seed: u64) -> Result<(Vec<SaturationRun>, TwoDLawReport), RecipeError> {
    let runs = fig8_runs(&FIG8_EPSILONS, seed)?;
    let report = two_d_localization_law(&runs, FIG8_KICK, KBAR, FIG8_BETA_THRESHOLD)?;
    Ok((runs, report))
}

pub fn fig8_reductions() -> Vec<String> {
    vec![format!(
        "{FIG8_MEMBERS} members, t = 10^3; saturation threshold on the final-decade exponent raised to {FIG8_BETA_THRESHOLD}"
    )]
}
