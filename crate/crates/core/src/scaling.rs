//! Transport exponents, phase diagrams, finite-time scaling, critical
//! collapse, distribution shapes and the 2D localization law.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{run_ensemble, EngineError, MomentumDistribution, TimeGrid};
use crate::fit::{bisect, scan_then_refine};
use crate::params::{validate, EnsembleSpec, InitialState, ParamError, SimParams};
use crate::seed::member_rng;
use crate::stats::{linear_fit, mean, median, std_dev, CompensatedSum, LinearFit};

/// Transport exponent at the 3D critical point.
pub const BETA_CRITICAL: f64 = 2.0 / 3.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScalingError {
    #[error("window holds {samples} samples, at least 5 are needed")]
    WindowTooNarrow { samples: usize },
    #[error("invalid transport curve {index}: {reason}")]
    InvalidCurve { index: usize, reason: &'static str },
    #[error("curves {a} and {b} share no range of Lambda")]
    NoOverlap { a: usize, b: usize },
    #[error("curve {index} (late beta {beta:.3}) cannot be assigned to a branch")]
    BranchAssignmentAmbiguous { index: usize, beta: f64 },
    #[error("need {needed} curves, got {got}")]
    InsufficientCurves { needed: usize, got: usize },
    #[error("no crossing of beta = 2/3 among the curves")]
    NoCriticalCrossing,
    #[error("fit failed: {0}")]
    FitFailed(&'static str),
    #[error("fit diverged: alpha = {alpha:.3} at the edge of [0.1, 5]")]
    FitDiverged { alpha: f64 },
    #[error("runs not saturated (index, beta): {runs:?}")]
    NotSaturated { runs: Vec<(usize, f64)> },
    #[error("cell ({eps_index}, {k_index}): {source}")]
    Cell {
        eps_index: usize,
        k_index: usize,
        #[source]
        source: EngineError,
    },
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// Ensemble-averaged `<p^2>(t)` at one point of a parameter path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportCurve {
    pub kick: f64,
    pub epsilon: f64,
    pub times: Vec<f64>,
    pub p2: Vec<f64>,
    pub n_members: usize,
    /// Free-form origin tag, e.g. a hash of the generating parameters.
    pub provenance: String,
    /// Per-member `<p^2>` on the same times, for bootstrap resampling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub member_p2: Option<Vec<Vec<f64>>>,
}

impl TransportCurve {
    pub fn new(kick: f64, epsilon: f64, times: Vec<f64>, p2: Vec<f64>) -> Self {
        TransportCurve { kick, epsilon, times, p2, n_members: 1, provenance: String::new(), member_p2: None }
    }

    fn check(&self, index: usize) -> Result<(), ScalingError> {
        let bad = |reason| Err(ScalingError::InvalidCurve { index, reason });
        if self.times.len() != self.p2.len() {
            return bad("times and p2 differ in length");
        }
        if !self.times.windows(2).all(|w| w[0] < w[1]) || self.times.first().is_some_and(|&t| t <= 0.0) {
            return bad("times must be positive and strictly increasing");
        }
        if !self.p2.iter().all(|&v| v > 0.0 && v.is_finite()) {
            return bad("<p^2> must be positive");
        }
        Ok(())
    }
}

/// Local exponents `beta(t) = d ln<p^2> / d ln t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaSeries {
    pub times: Vec<f64>,
    pub beta: Vec<f64>,
}

fn log_slope(times: &[f64], p2: &[f64]) -> Result<LinearFit, ScalingError> {
    if times.len() < 5 {
        return Err(ScalingError::WindowTooNarrow { samples: times.len() });
    }
    let x: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let y: Vec<f64> = p2.iter().map(|p| p.ln()).collect();
    linear_fit(&x, &y).ok_or(ScalingError::WindowTooNarrow { samples: times.len() })
}

/// Windowed log-log regression centered on every sample whose window of
/// `window_decades` fits inside the data.
pub fn beta_transport(curve: &TransportCurve, window_decades: f64) -> Result<BetaSeries, ScalingError> {
    curve.check(0)?;
    let half = 10f64.powf(window_decades / 2.0);
    let (t_first, t_last) = (curve.times[0], *curve.times.last().unwrap());
    let mut out = BetaSeries { times: Vec::new(), beta: Vec::new() };
    for &t in &curve.times {
        let (lo, hi) = (t / half, t * half);
        if lo < t_first * (1.0 - 1e-12) || hi > t_last * (1.0 + 1e-12) {
            continue;
        }
        let idx: Vec<usize> = (0..curve.times.len()).filter(|&i| curve.times[i] >= lo * (1.0 - 1e-12) && curve.times[i] <= hi * (1.0 + 1e-12)).collect();
        let ts: Vec<f64> = idx.iter().map(|&i| curve.times[i]).collect();
        let ps: Vec<f64> = idx.iter().map(|&i| curve.p2[i]).collect();
        out.times.push(t);
        out.beta.push(log_slope(&ts, &ps)?.slope);
    }
    if out.times.is_empty() {
        return Err(ScalingError::WindowTooNarrow { samples: 0 });
    }
    Ok(out)
}

/// Exponent fitted over `[t_end / 10^decades, t_end]`.
pub fn beta_at(curve: &TransportCurve, t_end: f64, decades: f64) -> Result<f64, ScalingError> {
    let lo = t_end / 10f64.powf(decades);
    let idx: Vec<usize> = (0..curve.times.len()).filter(|&i| curve.times[i] >= lo * (1.0 - 1e-12) && curve.times[i] <= t_end * (1.0 + 1e-12)).collect();
    let ts: Vec<f64> = idx.iter().map(|&i| curve.times[i]).collect();
    let ps: Vec<f64> = idx.iter().map(|&i| curve.p2[i]).collect();
    Ok(log_slope(&ts, &ps)?.slope)
}

/// Exponent over the final `decades` of the curve.
pub fn late_beta(curve: &TransportCurve, decades: f64) -> Result<f64, ScalingError> {
    curve.check(0)?;
    beta_at(curve, *curve.times.last().unwrap(), decades)
}

/// Curve from an ensemble-averaged series, optionally with member data.
pub fn curve_from_series(
    kick: f64,
    epsilon: f64,
    series: &crate::engine::ObservableSeries,
    members: Option<&[crate::engine::ObservableSeries]>,
    provenance: String,
) -> TransportCurve {
    TransportCurve {
        kick,
        epsilon,
        times: series.times.iter().map(|&t| t as f64).collect(),
        p2: series.p2.clone(),
        n_members: series.members.len(),
        provenance,
        member_p2: members.map(|m| m.iter().map(|s| s.p2.clone()).collect()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseDiagramSpec {
    pub epsilons: Vec<f64>,
    pub kicks: Vec<f64>,
    /// Template for every cell; `K` and `epsilon` are overwritten.
    pub base: SimParams,
    pub ensemble: EnsembleSpec,
    /// Time at which `beta` is evaluated; also the run length.
    pub t_eval: u64,
    /// Regression window ending at `t_eval`, in decades.
    pub window_decades: f64,
    pub samples_per_decade: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseDiagram {
    pub epsilons: Vec<f64>,
    pub kicks: Vec<f64>,
    /// `beta[i][j]` at `(epsilons[i], kicks[j])`.
    pub beta: Vec<Vec<f64>>,
    /// Points `(epsilon, K)` where `beta` crosses 2/3 along a grid line.
    pub contour: Vec<(f64, f64)>,
}

/// `beta` on every cell of an `(epsilon, K)` grid. Cells run one after
/// another; each ensemble is parallel internally.
pub fn phase_diagram(spec: &PhaseDiagramSpec) -> Result<PhaseDiagram, ScalingError> {
    let mut beta = vec![vec![0.0; spec.kicks.len()]; spec.epsilons.len()];
    let grid = TimeGrid::log_spaced(spec.t_eval, spec.samples_per_decade);
    for (i, &eps) in spec.epsilons.iter().enumerate() {
        for (j, &k) in spec.kicks.iter().enumerate() {
            let mut p = spec.base.clone();
            p.kick = k;
            p.epsilon = eps;
            p.n_kicks = spec.t_eval;
            let p = validate(p)?;
            let run = run_ensemble(&p, &spec.ensemble, &grid, InitialState::MomentumDelta, false)
                .map_err(|source| ScalingError::Cell { eps_index: i, k_index: j, source })?;
            let curve = curve_from_series(k, eps, &run.mean, None, String::new());
            beta[i][j] = beta_at(&curve, spec.t_eval as f64, spec.window_decades)?;
        }
    }
    let contour = beta_contour(&spec.epsilons, &spec.kicks, &beta, BETA_CRITICAL);
    Ok(PhaseDiagram { epsilons: spec.epsilons.clone(), kicks: spec.kicks.clone(), beta, contour })
}

/// Linear-interpolated crossings of `level` along rows and columns of the grid.
pub fn beta_contour(epsilons: &[f64], kicks: &[f64], beta: &[Vec<f64>], level: f64) -> Vec<(f64, f64)> {
    let mut pts = Vec::new();
    let cross = |a: f64, b: f64| (a - level) * (b - level) < 0.0 || (a == level && b != level);
    for (i, row) in beta.iter().enumerate() {
        for j in 0..row.len().saturating_sub(1) {
            if cross(row[j], row[j + 1]) {
                let f = (level - row[j]) / (row[j + 1] - row[j]);
                pts.push((epsilons[i], kicks[j] + f * (kicks[j + 1] - kicks[j])));
            }
        }
    }
    for j in 0..kicks.len() {
        for i in 0..beta.len().saturating_sub(1) {
            let (a, b) = (beta[i][j], beta[i + 1][j]);
            if cross(a, b) {
                let f = (level - a) / (b - a);
                pts.push((epsilons[i] + f * (epsilons[i + 1] - epsilons[i]), kicks[j]));
            }
        }
    }
    pts
}

/// Location of `beta = 2/3` along a path, from the late exponents of curves
/// sorted by `K`: the first sign change, linearly interpolated.
pub fn critical_crossing(curves: &[TransportCurve], decades: f64) -> Result<f64, ScalingError> {
    let mut pts: Vec<(f64, f64)> = curves.iter().map(|c| Ok((c.kick, late_beta(c, decades)?))).collect::<Result<_, ScalingError>>()?;
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in pts.windows(2) {
        let (a, b) = (w[0].1 - BETA_CRITICAL, w[1].1 - BETA_CRITICAL);
        if a == 0.0 {
            return Ok(w[0].0);
        }
        if a * b < 0.0 {
            return Ok(w[0].0 + a / (a - b) * (w[1].0 - w[0].0));
        }
    }
    Err(ScalingError::NoCriticalCrossing)
}

/// Shape-preserving piecewise cubic Hermite interpolant on increasing abscissae.
#[derive(Debug, Clone)]
struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        assert!(n >= 2);
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let del: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d = vec![del[0]; 2];
        } else {
            for k in 1..n - 1 {
                if del[k - 1] * del[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / del[k - 1] + w2 / del[k]);
                }
            }
            let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
                let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
                if s.signum() != d0.signum() {
                    0.0
                } else if d0.signum() != d1.signum() && s.abs() > 3.0 * d0.abs() {
                    3.0 * d0
                } else {
                    s
                }
            };
            d[0] = end(h[0], h[1], del[0], del[1]);
            d[n - 1] = end(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
        }
        Pchip { x, y, d }
    }

    fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let k = match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[k] + h10 * h * self.d[k] + h01 * self.y[k + 1] + h11 * h * self.d[k + 1]
    }

    fn lo(&self) -> f64 {
        self.x[0]
    }

    fn hi(&self) -> f64 {
        *self.x.last().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Localized,
    Diffusive,
    /// Late exponent within the critical band; left out of both fits.
    Critical,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FtsOptions {
    /// Fixed critical point; `None` takes the `beta = 2/3` crossing.
    pub k_c: Option<f64>,
    /// Samples before this time are left out.
    pub min_time: f64,
    /// Window for the late exponent used in branch assignment.
    pub beta_decades: f64,
    pub n_bootstrap: usize,
    pub seed: u64,
    /// Smallest shared fraction of the abscissa range when matching two curves.
    pub min_overlap: f64,
    /// Curves with `|beta - 2/3|` up to this value count as critical.
    pub critical_band: f64,
}

impl Default for FtsOptions {
    fn default() -> Self {
        FtsOptions { k_c: None, min_time: 1.0, beta_decades: 1.0, n_bootstrap: 200, seed: 0, min_overlap: 0.3, critical_band: 0.05 }
    }
}

/// `ln Lambda` against `X = ln t^{-1/3}`, abscissae increasing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaCurve {
    pub kick: f64,
    pub x: Vec<f64>,
    pub ln_lambda: Vec<f64>,
}

/// Cutoff fit `ln xi = c - nu ln(a + |K - K_c|)` on one side of the transition,
/// i.e. `xi = [alpha_cutoff + b |K - K_c|]^-nu` with `a = alpha_cutoff / b`
/// and `c = -nu ln b`. The overall scale of `xi` is set by the anchor curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchFit {
    pub n_curves: usize,
    pub nu: f64,
    /// Regression standard error of `nu` at the fitted cutoff.
    pub nu_se: f64,
    pub alpha_cutoff: f64,
    pub b: f64,
    pub a: f64,
    pub c: f64,
    /// Covariance of `(c, nu)` at the fitted cutoff.
    pub covariance: [[f64; 2]; 2],
    /// Log-log slope of the collapsed branch over its lowest quarter in `ln(xi t^{-1/3})`.
    pub asymptotic_slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bootstrap {
    pub n_valid: usize,
    pub nu_localized_se: f64,
    pub nu_diffusive_se: f64,
    pub nu_se: f64,
    /// 2.5% and 97.5% percentiles of the combined `nu`.
    pub nu_interval: (f64, f64),
    /// Resampled ensemble members (true) or fit residuals (false).
    pub members: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingResult {
    pub k_c: f64,
    pub lambda_curves: Vec<LambdaCurve>,
    pub branches: Vec<Branch>,
    pub late_beta: Vec<f64>,
    /// Shift `ln xi` per curve in input order; zero at each branch anchor
    /// and absent for critical curves.
    pub ln_xi: Vec<Option<f64>>,
    pub localized: BranchFit,
    pub diffusive: BranchFit,
    /// Common exponent of both sides.
    pub nu: f64,
    pub nu_se: f64,
    /// Mean squared mismatch between adjacent collapsed curves.
    pub collapse_residual: f64,
    pub bootstrap: Option<Bootstrap>,
}

fn lambda_curve(c: &TransportCurve, min_time: f64) -> LambdaCurve {
    let mut pts: Vec<(f64, f64)> = c
        .times
        .iter()
        .zip(&c.p2)
        .filter(|(t, _)| **t >= min_time)
        .map(|(t, p)| (-t.ln() / 3.0, p.ln() - 2.0 / 3.0 * t.ln()))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    LambdaCurve { kick: c.kick, x: pts.iter().map(|p| p.0).collect(), ln_lambda: pts.iter().map(|p| p.1).collect() }
}

fn mismatch(a: &Pchip, sa: f64, b: &Pchip, sb: f64) -> Option<f64> {
    let lo = (a.lo() + sa).max(b.lo() + sb);
    let hi = (a.hi() + sa).min(b.hi() + sb);
    if hi <= lo {
        return None;
    }
    let n = 64;
    let s: f64 = (0..n)
        .map(|i| {
            let u = lo + (hi - lo) * (i as f64 + 0.5) / n as f64;
            (a.eval(u - sa) - b.eval(u - sb)).powi(2)
        })
        .sum();
    Some(s / n as f64)
}

/// Shift of `b` relative to `a` (already at shift `sa`) that best overlays them.
fn match_shift(a: &Pchip, sa: f64, b: &Pchip, min_overlap: f64) -> (f64, f64) {
    let span = (a.hi() - a.lo()).min(b.hi() - b.lo());
    let reach = (1.0 - min_overlap) * span;
    // centre the search where the two abscissa ranges coincide
    let base = sa + a.lo() - b.lo();
    let f = |d: f64| mismatch(a, sa, b, base + d).unwrap_or(f64::INFINITY);
    let (d, m) = scan_then_refine(f, -reach, reach, 161, 1e-10);
    (base + d, m)
}

fn range_of(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// For fixed cutoff `a`, least squares of `y = c - nu x` with `x = ln(a + delta)`.
fn cutoff_regression(delta: &[f64], y: &[f64], a: f64) -> Option<LinearFit> {
    let x: Vec<f64> = delta.iter().map(|d| (a + d).ln()).collect();
    linear_fit(&x, y)
}

fn sse_of(fit: &LinearFit, delta: &[f64], y: &[f64], a: f64) -> f64 {
    delta.iter().zip(y).map(|(d, yy)| (yy - fit.predict((a + d).ln())).powi(2)).sum()
}

/// The cutoff may be negative as long as `a + delta` stays positive on the
/// data; this moves the divergence point away from `K_c` on this side.
fn fit_side(delta: &[f64], y: &[f64]) -> Result<(f64, LinearFit), ScalingError> {
    let (dmin, dmax) = range_of(delta);
    let objective = |a: f64| cutoff_regression(delta, y, a).map_or(f64::INFINITY, |f| sse_of(&f, delta, y, a));
    let lo = -(1.0 - 1e-3) * dmin;
    let (a, _) = scan_then_refine(objective, lo, 3.0 * dmax, 161, 1e-10);
    let a = a.max(lo);
    let fit = cutoff_regression(delta, y, a).ok_or(ScalingError::FitFailed("degenerate cutoff regression"))?;
    Ok((a, fit))
}

fn branch_fit(delta: &[f64], y: &[f64], slope: f64) -> Result<BranchFit, ScalingError> {
    let (a, fit) = fit_side(delta, y)?;
    let nu = -fit.slope;
    if !(nu > 0.0) {
        return Err(ScalingError::FitFailed("non-positive exponent"));
    }
    let x: Vec<f64> = delta.iter().map(|d| (a + d).ln()).collect();
    let n = x.len() as f64;
    let mx = mean(&x);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let s2 = if n > 2.0 { sse_of(&fit, delta, y, a) / (n - 2.0) } else { f64::NAN };
    let var_slope = s2 / sxx;
    let var_c = s2 * (1.0 / n + mx * mx / sxx);
    let cov = -mx * var_slope;
    let b = (-fit.intercept / nu).exp();
    Ok(BranchFit {
        n_curves: delta.len(),
        nu,
        nu_se: var_slope.sqrt(),
        alpha_cutoff: a * b,
        b,
        a,
        c: fit.intercept,
        // (c, nu) with nu = -slope
        covariance: [[var_c, -cov], [-cov, var_slope]],
        asymptotic_slope: slope,
    })
}

/// Shared exponent of both sides with their own cutoff and intercept.
fn pooled_nu(sides: &[(&[f64], &[f64], f64)]) -> (f64, f64) {
    let (mut sxy, mut sxx, mut n) = (0.0, 0.0, 0usize);
    let mut resid = Vec::new();
    for &(delta, y, a) in sides {
        let x: Vec<f64> = delta.iter().map(|d| (a + d).ln()).collect();
        let (mx, my) = (mean(&x), mean(y));
        for (xi, yi) in x.iter().zip(y.iter()) {
            sxy += (xi - mx) * (yi - my);
            sxx += (xi - mx) * (xi - mx);
        }
        n += x.len();
        resid.push((x, y.to_vec(), mx, my));
    }
    let slope = sxy / sxx;
    let sse: f64 = resid
        .iter()
        .map(|(x, y, mx, my)| x.iter().zip(y).map(|(xi, yi)| (yi - my - slope * (xi - mx)).powi(2)).sum::<f64>())
        .sum();
    let dof = n as f64 - 2.0 - sides.len() as f64 + 1.0;
    (-slope, (sse / dof.max(1.0) / sxx).sqrt())
}

struct Collapse {
    ln_xi: Vec<f64>,
    residual: f64,
}

fn collapse_branches(
    lambdas: &[LambdaCurve],
    order: &[Vec<usize>],
    min_overlap: f64,
) -> Result<Collapse, ScalingError> {
    let splines: Vec<Pchip> = lambdas.iter().map(|l| Pchip::new(l.x.clone(), l.ln_lambda.clone())).collect();
    let mut ln_xi = vec![0.0; lambdas.len()];
    let mut residuals = Vec::new();
    for chain in order {
        for w in chain.windows(2) {
            let (prev, cur) = (w[0], w[1]);
            let (plo, phi) = range_of(&lambdas[prev].ln_lambda);
            let (clo, chi) = range_of(&lambdas[cur].ln_lambda);
            if plo.max(clo) >= phi.min(chi) {
                return Err(ScalingError::NoOverlap { a: prev, b: cur });
            }
            let (s, m) = match_shift(&splines[prev], ln_xi[prev], &splines[cur], min_overlap);
            ln_xi[cur] = s;
            residuals.push(m);
        }
    }
    let residual = if residuals.is_empty() { 0.0 } else { mean(&residuals) };
    Ok(Collapse { ln_xi, residual })
}

fn asymptotic_slope(lambdas: &[LambdaCurve], members: &[usize], ln_xi: &[f64]) -> f64 {
    let mut pts: Vec<(f64, f64)> = members
        .iter()
        .flat_map(|&j| lambdas[j].x.iter().zip(&lambdas[j].ln_lambda).map(move |(x, y)| (x + ln_xi[j], *y)))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let q = (pts.len() / 4).max(2);
    let (x, y): (Vec<f64>, Vec<f64>) = pts[..q].iter().copied().unzip();
    linear_fit(&x, &y).map_or(f64::NAN, |f| f.slope)
}

struct Pipeline {
    k_c: f64,
    branches: Vec<Branch>,
    order: [Vec<usize>; 2],
}

fn run_pipeline(
    curves: &[TransportCurve],
    plan: &Pipeline,
    opts: &FtsOptions,
) -> Result<(Vec<LambdaCurve>, Collapse, BranchFit, BranchFit, f64, f64), ScalingError> {
    let lambdas: Vec<LambdaCurve> = curves.iter().map(|c| lambda_curve(c, opts.min_time)).collect();
    let collapse = collapse_branches(&lambdas, &plan.order, opts.min_overlap)?;
    let mut fits = Vec::new();
    let mut sides = Vec::new();
    for chain in &plan.order {
        let delta: Vec<f64> = chain.iter().map(|&j| (curves[j].kick - plan.k_c).abs()).collect();
        let y: Vec<f64> = chain.iter().map(|&j| collapse.ln_xi[j]).collect();
        let slope = asymptotic_slope(&lambdas, chain, &collapse.ln_xi);
        let fit = branch_fit(&delta, &y, slope)?;
        sides.push((delta, y, fit.a));
        fits.push(fit);
    }
    let refs: Vec<(&[f64], &[f64], f64)> = sides.iter().map(|(d, y, a)| (d.as_slice(), y.as_slice(), *a)).collect();
    let (nu, nu_se) = pooled_nu(&refs);
    let diffusive = fits.pop().unwrap();
    let localized = fits.pop().unwrap();
    Ok((lambdas, collapse, localized, diffusive, nu, nu_se))
}

/// Finite-time scaling of `Lambda = t^{-2/3} <p^2>` along a path through the
/// transition. Each branch is anchored at its curve nearest `K_c`; further
/// curves are shifted pairwise outward by overlap matching, and `ln xi(K)`
/// is fitted with the cutoff form on each side.
pub fn finite_time_scaling(curves: &[TransportCurve], opts: &FtsOptions) -> Result<ScalingResult, ScalingError> {
    if curves.len() < 8 {
        return Err(ScalingError::InsufficientCurves { needed: 8, got: curves.len() });
    }
    for (i, c) in curves.iter().enumerate() {
        c.check(i)?;
        if c.times != curves[0].times {
            return Err(ScalingError::InvalidCurve { index: i, reason: "time grids differ" });
        }
    }
    let late: Vec<f64> = curves.iter().map(|c| late_beta(c, opts.beta_decades)).collect::<Result<_, _>>()?;
    let k_c = match opts.k_c {
        Some(k) => k,
        None => critical_crossing(curves, opts.beta_decades)?,
    };
    let mut branches = Vec::with_capacity(curves.len());
    for (i, (c, &b)) in curves.iter().zip(&late).enumerate() {
        if !b.is_finite() {
            return Err(ScalingError::BranchAssignmentAmbiguous { index: i, beta: b });
        }
        if (b - BETA_CRITICAL).abs() <= opts.critical_band {
            branches.push(Branch::Critical);
            continue;
        }
        let by_beta = if b < BETA_CRITICAL { Branch::Localized } else { Branch::Diffusive };
        let by_side = if c.kick < k_c { Branch::Localized } else { Branch::Diffusive };
        if by_beta != by_side {
            return Err(ScalingError::BranchAssignmentAmbiguous { index: i, beta: b });
        }
        branches.push(by_beta);
    }
    let mut order: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, b) in branches.iter().enumerate() {
        match b {
            Branch::Localized => order[0].push(i),
            Branch::Diffusive => order[1].push(i),
            Branch::Critical => {}
        }
    }
    for chain in order.iter_mut() {
        chain.sort_by(|&a, &b| (curves[a].kick - k_c).abs().total_cmp(&(curves[b].kick - k_c).abs()));
        if chain.len() < 3 {
            return Err(ScalingError::InsufficientCurves { needed: 3, got: chain.len() });
        }
    }
    let plan = Pipeline { k_c, branches, order };
    let (lambda_curves, collapse, localized, diffusive, nu, nu_se) = run_pipeline(curves, &plan, opts)?;

    let bootstrap = (opts.n_bootstrap > 0).then(|| bootstrap_nu(curves, &plan, opts, &collapse.ln_xi, &localized, &diffusive)).flatten();
    Ok(ScalingResult {
        k_c,
        lambda_curves,
        branches: plan.branches.clone(),
        late_beta: late,
        ln_xi: collapse.ln_xi.iter().zip(&plan.branches).map(|(&v, b)| (*b != Branch::Critical).then_some(v)).collect(),
        localized,
        diffusive,
        nu,
        nu_se,
        collapse_residual: collapse.residual,
        bootstrap,
    })
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, f) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - f) + sorted[i + 1] * f
    } else {
        sorted[i]
    }
}

fn bootstrap_nu(
    curves: &[TransportCurve],
    plan: &Pipeline,
    opts: &FtsOptions,
    ln_xi: &[f64],
    loc: &BranchFit,
    dif: &BranchFit,
) -> Option<Bootstrap> {
    let use_members = curves.iter().all(|c| c.member_p2.as_ref().is_some_and(|m| m.len() >= 2));
    let samples: Vec<Option<(f64, f64, f64)>> = (0..opts.n_bootstrap)
        .into_par_iter()
        .map(|b| {
            let mut rng = member_rng(opts.seed ^ 0xB007_5EED, b as u64);
            if use_members {
                let n_common = curves[0].member_p2.as_ref().unwrap().len();
                let same = curves.iter().all(|c| c.member_p2.as_ref().unwrap().len() == n_common);
                let shared: Vec<usize> = (0..n_common).map(|_| rng.gen_range(0..n_common)).collect();
                let resampled: Vec<TransportCurve> = curves
                    .iter()
                    .map(|c| {
                        let m = c.member_p2.as_ref().unwrap();
                        let idx: Vec<usize> = if same { shared.clone() } else { (0..m.len()).map(|_| rng.gen_range(0..m.len())).collect() };
                        let p2 = (0..c.times.len())
                            .map(|t| idx.iter().map(|&j| m[j][t]).collect::<CompensatedSum>().value() / idx.len() as f64)
                            .collect();
                        TransportCurve { p2, member_p2: None, ..c.clone() }
                    })
                    .collect();
                run_pipeline(&resampled, plan, opts).ok().map(|(_, _, l, d, nu, _)| (l.nu, d.nu, nu))
            } else {
                // residual bootstrap of the ln xi fits
                let mut out = Vec::new();
                let mut sides = Vec::new();
                for (chain, fit) in plan.order.iter().zip([loc, dif]) {
                    let delta: Vec<f64> = chain.iter().map(|&j| (curves[j].kick - plan.k_c).abs()).collect();
                    let pred: Vec<f64> = delta.iter().map(|d| fit.c - fit.nu * (fit.a + d).ln()).collect();
                    let res: Vec<f64> = chain.iter().zip(&pred).map(|(&j, p)| ln_xi[j] - p).collect();
                    let y: Vec<f64> = pred.iter().map(|p| p + res[rng.gen_range(0..res.len())]).collect();
                    let (a, f) = fit_side(&delta, &y).ok()?;
                    out.push(-f.slope);
                    sides.push((delta, y, a));
                }
                let refs: Vec<(&[f64], &[f64], f64)> = sides.iter().map(|(d, y, a)| (d.as_slice(), y.as_slice(), *a)).collect();
                Some((out[0], out[1], pooled_nu(&refs).0))
            }
        })
        .collect();
    let ok: Vec<(f64, f64, f64)> = samples.into_iter().flatten().filter(|s| s.0.is_finite() && s.1.is_finite() && s.2.is_finite()).collect();
    if ok.len() < 2 {
        return None;
    }
    let l: Vec<f64> = ok.iter().map(|s| s.0).collect();
    let d: Vec<f64> = ok.iter().map(|s| s.1).collect();
    let mut c: Vec<f64> = ok.iter().map(|s| s.2).collect();
    let nu_se = std_dev(&c);
    c.sort_by(|a, b| a.total_cmp(b));
    Some(Bootstrap {
        n_valid: ok.len(),
        nu_localized_se: std_dev(&l),
        nu_diffusive_se: std_dev(&d),
        nu_se,
        nu_interval: (percentile(&c, 0.025), percentile(&c, 0.975)),
        members: use_members,
    })
}

/// Rescaled distributions compared pairwise.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapseReport {
    pub times: Vec<f64>,
    /// `(i, j, L1)` for every pair of inputs.
    pub pairwise: Vec<(usize, usize, f64)>,
    pub max_l1: f64,
}

/// Rescaled density `g(q) = t^{1/3} Pi / dp` at `q = p t^{-1/3}`.
fn rescaled(t: f64, d: &MomentumDistribution) -> (Vec<f64>, Vec<f64>) {
    let s = t.powf(1.0 / 3.0);
    let q = d.momenta().iter().map(|p| p / s).collect();
    let g = d.probs.iter().map(|pi| pi * s / d.kbar).collect();
    (q, g)
}

fn interp_linear(x: &[f64], y: &[f64], t: f64) -> f64 {
    if t < x[0] || t > *x.last().unwrap() {
        return 0.0;
    }
    let k = x.partition_point(|&v| v <= t).clamp(1, x.len() - 1) - 1;
    let f = (t - x[k]) / (x[k + 1] - x[k]);
    y[k] * (1.0 - f) + y[k + 1] * f
}

/// L1 distance between the rescaled forms `t^{1/3} Pi(p t^{-1/3})` of
/// distributions recorded at several times. Each rescaled density is
/// interpolated linearly on a common grid twice as fine as the finest input.
pub fn critical_collapse(dists: &[(f64, &MomentumDistribution)]) -> CollapseReport {
    let scaled: Vec<(Vec<f64>, Vec<f64>)> = dists.iter().map(|(t, d)| rescaled(*t, d)).collect();
    let mut pairwise = Vec::new();
    for i in 0..scaled.len() {
        for j in i + 1..scaled.len() {
            let (a, b) = (&scaled[i], &scaled[j]);
            let lo = a.0[0].min(b.0[0]);
            let hi = a.0.last().unwrap().max(*b.0.last().unwrap());
            let step = 0.5 * (a.0[1] - a.0[0]).min(b.0[1] - b.0[0]);
            let n = (((hi - lo) / step).ceil() as usize).clamp(2, 2_000_000);
            let h = (hi - lo) / n as f64;
            let l1: f64 = (0..=n)
                .map(|k| {
                    let q = lo + k as f64 * h;
                    let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                    w * (interp_linear(&a.0, &a.1, q) - interp_linear(&b.0, &b.1, q)).abs()
                })
                .collect::<CompensatedSum>()
                .value()
                * h;
            pairwise.push((i, j, l1));
        }
    }
    let max_l1 = pairwise.iter().map(|p| p.2).fold(0.0, f64::max);
    CollapseReport { times: dists.iter().map(|d| d.0).collect(), pairwise, max_l1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShapeFit {
    pub alpha: f64,
    pub s: f64,
    /// Kullback-Leibler divergence of the data from the fitted law.
    pub goodness: f64,
}

fn moment_match_scale(absp: &[f64], alpha: f64, target: f64) -> Option<f64> {
    // E_q[|p|^alpha] increases monotonically with s
    let pa: Vec<f64> = absp.iter().map(|p| p.powf(alpha)).collect();
    let moment = |ln_s: f64| {
        let s = ln_s.exp();
        let (mut z, mut m) = (CompensatedSum::new(), CompensatedSum::new());
        for &v in &pa {
            let w = (-v / s).exp();
            z.add(w);
            m.add(w * v);
        }
        m.value() / z.value() - target
    };
    bisect(moment, -60.0, 60.0, 1e-12).map(f64::exp)
}

fn log_likelihood(absp: &[f64], probs: &[f64], alpha: f64, s: f64) -> f64 {
    let logw: Vec<f64> = absp.iter().map(|p| -p.powf(alpha) / s).collect();
    let mx = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ln_z = mx + logw.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
    probs.iter().zip(&logw).map(|(pi, l)| pi * (l - ln_z)).collect::<CompensatedSum>().value()
}

/// Maximum-likelihood fit of `Pi(p) ~ exp(-|p|^alpha / s)` on the lattice of
/// the distribution, profiling `s` out by its moment condition.
pub fn fit_distribution_shape(dist: &MomentumDistribution) -> Result<ShapeFit, ScalingError> {
    let total = dist.total();
    if !(total > 0.0) {
        return Err(ScalingError::FitFailed("empty distribution"));
    }
    let absp: Vec<f64> = dist.momenta().iter().map(|p| p.abs()).collect();
    let probs: Vec<f64> = dist.probs.iter().map(|p| p / total).collect();
    let profile = |alpha: f64| -> Option<(f64, f64)> {
        let target: f64 = absp.iter().zip(&probs).map(|(p, w)| w * p.powf(alpha)).sum();
        let s = moment_match_scale(&absp, alpha, target)?;
        Some((log_likelihood(&absp, &probs, alpha, s), s))
    };
    let (lo, hi) = (0.1, 5.0);
    let (alpha, nll) = scan_then_refine(|a| profile(a).map_or(f64::INFINITY, |(ll, _)| -ll), lo, hi, 50, 1e-9);
    if !nll.is_finite() || alpha - lo < 1e-3 || hi - alpha < 1e-3 {
        return Err(ScalingError::FitDiverged { alpha });
    }
    let (ll, s) = profile(alpha).ok_or(ScalingError::FitFailed("scale not found"))?;
    // an unbounded scale means the data carry no shape information
    if s.ln() > 50.0 {
        return Err(ScalingError::FitDiverged { alpha });
    }
    let entropy: f64 = probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum();
    Ok(ShapeFit { alpha, s, goodness: entropy - ll })
}

/// One saturated run of the 2D-equivalent rotor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaturationRun {
    pub epsilon: f64,
    pub curve: TransportCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoDLawReport {
    pub kick: f64,
    pub kbar: f64,
    pub epsilons: Vec<f64>,
    /// Mean `<p^2>` over the final decade of each run.
    pub p2_sat: Vec<f64>,
    pub late_beta: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `2 (pi / sqrt 32) (K / kbar)^2`.
    pub predicted_slope: f64,
    pub relative_deviation: f64,
    /// `<(m + beta)^2>` at `epsilon = 0` over `p_loc^2 = (K^2 / 4 kbar)^2`,
    /// when an `epsilon = 0` run is present.
    pub one_d_ratio: Option<f64>,
}

/// Law `p_loc(eps) = p_loc exp(alpha eps (K/kbar)^2)`: since `<p^2> ~ p_loc^2`,
/// `ln <p^2>_sat` grows with slope `2 alpha (K/kbar)^2`.
pub fn two_d_localization_law(
    runs: &[SaturationRun],
    kick: f64,
    kbar: f64,
    beta_threshold: f64,
) -> Result<TwoDLawReport, ScalingError> {
    if runs.len() < 3 {
        return Err(ScalingError::InsufficientCurves { needed: 3, got: runs.len() });
    }
    let mut late = Vec::new();
    let mut unsaturated = Vec::new();
    for (i, r) in runs.iter().enumerate() {
        r.curve.check(i)?;
        let b = late_beta(&r.curve, 1.0)?;
        if !(b < beta_threshold) {
            unsaturated.push((i, b));
        }
        late.push(b);
    }
    if !unsaturated.is_empty() {
        return Err(ScalingError::NotSaturated { runs: unsaturated });
    }
    let p2_sat: Vec<f64> = runs
        .iter()
        .map(|r| {
            let t_end = *r.curve.times.last().unwrap();
            let v: Vec<f64> = r.curve.times.iter().zip(&r.curve.p2).filter(|(t, _)| **t >= t_end / 10.0).map(|(_, p)| *p).collect();
            mean(&v)
        })
        .collect();
    let eps: Vec<f64> = runs.iter().map(|r| r.epsilon).collect();
    let y: Vec<f64> = p2_sat.iter().map(|p| p.ln()).collect();
    let fit = linear_fit(&eps, &y).ok_or(ScalingError::FitFailed("epsilons must differ"))?;
    let predicted = 2.0 * std::f64::consts::PI / 32f64.sqrt() * (kick / kbar).powi(2);
    let p_loc = kick * kick / (4.0 * kbar);
    let one_d_ratio = eps.iter().position(|&e| e == 0.0).map(|i| p2_sat[i] / (kbar * kbar) / (p_loc * p_loc));
    Ok(TwoDLawReport {
        kick,
        kbar,
        epsilons: eps,
        p2_sat,
        late_beta: late,
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        predicted_slope: predicted,
        relative_deviation: (fit.slope - predicted) / predicted,
        one_d_ratio,
    })
}

/// Median of the late exponents, handy for summaries.
pub fn median_beta(curves: &[TransportCurve], decades: f64) -> Result<f64, ScalingError> {
    let b: Vec<f64> = curves.iter().map(|c| late_beta(c, decades)).collect::<Result<_, _>>()?;
    Ok(median(&b))
}
