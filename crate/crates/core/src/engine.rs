//! Split-step propagation of the quantum kicked rotor.
//!
//! A quasimomentum family is a state on the ladder `m + beta_qm`. One kick
//! period applies the kick `exp(-i K a_n cos x / kbar)` on the position grid
//! `x_j = 2 pi j / N` and then the free phase `exp(-i kbar (m + beta)^2 / 2)`
//! in momentum space, i.e. the Floquet operator `U = F * Kick`. Both factors
//! are diagonal unitaries and the transforms are unitary, so a period is
//! exactly norm preserving; momentum that would leave the window wraps
//! around, which [`EngineError::EdgeLeak`] guards against.

use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;
use thiserror::Error;

use crate::params::{EnsembleSpec, InitialState, PhaseRule, QuasimomentumRule, ValidatedParams};
use crate::seed::{derive_member_seed, member_rng};
use crate::stats::CompensatedSum;

/// Population allowed outside `|m| <= 0.9 M` before a run is rejected.
pub const EDGE_LEAK_TOLERANCE: f64 = 1e-6;
/// Fraction of the half width that counts as the interior of the basis.
pub const EDGE_FRACTION: f64 = 0.9;
/// Largest allowed initial population on the outermost ladder sites.
pub const INITIAL_TAIL_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("population {weight:.3e} beyond 0.9 M at t = {time}; basis too small for this run")]
    EdgeLeak { time: u64, weight: f64 },
    #[error("initial state has population {tail:.3e} at the basis edge")]
    BasisTooSmall { tail: f64 },
    #[error("invalid initial state: {0}")]
    InvalidInitialState(&'static str),
    #[error("ensemble member {index}: {source}")]
    Member {
        index: usize,
        #[source]
        source: Box<EngineError>,
    },
}

/// Smallest `2^a 3^b 5^c >= n`.
pub fn transform_size(n: usize) -> usize {
    let mut k = n.max(1);
    loop {
        let mut r = k;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return k;
        }
        k += 1;
    }
}

/// Amplitudes over the momentum window of an `N`-point grid, stored in
/// transform order: slot `j` holds `m = j` for `j < N - N/2`, else `m = j - N`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    amplitudes: Vec<Complex64>,
    beta_qm: f64,
    kick_index: u64,
}

impl QuantumState {
    pub fn zeros(grid_size: usize, beta_qm: f64) -> Self {
        assert!(grid_size >= 3);
        QuantumState { amplitudes: vec![Complex64::new(0.0, 0.0); grid_size], beta_qm, kick_index: 0 }
    }

    pub fn from_amplitudes(amplitudes: Vec<Complex64>, beta_qm: f64) -> Self {
        assert!(amplitudes.len() >= 3);
        QuantumState { amplitudes, beta_qm, kick_index: 0 }
    }

    pub fn grid_size(&self) -> usize {
        self.amplitudes.len()
    }

    /// Largest `M` such that `-M..=M` lies inside the window.
    pub fn half_width(&self) -> i64 {
        ((self.grid_size() - 1) / 2) as i64
    }

    pub fn m_min(&self) -> i64 {
        -((self.grid_size() / 2) as i64)
    }

    pub fn m_max(&self) -> i64 {
        self.m_min() + self.grid_size() as i64 - 1
    }

    pub fn beta_qm(&self) -> f64 {
        self.beta_qm
    }

    pub fn kick_index(&self) -> u64 {
        self.kick_index
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    #[inline]
    pub fn m_of_slot(&self, j: usize) -> i64 {
        m_of_slot(j, self.grid_size())
    }

    pub fn slot(&self, m: i64) -> Option<usize> {
        if m < self.m_min() || m > self.m_max() {
            None
        } else {
            Some(m.rem_euclid(self.grid_size() as i64) as usize)
        }
    }

    pub fn amplitude(&self, m: i64) -> Complex64 {
        self.slot(m).map_or(Complex64::new(0.0, 0.0), |j| self.amplitudes[j])
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect::<CompensatedSum>().value()
    }

    /// `<p^2> = sum_m |psi_m|^2 kbar^2 (m + beta)^2`, compensated.
    pub fn p2(&self, kbar: f64) -> f64 {
        let n = self.grid_size();
        let mut acc = CompensatedSum::new();
        for (j, a) in self.amplitudes.iter().enumerate() {
            let p = kbar * (m_of_slot(j, n) as f64 + self.beta_qm);
            acc.add(a.norm_sqr() * p * p);
        }
        acc.value()
    }

    /// Population outside `|m| <= EDGE_FRACTION * M`.
    pub fn edge_weight(&self) -> f64 {
        let cut = EDGE_FRACTION * self.half_width() as f64;
        let n = self.grid_size();
        self.amplitudes
            .iter()
            .enumerate()
            .filter(|(j, _)| (m_of_slot(*j, n) as f64).abs() > cut)
            .map(|(_, a)| a.norm_sqr())
            .collect::<CompensatedSum>()
            .value()
    }

    /// Populations `|psi_m|^2` in ascending `m`.
    pub fn distribution(&self, kbar: f64) -> MomentumDistribution {
        let n = self.grid_size();
        let m_min = self.m_min();
        let probs = (0..n as i64).map(|i| self.amplitude(m_min + i).norm_sqr()).collect();
        MomentumDistribution { kbar, offset: self.beta_qm, m_min, probs }
    }

    fn normalize(&mut self) {
        let s = self.norm_sqr().sqrt();
        for a in &mut self.amplitudes {
            *a /= s;
        }
    }
}

#[inline]
fn m_of_slot(j: usize, n: usize) -> i64 {
    if j < n - n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Momentum distribution over ladder classes in ascending `m`. Class `m`
/// sits at `p = kbar * (m + offset)`; a single family uses its
/// quasimomentum as offset, ensemble averages over random quasimomenta use 0
/// so that `p` is measured from the initial class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentumDistribution {
    pub kbar: f64,
    pub offset: f64,
    pub m_min: i64,
    pub probs: Vec<f64>,
}

impl MomentumDistribution {
    pub fn momentum(&self, i: usize) -> f64 {
        self.kbar * ((self.m_min + i as i64) as f64 + self.offset)
    }

    pub fn momenta(&self) -> Vec<f64> {
        (0..self.probs.len()).map(|i| self.momentum(i)).collect()
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().copied().collect::<CompensatedSum>().value()
    }

    pub fn class(&self, m: i64) -> f64 {
        let i = m - self.m_min;
        if i < 0 || i as usize >= self.probs.len() {
            0.0
        } else {
            self.probs[i as usize]
        }
    }

    /// Decay length `xi` of `Pi_m ~ exp(-|m| / xi)`, from the tail envelope.
    /// `floor` is relative to the peak population.
    pub fn decay_length(&self, floor: f64) -> Option<f64> {
        crate::anderson::envelope_decay_length(&self.probs, floor).map(|xi_amp| xi_amp / 2.0)
    }
}

/// Build the initial state of one family on an `N = transform_size(2M + 1)`
/// grid, centered on `m = 0`.
pub fn build_initial_state(kind: InitialState, beta_qm: f64, half_width: usize) -> Result<QuantumState, EngineError> {
    let n = transform_size(2 * half_width + 1);
    let mut state = QuantumState::zeros(n, beta_qm);
    match kind {
        InitialState::MomentumDelta => {
            let j = state.slot(0).expect("m = 0 is always on the grid");
            state.amplitudes[j] = Complex64::new(1.0, 0.0);
        }
        InitialState::Gaussian { width } => {
            if !(width > 0.0 && width.is_finite()) {
                return Err(EngineError::InvalidInitialState("gaussian width must be positive"));
            }
            for j in 0..n {
                let m = m_of_slot(j, n) as f64;
                state.amplitudes[j] = Complex64::new((-m * m / (4.0 * width * width)).exp(), 0.0);
            }
            state.normalize();
            let tail = state.amplitude(state.m_min()).norm_sqr().max(state.amplitude(state.m_max()).norm_sqr());
            if tail > INITIAL_TAIL_TOLERANCE {
                return Err(EngineError::BasisTooSmall { tail });
            }
        }
    }
    Ok(state)
}

/// Transform plans and position grid shared by every family on one grid.
#[derive(Clone)]
pub struct SplitStepGrid {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    cos_x: Arc<[f64]>,
}

impl std::fmt::Debug for SplitStepGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SplitStepGrid").field("n", &self.n).finish()
    }
}

impl SplitStepGrid {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let cos_x: Vec<f64> = (0..n).map(|j| (TAU * j.min(n - j) as f64 / n as f64).cos()).collect();
        SplitStepGrid { n, forward, inverse, cos_x: cos_x.into() }
    }

    pub fn size(&self) -> usize {
        self.n
    }
}

/// One-period propagator of a single quasimomentum family.
pub struct Propagator {
    grid: SplitStepGrid,
    kbar: f64,
    beta_qm: f64,
    free_phase: Vec<Complex64>,
    kick_phase: Vec<Complex64>,
    kick_cached_for: Option<f64>,
    scratch: Vec<Complex64>,
}

impl Propagator {
    pub fn new(grid: SplitStepGrid, kbar: f64, beta_qm: f64) -> Self {
        let n = grid.size();
        let free_phase = (0..n)
            .map(|j| {
                let q = m_of_slot(j, n) as f64 + beta_qm;
                Complex64::from_polar(1.0, -0.5 * kbar * q * q)
            })
            .collect();
        let scratch_len = grid.forward.get_inplace_scratch_len().max(grid.inverse.get_inplace_scratch_len());
        Propagator {
            grid,
            kbar,
            beta_qm,
            free_phase,
            kick_phase: vec![Complex64::new(1.0, 0.0); n],
            kick_cached_for: None,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
        }
    }

    fn kick_phase(&mut self, k_eff: f64) -> &[Complex64] {
        if self.kick_cached_for != Some(k_eff) {
            let c = k_eff / self.kbar;
            let n = self.kick_phase.len();
            // cos x_j = cos x_{n-j}
            for j in 0..=n / 2 {
                let z = Complex64::from_polar(1.0, -c * self.grid.cos_x[j]);
                self.kick_phase[j] = z;
                self.kick_phase[(n - j) % n] = z;
            }
            self.kick_cached_for = Some(k_eff);
        }
        &self.kick_phase
    }

    /// Apply one kick of strength `k_eff` followed by one period of free motion.
    pub fn step(&mut self, state: &mut QuantumState, k_eff: f64) {
        assert_eq!(state.grid_size(), self.grid.size());
        assert_eq!(state.beta_qm.to_bits(), self.beta_qm.to_bits(), "propagator built for another family");
        let inverse = Arc::clone(&self.grid.inverse);
        let forward = Arc::clone(&self.grid.forward);
        inverse.process_with_scratch(&mut state.amplitudes, &mut self.scratch);
        let kick = {
            self.kick_phase(k_eff);
            &self.kick_phase
        };
        for (a, z) in state.amplitudes.iter_mut().zip(kick) {
            *a *= z;
        }
        forward.process_with_scratch(&mut state.amplitudes, &mut self.scratch);
        let scale = 1.0 / self.grid.size() as f64;
        for (a, f) in state.amplitudes.iter_mut().zip(&self.free_phase) {
            *a *= f * scale;
        }
        state.kick_index += 1;
    }
}

/// Convenience form of [`Propagator::step`] that plans its own transforms.
pub fn propagate_one_period(state: &QuantumState, k_eff: f64, kbar: f64) -> QuantumState {
    let mut prop = Propagator::new(SplitStepGrid::new(state.grid_size()), kbar, state.beta_qm);
    let mut next = state.clone();
    prop.step(&mut next, k_eff);
    next
}

/// Per-kick amplitude factors `a_n = 1 + epsilon * prod_i cos(omega_i n + phi_i)`
/// for kicks `n = 0, 1, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct KickSchedule {
    factors: Vec<f64>,
}

impl KickSchedule {
    pub fn new(epsilon: f64, omegas: &[f64], phis: &[f64], n_kicks: u64) -> Self {
        assert_eq!(omegas.len(), phis.len());
        let factors = (0..n_kicks)
            .map(|n| {
                if epsilon == 0.0 {
                    return 1.0;
                }
                let f: f64 = omegas.iter().zip(phis).map(|(w, phi)| (w * n as f64 + phi).cos()).product();
                1.0 + epsilon * f
            })
            .collect();
        KickSchedule { factors }
    }

    pub fn constant(n_kicks: u64) -> Self {
        KickSchedule { factors: vec![1.0; n_kicks as usize] }
    }

    pub fn from_params(params: &ValidatedParams) -> Self {
        Self::new(params.epsilon, &params.omegas, &params.phis, params.n_kicks)
    }

    pub fn factors(&self) -> &[f64] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }
}

/// Sorted, distinct sampling times `1 <= t <= n_kicks`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeGrid {
    times: Vec<u64>,
}

impl TimeGrid {
    /// Roughly `per_decade` points per decade, always including `n_kicks`.
    pub fn log_spaced(n_kicks: u64, per_decade: usize) -> Self {
        let mut times = Vec::new();
        if n_kicks == 0 {
            return TimeGrid { times };
        }
        let top = (n_kicks as f64).log10();
        let steps = (top * per_decade as f64).ceil() as usize;
        for k in 0..=steps {
            let t = 10f64.powf(k as f64 / per_decade as f64).round() as u64;
            if t >= 1 && t <= n_kicks && times.last() != Some(&t) {
                times.push(t);
            }
        }
        if times.last() != Some(&n_kicks) {
            times.push(n_kicks);
        }
        TimeGrid { times }
    }

    pub fn every_kick(n_kicks: u64) -> Self {
        TimeGrid { times: (1..=n_kicks).collect() }
    }

    pub fn from_times(mut times: Vec<u64>) -> Self {
        times.sort_unstable();
        times.dedup();
        times.retain(|&t| t >= 1);
        TimeGrid { times }
    }

    pub fn times(&self) -> &[u64] {
        &self.times
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemberMeta {
    pub index: Option<usize>,
    pub beta_qm: f64,
    pub phis: Vec<f64>,
    pub seed: u64,
}

/// Observables of one family, or an ensemble average of several.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservableSeries {
    pub kbar: f64,
    pub times: Vec<u64>,
    pub p2: Vec<f64>,
    /// Population of the initial class `m = 0`.
    pub pi0: Vec<f64>,
    pub final_distribution: MomentumDistribution,
    pub members: Vec<MemberMeta>,
}

/// Propagate one family through `schedule`, recording at every time in `sampling`.
pub fn evolve(
    params: &ValidatedParams,
    schedule: &KickSchedule,
    sampling: &TimeGrid,
    initial: InitialState,
) -> Result<ObservableSeries, EngineError> {
    let grid = SplitStepGrid::new(transform_size(2 * params.basis_half_width + 1));
    let meta = MemberMeta { index: None, beta_qm: params.beta_qm, phis: params.phis.clone(), seed: params.seed };
    evolve_on_grid(&grid, params.kick, params.kbar, params.beta_qm, schedule, sampling, initial, params.basis_half_width, meta)
}

#[allow(clippy::too_many_arguments)]
fn evolve_on_grid(
    grid: &SplitStepGrid,
    kick: f64,
    kbar: f64,
    beta_qm: f64,
    schedule: &KickSchedule,
    sampling: &TimeGrid,
    initial: InitialState,
    half_width: usize,
    meta: MemberMeta,
) -> Result<ObservableSeries, EngineError> {
    let mut state = build_initial_state(initial, beta_qm, half_width)?;
    debug_assert_eq!(state.grid_size(), grid.size());
    let mut prop = Propagator::new(grid.clone(), kbar, beta_qm);
    let samples: Vec<u64> = sampling.times().iter().copied().filter(|&t| t as usize <= schedule.len()).collect();
    let mut times = Vec::with_capacity(samples.len());
    let mut p2 = Vec::with_capacity(samples.len());
    let mut pi0 = Vec::with_capacity(samples.len());
    let mut next = samples.iter().peekable();
    for (n, a) in schedule.factors().iter().enumerate() {
        prop.step(&mut state, kick * a);
        let t = n as u64 + 1;
        if next.peek() == Some(&&t) {
            next.next();
            let leak = state.edge_weight();
            if leak > EDGE_LEAK_TOLERANCE {
                return Err(EngineError::EdgeLeak { time: t, weight: leak });
            }
            times.push(t);
            p2.push(state.p2(kbar));
            pi0.push(state.amplitude(0).norm_sqr());
        }
    }
    let leak = state.edge_weight();
    if leak > EDGE_LEAK_TOLERANCE {
        return Err(EngineError::EdgeLeak { time: state.kick_index(), weight: leak });
    }
    Ok(ObservableSeries {
        kbar,
        times,
        p2,
        pi0,
        final_distribution: state.distribution(kbar),
        members: vec![meta],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleResult {
    pub mean: ObservableSeries,
    /// Present when requested; in member index order.
    pub members: Option<Vec<ObservableSeries>>,
}

/// Quasimomentum and phases of member `index`, drawn from its own stream.
pub fn member_draw(params: &ValidatedParams, spec: &EnsembleSpec, index: usize) -> MemberMeta {
    let mut rng = member_rng(params.seed, index as u64);
    let beta_qm = match spec.quasimomentum {
        QuasimomentumRule::Uniform => rng.gen::<f64>(),
        QuasimomentumRule::Fixed => params.beta_qm,
    };
    let phis = match spec.phases {
        PhaseRule::Uniform => (0..params.omegas.len()).map(|_| rng.gen::<f64>() * TAU).collect(),
        PhaseRule::Fixed => params.phis.clone(),
    };
    MemberMeta { index: Some(index), beta_qm, phis, seed: derive_member_seed(params.seed, index as u64) }
}

/// Evolve every member of the ensemble and average in index order. The
/// result is bit-identical for any number of worker threads.
pub fn run_ensemble(
    params: &ValidatedParams,
    spec: &EnsembleSpec,
    sampling: &TimeGrid,
    initial: InitialState,
    keep_members: bool,
) -> Result<EnsembleResult, EngineError> {
    assert!(spec.n_members >= 1, "ensemble needs at least one member");
    let grid = SplitStepGrid::new(transform_size(2 * params.basis_half_width + 1));
    let members: Vec<Result<ObservableSeries, EngineError>> = (0..spec.n_members)
        .into_par_iter()
        .map(|index| {
            let meta = member_draw(params, spec, index);
            let schedule = KickSchedule::new(params.epsilon, &params.omegas, &meta.phis, params.n_kicks);
            let beta = meta.beta_qm;
            evolve_on_grid(&grid, params.kick, params.kbar, beta, &schedule, sampling, initial, params.basis_half_width, meta)
                .map_err(|e| EngineError::Member { index, source: Box::new(e) })
        })
        .collect();
    let members = members.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mean = average_series(&members);
    Ok(EnsembleResult { mean, members: keep_members.then_some(members) })
}

/// Average of member series in slice order. All members must share the
/// time grid and the momentum window.
pub fn average_series(members: &[ObservableSeries]) -> ObservableSeries {
    let first = &members[0];
    let n = members.len() as f64;
    let len = first.times.len();
    let mut p2 = vec![CompensatedSum::new(); len];
    let mut pi0 = vec![CompensatedSum::new(); len];
    let mut probs = vec![CompensatedSum::new(); first.final_distribution.probs.len()];
    for s in members {
        assert_eq!(s.times, first.times, "members sampled on different grids");
        for i in 0..len {
            p2[i].add(s.p2[i]);
            pi0[i].add(s.pi0[i]);
        }
        for (acc, &v) in probs.iter_mut().zip(&s.final_distribution.probs) {
            acc.add(v);
        }
    }
    let same_family = members.iter().all(|s| s.final_distribution.offset.to_bits() == first.final_distribution.offset.to_bits());
    ObservableSeries {
        kbar: first.kbar,
        times: first.times.clone(),
        p2: p2.iter().map(|s| s.value() / n).collect(),
        pi0: pi0.iter().map(|s| s.value() / n).collect(),
        final_distribution: MomentumDistribution {
            kbar: first.kbar,
            offset: if same_family { first.final_distribution.offset } else { 0.0 },
            m_min: first.final_distribution.m_min,
            probs: probs.iter().map(|s| s.value() / n).collect(),
        },
        members: members.iter().flat_map(|s| s.members.iter().cloned()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{validate, SimParams};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    // J_n(z) by the trapezoidal rule on (1/pi) int_0^pi cos(n t - z sin t) dt;
    // the integrand is smooth and periodic so the rule converges geometrically.
    fn bessel_j(n: i64, z: f64) -> f64 {
        let steps = 2000;
        let h = PI / steps as f64;
        let mut s = 0.5 * (1.0 + (n as f64 * PI).cos());
        for i in 1..steps {
            let t = i as f64 * h;
            s += (n as f64 * t - z * t.sin()).cos();
        }
        s * h / PI
    }

    #[test]
    fn transform_sizes_are_smooth() {
        assert_eq!(transform_size(2049), 2160);
        assert_eq!(transform_size(1025), 1080);
        assert_eq!(transform_size(7), 8);
        assert_eq!(transform_size(3), 3);
    }

    #[test]
    fn slots_cover_the_window() {
        let s = QuantumState::zeros(8, 0.0);
        let ms: Vec<i64> = (0..8).map(|j| s.m_of_slot(j)).collect();
        assert_eq!(ms, vec![0, 1, 2, 3, -4, -3, -2, -1]);
        assert_eq!((s.m_min(), s.m_max(), s.half_width()), (-4, 3, 3));
        let s = QuantumState::zeros(9, 0.0);
        assert_eq!((s.m_min(), s.m_max(), s.half_width()), (-4, 4, 4));
        for m in -4..=4 {
            assert_eq!(s.m_of_slot(s.slot(m).unwrap()), m);
        }
        assert_eq!(s.slot(5), None);
    }

    #[test]
    fn delta_state() {
        let s = build_initial_state(InitialState::MomentumDelta, 0.0, 512).unwrap();
        assert_eq!(s.amplitude(0), Complex64::new(1.0, 0.0));
        assert_eq!(s.norm_sqr(), 1.0);
        assert!(s.half_width() >= 512);
    }

    #[test]
    fn gaussian_state_is_normalized() {
        let s = build_initial_state(InitialState::Gaussian { width: 2.0 }, 0.3, 512).unwrap();
        assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
        // population variance equals width^2
        let var: f64 = (s.m_min()..=s.m_max()).map(|m| (m * m) as f64 * s.amplitude(m).norm_sqr()).sum();
        assert!((var - 4.0).abs() < 1e-9);
    }

    #[test]
    fn wide_gaussian_overflows_basis() {
        let err = build_initial_state(InitialState::Gaussian { width: 400.0 }, 0.0, 512).unwrap_err();
        assert!(matches!(err, EngineError::BasisTooSmall { .. }));
        assert!(build_initial_state(InitialState::Gaussian { width: 0.0 }, 0.0, 16).is_err());
    }

    #[test]
    fn free_motion_only_changes_phases() {
        let s0 = build_initial_state(InitialState::Gaussian { width: 3.0 }, 0.37, 64).unwrap();
        let s1 = propagate_one_period(&s0, 0.0, 2.89);
        for (a, b) in s0.amplitudes().iter().zip(s1.amplitudes()) {
            assert!((a.norm() - b.norm()).abs() < 1e-14);
        }
        assert_eq!(s1.kick_index(), 1);
        assert_eq!(s1.beta_qm(), 0.37);
    }

    #[test]
    fn single_kick_matches_bessel_sidebands() {
        // one kick from a delta state: |psi_m| = |J_m(K / kbar)|
        let s0 = build_initial_state(InitialState::MomentumDelta, 0.0, 64).unwrap();
        let s1 = propagate_one_period(&s0, 5.0, 2.0);
        for m in -20..=20 {
            assert!((s1.amplitude(m).norm() - bessel_j(m, 2.5).abs()).abs() < 1e-12, "m = {m}");
        }
    }

    #[test]
    fn quantum_resonance_amplitudes_are_bessel() {
        // kbar = 4 pi, beta = 0: free phases are all 1, n kicks act as one kick of n K
        let kbar = 4.0 * PI;
        let (k, n) = (3.0, 20);
        let mut s = build_initial_state(InitialState::MomentumDelta, 0.0, 128).unwrap();
        let mut prop = Propagator::new(SplitStepGrid::new(s.grid_size()), kbar, 0.0);
        for _ in 0..n {
            prop.step(&mut s, k);
        }
        let z = n as f64 * k / kbar;
        for m in -25..=25 {
            assert!((s.amplitude(m).norm() - bessel_j(m, z).abs()).abs() < 1e-10, "m = {m}");
        }
        let expected = k * k * (n * n) as f64 / 2.0;
        assert!(((s.p2(kbar) - expected) / expected).abs() < 1e-10);
    }

    #[test]
    fn long_run_stays_unitary() {
        let mut s = build_initial_state(InitialState::MomentumDelta, 0.21, 128).unwrap();
        let mut prop = Propagator::new(SplitStepGrid::new(s.grid_size()), 2.89, 0.21);
        let sched = KickSchedule::new(0.5, &[TAU * 5f64.sqrt()], &[1.0], 10_000);
        for a in sched.factors() {
            prop.step(&mut s, 4.0 * a);
        }
        assert!((s.norm_sqr() - 1.0).abs() < 1e-8, "drift {}", s.norm_sqr() - 1.0);
    }

    #[test]
    fn schedule_factors() {
        let s = KickSchedule::new(0.0, &[1.0], &[0.3], 5);
        assert!(s.factors().iter().all(|&a| a == 1.0));
        let s = KickSchedule::new(0.4, &[TAU * 5f64.sqrt()], &[0.7], 1000);
        assert!(s.factors().iter().all(|&a| (0.6..=1.4).contains(&a)));
        assert!((s.factors()[0] - (1.0 + 0.4 * 0.7f64.cos())).abs() < 1e-15);
    }

    #[test]
    fn time_grid_is_log_spaced() {
        let g = TimeGrid::log_spaced(1000, 30);
        let t = g.times();
        assert_eq!(t[0], 1);
        assert_eq!(*t.last().unwrap(), 1000);
        assert!(t.windows(2).all(|w| w[0] < w[1]));
        // ~30 per decade once rounding no longer merges points
        let upper = t.iter().filter(|&&x| x >= 100).count();
        assert!((29..=32).contains(&upper), "{upper}");
        assert_eq!(TimeGrid::log_spaced(7, 30).times(), &[1, 2, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn no_kick_conserves_p2() {
        let p = validate(SimParams::periodic(0.0, 2.89, 100, 32).with_seed(1)).unwrap();
        let mut p = p.into_inner();
        p.beta_qm = 0.4;
        let p = validate(p).unwrap();
        let s = evolve(&p, &KickSchedule::from_params(&p), &TimeGrid::log_spaced(100, 10), InitialState::Gaussian { width: 2.0 })
            .unwrap();
        for v in &s.p2 {
            assert!((v - s.p2[0]).abs() < 1e-10 * s.p2[0]);
        }
    }

    #[test]
    fn edge_leak_is_detected() {
        let p = validate(SimParams::periodic(9.0, 1.0, 200, 16)).unwrap();
        let err = evolve(&p, &KickSchedule::from_params(&p), &TimeGrid::log_spaced(200, 10), InitialState::MomentumDelta)
            .unwrap_err();
        assert!(matches!(err, EngineError::EdgeLeak { .. }));
    }

    #[test]
    fn single_member_ensemble_equals_evolve() {
        let mut p = SimParams::quasiperiodic(5.0, 2.89, 0.3, vec![TAU * 5f64.sqrt()], 60, 64).with_seed(11);
        let p0 = validate(p.clone()).unwrap();
        let spec = EnsembleSpec::uniform(1);
        let grid = TimeGrid::log_spaced(60, 20);
        let ens = run_ensemble(&p0, &spec, &grid, InitialState::MomentumDelta, false).unwrap();
        let meta = member_draw(&p0, &spec, 0);
        p.beta_qm = meta.beta_qm;
        p.phis = meta.phis.clone();
        let p1 = validate(p).unwrap();
        let single = evolve(&p1, &KickSchedule::from_params(&p1), &grid, InitialState::MomentumDelta).unwrap();
        assert_eq!(ens.mean.p2, single.p2);
        assert_eq!(ens.mean.pi0, single.pi0);
        assert_eq!(ens.mean.final_distribution.probs, single.final_distribution.probs);
    }

    #[test]
    fn ensembles_are_deterministic_across_thread_counts() {
        let p = validate(SimParams::quasiperiodic(6.0, 2.89, 0.5, crate::params::default_omegas(), 80, 64).with_seed(5))
            .unwrap();
        let spec = EnsembleSpec::uniform(12);
        let grid = TimeGrid::log_spaced(80, 20);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_ensemble(&p, &spec, &grid, InitialState::MomentumDelta, false).unwrap())
        };
        let (a, b, c) = (run(1), run(3), run(1));
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.mean, c.mean);
    }

    #[test]
    fn member_errors_carry_their_index() {
        let p = validate(SimParams::periodic(12.0, 1.0, 300, 8).with_seed(2)).unwrap();
        let err = run_ensemble(&p, &EnsembleSpec::uniform(3), &TimeGrid::log_spaced(300, 10), InitialState::MomentumDelta, false)
            .unwrap_err();
        assert!(matches!(err, EngineError::Member { index: 0, .. }));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn one_period_preserves_norm(k in 0.0..20.0f64, kbar in 0.1..7.0f64, beta in 0.0..1.0f64, w in 0.5..6.0f64) {
            let s0 = build_initial_state(InitialState::Gaussian { width: w }, beta, 128).unwrap();
            let s1 = propagate_one_period(&s0, k, kbar);
            prop_assert!((s1.norm_sqr() - 1.0).abs() < 1e-12);
            let d = s1.distribution(kbar);
            prop_assert!(d.probs.iter().all(|&x| x >= 0.0));
            prop_assert!((d.total() - 1.0).abs() < 1e-10);
        }
    }
}
