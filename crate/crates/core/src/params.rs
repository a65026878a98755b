//! Simulation parameters, ensemble specification and their validation.
//!
//! The JSON representation uses the field names below verbatim; floats are
//! written in shortest round-trip decimal form, so a config survives a
//! write/read cycle bit for bit.

use std::f64::consts::{PI, TAU};
use std::ops::Deref;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Extra driving frequencies used unless a config overrides them:
/// `omega_2 / 2pi = sqrt(5)`, `omega_3 / 2pi = sqrt(13)`.
pub fn default_omegas() -> Vec<f64> {
    vec![TAU * 5f64.sqrt(), TAU * 13f64.sqrt()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    /// Kick strength.
    #[serde(rename = "K")]
    pub kick: f64,
    /// Effective Planck constant.
    pub kbar: f64,
    /// Modulation amplitude of the kick, `0 <= epsilon < 1`.
    #[serde(default)]
    pub epsilon: f64,
    /// Extra angular frequencies per kick period, one per virtual dimension.
    #[serde(default)]
    pub omegas: Vec<f64>,
    /// Modulation phases, one per entry of `omegas`.
    #[serde(default)]
    pub phis: Vec<f64>,
    /// Quasimomentum of the ladder `m + beta_qm`.
    #[serde(default)]
    pub beta_qm: f64,
    pub n_kicks: u64,
    /// Momentum indices span at least `-M..=M`.
    pub basis_half_width: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SimParams {
    /// Periodic rotor with no modulation.
    pub fn periodic(kick: f64, kbar: f64, n_kicks: u64, basis_half_width: usize) -> Self {
        SimParams {
            kick,
            kbar,
            epsilon: 0.0,
            omegas: Vec::new(),
            phis: Vec::new(),
            beta_qm: 0.0,
            n_kicks,
            basis_half_width,
            seed: 0,
        }
    }

    /// Quasiperiodic rotor with the given extra frequencies; phases start at 0.
    pub fn quasiperiodic(
        kick: f64,
        kbar: f64,
        epsilon: f64,
        omegas: Vec<f64>,
        n_kicks: u64,
        basis_half_width: usize,
    ) -> Self {
        let phis = vec![0.0; omegas.len()];
        SimParams { epsilon, omegas, phis, ..Self::periodic(kick, kbar, n_kicks, basis_half_width) }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Effective lattice dimension of the equivalent Anderson model.
    pub fn dimension(&self) -> usize {
        self.omegas.len() + 1
    }

    /// `kappa = K / kbar`.
    pub fn kappa(&self) -> f64 {
        self.kick / self.kbar
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("{field} = {value} is out of range (expected {bound})")]
    OutOfRange { field: &'static str, value: f64, bound: &'static str },
    #[error("{omegas} modulation frequencies but {phis} phases")]
    IncompatibleDimensions { omegas: usize, phis: usize },
}

/// Parameters that passed [`validate`]. Immutable; share freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedParams {
    params: SimParams,
    fgp_applicable: bool,
}

impl ValidatedParams {
    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn into_inner(self) -> SimParams {
        self.params
    }

    /// Whether `kappa * (1 + epsilon) < pi`, i.e. the hopping integrals of the
    /// equivalent tight-binding model are free of poles. Dynamics never needs
    /// this; only the mapping tools do.
    pub fn fgp_applicable(&self) -> bool {
        self.fgp_applicable
    }
}

impl Deref for ValidatedParams {
    type Target = SimParams;

    fn deref(&self) -> &SimParams {
        &self.params
    }
}

fn check(field: &'static str, value: f64, ok: bool, bound: &'static str) -> Result<(), ParamError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(ParamError::OutOfRange { field, value, bound })
    }
}

pub fn validate(params: SimParams) -> Result<ValidatedParams, ParamError> {
    let p = &params;
    check("K", p.kick, p.kick >= 0.0, "K >= 0")?;
    check("kbar", p.kbar, p.kbar > 0.0, "kbar > 0")?;
    check("epsilon", p.epsilon, (0.0..1.0).contains(&p.epsilon), "0 <= epsilon < 1")?;
    check("beta_qm", p.beta_qm, (0.0..1.0).contains(&p.beta_qm), "0 <= beta_qm < 1")?;
    check(
        "basis_half_width",
        p.basis_half_width as f64,
        p.basis_half_width >= 1,
        "2M + 1 >= 3",
    )?;
    if p.omegas.len() != p.phis.len() {
        return Err(ParamError::IncompatibleDimensions { omegas: p.omegas.len(), phis: p.phis.len() });
    }
    for &w in &p.omegas {
        check("omegas", w, true, "finite")?;
    }
    for &phi in &p.phis {
        check("phis", phi, (0.0..TAU).contains(&phi), "0 <= phi < 2pi")?;
    }
    let fgp_applicable = p.kappa() * (1.0 + p.epsilon) < PI;
    Ok(ValidatedParams { params, fgp_applicable })
}

/// How the quasimomentum of each ensemble member is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QuasimomentumRule {
    /// Uniform in `[0, 1)`, drawn from the member stream.
    #[default]
    Uniform,
    /// Every member uses `SimParams::beta_qm`.
    Fixed,
}

/// How the modulation phases of each ensemble member are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PhaseRule {
    /// Uniform in `[0, 2pi)`, drawn from the member stream.
    #[default]
    Uniform,
    /// Every member uses `SimParams::phis`.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SeedDerivation {
    /// [`crate::seed::derive_member_seed`].
    #[default]
    Splitmix64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub n_members: usize,
    #[serde(default)]
    pub quasimomentum: QuasimomentumRule,
    #[serde(default)]
    pub phases: PhaseRule,
    #[serde(default)]
    pub seed_derivation: SeedDerivation,
}

impl EnsembleSpec {
    /// Random quasimomenta and phases for every member.
    pub fn uniform(n_members: usize) -> Self {
        EnsembleSpec {
            n_members,
            quasimomentum: QuasimomentumRule::Uniform,
            phases: PhaseRule::Uniform,
            seed_derivation: SeedDerivation::Splitmix64,
        }
    }
}

/// Initial momentum distribution of every member, centered on `m = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialState {
    #[default]
    MomentumDelta,
    /// Gaussian amplitude `exp(-m^2 / (4 width^2))`, so the population has
    /// standard deviation `width` in index units.
    Gaussian { width: f64 },
}

/// Contents of a `kr evolve --config` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub params: SimParams,
    pub ensemble: EnsembleSpec,
    #[serde(default)]
    pub initial_state: InitialState,
    /// Samples per decade of the log-spaced time grid.
    #[serde(default = "default_samples_per_decade")]
    pub samples_per_decade: usize,
}

fn default_samples_per_decade() -> usize {
    30
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dynamical_localization_parameters_are_valid() {
        let v = validate(SimParams::periodic(7.2, 2.89, 30, 1024)).unwrap();
        assert!(v.fgp_applicable());
        assert_eq!(v.dimension(), 1);
    }

    #[test]
    fn negative_kick_is_rejected() {
        let err = validate(SimParams::periodic(-1.0, 2.89, 30, 1024)).unwrap_err();
        assert!(matches!(err, ParamError::OutOfRange { field: "K", .. }));
    }

    #[test]
    fn frequency_phase_mismatch_is_rejected() {
        let mut p = SimParams::periodic(5.0, 2.89, 30, 64);
        p.omegas = vec![TAU * 5f64.sqrt()];
        let err = validate(p).unwrap_err();
        assert_eq!(err, ParamError::IncompatibleDimensions { omegas: 1, phis: 0 });
    }

    #[test]
    fn boundary_values() {
        let mut p = SimParams::periodic(1.0, 2.0, 1, 1);
        p.epsilon = 1.0;
        assert!(matches!(validate(p.clone()), Err(ParamError::OutOfRange { field: "epsilon", .. })));
        p.epsilon = 0.0;
        p.beta_qm = 1.0;
        assert!(matches!(validate(p.clone()), Err(ParamError::OutOfRange { field: "beta_qm", .. })));
        p.beta_qm = 0.0;
        p.basis_half_width = 0;
        assert!(matches!(validate(p.clone()), Err(ParamError::OutOfRange { field: "basis_half_width", .. })));
        p.basis_half_width = 1;
        p.kbar = 0.0;
        assert!(matches!(validate(p), Err(ParamError::OutOfRange { field: "kbar", .. })));
    }

    #[test]
    fn large_kappa_is_valid_but_not_mappable() {
        let v = validate(SimParams::quasiperiodic(9.0, 2.89, 0.8, default_omegas(), 10, 64)).unwrap();
        assert!(!v.fgp_applicable());
    }

    #[test]
    fn config_field_names() {
        let cfg = RunConfig {
            params: SimParams::periodic(7.2, 2.89, 30, 1024),
            ensemble: EnsembleSpec::uniform(8),
            initial_state: InitialState::MomentumDelta,
            samples_per_decade: 30,
        };
        let v: serde_json::Value = serde_json::to_value(&cfg).unwrap();
        let keys: Vec<_> = v["params"].as_object().unwrap().keys().cloned().collect();
        for k in ["K", "kbar", "epsilon", "omegas", "phis", "beta_qm", "n_kicks", "basis_half_width", "seed"] {
            assert!(keys.iter().any(|x| x == k), "missing {k}");
        }
        assert_eq!(v["ensemble"]["quasimomentum"], "uniform");
    }

    fn arb_params() -> impl Strategy<Value = SimParams> {
        (
            0.0..50.0f64,
            1e-3..20.0f64,
            0.0..1.0f64,
            prop::collection::vec((-100.0..100.0f64, 0.0..TAU), 0..4),
            0.0..1.0f64,
            any::<u64>(),
            1usize..100_000,
            any::<u64>(),
        )
            .prop_map(|(kick, kbar, epsilon, mods, beta_qm, n_kicks, m, seed)| SimParams {
                kick,
                kbar,
                epsilon,
                omegas: mods.iter().map(|x| x.0).collect(),
                phis: mods.iter().map(|x| x.1).collect(),
                beta_qm,
                n_kicks,
                basis_half_width: m,
                seed,
            })
    }

    proptest! {
        #[test]
        fn config_round_trips_bit_exactly(p in arb_params(), n in 1usize..10_000) {
            let cfg = RunConfig {
                params: p,
                ensemble: EnsembleSpec::uniform(n),
                initial_state: InitialState::Gaussian { width: 1.5 },
                samples_per_decade: 30,
            };
            let text = serde_json::to_string_pretty(&cfg).unwrap();
            let back: RunConfig = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(back.params.kick.to_bits(), cfg.params.kick.to_bits());
            prop_assert_eq!(back.params.kbar.to_bits(), cfg.params.kbar.to_bits());
            for (a, b) in back.params.omegas.iter().zip(&cfg.params.omegas) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(back, cfg);
        }
    }
}
