//! Tight-binding models on the Anderson side of the mapping.
//!
//! A Floquet state `U|w> = exp(-i w)|w>` of `U = F * Kick`, with
//! `Kick = exp(-i kappa cos x)`, corresponds to `u = (1 + i W)^-1 |w>`,
//! `W = tan(kappa cos x / 2)`, which solves the lattice equation
//!
//! `tan(v_m) u_m + sum_r t_r u_{m+r} = -t_0 u_m`,  `v_m = w/2 - kbar (m + beta)^2 / 4`,
//!
//! with hopping `t_r` the Fourier coefficients of `-W`. The coefficients
//! printed without the minus sign describe the gauge-transformed lattice
//! `u_m -> (-1)^m u_m`, so both signs are offered and [`floquet_oracle`]
//! tells them apart.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::Serialize;
use thiserror::Error;

use crate::stats::{linear_fit, median, std_dev};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AndersonError {
    #[error("kappa (1 + epsilon) = {amplitude} >= pi: the hopping integrand has poles")]
    PoleInDomain { amplitude: f64 },
    #[error("hopping quadrature changed by {max_change:.3e} under refinement")]
    QuadratureNotConverged { max_change: f64 },
    #[error("assembled matrix is not symmetric (max asymmetry {asymmetry:.3e})")]
    NonSymmetric { asymmetry: f64 },
    #[error("every Floquet eigenvector has edge weight above {tolerance:e}")]
    TruncationDominates { tolerance: f64 },
    #[error("Lyapunov exponent relative error {relative_error:.3} exceeds 2%")]
    NotConverged { relative_error: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
}

/// I.i.d. onsite energies uniform in `[-W/2, W/2]` with nearest-neighbor hopping `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoxDisorder {
    pub w: f64,
    pub t: f64,
    pub seed: u64,
}

impl BoxDisorder {
    pub fn new(w: f64, t: f64, seed: u64) -> Self {
        BoxDisorder { w, t, seed }
    }

    pub fn onsite(&self, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..n).map(|_| self.w * (rng.gen::<f64>() - 0.5)).collect()
    }
}

/// Rectangular box of lattice sites `lower[i] .. lower[i] + shape[i]`,
/// flattened in row-major order (last axis fastest). Axis 0 is the momentum
/// index `m`; further axes belong to the extra driving frequencies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LatticeBox {
    pub lower: Vec<i64>,
    pub shape: Vec<usize>,
}

impl LatticeBox {
    /// `-half[i] ..= half[i]` on every axis.
    pub fn centered(half_widths: &[usize]) -> Self {
        LatticeBox {
            lower: half_widths.iter().map(|&h| -(h as i64)).collect(),
            shape: half_widths.iter().map(|&h| 2 * h + 1).collect(),
        }
    }

    pub fn chain(n: usize) -> Self {
        LatticeBox { lower: vec![0], shape: vec![n] }
    }

    pub fn dimension(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coords(&self, mut index: usize) -> Vec<i64> {
        let mut c = vec![0; self.dimension()];
        for ax in (0..self.dimension()).rev() {
            c[ax] = self.lower[ax] + (index % self.shape[ax]) as i64;
            index /= self.shape[ax];
        }
        c
    }

    pub fn index(&self, coords: &[i64]) -> Option<usize> {
        let mut idx = 0;
        for ax in 0..self.dimension() {
            let off = coords[ax] - self.lower[ax];
            if off < 0 || off as usize >= self.shape[ax] {
                return None;
            }
            idx = idx * self.shape[ax] + off as usize;
        }
        Some(idx)
    }
}

/// Onsite energies `tan(w/2 - kbar (m + beta)^2 / 4 - sum_i m_i omega_i / 2)`
/// over `lattice`; `omegas` supplies one frequency per axis after the first.
pub fn pseudo_disorder(omega: f64, kbar: f64, beta_qm: f64, omegas: &[f64], lattice: &LatticeBox) -> Vec<f64> {
    assert_eq!(lattice.dimension(), omegas.len() + 1, "one frequency per extra axis");
    (0..lattice.len())
        .map(|i| {
            let c = lattice.coords(i);
            let q = c[0] as f64 + beta_qm;
            let extra: f64 = c[1..].iter().zip(omegas).map(|(&mi, w)| mi as f64 * w).sum();
            (0.5 * omega - 0.25 * kbar * q * q - 0.5 * extra).tan()
        })
        .collect()
}

/// A small rational relation `value ~ p / q` found among the driving parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RationalRelation {
    pub what: String,
    pub p: i64,
    pub q: i64,
}

fn small_rational(x: f64, q_max: i64, tol: f64) -> Option<(i64, i64)> {
    (1..=q_max).find_map(|q| {
        let p = (x * q as f64).round();
        ((x * q as f64 - p).abs() < tol * q as f64).then_some((p as i64, q))
    })
}

/// Rational relations with denominator `<= q_max` among `kbar / 4pi` and
/// `omega_i / 2pi`, singly and pairwise. Any hit makes the pseudo-disorder
/// periodic or lowers its effective dimension.
pub fn rational_relations(kbar: f64, omegas: &[f64], q_max: i64) -> Vec<RationalRelation> {
    let tol = 1e-9;
    let mut names = vec!["kbar/4pi".to_string()];
    let mut vals = vec![kbar / (2.0 * TAU)];
    for (i, w) in omegas.iter().enumerate() {
        names.push(format!("omega_{}/2pi", i + 2));
        vals.push(w / TAU);
    }
    let mut out = Vec::new();
    for (n, &v) in names.iter().zip(&vals) {
        if let Some((p, q)) = small_rational(v, q_max, tol) {
            out.push(RationalRelation { what: n.clone(), p, q });
        }
    }
    for a in 0..vals.len() {
        for b in a + 1..vals.len() {
            if vals[b] != 0.0 {
                if let Some((p, q)) = small_rational(vals[a] / vals[b], q_max, tol) {
                    out.push(RationalRelation { what: format!("({}) / ({})", names[a], names[b]), p, q });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HoppingSign {
    /// `t_r = +(1/2pi)^d int e^{i r.x} tan(...)`.
    #[default]
    AsPrinted,
    /// `t_r = -(1/2pi)^d int e^{i r.x} tan(...)`.
    Negated,
}

impl HoppingSign {
    fn factor(self) -> f64 {
        match self {
            HoppingSign::AsPrinted => 1.0,
            HoppingSign::Negated => -1.0,
        }
    }
}

/// Dense table `t_r` for `r` in `[-r_max, r_max]^d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HoppingTable {
    pub dimension: usize,
    pub r_max: usize,
    pub sign: HoppingSign,
    /// Row-major over the cube, last axis fastest.
    pub values: Vec<f64>,
}

impl HoppingTable {
    pub fn zeros(dimension: usize, r_max: usize) -> Self {
        HoppingTable { dimension, r_max, sign: HoppingSign::AsPrinted, values: vec![0.0; (2 * r_max + 1).pow(dimension as u32)] }
    }

    /// Nearest-neighbor hopping `t` along every axis.
    pub fn nearest_neighbor(dimension: usize, t: f64) -> Self {
        let mut h = Self::zeros(dimension, 1);
        for ax in 0..dimension {
            for s in [-1, 1] {
                let mut r = vec![0; dimension];
                r[ax] = s;
                h.set(&r, t);
            }
        }
        h
    }

    fn offset(&self, r: &[i64]) -> Option<usize> {
        let side = 2 * self.r_max + 1;
        let mut idx = 0;
        for &ri in r {
            if ri.unsigned_abs() as usize > self.r_max {
                return None;
            }
            idx = idx * side + (ri + self.r_max as i64) as usize;
        }
        Some(idx)
    }

    pub fn get(&self, r: &[i64]) -> f64 {
        self.offset(r).map_or(0.0, |i| self.values[i])
    }

    pub fn set(&mut self, r: &[i64], v: f64) {
        let i = self.offset(r).expect("r outside the table");
        self.values[i] = v;
    }

    pub fn t0(&self) -> f64 {
        self.get(&vec![0; self.dimension])
    }

    /// All displacement vectors with their values.
    pub fn entries(&self) -> impl Iterator<Item = (Vec<i64>, f64)> + '_ {
        let side = 2 * self.r_max + 1;
        self.values.iter().enumerate().map(move |(mut i, &v)| {
            let mut r = vec![0; self.dimension];
            for ax in (0..self.dimension).rev() {
                r[ax] = (i % side) as i64 - self.r_max as i64;
                i /= side;
            }
            (r, v)
        })
    }

    /// Largest `|t_r - t_{-r}|`.
    pub fn asymmetry(&self) -> f64 {
        self.entries()
            .map(|(r, v)| {
                let neg: Vec<i64> = r.iter().map(|x| -x).collect();
                (v - self.get(&neg)).abs()
            })
            .fold(0.0, f64::max)
    }
}

fn fft_nd(data: &mut [Complex64], n: usize, d: usize) {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for ax in 0..d {
        let stride = n.pow((d - 1 - ax) as u32);
        let outer = data.len() / (n * stride);
        for o in 0..outer {
            for s in 0..stride {
                let base = o * n * stride + s;
                for k in 0..n {
                    line[k] = data[base + k * stride];
                }
                fft.process(&mut line);
                for k in 0..n {
                    data[base + k * stride] = line[k];
                }
            }
        }
    }
}

fn hopping_quadrature(kappa: f64, epsilon: f64, d: usize, r_max: usize, n: usize) -> Vec<f64> {
    let total = n.pow(d as u32);
    let cos: Vec<f64> = (0..n).map(|j| (TAU * j as f64 / n as f64).cos()).collect();
    let mut data: Vec<Complex64> = (0..total)
        .map(|mut i| {
            let mut mod_prod = 1.0;
            for _ in 1..d {
                mod_prod *= cos[i % n];
                i /= n;
            }
            let x1 = cos[i % n];
            let amp = if d > 1 { 1.0 + epsilon * mod_prod } else { 1.0 };
            Complex64::new((0.5 * kappa * x1 * amp).tan(), 0.0)
        })
        .collect();
    // forward transform gives sum_j g(x_j) e^{-i k x_j}; the integrand is even,
    // so this equals the e^{+i r x} coefficient at k = r mod n.
    fft_nd(&mut data, n, d);
    let side = 2 * r_max + 1;
    let scale = 1.0 / total as f64;
    (0..side.pow(d as u32))
        .map(|mut i| {
            let mut flat = 0;
            let mut mult = 1;
            for _ in 0..d {
                let r = (i % side) as i64 - r_max as i64;
                flat += r.rem_euclid(n as i64) as usize * mult;
                mult *= n;
                i /= side;
            }
            data[flat].re * scale
        })
        .collect()
}

/// Fourier coefficients of `tan[(kappa/2) cos x_1 (1 + epsilon cos x_2 ... cos x_d)]`
/// by the trapezoidal rule on `n_quad` points per axis (rounded up to keep
/// `r_max` free of aliasing). For `d = 1` the modulation factor is absent and
/// `epsilon` is ignored.
pub fn hopping_coefficients(
    kappa: f64,
    epsilon: f64,
    d: usize,
    r_max: usize,
    n_quad: usize,
    sign: HoppingSign,
) -> Result<HoppingTable, AndersonError> {
    if d == 0 || !kappa.is_finite() || kappa < 0.0 || !(0.0..1.0).contains(&epsilon) {
        return Err(AndersonError::InvalidInput("need d >= 1, kappa >= 0, 0 <= epsilon < 1"));
    }
    let amplitude = if d > 1 { kappa * (1.0 + epsilon) } else { kappa };
    if amplitude >= PI {
        return Err(AndersonError::PoleInDomain { amplitude });
    }
    let n = n_quad.max(4 * r_max + 4);
    let coarse = hopping_quadrature(kappa, epsilon, d, r_max, n);
    let fine = hopping_quadrature(kappa, epsilon, d, r_max, 2 * n);
    let max_change = coarse.iter().zip(&fine).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if max_change > 1e-10 {
        return Err(AndersonError::QuadratureNotConverged { max_change });
    }
    let mut table = HoppingTable { dimension: d, r_max, sign, values: fine.iter().map(|v| sign.factor() * v).collect() };
    // the integrand is even in every coordinate; impose it exactly
    for ax in 0..d {
        let snapshot = table.clone();
        for (i, (r, v)) in snapshot.entries().enumerate() {
            let mut f = r.clone();
            f[ax] = -f[ax];
            table.values[i] = 0.5 * (v + snapshot.get(&f));
        }
    }
    Ok(table)
}

/// `sum_r t_r u_{m+r} = lambda u_m - onsite_m u_m` on a finite box with open boundaries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TightBindingModel {
    pub lattice: LatticeBox,
    pub onsite: Vec<f64>,
    pub hopping: HoppingTable,
}

impl TightBindingModel {
    pub fn new(lattice: LatticeBox, onsite: Vec<f64>, hopping: HoppingTable) -> Self {
        assert_eq!(lattice.len(), onsite.len());
        assert_eq!(lattice.dimension(), hopping.dimension);
        TightBindingModel { lattice, onsite, hopping }
    }

    /// 1D chain with box disorder and nearest-neighbor hopping.
    pub fn box_chain(disorder: &BoxDisorder, n: usize) -> Self {
        Self::new(LatticeBox::chain(n), disorder.onsite(n), HoppingTable::nearest_neighbor(1, disorder.t))
    }

    /// Model equivalent to the Floquet problem at quasi-energy `omega`.
    pub fn fgp(omega: f64, kbar: f64, beta_qm: f64, omegas: &[f64], lattice: LatticeBox, hopping: HoppingTable) -> Self {
        let onsite = pseudo_disorder(omega, kbar, beta_qm, omegas, &lattice);
        Self::new(lattice, onsite, hopping)
    }

    pub fn dimension(&self) -> usize {
        self.lattice.dimension()
    }

    /// The eigenvalue that corresponds to a Floquet state, `-t_0`.
    pub fn anderson_eigenvalue(&self) -> f64 {
        -self.hopping.t0()
    }

    /// Dense matrix with `t_0` left out of the diagonal.
    pub fn assemble(&self) -> DMatrix<f64> {
        let n = self.lattice.len();
        let mut h = DMatrix::zeros(n, n);
        let hops: Vec<(Vec<i64>, f64)> = self
            .hopping
            .entries()
            .filter(|(r, v)| *v != 0.0 && r.iter().any(|&x| x != 0))
            .collect();
        for a in 0..n {
            h[(a, a)] = self.onsite[a];
            let ca = self.lattice.coords(a);
            for (r, v) in &hops {
                let cb: Vec<i64> = ca.iter().zip(r).map(|(x, y)| x + y).collect();
                if let Some(b) = self.lattice.index(&cb) {
                    h[(a, b)] += v;
                }
            }
        }
        h
    }
}

/// Eigenvalues in ascending order; column `k` of `vectors` belongs to `values[k]`.
#[derive(Debug, Clone)]
pub struct Eigenpairs {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn solve_tight_binding(model: &TightBindingModel) -> Result<Eigenpairs, AndersonError> {
    if model.onsite.iter().any(|v| !v.is_finite()) {
        return Err(AndersonError::InvalidInput("onsite energies must be finite"));
    }
    let h = model.assemble();
    let scale = h.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let asymmetry = (&h - h.transpose()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if asymmetry > 1e-12 * scale {
        return Err(AndersonError::NonSymmetric { asymmetry });
    }
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |i, k| eig.eigenvectors[(i, order[k])]);
    Ok(Eigenpairs { values, vectors })
}

/// Number of eigenvalues of the symmetric tridiagonal matrix below `x`.
fn sturm_count(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = diag[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..diag.len() {
        let denom = if q == 0.0 { f64::EPSILON * (off[i - 1].abs() + 1.0) } else { q };
        q = diag[i] - x - off[i - 1] * off[i - 1] / denom;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Solve `(T - shift) x = b` by LU with partial pivoting, overwriting `b`.
fn tridiagonal_solve(diag: &[f64], off: &[f64], shift: f64, b: &mut [f64]) {
    let n = diag.len();
    // rows kept as three bands plus one fill-in band from pivoting
    let mut d: Vec<f64> = diag.iter().map(|x| x - shift).collect();
    let mut du: Vec<f64> = off.to_vec();
    let mut dl: Vec<f64> = off.to_vec();
    let mut du2 = vec![0.0; n.saturating_sub(2)];
    let tiny = f64::EPSILON * diag.iter().chain(off).fold(1.0f64, |m, v| m.max(v.abs()));
    for i in 0..n - 1 {
        if d[i].abs() >= dl[i].abs() {
            let d_i = if d[i] == 0.0 { tiny } else { d[i] };
            d[i] = d_i;
            let f = dl[i] / d_i;
            dl[i] = f;
            d[i + 1] -= f * du[i];
            b[i + 1] -= f * b[i];
        } else {
            let f = d[i] / dl[i];
            d[i] = dl[i];
            dl[i] = f;
            let tmp = du[i];
            du[i] = d[i + 1];
            d[i + 1] = tmp - f * d[i + 1];
            if i + 1 < n - 1 {
                du2[i] = du[i + 1];
                du[i + 1] = -f * du[i + 1];
            }
            b.swap(i, i + 1);
            b[i + 1] -= f * b[i];
        }
    }
    if d[n - 1] == 0.0 {
        d[n - 1] = tiny;
    }
    b[n - 1] /= d[n - 1];
    if n > 1 {
        b[n - 2] = (b[n - 2] - du[n - 2] * b[n - 1]) / d[n - 2];
    }
    for i in (0..n.saturating_sub(2)).rev() {
        b[i] = (b[i] - du[i] * b[i + 1] - du2[i] * b[i + 2]) / d[i];
    }
}

/// Eigenpairs of the symmetric tridiagonal matrix with eigenvalues in
/// `[lo, hi)`: Sturm bisection for the values, inverse iteration for the
/// vectors (unit norm).
pub fn tridiagonal_eigenpairs(diag: &[f64], off: &[f64], lo: f64, hi: f64) -> Vec<(f64, Vec<f64>)> {
    let n = diag.len();
    assert!(n >= 2 && off.len() == n - 1 && lo < hi);
    let (c_lo, c_hi) = (sturm_count(diag, off, lo), sturm_count(diag, off, hi));
    let scale = diag.iter().chain(off).fold(1.0f64, |m, v| m.max(v.abs()));
    let mut out = Vec::with_capacity(c_hi - c_lo);
    for k in c_lo..c_hi {
        // smallest x with count(x) > k
        let (mut a, mut b) = (lo, hi);
        while b - a > 4.0 * f64::EPSILON * scale {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if sturm_count(diag, off, mid) > k {
                b = mid;
            } else {
                a = mid;
            }
        }
        let lambda = 0.5 * (a + b);
        let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919 + k * 104_729) % 97) as f64 / 97.0).collect();
        for _ in 0..3 {
            tridiagonal_solve(diag, off, lambda, &mut x);
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in &mut x {
                *v /= norm;
            }
        }
        out.push((lambda, x));
    }
    out
}

/// Decay length of a profile `|u_n|^2 ~ exp(-2 |n - n_peak| / xi)`.
///
/// On each side of the peak the decay range runs from the peak to the first
/// site below `floor * peak` (or the boundary); `ln |u|^2` is regressed on
/// the distance over the central 60% of that range, excluding the peak.
/// Returns `xi = -2 / slope`, averaged over the usable sides.
pub fn envelope_decay_length(profile: &[f64], floor: f64) -> Option<f64> {
    let (peak_idx, &peak) = profile.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    if peak <= 0.0 {
        return None;
    }
    let threshold = floor * peak;
    let mut slopes = Vec::new();
    let mut weights = Vec::new();
    for dir in [-1i64, 1] {
        let mut range = 0usize;
        loop {
            let i = peak_idx as i64 + dir * (range as i64 + 1);
            if i < 0 || i as usize >= profile.len() || profile[i as usize] < threshold {
                break;
            }
            range += 1;
        }
        let (lo, hi) = ((0.2 * range as f64).ceil().max(1.0) as usize, (0.8 * range as f64).floor() as usize);
        if hi < lo + 2 {
            continue;
        }
        let mut x = Vec::new();
        let mut y = Vec::new();
        for dist in lo..=hi {
            let v = profile[(peak_idx as i64 + dir * dist as i64) as usize];
            if v > 0.0 {
                x.push(dist as f64);
                y.push(v.ln());
            }
        }
        if let Some(fit) = linear_fit(&x, &y) {
            if fit.slope < 0.0 {
                slopes.push(fit.slope);
                weights.push(x.len() as f64);
            }
        }
    }
    if slopes.is_empty() {
        return None;
    }
    let wsum: f64 = weights.iter().sum();
    let slope = slopes.iter().zip(&weights).map(|(s, w)| s * w).sum::<f64>() / wsum;
    Some(-2.0 / slope)
}

/// Localization length of one eigenvector from its envelope.
pub fn eigenvector_xi(vector: &[f64]) -> Option<f64> {
    let profile: Vec<f64> = vector.iter().map(|v| v * v).collect();
    envelope_decay_length(&profile, 1e-24)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocalizationLength {
    Finite { xi: f64, std_err: f64, gamma: f64 },
    /// Extended states (clean chain inside the band).
    Infinite,
}

impl LocalizationLength {
    pub fn xi(&self) -> f64 {
        match self {
            LocalizationLength::Finite { xi, .. } => *xi,
            LocalizationLength::Infinite => f64::INFINITY,
        }
    }
}

const TRANSFER_BLOCKS: usize = 32;

/// Lyapunov exponent of the nearest-neighbor chain at `energy` from `n`
/// products of 2x2 transfer matrices with renormalization. The chain is cut
/// into blocks whose exponents give the standard error.
pub fn transfer_matrix_xi(disorder: &BoxDisorder, energy: f64, n: usize) -> Result<LocalizationLength, AndersonError> {
    if disorder.t == 0.0 || n < TRANSFER_BLOCKS * 8 {
        return Err(AndersonError::InvalidInput("need T != 0 and a chain of at least 256 sites"));
    }
    if disorder.w == 0.0 && energy.abs() <= 2.0 * disorder.t.abs() {
        return Ok(LocalizationLength::Infinite);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(disorder.seed);
    let block = n / TRANSFER_BLOCKS;
    let (mut psi, mut prev) = (1.0f64, 0.0f64);
    let mut gammas = Vec::with_capacity(TRANSFER_BLOCKS);
    for _ in 0..TRANSFER_BLOCKS {
        let mut log_growth = 0.0;
        let start = (psi * psi + prev * prev).sqrt();
        psi /= start;
        prev /= start;
        for _ in 0..block {
            let eps = disorder.w * (rng.gen::<f64>() - 0.5);
            let next = (energy - eps) / disorder.t * psi - prev;
            prev = psi;
            psi = next;
            let norm = psi.abs() + prev.abs();
            if !(1e-100..=1e100).contains(&norm) {
                log_growth += norm.ln();
                psi /= norm;
                prev /= norm;
            }
        }
        log_growth += (psi * psi + prev * prev).sqrt().ln();
        gammas.push(log_growth / block as f64);
    }
    let gamma = gammas.iter().sum::<f64>() / gammas.len() as f64;
    let se = std_dev(&gammas) / (gammas.len() as f64).sqrt();
    let relative_error = se / gamma.abs();
    if !(relative_error <= 0.02) {
        return Err(AndersonError::NotConverged { relative_error });
    }
    Ok(LocalizationLength::Finite { xi: 1.0 / gamma, std_err: se / (gamma * gamma), gamma })
}

/// Typical localization length of the eigenstates of one box-disorder chain
/// with energies in `[e_lo, e_hi)`, from envelope fits: `1 / mean(1/xi_k)`.
pub fn diagonalization_xi(disorder: &BoxDisorder, n: usize, e_lo: f64, e_hi: f64) -> Option<(f64, usize)> {
    let diag = disorder.onsite(n);
    let off = vec![disorder.t; n - 1];
    let inv: Vec<f64> = tridiagonal_eigenpairs(&diag, &off, e_lo, e_hi)
        .iter()
        .filter_map(|(_, v)| eigenvector_xi(v))
        .map(|xi| 1.0 / xi)
        .collect();
    if inv.is_empty() {
        return None;
    }
    Some((inv.len() as f64 / inv.iter().sum::<f64>(), inv.len()))
}

/// Check of the mapping for one Floquet eigenpair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleEigenpair {
    /// Quasi-energy in `[0, 2pi)`, eigenvalue `exp(-i omega)`.
    pub omega: f64,
    /// `| |lambda| - 1 |`.
    pub unimodularity: f64,
    /// Floquet-state population with `|m| > 0.9 M`.
    pub edge_weight: f64,
    pub interior: bool,
    /// `|D u + T u| / (|D u| + |T u|)`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub kick: f64,
    pub kbar: f64,
    pub beta_qm: f64,
    pub m_small: usize,
    pub sign: HoppingSign,
    pub t0: f64,
    pub max_unimodularity: f64,
    pub n_interior: usize,
    pub median_interior_residual: f64,
    pub pairs: Vec<OracleEigenpair>,
}

/// Edge population above which an eigenpair is not counted as interior.
pub const ORACLE_EDGE_TOLERANCE: f64 = 1e-8;

/// Brute-force check of the lattice equation against the exact Floquet
/// eigenstates of the rotor truncated to `|m| <= m_small`.
pub fn floquet_oracle(kick: f64, kbar: f64, beta_qm: f64, m_small: usize, sign: HoppingSign) -> Result<OracleReport, AndersonError> {
    if m_small == 0 || m_small > 128 {
        return Err(AndersonError::InvalidInput("1 <= M_small <= 128"));
    }
    if !(kbar > 0.0) || !(kick >= 0.0) {
        return Err(AndersonError::InvalidInput("kbar > 0 and K >= 0"));
    }
    let kappa = kick / kbar;
    let n = 2 * m_small + 1;
    let ms: Vec<i64> = (0..n as i64).map(|i| i - m_small as i64).collect();
    let xs: Vec<f64> = (0..n).map(|j| TAU * j as f64 / n as f64).collect();

    // position-diagonal operator f(x) as a circulant in the momentum basis:
    // <m| f |m'> = (1/N) sum_j f(x_j) e^{-i (m - m') x_j}
    let circulant = |f: &dyn Fn(f64) -> Complex64| -> Vec<Complex64> {
        let fx: Vec<Complex64> = xs.iter().map(|&x| f(x)).collect();
        (0..n)
            .map(|k| {
                let d = k as f64;
                fx.iter().zip(&xs).map(|(v, x)| v * Complex64::from_polar(1.0, -d * x)).sum::<Complex64>() / n as f64
            })
            .collect()
    };
    let entry = |c: &[Complex64], a: usize, b: usize| c[(a as i64 - b as i64).rem_euclid(n as i64) as usize];
    let kick_c = circulant(&|x| Complex64::from_polar(1.0, -kappa * x.cos()));
    let inv_c = circulant(&|x| Complex64::new(1.0, (0.5 * kappa * x.cos()).tan()).inv());

    let free: Vec<Complex64> = ms
        .iter()
        .map(|&m| {
            let q = m as f64 + beta_qm;
            Complex64::from_polar(1.0, -0.5 * kbar * q * q)
        })
        .collect();
    let u = DMatrix::from_fn(n, n, |a, b| free[a] * entry(&kick_c, a, b));
    let schur = nalgebra::Schur::new(u);
    let (q, t) = schur.unpack();

    let hopping = hopping_coefficients(kappa, 0.0, 1, 2 * m_small, 8 * n, sign)?;
    let t0 = hopping.t0();
    let edge_cut = 0.9 * m_small as f64;

    let mut pairs = Vec::with_capacity(n);
    for k in 0..n {
        let lambda = t[(k, k)];
        let omega = (-lambda.arg()).rem_euclid(TAU);
        let psi: Vec<Complex64> = q.column(k).iter().copied().collect();
        let edge_weight: f64 = ms.iter().zip(&psi).filter(|(m, _)| (**m as f64).abs() > edge_cut).map(|(_, a)| a.norm_sqr()).sum();
        let uvec: Vec<Complex64> = (0..n).map(|a| (0..n).map(|b| entry(&inv_c, a, b) * psi[b]).sum()).collect();
        let onsite = pseudo_disorder(omega, kbar, beta_qm, &[], &LatticeBox::centered(&[m_small]));
        let (mut r2, mut d2, mut h2) = (0.0, 0.0, 0.0);
        for a in 0..n {
            let du = onsite[a] * uvec[a];
            let mut tu = Complex64::new(0.0, 0.0);
            for b in 0..n {
                tu += hopping.get(&[b as i64 - a as i64]) * uvec[b];
            }
            r2 += (du + tu).norm_sqr();
            d2 += du.norm_sqr();
            h2 += tu.norm_sqr();
        }
        let residual = r2.sqrt() / (d2.sqrt() + h2.sqrt());
        pairs.push(OracleEigenpair {
            omega,
            unimodularity: (lambda.norm() - 1.0).abs(),
            edge_weight,
            interior: edge_weight <= ORACLE_EDGE_TOLERANCE,
            residual,
        });
    }
    let interior: Vec<f64> = pairs.iter().filter(|p| p.interior).map(|p| p.residual).collect();
    if interior.is_empty() {
        return Err(AndersonError::TruncationDominates { tolerance: ORACLE_EDGE_TOLERANCE });
    }
    Ok(OracleReport {
        kick,
        kbar,
        beta_qm,
        m_small,
        sign,
        t0,
        max_unimodularity: pairs.iter().map(|p| p.unimodularity).fold(0.0, f64::max),
        n_interior: interior.len(),
        median_interior_residual: median(&interior),
        pairs,
    })
}

/// Runs the oracle with both hopping signs and returns the report with the
/// smaller median interior residual.
pub fn resolve_hopping_sign(kick: f64, kbar: f64, beta_qm: f64, m_small: usize) -> Result<(OracleReport, OracleReport), AndersonError> {
    let a = floquet_oracle(kick, kbar, beta_qm, m_small, HoppingSign::AsPrinted)?;
    let b = floquet_oracle(kick, kbar, beta_qm, m_small, HoppingSign::Negated)?;
    Ok(if b.median_interior_residual < a.median_interior_residual { (b, a) } else { (a, b) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pseudo_disorder_origin() {
        let e = pseudo_disorder(0.0, 2.89, 0.0, &[], &LatticeBox::centered(&[3]));
        assert_eq!(e[3], 0.0);
    }

    // kbar = 4 pi: the phase pi m^2 is a multiple of pi, so tan repeats
    // (trivially with period 2, in fact with period 1).
    #[test]
    fn rational_kbar_is_periodic() {
        let e = pseudo_disorder(1.1, 4.0 * PI, 0.0, &[], &LatticeBox::centered(&[50]));
        for i in 0..e.len() - 2 {
            assert!((e[i] - e[i + 2]).abs() < 1e-9 * (1.0 + e[i].abs()));
        }
    }

    #[test]
    fn pseudo_disorder_is_cauchy_in_the_bulk() {
        let e = pseudo_disorder(0.7, 2.89, 0.0, &[], &LatticeBox::centered(&[100_000]));
        let mut s = e.clone();
        s.sort_by(|a, b| a.total_cmp(b));
        let n = s.len() as f64;
        let ks = s
            .iter()
            .enumerate()
            .map(|(i, &x)| ((i as f64 + 0.5) / n - (0.5 + x.atan() / PI)).abs())
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS distance {ks}");
        let heavy = e.iter().filter(|x| x.abs() > 100.0).count() as f64 / n;
        assert!((heavy - 2.0 / PI * (0.01f64).atan()).abs() < 0.002);
    }

    #[test]
    fn commensurate_frequencies_reduce_dimension() {
        // omega_2 / omega_3 = 2 / 3: onsite depends on 2 m2 + 3 m3 only
        let (w2, w3) = (2.0 * 0.731, 3.0 * 0.731);
        let lattice = LatticeBox::centered(&[3, 6, 6]);
        let e = pseudo_disorder(0.4, 2.89, 0.2, &[w2, w3], &lattice);
        for i in 0..lattice.len() {
            let c = lattice.coords(i);
            if let Some(j) = lattice.index(&[c[0], c[1] + 3, c[2] - 2]) {
                assert!((e[i] - e[j]).abs() < 1e-8 * (1.0 + e[i].abs()), "{c:?}");
            }
        }
        let rel = rational_relations(2.89, &[w2, w3], 20);
        assert!(rel.iter().any(|r| r.p == 2 && r.q == 3));
        assert!(rational_relations(2.89, &crate::params::default_omegas(), 50).is_empty());
        assert!(!rational_relations(4.0 * PI, &[], 10).is_empty());
    }

    #[test]
    fn lattice_coords_round_trip() {
        let l = LatticeBox::centered(&[2, 1, 3]);
        for i in 0..l.len() {
            assert_eq!(l.index(&l.coords(i)), Some(i));
        }
        assert_eq!(l.index(&[3, 0, 0]), None);
    }

    #[test]
    fn hopping_t0_vanishes() {
        for kappa in [0.05, 0.7, 1.4, 2.5, 3.0] {
            let h = hopping_coefficients(kappa, 0.0, 1, 30, 256, HoppingSign::AsPrinted).unwrap();
            assert!(h.t0().abs() < 1e-12, "kappa {kappa}: {}", h.t0());
            for r in (2..=30).step_by(2) {
                assert!(h.get(&[r]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weak_kick_hopping_is_first_order() {
        let kappa = 0.1;
        let h = hopping_coefficients(kappa, 0.0, 1, 10, 64, HoppingSign::AsPrinted).unwrap();
        assert!((h.get(&[1]) - kappa / 4.0).abs() < 1e-4);
        assert!((h.get(&[-1]) - kappa / 4.0).abs() < 1e-4);
        for r in 2..=10 {
            assert!(h.get(&[r]).abs() < 1e-4);
        }
        let neg = hopping_coefficients(kappa, 0.0, 1, 10, 64, HoppingSign::Negated).unwrap();
        assert_eq!(neg.get(&[1]), -h.get(&[1]));
    }

    // Oracle: tan u = u + u^3/3 + 2u^5/15 + ..., and the r = 1 Fourier
    // coefficient of cos^k x is C(k, (k-1)/2) / 2^k.
    #[test]
    fn hopping_matches_taylor_series() {
        let kappa: f64 = 0.4;
        let u = kappa / 2.0;
        let series = u * 0.5 + u.powi(3) / 3.0 * 3.0 / 8.0 + 2.0 * u.powi(5) / 15.0 * 10.0 / 32.0 + 17.0 * u.powi(7) / 315.0 * 35.0 / 128.0;
        let h = hopping_coefficients(kappa, 0.0, 1, 5, 64, HoppingSign::AsPrinted).unwrap();
        assert!((h.get(&[1]) - series).abs() < 1e-7);
    }

    #[test]
    fn strong_hopping_decays_fast() {
        let h = hopping_coefficients(2.0, 0.0, 1, 25, 256, HoppingSign::AsPrinted).unwrap();
        let c3 = 27.0 * h.get(&[3]).abs();
        for r in (5..=25).step_by(2) {
            assert!((r as f64).powi(3) * h.get(&[r]).abs() <= c3, "r = {r}");
        }
    }

    #[test]
    fn pole_is_refused() {
        assert!(matches!(
            hopping_coefficients(3.2, 0.0, 1, 5, 64, HoppingSign::AsPrinted),
            Err(AndersonError::PoleInDomain { .. })
        ));
        assert!(matches!(
            hopping_coefficients(2.0, 0.6, 3, 2, 32, HoppingSign::AsPrinted),
            Err(AndersonError::PoleInDomain { .. })
        ));
    }

    #[test]
    fn near_pole_quadrature_is_flagged() {
        let err = hopping_coefficients(3.1, 0.0, 1, 4, 16, HoppingSign::AsPrinted).unwrap_err();
        assert!(matches!(err, AndersonError::QuadratureNotConverged { .. }));
    }

    #[test]
    fn multidimensional_hopping_is_even_and_refined() {
        let h = hopping_coefficients(1.2, 0.5, 3, 3, 32, HoppingSign::AsPrinted).unwrap();
        assert!(h.asymmetry() < 1e-14);
        for (r, v) in h.entries() {
            for ax in 0..3 {
                let mut f = r.clone();
                f[ax] = -f[ax];
                assert!((v - h.get(&f)).abs() < 1e-14);
            }
        }
        let finer = hopping_coefficients(1.2, 0.5, 3, 3, 64, HoppingSign::AsPrinted).unwrap();
        for (a, b) in h.values.iter().zip(&finer.values) {
            assert!((a - b).abs() < 1e-10);
        }
        // the modulation only reaches axes 2 and 3 through products of cosines
        assert!(h.get(&[1, 1, 1]).abs() > 1e-3);
        assert!(h.get(&[1, 1, 0]).abs() < 1e-12);
        // epsilon = 0 reduces to the chain
        let flat = hopping_coefficients(1.2, 0.0, 2, 3, 32, HoppingSign::AsPrinted).unwrap();
        let chain = hopping_coefficients(1.2, 0.0, 1, 3, 32, HoppingSign::AsPrinted).unwrap();
        for r in -3..=3 {
            assert!((flat.get(&[r, 0]) - chain.get(&[r])).abs() < 1e-14);
            assert!(flat.get(&[r, 1]).abs() < 1e-14);
        }
    }

    #[test]
    fn clean_chain_spectrum() {
        let n = 40;
        let model = TightBindingModel::box_chain(&BoxDisorder::new(0.0, 1.0, 0), n);
        let eig = solve_tight_binding(&model).unwrap();
        let mut exact: Vec<f64> = (1..=n).map(|k| 2.0 * (PI * k as f64 / (n + 1) as f64).cos()).collect();
        exact.sort_by(|a, b| a.total_cmp(b));
        for (a, b) in eig.values.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_model_has_site_eigenvectors() {
        let onsite = vec![3.0, -1.0, 2.0, 0.5];
        let model = TightBindingModel::new(LatticeBox::chain(4), onsite.clone(), HoppingTable::zeros(1, 1));
        let eig = solve_tight_binding(&model).unwrap();
        for k in 0..4 {
            let col = eig.vectors.column(k);
            let site = onsite.iter().position(|&e| e == eig.values[k]).unwrap();
            assert!((col[site].abs() - 1.0).abs() < 1e-14);
            assert!((col.norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn asymmetric_hopping_is_rejected() {
        let mut h = HoppingTable::zeros(1, 1);
        h.set(&[1], 1.0);
        h.set(&[-1], 0.5);
        let model = TightBindingModel::new(LatticeBox::chain(5), vec![0.0; 5], h);
        assert!(matches!(solve_tight_binding(&model), Err(AndersonError::NonSymmetric { .. })));
    }

    #[test]
    fn fgp_matrix_is_symmetric() {
        let hop = hopping_coefficients(7.2 / 2.89, 0.0, 1, 60, 512, HoppingSign::Negated).unwrap();
        let model = TightBindingModel::fgp(1.3, 2.89, 0.37, &[], LatticeBox::centered(&[40]), hop);
        let h = model.assemble();
        assert_eq!(h, h.transpose());
        assert!(model.anderson_eigenvalue().abs() < 1e-12);
        let hop3 = hopping_coefficients(0.8, 0.4, 3, 2, 32, HoppingSign::Negated).unwrap();
        let model3 = TightBindingModel::fgp(0.2, 2.89, 0.1, &crate::params::default_omegas(), LatticeBox::centered(&[3, 2, 2]), hop3);
        let h3 = model3.assemble();
        assert!((&h3 - h3.transpose()).amax() == 0.0);
    }

    #[test]
    fn fgp_chain_states_share_one_localization_length() {
        let hop = hopping_coefficients(7.2 / 2.89, 0.0, 1, 80, 512, HoppingSign::Negated).unwrap();
        let model = TightBindingModel::fgp(0.9, 2.89, 0.25, &[], LatticeBox::chain(512), hop);
        let eig = solve_tight_binding(&model).unwrap();
        let xis: Vec<f64> = (0..512)
            .filter(|&k| eig.values[k].abs() < 2.0)
            .filter_map(|k| {
                let v: Vec<f64> = eig.vectors.column(k).iter().copied().collect();
                let peak = v.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap().0;
                ((64..448).contains(&peak)).then(|| eigenvector_xi(&v)).flatten()
            })
            .collect();
        assert!(xis.len() > 50, "{} states", xis.len());
        let med = median(&xis);
        let near = xis.iter().filter(|&&x| x > 0.5 * med && x < 2.0 * med).count() as f64 / xis.len() as f64;
        assert!(near > 0.8, "median {med}, fraction within a factor 2: {near}");
    }

    #[test]
    fn envelope_fit_recovers_planted_length() {
        let xi = 7.5;
        let profile: Vec<f64> = (0..400).map(|n| (-2.0 * (n as f64 - 170.0).abs() / xi).exp()).collect();
        let fit = envelope_decay_length(&profile, 1e-24).unwrap();
        assert!((fit - xi).abs() < 1e-9);
        assert!(envelope_decay_length(&[0.0; 5], 1e-3).is_none());
    }

    #[test]
    fn tridiagonal_solver_matches_dense() {
        let dis = BoxDisorder::new(1.5, 1.0, 9);
        let n = 120;
        let diag = dis.onsite(n);
        let off = vec![1.0; n - 1];
        let dense = solve_tight_binding(&TightBindingModel::box_chain(&dis, n)).unwrap();
        let pairs = tridiagonal_eigenpairs(&diag, &off, -0.5, 0.5);
        let expected: Vec<usize> = (0..n).filter(|&k| dense.values[k] >= -0.5 && dense.values[k] < 0.5).collect();
        assert_eq!(pairs.len(), expected.len());
        for ((lam, v), &k) in pairs.iter().zip(&expected) {
            assert!((lam - dense.values[k]).abs() < 1e-12);
            let dot: f64 = v.iter().zip(dense.vectors.column(k).iter()).map(|(a, b)| a * b).sum();
            assert!((dot.abs() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn clean_chain_is_extended() {
        let r = transfer_matrix_xi(&BoxDisorder::new(0.0, 1.0, 1), 0.0, 10_000).unwrap();
        assert_eq!(r, LocalizationLength::Infinite);
        // outside the band the clean chain decays with gamma = acosh(|E| / 2T)
        let r = transfer_matrix_xi(&BoxDisorder::new(0.0, 1.0, 1), 3.0, 10_000).unwrap();
        assert!((r.xi() * 1.5f64.acosh() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn short_weakly_disordered_chain_does_not_converge() {
        let err = transfer_matrix_xi(&BoxDisorder::new(0.5, 1.0, 3), 0.0, 2_000).unwrap_err();
        assert!(matches!(err, AndersonError::NotConverged { .. }));
    }

    // Perturbative oracle away from the band center: gamma = W^2 / (24 (4T^2 - E^2)).
    #[test]
    fn weak_disorder_lyapunov_exponent() {
        let (w, e) = (1.0, 1.0);
        let r = transfer_matrix_xi(&BoxDisorder::new(w, 1.0, 4), e, 4_000_000).unwrap();
        let expected = 24.0 * (4.0 - e * e) / (w * w);
        assert!((r.xi() - expected).abs() < 0.08 * expected, "{} vs {expected}", r.xi());
    }

    #[test]
    fn floquet_oracle_free_rotor() {
        let rep = floquet_oracle(0.0, 2.89, 0.0, 16, HoppingSign::Negated).unwrap();
        let mut got: Vec<f64> = rep.pairs.iter().map(|p| p.omega).collect();
        let mut exp: Vec<f64> = (-16i64..=16).map(|m| (2.89 * (m * m) as f64 / 2.0).rem_euclid(TAU)).collect();
        got.sort_by(|a, b| a.total_cmp(b));
        exp.sort_by(|a, b| a.total_cmp(b));
        for (a, b) in got.iter().zip(&exp) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn floquet_oracle_selects_negated_sign() {
        let (best, other) = resolve_hopping_sign(4.0, 2.89, 0.3, 32).unwrap();
        assert_eq!(best.sign, HoppingSign::Negated);
        assert!(best.max_unimodularity < 1e-10);
        assert!(best.median_interior_residual < 1e-6, "{}", best.median_interior_residual);
        assert!(other.median_interior_residual > 1e-3);
    }

    #[test]
    fn floquet_oracle_limits() {
        assert!(floquet_oracle(2.0, 2.89, 0.0, 129, HoppingSign::Negated).is_err());
    }

    #[test]
    fn oracle_residual_shrinks_with_basis() {
        let small = floquet_oracle(4.0, 2.89, 0.1, 32, HoppingSign::Negated).unwrap();
        let large = floquet_oracle(4.0, 2.89, 0.1, 64, HoppingSign::Negated).unwrap();
        // a moderately truncated state of the small basis, found again by quasi-energy
        let probe = small
            .pairs
            .iter()
            .filter(|p| p.edge_weight > 1e-12 && p.edge_weight < 1e-5)
            .max_by(|a, b| a.residual.total_cmp(&b.residual))
            .unwrap();
        let dist = |a: f64, b: f64| {
            let d = (a - b).rem_euclid(TAU);
            d.min(TAU - d)
        };
        let matched = large.pairs.iter().min_by(|a, b| dist(a.omega, probe.omega).total_cmp(&dist(b.omega, probe.omega))).unwrap();
        assert!(matched.residual < probe.residual, "{} vs {}", matched.residual, probe.residual);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn hopping_is_real_symmetric(kappa in 0.0..2.5f64, eps in 0.0..0.1f64, d in 1usize..3) {
            let h = hopping_coefficients(kappa, eps, d, 3, 128, HoppingSign::Negated).unwrap();
            prop_assert!(h.asymmetry() < 1e-14);
            prop_assert!(h.t0().abs() < 1e-12);
        }
    }
}
