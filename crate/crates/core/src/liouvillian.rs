//! Lindblad superoperator, steady-state solver and a time-integration oracle.
//!
//! Vectorization is column-stacking: `vec(ρ)[i + 7j] = ρ[i][j]`. Under this
//! convention `vec(AρB) = (Bᵀ ⊗ A) vec(ρ)`, so the coherent part is
//! `−i (I ⊗ H − Hᵀ ⊗ I)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::model::{
    build_hamiltonian, Hamiltonian, Level, LevelMatrix, ModelError, ModelParams, NUM_LEVELS,
};

pub const DIM: usize = NUM_LEVELS * NUM_LEVELS;

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-10;
const EIGEN_TOL: f64 = 1e-9;
/// Smallest acceptable |pivot| relative to the largest in the trace-replaced system.
const PIVOT_RATIO_MIN: f64 = 1e-13;
const EVOLVE_TRACE_TOL: f64 = 1e-6;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub const fn vec_index(i: usize, j: usize) -> usize {
    i + NUM_LEVELS * j
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LiouvillianError {
    #[error("steady-state system is singular (pivot ratio {pivot_ratio:.3e})")]
    SingularSystem { pivot_ratio: f64 },
    #[error("solution is not a physical state: {0}")]
    NonPhysicalState(StateDiagnostics),
    #[error("time step too large: {0}")]
    StepTooLarge(String),
    #[error("invalid time arguments: t = {t}, dt = {dt}")]
    InvalidTime { t: f64, dt: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(pub LevelMatrix);

impl DensityMatrix {
    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    pub fn population(&self, level: Level) -> f64 {
        self.0[(level.index(), level.index())].re
    }

    pub fn get(&self, row: Level, col: Level) -> Complex64 {
        self.0[(row.index(), col.index())]
    }

    pub fn hermitized(&self) -> Self {
        DensityMatrix((self.0 + self.0.adjoint()).scale(0.5))
    }

    pub fn to_vector(&self) -> DVector<Complex64> {
        DVector::from_iterator(DIM, self.0.iter().copied())
    }

    pub fn from_vector(v: &DVector<Complex64>) -> Self {
        assert_eq!(v.len(), DIM);
        DensityMatrix(LevelMatrix::from_iterator(v.iter().copied()))
    }

    pub fn max_abs_diff(&self, other: &DensityMatrix) -> f64 {
        (self.0 - other.0).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Result of [`validate_state`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StateDiagnostics {
    pub trace_error: f64,
    pub hermiticity_error: f64,
    pub min_eigenvalue: f64,
    pub trace_ok: bool,
    pub hermitian_ok: bool,
    pub positive_ok: bool,
}

impl StateDiagnostics {
    pub fn is_valid(&self) -> bool {
        self.trace_ok && self.hermitian_ok && self.positive_ok
    }
}

impl std::fmt::Display for StateDiagnostics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "trace error {:.3e}, hermiticity error {:.3e}, min eigenvalue {:.3e}",
            self.trace_error, self.hermiticity_error, self.min_eigenvalue
        )
    }
}

pub fn validate_state(rho: &DensityMatrix) -> StateDiagnostics {
    let trace_error = (rho.0.trace() - Complex64::new(1.0, 0.0)).norm();
    let hermiticity_error = (rho.0 - rho.0.adjoint())
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let min_eigenvalue = SymmetricEigen::new(rho.hermitized().0)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    StateDiagnostics {
        trace_error,
        hermiticity_error,
        min_eigenvalue,
        trace_ok: trace_error <= TRACE_TOL,
        hermitian_ok: hermiticity_error <= HERMITIAN_TOL,
        positive_ok: min_eigenvalue >= -EIGEN_TOL,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ChannelKind {
    /// Spontaneous decay excited → ground.
    Decay { from: Level, to: Level },
    /// Projector dephasing on one level.
    Dephase { level: Level },
    /// Ground population transfer.
    GroundMix { from: Level, to: Level },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LindbladChannel {
    pub kind: ChannelKind,
    pub rate: f64,
}

impl LindbladChannel {
    /// Jump operator `|to⟩⟨from|` as (to, from).
    pub fn jump(&self) -> (Level, Level) {
        match self.kind {
            ChannelKind::Decay { from, to } | ChannelKind::GroundMix { from, to } => (to, from),
            ChannelKind::Dephase { level } => (level, level),
        }
    }

    pub fn is_well_formed(&self) -> bool {
        let kind_ok = match self.kind {
            ChannelKind::Decay { from, to } => from.is_excited() && to.is_ground(),
            ChannelKind::GroundMix { from, to } => from.is_ground() && to.is_ground(),
            ChannelKind::Dephase { .. } => true,
        };
        kind_ok && self.rate >= 0.0 && self.rate.is_finite()
    }
}

/// Decay, ground relaxation toward the thermal weights, and clock dephasing.
pub fn assemble_channels(params: &ModelParams) -> Vec<LindbladChannel> {
    let mut out = Vec::new();
    for &e in &Level::EXCITED {
        for &g in &Level::GROUND {
            let rate = params.gamma_exc * params.branching.get(e, g);
            if rate > 0.0 {
                out.push(LindbladChannel { kind: ChannelKind::Decay { from: e, to: g }, rate });
            }
        }
    }
    for &from in &Level::GROUND {
        for (&to, &w) in Level::GROUND.iter().zip(&params.thermal_weights) {
            let rate = params.gamma_pop * w;
            if from != to && rate > 0.0 {
                out.push(LindbladChannel { kind: ChannelKind::GroundMix { from, to }, rate });
            }
        }
    }
    // each projector removes γ₂/2 from ρ₁₂, so both together give γ₂
    if params.gamma_coh > 0.0 {
        for level in [Level::Clock1, Level::Clock2] {
            out.push(LindbladChannel {
                kind: ChannelKind::Dephase { level },
                rate: params.gamma_coh,
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Superoperator(pub DMatrix<Complex64>);

impl Superoperator {
    pub fn zeros() -> Self {
        Superoperator(DMatrix::zeros(DIM, DIM))
    }

    /// Dissipative part only.
    pub fn dissipator(channels: &[LindbladChannel]) -> Self {
        let mut l = Self::zeros();
        for ch in channels {
            l.add_channel(ch);
        }
        l
    }

    pub fn add_channel(&mut self, ch: &LindbladChannel) {
        let (t, f) = ch.jump();
        let (t, f) = (t.index(), f.index());
        let g = ch.rate;
        let m = &mut self.0;
        m[(vec_index(t, t), vec_index(f, f))] += g;
        for j in 0..NUM_LEVELS {
            m[(vec_index(f, j), vec_index(f, j))] -= 0.5 * g;
            m[(vec_index(j, f), vec_index(j, f))] -= 0.5 * g;
        }
    }

    /// Adds `−i (I ⊗ H − Hᵀ ⊗ I)`.
    pub fn add_hamiltonian(&mut self, h: &Hamiltonian) {
        let h = h.matrix();
        let m = &mut self.0;
        for j in 0..NUM_LEVELS {
            for i in 0..NUM_LEVELS {
                let row = vec_index(i, j);
                // (Hρ)_ij = Σ_k H_ik ρ_kj
                for k in 0..NUM_LEVELS {
                    let hik = h[(i, k)];
                    if hik != ZERO {
                        m[(row, vec_index(k, j))] -= I * hik;
                    }
                }
                // (ρH)_ij = Σ_k ρ_ik H_kj
                for k in 0..NUM_LEVELS {
                    let hkj = h[(k, j)];
                    if hkj != ZERO {
                        m[(row, vec_index(i, k))] += I * hkj;
                    }
                }
            }
        }
    }

    pub fn apply(&self, rho: &DensityMatrix) -> DensityMatrix {
        DensityMatrix::from_vector(&(&self.0 * rho.to_vector()))
    }

    pub fn max_norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Induced ∞-norm (max absolute row sum); bounds the spectral radius.
    pub fn inf_norm(&self) -> f64 {
        self.0
            .row_iter()
            .map(|r| r.iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `vec(I)ᵀ L`, zero for a trace-preserving generator.
    pub fn trace_row_residual(&self) -> f64 {
        (0..DIM)
            .map(|col| {
                (0..NUM_LEVELS)
                    .map(|i| self.0[(vec_index(i, i), col)])
                    .sum::<Complex64>()
                    .norm()
            })
            .fold(0.0, f64::max)
    }
}

pub fn build_liouvillian(h: &Hamiltonian, channels: &[LindbladChannel]) -> Superoperator {
    let mut l = Superoperator::dissipator(channels);
    l.add_hamiltonian(h);
    l
}

/// Full Liouvillian of a parameter set.
pub fn liouvillian_for(params: &ModelParams) -> Result<Superoperator, LiouvillianError> {
    params.validate()?;
    let h = build_hamiltonian(params)?;
    Ok(build_liouvillian(&h, &assemble_channels(params)))
}

/// Real coordinates of a Hermitian matrix restricted to a set of entries.
#[derive(Clone, Copy, Debug)]
enum Coord {
    Diag(usize),
    Re(usize, usize),
    Im(usize, usize),
}

/// Entries reachable from the populations under `L`: the smallest invariant
/// subspace holding every state that evolves out of a diagonal one. Entries
/// outside it vanish in the steady state.
fn reachable_coords(l: &Superoperator) -> Vec<Coord> {
    let mut seen = [false; DIM];
    let mut queue: Vec<usize> = (0..NUM_LEVELS).map(|i| vec_index(i, i)).collect();
    queue.iter().for_each(|&k| seen[k] = true);
    while let Some(col) = queue.pop() {
        for row in 0..DIM {
            if !seen[row] && l.0[(row, col)] != ZERO {
                seen[row] = true;
                queue.push(row);
                let (i, j) = (row % NUM_LEVELS, row / NUM_LEVELS);
                if !seen[vec_index(j, i)] {
                    seen[vec_index(j, i)] = true;
                    queue.push(vec_index(j, i));
                }
            }
        }
    }
    let mut coords: Vec<Coord> = (0..NUM_LEVELS).map(Coord::Diag).collect();
    for j in 0..NUM_LEVELS {
        for i in 0..j {
            if seen[vec_index(i, j)] {
                coords.push(Coord::Re(i, j));
                coords.push(Coord::Im(i, j));
            }
        }
    }
    coords
}

/// Solve `L vec(ρ) = 0` with the ρ₁₁ equation replaced by `tr ρ = 1`.
///
/// The solve runs on the real coordinates of the reachable Hermitian
/// subspace, which is equivalent to the full 49×49 system but much smaller.
pub fn steady_state(l: &Superoperator) -> Result<DensityMatrix, LiouvillianError> {
    let coords = reachable_coords(l);
    let n = coords.len();
    let m = &l.0;
    // image of basis element b read at entry (i, j): (L B_b)_ij
    let image = |b: Coord, row: usize| -> Complex64 {
        match b {
            Coord::Diag(k) => m[(row, vec_index(k, k))],
            Coord::Re(p, q) => m[(row, vec_index(p, q))] + m[(row, vec_index(q, p))],
            Coord::Im(p, q) => I * (m[(row, vec_index(p, q))] - m[(row, vec_index(q, p))]),
        }
    };
    let mut a = DMatrix::<f64>::zeros(n, n);
    for (c, &b) in coords.iter().enumerate() {
        for (r, &target) in coords.iter().enumerate() {
            a[(r, c)] = match target {
                Coord::Diag(k) => image(b, vec_index(k, k)).re,
                Coord::Re(p, q) => image(b, vec_index(p, q)).re,
                Coord::Im(p, q) => image(b, vec_index(p, q)).im,
            };
        }
    }
    // scale the constraint row to the operator so pivots stay comparable
    let scale = a.iter().fold(0.0f64, |acc, x| acc.max(x.abs())).max(1.0);
    for c in 0..n {
        a[(0, c)] = if matches!(coords[c], Coord::Diag(_)) { scale } else { 0.0 };
    }
    let lu = a.lu();
    let (lo, hi) = lu
        .u()
        .diagonal()
        .iter()
        .map(|x| x.abs())
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), x| (lo.min(x), hi.max(x)));
    let pivot_ratio = if hi > 0.0 { lo / hi } else { 0.0 };
    if !(pivot_ratio >= PIVOT_RATIO_MIN) {
        return Err(LiouvillianError::SingularSystem { pivot_ratio });
    }
    let mut rhs = DVector::zeros(n);
    rhs[0] = scale;
    let x = lu
        .solve(&rhs)
        .ok_or(LiouvillianError::SingularSystem { pivot_ratio })?;
    let mut rho = LevelMatrix::zeros();
    for (&c, &v) in coords.iter().zip(x.iter()) {
        match c {
            Coord::Diag(k) => rho[(k, k)] = Complex64::new(v, 0.0),
            Coord::Re(p, q) => {
                rho[(p, q)].re = v;
                rho[(q, p)].re = v;
            }
            Coord::Im(p, q) => {
                rho[(p, q)].im = v;
                rho[(q, p)].im = -v;
            }
        }
    }
    let rho = DensityMatrix(rho);
    if is_physical_fast(&rho) {
        Ok(rho)
    } else {
        Err(LiouvillianError::NonPhysicalState(validate_state(&rho)))
    }
}

/// Exactly Hermitian input assumed; positivity via Cholesky of `ρ + ε·I`.
fn is_physical_fast(rho: &DensityMatrix) -> bool {
    let shifted = rho.0 + LevelMatrix::identity().scale(EIGEN_TOL);
    (rho.trace() - 1.0).abs() <= TRACE_TOL
        && rho.0.iter().all(|z| z.is_finite())
        && shifted.cholesky().is_some()
}

pub fn steady_state_for(params: &ModelParams) -> Result<DensityMatrix, LiouvillianError> {
    steady_state(&liouvillian_for(params)?)
}

/// One classical RK4 step of a linear ODE is the matrix `I + Q` with
/// `Q = A + A²/2 + A³/6 + A⁴/24`, `A = L·dt`. Only `Q` is kept so the slow
/// modes are not rounded away against the identity.
fn rk4_increment(l: &Superoperator, dt: f64) -> DMatrix<Complex64> {
    let a = l.0.scale(dt);
    let mut term = a.clone();
    let mut sum = a.clone();
    for k in 2..=4 {
        term = &term * &a / Complex64::new(k as f64, 0.0);
        sum += &term;
    }
    sum
}

/// Fixed-step RK4 integration of `dρ/dt = L ρ` to time `t`.
///
/// RK4 on a linear system is a fixed matrix per step, so `n` steps are applied
/// as the `n`-th matrix power (binary exponentiation, `(I+Q)² = I + 2Q + Q²`)
/// followed by one shorter step for the remainder. The scheme is stable for
/// `dt·‖L‖∞ ≲ 2.5`.
pub fn evolve(
    rho0: &DensityMatrix,
    l: &Superoperator,
    t: f64,
    dt: f64,
) -> Result<DensityMatrix, LiouvillianError> {
    if !(t >= 0.0 && t.is_finite() && dt > 0.0 && dt.is_finite()) {
        return Err(LiouvillianError::InvalidTime { t, dt });
    }
    if t == 0.0 {
        return Ok(rho0.clone());
    }
    let steps = (t / dt).floor();
    let remainder = t - steps * dt;
    let mut v = rho0.to_vector();
    let mut n = steps as u64;
    let mut q = rk4_increment(l, dt);
    while n > 0 {
        if n & 1 == 1 {
            v += &q * &v;
        }
        n >>= 1;
        if n > 0 {
            q = &q * &q + q.scale(2.0);
        }
    }
    if remainder > 0.0 {
        v += rk4_increment(l, remainder) * &v;
    }
    let rho = DensityMatrix::from_vector(&v);
    let drift = (rho.0.trace() - rho0.0.trace()).norm();
    let largest = rho.0.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if !(drift <= EVOLVE_TRACE_TOL) || !(largest <= 1.0 + EVOLVE_TRACE_TOL) {
        return Err(LiouvillianError::StepTooLarge(format!(
            "dt = {dt:.3e} s with ‖L‖∞ = {:.3e}: trace drift {drift:.3e}, max |ρij| {largest:.3e}",
            l.inf_norm()
        )));
    }
    Ok(rho.hermitized())
}
