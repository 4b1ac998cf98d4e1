//! Absorption from steady-state coherences, slice-wise propagation of the CPT
//! beam through the cell, and transmission spectra.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::liouvillian::{steady_state_for, DensityMatrix, LiouvillianError};
use crate::model::{constants, ModeId, ModelParams};

/// Inert-mode threshold as a fraction of Γ'.
pub const INERT_RABI_FRACTION: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectroscopyError {
    #[error("solver failed in slice {slice} at delta = {delta} rad/s: {source}")]
    Solver {
        slice: usize,
        delta: f64,
        #[source]
        source: LiouvillianError,
    },
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid detuning grid: {0}")]
    Grid(String),
    #[error("target transparency {0} is unreachable (must lie in (0, 1])")]
    Unreachable(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellGeometry {
    /// Meters.
    pub length: f64,
    pub repump_start: f64,
    pub repump_end: f64,
    pub slices: usize,
}

impl Default for CellGeometry {
    fn default() -> Self {
        Self { length: 0.018, repump_start: 0.006, repump_end: 0.012, slices: 48 }
    }
}

impl CellGeometry {
    /// Repump beams overlapping the whole optical path.
    pub fn full_overlap(&self) -> Self {
        Self { repump_start: 0.0, repump_end: self.length, ..*self }
    }

    pub fn validate(&self) -> Result<(), SpectroscopyError> {
        let ok = self.length > 0.0
            && self.length.is_finite()
            && 0.0 <= self.repump_start
            && self.repump_start <= self.repump_end
            && self.repump_end <= self.length;
        if !ok {
            return Err(SpectroscopyError::Geometry(format!(
                "need 0 <= repump_start <= repump_end <= length, got {} / {} / {} m",
                self.repump_start, self.repump_end, self.length
            )));
        }
        if self.slices < 3 {
            return Err(SpectroscopyError::Geometry(format!(
                "need at least 3 slices, got {}",
                self.slices
            )));
        }
        Ok(())
    }

    pub fn slice_width(&self) -> f64 {
        self.length / self.slices as f64
    }

    /// Whether the slice centred at `z` lies in the repumped region.
    pub fn is_repumped(&self, z: f64) -> bool {
        self.repump_start <= z && z < self.repump_end
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionScale {
    /// 1/m per unit of the dimensionless response `Γ'·2·Im ρ/Ω`.
    pub kappa: f64,
    pub target_transparency: Option<f64>,
    pub density: f64,
}

impl AbsorptionScale {
    pub fn new(kappa: f64) -> Self {
        Self { kappa, target_transparency: None, density: constants::CELL_DENSITY }
    }
}

/// Whether light intensity feeds back on the atomic response along the cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Feedback {
    /// Rabi frequencies follow the local intensity (default).
    On,
    /// Every slice sees the entry Rabi frequencies.
    Off,
}

/// Absorption coefficients (1/m) of the two σ⁺ modes, in (SigmaA, SigmaB) order.
pub fn absorption_coefficients(
    rho: &DensityMatrix,
    params: &ModelParams,
    scale: &AbsorptionScale,
) -> [f64; 2] {
    let threshold = INERT_RABI_FRACTION * params.gamma_exc;
    [ModeId::SigmaA, ModeId::SigmaB].map(|id| {
        let rabi = params.mode(id).rabi;
        if rabi < threshold {
            return 0.0;
        }
        let (g, e) = id.resonant();
        scale.kappa * params.gamma_exc * 2.0 * rho.get(g, e).im / rabi
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SliceRecord {
    pub z_center: f64,
    /// σ⁺ Rabi frequencies entering the slice.
    pub rabi: [f64; 2],
    /// Absorption coefficients used to attenuate the slice.
    pub alpha: [f64; 2],
    pub repumped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellResult {
    pub transmission: f64,
    pub slices: Vec<SliceRecord>,
}

fn solve_alpha(
    params: &ModelParams,
    rabi: [f64; 2],
    repump: bool,
    scale: &AbsorptionScale,
    slice: usize,
) -> Result<[f64; 2], SpectroscopyError> {
    let mut local = params.clone();
    local.set_rabi(ModeId::SigmaA, rabi[0]);
    local.set_rabi(ModeId::SigmaB, rabi[1]);
    for id in [ModeId::PiA, ModeId::PiB] {
        local.set_rabi(id, if repump { params.mode(id).rabi } else { 0.0 });
    }
    let rho = steady_state_for(&local).map_err(|source| SpectroscopyError::Solver {
        slice,
        delta: params.delta,
        source,
    })?;
    Ok(absorption_coefficients(&rho, &local, scale))
}

/// Propagate the σ⁺ pair through the cell slice by slice.
///
/// With feedback on, each slice takes a midpoint step: the response at the
/// entry intensity predicts the intensity at the slice centre, where the
/// attenuating α is evaluated. π modes are unattenuated and present only in
/// slices centred inside the repump region.
pub fn propagate_cell(
    params: &ModelParams,
    geom: &CellGeometry,
    scale: &AbsorptionScale,
    feedback: Feedback,
) -> Result<CellResult, SpectroscopyError> {
    geom.validate()?;
    let dz = geom.slice_width();
    let entry = [params.mode(ModeId::SigmaA).rabi, params.mode(ModeId::SigmaB).rabi];
    let mut intensity = entry.map(|r| r * r);
    let mut records = Vec::with_capacity(geom.slices);
    // with fixed Rabi frequencies repumped and bare slices each share one solution
    let mut cached: [Option<[f64; 2]>; 2] = [None, None];

    for k in 0..geom.slices {
        let z = (k as f64 + 0.5) * dz;
        let repumped = geom.is_repumped(z);
        let alpha = match feedback {
            Feedback::Off => match cached[repumped as usize] {
                Some(a) => a,
                None => {
                    let a = solve_alpha(params, entry, repumped, scale, k)?;
                    cached[repumped as usize] = Some(a);
                    a
                }
            },
            Feedback::On => {
                let rabi = intensity.map(f64::sqrt);
                let a0 = solve_alpha(params, rabi, repumped, scale, k)?;
                let mid = [0, 1].map(|m| (intensity[m] * (-0.5 * a0[m] * dz).exp()).sqrt());
                solve_alpha(params, mid, repumped, scale, k)?
            }
        };
        records.push(SliceRecord {
            z_center: z,
            rabi: intensity.map(f64::sqrt),
            alpha,
            repumped,
        });
        for m in 0..2 {
            intensity[m] *= (-alpha[m] * dz).exp();
        }
    }

    let total_in: f64 = entry.iter().map(|r| r * r).sum();
    let transmission = if total_in > 0.0 {
        intensity.iter().sum::<f64>() / total_in
    } else {
        1.0
    };
    Ok(CellResult { transmission, slices: records })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPoint {
    pub delta: f64,
    pub transmission: f64,
    /// σ⁺ absorption coefficients of the first slice.
    pub per_mode_alpha: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Spectrum {
    pub points: Vec<SpectrumPoint>,
    pub params: ModelParams,
    pub kappa: f64,
}

impl Spectrum {
    pub fn deltas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.delta).collect()
    }

    pub fn transmissions(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.transmission).collect()
    }

    /// CSV with `#` comment lines carrying the parameters and κ.
    pub fn to_csv(&self, extra_comments: &[String]) -> String {
        let mut out = String::new();
        for line in extra_comments {
            let _ = writeln!(out, "# {line}");
        }
        for line in params_summary(&self.params) {
            let _ = writeln!(out, "# {line}");
        }
        let _ = writeln!(out, "# kappa_per_m = {}", self.kappa);
        out.push_str("delta_rad_s,transmission\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{}", p.delta, p.transmission);
        }
        out
    }
}

/// `key = value` lines describing every model parameter.
pub fn params_summary(p: &ModelParams) -> Vec<String> {
    let mut lines = Vec::new();
    for m in &p.modes {
        lines.push(format!(
            "mode {:?}: rabi_rad_s = {}, detuning_rad_s = {}",
            m.id, m.rabi, m.detuning
        ));
    }
    lines.push(format!("delta_rad_s = {}", p.delta));
    lines.push(format!("gamma_exc_rad_s = {}", p.gamma_exc));
    lines.push(format!("gamma_pop_rad_s = {}", p.gamma_pop));
    lines.push(format!("gamma_coh_rad_s = {}", p.gamma_coh));
    lines.push(format!("off_res_detuning_rad_s = {}", p.off_res_detuning));
    lines.push(format!("density_per_m3 = {}", p.density));
    lines.push(format!("thermal_weights = {:?}", p.thermal_weights));
    lines.push(format!("branching = {:?}", p.branching.0));
    lines.push(format!(
        "dipole_factors = [{}, {}, {}, {}]",
        p.dipole.pi_a_trap, p.dipole.pi_b_trap, p.dipole.pi_a_off, p.dipole.pi_b_off
    ));
    lines
}

pub fn validate_grid(grid: &[f64]) -> Result<(), SpectroscopyError> {
    if grid.is_empty() {
        return Err(SpectroscopyError::Grid("grid is empty".into()));
    }
    if grid.iter().any(|d| !d.is_finite()) {
        return Err(SpectroscopyError::Grid("grid has non-finite values".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SpectroscopyError::Grid("grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Transmission at each δ of the grid; points are evaluated in parallel and
/// assembled in grid order.
pub fn scan_spectrum(
    params: &ModelParams,
    geom: &CellGeometry,
    scale: &AbsorptionScale,
    delta_grid: &[f64],
    feedback: Feedback,
) -> Result<Spectrum, SpectroscopyError> {
    validate_grid(delta_grid)?;
    geom.validate()?;
    let points = delta_grid
        .par_iter()
        .map(|&delta| {
            let p = params.with_delta(delta);
            let cell = propagate_cell(&p, geom, scale, feedback)?;
            Ok(SpectrumPoint {
                delta,
                transmission: cell.transmission,
                per_mode_alpha: cell.slices[0].alpha,
            })
        })
        .collect::<Result<Vec<_>, SpectroscopyError>>()?;
    Ok(Spectrum { points, params: params.clone(), kappa: scale.kappa })
}

/// Weak σ⁺ fields, π modes off and δ far from the CPT resonance.
///
/// The fields sit ten times above the inert threshold, where optical pumping
/// (`Ω²/Γ'`) is negligible next to ground relaxation.
pub fn small_signal_params(base: &ModelParams) -> ModelParams {
    let mut p = base.clone();
    let weak = 10.0 * INERT_RABI_FRACTION * base.gamma_exc;
    p.set_rabi(ModeId::SigmaA, weak);
    p.set_rabi(ModeId::SigmaB, weak);
    p.set_rabi(ModeId::PiA, 0.0);
    p.set_rabi(ModeId::PiB, 0.0);
    p.delta = TAU * 1e6;
    p
}

/// Find κ such that the cell transmits `target` of the light for `params`
/// (normally [`small_signal_params`]).
pub fn calibrate_absorption_scale(
    params: &ModelParams,
    geom: &CellGeometry,
    target: f64,
) -> Result<AbsorptionScale, SpectroscopyError> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(SpectroscopyError::Unreachable(target));
    }
    let finish = |kappa| AbsorptionScale {
        kappa,
        target_transparency: Some(target),
        density: params.density,
    };
    if target == 1.0 {
        return Ok(finish(0.0));
    }
    let transmission = |kappa: f64| {
        propagate_cell(params, geom, &AbsorptionScale::new(kappa), Feedback::On)
            .map(|c| c.transmission)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while transmission(hi)? > target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(SpectroscopyError::Unreachable(target));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let t = transmission(mid)?;
        if t > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-13 * hi {
            break;
        }
    }
    Ok(finish(0.5 * (lo + hi)))
}

/// Two-photon detuning for sidebands at ±`f_mod_hz` around the carrier.
pub fn delta_from_modulation(f_mod_hz: f64) -> f64 {
    2.0 * TAU * f_mod_hz - TAU * constants::GROUND_HFS_HZ
}

pub fn modulation_from_delta(delta: f64) -> f64 {
    (delta + TAU * constants::GROUND_HFS_HZ) / (2.0 * TAU)
}
