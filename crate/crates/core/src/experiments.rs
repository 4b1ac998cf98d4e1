//! Intensity-sweep campaigns: repump sweeps, no-repump curves, calibration of
//! the repump coupling and the full-overlap prediction.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lineshape::{fit_voigt, FitResult};
use crate::model::{ModeId, ModelParams};
use crate::spectroscopy::{scan_spectrum, AbsorptionScale, CellGeometry, Feedback, SpectroscopyError};

/// Measured CPT-beam intensities, µW/cm².
pub const CPT_INTENSITIES: [f64; 5] = [1440.0, 4320.0, 5760.0, 8640.0, 12960.0];

/// CPT intensities scanned when searching the full-overlap optimum. With the
/// whole path repumped the optimum sits above the measured range.
pub const OPTIMUM_REGION_CPT_INTENSITIES: [f64; 5] = [4320.0, 8640.0, 12960.0, 19440.0, 25920.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("invalid intensity map: {0}")]
    Map(String),
    #[error("invalid calibration dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Spectroscopy(#[from] SpectroscopyError),
}

/// Intensities (µW/cm²) and their mapping to Rabi frequencies, `Ω = c·√I`
/// per sideband.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityMap {
    pub cpt_intensities: Vec<f64>,
    pub repump_intensities: Vec<f64>,
    /// σ⁺ constant, rad/s per √(µW/cm²).
    pub sigma_rabi_per_sqrt_intensity: f64,
    /// π constant, rad/s per √(µW/cm²).
    pub pi_rabi_per_sqrt_intensity: f64,
    /// Fraction of the CPT power in SigmaA.
    pub sigma_split: f64,
    /// Fraction of the repump power in PiA.
    pub pi_split: f64,
}

impl Default for IntensityMap {
    fn default() -> Self {
        Self {
            cpt_intensities: CPT_INTENSITIES.to_vec(),
            repump_intensities: (0..10).map(|k| 600.0 * k as f64).collect(),
            sigma_rabi_per_sqrt_intensity: 42_456.0,
            pi_rabi_per_sqrt_intensity: 8.0e4,
            sigma_split: 0.5,
            pi_split: 0.5,
        }
    }
}

impl IntensityMap {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Map(m.into()));
        if self.cpt_intensities.is_empty() || self.repump_intensities.is_empty() {
            return bad("intensity lists must be non-empty");
        }
        if self
            .cpt_intensities
            .iter()
            .chain(&self.repump_intensities)
            .any(|i| !(*i >= 0.0 && i.is_finite()))
        {
            return bad("intensities must be finite and >= 0");
        }
        if !(self.sigma_rabi_per_sqrt_intensity >= 0.0 && self.pi_rabi_per_sqrt_intensity >= 0.0) {
            return bad("Rabi constants must be >= 0");
        }
        if !((0.0..=1.0).contains(&self.sigma_split) && (0.0..=1.0).contains(&self.pi_split)) {
            return bad("sideband splits must lie in [0, 1]");
        }
        Ok(())
    }

    /// Model parameters with the four Rabi frequencies set for one grid cell.
    pub fn apply(&self, base: &ModelParams, cpt: f64, repump: f64) -> ModelParams {
        let mut p = base.clone();
        let cs = self.sigma_rabi_per_sqrt_intensity;
        let cp = self.pi_rabi_per_sqrt_intensity;
        p.set_rabi(ModeId::SigmaA, cs * (cpt * self.sigma_split).sqrt());
        p.set_rabi(ModeId::SigmaB, cs * (cpt * (1.0 - self.sigma_split)).sqrt());
        p.set_rabi(ModeId::PiA, cp * (repump * self.pi_split).sqrt());
        p.set_rabi(ModeId::PiB, cp * (repump * (1.0 - self.pi_split)).sqrt());
        p
    }

    /// Same constants, CPT axis replaced by the full-overlap search region.
    pub fn optimum_region(&self) -> Self {
        Self { cpt_intensities: OPTIMUM_REGION_CPT_INTENSITIES.to_vec(), ..self.clone() }
    }
}

/// Detuning grid policy for one spectrum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaGridSpec {
    pub points: usize,
    /// Half-span in units of the expected FWHM.
    pub span_factor: f64,
    /// Rescans allowed when the fitted width is badly matched to the span.
    pub max_rescans: usize,
}

impl Default for DeltaGridSpec {
    fn default() -> Self {
        Self { points: 201, span_factor: 10.0, max_rescans: 3 }
    }
}

impl DeltaGridSpec {
    pub fn grid(&self, half_span: f64) -> Vec<f64> {
        let n = self.points.max(2);
        (0..n)
            .map(|k| -half_span + 2.0 * half_span * k as f64 / (n - 1) as f64)
            .collect()
    }
}

/// Rough power-broadened CPT width: ground decoherence plus optical pumping.
pub fn expected_fwhm(p: &ModelParams) -> f64 {
    let sa = p.mode(ModeId::SigmaA).rabi;
    let sb = p.mode(ModeId::SigmaB).rabi;
    2.0 * (p.gamma_pop + p.gamma_coh) + (sa * sa + sb * sb) / p.gamma_exc
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepCell {
    pub cpt_intensity: f64,
    pub repump_intensity: f64,
    /// Half-span of the detuning grid the fit used, rad/s.
    pub half_span: f64,
    pub fit: Option<FitResult>,
    pub failure: Option<String>,
}

impl SweepCell {
    pub fn contrast(&self) -> Option<f64> {
        self.fit.filter(|f| f.converged).map(|f| f.contrast)
    }

    pub fn fwhm(&self) -> Option<f64> {
        self.fit.filter(|f| f.converged).map(|f| f.fwhm)
    }

    pub fn succeeded(&self) -> bool {
        self.contrast().is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    /// CPT-major order.
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub const CSV_HEADER: &'static str =
        "cpt_intensity_uW_cm2,repump_intensity_uW_cm2,contrast,fwhm_rad_s,converged";

    pub fn success_fraction(&self) -> f64 {
        if self.cells.is_empty() {
            return 1.0;
        }
        self.cells.iter().filter(|c| c.succeeded()).count() as f64 / self.cells.len() as f64
    }

    /// Cells at one CPT intensity, in repump order.
    pub fn series(&self, cpt: f64) -> Vec<&SweepCell> {
        self.cells.iter().filter(|c| c.cpt_intensity == cpt).collect()
    }

    pub fn cpt_intensities(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for c in &self.cells {
            if !out.contains(&c.cpt_intensity) {
                out.push(c.cpt_intensity);
            }
        }
        out
    }

    /// Cell with the largest converged contrast.
    pub fn best_contrast(&self) -> Option<&SweepCell> {
        self.best_by(|c| c.contrast())
    }

    /// Cell with the largest contrast per unit FWHM.
    pub fn best_contrast_per_width(&self) -> Option<&SweepCell> {
        self.best_by(|c| Some(c.contrast()? / c.fwhm()?))
    }

    fn best_by(&self, key: impl Fn(&SweepCell) -> Option<f64>) -> Option<&SweepCell> {
        self.cells
            .iter()
            .filter_map(|c| key(c).map(|k| (k, c)))
            .fold(None, |best: Option<(f64, &SweepCell)>, (k, c)| match best {
                Some((bk, _)) if bk >= k => best,
                _ => Some((k, c)),
            })
            .map(|(_, c)| c)
    }

    pub fn to_csv(&self, comments: &[String]) -> String {
        let mut out = String::new();
        for line in comments {
            let _ = writeln!(out, "# {line}");
        }
        for (i, c) in self.cells.iter().enumerate() {
            if let Some(msg) = &c.failure {
                let _ = writeln!(out, "# cell {i} failed: {msg}");
            }
        }
        out.push_str(Self::CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            let (contrast, fwhm, ok) = match c.fit {
                Some(f) => (f.contrast, f.fwhm, f.converged),
                None => (f64::NAN, f64::NAN, false),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                c.cpt_intensity, c.repump_intensity, contrast, fwhm, ok
            );
        }
        out
    }
}

/// Shared settings of a campaign.
#[derive(Clone, Debug, PartialEq)]
pub struct Campaign {
    pub base: ModelParams,
    pub geometry: CellGeometry,
    pub scale: AbsorptionScale,
    pub grid: DeltaGridSpec,
    pub feedback: Feedback,
}

impl Campaign {
    /// Scan and fit one cell, adapting the detuning span to the fitted width.
    pub fn run_cell(&self, map: &IntensityMap, cpt: f64, repump: f64) -> SweepCell {
        let params = map.apply(&self.base, cpt, repump);
        let mut half_span = self.grid.span_factor * expected_fwhm(&params);
        let mut cell = SweepCell {
            cpt_intensity: cpt,
            repump_intensity: repump,
            half_span,
            fit: None,
            failure: None,
        };
        for attempt in 0..=self.grid.max_rescans {
            cell.half_span = half_span;
            let spectrum = match scan_spectrum(
                &params,
                &self.geometry,
                &self.scale,
                &self.grid.grid(half_span),
                self.feedback,
            ) {
                Ok(s) => s,
                Err(e) => {
                    cell.fit = None;
                    cell.failure = Some(e.to_string());
                    return cell;
                }
            };
            match fit_voigt(&spectrum) {
                Ok(fit) => {
                    cell.fit = Some(fit);
                    cell.failure = (!fit.converged).then(|| "fit did not converge".into());
                    let span = 2.0 * half_span;
                    if attempt == self.grid.max_rescans || !fit.fwhm.is_finite() {
                        break;
                    }
                    if fit.fwhm > span / 3.0 {
                        half_span *= 2.0;
                    } else if fit.fwhm < span / 80.0 {
                        half_span = self.grid.span_factor * fit.fwhm;
                    } else {
                        break;
                    }
                }
                Err(e) => {
                    cell.fit = None;
                    cell.failure = Some(e.to_string());
                    if attempt == self.grid.max_rescans {
                        break;
                    }
                    half_span *= 2.0;
                }
            }
        }
        cell
    }

    /// Fit one cell on a fixed detuning span (no adaptation).
    pub fn run_cell_fixed(&self, map: &IntensityMap, cpt: f64, repump: f64, half_span: f64) -> SweepCell {
        let params = map.apply(&self.base, cpt, repump);
        let mut cell = SweepCell {
            cpt_intensity: cpt,
            repump_intensity: repump,
            half_span,
            fit: None,
            failure: None,
        };
        let grid = self.grid.grid(half_span);
        match scan_spectrum(&params, &self.geometry, &self.scale, &grid, self.feedback)
            .map_err(|e| e.to_string())
            .and_then(|s| fit_voigt(&s).map_err(|e| e.to_string()))
        {
            Ok(fit) => {
                cell.failure = (!fit.converged).then(|| "fit did not converge".into());
                cell.fit = Some(fit);
            }
            Err(e) => cell.failure = Some(e),
        }
        cell
    }
}

/// Contrast and FWHM over the (CPT × repump) grid, cells evaluated in
/// parallel and stored in CPT-major order.
pub fn run_repump_sweep(map: &IntensityMap, campaign: &Campaign) -> Result<SweepResult, ExperimentError> {
    map.validate()?;
    let pairs: Vec<(f64, f64)> = map
        .cpt_intensities
        .iter()
        .flat_map(|&c| map.repump_intensities.iter().map(move |&r| (c, r)))
        .collect();
    let cells = pairs
        .par_iter()
        .map(|&(c, r)| campaign.run_cell(map, c, r))
        .collect();
    Ok(SweepResult { cells })
}

/// The CPT-intensity curve with the repump beams off.
pub fn run_no_repump(map: &IntensityMap, campaign: &Campaign) -> Result<SweepResult, ExperimentError> {
    let map = IntensityMap { repump_intensities: vec![0.0], ..map.clone() };
    run_repump_sweep(&map, campaign)
}

/// One measured (or synthetic) contrast value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastSample {
    pub cpt_intensity: f64,
    pub repump_intensity: f64,
    pub contrast: f64,
    /// Detuning half-span used to evaluate the model at this cell.
    pub half_span: f64,
}

impl ContrastSample {
    pub fn from_sweep(sweep: &SweepResult) -> Vec<ContrastSample> {
        sweep
            .cells
            .iter()
            .filter_map(|c| {
                Some(ContrastSample {
                    cpt_intensity: c.cpt_intensity,
                    repump_intensity: c.repump_intensity,
                    contrast: c.contrast()?,
                    half_span: c.half_span,
                })
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RepumpCalibration {
    pub pi_rabi_per_sqrt_intensity: f64,
    pub off_res_detuning: f64,
    /// Sum of squared contrast errors.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the data carries no repump information.
    pub degenerate: bool,
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Golden-section minimum of `f` on `[a, b]`.
fn golden_section(mut a: f64, mut b: f64, tol: f64, f: &mut dyn FnMut(f64) -> f64) -> (f64, f64) {
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Fit the π Rabi constant and Δ_off to measured contrasts by coordinate
/// descent with golden-section line searches in log space.
///
/// `initial` is `(π constant, Δ_off)`. Each line search brackets the current
/// value within a factor `bracket` on either side.
pub fn calibrate_repump_rabi(
    measured: &[ContrastSample],
    map: &IntensityMap,
    campaign: &Campaign,
    initial: (f64, f64),
) -> Result<RepumpCalibration, ExperimentError> {
    const MAX_OUTER: usize = 100;
    const LOG_TOL: f64 = 1e-4;
    let bracket: f64 = 2.0f64.ln();

    let cpts: Vec<f64> = {
        let mut v: Vec<f64> = measured.iter().map(|s| s.cpt_intensity).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let repumps: Vec<f64> = {
        let mut v: Vec<f64> = measured.iter().map(|s| s.repump_intensity).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    if cpts.len() < 2 || repumps.len() < 4 {
        return Err(ExperimentError::Dataset(format!(
            "need >= 2 CPT and >= 4 repump intensities, got {} and {}",
            cpts.len(),
            repumps.len()
        )));
    }
    if !(initial.0 > 0.0 && initial.1 > 0.0) {
        return Err(ExperimentError::Dataset("initial guesses must be positive".into()));
    }

    let objective = |pi_const: f64, off: f64| -> f64 {
        let m = IntensityMap { pi_rabi_per_sqrt_intensity: pi_const, ..map.clone() };
        let c = Campaign {
            base: ModelParams { off_res_detuning: off, ..campaign.base.clone() },
            ..campaign.clone()
        };
        measured
            .par_iter()
            .map(|s| {
                let cell = c.run_cell_fixed(&m, s.cpt_intensity, s.repump_intensity, s.half_span);
                match cell.contrast() {
                    Some(k) => (k - s.contrast).powi(2),
                    None => f64::INFINITY,
                }
            })
            .collect::<Vec<_>>()
            .iter()
            .sum()
    };

    let first = measured[0].contrast;
    if measured.iter().all(|s| s.contrast == first) {
        return Ok(RepumpCalibration {
            pi_rabi_per_sqrt_intensity: initial.0,
            off_res_detuning: initial.1,
            residual: objective(initial.0, initial.1),
            iterations: 0,
            converged: false,
            degenerate: true,
        });
    }

    let mut x = [initial.0.ln(), initial.1.ln()];
    let mut best = objective(initial.0, initial.1);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_OUTER {
        iterations += 1;
        let before = x;
        for k in 0..2 {
            let mut line = |t: f64| {
                let mut y = x;
                y[k] = t;
                objective(y[0].exp(), y[1].exp())
            };
            let (t, f) = golden_section(x[k] - bracket, x[k] + bracket, LOG_TOL, &mut line);
            if f < best {
                best = f;
                x[k] = t;
            }
        }
        if (x[0] - before[0]).abs() < LOG_TOL && (x[1] - before[1]).abs() < LOG_TOL {
            converged = true;
            break;
        }
    }
    Ok(RepumpCalibration {
        pi_rabi_per_sqrt_intensity: x[0].exp(),
        off_res_detuning: x[1].exp(),
        residual: best,
        iterations,
        converged,
        degenerate: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FullOverlapPrediction {
    pub optimum_contrast: f64,
    pub optimum_cpt_intensity: f64,
    pub optimum_repump_intensity: f64,
    /// Operating point maximizing contrast / FWHM.
    pub best_ratio_cpt_intensity: f64,
    pub best_ratio_repump_intensity: f64,
    pub sweep: SweepResult,
}

/// Sweep the map with the repump beams overlapping the whole cell and report
/// the best contrast.
pub fn predict_full_overlap(
    map: &IntensityMap,
    campaign: &Campaign,
) -> Result<FullOverlapPrediction, ExperimentError> {
    let full = Campaign { geometry: campaign.geometry.full_overlap(), ..campaign.clone() };
    let sweep = run_repump_sweep(map, &full)?;
    let best = sweep
        .best_contrast()
        .ok_or_else(|| ExperimentError::Map("no cell produced a converged fit".into()))?;
    let ratio = sweep.best_contrast_per_width().unwrap_or(best);
    Ok(FullOverlapPrediction {
        optimum_contrast: best.contrast().unwrap_or(f64::NAN),
        optimum_cpt_intensity: best.cpt_intensity,
        optimum_repump_intensity: best.repump_intensity,
        best_ratio_cpt_intensity: ratio.cpt_intensity,
        best_ratio_repump_intensity: ratio.repump_intensity,
        sweep,
    })
}
