//! Run configuration. Every dimensional key carries its unit as a suffix;
//! unknown keys are rejected so a unit-less or misspelled key cannot slip
//! through silently.
#![allow(non_snake_case)]

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use cpt_core::experiments::{DeltaGridSpec, IntensityMap, OPTIMUM_REGION_CPT_INTENSITIES};
use cpt_core::model::{self, BranchingTable, ModeId, ModelParams};
use cpt_core::spectroscopy::{delta_from_modulation, CellGeometry};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CampaignKind {
    SteadyState,
    Spectrum,
    SweepRepump,
    SweepCpt,
    Calibrate,
    PredictFullOverlap,
}

impl CampaignKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::SteadyState => "steady-state",
            Self::Spectrum => "spectrum",
            Self::SweepRepump => "sweep-repump",
            Self::SweepCpt => "sweep-cpt",
            Self::Calibrate => "calibrate",
            Self::PredictFullOverlap => "predict-full-overlap",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub campaign: CampaignKind,
    /// Seed for noise injection into synthetic calibration data.
    pub seed: u64,
    pub feedback: bool,
    pub model: ModelSection,
    pub geometry: GeometrySection,
    pub intensity: IntensitySection,
    pub absorption: AbsorptionSection,
    pub grid: GridSection,
    pub operating: OperatingSection,
    pub spectrum: SpectrumSection,
    pub calibrate: CalibrateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            campaign: CampaignKind::SweepRepump,
            seed: 0,
            feedback: true,
            model: ModelSection::default(),
            geometry: GeometrySection::default(),
            intensity: IntensitySection::default(),
            absorption: AbsorptionSection::default(),
            grid: GridSection::default(),
            operating: OperatingSection::default(),
            spectrum: SpectrumSection::default(),
            calibrate: CalibrateSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub gamma_pop_Hz: f64,
    pub gamma_coh_Hz: f64,
    /// Overrides the pressure-broadened value when set.
    pub gamma_exc_MHz: Option<f64>,
    pub natural_linewidth_MHz: f64,
    pub buffer_pressure_torr: f64,
    pub n2_broadening_MHz_per_torr: f64,
    pub off_res_detuning_MHz: f64,
    pub sigma_a_detuning_MHz: f64,
    pub sigma_b_detuning_MHz: f64,
    pub pi_a_detuning_MHz: f64,
    pub pi_b_detuning_MHz: f64,
    pub density_per_cm3: f64,
    /// Recorded for provenance; the effective model has no Zeeman structure.
    pub b_field_mG: f64,
    /// Branching table file; the built-in D1 table when absent.
    pub branching_file: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let p = ModelParams::default();
        Self {
            gamma_pop_Hz: p.gamma_pop / TAU,
            gamma_coh_Hz: p.gamma_coh / TAU,
            gamma_exc_MHz: None,
            natural_linewidth_MHz: model::constants::GAMMA_NATURAL / TAU / 1e6,
            buffer_pressure_torr: model::constants::BUFFER_PRESSURE_TORR,
            n2_broadening_MHz_per_torr: model::constants::N2_BROADENING_HZ_PER_TORR / 1e6,
            off_res_detuning_MHz: p.off_res_detuning / TAU / 1e6,
            sigma_a_detuning_MHz: 0.0,
            sigma_b_detuning_MHz: 0.0,
            pi_a_detuning_MHz: 0.0,
            pi_b_detuning_MHz: 0.0,
            density_per_cm3: model::constants::CELL_DENSITY * 1e-6,
            b_field_mG: 20.0,
            branching_file: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySection {
    pub length_mm: f64,
    pub repump_start_mm: f64,
    pub repump_end_mm: f64,
    pub slices: usize,
}

impl Default for GeometrySection {
    fn default() -> Self {
        let g = CellGeometry::default();
        Self {
            length_mm: g.length * 1e3,
            repump_start_mm: g.repump_start * 1e3,
            repump_end_mm: g.repump_end * 1e3,
            slices: g.slices,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntensitySection {
    pub cpt_uW_cm2: Vec<f64>,
    pub repump_uW_cm2: Vec<f64>,
    /// CPT axis scanned by predict-full-overlap.
    pub optimum_region_cpt_uW_cm2: Vec<f64>,
    pub sigma_rabi_rad_s_per_sqrt_uW_cm2: f64,
    pub pi_rabi_rad_s_per_sqrt_uW_cm2: f64,
    pub sigma_split: f64,
    pub pi_split: f64,
}

impl Default for IntensitySection {
    fn default() -> Self {
        let m = IntensityMap::default();
        Self {
            cpt_uW_cm2: m.cpt_intensities,
            repump_uW_cm2: m.repump_intensities,
            optimum_region_cpt_uW_cm2: OPTIMUM_REGION_CPT_INTENSITIES.to_vec(),
            sigma_rabi_rad_s_per_sqrt_uW_cm2: m.sigma_rabi_per_sqrt_intensity,
            pi_rabi_rad_s_per_sqrt_uW_cm2: m.pi_rabi_per_sqrt_intensity,
            sigma_split: m.sigma_split,
            pi_split: m.pi_split,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AbsorptionSection {
    /// Small-signal transmission κ is calibrated to.
    pub target_transparency: f64,
    /// Skips the calibration when set.
    pub kappa_per_m: Option<f64>,
}

impl Default for AbsorptionSection {
    fn default() -> Self {
        Self { target_transparency: 0.4, kappa_per_m: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub points: usize,
    pub span_factor: f64,
    pub max_rescans: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        let g = DeltaGridSpec::default();
        Self { points: g.points, span_factor: g.span_factor, max_rescans: g.max_rescans }
    }
}

/// Single operating point for steady-state and spectrum campaigns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OperatingSection {
    pub cpt_uW_cm2: f64,
    pub repump_uW_cm2: f64,
    pub delta_Hz: Option<f64>,
    /// RF modulation frequency; alternative to `delta_Hz`.
    pub modulation_Hz: Option<f64>,
}

impl Default for OperatingSection {
    fn default() -> Self {
        Self { cpt_uW_cm2: 5760.0, repump_uW_cm2: 0.0, delta_Hz: None, modulation_Hz: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSection {
    /// Explicit two-photon detuning grid.
    pub delta_grid_Hz: Option<Vec<f64>>,
    /// Half-span of an automatic grid; `span_factor` × expected FWHM if absent.
    pub half_span_Hz: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrateSection {
    /// SweepResult-shaped CSV of measured contrasts. Without it a synthetic
    /// dataset is generated from the configured constants.
    pub data_csv: Option<PathBuf>,
    /// Uniform noise amplitude added to synthetic contrasts.
    pub noise: f64,
    pub initial_pi_rabi_rad_s_per_sqrt_uW_cm2: f64,
    pub initial_off_res_detuning_MHz: f64,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        Self {
            data_csv: None,
            noise: 0.0,
            initial_pi_rabi_rad_s_per_sqrt_uW_cm2: 5.0e4,
            initial_off_res_detuning_MHz: 100.0,
        }
    }
}

fn bad(field: &str, reason: impl Into<String>) -> CliError {
    CliError::Config { field: field.to_string(), reason: reason.into() }
}

fn finite(field: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad(field, format!("must be finite, got {v}")))
    }
}

fn positive(field: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(bad(field, format!("must be > 0, got {v}")))
    }
}

fn nonnegative(field: &str, v: f64) -> Result<f64, CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(bad(field, format!("must be >= 0, got {v}")))
    }
}

fn intensity_list(field: &str, v: &[f64]) -> Result<(), CliError> {
    if v.is_empty() {
        return Err(bad(field, "must not be empty"));
    }
    for &x in v {
        nonnegative(field, x)?;
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| bad("config", e.message().to_string()))
    }

    /// Load and resolve relative file references against the config's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad("--config", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.model.branching_file, &mut cfg.calibrate.data_csv].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let m = &self.model;
        positive("model.gamma_pop_Hz", m.gamma_pop_Hz)?;
        nonnegative("model.gamma_coh_Hz", m.gamma_coh_Hz)?;
        if let Some(g) = m.gamma_exc_MHz {
            positive("model.gamma_exc_MHz", g)?;
        }
        positive("model.natural_linewidth_MHz", m.natural_linewidth_MHz)?;
        nonnegative("model.buffer_pressure_torr", m.buffer_pressure_torr)?;
        nonnegative("model.n2_broadening_MHz_per_torr", m.n2_broadening_MHz_per_torr)?;
        finite("model.off_res_detuning_MHz", m.off_res_detuning_MHz)?;
        finite("model.sigma_a_detuning_MHz", m.sigma_a_detuning_MHz)?;
        finite("model.sigma_b_detuning_MHz", m.sigma_b_detuning_MHz)?;
        finite("model.pi_a_detuning_MHz", m.pi_a_detuning_MHz)?;
        finite("model.pi_b_detuning_MHz", m.pi_b_detuning_MHz)?;
        positive("model.density_per_cm3", m.density_per_cm3)?;
        finite("model.b_field_mG", m.b_field_mG)?;
        if let Some(f) = &m.branching_file {
            if !f.is_file() {
                return Err(bad("model.branching_file", format!("{} does not exist", f.display())));
            }
        }

        let g = &self.geometry;
        positive("geometry.length_mm", g.length_mm)?;
        nonnegative("geometry.repump_start_mm", g.repump_start_mm)?;
        nonnegative("geometry.repump_end_mm", g.repump_end_mm)?;
        if !(g.repump_start_mm <= g.repump_end_mm && g.repump_end_mm <= g.length_mm) {
            return Err(bad("geometry.repump_end_mm", "need repump_start <= repump_end <= length"));
        }
        if g.slices < 3 {
            return Err(bad("geometry.slices", format!("must be >= 3, got {}", g.slices)));
        }

        let i = &self.intensity;
        intensity_list("intensity.cpt_uW_cm2", &i.cpt_uW_cm2)?;
        intensity_list("intensity.repump_uW_cm2", &i.repump_uW_cm2)?;
        intensity_list("intensity.optimum_region_cpt_uW_cm2", &i.optimum_region_cpt_uW_cm2)?;
        nonnegative("intensity.sigma_rabi_rad_s_per_sqrt_uW_cm2", i.sigma_rabi_rad_s_per_sqrt_uW_cm2)?;
        nonnegative("intensity.pi_rabi_rad_s_per_sqrt_uW_cm2", i.pi_rabi_rad_s_per_sqrt_uW_cm2)?;
        for (field, s) in [("intensity.sigma_split", i.sigma_split), ("intensity.pi_split", i.pi_split)] {
            if !(0.0..=1.0).contains(&s) {
                return Err(bad(field, format!("must lie in [0, 1], got {s}")));
            }
        }

        let a = &self.absorption;
        if !(a.target_transparency > 0.0 && a.target_transparency <= 1.0) {
            return Err(bad(
                "absorption.target_transparency",
                format!("must lie in (0, 1], got {}", a.target_transparency),
            ));
        }
        if let Some(k) = a.kappa_per_m {
            nonnegative("absorption.kappa_per_m", k)?;
        }

        if self.grid.points < cpt_core::lineshape::MIN_POINTS {
            return Err(bad(
                "grid.points",
                format!("need >= {} points, got {}", cpt_core::lineshape::MIN_POINTS, self.grid.points),
            ));
        }
        positive("grid.span_factor", self.grid.span_factor)?;

        let o = &self.operating;
        nonnegative("operating.cpt_uW_cm2", o.cpt_uW_cm2)?;
        nonnegative("operating.repump_uW_cm2", o.repump_uW_cm2)?;
        match (o.delta_Hz, o.modulation_Hz) {
            (Some(_), Some(_)) => {
                return Err(bad("operating.modulation_Hz", "give either delta_Hz or modulation_Hz"))
            }
            (Some(d), None) => {
                finite("operating.delta_Hz", d)?;
            }
            (None, Some(f)) => {
                positive("operating.modulation_Hz", f)?;
            }
            (None, None) => {}
        }

        if let Some(grid) = &self.spectrum.delta_grid_Hz {
            if grid.is_empty() {
                return Err(bad("spectrum.delta_grid_Hz", "must not be empty"));
            }
            if grid.iter().any(|d| !d.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
                return Err(bad("spectrum.delta_grid_Hz", "must be finite and strictly increasing"));
            }
        }
        if let Some(h) = self.spectrum.half_span_Hz {
            positive("spectrum.half_span_Hz", h)?;
        }

        let c = &self.calibrate;
        nonnegative("calibrate.noise", c.noise)?;
        positive(
            "calibrate.initial_pi_rabi_rad_s_per_sqrt_uW_cm2",
            c.initial_pi_rabi_rad_s_per_sqrt_uW_cm2,
        )?;
        positive("calibrate.initial_off_res_detuning_MHz", c.initial_off_res_detuning_MHz)?;
        if let Some(f) = &c.data_csv {
            if !f.is_file() {
                return Err(bad("calibrate.data_csv", format!("{} does not exist", f.display())));
            }
        }
        Ok(())
    }

    pub fn model_params(&self) -> Result<ModelParams, CliError> {
        let m = &self.model;
        let mut p = ModelParams {
            gamma_pop: TAU * m.gamma_pop_Hz,
            gamma_coh: TAU * m.gamma_coh_Hz,
            gamma_exc: match m.gamma_exc_MHz {
                Some(g) => TAU * g * 1e6,
                None => TAU * 1e6 * (m.natural_linewidth_MHz + m.n2_broadening_MHz_per_torr * m.buffer_pressure_torr),
            },
            off_res_detuning: TAU * m.off_res_detuning_MHz * 1e6,
            density: m.density_per_cm3 * 1e6,
            ..ModelParams::default()
        };
        for (id, det) in [
            (ModeId::SigmaA, m.sigma_a_detuning_MHz),
            (ModeId::SigmaB, m.sigma_b_detuning_MHz),
            (ModeId::PiA, m.pi_a_detuning_MHz),
            (ModeId::PiB, m.pi_b_detuning_MHz),
        ] {
            p.mode_mut(id).detuning = TAU * det * 1e6;
        }
        if let Some(f) = &m.branching_file {
            let text = std::fs::read_to_string(f)
                .map_err(|e| bad("model.branching_file", format!("{}: {e}", f.display())))?;
            p.branching = BranchingTable::parse(&text)
                .map_err(|e| bad("model.branching_file", e.to_string()))?;
        }
        p.validate().map_err(|e| bad("model", e.to_string()))?;
        Ok(p)
    }

    pub fn geometry(&self) -> CellGeometry {
        let g = &self.geometry;
        CellGeometry {
            length: g.length_mm / 1e3,
            repump_start: g.repump_start_mm / 1e3,
            repump_end: g.repump_end_mm / 1e3,
            slices: g.slices,
        }
    }

    pub fn intensity_map(&self) -> IntensityMap {
        let i = &self.intensity;
        IntensityMap {
            cpt_intensities: i.cpt_uW_cm2.clone(),
            repump_intensities: i.repump_uW_cm2.clone(),
            sigma_rabi_per_sqrt_intensity: i.sigma_rabi_rad_s_per_sqrt_uW_cm2,
            pi_rabi_per_sqrt_intensity: i.pi_rabi_rad_s_per_sqrt_uW_cm2,
            sigma_split: i.sigma_split,
            pi_split: i.pi_split,
        }
    }

    pub fn grid_spec(&self) -> DeltaGridSpec {
        DeltaGridSpec {
            points: self.grid.points,
            span_factor: self.grid.span_factor,
            max_rescans: self.grid.max_rescans,
        }
    }

    /// Operating-point δ in rad/s.
    pub fn operating_delta(&self) -> f64 {
        match (self.operating.delta_Hz, self.operating.modulation_Hz) {
            (Some(d), _) => TAU * d,
            (None, Some(f)) => delta_from_modulation(f),
            (None, None) => 0.0,
        }
    }
}
