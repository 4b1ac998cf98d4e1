use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cpt_core::experiments::*;
use cpt_core::lineshape::{fit_voigt, voigt, FitResult};
use cpt_core::liouvillian::{steady_state_for, validate_state, vec_index};
use cpt_core::model::{Level, NUM_LEVELS};
use cpt_core::spectroscopy::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{CampaignKind, RunConfig};
use crate::error::CliError;
use crate::svg::{Plot, Series};

pub const CODE_VERSION: &str = concat!("cpt-cli ", env!("CARGO_PKG_VERSION"));

/// Files produced by a campaign, in write order.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, String)>,
}

impl Outputs {
    fn add(&mut self, name: &str, content: String) {
        self.files.push((name.to_string(), content));
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }
}

#[derive(Serialize)]
struct ManifestFile {
    name: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    code_version: &'a str,
    campaign: &'a str,
    config_sha256: &'a str,
    kappa_per_m: f64,
    files: Vec<ManifestFile>,
    config: &'a RunConfig,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Result of a campaign run: everything written plus the fit tally.
#[derive(Debug)]
pub struct Report {
    pub outputs: Outputs,
    pub kappa: f64,
    pub failed_fits: usize,
    pub total_fits: usize,
}

impl Report {
    /// Fit failures on more than 10% of cells are an error.
    pub fn check_fits(&self) -> Result<(), CliError> {
        if self.failed_fits * 10 > self.total_fits {
            Err(CliError::FitFailures { failed: self.failed_fits, total: self.total_fits })
        } else {
            Ok(())
        }
    }
}

struct Context<'a> {
    cfg: &'a RunConfig,
    hash: String,
    campaign: Campaign,
    map: IntensityMap,
}

impl Context<'_> {
    fn header(&self) -> Vec<String> {
        vec![
            format!("config_sha256: {}", self.hash),
            format!("campaign: {}", self.cfg.campaign.name()),
            format!("code_version: {CODE_VERSION}"),
            format!("kappa_per_m: {}", self.campaign.scale.kappa),
            format!(
                "feedback: {}",
                if self.campaign.feedback == Feedback::On { "on" } else { "off" }
            ),
        ]
    }

    fn comment_block(&self, extra: &[String]) -> String {
        let mut out = String::new();
        for line in self.header().iter().chain(extra) {
            let _ = writeln!(out, "# {line}");
        }
        out
    }

    fn svg(&self, plot: Plot) -> String {
        plot.render(&format!("config_sha256: {}; {CODE_VERSION}", self.hash))
    }
}

fn build_context(cfg: &RunConfig) -> Result<Context<'_>, CliError> {
    cfg.validate()?;
    let base = cfg.model_params()?;
    let geometry = cfg.geometry();
    geometry.validate()?;
    let scale = match cfg.absorption.kappa_per_m {
        Some(kappa) => AbsorptionScale { kappa, target_transparency: None, density: base.density },
        None => calibrate_absorption_scale(
            &small_signal_params(&base),
            &geometry,
            cfg.absorption.target_transparency,
        )?,
    };
    let map = cfg.intensity_map();
    map.validate()?;
    let campaign = Campaign {
        base,
        geometry,
        scale,
        grid: cfg.grid_spec(),
        feedback: if cfg.feedback { Feedback::On } else { Feedback::Off },
    };
    Ok(Context { cfg, hash: cfg.hash(), campaign, map })
}

/// Run the configured campaign and collect its outputs (nothing is written).
pub fn run(cfg: &RunConfig) -> Result<Report, CliError> {
    let ctx = build_context(cfg)?;
    let mut out = Outputs::default();
    let (failed, total) = match cfg.campaign {
        CampaignKind::SteadyState => steady_state(&ctx, &mut out)?,
        CampaignKind::Spectrum => spectrum(&ctx, &mut out)?,
        CampaignKind::SweepRepump => sweep_repump(&ctx, &mut out)?,
        CampaignKind::SweepCpt => sweep_cpt(&ctx, &mut out)?,
        CampaignKind::Calibrate => calibrate(&ctx, &mut out)?,
        CampaignKind::PredictFullOverlap => predict(&ctx, &mut out)?,
    };
    let manifest = Manifest {
        code_version: CODE_VERSION,
        campaign: cfg.campaign.name(),
        config_sha256: &ctx.hash,
        kappa_per_m: ctx.campaign.scale.kappa,
        files: out
            .files
            .iter()
            .map(|(n, c)| ManifestFile { name: n.clone(), sha256: sha256_hex(c.as_bytes()) })
            .collect(),
        config: cfg,
    };
    let text = toml::to_string(&manifest).map_err(|e| CliError::Solver(e.to_string()))?;
    out.add("manifest.toml", text);
    Ok(Report { outputs: out, kappa: ctx.campaign.scale.kappa, failed_fits: failed, total_fits: total })
}

/// Write every output into `dir`, creating it if needed.
pub fn write_outputs(report: &Report, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let io = |path: &Path, source| CliError::Io { path: path.display().to_string(), source };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut written = Vec::new();
    for (name, content) in &report.outputs.files {
        let path = dir.join(name);
        std::fs::write(&path, content).map_err(|e| io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

fn khz(rad_s: f64) -> f64 {
    rad_s / TAU / 1e3
}

fn steady_state(ctx: &Context, out: &mut Outputs) -> Result<(usize, usize), CliError> {
    let op = &ctx.cfg.operating;
    let p = ctx
        .map
        .apply(&ctx.campaign.base, op.cpt_uW_cm2, op.repump_uW_cm2)
        .with_delta(ctx.cfg.operating_delta());
    let rho = steady_state_for(&p)?;
    let diag = validate_state(&rho);
    let alpha = absorption_coefficients(&rho, &p, &ctx.campaign.scale);

    let mut extra = params_summary(&p);
    extra.push(format!(
        "trace_error: {:e}, hermiticity_error: {:e}, min_eigenvalue: {:e}",
        diag.trace_error, diag.hermiticity_error, diag.min_eigenvalue
    ));
    extra.push(format!("alpha_sigma_a_per_m: {}, alpha_sigma_b_per_m: {}", alpha[0], alpha[1]));
    for l in Level::ALL {
        extra.push(format!("population {l}: {}", rho.population(l)));
    }
    let mut csv = ctx.comment_block(&extra);
    csv.push_str("row,col,re,im\n");
    let v = rho.to_vector();
    for j in 0..NUM_LEVELS {
        for i in 0..NUM_LEVELS {
            let z = v[vec_index(i, j)];
            let _ = writeln!(csv, "{},{},{},{}", Level::ALL[i], Level::ALL[j], z.re, z.im);
        }
    }
    out.add("steady_state.csv", csv);
    Ok((0, 0))
}

fn spectrum(ctx: &Context, out: &mut Outputs) -> Result<(usize, usize), CliError> {
    let op = &ctx.cfg.operating;
    let p = ctx.map.apply(&ctx.campaign.base, op.cpt_uW_cm2, op.repump_uW_cm2);
    let grid: Vec<f64> = match (&ctx.cfg.spectrum.delta_grid_Hz, ctx.cfg.spectrum.half_span_Hz) {
        (Some(g), _) => g.iter().map(|d| TAU * d).collect(),
        (None, Some(h)) => ctx.campaign.grid.grid(TAU * h),
        (None, None) => ctx.campaign.grid.grid(ctx.campaign.grid.span_factor * expected_fwhm(&p)),
    };
    let c = &ctx.campaign;
    let spec = scan_spectrum(&p, &c.geometry, &c.scale, &grid, c.feedback)?;
    let fit = fit_voigt(&spec);

    let mut extra = params_summary(&p);
    extra.push(format!("cpt_uW_cm2: {}, repump_uW_cm2: {}", op.cpt_uW_cm2, op.repump_uW_cm2));
    out.add("spectrum.csv", spec.to_csv(&ctx.header().into_iter().chain(extra).collect::<Vec<_>>()));

    let mut fit_csv = ctx.comment_block(&[]);
    fit_csv.push_str(FitResult::CSV_HEADER);
    fit_csv.push('\n');
    let mut series = vec![Series {
        label: "model".into(),
        points: spec.points.iter().map(|s| (khz(s.delta), s.transmission)).collect(),
    }];
    let failed = match &fit {
        Ok(f) => {
            let _ = writeln!(fit_csv, "{}", f.csv_row());
            series.push(Series {
                label: "Voigt fit".into(),
                points: grid.iter().map(|&d| (khz(d), voigt(d, &f.params))).collect(),
            });
            usize::from(!f.converged)
        }
        Err(e) => {
            let _ = writeln!(fit_csv, "# fit failed: {e}");
            1
        }
    };
    out.add("fit.csv", fit_csv);
    out.add(
        "spectrum.svg",
        ctx.svg(Plot {
            title: format!("CPT resonance at {} uW/cm2", op.cpt_uW_cm2),
            x_label: "two-photon detuning (kHz)".into(),
            y_label: "transmission".into(),
            series,
        }),
    );
    Ok((failed, 1))
}

fn sweep_plots(ctx: &Context, sweep: &SweepResult, stem: &str, title: &str, out: &mut Outputs) {
    let series = |value: &dyn Fn(&SweepCell) -> Option<f64>| -> Vec<Series> {
        sweep
            .cpt_intensities()
            .into_iter()
            .map(|c| Series {
                label: format!("{c} uW/cm2"),
                points: sweep
                    .series(c)
                    .iter()
                    .map(|x| (x.repump_intensity, value(x).unwrap_or(f64::NAN)))
                    .collect(),
            })
            .collect()
    };
    out.add(
        &format!("{stem}_contrast.svg"),
        ctx.svg(Plot {
            title: format!("{title}: contrast"),
            x_label: "repump intensity (uW/cm2)".into(),
            y_label: "contrast (%)".into(),
            series: series(&|x| x.contrast().map(|c| 100.0 * c)),
        }),
    );
    out.add(
        &format!("{stem}_fwhm.svg"),
        ctx.svg(Plot {
            title: format!("{title}: FWHM"),
            x_label: "repump intensity (uW/cm2)".into(),
            y_label: "FWHM (kHz)".into(),
            series: series(&|x| x.fwhm().map(khz)),
        }),
    );
}

fn tally(sweeps: &[&SweepResult]) -> (usize, usize) {
    sweeps.iter().fold((0, 0), |(f, t), s| {
        (f + s.cells.iter().filter(|c| !c.succeeded()).count(), t + s.cells.len())
    })
}

fn sweep_repump(ctx: &Context, out: &mut Outputs) -> Result<(usize, usize), CliError> {
    let sweep = run_repump_sweep(&ctx.map, &ctx.campaign)?;
    out.add("sweep_repump.csv", sweep.to_csv(&ctx.header()));
    sweep_plots(ctx, &sweep, "sweep_repump", "repump sweep", out);
    Ok(tally(&[&sweep]))
}

fn sweep_cpt(ctx: &Context, out: &mut Outputs) -> Result<(usize, usize), CliError> {
    let with = run_repump_sweep(&ctx.map, &ctx.campaign)?;
    let none = if ctx.map.repump_intensities.contains(&0.0) {
        SweepResult { cells: with.cells.iter().filter(|c| c.repump_intensity == 0.0).cloned().collect() }
    } else {
        run_no_repump(&ctx.map, &ctx.campaign)?
    };
    let optima = SweepResult {
        cells: with
            .cpt_intensities()
            .into_iter()
            .filter_map(|c| {
                let s = SweepResult { cells: with.series(c).into_iter().cloned().collect() };
                s.best_contrast().cloned()
            })
            .collect(),
    };
    out.add("sweep_cpt.csv", none.to_csv(&ctx.header()));
    out.add("sweep_cpt_optima.csv", optima.to_csv(&ctx.header()));
    let series = |value: &dyn Fn(&SweepCell) -> Option<f64>| {
        [("no repump", &none), ("repump optimum", &optima)]
            .into_iter()
            .map(|(label, s)| Series {
                label: label.into(),
                points: s.cells.iter().map(|c| (c.cpt_intensity, value(c).unwrap_or(f64::NAN))).collect(),
            })
            .collect::<Vec<_>>()
    };
    out.add(
        "sweep_cpt_contrast.svg",
        ctx.svg(Plot {
            title: "contrast vs CPT intensity".into(),
            x_label: "CPT intensity (uW/cm2)".into(),
            y_label: "contrast (%)".into(),
            series: series(&|c| c.contrast().map(|x| 100.0 * x)),
        }),
    );
    out.add(
        "sweep_cpt_fwhm.svg",
        ctx.svg(Plot {
            title: "FWHM vs CPT intensity".into(),
            x_label: "CPT intensity (uW/cm2)".into(),
            y_label: "FWHM (kHz)".into(),
            series: series(&|c| c.fwhm().map(khz)),
        }),
    );
    Ok(tally(&[&with]))
}

#[derive(Deserialize)]
#[allow(non_snake_case)]
struct DataRow {
    cpt_intensity_uW_cm2: f64,
    repump_intensity_uW_cm2: f64,
    contrast: f64,
    #[serde(default)]
    converged: Option<bool>,
}

fn load_dataset(path: &Path, ctx: &Context) -> Result<Vec<ContrastSample>, CliError> {
    let bad = |reason: String| CliError::Config { field: "calibrate.data_csv".into(), reason };
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let mut out = Vec::new();
    for row in reader.deserialize::<DataRow>() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        if row.converged == Some(false) || !row.contrast.is_finite() {
            continue;
        }
        // the expected width depends on the σ⁺ fields only, so the span is
        // independent of the constants being fitted
        let p = ctx.map.apply(&ctx.campaign.base, row.cpt_intensity_uW_cm2, row.repump_intensity_uW_cm2);
        out.push(ContrastSample {
            cpt_intensity: row.cpt_intensity_uW_cm2,
            repump_intensity: row.repump_intensity_uW_cm2,
            contrast: row.contrast,
            half_span: ctx.campaign.grid.span_factor * expected_fwhm(&p),
        });
    }
    Ok(out)
}

fn sorted_unique(v: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = v.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn calibrate(ctx: &Context, out: &mut Outputs) -> Result<(usize, usize), CliError> {
    let cal = &ctx.cfg.calibrate;
    let mut extra = Vec::new();
    let data = match &cal.data_csv {
        Some(path) => {
            extra.push(format!("data: {}", path.display()));
            load_dataset(path, ctx)?
        }
        None => {
            extra.push(format!(
                "data: synthetic, pi constant {} rad/s/sqrt(uW/cm2), off-resonant detuning {} MHz, noise {}, seed {}",
                ctx.map.pi_rabi_per_sqrt_intensity,
                ctx.campaign.base.off_res_detuning / TAU / 1e6,
                cal.noise,
                ctx.cfg.seed
            ));
            let sweep = run_repump_sweep(&ctx.map, &ctx.campaign)?;
            let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed);
            let mut samples = ContrastSample::from_sweep(&sweep);
            if cal.noise > 0.0 {
                for s in &mut samples {
                    s.contrast += rng.gen_range(-cal.noise..=cal.noise);
                }
            }
            samples
        }
    };
    let initial = (
        cal.initial_pi_rabi_rad_s_per_sqrt_uW_cm2,
        TAU * cal.initial_off_res_detuning_MHz * 1e6,
    );
    let fit = calibrate_repump_rabi(&data, &ctx.map, &ctx.campaign, initial)?;

    let mut csv = ctx.comment_block(&extra);
    csv.push_str("pi_rabi_rad_s_per_sqrt_uW_cm2,off_res_detuning_MHz,residual,iterations,converged,degenerate\n");
    let _ = writeln!(
        csv,
        "{},{},{},{},{},{}",
        fit.pi_rabi_per_sqrt_intensity,
        fit.off_res_detuning / TAU / 1e6,
        fit.residual,
        fit.iterations,
        fit.converged,
        fit.degenerate
    );
    out.add("calibration.csv", csv);

    // model curves through the data with the fitted constants
    let map = IntensityMap {
        cpt_intensities: sorted_unique(data.iter().map(|s| s.cpt_intensity)),
        repump_intensities: sorted_unique(data.iter().map(|s| s.repump_intensity)),
        pi_rabi_per_sqrt_intensity: fit.pi_rabi_per_sqrt_intensity,
        ..ctx.map.clone()
    };
    let mut campaign = ctx.campaign.clone();
    campaign.base.off_res_detuning = fit.off_res_detuning;
    let model = run_repump_sweep(&map, &campaign)?;
    out.add("calibrate_model.csv", model.to_csv(&ctx.header()));

    let mut by_cpt: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for s in &data {
        by_cpt.entry(s.cpt_intensity.to_bits()).or_default().push((s.repump_intensity, 100.0 * s.contrast));
    }
    let mut series: Vec<Series> = map
        .cpt_intensities
        .iter()
        .map(|&c| Series {
            label: format!("model {c}"),
            points: model
                .series(c)
                .iter()
                .map(|x| (x.repump_intensity, x.contrast().map_or(f64::NAN, |k| 100.0 * k)))
                .collect(),
        })
        .collect();
    for (bits, mut pts) in by_cpt {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        series.push(Series { label: format!("data {}", f64::from_bits(bits)), points: pts });
    }
    out.add(
        "calibrate_contrast.svg",
        ctx.svg(Plot {
            title: "repump calibration".into(),
            x_label: "repump intensity (uW/cm2)".into(),
            y_label: "contrast (%)".into(),
            series,
        }),
    );
    Ok(tally(&[&model]))
}

fn predict(ctx: &Context, out: &mut Outputs) -> Result<(usize, usize), CliError> {
    let region = IntensityMap {
        cpt_intensities: ctx.cfg.intensity.optimum_region_cpt_uW_cm2.clone(),
        ..ctx.map.clone()
    };
    let pred = predict_full_overlap(&region, &ctx.campaign)?;
    let all_cpt = sorted_unique(ctx.map.cpt_intensities.iter().chain(&region.cpt_intensities).copied());
    let none = run_no_repump(&IntensityMap { cpt_intensities: all_cpt, ..ctx.map.clone() }, &ctx.campaign)?;
    let best = none.best_contrast().and_then(|c| Some((c.contrast()?, c.cpt_intensity)));

    let mut csv = ctx.comment_block(&[]);
    csv.push_str(
        "optimum_contrast,optimum_cpt_uW_cm2,optimum_repump_uW_cm2,no_repump_contrast,no_repump_cpt_uW_cm2,improvement_factor,best_ratio_cpt_uW_cm2,best_ratio_repump_uW_cm2\n",
    );
    let (nc, ncpt) = best.unwrap_or((f64::NAN, f64::NAN));
    let _ = writeln!(
        csv,
        "{},{},{},{},{},{},{},{}",
        pred.optimum_contrast,
        pred.optimum_cpt_intensity,
        pred.optimum_repump_intensity,
        nc,
        ncpt,
        pred.optimum_contrast / nc,
        pred.best_ratio_cpt_intensity,
        pred.best_ratio_repump_intensity
    );
    out.add("predict_full_overlap.csv", csv);
    out.add("full_overlap_sweep.csv", pred.sweep.to_csv(&ctx.header()));
    out.add("no_repump.csv", none.to_csv(&ctx.header()));
    sweep_plots(ctx, &pred.sweep, "full_overlap", "full overlap", out);
    Ok(tally(&[&pred.sweep, &none]))
}
