use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cpt_cli::RunConfig;

const BIN: &str = env!("CARGO_BIN_EXE_cptsim");

fn cptsim(config: &str, out: &Path, extra: &[&str]) -> Output {
    let cfg = out.with_extension("toml");
    fs::write(&cfg, config).unwrap();
    Command::new(BIN)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Data rows of a `#`-commented CSV, header included.
fn rows(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

const SMALL_SWEEP: &str = r#"
campaign = "sweep-repump"
[geometry]
slices = 6
[grid]
points = 31
[intensity]
cpt_uW_cm2 = [1440.0, 4320.0, 5760.0, 8640.0, 12960.0]
repump_uW_cm2 = [0.0, 2400.0, 4800.0]
"#;

#[test]
fn empty_delta_grid_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = cptsim("campaign = \"spectrum\"\n[spectrum]\ndelta_grid_Hz = []\n", &out, &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("spectrum.delta_grid_Hz"));
    assert!(!out.exists());
}

#[test]
fn unit_less_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = cptsim("[intensity]\ncpt = [1440.0]\n", &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cpt"));
}

#[test]
fn missing_data_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = cptsim(
        "campaign = \"calibrate\"\n[calibrate]\ndata_csv = \"nope.csv\"\n",
        &dir.path().join("out"),
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("calibrate.data_csv"));
}

#[test]
fn spectrum_writes_converged_fit_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = "campaign = \"spectrum\"\n[operating]\ncpt_uW_cm2 = 5760.0\n";
    for out in [&a, &b] {
        let o = cptsim(cfg, out, &[]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for name in ["spectrum.csv", "fit.csv", "spectrum.svg", "manifest.toml"] {
        let x = fs::read(a.join(name)).unwrap();
        assert_eq!(x, fs::read(b.join(name)).unwrap(), "{name} differs between runs");
    }
    let fit = fs::read_to_string(a.join("fit.csv")).unwrap();
    let r = rows(&fit);
    assert_eq!(r.len(), 2);
    assert!(r[1].ends_with(",true"), "{}", r[1]);
    let spec = fs::read_to_string(a.join("spectrum.csv")).unwrap();
    assert_eq!(rows(&spec).len(), 1 + 201);
    let svg = fs::read_to_string(a.join("spectrum.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
}

#[test]
fn explicit_grid_is_used_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let grid: Vec<String> = (-20..=20).map(|k| format!("{}.0", 1250 * k)).collect();
    let cfg = format!("campaign = \"spectrum\"\n[spectrum]\ndelta_grid_Hz = [{}]\n", grid.join(", "));
    let o = cptsim(&cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let spec = fs::read_to_string(out.join("spectrum.csv")).unwrap();
    let r = rows(&spec);
    assert_eq!(r.len(), 42);
    let first: f64 = r[1].split(',').next().unwrap().parse().unwrap();
    assert!((first + std::f64::consts::TAU * 25_000.0).abs() < 1e-6);
}

#[test]
fn grid_without_wings_is_a_fit_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let grid: Vec<String> = (-20..=20).map(|k| format!("{}.0", 10 * k)).collect();
    let cfg = format!("campaign = \"spectrum\"\n[spectrum]\ndelta_grid_Hz = [{}]\n", grid.join(", "));
    let o = cptsim(&cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(out.join("fit.csv").is_file());
}

#[test]
fn sweep_writes_two_panels_and_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = cptsim(SMALL_SWEEP, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        ["manifest.toml", "sweep_repump.csv", "sweep_repump_contrast.svg", "sweep_repump_fwhm.svg"]
    );
    let csv = fs::read_to_string(out.join("sweep_repump.csv")).unwrap();
    assert_eq!(rows(&csv).len(), 1 + 5 * 3);
    let svg = fs::read_to_string(out.join("sweep_repump_contrast.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 5);
}

#[test]
fn single_cell_sweep_degenerates_to_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = "campaign = \"sweep-repump\"\n[geometry]\nslices = 6\n[grid]\npoints = 31\n\
               [intensity]\ncpt_uW_cm2 = [5760.0]\nrepump_uW_cm2 = [0.0]\n";
    let o = cptsim(cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("sweep_repump.csv")).unwrap();
    let r = rows(&csv);
    assert_eq!(r.len(), 2);
    assert!(r[1].starts_with("5760,0,"));
}

#[test]
fn sweep_cpt_reports_optima_per_intensity() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = cptsim(SMALL_SWEEP, &out, &["--campaign", "sweep-cpt"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["sweep_cpt.csv", "sweep_cpt_optima.csv"] {
        let csv = fs::read_to_string(out.join(name)).unwrap();
        assert_eq!(rows(&csv).len(), 1 + 5, "{name}");
    }
    assert!(out.join("sweep_cpt_contrast.svg").is_file());
    assert!(out.join("sweep_cpt_fwhm.svg").is_file());
}

#[test]
fn predict_writes_one_line_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = "campaign = \"predict-full-overlap\"\n[geometry]\nslices = 6\n[grid]\npoints = 31\n\
               [intensity]\ncpt_uW_cm2 = [4320.0, 8640.0]\nrepump_uW_cm2 = [0.0, 2400.0]\n\
               optimum_region_cpt_uW_cm2 = [8640.0, 12960.0]\n";
    let o = cptsim(cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("predict_full_overlap.csv")).unwrap();
    let r = rows(&csv);
    assert_eq!(r.len(), 2);
    let header: Vec<&str> = r[0].split(',').collect();
    let values: Vec<f64> = r[1].split(',').map(|v| v.parse().unwrap()).collect();
    let get = |k: &str| values[header.iter().position(|h| *h == k).unwrap()];
    assert!(get("optimum_contrast") > 0.0);
    let factor = get("optimum_contrast") / get("no_repump_contrast");
    assert!((get("improvement_factor") - factor).abs() < 1e-12);
}

#[test]
fn every_output_embeds_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = cptsim(SMALL_SWEEP, &out, &[]);
    assert!(o.status.success());
    let hash = RunConfig::from_toml(SMALL_SWEEP).unwrap().hash();
    for entry in fs::read_dir(&out).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains(&hash), "{} lacks the config hash", path.display());
    }
}

#[test]
fn job_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(cptsim(SMALL_SWEEP, &a, &["--jobs", "1"]).status.success());
    assert!(cptsim(SMALL_SWEEP, &b, &["--jobs", "3"]).status.success());
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    }
}

#[test]
fn no_feedback_flag_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = cptsim("campaign = \"spectrum\"\n", &out, &["--no-feedback"]);
    assert!(o.status.success());
    let spec = fs::read_to_string(out.join("spectrum.csv")).unwrap();
    assert!(spec.contains("# feedback: off"));
}

#[test]
fn steady_state_dumps_a_valid_density_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = cptsim("campaign = \"steady-state\"\n[operating]\nrepump_uW_cm2 = 3000.0\n", &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("steady_state.csv")).unwrap();
    let r = rows(&csv);
    assert_eq!(r.len(), 1 + 49);
    let trace: f64 = r[1..]
        .iter()
        .map(|l| l.split(',').collect::<Vec<_>>())
        .filter(|f| f[0] == f[1])
        .map(|f| f[2].parse::<f64>().unwrap())
        .sum();
    assert!((trace - 1.0).abs() < 1e-10);
}

#[test]
fn calibrate_reads_a_measured_table() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    let sweep = "campaign = \"sweep-repump\"\n[geometry]\nslices = 6\n[grid]\npoints = 31\n\
                 [intensity]\ncpt_uW_cm2 = [4320.0, 12960.0]\nrepump_uW_cm2 = [0.0, 1800.0, 3600.0, 5400.0]\n";
    assert!(cptsim(sweep, &gen, &[]).status.success());
    fs::copy(gen.join("sweep_repump.csv"), dir.path().join("data.csv")).unwrap();

    let out = dir.path().join("cal");
    let cfg = format!(
        "{}[calibrate]\ndata_csv = \"data.csv\"\ninitial_pi_rabi_rad_s_per_sqrt_uW_cm2 = 1.0e5\n",
        sweep.replace("sweep-repump", "calibrate")
    );
    let o = cptsim(&cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("calibration.csv")).unwrap();
    let r = rows(&csv);
    let fields: Vec<&str> = r[1].split(',').collect();
    let pi: f64 = fields[0].parse().unwrap();
    let off: f64 = fields[1].parse().unwrap();
    let truth = RunConfig::default();
    assert!((pi / truth.intensity.pi_rabi_rad_s_per_sqrt_uW_cm2 - 1.0).abs() < 0.02, "{}", r[1]);
    assert!((off / truth.model.off_res_detuning_MHz - 1.0).abs() < 0.02, "{}", r[1]);
    assert!(out.join("calibrate_contrast.svg").is_file());
}

fn shipped(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn shipped_configs_validate() {
    let mut n = 0;
    for entry in fs::read_dir(shipped("")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 6);
}

#[test]
fn spelled_out_config_is_the_default() {
    let cfg = RunConfig::load(&shipped("sweep_repump.toml")).unwrap();
    assert_eq!(cfg, RunConfig::default());
}
