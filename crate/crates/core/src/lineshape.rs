//! Voigt profiles and Levenberg–Marquardt fitting of CPT resonances.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectroscopy::Spectrum;

const SQRT_PI: f64 = 1.772_453_850_905_516;
const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_4; // 2√(2 ln 2)

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LineshapeError {
    #[error("need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("spectrum is flat (amplitude estimate {0:.3e})")]
    DegenerateData(f64),
    #[error("spectrum spans {span:.4e} but needs at least 3 linewidths ({fwhm:.4e} each)")]
    InsufficientSpan { span: f64, fwhm: f64 },
    #[error("invalid Voigt parameters: {0}")]
    InvalidParams(String),
}

// Humlíček CPF12 coefficients.
const T: [f64; 6] = [0.314240376, 0.947788391, 1.59768264, 2.27950708, 3.02063703, 3.8897249];
const U: [f64; 6] = [
    1.01172805,
    -0.75197147,
    1.2557727e-2,
    1.00220082e-2,
    -2.42068135e-4,
    5.00848061e-7,
];
const S: [f64; 6] = [
    1.393237,
    0.231152406,
    -0.155351466,
    6.21836624e-3,
    9.19082986e-5,
    -6.27525958e-7,
];

/// Real part of the Faddeeva function w(x + iy) for y ≥ 0, relative error
/// below 1e-6.
///
/// Humlíček's 12-term rational approximation near the origin, its
/// small-y variant along the real axis, and the Laplace continued fraction
/// for |z| ≥ 20 where the rational form loses accuracy in the far wings.
pub fn faddeeva_re(x: f64, y: f64) -> f64 {
    debug_assert!(y >= 0.0);
    let x = x.abs();
    if y == 0.0 {
        return (-x * x).exp();
    }
    if x.hypot(y) >= 20.0 {
        return continued_fraction_re(x, y);
    }
    let y1 = y + 1.5;
    let y2 = y1 * y1;
    let mut wr = 0.0;
    if y > 1.5 || x < 1.65 {
        for i in 0..6 {
            let r = x - T[i];
            let d = 1.0 / (r * r + y2);
            let (d1, d2) = (y1 * d, r * d);
            let r = x + T[i];
            let d = 1.0 / (r * r + y2);
            let (d3, d4) = (y1 * d, r * d);
            wr += U[i] * (d1 + d3) - S[i] * (d2 - d4);
        }
    } else {
        let y3 = y + 3.0;
        wr = (-x * x).exp();
        for i in 0..6 {
            let r = x - T[i];
            let r2 = r * r;
            let d = 1.0 / (r2 + y2);
            let (d1, d2) = (y1 * d, r * d);
            wr += y * (U[i] * (r * d2 - 1.5 * d1) + S[i] * y3 * d2) / (r2 + 2.25);
            let r = x + T[i];
            let r2 = r * r;
            let d = 1.0 / (r2 + y2);
            let (d3, d4) = (y1 * d, r * d);
            wr += y * (U[i] * (r * d4 - 1.5 * d3) - S[i] * y3 * d4) / (r2 + 2.25);
        }
    }
    wr
}

fn continued_fraction_re(x: f64, y: f64) -> f64 {
    use num_complex::Complex64;
    let z = Complex64::new(x, y);
    let mut t = z;
    for k in (1..=8).rev() {
        t = z - (k as f64 / 2.0) / t;
    }
    (Complex64::i() / (SQRT_PI * t)).re
}

/// Peak-normalized Voigt profile parameters (widths in the units of x).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoigtParams {
    pub center: f64,
    /// Gaussian standard deviation.
    pub sigma: f64,
    /// Lorentzian half width at half maximum.
    pub gamma: f64,
    pub amplitude: f64,
    pub background: f64,
}

impl VoigtParams {
    pub fn validate(&self) -> Result<(), LineshapeError> {
        let fields = [self.center, self.sigma, self.gamma, self.amplitude, self.background];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(LineshapeError::InvalidParams("non-finite field".into()));
        }
        if self.sigma < 0.0 || self.gamma < 0.0 {
            return Err(LineshapeError::InvalidParams("negative width".into()));
        }
        if self.sigma == 0.0 && self.gamma == 0.0 {
            return Err(LineshapeError::InvalidParams("both widths are zero".into()));
        }
        Ok(())
    }

    pub fn contrast(&self) -> f64 {
        self.amplitude / self.background
    }
}

/// Unit-peak Voigt shape at offset `dx` from the centre.
pub fn voigt_shape(dx: f64, sigma: f64, gamma: f64) -> f64 {
    if sigma == 0.0 {
        return gamma * gamma / (dx * dx + gamma * gamma);
    }
    let s = sigma * std::f64::consts::SQRT_2;
    let y = gamma / s;
    faddeeva_re(dx / s, y) / faddeeva_re(0.0, y)
}

pub fn voigt(x: f64, p: &VoigtParams) -> f64 {
    p.background + p.amplitude * voigt_shape(x - p.center, p.sigma, p.gamma)
}

/// Full width at half maximum by bisection on both sides of the centre.
pub fn fwhm_of(p: &VoigtParams) -> f64 {
    let (sigma, gamma) = (p.sigma, p.gamma);
    let excess = |d: f64| voigt_shape(d, sigma, gamma) - 0.5;
    let half_width = |sign: f64| {
        let mut hi = FWHM_PER_SIGMA * sigma + 2.0 * gamma;
        while excess(sign * hi) > 0.0 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if excess(sign * mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    };
    half_width(-1.0) + half_width(1.0)
}

/// Olivero–Longbothum approximation of the Voigt FWHM.
pub fn fwhm_approx(sigma: f64, gamma: f64) -> f64 {
    let f_l = 2.0 * gamma;
    let f_g = FWHM_PER_SIGMA * sigma;
    0.5346 * f_l + (0.2166 * f_l * f_l + f_g * f_g).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: VoigtParams,
    pub contrast: f64,
    pub fwhm: f64,
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub const CSV_HEADER: &'static str =
        "contrast,fwhm_rad_s,center_rad_s,sigma_rad_s,gamma_rad_s,background,residual,converged";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.contrast,
            self.fwhm,
            self.params.center,
            self.params.sigma,
            self.params.gamma,
            self.params.background,
            self.residual_norm,
            self.converged
        )
    }
}

pub const MIN_POINTS: usize = 10;
const MAX_ITERATIONS: usize = 200;
const STEP_TOL: f64 = 1e-8;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Starting point from the data: outer-point median background, peak height,
/// and the half-maximum width split evenly between the two broadenings.
pub fn initial_guess(x: &[f64], y: &[f64]) -> Result<VoigtParams, LineshapeError> {
    let n = x.len();
    if n < MIN_POINTS || y.len() != n {
        return Err(LineshapeError::InsufficientData { needed: MIN_POINTS, got: n.min(y.len()) });
    }
    let edge = ((0.05 * n as f64).round() as usize).max(1);
    let outer: Vec<f64> = y[..edge].iter().chain(&y[n - edge..]).copied().collect();
    let background = median(outer);
    let (peak, &ymax) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let amplitude = ymax - background;
    if !(amplitude >= 1e-12) {
        return Err(LineshapeError::DegenerateData(amplitude));
    }
    let half = background + 0.5 * amplitude;
    let crossing = |range: &mut dyn Iterator<Item = usize>| {
        let mut prev = peak;
        for i in range {
            if y[i] < half {
                let t = (y[prev] - half) / (y[prev] - y[i]);
                return Some((x[prev] + t * (x[i] - x[prev]) - x[peak]).abs());
            }
            prev = i;
        }
        None
    };
    let left = crossing(&mut (0..peak).rev());
    let right = crossing(&mut (peak + 1..n));
    let width = match (left, right) {
        (Some(l), Some(r)) => l + r,
        (Some(h), None) | (None, Some(h)) => 2.0 * h,
        (None, None) => f64::INFINITY,
    };
    let span = x[n - 1] - x[0];
    if !(width > 0.0) || span < 3.0 * width {
        return Err(LineshapeError::InsufficientSpan { span, fwhm: width });
    }
    Ok(VoigtParams {
        center: x[peak],
        sigma: 0.5 * width / FWHM_PER_SIGMA,
        gamma: 0.25 * width,
        amplitude,
        background,
    })
}

/// Fit a peak-normalized Voigt profile to a spectrum.
pub fn fit_voigt(spectrum: &Spectrum) -> Result<FitResult, LineshapeError> {
    fit_voigt_points(&spectrum.deltas(), &spectrum.transmissions())
}

/// Levenberg–Marquardt fit on raw points, x strictly increasing.
///
/// The problem is solved in coordinates normalized by the initial centre,
/// width and vertical scale, so results are equivariant under shifts and
/// rescalings of either axis.
pub fn fit_voigt_points(x: &[f64], y: &[f64]) -> Result<FitResult, LineshapeError> {
    let init = initial_guess(x, y)?;
    let x0 = init.center;
    let w0 = fwhm_approx(init.sigma, init.gamma);
    let y0 = init.background.abs().max(init.amplitude);
    let u: Vec<f64> = x.iter().map(|&xi| (xi - x0) / w0).collect();
    let v: Vec<f64> = y.iter().map(|&yi| yi / y0).collect();

    // θ = [centre, σ², γ, amplitude, background] in scaled units; the profile
    // is smooth in σ² at σ = 0, and both widths are kept non-negative
    let to_params = |t: &DVector<f64>| VoigtParams {
        center: t[0],
        sigma: t[1].max(0.0).sqrt(),
        gamma: t[2].max(0.0),
        amplitude: t[3],
        background: t[4],
    };
    let residuals = |t: &DVector<f64>| -> DVector<f64> {
        let p = to_params(t);
        DVector::from_iterator(u.len(), u.iter().zip(&v).map(|(&ui, &vi)| voigt(ui, &p) - vi))
    };
    let jacobian = |t: &DVector<f64>| -> DMatrix<f64> {
        let mut j = DMatrix::zeros(u.len(), 5);
        for k in 0..5 {
            let h = 1e-6 * (t[k].abs() + 1e-3);
            let mut tp = t.clone();
            tp[k] += h;
            let mut tm = t.clone();
            // one-sided at a width bound
            let back = if (k == 1 || k == 2) && t[k] - h < 0.0 { 0.0 } else { h };
            tm[k] -= back;
            let col = (residuals(&tp) - residuals(&tm)) / (h + back);
            j.set_column(k, &col);
        }
        j
    };

    let mut theta = DVector::from_vec(vec![
        0.0,
        (init.sigma / w0).powi(2),
        init.gamma / w0,
        init.amplitude / y0,
        init.background / y0,
    ]);
    let mut r = residuals(&theta);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let j = jacobian(&theta);
        let jtj = j.transpose() * &j;
        let grad = j.transpose() * &r;
        let mut accepted = false;
        while lambda < 1e12 {
            let mut a = jtj.clone();
            let mut rhs = -&grad;
            for k in 0..5 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            // a width pinned at zero and pushed outward drops out of this step
            for k in [1, 2] {
                if theta[k] == 0.0 && grad[k] > 0.0 {
                    a.row_mut(k).fill(0.0);
                    a.column_mut(k).fill(0.0);
                    a[(k, k)] = 1.0;
                    rhs[k] = 0.0;
                }
            }
            let Some(step) = a.lu().solve(&rhs) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = &theta + &step;
            trial[1] = trial[1].max(0.0);
            trial[2] = trial[2].max(0.0);
            let step = &trial - &theta;
            let r_trial = residuals(&trial);
            let c_trial = r_trial.norm_squared();
            if c_trial.is_finite() && c_trial <= cost {
                let rel = step.norm() / (theta.norm() + 1e-12);
                theta = trial;
                r = r_trial;
                cost = c_trial;
                lambda = (lambda * 0.3).max(1e-12);
                accepted = true;
                if rel < STEP_TOL {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        // no descent direction left within rounding: at the minimum
        if !accepted {
            converged = true;
        }
        if converged {
            break;
        }
    }

    let s = to_params(&theta);
    let params = VoigtParams {
        center: x0 + s.center * w0,
        sigma: s.sigma * w0,
        gamma: s.gamma * w0,
        amplitude: s.amplitude * y0,
        background: s.background * y0,
    };
    let converged = converged && params.validate().is_ok();
    let fwhm = if params.validate().is_ok() { fwhm_of(&params) } else { f64::NAN };
    Ok(FitResult {
        contrast: params.contrast(),
        fwhm,
        params,
        residual_norm: cost.sqrt() * y0,
        converged,
        iterations,
    })
}
