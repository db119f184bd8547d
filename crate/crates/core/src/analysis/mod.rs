//! Post-processing: Jacobians and rainbow lines, peak widths, thickness and
//! tilt scans, confinement metrics.

pub mod contour;
pub mod jacobian;
pub mod scan;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::{density_to_au, AU_TIME_S, HARTREE_EV};
use crate::error::{Error, Result};

pub use contour::{extract_rainbow_lines, iso_contours, Polyline, RainbowLineSet};
pub use jacobian::{deterministic_map, jacobian_field, map_jacobian, JacobianField, Lattice, MapPoint, MapTarget};
pub use scan::{dos_projection, tilt_sweep, yield_vs_thickness, TiltScanCube, YieldScan};

/// Fraction of samples, split evenly between both ends, averaged for the baseline.
const BASELINE_FRACTION: f64 = 0.10;

/// Baseline of a profile: mean of its outer samples.
pub fn baseline(ys: &[f64]) -> f64 {
    let k = ((BASELINE_FRACTION * 0.5 * ys.len() as f64).round() as usize).clamp(1, ys.len() / 2);
    let s: f64 = ys[..k].iter().chain(&ys[ys.len() - k..]).sum();
    s / (2 * k) as f64
}

/// Full width at half of `(max - baseline)`, by linear interpolation between
/// samples. `xs` must be strictly increasing.
///
/// Fails with [`Error::NoPeak`] when the maximum does not rise above the
/// baseline or the profile never falls to half height on one side.
pub fn fwhm(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::Input("profile needs at least 3 samples with matching abscissae".into()));
    }
    if xs.windows(2).any(|w| !(w[1] > w[0])) || ys.iter().any(|y| !y.is_finite()) {
        return Err(Error::Input("profile abscissae must increase and values be finite".into()));
    }
    let base = baseline(ys);
    let (imax, &ymax) = ys
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |acc, (i, y)| if *y > *acc.1 { (i, y) } else { acc });
    if !(ymax > base) {
        return Err(Error::NoPeak);
    }
    let half = base + 0.5 * (ymax - base);
    let cross = |i: usize, j: usize| xs[i] + (half - ys[i]) / (ys[j] - ys[i]) * (xs[j] - xs[i]);
    let left = (1..=imax).rev().find(|&i| ys[i - 1] < half).map(|i| cross(i - 1, i));
    let right = (imax..ys.len() - 1).find(|&i| ys[i + 1] < half).map(|i| cross(i, i + 1));
    match (left, right) {
        (Some(l), Some(r)) => Ok(r - l),
        _ => Err(Error::NoPeak),
    }
}

/// Indices of local maxima whose prominence is at least `min_prominence`.
///
/// Prominence is the height above the higher of the two minima separating the
/// peak from higher ground on either side (or from the profile ends).
pub fn prominent_maxima(ys: &[f64], min_prominence: f64) -> Vec<usize> {
    let n = ys.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        // Treat a plateau as a single candidate at its first index.
        let mut j = i;
        while j + 1 < n && ys[j + 1] == ys[i] {
            j += 1;
        }
        let rises = i == 0 || ys[i - 1] < ys[i];
        let falls = j == n - 1 || ys[j + 1] < ys[i];
        if rises && falls && n > 1 {
            let h = ys[i];
            let mut lmin = h;
            let mut k = i;
            while k > 0 && ys[k - 1] <= h {
                k -= 1;
                lmin = lmin.min(ys[k]);
            }
            let mut rmin = h;
            let mut k = j;
            while k + 1 < n && ys[k + 1] <= h {
                k += 1;
                rmin = rmin.min(ys[k]);
            }
            let prominence = h - lmin.max(rmin);
            if prominence >= min_prominence {
                out.push(i);
            }
        }
        i = j + 1;
    }
    out
}

/// Degree of confinement and related scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfinementMetrics {
    /// `(1 + omega_e / Omega)^(1/2) s`, with the ratio taken in atomic units; nm.
    pub c: f64,
    /// `(s / a) f_r hbar omega_e`, eV Hz.
    pub energy_script_e: f64,
    /// nm.
    pub s: f64,
    /// Electron plasma frequency, rad/s.
    pub omega_e: f64,
    /// rad.
    pub omega: f64,
    /// Hz.
    pub f_r: f64,
}

/// Confinement metrics from a focal size `s` (nm), angular spread `omega`
/// (rad), electron density `n_e` (nm^-3), transverse frequency `f_r` (Hz) and
/// length scale `a` (nm).
pub fn confinement_metrics(s: f64, omega: f64, n_e: f64, f_r: f64, a: f64) -> Result<ConfinementMetrics> {
    if omega == 0.0 {
        return Err(Error::Domain("confinement degree diverges at Omega = 0".into()));
    }
    if !(s >= 0.0 && omega > 0.0 && n_e >= 0.0 && f_r >= 0.0 && a > 0.0) {
        return Err(Error::Domain(format!(
            "confinement metrics need non-negative inputs and a > 0 (s = {s}, Omega = {omega}, n_e = {n_e}, f_r = {f_r}, a = {a})"
        )));
    }
    let omega_e_au = (4.0 * PI * density_to_au(n_e)).sqrt();
    let c = (1.0 + omega_e_au / omega).sqrt() * s;
    let energy = s / a * f_r * omega_e_au * HARTREE_EV;
    Ok(ConfinementMetrics {
        c,
        energy_script_e: energy,
        s,
        omega_e: omega_e_au / AU_TIME_S,
        omega,
        f_r,
    })
}
