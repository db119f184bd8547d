//! Kramers-Henneberger dressing of an impurity atom in a circularly
//! polarized laser field.
//!
//! In the frame oscillating with a free charge the impurity potential sweeps
//! a circle of radius `alpha0`; its Fourier components over one laser cycle
//! are the dressed potentials, and the cycle average `V_0` is superposed on
//! the channel field.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::{AU_INTENSITY_W_CM2, BOHR_NM, HARTREE_EV, HBAR_EV_S, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::potentials::{point_potential, PotentialField, ScreeningModel};
use crate::quad::{integrate, QuadOptions};
use crate::vec2::{self, Vec2};

/// Laser parameters; `field_amplitude` and `alpha0` in atomic units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaserParams {
    pub wavelength_nm: f64,
    pub peak_intensity_w_cm2: f64,
    pub photon_energy_ev: f64,
    pub field_amplitude: f64,
    pub alpha0: f64,
}

impl LaserParams {
    pub fn new(peak_intensity_w_cm2: f64, photon_energy_ev: f64) -> Result<Self> {
        if !(photon_energy_ev > 0.0) {
            return Err(Error::Domain(format!("photon energy must be positive, got {photon_energy_ev}")));
        }
        let field_amplitude = field_from_intensity(peak_intensity_w_cm2)?;
        let omega = photon_energy_ev / HARTREE_EV;
        Ok(LaserParams {
            wavelength_nm: 2.0 * PI * HBAR_EV_S * SPEED_OF_LIGHT * 1e9 / photon_energy_ev,
            peak_intensity_w_cm2,
            photon_energy_ev,
            field_amplitude,
            alpha0: quiver_amplitude(field_amplitude, omega)?,
        })
    }

    /// Photon angular frequency, atomic units.
    pub fn omega(&self) -> f64 {
        self.photon_energy_ev / HARTREE_EV
    }

    pub fn alpha0_nm(&self) -> f64 {
        self.alpha0 * BOHR_NM
    }
}

/// Quiver radius `F0 / omega^2`, atomic units.
pub fn quiver_amplitude(f0: f64, omega: f64) -> Result<f64> {
    if omega == 0.0 {
        return Err(Error::Domain("quiver amplitude diverges at omega = 0".into()));
    }
    if !(f0 >= 0.0 && omega > 0.0) {
        return Err(Error::Domain(format!("quiver amplitude needs F0 >= 0 and omega > 0 (F0 = {f0}, omega = {omega})")));
    }
    Ok(f0 / (omega * omega))
}

/// Peak field (atomic units) for an intensity in W/cm^2.
pub fn field_from_intensity(intensity_w_cm2: f64) -> Result<f64> {
    if !(intensity_w_cm2 >= 0.0) || !intensity_w_cm2.is_finite() {
        return Err(Error::Domain(format!("intensity must be non-negative, got {intensity_w_cm2}")));
    }
    Ok((intensity_w_cm2 / AU_INTENSITY_W_CM2).sqrt())
}

/// A screened point charge (the impurity) in the transverse plane.
#[derive(Debug, Clone, PartialEq)]
pub struct PointScatterer {
    pub model: ScreeningModel,
    pub z1: u32,
    pub z2: u32,
    pub center: Vec2,
}

impl PointScatterer {
    /// Moliere-screened dopant of atomic number `z2` seen by a proton.
    pub fn moliere(z2: u32, center: Vec2) -> Self {
        PointScatterer {
            model: ScreeningModel::moliere(z2),
            z1: 1,
            z2,
            center,
        }
    }

    /// A phosphorus impurity.
    pub fn phosphorus(center: Vec2) -> Self {
        Self::moliere(15, center)
    }

    /// Static potential at distance `rho` (nm), eV.
    pub fn potential(&self, rho: f64) -> Result<f64> {
        point_potential(&self.model, self.z1, self.z2, rho)
    }
}

/// Fourier component `V_n` at offset `d` from the impurity, for a quiver
/// circle of radius `alpha0` (nm):
/// `V_n = (1/2pi) int_0^2pi V(|d + alpha0 (cos t, sin t)|) e^(-i n t) dt`.
pub fn kh_fourier_component_at(src: &PointScatterer, alpha0: f64, n: i32, d: Vec2) -> Result<Complex64> {
    if !(alpha0 >= 0.0) {
        return Err(Error::Domain(format!("quiver radius must be non-negative, got {alpha0}")));
    }
    let r = vec2::norm(d);
    if alpha0 == 0.0 {
        return Ok(if n == 0 {
            Complex64::new(src.potential(r)?, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        });
    }
    let theta = d[1].atan2(d[0]);
    let rho = |t: f64| vec2::norm([d[0] + alpha0 * t.cos(), d[1] + alpha0 * t.sin()]);
    let scale = src.potential((r * r + alpha0 * alpha0).sqrt())?.abs();
    let opts = QuadOptions {
        abs_tol: 1e-13 * scale,
        rel_tol: 1e-12,
        max_intervals: 4000,
    };
    let nf = n as f64;
    // The circle passes closest to the impurity at t = theta + pi; split there
    // so a near-singular integrand sits at a subinterval end.
    let ts = theta + PI;
    let part = |w: fn(f64) -> f64, sign: f64| -> Result<f64> {
        let g = |t: f64| {
            let v = src.potential(rho(t)).unwrap_or(f64::INFINITY);
            v * sign * w(nf * t)
        };
        let a = integrate(g, ts - PI, ts, opts);
        let b = integrate(g, ts, ts + PI, opts);
        match (a, b) {
            (Ok(a), Ok(b)) => Ok((a.value + b.value) / (2.0 * PI)),
            (Err(e), _) | (_, Err(e)) => Err(Error::Numerical(format!(
                "dressed component n = {n} at ({:.6}, {:.6}) nm, alpha0 = {alpha0} nm: {e}",
                d[0], d[1]
            ))),
        }
    };
    let re = part(f64::cos, 1.0)?;
    let im = if n == 0 { 0.0 } else { part(f64::sin, -1.0)? };
    Ok(Complex64::new(re, im))
}

/// [`kh_fourier_component_at`] with the offset along +x, where every
/// component is real.
pub fn kh_fourier_component(src: &PointScatterer, alpha0: f64, n: i32, r: f64) -> Result<Complex64> {
    if !(r >= 0.0) {
        return Err(Error::Domain(format!("radius must be non-negative, got {r}")));
    }
    kh_fourier_component_at(src, alpha0, n, [r, 0.0])
}

/// Dressed components tabulated on a radial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct KhPotential {
    pub source: PointScatterer,
    /// nm.
    pub alpha0: f64,
    pub n: i32,
    pub radii: Vec<f64>,
    /// eV.
    pub values: Vec<Complex64>,
}

impl KhPotential {
    pub fn tabulate(source: PointScatterer, alpha0: f64, n: i32, radii: Vec<f64>) -> Result<Self> {
        let values = radii
            .iter()
            .map(|&r| kh_fourier_component(&source, alpha0, n, r))
            .collect::<Result<Vec<_>>>()?;
        Ok(KhPotential {
            source,
            alpha0,
            n,
            radii,
            values,
        })
    }
}

/// Channel potential plus the cycle-averaged dressed impurity potential, eV.
pub fn kh_modified_channel_potential(
    field: &PotentialField,
    foreign: &PointScatterer,
    alpha0: f64,
    x: f64,
    y: f64,
) -> Result<f64> {
    if !field.geometry.contains(foreign.center) {
        return Err(Error::Domain(format!(
            "impurity at ({}, {}) nm lies outside the channel cell",
            foreign.center[0], foreign.center[1]
        )));
    }
    let u = field.channel_potential(x, y)?;
    let d = vec2::sub([x, y], foreign.center);
    Ok(u + kh_fourier_component(foreign, alpha0, 0, vec2::norm(d))?.re)
}
