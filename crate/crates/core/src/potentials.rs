//! Screened point and string-continuum potentials, the summed channel field,
//! and quantities derived from it.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bessel;
use crate::constants::{density_from_au, BOHR_NM, E2, HARTREE_EV, PROTON_REST_EV, SPEED_OF_LIGHT};
use crate::crystal::ChannelGeometry;
use crate::error::{Error, Result};
use crate::vec2::{self, Mat2, Vec2};

/// Minimum distance from a string axis at which the field may be evaluated, nm.
pub const AXIS_GUARD_NM: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScreeningKind {
    Moliere,
    Zbl,
}

/// Sum-of-exponentials screening function `sum_j alpha_j exp(-beta_j r / a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningModel {
    pub kind: ScreeningKind,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// Screening radius, nm.
    pub a: f64,
}

impl ScreeningModel {
    /// Thomas-Fermi-Moliere screening with `a = a0 [9 pi^2 / (128 Z2)]^(1/3)`.
    pub fn moliere(z2: u32) -> Self {
        ScreeningModel {
            kind: ScreeningKind::Moliere,
            alphas: vec![0.35, 0.55, 0.10],
            betas: vec![0.3, 1.2, 6.0],
            a: thomas_fermi_radius(z2),
        }
    }

    /// Ziegler-Biersack-Littmark universal screening with
    /// `a_U = 0.8854 a0 / (Z1^0.23 + Z2^0.23)`.
    pub fn zbl(z1: u32, z2: u32) -> Self {
        ScreeningModel {
            kind: ScreeningKind::Zbl,
            alphas: vec![0.1818, 0.5099, 0.2802, 0.02817],
            betas: vec![3.2, 0.9423, 0.4029, 0.2016],
            a: 0.8854 * BOHR_NM / ((z1 as f64).powf(0.23) + (z2 as f64).powf(0.23)),
        }
    }

    pub fn new(kind: ScreeningKind, z1: u32, z2: u32) -> Self {
        match kind {
            ScreeningKind::Moliere => Self::moliere(z2),
            ScreeningKind::Zbl => Self::zbl(z1, z2),
        }
    }

    /// Screening function at reduced distance `x = r / a`.
    pub fn screening(&self, x: f64) -> f64 {
        self.terms().map(|(al, be)| al * (-be * x).exp()).sum()
    }

    pub fn terms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.alphas.iter().copied().zip(self.betas.iter().copied())
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.len() != self.betas.len() || self.alphas.is_empty() {
            return Err(Error::Config("screening coefficient lists must be non-empty and equal length".into()));
        }
        if !(self.a > 0.0) {
            return Err(Error::Config("screening radius must be positive".into()));
        }
        Ok(())
    }
}

/// Thomas-Fermi screening radius of an atom with charge `z`, nm.
pub fn thomas_fermi_radius(z: u32) -> f64 {
    BOHR_NM * (9.0 * PI * PI / (128.0 * z as f64)).cbrt()
}

/// Screened Coulomb point potential, eV. `r` in nm.
pub fn point_potential(model: &ScreeningModel, z1: u32, z2: u32, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("point potential is singular at r = {r}")));
    }
    Ok(z1 as f64 * z2 as f64 * E2 / r * model.screening(r / model.a))
}

/// Continuum potential of an infinite string with atom spacing `d`, eV.
///
/// `U(r) = (2 Z1 Z2 e^2 / d) sum_j alpha_j K0(beta_j r / a)`.
pub fn string_continuum_potential(
    model: &ScreeningModel,
    z1: u32,
    z2: u32,
    d: f64,
    r: f64,
) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("string potential is singular at r = {r}")));
    }
    Ok(RadialProfile::string(model, z1, z2, d, 0.0).value(r))
}

/// Optional power-law repulsion `B / r^n` added per string.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BornTerm {
    /// eV nm^n.
    pub b: f64,
    pub n: f64,
}

/// Radial function `sum c_j K0(k_j r) + sum b_i r^(-n_i)` with analytic derivatives.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RadialProfile {
    pub k0_terms: Vec<(f64, f64)>,
    pub power_terms: Vec<(f64, f64)>,
}

impl RadialProfile {
    /// Thermally smeared string continuum. Smearing acts on each `K0` term as
    /// a factor `1 + sigma^2 k^2 / 2`, since `Laplacian K0(k r) = k^2 K0(k r)`.
    pub fn string(model: &ScreeningModel, z1: u32, z2: u32, d: f64, sigma_th_nm: f64) -> Self {
        let pref = 2.0 * z1 as f64 * z2 as f64 * E2 / d;
        let s2 = sigma_th_nm * sigma_th_nm;
        RadialProfile {
            k0_terms: model
                .terms()
                .map(|(al, be)| {
                    let k = be / model.a;
                    (pref * al * (1.0 + 0.5 * s2 * k * k), k)
                })
                .collect(),
            power_terms: Vec::new(),
        }
    }

    pub fn with_born(mut self, born: Option<BornTerm>) -> Self {
        if let Some(b) = born {
            self.power_terms.push((b.b, b.n));
        }
        self
    }

    /// Profile of the 2D Laplacian of this function.
    pub fn laplacian_profile(&self) -> Self {
        RadialProfile {
            k0_terms: self.k0_terms.iter().map(|&(c, k)| (c * k * k, k)).collect(),
            power_terms: self.power_terms.iter().map(|&(b, n)| (b * n * n, n + 2.0)).collect(),
        }
    }

    /// Scale every coefficient.
    pub fn scaled(&self, s: f64) -> Self {
        RadialProfile {
            k0_terms: self.k0_terms.iter().map(|&(c, k)| (c * s, k)).collect(),
            power_terms: self.power_terms.iter().map(|&(b, n)| (b * s, n)).collect(),
        }
    }

    pub fn value(&self, r: f64) -> f64 {
        let mut v = 0.0;
        for &(c, k) in &self.k0_terms {
            v += c * bessel::k0(k * r);
        }
        for &(b, n) in &self.power_terms {
            v += b * r.powf(-n);
        }
        v
    }

    /// `(f, f', f'')` at `r`.
    pub fn derivatives(&self, r: f64) -> (f64, f64, f64) {
        let (mut f, mut f1, mut f2) = (0.0, 0.0, 0.0);
        for &(c, k) in &self.k0_terms {
            let x = k * r;
            let (k0, k1) = bessel::k0_k1(x);
            f += c * k0;
            f1 -= c * k * k1;
            f2 += c * k * k * (k0 + k1 / x);
        }
        for &(b, n) in &self.power_terms {
            let p = b * r.powf(-n);
            f += p;
            f1 -= n * p / r;
            f2 += n * (n + 1.0) * p / (r * r);
        }
        (f, f1, f2)
    }

    /// Value, gradient and Hessian of `f(|p - center|)` in the plane.
    pub fn eval_2d(&self, p: Vec2, center: Vec2) -> (f64, Vec2, Mat2) {
        let d = vec2::sub(p, center);
        let r = vec2::norm(d);
        let (f, f1, f2) = self.derivatives(r);
        let u = [d[0] / r, d[1] / r];
        let g = [f1 * u[0], f1 * u[1]];
        let t = f1 / r;
        let h = [
            [f2 * u[0] * u[0] + t * (1.0 - u[0] * u[0]), (f2 - t) * u[0] * u[1]],
            [(f2 - t) * u[0] * u[1], f2 * u[1] * u[1] + t * (1.0 - u[1] * u[1])],
        ];
        (f, g, h)
    }
}

/// Any smooth potential over the transverse plane, eV with nm lengths.
pub trait TransverseField: Send + Sync {
    fn potential(&self, p: Vec2) -> f64;
    fn gradient(&self, p: Vec2) -> Vec2;
    fn hessian(&self, p: Vec2) -> Mat2;
    fn laplacian(&self, p: Vec2) -> f64 {
        let h = self.hessian(p);
        h[0][0] + h[1][1]
    }
}

/// Isotropic harmonic well `k |p - center|^2 / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicField {
    /// Curvature, eV/nm^2.
    pub k: f64,
    pub center: Vec2,
}

impl TransverseField for HarmonicField {
    fn potential(&self, p: Vec2) -> f64 {
        let d = vec2::sub(p, self.center);
        0.5 * self.k * vec2::dot(d, d)
    }
    fn gradient(&self, p: Vec2) -> Vec2 {
        vec2::scale(vec2::sub(p, self.center), self.k)
    }
    fn hessian(&self, _p: Vec2) -> Mat2 {
        [[self.k, 0.0], [0.0, self.k]]
    }
}

/// Thermally smeared continuum potential of all strings of a channel.
#[derive(Debug, Clone)]
pub struct PotentialField {
    pub geometry: Arc<ChannelGeometry>,
    pub model: ScreeningModel,
    pub z1: u32,
    pub z2: u32,
    pub sigma_th_pm: f64,
    pub born: Option<BornTerm>,
    smeared: Vec<RadialProfile>,
    bare: Vec<RadialProfile>,
}

impl PotentialField {
    pub fn new(
        geometry: Arc<ChannelGeometry>,
        model: ScreeningModel,
        z1: u32,
        z2: u32,
        sigma_th_pm: f64,
        born: Option<BornTerm>,
    ) -> Result<Self> {
        model.validate()?;
        if let Some(b) = born {
            if !(b.n > 1.0) {
                return Err(Error::Config("Born exponent must exceed 1".into()));
            }
        }
        if !(sigma_th_pm >= 0.0) {
            return Err(Error::Domain("thermal amplitude must be non-negative".into()));
        }
        let sigma_nm = sigma_th_pm * 1e-3;
        let smeared = geometry
            .strings
            .iter()
            .map(|s| RadialProfile::string(&model, z1, z2, s.period, sigma_nm).with_born(born))
            .collect();
        let bare = geometry
            .strings
            .iter()
            .map(|s| RadialProfile::string(&model, z1, z2, s.period, 0.0))
            .collect();
        Ok(PotentialField {
            geometry,
            model,
            z1,
            z2,
            sigma_th_pm,
            born,
            smeared,
            bare,
        })
    }

    /// Per-string smeared profile (with the Born term when configured).
    pub fn string_profile(&self, i: usize) -> &RadialProfile {
        &self.smeared[i]
    }

    /// Per-string profile without thermal smearing or Born term.
    pub fn bare_profile(&self, i: usize) -> &RadialProfile {
        &self.bare[i]
    }

    fn check(&self, p: Vec2) -> Result<()> {
        let (i, r) = self.geometry.closest_string(p);
        if r <= AXIS_GUARD_NM || !r.is_finite() {
            return Err(Error::Domain(format!(
                "point ({:.6}, {:.6}) nm lies {r:.2e} nm from string {i}",
                p[0], p[1]
            )));
        }
        Ok(())
    }

    /// Smeared channel potential, eV.
    pub fn channel_potential(&self, x: f64, y: f64) -> Result<f64> {
        self.check([x, y])?;
        Ok(self.potential([x, y]))
    }

    /// Gradient of the smeared channel potential, eV/nm.
    pub fn channel_gradient(&self, x: f64, y: f64) -> Result<Vec2> {
        self.check([x, y])?;
        Ok(self.gradient([x, y]))
    }

    /// Hessian of the smeared channel potential, eV/nm^2.
    pub fn channel_hessian(&self, x: f64, y: f64) -> Result<Mat2> {
        self.check([x, y])?;
        Ok(self.hessian([x, y]))
    }

    /// Unsmeared string sum without the Born term, and its Laplacian.
    fn bare_sum(&self, p: Vec2) -> (f64, f64) {
        let mut u = 0.0;
        let mut lap = 0.0;
        for (s, prof) in self.geometry.strings.iter().zip(&self.bare) {
            let (v, _, h) = prof.eval_2d(p, s.position);
            u += v;
            lap += h[0][0] + h[1][1];
        }
        (u, lap)
    }

    /// Applies the second-order thermal smearing `U + (sigma^2 / 2) Laplacian U`
    /// to the bare string sum, then adds the Born term.
    pub fn thermal_smear(&self, x: f64, y: f64) -> Result<f64> {
        let p = [x, y];
        self.check(p)?;
        let (u, lap) = self.bare_sum(p);
        let s = self.sigma_th_pm * 1e-3;
        let mut total = u + 0.5 * s * s * lap;
        if let Some(b) = self.born {
            for st in &self.geometry.strings {
                total += b.b * vec2::norm(vec2::sub(p, st.position)).powf(-b.n);
            }
        }
        Ok(total)
    }

    /// Electron density `Laplacian U_th / (4 pi Z1)` in nm^-3, negative values clipped.
    pub fn electron_density(&self, x: f64, y: f64) -> Result<f64> {
        self.check([x, y])?;
        Ok(density_from_laplacian(self.laplacian([x, y]), self.z1).max(0.0))
    }

    /// Channel potential with string `excluded` removed from the sum.
    pub fn eval_excluding(&self, p: Vec2, excluded: Option<usize>) -> (f64, Vec2, Mat2) {
        let mut f = 0.0;
        let mut g = [0.0; 2];
        let mut h = [[0.0; 2]; 2];
        for (i, (s, prof)) in self.geometry.strings.iter().zip(&self.smeared).enumerate() {
            if Some(i) == excluded {
                continue;
            }
            let (fi, gi, hi) = prof.eval_2d(p, s.position);
            f += fi;
            g = vec2::add(g, gi);
            for a in 0..2 {
                for b in 0..2 {
                    h[a][b] += hi[a][b];
                }
            }
        }
        (f, g, h)
    }
}

impl TransverseField for PotentialField {
    fn potential(&self, p: Vec2) -> f64 {
        self.geometry
            .strings
            .iter()
            .zip(&self.smeared)
            .map(|(s, prof)| prof.value(vec2::norm(vec2::sub(p, s.position))))
            .sum()
    }
    fn gradient(&self, p: Vec2) -> Vec2 {
        let mut g = [0.0; 2];
        for (s, prof) in self.geometry.strings.iter().zip(&self.smeared) {
            let d = vec2::sub(p, s.position);
            let r = vec2::norm(d);
            let (_, f1, _) = prof.derivatives(r);
            g[0] += f1 * d[0] / r;
            g[1] += f1 * d[1] / r;
        }
        g
    }
    fn hessian(&self, p: Vec2) -> Mat2 {
        self.eval_excluding(p, None).2
    }
}

/// Electron density (nm^-3) from a potential Laplacian in eV/nm^2, via
/// Poisson's equation in atomic units, `n = Laplacian U / (4 pi Z1)`.
pub fn density_from_laplacian(laplacian_ev_nm2: f64, z1: u32) -> f64 {
    let lap_au = laplacian_ev_nm2 / HARTREE_EV * BOHR_NM * BOHR_NM;
    density_from_au(lap_au / (4.0 * PI * z1 as f64))
}

/// Second-order thermal smearing of an arbitrary field.
pub fn smear_field<F: TransverseField + ?Sized>(field: &F, sigma_nm: f64, p: Vec2) -> f64 {
    field.potential(p) + 0.5 * sigma_nm * sigma_nm * field.laplacian(p)
}

/// Mean transverse oscillation frequency at the channel centre, Hz:
/// `(1 / 2 pi) sqrt(lambda / m_p)` with `lambda` the mean Hessian eigenvalue.
pub fn harmonic_frequency<F: TransverseField + ?Sized>(field: &F, center: Vec2) -> Result<f64> {
    let h = field.hessian(center);
    let (lo, hi) = vec2::sym_eigenvalues(h);
    if !(lo > 0.0) {
        return Err(Error::DegenerateChannel(format!(
            "Hessian at the channel centre is not positive definite (eigenvalues {lo:e}, {hi:e})"
        )));
    }
    let mean = 0.5 * (lo + hi);
    // sqrt(eV nm^-2 / eV) * c gives s^-1 with c in nm/s.
    Ok((mean / PROTON_REST_EV).sqrt() * SPEED_OF_LIGHT * 1e9 / (2.0 * PI))
}

/// Effective potential area `ln |A0 k / (pi E phi^2)|`.
pub fn effective_area_gamma(a0: f64, k: f64, e: f64, phi: f64) -> Result<f64> {
    if phi == 0.0 {
        return Err(Error::Domain("effective area diverges at phi = 0".into()));
    }
    if !(phi > 0.0 && e > 0.0 && a0 > 0.0) || k == 0.0 {
        return Err(Error::Domain(
            "effective area needs phi, E, A0 > 0 and k != 0".into(),
        ));
    }
    Ok((a0 * k / (PI * e * phi * phi)).abs().ln())
}

/// Electron density sampled on a regular grid, nm^-3.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    pub origin: Vec2,
    pub bin: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major, `values[iy * nx + ix]`.
    pub values: Vec<f64>,
}

impl DensityMap {
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.nx + ix]
    }

    pub fn bin_center(&self, ix: usize, iy: usize) -> Vec2 {
        [
            self.origin[0] + (ix as f64 + 0.5) * self.bin,
            self.origin[1] + (iy as f64 + 0.5) * self.bin,
        ]
    }
}

/// One row of a potential map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialSample {
    pub x: f64,
    pub y: f64,
    pub u_th: f64,
    pub grad_norm: f64,
    pub density: f64,
}

/// Samples `U_th`, `|grad U|` and `n_e` at bin centres over the cell's bounding
/// box, skipping points outside the cell or on a string axis.
pub fn potential_map(field: &PotentialField, bin: f64) -> Result<Vec<PotentialSample>> {
    if !(bin > 0.0) {
        return Err(Error::Domain("bin size must be positive".into()));
    }
    let (lo, hi) = field.geometry.bounding_box();
    let nx = ((hi[0] - lo[0]) / bin).ceil() as usize;
    let ny = ((hi[1] - lo[1]) / bin).ceil() as usize;
    let mut out = Vec::new();
    for iy in 0..ny {
        for ix in 0..nx {
            let p = [lo[0] + (ix as f64 + 0.5) * bin, lo[1] + (iy as f64 + 0.5) * bin];
            if !field.geometry.contains(p) || field.geometry.closest_string(p).1 <= AXIS_GUARD_NM {
                continue;
            }
            let (u, g, h) = field.eval_excluding(p, None);
            out.push(PotentialSample {
                x: p[0],
                y: p[1],
                u_th: u,
                grad_norm: vec2::norm(g),
                density: density_from_laplacian(h[0][0] + h[1][1], field.z1).max(0.0),
            });
        }
    }
    Ok(out)
}
