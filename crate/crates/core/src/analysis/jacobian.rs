//! Impact-parameter maps and their Jacobian.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::medium::TransverseForce;
use crate::transport::{rk4_step, ProtonState};
use crate::vec2::Vec2;

/// Which exit coordinates the map sends the impact parameter to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapTarget {
    PositionPlane,
    AnglePlane,
}

/// One trajectory of the deterministic map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapPoint {
    pub impact: Vec2,
    /// Exit position, nm.
    pub position: Vec2,
    /// Exit angle, mrad.
    pub angle: Vec2,
}

impl MapPoint {
    pub fn image(&self, target: MapTarget) -> Vec2 {
        match target {
            MapTarget::PositionPlane => self.position,
            MapTarget::AnglePlane => self.angle,
        }
    }
}

/// Regular sampling lattice `origin + (ix hx, iy hy)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub origin: Vec2,
    pub spacing: Vec2,
    pub nx: usize,
    pub ny: usize,
}

impl Lattice {
    /// Square lattice of `n x n` nodes spanning `center +- half_width`.
    pub fn square(center: Vec2, half_width: f64, n: usize) -> Result<Self> {
        if n < 2 || !(half_width > 0.0) {
            return Err(Error::Input("lattice needs n >= 2 and positive half width".into()));
        }
        let h = 2.0 * half_width / (n - 1) as f64;
        Ok(Lattice {
            origin: [center[0] - half_width, center[1] - half_width],
            spacing: [h, h],
            nx: n,
            ny: n,
        })
    }

    pub fn node(&self, ix: usize, iy: usize) -> Vec2 {
        [
            self.origin[0] + ix as f64 * self.spacing[0],
            self.origin[1] + iy as f64 * self.spacing[1],
        ]
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Jacobian determinant of an impact-parameter map on its sampling lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianField {
    pub lattice: Lattice,
    /// Row-major, `values[iy * nx + ix]`.
    pub values: Vec<f64>,
    pub map_target: MapTarget,
}

impl JacobianField {
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.lattice.nx + ix]
    }
}

/// Integrates the continuum equations of motion (no stopping, scattering or
/// thermal jitter) from every lattice node at incidence angle `tilt` (rad).
/// Trajectories are not stopped at the cell boundary, so the map stays smooth.
pub fn deterministic_map<F: TransverseForce + ?Sized>(
    field: &F,
    energy: f64,
    tilt: Vec2,
    length: f64,
    dz: f64,
    lattice: &Lattice,
) -> Result<Vec<MapPoint>> {
    if !(length > 0.0 && dz > 0.0 && energy > 0.0) {
        return Err(Error::Input("map needs positive length, step and energy".into()));
    }
    let n_steps = (length / dz).ceil() as usize;
    let h = length / n_steps as f64;
    let points: Vec<MapPoint> = (0..lattice.len())
        .into_par_iter()
        .map(|k| {
            let impact = lattice.node(k % lattice.nx, k / lattice.nx);
            let mut s = ProtonState::new(impact, tilt, energy);
            for _ in 0..n_steps {
                s = rk4_step(&s, field, None, h);
            }
            MapPoint {
                impact,
                position: s.position,
                angle: [s.angle[0] * 1e3, s.angle[1] * 1e3],
            }
        })
        .collect();
    if let Some(p) = points
        .iter()
        .find(|p| !(p.position.iter().chain(&p.angle).all(|v| v.is_finite())))
    {
        return Err(Error::Numerical(format!(
            "deterministic map diverged for impact parameter ({:.6}, {:.6}) nm",
            p.impact[0], p.impact[1]
        )));
    }
    Ok(points)
}

/// Recovers the regular lattice behind scattered samples, returning it with
/// the images in row-major order.
fn regularize(samples: &[(Vec2, Vec2)]) -> Result<(Lattice, Vec<Vec2>)> {
    let axis = |k: usize| -> Result<(f64, f64, usize)> {
        let mut v: Vec<f64> = samples.iter().map(|s| s.0[k]).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input("non-finite sample coordinate".into()));
        }
        v.sort_by(f64::total_cmp);
        let span = v[v.len() - 1] - v[0];
        let tol = 1e-9 * span.max(1e-300);
        v.dedup_by(|a, b| (*a - *b).abs() <= tol);
        if v.len() < 2 {
            return Err(Error::Input("grid needs at least two distinct values per axis".into()));
        }
        let h = span / (v.len() - 1) as f64;
        for (i, x) in v.iter().enumerate() {
            if (x - (v[0] + i as f64 * h)).abs() > 1e-6 * h {
                return Err(Error::Input(format!("irregular grid spacing along axis {k}")));
            }
        }
        Ok((v[0], h, v.len()))
    };
    if samples.len() < 4 {
        return Err(Error::Input("grid needs at least 2 x 2 samples".into()));
    }
    let (x0, hx, nx) = axis(0)?;
    let (y0, hy, ny) = axis(1)?;
    if nx * ny != samples.len() {
        return Err(Error::Input(format!(
            "{} samples do not fill a {nx} x {ny} grid",
            samples.len()
        )));
    }
    let mut images = vec![[f64::NAN; 2]; nx * ny];
    let mut seen = vec![false; nx * ny];
    for (p, img) in samples {
        let fx = (p[0] - x0) / hx;
        let fy = (p[1] - y0) / hy;
        let (ix, iy) = (fx.round() as usize, fy.round() as usize);
        let k = iy * nx + ix;
        if seen[k] {
            return Err(Error::Input(format!("duplicate grid node ({}, {})", p[0], p[1])));
        }
        seen[k] = true;
        images[k] = *img;
    }
    let lattice = Lattice {
        origin: [x0, y0],
        spacing: [hx, hy],
        nx,
        ny,
    };
    Ok((lattice, images))
}

/// Derivative of `f` at index `i` of a uniformly spaced sequence: central in
/// the interior, second-order one-sided at the ends.
fn diff(f: impl Fn(usize) -> f64, i: usize, n: usize, h: f64) -> f64 {
    if n == 2 {
        return (f(1) - f(0)) / h;
    }
    if i == 0 {
        (-3.0 * f(0) + 4.0 * f(1) - f(2)) / (2.0 * h)
    } else if i == n - 1 {
        (3.0 * f(n - 1) - 4.0 * f(n - 2) + f(n - 3)) / (2.0 * h)
    } else {
        (f(i + 1) - f(i - 1)) / (2.0 * h)
    }
}

/// `J = dx'/dx dy'/dy - dx'/dy dy'/dx` from samples `(x, y) -> (x', y')` on a
/// regular grid (any order).
pub fn jacobian_field(samples: &[(Vec2, Vec2)], map_target: MapTarget) -> Result<JacobianField> {
    let (lat, img) = regularize(samples)?;
    let (nx, ny) = (lat.nx, lat.ny);
    let mut values = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let dx = |c: usize| diff(|i| img[iy * nx + i][c], ix, nx, lat.spacing[0]);
            let dy = |c: usize| diff(|j| img[j * nx + ix][c], iy, ny, lat.spacing[1]);
            values.push(dx(0) * dy(1) - dy(0) * dx(1));
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("map images must be finite".into()));
    }
    Ok(JacobianField {
        lattice: lat,
        values,
        map_target,
    })
}

/// Convenience wrapper pairing each map point with its chosen image.
pub fn map_jacobian(points: &[MapPoint], target: MapTarget) -> Result<JacobianField> {
    let samples: Vec<(Vec2, Vec2)> = points.iter().map(|p| (p.impact, p.image(target))).collect();
    jacobian_field(&samples, target)
}
