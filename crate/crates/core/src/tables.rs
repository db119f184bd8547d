//! Tabulated channel field for fast trajectory integration.
//!
//! The outer strings are smooth over the cell and go into bicubic Hermite
//! tables. Each cell-vertex string is singular at its own axis and is kept as
//! a separate radial cubic Hermite table, so any one of them can be dropped
//! from the continuum sum.

use rayon::prelude::*;

use crate::crystal::ChannelGeometry;
use crate::error::{Error, Result};
use crate::medium::{ChannelMedium, CollisionModel, TransverseForce};
use crate::potentials::{PotentialField, RadialProfile};
use crate::vec2::{self, Mat2, Vec2};

/// Bicubic Hermite interpolation of node data `[f, f_x, f_y, f_xy]` on a
/// regular grid, stored as per-cell power-basis coefficients.
#[derive(Debug, Clone)]
pub struct BicubicTable {
    origin: Vec2,
    h: f64,
    /// Cells per direction.
    cx: usize,
    cy: usize,
    /// `coef[cell][4 * i + j]` multiplies `u^i v^j`.
    coef: Vec<[f64; 16]>,
}

#[inline]
fn hermite(t: f64) -> ([f64; 4], [f64; 4]) {
    let t2 = t * t;
    let t3 = t2 * t;
    (
        [2.0 * t3 - 3.0 * t2 + 1.0, t3 - 2.0 * t2 + t, -2.0 * t3 + 3.0 * t2, t3 - t2],
        [6.0 * t2 - 6.0 * t, 3.0 * t2 - 4.0 * t + 1.0, -6.0 * t2 + 6.0 * t, 3.0 * t2 - 2.0 * t],
    )
}

/// Power-basis coefficients of the cubic Hermite basis functions
/// `h00, h10, h01, h11`; row `b` holds the coefficients of `t^0..t^3`.
const HERMITE_POWER: [[f64; 4]; 4] = [
    [1.0, 0.0, -3.0, 2.0],
    [0.0, 1.0, -2.0, 1.0],
    [0.0, 0.0, 3.0, -2.0],
    [0.0, 0.0, -1.0, 1.0],
];

impl BicubicTable {
    /// Tabulates `f` over `[lo, hi]` with spacing `h`; `f` returns value,
    /// gradient and Hessian.
    pub fn build<F>(lo: Vec2, hi: Vec2, h: f64, f: F) -> Result<Self>
    where
        F: Fn(Vec2) -> (f64, Vec2, Mat2) + Sync,
    {
        if !(h > 0.0) || !(hi[0] > lo[0] && hi[1] > lo[1]) {
            return Err(Error::Input("table extent and spacing must be positive".into()));
        }
        let nx = ((hi[0] - lo[0]) / h - 1e-9).ceil() as usize + 1;
        let ny = ((hi[1] - lo[1]) / h - 1e-9).ceil() as usize + 1;
        let nodes: Vec<[f64; 4]> = (0..nx * ny)
            .into_par_iter()
            .map(|k| {
                let p = [lo[0] + (k % nx) as f64 * h, lo[1] + (k / nx) as f64 * h];
                let (v, g, hs) = f(p);
                [v, g[0] * h, g[1] * h, hs[0][1] * h * h]
            })
            .collect();
        if nodes.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite value while tabulating field".into()));
        }
        let (cx, cy) = (nx - 1, ny - 1);
        let coef = (0..cx * cy)
            .map(|c| {
                let (ix, iy) = (c % cx, c / cx);
                // Weight of basis pair (bu, bv): corner (a, b) and which slot.
                let mut w = [[0.0; 4]; 4];
                for a in 0..2 {
                    for b in 0..2 {
                        let n = &nodes[(iy + b) * nx + ix + a];
                        w[2 * a][2 * b] = n[0];
                        w[2 * a + 1][2 * b] = n[1];
                        w[2 * a][2 * b + 1] = n[2];
                        w[2 * a + 1][2 * b + 1] = n[3];
                    }
                }
                let mut out = [0.0; 16];
                for (bu, wrow) in w.iter().enumerate() {
                    for (bv, &wt) in wrow.iter().enumerate() {
                        if wt == 0.0 {
                            continue;
                        }
                        for i in 0..4 {
                            for j in 0..4 {
                                out[4 * i + j] += wt * HERMITE_POWER[bu][i] * HERMITE_POWER[bv][j];
                            }
                        }
                    }
                }
                out
            })
            .collect();
        Ok(BicubicTable { origin: lo, h, cx, cy, coef })
    }

    /// Interpolated value and gradient. Points outside the table are
    /// extrapolated from the boundary cell.
    #[inline]
    pub fn eval(&self, p: Vec2) -> (f64, Vec2) {
        let fx = (p[0] - self.origin[0]) / self.h;
        let fy = (p[1] - self.origin[1]) / self.h;
        let ix = (fx.max(0.0) as usize).min(self.cx - 1);
        let iy = (fy.max(0.0) as usize).min(self.cy - 1);
        let u = fx - ix as f64;
        let v = fy - iy as f64;
        let c = &self.coef[iy * self.cx + ix];
        // Per power of u: polynomial in v and its v-derivative.
        let mut a = [0.0; 4];
        let mut da = [0.0; 4];
        for i in 0..4 {
            let r = &c[4 * i..4 * i + 4];
            a[i] = ((r[3] * v + r[2]) * v + r[1]) * v + r[0];
            da[i] = (3.0 * r[3] * v + 2.0 * r[2]) * v + r[1];
        }
        let f = ((a[3] * u + a[2]) * u + a[1]) * u + a[0];
        let fu = (3.0 * a[3] * u + 2.0 * a[2]) * u + a[1];
        let fv = ((da[3] * u + da[2]) * u + da[1]) * u + da[0];
        (f, [fu / self.h, fv / self.h])
    }
}

/// Cubic Hermite table of a radial function on `[r_min, r_max]`, falling back
/// to the analytic profile outside that range.
#[derive(Debug, Clone)]
pub struct RadialTable {
    profile: RadialProfile,
    r_min: f64,
    h: f64,
    f: Vec<f64>,
    df: Vec<f64>,
}

impl RadialTable {
    pub fn build(profile: RadialProfile, r_min: f64, r_max: f64, h: f64) -> Self {
        let n = ((r_max - r_min) / h).ceil() as usize + 1;
        let (f, df) = (0..n)
            .map(|k| {
                let (v, d, _) = profile.derivatives(r_min + k as f64 * h);
                (v, d)
            })
            .unzip();
        RadialTable { profile, r_min, h, f, df }
    }

    /// `(f, f')` at `r`.
    #[inline]
    pub fn eval(&self, r: f64) -> (f64, f64) {
        let t = (r - self.r_min) / self.h;
        if !(t >= 0.0) || t >= (self.f.len() - 1) as f64 {
            let (v, d, _) = self.profile.derivatives(r);
            return (v, d);
        }
        let i = t as usize;
        let u = t - i as f64;
        let (hb, db) = hermite(u);
        let h = self.h;
        let v = self.f[i] * hb[0] + self.df[i] * h * hb[1] + self.f[i + 1] * hb[2] + self.df[i + 1] * h * hb[3];
        let d = (self.f[i] * db[0] + self.f[i + 1] * db[2]) / h + self.df[i] * db[1] + self.df[i + 1] * db[3];
        (v, d)
    }
}

/// Grid spacings used by [`TabulatedMedium`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableResolution {
    /// Bicubic spacing for the outer-string background, nm.
    pub grid: f64,
    /// Radial spacing for the cell-vertex strings, nm.
    pub radial: f64,
}

impl Default for TableResolution {
    fn default() -> Self {
        TableResolution { grid: 0.002, radial: 2e-5 }
    }
}

/// Table-driven field equivalent to a [`PotentialField`] inside its cell.
#[derive(Debug, Clone)]
pub struct TabulatedMedium {
    geometry: ChannelGeometry,
    collision: CollisionModel,
    background: BicubicTable,
    background_lap: BicubicTable,
    inner_pos: Vec<Vec2>,
    inner_idx: Vec<usize>,
    inner: Vec<RadialTable>,
    inner_lap: Vec<RadialTable>,
    /// Bare single-string profile times the period, for collision kicks.
    kick: RadialTable,
}

impl TabulatedMedium {
    pub fn new(field: &PotentialField, res: TableResolution) -> Result<Self> {
        let geometry = (*field.geometry).clone();
        // Symmetric node lattice with a node on the channel centre.
        let (blo, bhi) = geometry.bounding_box();
        let c = geometry.channel_center;
        let reach = (0..2)
            .map(|k| (c[k] - blo[k]).max(bhi[k] - c[k]))
            .fold(0.0, f64::max);
        let half = ((reach / res.grid).ceil() + 4.0) * res.grid;
        let lo = [c[0] - half, c[1] - half];
        let hi = [c[0] + half, c[1] + half];
        let outer: Vec<usize> = (0..geometry.strings.len())
            .filter(|i| !geometry.inner.contains(i))
            .collect();
        let sum = |laplacian: bool| {
            let geometry = &geometry;
            let outer = &outer;
            move |p: Vec2| {
                let mut f = 0.0;
                let mut g = [0.0; 2];
                let mut h = [[0.0; 2]; 2];
                for &i in outer {
                    let prof = field.string_profile(i);
                    let lap;
                    let prof = if laplacian {
                        lap = prof.laplacian_profile();
                        &lap
                    } else {
                        prof
                    };
                    let (fi, gi, hi) = prof.eval_2d(p, geometry.strings[i].position);
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
        };
        let background = BicubicTable::build(lo, hi, res.grid, sum(false))?;
        let background_lap = BicubicTable::build(lo, hi, res.grid, sum(true))?;
        let r_max = 2.0 * vec2::norm(vec2::sub(hi, lo));
        let r_min = 1e-5;
        let inner_idx = geometry.inner.clone();
        let inner_pos = inner_idx.iter().map(|&i| geometry.strings[i].position).collect();
        let inner = inner_idx
            .iter()
            .map(|&i| RadialTable::build(field.string_profile(i).clone(), r_min, r_max, res.radial))
            .collect();
        let inner_lap = inner_idx
            .iter()
            .map(|&i| {
                RadialTable::build(field.string_profile(i).laplacian_profile(), r_min, r_max, res.radial)
            })
            .collect();
        let kick = RadialTable::build(
            field.bare_profile(inner_idx[0]).scaled(geometry.strings[inner_idx[0]].period),
            r_min,
            r_max,
            res.radial,
        );
        Ok(TabulatedMedium {
            kick,
            collision: CollisionModel {
                model: field.model.clone(),
                z1: field.z1,
                z2: field.z2,
                sigma_th_pm: field.sigma_th_pm,
            },
            geometry,
            background,
            background_lap,
            inner_pos,
            inner_idx,
            inner,
            inner_lap,
        })
    }
}

impl TransverseForce for TabulatedMedium {
    #[inline]
    fn potential_gradient(&self, p: Vec2, excluded: Option<usize>) -> (f64, Vec2) {
        let (mut u, mut g) = self.background.eval(p);
        for k in 0..self.inner.len() {
            if Some(self.inner_idx[k]) == excluded {
                continue;
            }
            let d = vec2::sub(p, self.inner_pos[k]);
            let r = vec2::norm(d);
            let (f, f1) = self.inner[k].eval(r);
            u += f;
            g[0] += f1 * d[0] / r;
            g[1] += f1 * d[1] / r;
        }
        (u, g)
    }
}

impl ChannelMedium for TabulatedMedium {
    fn geometry(&self) -> &ChannelGeometry {
        &self.geometry
    }
    fn laplacian(&self, p: Vec2) -> f64 {
        let mut l = self.background_lap.eval(p).0;
        for k in 0..self.inner.len() {
            let r = vec2::norm(vec2::sub(p, self.inner_pos[k]));
            l += self.inner_lap[k].eval(r).0;
        }
        l
    }
    fn collision(&self) -> &CollisionModel {
        &self.collision
    }
    fn kick_strength(&self, r: f64) -> f64 {
        -self.kick.eval(r).1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crystal::{build_channel_strings, CrystalSpec};
    use crate::medium::ExactMedium;
    use crate::potentials::ScreeningModel;
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    fn field() -> PotentialField {
        let g = Arc::new(build_channel_strings(&CrystalSpec::silicon(), 3).unwrap());
        PotentialField::new(g, ScreeningModel::moliere(14), 1, 14, 7.4, None).unwrap()
    }

    #[test]
    fn bicubic_reproduces_cubics() {
        let f = |p: Vec2| {
            let (x, y) = (p[0], p[1]);
            (
                x * x * x - 2.0 * x * y * y + y + 1.0,
                [3.0 * x * x - 2.0 * y * y, -4.0 * x * y + 1.0],
                [[6.0 * x, -4.0 * y], [-4.0 * y, -4.0 * x]],
            )
        };
        let t = BicubicTable::build([-1.0, -1.0], [1.0, 1.0], 0.25, f).unwrap();
        for p in [[0.1, 0.3], [-0.77, 0.51], [0.99, -0.99]] {
            let (v, g) = t.eval(p);
            let (fv, fg, _) = f(p);
            assert!((v - fv).abs() < 1e-12);
            assert!((g[0] - fg[0]).abs() < 1e-12 && (g[1] - fg[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn radial_table_reproduces_cubic() {
        let prof = RadialProfile {
            k0_terms: vec![],
            power_terms: vec![(1.0, 2.0)],
        };
        let t = RadialTable::build(prof.clone(), 0.5, 2.0, 1e-3);
        for r in [0.6, 1.2345, 1.9] {
            let (v, d) = t.eval(r);
            let (fv, fd, _) = prof.derivatives(r);
            assert!(((v - fv) / fv).abs() < 1e-10);
            assert!(((d - fd) / fd).abs() < 1e-7);
        }
    }

    #[test]
    fn tables_match_exact_field() {
        let f = field();
        let tab = TabulatedMedium::new(&f, TableResolution::default()).unwrap();
        let exact = ExactMedium::new(f.clone());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut n = 0;
        while n < 2000 {
            let p = [rng.random_range(-0.14..0.14), rng.random_range(-0.14..0.14)];
            if !tab.geometry().contains(p) || tab.geometry().closest_string(p).1 < 1e-3 {
                continue;
            }
            n += 1;
            let excl = if n % 3 == 0 { Some(tab.geometry().inner[n % 4]) } else { None };
            let (u1, g1) = tab.potential_gradient(p, excl);
            let (u2, g2) = exact.potential_gradient(p, excl);
            assert!(((u1 - u2) / u2).abs() < 1e-8, "{p:?} {u1} {u2}");
            let gn = vec2::norm(g2).max(10.0);
            assert!(vec2::norm(vec2::sub(g1, g2)) / gn < 1e-6, "{p:?} {g1:?} {g2:?}");
            let r = 1e-3 + 0.2 * (n as f64 / 2000.0);
            let k1 = tab.kick_strength(r);
            let k2 = exact.kick_strength(r);
            assert!(((k1 - k2) / k2).abs() < 1e-7, "{r}: {k1} {k2}");
            let l1 = tab.laplacian(p);
            let l2 = exact.laplacian(p);
            assert!(((l1 - l2) / l2).abs() < 1e-5, "{p:?} {l1} {l2}");
        }
    }
}
