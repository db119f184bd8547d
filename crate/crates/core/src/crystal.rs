//! Crystal channel geometry and derived channeling parameters.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constants::{Kinematics, E2};
use crate::error::{Error, Result};
use crate::vec2::{self, Vec2};

/// Channel axis label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    #[serde(rename = "<100>")]
    A100,
    #[serde(rename = "<111>")]
    A111,
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let cleaned: String = s
            .chars()
            .filter(|c| !matches!(c, '<' | '>' | '⟨' | '⟩' | '[' | ']' | ' '))
            .collect();
        match cleaned.as_str() {
            "100" | "001" | "010" => Ok(Axis::A100),
            "111" => Ok(Axis::A111),
            _ => Err(Error::Config(format!("unsupported channel axis `{s}`"))),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Axis::A100 => write!(f, "<100>"),
            Axis::A111 => write!(f, "<111>"),
        }
    }
}

/// Target crystal description.
#[derive(Debug, Clone, PartialEq)]
pub struct CrystalSpec {
    pub z2: u32,
    /// Cubic lattice constant, nm.
    pub lattice_constant: f64,
    pub axis: Axis,
    /// Atom spacing along a string, nm.
    pub string_period: f64,
    /// One-dimensional thermal vibration amplitude, pm.
    pub sigma_th_pm: f64,
    pub temperature: f64,
}

impl CrystalSpec {
    /// Silicon at 4 K.
    pub fn silicon() -> Self {
        CrystalSpec {
            z2: 14,
            lattice_constant: 0.543,
            axis: Axis::A100,
            string_period: 0.543,
            sigma_th_pm: 7.4,
            temperature: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.z2 < 1 {
            return Err(Error::Domain("Z2 must be at least 1".into()));
        }
        if !(self.lattice_constant > 0.0) {
            return Err(Error::Domain("lattice constant must be positive".into()));
        }
        if !(self.string_period > 0.0) {
            return Err(Error::Domain("string period must be positive".into()));
        }
        if !(self.sigma_th_pm >= 0.0) {
            return Err(Error::Domain("thermal amplitude must be non-negative".into()));
        }
        Ok(())
    }

    /// Thermal amplitude in nm.
    pub fn sigma_th_nm(&self) -> f64 {
        self.sigma_th_pm * 1e-3
    }
}

/// One atomic string parallel to the channel axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomicString {
    /// Transverse position, nm.
    pub position: Vec2,
    /// Atom spacing along z, nm.
    pub period: f64,
    /// Depth of the first atom, in `[0, period)`, nm.
    pub z_offset: f64,
    /// Coordination shell (1 = innermost).
    pub shell: u32,
}

impl AtomicString {
    /// Depths of this string's atoms in the half-open interval `(z_from, z_to]`.
    pub fn atoms_between(&self, z_from: f64, z_to: f64) -> impl Iterator<Item = f64> + '_ {
        let first = ((z_from - self.z_offset) / self.period).floor() as i64 + 1;
        (first..)
            .map(move |k| self.z_offset + k as f64 * self.period)
            .take_while(move |&z| z <= z_to)
            .filter(move |&z| z > z_from)
    }
}

/// The set of strings bounding and surrounding one axial channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGeometry {
    pub strings: Vec<AtomicString>,
    pub channel_center: Vec2,
    /// Transverse area of the channel cell, nm^2.
    pub cell_area: f64,
    /// Convex cell polygon, counter-clockwise. Its vertices are the innermost strings.
    pub cell: Vec<Vec2>,
    /// Indices into `strings` of the cell-vertex strings, in polygon order.
    pub inner: Vec<usize>,
}

impl ChannelGeometry {
    /// Builds a geometry from an explicit string list; the cell is the polygon
    /// spanned by the strings closest to the channel center.
    pub fn from_strings(mut strings: Vec<AtomicString>, channel_center: Vec2) -> Result<Self> {
        if strings.is_empty() {
            return Err(Error::Config("string list is empty".into()));
        }
        for s in &strings {
            if !(s.period > 0.0) {
                return Err(Error::Config("string period must be positive".into()));
            }
        }
        let dist = |s: &AtomicString| vec2::norm(vec2::sub(s.position, channel_center));
        let r_min = strings.iter().map(dist).fold(f64::INFINITY, f64::min);
        if !(r_min > 0.0) {
            return Err(Error::Config("a string coincides with the channel center".into()));
        }
        let angle = |s: &AtomicString| {
            let d = vec2::sub(s.position, channel_center);
            d[1].atan2(d[0]).rem_euclid(std::f64::consts::TAU)
        };
        strings.sort_by(|a, b| {
            a.shell
                .cmp(&b.shell)
                .then(dist(a).total_cmp(&dist(b)))
                .then(angle(a).total_cmp(&angle(b)))
        });
        let mut inner: Vec<usize> = (0..strings.len())
            .filter(|&i| dist(&strings[i]) <= r_min * (1.0 + 1e-9))
            .collect();
        if inner.len() < 3 {
            return Err(Error::Config(format!(
                "channel needs at least 3 innermost strings to close a cell, found {}",
                inner.len()
            )));
        }
        inner.sort_by(|&a, &b| angle(&strings[a]).total_cmp(&angle(&strings[b])));
        let cell: Vec<Vec2> = inner.iter().map(|&i| strings[i].position).collect();
        let cell_area = polygon_area(&cell);
        Ok(ChannelGeometry {
            strings,
            channel_center,
            cell_area,
            cell,
            inner,
        })
    }

    /// Whether `p` lies inside the cell polygon.
    pub fn contains(&self, p: Vec2) -> bool {
        let n = self.cell.len();
        (0..n).all(|i| {
            let a = self.cell[i];
            let b = self.cell[(i + 1) % n];
            vec2::cross(vec2::sub(b, a), vec2::sub(p, a)) >= 0.0
        })
    }

    /// Axis-aligned bounding box of the cell: `(min, max)`.
    pub fn bounding_box(&self) -> (Vec2, Vec2) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.cell {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    /// Distance from `p` to the closest string axis, and that string's index.
    pub fn closest_string(&self, p: Vec2) -> (usize, f64) {
        self.strings
            .iter()
            .enumerate()
            .map(|(i, s)| (i, vec2::norm(vec2::sub(p, s.position))))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("geometry has strings")
    }

    /// Index (into `inner`) of the closest cell-vertex string to `p`.
    pub fn nearest_inner(&self, p: Vec2) -> (usize, f64) {
        self.inner
            .iter()
            .enumerate()
            .map(|(k, &i)| (k, vec2::norm(vec2::sub(p, self.strings[i].position))))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("cell has vertices")
    }

    /// Radius of the largest disk centred on the channel centre inside the cell.
    pub fn inscribed_radius(&self) -> f64 {
        let n = self.cell.len();
        (0..n)
            .map(|i| {
                let a = self.cell[i];
                let b = self.cell[(i + 1) % n];
                let e = vec2::sub(b, a);
                vec2::cross(e, vec2::sub(self.channel_center, a)).abs() / vec2::norm(e)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

fn polygon_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    0.5 * (0..n)
        .map(|i| vec2::cross(poly[i], poly[(i + 1) % n]))
        .sum::<f64>()
        .abs()
}

/// Strings on the first `shells` square coordination lines around the channel.
///
/// The projected diamond-lattice strings of a `<100>`-type axis form a square
/// lattice of spacing `a/(2 sqrt 2)`; in cubic-axis coordinates the strings
/// sit at `(a/4)(m, n)` relative to the channel centre with `|m| + |n|` odd,
/// and shell `k` is the square `|m| + |n| = 2k - 1` (4, 12, 20, ... strings).
pub fn build_channel_strings(spec: &CrystalSpec, shells: u32) -> Result<ChannelGeometry> {
    spec.validate()?;
    if shells < 1 {
        return Err(Error::Config("at least one coordination shell is required".into()));
    }
    let quarter = spec.lattice_constant / 4.0;
    let reach = 2 * shells as i64 - 1;
    let mut strings = Vec::new();
    for shell in 1..=shells as i64 {
        let radius = 2 * shell - 1;
        for m in -reach..=reach {
            for n in -reach..=reach {
                if m.abs() + n.abs() != radius {
                    continue;
                }
                strings.push(AtomicString {
                    position: [m as f64 * quarter, n as f64 * quarter],
                    period: spec.string_period,
                    z_offset: depth_fraction(m + 1, n) * spec.string_period,
                    shell: shell as u32,
                });
            }
        }
    }
    ChannelGeometry::from_strings(strings, [0.0, 0.0])
}

/// Depth of the string at absolute projected site `(a/4)(m, n)` of the diamond
/// lattice, as a fraction of the lattice constant.
fn depth_fraction(m: i64, n: i64) -> f64 {
    debug_assert!((m + n).rem_euclid(2) == 0);
    if m.rem_euclid(2) == 0 {
        0.5 * ((m + n) / 2).rem_euclid(2) as f64
    } else {
        0.25 + 0.5 * ((m - 1 + n - 1) / 2).rem_euclid(2) as f64
    }
}

/// Incident beam description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamSpec {
    /// Kinetic energy, eV.
    pub energy: f64,
    /// Tilt as a multiple of the critical angle.
    pub tilt_fraction: f64,
    /// Gaussian divergence per axis, mrad.
    pub divergence_mrad: f64,
    /// Azimuth of the tilt direction, rad (0 = along x).
    pub tilt_azimuth: f64,
}

impl BeamSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.energy > 0.0) {
            return Err(Error::Domain("beam energy must be positive".into()));
        }
        if !(self.divergence_mrad >= 0.0) {
            return Err(Error::Domain("beam divergence must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.tilt_fraction) {
            return Err(Error::Domain("tilt fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Lindhard critical angle `[2 Z1 Z2 e^2 / (d E0)]^(1/2)`, rad.
pub fn critical_angle(e0: f64, z1: u32, z2: u32, d: f64) -> Result<f64> {
    if !(e0 > 0.0 && d > 0.0) || z1 == 0 || z2 == 0 {
        return Err(Error::Domain(format!(
            "critical angle needs positive inputs (E0 = {e0}, Z1 = {z1}, Z2 = {z2}, d = {d})"
        )));
    }
    Ok((2.0 * z1 as f64 * z2 as f64 * E2 / (d * e0)).sqrt())
}

/// Proton velocity at kinetic energy `e0` (eV), m/s.
pub fn proton_velocity(e0: f64) -> f64 {
    Kinematics::proton(e0).velocity
}

/// Reduced thickness `f_r L / v0`. `length` in nm, `v0` in m/s.
pub fn reduced_thickness(f_r: f64, length: f64, v0: f64) -> Result<f64> {
    if !(f_r > 0.0 && v0 > 0.0) || !(length >= 0.0) {
        return Err(Error::Domain(format!(
            "reduced thickness needs f_r, v0 > 0 and L >= 0 (f_r = {f_r}, L = {length}, v0 = {v0})"
        )));
    }
    Ok(f_r * length * 1e-9 / v0)
}

/// Inverse of [`reduced_thickness`]: crystal thickness in nm.
pub fn thickness_for_reduced(f_r: f64, lambda: f64, v0: f64) -> Result<f64> {
    if !(f_r > 0.0 && v0 > 0.0) || !(lambda >= 0.0) {
        return Err(Error::Domain("thickness inversion needs f_r, v0 > 0 and lambda >= 0".into()));
    }
    Ok(lambda * v0 / f_r * 1e9)
}

/// Transverse thermal displacement of one atom, pm.
pub fn thermal_displacement<R: Rng + ?Sized>(sigma_th_pm: f64, rng: &mut R) -> Vec2 {
    if sigma_th_pm == 0.0 {
        return [0.0, 0.0];
    }
    let x: f64 = rng.sample(StandardNormal);
    let y: f64 = rng.sample(StandardNormal);
    [sigma_th_pm * x, sigma_th_pm * y]
}
