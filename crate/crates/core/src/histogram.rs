//! Two-dimensional flux histograms and their file formats.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec2::Vec2;

const MAGIC: &[u8; 4] = b"CHSF";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    /// Transverse positions, nm.
    Position,
    /// Transverse angles, mrad.
    Angle,
}

impl Plane {
    fn tag(self) -> u8 {
        match self {
            Plane::Position => 0,
            Plane::Angle => 1,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        match t {
            0 => Some(Plane::Position),
            1 => Some(Plane::Angle),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Plane::Position => "position",
            Plane::Angle => "angle",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Plane::Position => "nm",
            Plane::Angle => "mrad",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FluxHistogram2D {
    pub plane: Plane,
    pub origin: [u64; 2],
    pub bin_size: u64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major, `counts[iy * nx + ix]`.
    pub counts: Vec<u64>,
    pub n_sampled: u64,
}

// Grid metadata is stored as f64 bit patterns so histograms compare and hash
// exactly; accessors below return the floating values.
impl FluxHistogram2D {
    pub fn new(plane: Plane, origin: Vec2, bin_size: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(bin_size > 0.0) || nx == 0 || ny == 0 {
            return Err(Error::Input("histogram needs a positive bin size and non-empty grid".into()));
        }
        Ok(FluxHistogram2D {
            plane,
            origin: [origin[0].to_bits(), origin[1].to_bits()],
            bin_size: bin_size.to_bits(),
            nx,
            ny,
            counts: vec![0; nx * ny],
            n_sampled: 0,
        })
    }

    /// Square grid of odd size with its central bin centred on `center` and
    /// covering at least `half_width` on each side.
    pub fn centered(plane: Plane, center: Vec2, half_width: f64, bin_size: f64) -> Result<Self> {
        let half_bins = ((half_width / bin_size) - 0.5).ceil().max(0.0) as usize;
        let n = 2 * half_bins + 1;
        let off = (half_bins as f64 + 0.5) * bin_size;
        Self::new(plane, [center[0] - off, center[1] - off], bin_size, n, n)
    }

    pub fn origin(&self) -> Vec2 {
        [f64::from_bits(self.origin[0]), f64::from_bits(self.origin[1])]
    }

    pub fn bin(&self) -> f64 {
        f64::from_bits(self.bin_size)
    }

    pub fn bin_area(&self) -> f64 {
        self.bin() * self.bin()
    }

    /// An empty histogram with the same grid.
    pub fn empty_like(&self) -> Self {
        FluxHistogram2D {
            counts: vec![0; self.counts.len()],
            n_sampled: 0,
            ..self.clone()
        }
    }

    pub fn index_of(&self, p: Vec2) -> Option<(usize, usize)> {
        let o = self.origin();
        let b = self.bin();
        let fx = ((p[0] - o[0]) / b).floor();
        let fy = ((p[1] - o[1]) / b).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.nx as f64 || fy >= self.ny as f64 || !fx.is_finite() || !fy.is_finite() {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    /// Adds one count at `p`; returns false if `p` is off the grid.
    pub fn fill(&mut self, p: Vec2) -> bool {
        match self.index_of(p) {
            Some((ix, iy)) => {
                self.counts[iy * self.nx + ix] += 1;
                true
            }
            None => false,
        }
    }

    pub fn at(&self, ix: usize, iy: usize) -> u64 {
        self.counts[iy * self.nx + ix]
    }

    pub fn bin_center(&self, ix: usize, iy: usize) -> Vec2 {
        let o = self.origin();
        let b = self.bin();
        [o[0] + (ix as f64 + 0.5) * b, o[1] + (iy as f64 + 0.5) * b]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `(ix, iy, count)` of the fullest bin; ties go to the lowest index.
    pub fn max_bin(&self) -> (usize, usize, u64) {
        let (k, &c) = self
            .counts
            .iter()
            .enumerate()
            .fold((0, &0u64), |best, cur| if cur.1 > best.1 { cur } else { best });
        (k % self.nx, k / self.nx, c)
    }

    /// Counts along row `iy`.
    pub fn row(&self, iy: usize) -> Vec<u64> {
        self.counts[iy * self.nx..(iy + 1) * self.nx].to_vec()
    }

    /// Counts along column `ix`.
    pub fn column(&self, ix: usize) -> Vec<u64> {
        (0..self.ny).map(|iy| self.at(ix, iy)).collect()
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.plane == other.plane
            && self.origin == other.origin
            && self.bin_size == other.bin_size
            && self.nx == other.nx
            && self.ny == other.ny
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(48 + 8 * self.counts.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.plane.tag());
        out.extend_from_slice(&(self.nx as u32).to_le_bytes());
        out.extend_from_slice(&(self.ny as u32).to_le_bytes());
        out.extend_from_slice(&self.origin[0].to_le_bytes());
        out.extend_from_slice(&self.origin[1].to_le_bytes());
        out.extend_from_slice(&self.bin_size.to_le_bytes());
        for c in &self.counts {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    /// Parses the binary grid format. `n_sampled` is not part of the format
    /// and is set to the total count.
    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let header = 4 + 2 + 1 + 8 + 24;
        if bytes.len() < header {
            return Err(format!("file too short ({} bytes)", bytes.len()));
        }
        if &bytes[0..4] != MAGIC {
            return Err("bad magic".into());
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let plane = Plane::from_tag(bytes[6]).ok_or_else(|| format!("unknown plane tag {}", bytes[6]))?;
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let nx = u32_at(7);
        let ny = u32_at(11);
        let origin = [u64_at(15), u64_at(23)];
        let bin_size = u64_at(31);
        let n = nx.checked_mul(ny).ok_or("grid size overflows")?;
        if bytes.len() != header + 8 * n {
            return Err(format!("expected {} bytes for a {nx}x{ny} grid, found {}", header + 8 * n, bytes.len()));
        }
        let counts: Vec<u64> = (0..n).map(|k| u64_at(header + 8 * k)).collect();
        let n_sampled = counts.iter().sum();
        Ok(FluxHistogram2D {
            plane,
            origin,
            bin_size,
            nx,
            ny,
            counts,
            n_sampled,
        })
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|message| Error::Format {
            path: path.into(),
            message,
        })
    }

    /// CSV with a commented header; one row per bin: `ix,iy,x,y,count`.
    pub fn write_csv(&self, path: &Path, meta: &[(&str, String)]) -> Result<()> {
        let mut s = String::new();
        let o = self.origin();
        s.push_str(&format!("# plane: {}\n", self.plane.name()));
        s.push_str(&format!("# unit: {}\n", self.plane.unit()));
        s.push_str(&format!("# origin: {:?},{:?}\n", o[0], o[1]));
        s.push_str(&format!("# bin_size: {:?}\n", self.bin()));
        s.push_str(&format!("# dims: {},{}\n", self.nx, self.ny));
        s.push_str(&format!("# n_sampled: {}\n", self.n_sampled));
        for (k, v) in meta {
            s.push_str(&format!("# {k}: {v}\n"));
        }
        s.push_str("ix,iy,x,y,count\n");
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let c = self.bin_center(ix, iy);
                s.push_str(&format!("{ix},{iy},{:.6},{:.6},{}\n", c[0], c[1], self.at(ix, iy)));
            }
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let fmt = |message: String| Error::Format {
            path: path.into(),
            message,
        };
        let mut plane = None;
        let mut origin = None;
        let mut bin = None;
        let mut dims = None;
        let mut n_sampled = None;
        let mut rows = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if let Some(rest) = line.strip_prefix("# ") {
                let Some((k, v)) = rest.split_once(": ") else { continue };
                let pair = |v: &str| -> Option<(String, String)> {
                    let (a, b) = v.split_once(',')?;
                    Some((a.to_string(), b.to_string()))
                };
                match k {
                    "plane" => {
                        plane = Some(match v {
                            "position" => Plane::Position,
                            "angle" => Plane::Angle,
                            other => return Err(fmt(format!("unknown plane {other}"))),
                        })
                    }
                    "origin" => {
                        let (a, b) = pair(v).ok_or_else(|| fmt("bad origin".into()))?;
                        origin = Some([
                            a.parse::<f64>().map_err(|e| fmt(e.to_string()))?,
                            b.parse::<f64>().map_err(|e| fmt(e.to_string()))?,
                        ]);
                    }
                    "bin_size" => bin = Some(v.parse::<f64>().map_err(|e| fmt(e.to_string()))?),
                    "dims" => {
                        let (a, b) = pair(v).ok_or_else(|| fmt("bad dims".into()))?;
                        dims = Some((
                            a.parse::<usize>().map_err(|e| fmt(e.to_string()))?,
                            b.parse::<usize>().map_err(|e| fmt(e.to_string()))?,
                        ));
                    }
                    "n_sampled" => n_sampled = Some(v.parse::<u64>().map_err(|e| fmt(e.to_string()))?),
                    _ => {}
                }
                continue;
            }
            if line.starts_with("ix,") || line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(fmt(format!("bad row '{line}'")));
            }
            let ix: usize = f[0].parse().map_err(|_| fmt(format!("bad row '{line}'")))?;
            let iy: usize = f[1].parse().map_err(|_| fmt(format!("bad row '{line}'")))?;
            let c: u64 = f[4].parse().map_err(|_| fmt(format!("bad row '{line}'")))?;
            rows.push((ix, iy, c));
        }
        let (nx, ny) = dims.ok_or_else(|| fmt("missing dims".into()))?;
        let mut h = FluxHistogram2D::new(
            plane.ok_or_else(|| fmt("missing plane".into()))?,
            origin.ok_or_else(|| fmt("missing origin".into()))?,
            bin.ok_or_else(|| fmt("missing bin_size".into()))?,
            nx,
            ny,
        )
        .map_err(|e| fmt(e.to_string()))?;
        for (ix, iy, c) in rows {
            if ix >= nx || iy >= ny {
                return Err(fmt(format!("bin ({ix}, {iy}) outside {nx}x{ny} grid")));
            }
            h.counts[iy * nx + ix] = c;
        }
        h.n_sampled = n_sampled.unwrap_or_else(|| h.total());
        Ok(h)
    }
}

/// Elementwise sum of two histograms on the same grid.
pub fn merge_histograms(a: &FluxHistogram2D, b: &FluxHistogram2D) -> Result<FluxHistogram2D> {
    if !a.same_grid(b) {
        return Err(Error::Merge(format!(
            "grids differ: {} {}x{} vs {} {}x{}",
            a.plane.name(),
            a.nx,
            a.ny,
            b.plane.name(),
            b.nx,
            b.ny
        )));
    }
    let mut out = a.clone();
    for (o, c) in out.counts.iter_mut().zip(&b.counts) {
        *o += c;
    }
    out.n_sampled += b.n_sampled;
    Ok(out)
}

/// Largest bin count over the uniform expectation `total * bin_area / cell_area`.
pub fn flux_enhancement(h: &FluxHistogram2D, cell_area: f64) -> Result<f64> {
    if h.n_sampled == 0 {
        return Err(Error::Input("histogram has no sampled particles".into()));
    }
    let total = h.total();
    if total == 0 {
        return Ok(0.0);
    }
    let expected = total as f64 * h.bin_area() / cell_area;
    Ok(h.max_bin().2 as f64 / expected)
}
