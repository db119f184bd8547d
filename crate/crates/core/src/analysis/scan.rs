//! Ensemble scans over thickness and beam tilt.

use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::fwhm;
use crate::crystal::{proton_velocity, thickness_for_reduced};
use crate::error::{Error, Result};
use crate::histogram::FluxHistogram2D;
use crate::medium::ChannelMedium;
use crate::montecarlo::{run_ensemble, EnsembleConfig, EnsembleSummary};
use crate::potentials::DensityMap;
use crate::transport::StepConfig;
use crate::vec2::Vec2;

/// Largest tilt, as a fraction of the critical angle, accepted by sweeps.
pub const MAX_SWEEP_TILT: f64 = 0.20;

/// On-axis yield as a function of reduced thickness.
#[derive(Debug, Clone, PartialEq)]
pub struct YieldScan {
    pub lambda_values: Vec<f64>,
    pub thickness_nm: Vec<f64>,
    /// Channeled particles within `on_axis_radius` of the channel centre.
    pub axial_yield: Vec<u64>,
    /// Yield over its uniform expectation `N pi r^2 / A_cell`.
    pub enhancement: Vec<f64>,
    pub n_particles: u64,
    pub tilt_fraction: f64,
    pub on_axis_radius: f64,
    /// Position histogram at each thickness.
    pub planes: Vec<FluxHistogram2D>,
    pub summary: EnsembleSummary,
}

impl YieldScan {
    /// Index of the largest yield (first one on ties).
    pub fn peak_index(&self) -> usize {
        let mut best = 0;
        for (i, &y) in self.axial_yield.iter().enumerate() {
            if y > self.axial_yield[best] {
                best = i;
            }
        }
        best
    }

    pub fn peak_lambda(&self) -> f64 {
        self.lambda_values[self.peak_index()]
    }

    /// Full width of the yield maximum in reduced thickness.
    pub fn peak_width(&self) -> Result<f64> {
        fwhm(&self.lambda_values, &self.enhancement)
    }

    /// Columns `lambda,L_nm,on_axis_yield,enhancement`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        let io = |e| Error::io(path, e);
        writeln!(out, "lambda,L_nm,on_axis_yield,enhancement").map_err(io)?;
        for i in 0..self.lambda_values.len() {
            writeln!(
                out,
                "{:.6},{:.6},{},{:.6}",
                self.lambda_values[i], self.thickness_nm[i], self.axial_yield[i], self.enhancement[i]
            )
            .map_err(io)?;
        }
        std::fs::write(path, out).map_err(io)
    }
}

/// Evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Runs one ensemble through the largest thickness and records the on-axis
/// yield at every intermediate thickness. `f_r` is the transverse frequency
/// (Hz) that converts reduced thickness to depth.
pub fn yield_vs_thickness<M: ChannelMedium + ?Sized>(
    base: &EnsembleConfig,
    medium: &M,
    step: &StepConfig,
    f_r: f64,
    lambda_range: (f64, f64),
    n_points: usize,
    threads: Option<usize>,
) -> Result<YieldScan> {
    let (lo, hi) = lambda_range;
    if !(lo > 0.0 && hi <= 0.5 && lo <= hi) || n_points == 0 || (n_points > 1 && lo == hi) {
        return Err(Error::Input(format!(
            "reduced-thickness range must lie in (0, 0.5] with distinct ends ({lo}, {hi}, {n_points} points)"
        )));
    }
    let lambda_values = linspace(lo, hi, n_points);
    let v0 = proton_velocity(base.beam.energy);
    let thickness_nm = lambda_values
        .iter()
        .map(|&l| thickness_for_reduced(f_r, l, v0))
        .collect::<Result<Vec<_>>>()?;
    let mut cfg = base.clone();
    cfg.thickness = thickness_nm[n_points - 1];
    cfg.record_planes = thickness_nm[..n_points - 1].to_vec();
    let res = run_ensemble(&cfg, medium, step, threads)?;
    let mut axial_yield = res.plane_on_axis.clone();
    axial_yield.push(res.exit_on_axis);
    let mut planes = res.planes;
    planes.push(res.exit_position);
    let cell = medium.geometry().cell_area;
    let expected = base.n_particles as f64 * PI * base.on_axis_radius.powi(2) / cell;
    let enhancement = axial_yield.iter().map(|&y| y as f64 / expected).collect();
    Ok(YieldScan {
        lambda_values,
        thickness_nm,
        axial_yield,
        enhancement,
        n_particles: base.n_particles,
        tilt_fraction: base.beam.tilt_fraction,
        on_axis_radius: base.on_axis_radius,
        planes,
        summary: res.summary,
    })
}

/// Exit distributions at a sequence of beam tilts.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltScanCube {
    pub tilt_fractions: Vec<f64>,
    pub position: Vec<FluxHistogram2D>,
    pub angle: Vec<FluxHistogram2D>,
    /// Counts in each position slice.
    pub totals: Vec<u64>,
}

const CUBE_INDEX: &str = "cube_index.csv";

impl TiltScanCube {
    pub fn new(tilt_fractions: Vec<f64>, position: Vec<FluxHistogram2D>, angle: Vec<FluxHistogram2D>) -> Result<Self> {
        if tilt_fractions.len() != position.len() || position.len() != angle.len() {
            return Err(Error::Input("one position and one angle slice per tilt".into()));
        }
        for h in position.iter().skip(1) {
            if !h.same_grid(&position[0]) {
                return Err(Error::Merge("position slices do not share a grid".into()));
            }
        }
        for h in angle.iter().skip(1) {
            if !h.same_grid(&angle[0]) {
                return Err(Error::Merge("angle slices do not share a grid".into()));
            }
        }
        let totals = position.iter().map(FluxHistogram2D::total).collect();
        Ok(TiltScanCube {
            tilt_fractions,
            position,
            angle,
            totals,
        })
    }

    /// Writes one binary grid per slice plus an index file; returns every
    /// written path.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::new();
        let mut index = String::from("slice,tilt_fraction,position_file,angle_file,total\n");
        for (k, &t) in self.tilt_fractions.iter().enumerate() {
            let pos = format!("tilt_{k:02}_position.chsf");
            let ang = format!("tilt_{k:02}_angle.chsf");
            self.position[k].write_binary(&dir.join(&pos))?;
            self.angle[k].write_binary(&dir.join(&ang))?;
            files.push(dir.join(&pos));
            files.push(dir.join(&ang));
            index.push_str(&format!("{k},{t:.6},{pos},{ang},{}\n", self.totals[k]));
        }
        let path = dir.join(CUBE_INDEX);
        std::fs::write(&path, index).map_err(|e| Error::io(&path, e))?;
        files.push(path);
        Ok(files)
    }

    /// Reads a cube written by [`TiltScanCube::write`].
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(CUBE_INDEX);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let bad = |m: String| Error::Format {
            path: path.clone(),
            message: m,
        };
        let (mut tilts, mut pos, mut ang) = (Vec::new(), Vec::new(), Vec::new());
        for (n, line) in text.lines().enumerate().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(format!("line {}: expected 5 fields", n + 1)));
            }
            tilts.push(f[1].parse::<f64>().map_err(|e| bad(format!("line {}: {e}", n + 1)))?);
            pos.push(FluxHistogram2D::read_binary(&dir.join(f[2]))?);
            ang.push(FluxHistogram2D::read_binary(&dir.join(f[3]))?);
        }
        Self::new(tilts, pos, ang)
    }
}

/// One ensemble per tilt fraction (each in `[0, 0.20]`), otherwise identical
/// to `base`.
pub fn tilt_sweep<M: ChannelMedium + ?Sized>(
    base: &EnsembleConfig,
    medium: &M,
    step: &StepConfig,
    tilt_fractions: &[f64],
    threads: Option<usize>,
) -> Result<TiltScanCube> {
    if tilt_fractions.is_empty() {
        return Err(Error::Input("tilt sweep needs at least one tilt".into()));
    }
    if let Some(t) = tilt_fractions.iter().find(|t| !(**t >= 0.0 && **t <= MAX_SWEEP_TILT)) {
        return Err(Error::Input(format!(
            "tilt fraction {t} outside [0, {MAX_SWEEP_TILT}]"
        )));
    }
    let mut pos = Vec::new();
    let mut ang = Vec::new();
    for &t in tilt_fractions {
        let mut cfg = base.clone();
        cfg.beam.tilt_fraction = t;
        let res = run_ensemble(&cfg, medium, step, threads)?;
        pos.push(res.exit_position);
        ang.push(res.exit_angle);
    }
    TiltScanCube::new(tilt_fractions.to_vec(), pos, ang)
}

/// Equal-weight average of the count-normalized position slices. The result
/// is a probability per bin (it sums to 1), used as a proxy for the projected
/// electron density.
pub fn dos_projection(cube: &TiltScanCube) -> Result<DensityMap> {
    let first = cube
        .position
        .first()
        .ok_or_else(|| Error::MissingData("empty tilt cube".into()))?;
    if let Some(k) = cube.position.iter().position(|h| h.total() == 0) {
        return Err(Error::MissingData(format!(
            "tilt slice {k} has no counts"
        )));
    }
    let w = 1.0 / cube.position.len() as f64;
    let mut values = vec![0.0; first.counts.len()];
    for h in &cube.position {
        let inv = w / h.total() as f64;
        for (v, &c) in values.iter_mut().zip(&h.counts) {
            *v += c as f64 * inv;
        }
    }
    Ok(DensityMap {
        origin: first.origin(),
        bin: first.bin(),
        nx: first.nx,
        ny: first.ny,
        values,
    })
}

/// Counts along x, summed over rows whose centres lie within `half_band` of
/// `center[1]`. Returns bin centres and sums.
pub fn x_profile(h: &FluxHistogram2D, center: Vec2, half_band: f64) -> (Vec<f64>, Vec<f64>) {
    let mut ys = vec![0.0; h.nx];
    for iy in 0..h.ny {
        if (h.bin_center(0, iy)[1] - center[1]).abs() <= half_band + 1e-12 {
            for (ix, y) in ys.iter_mut().enumerate() {
                *y += h.at(ix, iy) as f64;
            }
        }
    }
    let xs = (0..h.nx).map(|ix| h.bin_center(ix, 0)[0]).collect();
    (xs, ys)
}

/// Counts along y, summed over columns within `half_band` of `center[0]`.
pub fn y_profile(h: &FluxHistogram2D, center: Vec2, half_band: f64) -> (Vec<f64>, Vec<f64>) {
    let mut ys = vec![0.0; h.ny];
    for ix in 0..h.nx {
        if (h.bin_center(ix, 0)[0] - center[0]).abs() <= half_band + 1e-12 {
            for (iy, y) in ys.iter_mut().enumerate() {
                *y += h.at(ix, iy) as f64;
            }
        }
    }
    let xs = (0..h.ny).map(|iy| h.bin_center(0, iy)[1]).collect();
    (xs, ys)
}

/// Serializable summary of a scan point, for manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub lambda: f64,
    pub thickness_nm: f64,
    pub on_axis_yield: u64,
    pub enhancement: f64,
}

impl YieldScan {
    pub fn points(&self) -> Vec<ScanPoint> {
        (0..self.lambda_values.len())
            .map(|i| ScanPoint {
                lambda: self.lambda_values[i],
                thickness_nm: self.thickness_nm[i],
                on_axis_yield: self.axial_yield[i],
                enhancement: self.enhancement[i],
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crystal::{build_channel_strings, BeamSpec, CrystalSpec};
    use crate::histogram::Plane;
    use crate::potentials::{harmonic_frequency, PotentialField, ScreeningModel};
    use crate::tables::{TableResolution, TabulatedMedium};
    use proptest::prelude::*;
    use std::sync::{Arc, OnceLock};

    fn setup() -> &'static (TabulatedMedium, f64) {
        static M: OnceLock<(TabulatedMedium, f64)> = OnceLock::new();
        M.get_or_init(|| {
            let g = Arc::new(build_channel_strings(&CrystalSpec::silicon(), 3).unwrap());
            let f = PotentialField::new(g.clone(), ScreeningModel::moliere(14), 1, 14, 7.4, None).unwrap();
            let fr = harmonic_frequency(&f, g.channel_center).unwrap();
            (TabulatedMedium::new(&f, TableResolution::default()).unwrap(), fr)
        })
    }

    fn base(n: u64, tilt: f64) -> EnsembleConfig {
        let beam = BeamSpec {
            energy: 2e6,
            tilt_fraction: tilt,
            divergence_mrad: 0.0,
            tilt_azimuth: 0.0,
        };
        EnsembleConfig::new(n, 11, beam, 50.0)
    }

    fn slice(counts: &[u64]) -> FluxHistogram2D {
        let mut h = FluxHistogram2D::new(Plane::Position, [0.0, 0.0], 0.1, 2, 2).unwrap();
        h.counts.copy_from_slice(counts);
        h
    }

    fn cube(slices: Vec<FluxHistogram2D>) -> TiltScanCube {
        let n = slices.len();
        let ang = vec![FluxHistogram2D::new(Plane::Angle, [0.0, 0.0], 0.1, 2, 2).unwrap(); n];
        TiltScanCube::new((0..n).map(|k| k as f64 * 0.05).collect(), slices, ang).unwrap()
    }

    #[test]
    fn linspace_ends() {
        let v = linspace(0.15, 0.35, 21);
        assert_eq!(v.len(), 21);
        assert_eq!(v[0], 0.15);
        assert_eq!(v[20], 0.35);
        assert!((v[10] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn single_slice_projection() {
        let d = dos_projection(&cube(vec![slice(&[1, 2, 3, 4])])).unwrap();
        for (v, e) in d.values.iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((v - e).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_slice_is_reported() {
        assert!(matches!(
            dos_projection(&cube(vec![slice(&[1, 2, 3, 4]), slice(&[0; 4])])),
            Err(Error::MissingData(_))
        ));
    }

    #[test]
    fn mismatched_slices_rejected() {
        let other = FluxHistogram2D::new(Plane::Position, [0.0, 0.0], 0.2, 2, 2).unwrap();
        let ang = vec![FluxHistogram2D::new(Plane::Angle, [0.0, 0.0], 0.1, 2, 2).unwrap(); 2];
        assert!(TiltScanCube::new(vec![0.0, 0.1], vec![slice(&[1; 4]), other], ang).is_err());
    }

    proptest! {
        #[test]
        fn projection_normalized_and_permutation_invariant(
            counts in prop::collection::vec(prop::array::uniform4(1u64..1000), 1..6),
            seed in 0u64..1000,
        ) {
            let slices: Vec<_> = counts.iter().map(|c| slice(c)).collect();
            let d = dos_projection(&cube(slices.clone())).unwrap();
            prop_assert!((d.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let mut perm = slices;
            let n = perm.len();
            for i in 0..n {
                perm.swap(i, (seed as usize + 7 * i) % n);
            }
            let e = dos_projection(&cube(perm)).unwrap();
            for (a, b) in d.values.iter().zip(&e.values) {
                prop_assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn cube_round_trip() {
        let c = cube(vec![slice(&[1, 2, 3, 4]), slice(&[5, 6, 7, 8])]);
        let dir = tempfile::tempdir().unwrap();
        let files = c.write(dir.path()).unwrap();
        assert_eq!(files.len(), 5);
        let back = TiltScanCube::read(dir.path()).unwrap();
        assert_eq!(back.tilt_fractions, c.tilt_fractions);
        for (a, b) in back.position.iter().zip(&c.position) {
            assert!(a.same_grid(b));
            assert_eq!(a.counts, b.counts);
        }
        assert_eq!(back.totals, vec![10, 26]);
    }

    #[test]
    fn sweep_rejects_large_tilts() {
        let (m, _) = setup();
        let s = StepConfig::default();
        assert!(tilt_sweep(&base(10, 0.0), m, &s, &[0.0, 0.25], None).is_err());
        assert!(tilt_sweep(&base(10, 0.0), m, &s, &[], None).is_err());
    }

    #[test]
    fn scan_rejects_bad_range() {
        let (m, fr) = setup();
        let s = StepConfig::default();
        assert!(yield_vs_thickness(&base(10, 0.0), m, &s, *fr, (0.0, 0.3), 5, None).is_err());
        assert!(yield_vs_thickness(&base(10, 0.0), m, &s, *fr, (0.2, 0.6), 5, None).is_err());
    }

    #[test]
    fn thin_crystal_yield_is_uniform() {
        // Near the entrance the beam has not yet moved: enhancement ~ 1.
        let (m, fr) = setup();
        let mut b = base(40_000, 0.0);
        b.on_axis_radius = 0.03;
        let scan = yield_vs_thickness(&b, m, &StepConfig::default(), *fr, (0.002, 0.004), 2, None).unwrap();
        let expected = 40_000.0 * PI * 0.03f64.powi(2) / m.geometry().cell_area;
        for (&e, &y) in scan.enhancement.iter().zip(&scan.axial_yield) {
            let sigma = expected.sqrt() / expected;
            assert!((e - 1.0).abs() < 4.0 * sigma + 0.02, "{e} ({y})");
        }
    }

    #[test]
    fn azimuth_has_no_effect_without_tilt() {
        let (m, fr) = setup();
        let s = StepConfig::default();
        let a = yield_vs_thickness(&base(2000, 0.0), m, &s, *fr, (0.2, 0.3), 3, None).unwrap();
        let mut b = base(2000, 0.0);
        b.beam.tilt_azimuth = 0.7;
        let b = yield_vs_thickness(&b, m, &s, *fr, (0.2, 0.3), 3, None).unwrap();
        assert_eq!(a.axial_yield, b.axial_yield);
    }

    #[test]
    fn sweep_slices_match_single_runs() {
        let (m, _) = setup();
        let s = StepConfig::default();
        let b = base(500, 0.0);
        let c = tilt_sweep(&b, m, &s, &[0.0, 0.1], Some(1)).unwrap();
        let mut one = b.clone();
        one.beam.tilt_fraction = 0.1;
        let r = run_ensemble(&one, m, &s, Some(1)).unwrap();
        assert_eq!(c.position[1], r.exit_position);
        assert_eq!(c.totals[1], r.exit_position.total());
        let d = dos_projection(&c).unwrap();
        assert!((d.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn band_profile_sums_rows() {
        let mut h = FluxHistogram2D::new(Plane::Position, [-0.15, -0.15], 0.1, 3, 3).unwrap();
        h.counts = vec![1, 2, 3, 4, 5, 6, 7, 8, 9];
        let (xs, ys) = x_profile(&h, [0.0, 0.0], 0.01);
        assert_eq!(ys, vec![4.0, 5.0, 6.0]);
        assert!((xs[1]).abs() < 1e-12);
        let (_, ys) = x_profile(&h, [0.0, 0.0], 0.1);
        assert_eq!(ys, vec![12.0, 15.0, 18.0]);
        let (_, ys) = y_profile(&h, [0.0, 0.0], 0.01);
        assert_eq!(ys, vec![2.0, 5.0, 8.0]);
    }
}
