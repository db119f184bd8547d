//! Beam sampling and deterministic parallel ensembles.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{ON_AXIS_RADIUS_NM, POSITION_BIN_NM};
use crate::crystal::{critical_angle, BeamSpec, ChannelGeometry};
use crate::error::{Error, Result};
use crate::histogram::{merge_histograms, FluxHistogram2D, Plane};
use crate::medium::ChannelMedium;
use crate::transport::{propagate_trajectory, PathSample, ProtonState, Recorder, Status, StepConfig};
use crate::vec2::{self, Vec2};

/// Particles per work unit. Fixed so that reductions do not depend on the
/// number of workers.
const CHUNK: u64 = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_particles: u64,
    pub seed: u64,
    pub beam: BeamSpec,
    /// Crystal thickness, nm.
    pub thickness: f64,
    /// Depths (nm, strictly inside `(0, thickness)`) with position histograms.
    #[serde(default)]
    pub record_planes: Vec<f64>,
    /// Also histogram the entrance positions.
    #[serde(default)]
    pub record_entry: bool,
    /// Keep the full path of every `k`-th particle (0 = none).
    #[serde(default)]
    pub path_every: u64,
    /// Position-plane bin, nm.
    #[serde(default = "default_position_bin")]
    pub position_bin: f64,
    /// Angle-plane bin, mrad.
    #[serde(default = "default_angle_bin")]
    pub angle_bin: f64,
    /// Radius around the channel centre counted as on-axis, nm.
    #[serde(default = "default_on_axis_radius")]
    pub on_axis_radius: f64,
}

fn default_position_bin() -> f64 {
    POSITION_BIN_NM
}

fn default_angle_bin() -> f64 {
    0.05
}

fn default_on_axis_radius() -> f64 {
    ON_AXIS_RADIUS_NM
}

impl EnsembleConfig {
    pub fn new(n_particles: u64, seed: u64, beam: BeamSpec, thickness: f64) -> Self {
        EnsembleConfig {
            n_particles,
            seed,
            beam,
            thickness,
            record_planes: Vec::new(),
            record_entry: false,
            path_every: 0,
            position_bin: POSITION_BIN_NM,
            angle_bin: 0.05,
            on_axis_radius: ON_AXIS_RADIUS_NM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let key = |k: &str, m: &str| Error::ConfigKey {
            key: k.into(),
            message: m.into(),
        };
        if self.n_particles < 1 {
            return Err(key("ensemble.n_particles", "must be at least 1"));
        }
        if !(self.thickness > 0.0) || !self.thickness.is_finite() {
            return Err(key("ensemble.thickness", "must be positive"));
        }
        if self.record_planes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(key("ensemble.record_planes", "must be strictly increasing"));
        }
        if self.record_planes.iter().any(|&z| !(z > 0.0 && z < self.thickness)) {
            return Err(key("ensemble.record_planes", "depths must lie strictly inside (0, thickness)"));
        }
        if !(self.on_axis_radius > 0.0) {
            return Err(key("ensemble.on_axis_radius", "must be positive"));
        }
        if !(self.position_bin > 0.0 && self.angle_bin > 0.0) {
            return Err(key("ensemble.position_bin", "bin sizes must be positive"));
        }
        self.beam.validate()
    }
}

/// The random stream owned by particle `index`.
pub fn particle_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform position over the cell polygon, by rejection from its bounding box.
pub fn sample_position<R: Rng + ?Sized>(geometry: &ChannelGeometry, rng: &mut R) -> Vec2 {
    let (lo, hi) = geometry.bounding_box();
    loop {
        let p = [rng.random_range(lo[0]..hi[0]), rng.random_range(lo[1]..hi[1])];
        if geometry.contains(p) {
            return p;
        }
    }
}

/// Draws one incident proton: uniform over the cell, mean angle
/// `tilt_fraction * psi_c` along the tilt azimuth, Gaussian divergence.
pub fn sample_beam<R: Rng + ?Sized>(
    beam: &BeamSpec,
    geometry: &ChannelGeometry,
    psi_c: f64,
    rng: &mut R,
) -> ProtonState {
    let position = sample_position(geometry, rng);
    let tilt = beam.tilt_fraction * psi_c;
    let mut angle = [tilt * beam.tilt_azimuth.cos(), tilt * beam.tilt_azimuth.sin()];
    if beam.divergence_mrad > 0.0 {
        let s = beam.divergence_mrad * 1e-3;
        let gx: f64 = rng.sample(StandardNormal);
        let gy: f64 = rng.sample(StandardNormal);
        angle = vec2::add(angle, [s * gx, s * gy]);
    }
    ProtonState::new(position, angle, beam.energy)
}

/// Critical angle of the medium's strings for `beam`.
pub fn medium_critical_angle<M: ChannelMedium + ?Sized>(medium: &M, beam: &BeamSpec) -> Result<f64> {
    let c = medium.collision();
    let d = medium.geometry().strings[0].period;
    critical_angle(beam.energy, c.z1, c.z2, d)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub n_particles: u64,
    pub n_exited: u64,
    pub n_dechanneled: u64,
    /// Mean energy loss of exiting particles, eV.
    pub mean_energy_loss: f64,
    /// Mean exit angular dispersion, rad^2.
    pub mean_omega_sq: f64,
    /// Critical angle used for the beam and angle grid, rad.
    pub psi_c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub exit_position: FluxHistogram2D,
    pub exit_angle: FluxHistogram2D,
    pub entry: Option<FluxHistogram2D>,
    /// One position histogram per requested depth.
    pub planes: Vec<FluxHistogram2D>,
    /// Channeled particles within the on-axis radius at each requested depth.
    pub plane_on_axis: Vec<u64>,
    /// Exiting particles within the on-axis radius.
    pub exit_on_axis: u64,
    pub summary: EnsembleSummary,
    pub paths: Vec<(u64, Vec<PathSample>)>,
}

struct Partial {
    exit_position: FluxHistogram2D,
    exit_angle: FluxHistogram2D,
    entry: Option<FluxHistogram2D>,
    planes: Vec<FluxHistogram2D>,
    plane_on_axis: Vec<u64>,
    exit_on_axis: u64,
    exited: u64,
    dechanneled: u64,
    loss_sum: f64,
    omega_sum: f64,
    paths: Vec<(u64, Vec<PathSample>)>,
}

/// Position- and angle-plane templates for a geometry and critical angle.
pub fn default_grids(
    geometry: &ChannelGeometry,
    psi_c: f64,
    position_bin: f64,
    angle_bin: f64,
) -> Result<(FluxHistogram2D, FluxHistogram2D)> {
    let (lo, hi) = geometry.bounding_box();
    let c = geometry.channel_center;
    let half = (0..2).map(|k| (c[k] - lo[k]).max(hi[k] - c[k])).fold(0.0, f64::max);
    let pos = FluxHistogram2D::centered(Plane::Position, c, half, position_bin)?;
    let ang = FluxHistogram2D::centered(Plane::Angle, [0.0, 0.0], 1.5 * psi_c * 1e3, angle_bin)?;
    Ok((pos, ang))
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool
/// when `None`.
pub fn with_workers<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(n) => Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Numerical(format!("cannot start worker pool: {e}")))?
            .install(f)),
        None => Ok(f()),
    }
}

/// Runs the ensemble on `threads` workers (the global pool when `None`).
/// Results never depend on the worker count.
pub fn run_ensemble<M: ChannelMedium + ?Sized>(
    cfg: &EnsembleConfig,
    medium: &M,
    step: &StepConfig,
    threads: Option<usize>,
) -> Result<EnsembleResult> {
    cfg.validate()?;
    step.validate()?;
    let geometry = medium.geometry();
    let psi_c = medium_critical_angle(medium, &cfg.beam)?;
    let (pos_t, ang_t) = default_grids(geometry, psi_c, cfg.position_bin, cfg.angle_bin)?;
    let n_chunks = cfg.n_particles.div_ceil(CHUNK);
    let r2 = cfg.on_axis_radius * cfg.on_axis_radius;
    let center = geometry.channel_center;
    let is_on_axis = move |p: Vec2| {
        let d = vec2::sub(p, center);
        vec2::dot(d, d) <= r2
    };
    let work = |chunk: u64| -> Result<Partial> {
        let mut part = Partial {
            exit_position: pos_t.clone(),
            exit_angle: ang_t.clone(),
            entry: cfg.record_entry.then(|| pos_t.clone()),
            planes: vec![pos_t.clone(); cfg.record_planes.len()],
            plane_on_axis: vec![0; cfg.record_planes.len()],
            exit_on_axis: 0,
            exited: 0,
            dechanneled: 0,
            loss_sum: 0.0,
            omega_sum: 0.0,
            paths: Vec::new(),
        };
        let start = chunk * CHUNK;
        let end = (start + CHUNK).min(cfg.n_particles);
        for index in start..end {
            let mut rng = particle_rng(cfg.seed, index);
            let initial = sample_beam(&cfg.beam, geometry, psi_c, &mut rng);
            if let Some(e) = part.entry.as_mut() {
                e.fill(initial.position);
            }
            let keep_path = cfg.path_every > 0 && index % cfg.path_every == 0;
            let mut path = Vec::new();
            let planes = &mut part.planes;
            let on_axis = &mut part.plane_on_axis;
            let mut on_plane = |k: usize, s: &ProtonState| {
                planes[k].fill(s.position);
                if is_on_axis(s.position) {
                    on_axis[k] += 1;
                }
            };
            let rec = Recorder {
                planes: &cfg.record_planes,
                on_plane: &mut on_plane,
                path: keep_path.then_some(&mut path),
            };
            let out = propagate_trajectory(&initial, medium, cfg.thickness, step, &mut rng, Some(rec))?;
            match out.status {
                Status::Exited => {
                    part.exited += 1;
                    part.exit_position.fill(out.position);
                    if is_on_axis(out.position) {
                        part.exit_on_axis += 1;
                    }
                    part.exit_angle.fill([out.angle[0] * 1e3, out.angle[1] * 1e3]);
                    part.loss_sum += initial.energy - out.energy;
                    part.omega_sum += out.omega_sq;
                }
                _ => part.dechanneled += 1,
            }
            if keep_path {
                part.paths.push((index, path));
            }
        }
        Ok(part)
    };
    let partials = with_workers(threads, || -> Vec<Result<Partial>> {
        (0..n_chunks).into_par_iter().map(work).collect()
    })?;
    let mut exit_position = pos_t.empty_like();
    let mut exit_angle = ang_t.empty_like();
    let mut entry = cfg.record_entry.then(|| pos_t.empty_like());
    let mut planes = vec![pos_t.empty_like(); cfg.record_planes.len()];
    let mut plane_on_axis = vec![0u64; cfg.record_planes.len()];
    let mut exit_on_axis = 0;
    let mut summary = EnsembleSummary {
        n_particles: cfg.n_particles,
        psi_c,
        ..Default::default()
    };
    let mut loss_sum = 0.0;
    let mut omega_sum = 0.0;
    let mut paths = Vec::new();
    for p in partials {
        let p = p?;
        exit_position = merge_histograms(&exit_position, &p.exit_position)?;
        exit_angle = merge_histograms(&exit_angle, &p.exit_angle)?;
        if let (Some(e), Some(pe)) = (entry.as_mut(), p.entry.as_ref()) {
            *e = merge_histograms(e, pe)?;
        }
        for (acc, h) in planes.iter_mut().zip(&p.planes) {
            *acc = merge_histograms(acc, h)?;
        }
        for (acc, c) in plane_on_axis.iter_mut().zip(&p.plane_on_axis) {
            *acc += c;
        }
        exit_on_axis += p.exit_on_axis;
        summary.n_exited += p.exited;
        summary.n_dechanneled += p.dechanneled;
        loss_sum += p.loss_sum;
        omega_sum += p.omega_sum;
        paths.extend(p.paths);
    }
    let n = cfg.n_particles;
    exit_position.n_sampled = n;
    exit_angle.n_sampled = n;
    if let Some(e) = entry.as_mut() {
        e.n_sampled = n;
    }
    for h in planes.iter_mut() {
        h.n_sampled = n;
    }
    if summary.n_exited > 0 {
        summary.mean_energy_loss = loss_sum / summary.n_exited as f64;
        summary.mean_omega_sq = omega_sum / summary.n_exited as f64;
    }
    Ok(EnsembleResult {
        exit_position,
        exit_angle,
        entry,
        planes,
        plane_on_axis,
        exit_on_axis,
        summary,
        paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crystal::{build_channel_strings, CrystalSpec};
    use crate::histogram::flux_enhancement;
    use crate::potentials::{PotentialField, ScreeningModel};
    use crate::tables::{TableResolution, TabulatedMedium};
    use std::sync::{Arc, OnceLock};

    fn medium() -> &'static TabulatedMedium {
        static M: OnceLock<TabulatedMedium> = OnceLock::new();
        M.get_or_init(|| {
            let g = Arc::new(build_channel_strings(&CrystalSpec::silicon(), 3).unwrap());
            let f = PotentialField::new(g, ScreeningModel::moliere(14), 1, 14, 7.4, None).unwrap();
            TabulatedMedium::new(&f, TableResolution::default()).unwrap()
        })
    }

    fn beam(tilt: f64, div: f64) -> BeamSpec {
        BeamSpec {
            energy: 2e6,
            tilt_fraction: tilt,
            divergence_mrad: div,
            tilt_azimuth: 0.0,
        }
    }

    #[test]
    fn collimated_beam_has_zero_angles() {
        let g = medium().geometry();
        let mut rng = particle_rng(3, 0);
        for _ in 0..1000 {
            let s = sample_beam(&beam(0.0, 0.0), g, 6.09e-3, &mut rng);
            assert_eq!(s.angle, [0.0, 0.0]);
            assert!(g.contains(s.position));
        }
    }

    #[test]
    fn tilted_beam_mean_angle() {
        let g = medium().geometry();
        let psi = critical_angle(2e6, 1, 14, 0.543).unwrap();
        let mut rng = particle_rng(5, 0);
        let n = 100_000;
        let div = 0.1e-3;
        let mean: f64 = (0..n).map(|_| sample_beam(&beam(0.1, 0.1), g, psi, &mut rng).angle[0]).sum::<f64>() / n as f64;
        let tol = 5.0 * div / (n as f64).sqrt();
        assert!((mean - 0.609e-3).abs() < tol + 0.609e-5, "{mean}");
        assert!((mean - 0.1 * psi).abs() < tol);
    }

    #[test]
    fn positions_are_uniform() {
        // Chi-square over a 10x10 grid in the (u, v) frame of the diamond cell,
        // where the cell maps onto the unit square.
        let g = medium().geometry();
        let q = 0.543 / 4.0;
        let mut rng = particle_rng(9, 0);
        let n = 100_000;
        let mut counts = [0u64; 100];
        for _ in 0..n {
            let p = sample_position(g, &mut rng);
            let u = (p[0] + p[1] + q) / (2.0 * q);
            let v = (p[1] - p[0] + q) / (2.0 * q);
            let i = ((u * 10.0) as usize).min(9);
            let j = ((v * 10.0) as usize).min(9);
            counts[j * 10 + i] += 1;
        }
        let e = n as f64 / 100.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 99 degrees of freedom: p = 0.001 at chi2 = 148.2.
        assert!(chi2 < 148.2, "chi2 = {chi2}");
    }

    #[test]
    fn single_particle_matches_propagation() {
        let m = medium();
        let cfg = EnsembleConfig::new(1, 42, beam(0.0, 0.1), 60.0);
        let step = StepConfig::default();
        let res = run_ensemble(&cfg, m, &step, Some(1)).unwrap();
        let psi = medium_critical_angle(m, &cfg.beam).unwrap();
        let mut rng = particle_rng(42, 0);
        let s0 = sample_beam(&cfg.beam, m.geometry(), psi, &mut rng);
        let out = propagate_trajectory(&s0, m, 60.0, &step, &mut rng, None).unwrap();
        let mut pos = res.exit_position.empty_like();
        let mut ang = res.exit_angle.empty_like();
        if out.status == Status::Exited {
            pos.fill(out.position);
            ang.fill([out.angle[0] * 1e3, out.angle[1] * 1e3]);
        }
        assert_eq!(pos.counts, res.exit_position.counts);
        assert_eq!(ang.counts, res.exit_angle.counts);
        assert_eq!(res.summary.n_exited + res.summary.n_dechanneled, 1);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let m = medium();
        let mut cfg = EnsembleConfig::new(3000, 7, beam(0.05, 0.1), 50.0);
        cfg.record_planes = vec![20.0, 40.0];
        cfg.record_entry = true;
        let step = StepConfig::default();
        let a = run_ensemble(&cfg, m, &step, Some(1)).unwrap();
        let b = run_ensemble(&cfg, m, &step, Some(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.summary.n_exited + a.summary.n_dechanneled, 3000);
        assert!(a.exit_position.total() <= a.exit_position.n_sampled);
        assert_eq!(a.entry.as_ref().unwrap().total(), 3000);
    }

    #[test]
    fn partition_invariance() {
        // Splitting the particle index range and merging equals one run.
        let m = medium();
        let step = StepConfig::default();
        let cfg = EnsembleConfig::new(10_000, 21, beam(0.0, 0.1), 30.0);
        let whole = run_ensemble(&cfg, m, &step, None).unwrap();
        let geometry = m.geometry();
        let psi = medium_critical_angle(m, &cfg.beam).unwrap();
        let (pos_t, _) = default_grids(geometry, psi, cfg.position_bin, cfg.angle_bin).unwrap();
        let mut parts = Vec::new();
        for range in [0..1234u64, 1234..7000, 7000..10_000] {
            let mut h = pos_t.clone();
            for i in range.clone() {
                let mut rng = particle_rng(21, i);
                let s0 = sample_beam(&cfg.beam, geometry, psi, &mut rng);
                let out = propagate_trajectory(&s0, m, 30.0, &step, &mut rng, None).unwrap();
                if out.status == Status::Exited {
                    h.fill(out.position);
                }
            }
            h.n_sampled = range.end - range.start;
            parts.push(h);
        }
        let merged = parts.iter().skip(1).fold(parts[0].clone(), |a, b| merge_histograms(&a, b).unwrap());
        assert_eq!(merged, whole.exit_position);
    }

    #[test]
    fn focus_peak_at_center_and_tilt_reduces_peak() {
        let m = medium();
        let step = StepConfig::default();
        let cfg0 = EnsembleConfig::new(100_000, 1, beam(0.0, 0.0), 83.0);
        let r0 = run_ensemble(&cfg0, m, &step, None).unwrap();
        let (ix, iy, peak0) = r0.exit_position.max_bin();
        let c = r0.exit_position.nx / 2;
        assert!(ix.abs_diff(c) <= 2 && iy.abs_diff(c) <= 2, "peak at ({ix}, {iy})");
        let cfg2 = EnsembleConfig::new(100_000, 1, beam(0.2, 0.0), 83.0);
        let r2 = run_ensemble(&cfg2, m, &step, None).unwrap();
        assert!(peak0 > r2.exit_position.max_bin().2);
        let e = flux_enhancement(&r0.exit_position, m.geometry().cell_area).unwrap();
        assert!(e > 1.0);
    }
}
