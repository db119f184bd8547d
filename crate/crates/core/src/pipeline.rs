//! Orchestration of configured runs into output bundles, and plot-data export.
//!
//! Each command writes into its own directory under the output root, with a
//! `manifest.json` listing every file and its SHA-256 digest.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::analysis::scan::{x_profile, y_profile};
use crate::analysis::{
    deterministic_map, dos_projection, extract_rainbow_lines, fwhm, map_jacobian, tilt_sweep, yield_vs_thickness,
    Lattice, RainbowLineSet, TiltScanCube,
};
use crate::config::RunConfig;
use crate::crystal::{proton_velocity, reduced_thickness, ChannelGeometry};
use crate::error::{Error, Result};
use crate::histogram::{flux_enhancement, FluxHistogram2D};
use crate::laser_kh::{kh_fourier_component, LaserParams, PointScatterer};
use crate::montecarlo::{medium_critical_angle, run_ensemble, with_workers, EnsembleResult};
use crate::potentials::{harmonic_frequency, potential_map, PotentialField, ScreeningModel};
use crate::tables::TabulatedMedium;

/// Geometry, exact field and fast medium built from a configuration.
pub struct Simulation {
    pub geometry: Arc<ChannelGeometry>,
    pub field: PotentialField,
    pub medium: TabulatedMedium,
    /// Harmonic transverse frequency at the channel centre, Hz.
    pub f_r: f64,
    /// Critical angle at the configured beam energy, rad.
    pub psi_c: f64,
}

impl Simulation {
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        let spec = cfg.crystal.spec();
        let geometry = Arc::new(cfg.crystal.geometry()?);
        let z1 = cfg.potential.z1;
        let model = ScreeningModel::new(cfg.potential.kind, z1, spec.z2);
        let field = PotentialField::new(geometry.clone(), model, z1, spec.z2, spec.sigma_th_pm, cfg.potential.born)?;
        let medium = TabulatedMedium::new(&field, cfg.potential.resolution())?;
        let f_r = harmonic_frequency(&field, geometry.channel_center)?;
        let psi_c = medium_critical_angle(&medium, &cfg.beam.spec())?;
        Ok(Simulation {
            geometry,
            field,
            medium,
            f_r,
            psi_c,
        })
    }

    /// Geometry alone, without tabulating the field.
    pub fn build_geometry(cfg: &RunConfig) -> Result<ChannelGeometry> {
        cfg.crystal.geometry()
    }

    /// Rainbow lines of the deterministic map through `length` at `tilt_fraction`.
    pub fn rainbow_lines(&self, cfg: &RunConfig, tilt_fraction: f64, length: f64) -> Result<RainbowLineSet> {
        let j = &cfg.analysis.jacobian;
        let q = self.geometry.inscribed_radius();
        let lattice = Lattice::square(self.geometry.channel_center, j.half_width_fraction * q, j.n_grid)?;
        let t = tilt_fraction * self.psi_c;
        let az = cfg.beam.tilt_azimuth;
        let tilt = [t * az.cos(), t * az.sin()];
        let map = deterministic_map(&self.medium, cfg.beam.energy, tilt, length, cfg.step.dz, &lattice)?;
        Ok(extract_rainbow_lines(&map_jacobian(&map, j.target)?, 0.0))
    }
}

/// Subcommands that produce a bundle from a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Run,
    ScanThickness,
    TiltSweep,
    PotentialMap,
    KhMap,
    GeometryDump,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Run => "run",
            Command::ScanThickness => "scan-thickness",
            Command::TiltSweep => "tilt-sweep",
            Command::PotentialMap => "potential-map",
            Command::KhMap => "kh-map",
            Command::GeometryDump => "geometry-dump",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the bundle directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    /// False when the command failed part way; listed files are what exists.
    pub complete: bool,
    pub timings_s: BTreeMap<String, f64>,
    pub files: Vec<FileEntry>,
    pub summary: serde_json::Value,
}

/// A written bundle: its directory and manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputBundle {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";

impl OutputBundle {
    /// Digest over the listed result files (paths and contents), independent
    /// of timings and of where the bundle was written. The config copy is
    /// left out since it records the output directory.
    pub fn digest(&self) -> String {
        let mut files: Vec<&FileEntry> = self.manifest.files.iter().filter(|f| f.path != CONFIG_FILE).collect();
        files.sort_by(|a, b| a.path.cmp(&b.path));
        let mut h = Sha256::new();
        for f in files {
            h.update(f.path.as_bytes());
            h.update([0]);
            h.update(f.sha256.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// Loads a bundle and checks it is complete.
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.clone(),
            message: e.to_string(),
        })?;
        Ok(OutputBundle {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    /// Re-hashes every listed file; returns the paths whose digest changed.
    pub fn verify(&self) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for f in &self.manifest.files {
            if file_digest(&self.dir.join(&f.path))?.0 != f.sha256 {
                bad.push(f.path.clone());
            }
        }
        Ok(bad)
    }
}

fn file_digest(path: &Path) -> Result<(String, u64)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

struct BundleWriter {
    dir: PathBuf,
    files: Vec<FileEntry>,
    timings: BTreeMap<String, f64>,
    run_id: String,
    command: &'static str,
    config_hash: String,
    seed: u64,
}

impl BundleWriter {
    fn create(dir: PathBuf, command: &'static str, cfg: &RunConfig) -> Result<Self> {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        // Files from an earlier bundle here would otherwise linger unlisted.
        let stale = dir.join(MANIFEST);
        if stale.exists() {
            if let Ok(old) = OutputBundle::open(&dir) {
                for f in &old.manifest.files {
                    let p = dir.join(&f.path);
                    if p.exists() {
                        std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
                    }
                }
            }
            std::fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
        }
        let config_hash = cfg.hash();
        let run_id = hex::encode(&Sha256::digest(format!("{config_hash}:{command}").as_bytes())[..8]);
        Ok(BundleWriter {
            dir,
            files: Vec::new(),
            timings: BTreeMap::new(),
            run_id,
            command,
            config_hash,
            seed: cfg.ensemble.seed,
        })
    }

    fn path(&self, rel: &str) -> Result<PathBuf> {
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(p)
    }

    /// Records a file already written under the bundle directory.
    fn track(&mut self, rel: &str) -> Result<()> {
        let (sha256, bytes) = file_digest(&self.dir.join(rel))?;
        self.files.retain(|f| f.path != rel);
        self.files.push(FileEntry {
            path: rel.to_string(),
            sha256,
            bytes,
        });
        Ok(())
    }

    fn write(&mut self, rel: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(rel)?;
        std::fs::write(&p, contents).map_err(|e| Error::io(&p, e))?;
        self.track(rel)
    }

    fn json(&mut self, rel: &str, value: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(format!("cannot encode {rel}: {e}")))?;
        self.write(rel, text + "\n")
    }

    fn histogram(&mut self, stem: &str, h: &FluxHistogram2D, csv: bool, meta: &[(&str, String)]) -> Result<()> {
        let rel = format!("{stem}.chsf");
        h.write_binary(&self.path(&rel)?)?;
        self.track(&rel)?;
        if csv {
            let rel = format!("{stem}.csv");
            h.write_csv(&self.path(&rel)?, meta)?;
            self.track(&rel)?;
        }
        Ok(())
    }

    fn time<T>(&mut self, label: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f(self);
        let dt = t.elapsed().as_secs_f64();
        log::info!("{}: {label} took {dt:.2} s", self.command);
        self.timings.insert(label.to_string(), dt);
        out
    }

    fn finish(self, complete: bool, summary: serde_json::Value) -> Result<OutputBundle> {
        let mut files = self.files;
        files.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            run_id: self.run_id,
            command: self.command.to_string(),
            config_hash: self.config_hash,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            complete,
            timings_s: self.timings,
            files,
            summary,
        };
        let path = self.dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(OutputBundle {
            dir: self.dir,
            manifest,
        })
    }
}

/// Runs `command` for `cfg`, writing a bundle under `cfg.output.dir`.
/// On failure the manifest is still written, marked incomplete.
pub fn run_pipeline(cfg: &RunConfig, command: Command, threads: Option<usize>) -> Result<OutputBundle> {
    cfg.validate()?;
    let mut w = BundleWriter::create(cfg.output.dir.join(command.name()), command.name(), cfg)?;
    w.json(CONFIG_FILE, cfg)?;
    let result = with_workers(threads, || execute(cfg, command, &mut w))?;
    match result {
        Ok(summary) => w.finish(true, summary),
        Err(e) => {
            let _ = w.finish(false, json!({ "error": e.to_string() }));
            Err(e)
        }
    }
}

fn meta(cfg: &RunConfig, extra: &[(&'static str, String)]) -> Vec<(&'static str, String)> {
    let mut m = vec![
        ("config_hash", cfg.hash()),
        ("energy_ev", format!("{}", cfg.beam.energy)),
        ("tilt_fraction", format!("{}", cfg.beam.tilt_fraction)),
    ];
    m.extend_from_slice(extra);
    m
}

fn execute(cfg: &RunConfig, command: Command, w: &mut BundleWriter) -> Result<serde_json::Value> {
    if command == Command::KhMap {
        return run_kh_map(cfg, w);
    }
    let sim = w.time("build_tables", |_| Simulation::build(cfg))?;
    match command {
        Command::Run => run_single(cfg, &sim, w),
        Command::ScanThickness => run_scan(cfg, &sim, w),
        Command::TiltSweep => run_tilts(cfg, &sim, w),
        Command::PotentialMap => run_potential_map(cfg, &sim, w),
        Command::KhMap => unreachable!(),
        Command::GeometryDump => run_geometry(cfg, &sim, w),
    }
}

fn write_ensemble(cfg: &RunConfig, sim: &Simulation, res: &EnsembleResult, w: &mut BundleWriter) -> Result<serde_json::Value> {
    let csv = cfg.output.csv;
    let l = cfg.ensemble.thickness;
    w.histogram("exit_position", &res.exit_position, csv, &meta(cfg, &[("depth_nm", format!("{l}"))]))?;
    w.histogram("exit_angle", &res.exit_angle, csv, &meta(cfg, &[("depth_nm", format!("{l}"))]))?;
    if let Some(e) = &res.entry {
        w.histogram("entry_position", e, csv, &meta(cfg, &[("depth_nm", "0".into())]))?;
    }
    for (k, (h, z)) in res.planes.iter().zip(&cfg.ensemble.record_planes).enumerate() {
        w.histogram(&format!("plane_{k:02}"), h, csv, &meta(cfg, &[("depth_nm", format!("{z}"))]))?;
    }
    if !res.paths.is_empty() {
        let mut s = String::from("particle,z_nm,x_nm,y_nm,theta_x_rad,theta_y_rad,energy_ev,omega_sq_rad2\n");
        for (id, path) in &res.paths {
            for p in path {
                s.push_str(&format!(
                    "{id},{:.6},{:.9e},{:.9e},{:.9e},{:.9e},{:.6},{:.6e}\n",
                    p.z, p.x, p.y, p.theta_x, p.theta_y, p.energy, p.omega_sq
                ));
            }
        }
        w.write("paths.csv", s)?;
    }
    let v0 = proton_velocity(cfg.beam.energy);
    let summary = json!({
        "ensemble": res.summary,
        "thickness_nm": l,
        "lambda": reduced_thickness(sim.f_r, l, v0)?,
        "f_r_hz": sim.f_r,
        "record_planes_nm": cfg.ensemble.record_planes,
        "plane_on_axis": res.plane_on_axis,
        "exit_on_axis": res.exit_on_axis,
        "exit_flux_enhancement": flux_enhancement(&res.exit_position, sim.geometry.cell_area).ok(),
    });
    w.json("summary.json", &summary)?;
    Ok(summary)
}

fn run_single(cfg: &RunConfig, sim: &Simulation, w: &mut BundleWriter) -> Result<serde_json::Value> {
    let res = w.time("ensemble", |_| run_ensemble(&cfg.ensemble_config(), &sim.medium, &cfg.step, None))?;
    write_ensemble(cfg, sim, &res, w)
}

fn run_scan(cfg: &RunConfig, sim: &Simulation, w: &mut BundleWriter) -> Result<serde_json::Value> {
    let s = &cfg.analysis.scan;
    let scan = w.time("scan", |_| {
        yield_vs_thickness(
            &cfg.ensemble_config(),
            &sim.medium,
            &cfg.step,
            sim.f_r,
            (s.lambda_min, s.lambda_max),
            s.n_points,
            None,
        )
    })?;
    let p = w.path("scan.csv")?;
    scan.write_csv(&p)?;
    w.track("scan.csv")?;
    for (k, h) in scan.planes.iter().enumerate() {
        let m = meta(
            cfg,
            &[
                ("lambda", format!("{}", scan.lambda_values[k])),
                ("depth_nm", format!("{}", scan.thickness_nm[k])),
            ],
        );
        w.histogram(&format!("scan_planes/plane_{k:02}"), h, false, &m)?;
    }
    let peak = scan.peak_index();
    let lines = w.time("rainbow_lines", |_| {
        sim.rainbow_lines(cfg, cfg.beam.tilt_fraction, scan.thickness_nm[peak])
    })?;
    let p = w.path("rainbow_lines.csv")?;
    lines.write_csv(&p)?;
    w.track("rainbow_lines.csv")?;
    let summary = json!({
        "points": scan.points(),
        "peak_lambda": scan.lambda_values[peak],
        "peak_thickness_nm": scan.thickness_nm[peak],
        "peak_width_lambda": scan.peak_width().ok(),
        "f_r_hz": sim.f_r,
        "psi_c_rad": sim.psi_c,
        "on_axis_radius_nm": scan.on_axis_radius,
        "ensemble": scan.summary,
        "rainbow_lines": lines.lines.len(),
    });
    w.json("summary.json", &summary)?;
    Ok(summary)
}

const CUBE_DIR: &str = "cube";

fn run_tilts(cfg: &RunConfig, sim: &Simulation, w: &mut BundleWriter) -> Result<serde_json::Value> {
    let tilts = &cfg.analysis.tilts;
    let cube = w.time("tilt_sweep", |_| {
        tilt_sweep(&cfg.ensemble_config(), &sim.medium, &cfg.step, tilts, None)
    })?;
    let dir = w.dir.join(CUBE_DIR);
    for f in cube.write(&dir)? {
        let rel = f.strip_prefix(&w.dir).expect("cube lives in the bundle").to_string_lossy().replace('\\', "/");
        w.track(&rel)?;
    }
    let dos = dos_projection(&cube)?;
    let mut s = String::from("ix,iy,x_nm,y_nm,weight\n");
    for iy in 0..dos.ny {
        for ix in 0..dos.nx {
            let c = dos.bin_center(ix, iy);
            s.push_str(&format!("{ix},{iy},{:.6},{:.6},{:.9e}\n", c[0], c[1], dos.at(ix, iy)));
        }
    }
    w.write("dos_projection.csv", s)?;
    let mut slices = Vec::new();
    for (k, &t) in tilts.iter().enumerate() {
        let lines = w.time(&format!("rainbow_lines_{k:02}"), |_| {
            sim.rainbow_lines(cfg, t, cfg.ensemble.thickness)
        })?;
        let rel = format!("rainbow_tilt_{k:02}.csv");
        let p = w.path(&rel)?;
        lines.write_csv(&p)?;
        w.track(&rel)?;
        let pos = &cube.position[k];
        let ang = &cube.angle[k];
        slices.push(json!({
            "tilt_fraction": t,
            "exited": cube.totals[k],
            "position_peak": pos.max_bin().2,
            "angle_peak": ang.max_bin().2,
            "position_enhancement": flux_enhancement(pos, sim.geometry.cell_area).ok(),
            "rainbow_lines": lines.lines.len(),
            "closed_rainbow_lines": lines.n_closed(),
        }));
    }
    let summary = json!({ "psi_c_rad": sim.psi_c, "slices": slices });
    w.json("summary.json", &summary)?;
    Ok(summary)
}

fn run_potential_map(cfg: &RunConfig, sim: &Simulation, w: &mut BundleWriter) -> Result<serde_json::Value> {
    let samples = w.time("map", |_| potential_map(&sim.field, cfg.analysis.potential_map_bin))?;
    let mut s = format!("# config_hash: {}\nx_nm,y_nm,potential_ev,grad_norm_ev_nm,electron_density_nm3\n", cfg.hash());
    for p in &samples {
        s.push_str(&format!("{:.6},{:.6},{:.9e},{:.9e},{:.9e}\n", p.x, p.y, p.u_th, p.grad_norm, p.density));
    }
    w.write("potential_map.csv", s)?;
    let summary = json!({ "samples": samples.len(), "bin_nm": cfg.analysis.potential_map_bin });
    w.json("summary.json", &summary)?;
    Ok(summary)
}

fn run_kh_map(cfg: &RunConfig, w: &mut BundleWriter) -> Result<serde_json::Value> {
    let l = &cfg.analysis.laser;
    let laser = LaserParams::new(l.peak_intensity, l.photon_energy)?;
    let src = PointScatterer::moliere(l.impurity_z, [0.0, 0.0]);
    let alpha0 = laser.alpha0_nm();
    let mut header = String::from("r_nm,V0_eV");
    for n in 1..=l.harmonics {
        header.push_str(&format!(",V{n}_abs_eV"));
    }
    header.push_str(",V_static_eV");
    let mut s = format!("# config_hash: {}\n# alpha0_nm: {alpha0}\n{header}\n", cfg.hash());
    let mut skipped = 0usize;
    w.time("quadrature", |_| {
        for k in 1..=l.n_r {
            let r = l.r_max * k as f64 / l.n_r as f64;
            let row = (|| -> Result<String> {
                let mut row = format!("{r:.6},{:.9e}", kh_fourier_component(&src, alpha0, 0, r)?.re);
                for n in 1..=l.harmonics as i32 {
                    row.push_str(&format!(",{:.9e}", kh_fourier_component(&src, alpha0, n, r)?.norm()));
                }
                row.push_str(&format!(",{:.9e}", src.potential(r)?));
                Ok(row)
            })();
            match row {
                Ok(row) => {
                    s.push_str(&row);
                    s.push('\n');
                }
                // The cycle average diverges where the quiver circle meets the
                // impurity; such radii are left out.
                Err(Error::Numerical(_)) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
        Ok(())
    })?;
    w.write("kh_map.csv", s)?;
    let summary = json!({ "laser": laser, "alpha0_nm": alpha0, "skipped_radii": skipped });
    w.json("summary.json", &summary)?;
    Ok(summary)
}

fn run_geometry(cfg: &RunConfig, sim: &Simulation, w: &mut BundleWriter) -> Result<serde_json::Value> {
    let g = &sim.geometry;
    let mut s = String::from("shell,x_nm,y_nm,d_nm,z_offset_nm\n");
    for st in &g.strings {
        s.push_str(&format!(
            "{},{:.9},{:.9},{:.9},{:.9}\n",
            st.shell, st.position[0], st.position[1], st.period, st.z_offset
        ));
    }
    w.write("strings.csv", s)?;
    let mut c = String::from("vertex,x_nm,y_nm\n");
    for (i, v) in g.cell.iter().enumerate() {
        c.push_str(&format!("{i},{:.9},{:.9}\n", v[0], v[1]));
    }
    w.write("cell.csv", c)?;
    let v0 = proton_velocity(cfg.beam.energy);
    let summary = json!({
        "n_strings": g.strings.len(),
        "channel_center_nm": g.channel_center,
        "cell_area_nm2": g.cell_area,
        "inscribed_radius_nm": g.inscribed_radius(),
        "psi_c_rad": sim.psi_c,
        "f_r_hz": sim.f_r,
        "lambda_at_thickness": reduced_thickness(sim.f_r, cfg.ensemble.thickness, v0)?,
    });
    w.json("geometry.json", &summary)?;
    Ok(summary)
}

/// Plot-ready data sets derived from existing bundles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    /// Exit position profiles along the tilt axis, one per tilt, with widths.
    TiltProfiles,
    /// Exit angle-plane maps for every configured tilt.
    AngleMaps,
    /// On-axis yield against reduced thickness.
    ThicknessScan,
    /// Position maps at the scan points nearest reduced thickness 0.24, 0.25, 0.26.
    FocusMaps,
    /// Exit position profiles through the channel centre.
    AxialProfile,
    /// Profiles at the recorded depths and configured transverse positions.
    CrossSections,
    /// Tilt-averaged projection map and the largest-tilt angle map.
    DosMap,
}

impl PlotKind {
    pub const ALL: [PlotKind; 7] = [
        PlotKind::TiltProfiles,
        PlotKind::AngleMaps,
        PlotKind::ThicknessScan,
        PlotKind::FocusMaps,
        PlotKind::AxialProfile,
        PlotKind::CrossSections,
        PlotKind::DosMap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::TiltProfiles => "tilt-profiles",
            PlotKind::AngleMaps => "angle-maps",
            PlotKind::ThicknessScan => "thickness-scan",
            PlotKind::FocusMaps => "focus-maps",
            PlotKind::AxialProfile => "axial-profile",
            PlotKind::CrossSections => "cross-sections",
            PlotKind::DosMap => "dos-map",
        }
    }
}

impl fmt::Display for PlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = PlotKind::ALL.iter().map(|k| k.name()).collect();
                Error::Input(format!("unknown plot kind `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

fn require(root: &Path, command: Command, what: &str) -> Result<OutputBundle> {
    let dir = root.join(command.name());
    let missing = || {
        Error::MissingData(format!(
            "{what} needs the output of `{}` in {}",
            command.name(),
            dir.display()
        ))
    };
    if !dir.join(MANIFEST).exists() {
        return Err(missing());
    }
    let b = OutputBundle::open(&dir)?;
    if !b.manifest.complete {
        return Err(Error::MissingData(format!(
            "{what}: the `{}` bundle in {} is incomplete; rerun it",
            command.name(),
            dir.display()
        )));
    }
    Ok(b)
}

/// Rows `[prefix,]x,y,count` for every bin.
fn flatten(h: &FluxHistogram2D, prefix: Option<&str>) -> String {
    let mut s = String::new();
    for iy in 0..h.ny {
        for ix in 0..h.nx {
            let c = h.bin_center(ix, iy);
            if let Some(p) = prefix {
                s.push_str(p);
                s.push(',');
            }
            s.push_str(&format!("{:.6},{:.6},{}\n", c[0], c[1], h.at(ix, iy)));
        }
    }
    s
}

fn read_scan_rows(path: &Path) -> Result<Vec<(f64, f64, u64, f64)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut rows = Vec::new();
    for r in rdr.deserialize::<(f64, f64, u64, f64)>() {
        rows.push(r.map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

/// Derives the data behind `kind` from bundles under `root`, writing them to
/// `root/plots/<kind>`.
pub fn emit_plot_data(root: &Path, kind: PlotKind, cfg: &RunConfig) -> Result<OutputBundle> {
    let needs = match kind {
        PlotKind::TiltProfiles | PlotKind::AngleMaps | PlotKind::DosMap => Command::TiltSweep,
        PlotKind::ThicknessScan | PlotKind::FocusMaps => Command::ScanThickness,
        PlotKind::AxialProfile | PlotKind::CrossSections => Command::Run,
    };
    let b = require(root, needs, kind.name())?;
    if kind == PlotKind::CrossSections && b.manifest.summary["record_planes_nm"].as_array().is_none_or(|a| a.is_empty()) {
        return Err(Error::MissingData(
            "cross-sections need `run` with ensemble.record_planes set".into(),
        ));
    }
    let mut w = BundleWriter::create(root.join("plots").join(kind.name()), "plot-data", cfg)?;
    let band = cfg.analysis.profile_band;
    let summary = match kind {
        PlotKind::TiltProfiles | PlotKind::AngleMaps | PlotKind::DosMap => {
            let cube = TiltScanCube::read(&b.dir.join(CUBE_DIR))?;
            plot_from_cube(kind, cfg, &cube, band, &mut w)?
        }
        PlotKind::ThicknessScan | PlotKind::FocusMaps => {
            let rows = read_scan_rows(&b.dir.join("scan.csv"))?;
            if kind == PlotKind::ThicknessScan {
                let mut s = String::from("lambda,L_nm,on_axis_yield,enhancement\n");
                for (l, z, y, e) in &rows {
                    s.push_str(&format!("{l:.6},{z:.6},{y},{e:.6}\n"));
                }
                w.write("thickness_scan.csv", s)?;
                json!({ "points": rows.len() })
            } else {
                let mut s = String::from("lambda,x_nm,y_nm,count\n");
                let mut picked = Vec::new();
                for target in [0.24, 0.25, 0.26] {
                    let k = (0..rows.len())
                        .min_by(|&a, &c| (rows[a].0 - target).abs().total_cmp(&(rows[c].0 - target).abs()))
                        .ok_or_else(|| Error::MissingData("thickness scan has no points".into()))?;
                    let h = FluxHistogram2D::read_binary(&b.dir.join(format!("scan_planes/plane_{k:02}.chsf")))?;
                    s.push_str(&flatten(&h, Some(&format!("{:.6}", rows[k].0))));
                    picked.push(rows[k].0);
                }
                w.write("focus_maps.csv", s)?;
                json!({ "lambda": picked })
            }
        }
        PlotKind::AxialProfile | PlotKind::CrossSections => {
            let center = Simulation::build_geometry(cfg)?.channel_center;
            if kind == PlotKind::AxialProfile {
                let h = FluxHistogram2D::read_binary(&b.dir.join("exit_position.chsf"))?;
                let (xs, xc) = x_profile(&h, center, band);
                let (ys, yc) = y_profile(&h, center, band);
                let mut s = String::from("axis,coord_nm,count\n");
                for (x, c) in xs.iter().zip(&xc) {
                    s.push_str(&format!("x,{x:.6},{c}\n"));
                }
                for (y, c) in ys.iter().zip(&yc) {
                    s.push_str(&format!("y,{y:.6},{c}\n"));
                }
                w.write("axial_profile.csv", s)?;
                json!({ "fwhm_x_nm": fwhm(&xs, &xc).ok(), "fwhm_y_nm": fwhm(&ys, &yc).ok() })
            } else {
                let depths: Vec<f64> = serde_json::from_value(b.manifest.summary["record_planes_nm"].clone())
                    .unwrap_or_default();
                let mut s = String::from("depth_nm,x_nm,y_nm,count\n");
                for (k, z) in depths.iter().enumerate() {
                    let h = FluxHistogram2D::read_binary(&b.dir.join(format!("plane_{k:02}.chsf")))?;
                    for &x in &cfg.analysis.profile_x {
                        let (ys, counts) = y_profile(&h, [center[0] + x, center[1]], band);
                        for (y, c) in ys.iter().zip(&counts) {
                            s.push_str(&format!("{z:.6},{x:.6},{y:.6},{c}\n"));
                        }
                    }
                }
                w.write("cross_sections.csv", s)?;
                json!({ "depths_nm": depths, "profile_x_nm": cfg.analysis.profile_x })
            }
        }
    };
    w.json("summary.json", &summary)?;
    w.finish(true, summary)
}

fn plot_from_cube(
    kind: PlotKind,
    cfg: &RunConfig,
    cube: &TiltScanCube,
    band: f64,
    w: &mut BundleWriter,
) -> Result<serde_json::Value> {
    match kind {
        PlotKind::TiltProfiles => {
            let mut s = String::from("tilt_fraction,x_nm,count\n");
            let mut widths = String::from("tilt_fraction,fwhm_nm\n");
            let center = Simulation::build_geometry(cfg)?.channel_center;
            for (t, h) in cube.tilt_fractions.iter().zip(&cube.position) {
                let (xs, ys) = x_profile(h, center, band);
                for (x, c) in xs.iter().zip(&ys) {
                    s.push_str(&format!("{t:.6},{x:.6},{c}\n"));
                }
                let wd = fwhm(&xs, &ys).map(|v| format!("{v:.6}")).unwrap_or_default();
                widths.push_str(&format!("{t:.6},{wd}\n"));
            }
            w.write("tilt_profiles.csv", s)?;
            w.write("tilt_widths.csv", widths)?;
            Ok(json!({ "tilts": cube.tilt_fractions }))
        }
        PlotKind::AngleMaps => {
            let missing: Vec<String> = cfg
                .analysis
                .tilts
                .iter()
                .filter(|t| !cube.tilt_fractions.iter().any(|c| (*c - **t).abs() < 1e-9))
                .map(|t| format!("{t}"))
                .collect();
            if !missing.is_empty() {
                return Err(Error::MissingData(format!(
                    "angle maps need tilt-sweep slices for tilt fractions [{}]; rerun `tilt-sweep` with analysis.tilts covering them",
                    missing.join(", ")
                )));
            }
            let mut s = String::from("tilt_fraction,theta_x_mrad,theta_y_mrad,count\n");
            for (t, h) in cube.tilt_fractions.iter().zip(&cube.angle) {
                s.push_str(&flatten(h, Some(&format!("{t:.6}"))));
            }
            w.write("angle_maps.csv", s)?;
            Ok(json!({ "tilts": cube.tilt_fractions }))
        }
        PlotKind::DosMap => {
            let dos = dos_projection(cube)?;
            let mut s = String::from("x_nm,y_nm,weight\n");
            for iy in 0..dos.ny {
                for ix in 0..dos.nx {
                    let c = dos.bin_center(ix, iy);
                    s.push_str(&format!("{:.6},{:.6},{:.9e}\n", c[0], c[1], dos.at(ix, iy)));
                }
            }
            w.write("dos_map.csv", s)?;
            let k = (0..cube.tilt_fractions.len())
                .max_by(|&a, &b| cube.tilt_fractions[a].total_cmp(&cube.tilt_fractions[b]))
                .expect("cube has slices");
            let t = cube.tilt_fractions[k];
            let mut a = String::from("theta_x_mrad,theta_y_mrad,count\n");
            a.push_str(&flatten(&cube.angle[k], None));
            w.write("angle_map_largest_tilt.csv", a)?;
            Ok(json!({ "largest_tilt": t, "slices": cube.tilt_fractions.len() }))
        }
        _ => unreachable!("not a cube plot"),
    }
}
