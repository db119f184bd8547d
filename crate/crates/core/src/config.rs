//! Run configuration: a versioned TOML schema with defaults and validation.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::MapTarget;
use crate::constants::{ON_AXIS_RADIUS_NM, POSITION_BIN_NM};
use crate::crystal::{build_channel_strings, AtomicString, Axis, BeamSpec, ChannelGeometry, CrystalSpec};
use crate::error::{Error, Result};
use crate::montecarlo::EnsembleConfig;
use crate::potentials::{BornTerm, ScreeningKind};
use crate::tables::TableResolution;
use crate::transport::StepConfig;
use crate::vec2::Vec2;

pub const SCHEMA_VERSION: u32 = 1;

/// Largest tilt fraction accepted without `allow_large_tilt`.
pub const MAX_TILT_FRACTION: f64 = 0.20;

fn key_err(key: &str, message: impl Into<String>) -> Error {
    Error::ConfigKey {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrystalSection {
    pub z2: u32,
    /// nm.
    pub lattice_constant: f64,
    pub axis: Axis,
    /// nm.
    pub string_period: f64,
    /// pm.
    pub sigma_th_pm: f64,
    /// K.
    pub temperature: f64,
    /// String shells around the channel (4, 12, 20, ... strings).
    pub shells: u32,
    /// Explicit string list; replaces the generated layout when non-empty.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub strings: Vec<AtomicString>,
    /// Channel centre for an explicit string list, nm.
    pub channel_center: Vec2,
}

impl Default for CrystalSection {
    fn default() -> Self {
        let s = CrystalSpec::silicon();
        CrystalSection {
            z2: s.z2,
            lattice_constant: s.lattice_constant,
            axis: s.axis,
            string_period: s.string_period,
            sigma_th_pm: s.sigma_th_pm,
            temperature: s.temperature,
            shells: 3,
            strings: Vec::new(),
            channel_center: [0.0, 0.0],
        }
    }
}

impl CrystalSection {
    pub fn spec(&self) -> CrystalSpec {
        CrystalSpec {
            z2: self.z2,
            lattice_constant: self.lattice_constant,
            axis: self.axis,
            string_period: self.string_period,
            sigma_th_pm: self.sigma_th_pm,
            temperature: self.temperature,
        }
    }

    pub fn geometry(&self) -> Result<ChannelGeometry> {
        if self.strings.is_empty() {
            build_channel_strings(&self.spec(), self.shells)
        } else {
            ChannelGeometry::from_strings(self.strings.clone(), self.channel_center)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamSection {
    /// eV.
    pub energy: f64,
    #[serde(default)]
    pub tilt_fraction: f64,
    #[serde(default)]
    pub divergence_mrad: f64,
    #[serde(default)]
    pub tilt_azimuth: f64,
}

impl BeamSection {
    pub fn spec(&self) -> BeamSpec {
        BeamSpec {
            energy: self.energy,
            tilt_fraction: self.tilt_fraction,
            divergence_mrad: self.divergence_mrad,
            tilt_azimuth: self.tilt_azimuth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub n_particles: u64,
    pub seed: u64,
    /// nm.
    pub thickness: f64,
    #[serde(default)]
    pub record_planes: Vec<f64>,
    #[serde(default)]
    pub record_entry: bool,
    #[serde(default)]
    pub path_every: u64,
    #[serde(default = "default_position_bin")]
    pub position_bin: f64,
    #[serde(default = "default_angle_bin")]
    pub angle_bin: f64,
}

fn default_position_bin() -> f64 {
    POSITION_BIN_NM
}

fn default_angle_bin() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PotentialSection {
    pub kind: ScreeningKind,
    pub z1: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub born: Option<BornTerm>,
    /// Bicubic table spacing for the outer strings, nm.
    pub table_grid: f64,
    /// Radial table spacing for the inner strings, nm.
    pub table_radial: f64,
}

impl Default for PotentialSection {
    fn default() -> Self {
        let r = TableResolution::default();
        PotentialSection {
            kind: ScreeningKind::Moliere,
            z1: 1,
            born: None,
            table_grid: r.grid,
            table_radial: r.radial,
        }
    }
}

impl PotentialSection {
    pub fn resolution(&self) -> TableResolution {
        TableResolution {
            grid: self.table_grid,
            radial: self.table_radial,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanSection {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub n_points: usize,
}

impl Default for ScanSection {
    fn default() -> Self {
        ScanSection {
            lambda_min: 0.15,
            lambda_max: 0.35,
            n_points: 21,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JacobianSection {
    /// Nodes per side of the impact-parameter lattice.
    pub n_grid: usize,
    /// Lattice half width as a fraction of half the inner-string distance.
    pub half_width_fraction: f64,
    pub target: MapTarget,
}

impl Default for JacobianSection {
    fn default() -> Self {
        JacobianSection {
            n_grid: 61,
            half_width_fraction: 0.9,
            target: MapTarget::AnglePlane,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LaserSection {
    /// W/cm^2.
    pub peak_intensity: f64,
    /// eV.
    pub photon_energy: f64,
    /// Impurity atomic number.
    pub impurity_z: u32,
    /// Largest radius of the dressed-potential table, nm.
    pub r_max: f64,
    pub n_r: usize,
    /// Harmonics `|V_n|` reported beyond `V_0`.
    pub harmonics: u32,
}

impl Default for LaserSection {
    fn default() -> Self {
        LaserSection {
            peak_intensity: 2.16e18,
            photon_energy: 27.21,
            impurity_z: 15,
            r_max: 0.6,
            n_r: 240,
            harmonics: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub scan: ScanSection,
    pub tilts: Vec<f64>,
    /// Radius around the channel centre counted as on-axis, nm.
    pub on_axis_radius: f64,
    /// Abscissae (nm) of the y-profiles taken through recorded planes.
    pub profile_x: Vec<f64>,
    /// Half width (nm) of the band summed into a profile.
    pub profile_band: f64,
    pub jacobian: JacobianSection,
    /// Bin of the potential map, nm.
    pub potential_map_bin: f64,
    pub laser: LaserSection,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            scan: ScanSection::default(),
            tilts: vec![0.0, 0.05, 0.10, 0.15, 0.20],
            on_axis_radius: ON_AXIS_RADIUS_NM,
            profile_x: vec![0.0, 0.02, 0.04],
            profile_band: 0.0025,
            jacobian: JacobianSection::default(),
            potential_map_bin: POSITION_BIN_NM,
            laser: LaserSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Also write histograms as CSV next to the binary grids.
    pub csv: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            csv: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    /// Accept tilts above 0.20 of the critical angle.
    #[serde(default)]
    pub allow_large_tilt: bool,
    #[serde(default)]
    pub crystal: CrystalSection,
    pub beam: BeamSection,
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub step: StepConfig,
    #[serde(default)]
    pub potential: PotentialSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

/// Parses and validates a TOML configuration. Errors name the offending key.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = toml::Deserializer::new(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let inner = e.into_inner();
        let message = inner.message().to_string();
        if key.is_empty() || key == "." {
            Error::Config(message)
        } else {
            key_err(&key, message)
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// A configuration with every optional field at its default.
    pub fn minimal(energy: f64, thickness: f64, n_particles: u64, seed: u64) -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            allow_large_tilt: false,
            crystal: CrystalSection::default(),
            beam: BeamSection {
                energy,
                tilt_fraction: 0.0,
                divergence_mrad: 0.0,
                tilt_azimuth: 0.0,
            },
            ensemble: EnsembleSection {
                n_particles,
                seed,
                thickness,
                record_planes: Vec::new(),
                record_entry: false,
                path_every: 0,
                position_bin: POSITION_BIN_NM,
                angle_bin: 0.05,
            },
            step: StepConfig::default(),
            potential: PotentialSection::default(),
            analysis: AnalysisSection::default(),
            output: OutputSection::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(key_err(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        self.crystal
            .spec()
            .validate()
            .map_err(|e| key_err("crystal", e.to_string()))?;
        if self.crystal.shells == 0 {
            return Err(key_err("crystal.shells", "at least one shell is required"));
        }
        let b = &self.beam;
        if !(b.energy > 0.0) {
            return Err(key_err("beam.energy", "must be positive"));
        }
        if !(b.divergence_mrad >= 0.0) {
            return Err(key_err("beam.divergence_mrad", "must be non-negative"));
        }
        self.check_tilt("beam.tilt_fraction", b.tilt_fraction)?;
        for &t in &self.analysis.tilts {
            self.check_tilt("analysis.tilts", t)?;
        }
        let e = &self.ensemble;
        if e.n_particles == 0 {
            return Err(key_err("ensemble.n_particles", "must be at least 1"));
        }
        if !(e.thickness > 0.0) {
            return Err(key_err("ensemble.thickness", "must be positive"));
        }
        if e.record_planes.iter().any(|&z| !(z > 0.0 && z < e.thickness)) {
            return Err(key_err("ensemble.record_planes", "depths must lie strictly inside (0, thickness)"));
        }
        if e.record_planes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(key_err("ensemble.record_planes", "depths must increase"));
        }
        if !(e.position_bin > 0.0) {
            return Err(key_err("ensemble.position_bin", "must be positive"));
        }
        if !(e.angle_bin > 0.0) {
            return Err(key_err("ensemble.angle_bin", "must be positive"));
        }
        self.step.validate()?;
        let p = &self.potential;
        if p.z1 == 0 {
            return Err(key_err("potential.z1", "must be at least 1"));
        }
        if let Some(born) = p.born {
            if !(born.n > 1.0) {
                return Err(key_err("potential.born.n", "exponent must exceed 1"));
            }
        }
        if !(p.table_grid > 0.0 && p.table_radial > 0.0) {
            return Err(key_err("potential.table_grid", "table spacings must be positive"));
        }
        let a = &self.analysis;
        let s = &a.scan;
        if !(s.lambda_min > 0.0 && s.lambda_max <= 0.5 && s.lambda_min < s.lambda_max) {
            return Err(key_err("analysis.scan", "reduced thickness range must satisfy 0 < min < max <= 0.5"));
        }
        if s.n_points < 2 {
            return Err(key_err("analysis.scan.n_points", "at least 2 points"));
        }
        if !(a.on_axis_radius > 0.0) {
            return Err(key_err("analysis.on_axis_radius", "must be positive"));
        }
        if !(a.profile_band >= 0.0) {
            return Err(key_err("analysis.profile_band", "must be non-negative"));
        }
        if a.jacobian.n_grid < 3 {
            return Err(key_err("analysis.jacobian.n_grid", "at least 3 nodes per side"));
        }
        if !(a.jacobian.half_width_fraction > 0.0 && a.jacobian.half_width_fraction <= 1.0) {
            return Err(key_err("analysis.jacobian.half_width_fraction", "must lie in (0, 1]"));
        }
        if !(a.potential_map_bin > 0.0) {
            return Err(key_err("analysis.potential_map_bin", "must be positive"));
        }
        let l = &a.laser;
        if !(l.peak_intensity >= 0.0 && l.photon_energy > 0.0) {
            return Err(key_err("analysis.laser", "intensity must be non-negative and photon energy positive"));
        }
        if l.impurity_z == 0 || !(l.r_max > 0.0) || l.n_r < 2 {
            return Err(key_err("analysis.laser", "impurity Z >= 1, r_max > 0 and n_r >= 2 required"));
        }
        Ok(())
    }

    fn check_tilt(&self, key: &str, t: f64) -> Result<()> {
        if !(0.0..1.0).contains(&t) {
            return Err(key_err(key, format!("tilt fraction {t} must lie in [0, 1)")));
        }
        if t > MAX_TILT_FRACTION && !self.allow_large_tilt {
            return Err(key_err(
                key,
                format!("tilt fraction {t} exceeds {MAX_TILT_FRACTION}; set allow_large_tilt = true to override"),
            ));
        }
        Ok(())
    }

    pub fn ensemble_config(&self) -> EnsembleConfig {
        let e = &self.ensemble;
        EnsembleConfig {
            n_particles: e.n_particles,
            seed: e.seed,
            beam: self.beam.spec(),
            thickness: e.thickness,
            record_planes: e.record_planes.clone(),
            record_entry: e.record_entry,
            path_every: e.path_every,
            position_bin: e.position_bin,
            angle_bin: e.angle_bin,
            on_axis_radius: self.analysis.on_axis_radius,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize configuration: {e}")))
    }

    /// SHA-256 of the canonical JSON form, hex encoded. The output directory
    /// is left out: where results are written does not change them.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output.dir = PathBuf::new();
        let canonical = serde_json::to_vec(&c).expect("configuration serializes to JSON");
        hex::encode(Sha256::digest(canonical))
    }
}
