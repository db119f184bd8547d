//! Single-proton transport through the channel.
//!
//! Transverse motion is paraxial, `x'' = -grad U / (p v)`, integrated with
//! classical RK4. Each step optionally adds electronic energy loss, the
//! matching growth of the angular dispersion with a Gaussian kick, and
//! impulse-approximation kicks from the atoms of the nearest string, whose
//! continuum term is then left out of the force.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constants::{
    density_to_au, stopping_from_au, Kinematics, AU_VELOCITY, BOHR_NM, PROTON_ELECTRON_MASS_RATIO,
};
use crate::crystal::thermal_displacement;
use crate::error::{Error, Result};
use crate::medium::{ChannelMedium, CollisionModel, TransverseForce};
use crate::potentials::density_from_laplacian;
use crate::vec2::{self, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Status {
    Channeled,
    Dechanneled,
    Exited,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtonState {
    /// Transverse position, nm.
    pub position: Vec2,
    /// Transverse angles, rad.
    pub angle: Vec2,
    /// Kinetic energy, eV.
    pub energy: f64,
    /// Depth, nm.
    pub depth: f64,
    /// Accumulated angular dispersion, rad^2.
    pub omega_sq: f64,
    pub status: Status,
}

impl ProtonState {
    pub fn new(position: Vec2, angle: Vec2, energy: f64) -> Self {
        ProtonState {
            position,
            angle,
            energy,
            depth: 0.0,
            omega_sq: 0.0,
            status: Status::Channeled,
        }
    }

    /// `(p v / 2) theta^2 + U`, eV.
    pub fn transverse_energy<F: TransverseForce + ?Sized>(&self, field: &F, excluded: Option<usize>) -> f64 {
        let pv = Kinematics::proton(self.energy).pv;
        0.5 * pv * vec2::dot(self.angle, self.angle) + field.potential_gradient(self.position, excluded).0
    }
}

/// Electronic stopping model used along the path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingModel {
    /// Local-density formula with the density taken from the potential Laplacian.
    Local,
    /// Plasmon / single-particle split with `N = n_e / Z_val`.
    Valence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepConfig {
    /// Step length, nm.
    pub dz: f64,
    pub stopping_enabled: bool,
    pub scattering_enabled: bool,
    pub binary_collisions_enabled: bool,
    pub stopping_model: StoppingModel,
    pub z_val: f64,
    pub z_loc: f64,
    /// Fermi velocity of the valence electrons, m/s.
    pub v_fermi: f64,
    /// Nearest-string reassignment hysteresis, nm.
    pub hysteresis: f64,
    /// Dechanneling distance from a string axis in units of the thermal amplitude.
    pub axis_guard_sigma: f64,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig {
            dz: 0.1357,
            stopping_enabled: true,
            scattering_enabled: true,
            binary_collisions_enabled: true,
            stopping_model: StoppingModel::Local,
            z_val: 4.0,
            z_loc: 4.0,
            v_fermi: 2.09e6,
            hysteresis: 0.01,
            axis_guard_sigma: 0.1,
        }
    }
}

impl StepConfig {
    /// Continuum-only dynamics: no loss, no scattering, no discrete atoms.
    pub fn deterministic() -> Self {
        StepConfig {
            stopping_enabled: false,
            scattering_enabled: false,
            binary_collisions_enabled: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dz > 0.0) {
            return Err(Error::ConfigKey {
                key: "step.dz".into(),
                message: "must be positive".into(),
            });
        }
        if !(self.z_val >= 0.0 && self.z_loc >= 0.0) {
            return Err(Error::ConfigKey {
                key: "step.z_val".into(),
                message: "effective electron numbers must be non-negative".into(),
            });
        }
        if !(self.v_fermi > 0.0) {
            return Err(Error::ConfigKey {
                key: "step.v_fermi".into(),
                message: "must be positive".into(),
            });
        }
        if !(self.hysteresis >= 0.0 && self.axis_guard_sigma >= 0.0) {
            return Err(Error::ConfigKey {
                key: "step.hysteresis".into(),
                message: "hysteresis and axis guard must be non-negative".into(),
            });
        }
        Ok(())
    }
}

/// `(dx/dz, dy/dz, d theta_x/dz, d theta_y/dz)`.
pub type Derivative = [f64; 4];

pub fn equations_of_motion<F: TransverseForce + ?Sized>(
    state: &ProtonState,
    field: &F,
    excluded: Option<usize>,
) -> Derivative {
    let pv = Kinematics::proton(state.energy).pv;
    derivative(state.position, state.angle, pv, field, excluded)
}

#[inline]
fn derivative<F: TransverseForce + ?Sized>(
    p: Vec2,
    t: Vec2,
    pv: f64,
    field: &F,
    excluded: Option<usize>,
) -> Derivative {
    let g = field.potential_gradient(p, excluded).1;
    [t[0], t[1], -g[0] / pv, -g[1] / pv]
}

/// One classical RK4 step of length `dz` at fixed energy.
pub fn rk4_step<F: TransverseForce + ?Sized>(
    state: &ProtonState,
    field: &F,
    excluded: Option<usize>,
    dz: f64,
) -> ProtonState {
    let pv = Kinematics::proton(state.energy).pv;
    let y0 = [state.position[0], state.position[1], state.angle[0], state.angle[1]];
    let at = |y: [f64; 4]| derivative([y[0], y[1]], [y[2], y[3]], pv, field, excluded);
    let shift = |k: &Derivative, s: f64| [y0[0] + s * k[0], y0[1] + s * k[1], y0[2] + s * k[2], y0[3] + s * k[3]];
    let k1 = at(y0);
    let k2 = at(shift(&k1, 0.5 * dz));
    let k3 = at(shift(&k2, 0.5 * dz));
    let k4 = at(shift(&k3, dz));
    let mut y = y0;
    for i in 0..4 {
        y[i] += dz / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    ProtonState {
        position: [y[0], y[1]],
        angle: [y[2], y[3]],
        depth: state.depth + dz,
        ..*state
    }
}

/// Local-density electronic stopping, eV/nm, for a projectile of charge `z1`
/// at `velocity` (m/s) in an electron gas of density `n_e` (nm^-3).
///
/// Zero when the density vanishes or the logarithm's argument is at most 1.
pub fn stopping_power(z1: u32, velocity: f64, n_e: f64) -> f64 {
    if !(n_e > 0.0) || !(velocity > 0.0) {
        return 0.0;
    }
    let v = velocity / AU_VELOCITY;
    let n = density_to_au(n_e);
    let omega = (4.0 * PI * n).sqrt();
    let arg = 2.0 * v * v / omega;
    if arg <= 1.0 {
        return 0.0;
    }
    let z = z1 as f64;
    stopping_from_au(4.0 * PI * z * z * n / (v * v) * arg.ln())
}

/// Valence-electron stopping split into single-particle and collective
/// parts, eV/nm. `n_atoms` is the density `N` in nm^-3; the plasma frequency
/// follows from `N Z_val`.
pub fn valence_stopping(z1: u32, velocity: f64, n_atoms: f64, z_val: f64, z_loc: f64, v_fermi: f64) -> Result<f64> {
    if !(velocity > v_fermi) {
        return Err(Error::Domain(format!(
            "valence stopping needs v > v_F (v = {velocity:e} m/s, v_F = {v_fermi:e} m/s)"
        )));
    }
    if !(n_atoms >= 0.0 && z_val >= 0.0 && z_loc >= 0.0) {
        return Err(Error::Domain("densities and electron numbers must be non-negative".into()));
    }
    if n_atoms == 0.0 || (z_val == 0.0 && z_loc == 0.0) {
        return Ok(0.0);
    }
    if z_val == 0.0 {
        return Err(Error::Domain("plasma frequency vanishes with Z_val = 0".into()));
    }
    let v = velocity / AU_VELOCITY;
    let vf = v_fermi / AU_VELOCITY;
    let n = density_to_au(n_atoms);
    let omega_p = (4.0 * PI * n * z_val).sqrt();
    let z = z1 as f64;
    let bracket = z_val * (v / vf).ln() + z_loc * (2.0 * v * vf / omega_p).ln();
    Ok(stopping_from_au(4.0 * PI * z * z / (v * v) * n * bracket))
}

/// Growth rate of the angular dispersion, rad^2/nm, from the stopping power
/// (eV/nm) at `velocity` (m/s): `dOmega^2/dz = m_e / (m_p^2 v^2) (-dE/dz)`.
pub fn dispersion_growth(stopping: f64, velocity: f64) -> f64 {
    if stopping <= 0.0 {
        return 0.0;
    }
    // Stopping in hartree per bohr; the rate comes out per bohr.
    let s_au = stopping / crate::constants::HARTREE_EV * BOHR_NM;
    let v = velocity / AU_VELOCITY;
    let mp = PROTON_ELECTRON_MASS_RATIO;
    s_au / (mp * mp * v * v) / BOHR_NM
}

/// Gaussian angular kick with variance `d_omega_sq / 2` per axis.
pub fn multiple_scattering_kick<R: Rng + ?Sized>(d_omega_sq: f64, rng: &mut R) -> Vec2 {
    if !(d_omega_sq > 0.0) {
        return [0.0, 0.0];
    }
    let s = (0.5 * d_omega_sq).sqrt();
    let x: f64 = rng.sample(StandardNormal);
    let y: f64 = rng.sample(StandardNormal);
    [s * x, s * y]
}

/// Impulse from one atom at transverse offset `b` (proton minus atom), with
/// `pv` in eV. Zero at `b = 0`.
pub fn impulse_kick(b: Vec2, coll: &CollisionModel, pv: f64) -> Vec2 {
    let r = vec2::norm(b);
    if r == 0.0 {
        return [0.0, 0.0];
    }
    vec2::scale(b, coll.kick_strength(r) / (pv * r))
}

/// Momentum-approximation kick from the atom nominally at `atom`, displaced
/// by a fresh thermal sample. Head-on samples are redrawn.
pub fn binary_collision_kick<R: Rng + ?Sized>(
    state: &ProtonState,
    atom: Vec2,
    coll: &CollisionModel,
    rng: &mut R,
) -> Vec2 {
    let pv = Kinematics::proton(state.energy).pv;
    jittered_kick(state.position, atom, coll.sigma_th_pm, pv, |r| coll.kick_strength(r), rng)
}

fn jittered_kick<R: Rng + ?Sized>(
    p: Vec2,
    atom: Vec2,
    sigma_th_pm: f64,
    pv: f64,
    strength: impl Fn(f64) -> f64,
    rng: &mut R,
) -> Vec2 {
    for _ in 0..64 {
        let jitter = thermal_displacement(sigma_th_pm, rng);
        let b = vec2::sub(p, vec2::add(atom, vec2::scale(jitter, 1e-3)));
        let r = vec2::norm(b);
        if r > 0.0 {
            return vec2::scale(b, strength(r) / (pv * r));
        }
        if sigma_th_pm == 0.0 {
            break;
        }
    }
    [0.0, 0.0]
}

/// One recorded point along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSample {
    pub z: f64,
    pub x: f64,
    pub y: f64,
    pub theta_x: f64,
    pub theta_y: f64,
    pub energy: f64,
    pub omega_sq: f64,
}

impl From<&ProtonState> for PathSample {
    fn from(s: &ProtonState) -> Self {
        PathSample {
            z: s.depth,
            x: s.position[0],
            y: s.position[1],
            theta_x: s.angle[0],
            theta_y: s.angle[1],
            energy: s.energy,
            omega_sq: s.omega_sq,
        }
    }
}

/// Recording requests for [`propagate_trajectory`].
pub struct Recorder<'a> {
    /// Sorted depths, nm, at which `on_plane` is called while channeled.
    pub planes: &'a [f64],
    pub on_plane: &'a mut dyn FnMut(usize, &ProtonState),
    pub path: Option<&'a mut Vec<PathSample>>,
}

/// Propagates `initial` to depth `length` or until it dechannels.
///
/// Steps are shortened so that every recording plane is hit exactly.
pub fn propagate_trajectory<M, R>(
    initial: &ProtonState,
    medium: &M,
    length: f64,
    cfg: &StepConfig,
    rng: &mut R,
    mut recorder: Option<Recorder<'_>>,
) -> Result<ProtonState>
where
    M: ChannelMedium + ?Sized,
    R: Rng + ?Sized,
{
    let geom = medium.geometry();
    if !(length > 0.0) {
        return Err(Error::Domain("crystal thickness must be positive".into()));
    }
    if !geom.contains(initial.position) {
        return Err(Error::Domain(format!(
            "initial position ({:.5}, {:.5}) nm is outside the channel cell",
            initial.position[0], initial.position[1]
        )));
    }
    if !(initial.energy > 0.0) {
        return Err(Error::Domain("proton energy must be positive".into()));
    }
    let coll = medium.collision();
    let guard = (cfg.axis_guard_sigma * coll.sigma_th_pm * 1e-3).max(crate::potentials::AXIS_GUARD_NM);
    let mut s = *initial;
    s.status = Status::Channeled;
    let guard2 = guard * guard;
    let mut nearest = cfg
        .binary_collisions_enabled
        .then(|| medium.nearest_vertex(s.position).0);
    let mut next_plane = 0;
    if let Some(rec) = recorder.as_mut() {
        while next_plane < rec.planes.len() && rec.planes[next_plane] <= s.depth {
            (rec.on_plane)(next_plane, &s);
            next_plane += 1;
        }
        if let Some(path) = rec.path.as_mut() {
            path.push(PathSample::from(&s));
        }
    }
    while s.depth < length {
        let mut target = (s.depth + cfg.dz).min(length);
        if let Some(rec) = recorder.as_ref() {
            if next_plane < rec.planes.len() && rec.planes[next_plane] < target {
                target = rec.planes[next_plane];
            }
        }
        let h = target - s.depth;
        if let Some(k) = nearest {
            let (j, dj2) = medium.nearest_vertex(s.position);
            if j != k {
                let dk = vec2::norm(vec2::sub(s.position, geom.strings[k].position));
                if dj2.sqrt() < dk - cfg.hysteresis {
                    nearest = Some(j);
                }
            }
        }
        let kin = Kinematics::proton(s.energy);
        let mut next = rk4_step(&s, medium, nearest, h);
        next.depth = target;
        if cfg.stopping_enabled || cfg.scattering_enabled {
            let n_e = density_from_laplacian(medium.laplacian(s.position), coll.z1).max(0.0);
            let stopping = match cfg.stopping_model {
                StoppingModel::Local => stopping_power(coll.z1, kin.velocity, n_e),
                StoppingModel::Valence => {
                    if cfg.z_val > 0.0 {
                        valence_stopping(coll.z1, kin.velocity, n_e / cfg.z_val, cfg.z_val, cfg.z_loc, cfg.v_fermi)?
                    } else {
                        0.0
                    }
                }
            };
            if cfg.stopping_enabled {
                next.energy -= stopping * h;
            }
            let d_omega = dispersion_growth(stopping, kin.velocity) * h;
            next.omega_sq += d_omega;
            if cfg.scattering_enabled {
                next.angle = vec2::add(next.angle, multiple_scattering_kick(d_omega, rng));
            }
        }
        if let Some(k) = nearest {
            let string = &geom.strings[k];
            let pv = kin.pv;
            for _ in string.atoms_between(s.depth, target) {
                let kick = jittered_kick(next.position, string.position, coll.sigma_th_pm, pv, |r| medium.kick_strength(r), rng);
                next.angle = vec2::add(next.angle, kick);
            }
        }
        s = next;
        let dechanneled = !(s.energy > 0.0)
            || !s.position.iter().chain(&s.angle).all(|v| v.is_finite())
            || !geom.contains(s.position)
            || medium.nearest_vertex(s.position).1 < guard2;
        if let Some(rec) = recorder.as_mut() {
            if let Some(path) = rec.path.as_mut() {
                path.push(PathSample::from(&s));
            }
        }
        if dechanneled {
            s.status = Status::Dechanneled;
            return Ok(s);
        }
        if let Some(rec) = recorder.as_mut() {
            while next_plane < rec.planes.len() && rec.planes[next_plane] <= s.depth {
                (rec.on_plane)(next_plane, &s);
                next_plane += 1;
            }
        }
    }
    s.status = Status::Exited;
    Ok(s)
}
