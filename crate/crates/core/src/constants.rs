//! Physical constants and unit conversions.
//!
//! Internal units are nm for lengths and eV for energies, with the Gaussian
//! `e^2 = 1.439965 eV nm`. Electron-gas quantities (density, stopping,
//! plasma frequency) are evaluated in Hartree atomic units and converted at
//! the boundary.

/// Squared elementary charge, eV nm.
pub const E2: f64 = 1.439965;

/// Bohr radius, nm.
pub const BOHR_NM: f64 = 0.052_917_721_09;

/// Hartree energy, eV.
pub const HARTREE_EV: f64 = 27.211_386_245_988;

/// Proton rest energy, eV.
pub const PROTON_REST_EV: f64 = 938.272e6;

/// Proton-to-electron mass ratio.
pub const PROTON_ELECTRON_MASS_RATIO: f64 = 1_836.152_673_43;

/// Speed of light, m/s.
pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;

/// Inverse fine-structure constant; the speed of light in atomic units.
pub const INV_FINE_STRUCTURE: f64 = 137.035_999_084;

/// Reduced Planck constant, eV s.
pub const HBAR_EV_S: f64 = 6.582_119_569e-16;

/// Atomic unit of time, s.
pub const AU_TIME_S: f64 = 2.418_884_326_585_7e-17;

/// Atomic unit of velocity, m/s.
pub const AU_VELOCITY: f64 = SPEED_OF_LIGHT / INV_FINE_STRUCTURE;

/// Atomic unit of intensity for a linearly polarized field of unit amplitude, W/cm^2.
pub const AU_INTENSITY_W_CM2: f64 = 3.509_445e16;

/// Average transverse oscillation frequency near the channel axis used to
/// define the reduced thickness, Hz.
pub const REFERENCE_TRANSVERSE_FREQUENCY: f64 = 5.94e13;

/// Default on-axis yield radius: one tenth of the Bohr radius, nm.
pub const ON_AXIS_RADIUS_NM: f64 = 0.0053;

/// Default transverse bin size, nm.
pub const POSITION_BIN_NM: f64 = 0.005;

/// Convert an electron density from nm^-3 to bohr^-3.
pub fn density_to_au(n_nm3: f64) -> f64 {
    n_nm3 * BOHR_NM.powi(3)
}

/// Convert an electron density from bohr^-3 to nm^-3.
pub fn density_from_au(n_au: f64) -> f64 {
    n_au / BOHR_NM.powi(3)
}

/// Convert a stopping power from Hartree/bohr to eV/nm.
pub fn stopping_from_au(s_au: f64) -> f64 {
    s_au * HARTREE_EV / BOHR_NM
}

/// Convert a length from bohr to nm.
pub fn length_from_au(l_au: f64) -> f64 {
    l_au * BOHR_NM
}

/// Convert a length from nm to bohr.
pub fn length_to_au(l_nm: f64) -> f64 {
    l_nm / BOHR_NM
}

/// Convert a velocity from m/s to atomic units.
pub fn velocity_to_au(v: f64) -> f64 {
    v / AU_VELOCITY
}

/// Relativistic kinematics of a proton with kinetic energy `e_kin` (eV).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub gamma: f64,
    pub beta: f64,
    /// Velocity, m/s.
    pub velocity: f64,
    /// Product of momentum and velocity, eV. Tends to `2 e_kin` as beta -> 0.
    pub pv: f64,
}

impl Kinematics {
    pub fn proton(e_kin: f64) -> Self {
        let t = e_kin / PROTON_REST_EV;
        let gamma = 1.0 + t;
        let beta2 = t * (2.0 + t) / (gamma * gamma);
        let beta = beta2.sqrt();
        Kinematics {
            gamma,
            beta,
            velocity: beta * SPEED_OF_LIGHT,
            pv: PROTON_REST_EV * t * (2.0 + t) / gamma,
        }
    }

    /// Velocity in atomic units.
    pub fn velocity_au(&self) -> f64 {
        self.beta * INV_FINE_STRUCTURE
    }
}
