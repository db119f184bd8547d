//! Force sources seen by the trajectory integrator.

use crate::crystal::ChannelGeometry;
use crate::potentials::{HarmonicField, PotentialField, ScreeningModel, TransverseField};
use crate::vec2::{self, Vec2};

/// Potential and gradient over the transverse plane, with one string optionally
/// left out of the continuum sum.
pub trait TransverseForce: Send + Sync {
    fn potential_gradient(&self, p: Vec2, excluded: Option<usize>) -> (f64, Vec2);
}

/// Parameters of the discrete proton-atom collisions with one string.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionModel {
    pub model: ScreeningModel,
    pub z1: u32,
    pub z2: u32,
    pub sigma_th_pm: f64,
}

/// A channel: geometry, continuum force, electron density and collision data.
pub trait ChannelMedium: TransverseForce {
    fn geometry(&self) -> &ChannelGeometry;
    /// Laplacian of the full smeared potential, eV/nm^2.
    fn laplacian(&self, p: Vec2) -> f64;
    fn collision(&self) -> &CollisionModel;

    /// Line-integrated transverse force of one atom at impact parameter `r`,
    /// eV: `2 Z1 Z2 e^2 sum_j alpha_j (beta_j / a) K1(beta_j r / a)`.
    /// Dividing by `p v` gives the impulse-approximation kick.
    fn kick_strength(&self, r: f64) -> f64 {
        self.collision().kick_strength(r)
    }

    /// Squared distance to, and index of, the closest cell-vertex string.
    fn nearest_vertex(&self, p: Vec2) -> (usize, f64) {
        let g = self.geometry();
        let mut best = (0, f64::INFINITY);
        for &i in &g.inner {
            let d = vec2::sub(p, g.strings[i].position);
            let r2 = d[0] * d[0] + d[1] * d[1];
            if r2 < best.1 {
                best = (i, r2);
            }
        }
        best
    }
}

impl CollisionModel {
    pub fn kick_strength(&self, r: f64) -> f64 {
        let a = self.model.a;
        let sum: f64 = self
            .model
            .terms()
            .map(|(al, be)| al * be / a * crate::bessel::k1(be * r / a))
            .sum();
        2.0 * self.z1 as f64 * self.z2 as f64 * crate::constants::E2 * sum
    }
}

impl TransverseForce for HarmonicField {
    fn potential_gradient(&self, p: Vec2, _excluded: Option<usize>) -> (f64, Vec2) {
        (self.potential(p), self.gradient(p))
    }
}

impl TransverseForce for PotentialField {
    fn potential_gradient(&self, p: Vec2, excluded: Option<usize>) -> (f64, Vec2) {
        let mut u = 0.0;
        let mut g = [0.0; 2];
        for (i, s) in self.geometry.strings.iter().enumerate() {
            if Some(i) == excluded {
                continue;
            }
            let d = vec2::sub(p, s.position);
            let r = vec2::norm(d);
            let (f, f1, _) = self.string_profile(i).derivatives(r);
            u += f;
            g[0] += f1 * d[0] / r;
            g[1] += f1 * d[1] / r;
        }
        (u, g)
    }
}

/// Exact evaluation of a [`PotentialField`] packaged as a medium.
#[derive(Debug, Clone)]
pub struct ExactMedium {
    pub field: PotentialField,
    collision: CollisionModel,
}

impl ExactMedium {
    pub fn new(field: PotentialField) -> Self {
        let collision = CollisionModel {
            model: field.model.clone(),
            z1: field.z1,
            z2: field.z2,
            sigma_th_pm: field.sigma_th_pm,
        };
        ExactMedium { field, collision }
    }
}

impl TransverseForce for ExactMedium {
    fn potential_gradient(&self, p: Vec2, excluded: Option<usize>) -> (f64, Vec2) {
        self.field.potential_gradient(p, excluded)
    }
}

impl ChannelMedium for ExactMedium {
    fn geometry(&self) -> &ChannelGeometry {
        &self.field.geometry
    }
    fn laplacian(&self, p: Vec2) -> f64 {
        TransverseField::laplacian(&self.field, p)
    }
    fn collision(&self) -> &CollisionModel {
        &self.collision
    }
}
