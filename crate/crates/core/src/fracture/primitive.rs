//! Rough solid primitives used as fracture cutters.

use nalgebra::{Quaternion, UnitQuaternion};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    Sphere,
    Box,
    Ellipsoid,
}

/// A sphere, box or ellipsoid in a rotated frame whose radius is
/// perturbed by smooth radial value noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveSpec {
    pub kind: PrimitiveKind,
    pub center: [f64; 3],
    /// Radii (sphere, ellipsoid) or half-extents (box).
    pub radii: [f64; 3],
    /// Unit quaternion `[w, x, y, z]` taking local to world axes.
    pub rotation: [f64; 4],
    pub noise_amplitude: f64,
    pub noise_seed: u64,
}

const OCTAVES: [(f64, f64); 3] = [(2.0, 0.5), (4.0, 0.25), (8.0, 0.125)];

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, i: i64, j: i64, k: i64) -> f64 {
    let h = mix(seed ^ mix(i as u64 ^ mix(j as u64 ^ mix(k as u64))));
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn value_noise(seed: u64, p: &Vec3) -> f64 {
    let base = p.map(f64::floor);
    let f = p - base;
    let s = f.map(|t| t * t * (3.0 - 2.0 * t));
    let (i, j, k) = (base.x as i64, base.y as i64, base.z as i64);
    let mut acc = 0.0;
    for c in 0..8 {
        let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
        let w = (if dx == 1 { s.x } else { 1.0 - s.x })
            * (if dy == 1 { s.y } else { 1.0 - s.y })
            * (if dz == 1 { s.z } else { 1.0 - s.z });
        acc += w * lattice(seed, i + dx, j + dy, k + dz);
    }
    acc
}

/// Three-octave value noise on the unit sphere, in `[-1, 1]`.
pub fn radial_noise(seed: u64, direction: &Vec3) -> f64 {
    let total: f64 = OCTAVES.iter().map(|o| o.1).sum();
    OCTAVES
        .iter()
        .enumerate()
        .map(|(o, &(freq, amp))| amp * value_noise(seed.wrapping_add(o as u64), &(direction * freq)))
        .sum::<f64>()
        / total
}

impl PrimitiveSpec {
    pub fn validate(&self) -> Result<()> {
        if self.radii.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidArgument(format!("radii must be positive: {:?}", self.radii)));
        }
        if self.kind == PrimitiveKind::Sphere
            && (self.radii[0] != self.radii[1] || self.radii[0] != self.radii[2])
        {
            return Err(Error::InvalidArgument("sphere radii must be equal".into()));
        }
        let norm2: f64 = self.rotation.iter().map(|x| x * x).sum();
        if (norm2.sqrt() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "rotation quaternion norm {} is not 1",
                norm2.sqrt()
            )));
        }
        if !(self.noise_amplitude >= 0.0) {
            return Err(Error::InvalidArgument("noise amplitude must be >= 0".into()));
        }
        Ok(())
    }

    fn quaternion(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.rotation;
        UnitQuaternion::new_unchecked(Quaternion::new(w, x, y, z))
    }

    fn center(&self) -> Vec3 {
        Vec3::from(self.center)
    }

    fn mean_radius(&self) -> f64 {
        self.radii.iter().sum::<f64>() / 3.0
    }

    /// Point in the scaled local frame, where the noise-free primitive is
    /// the unit ball of its gauge.
    fn scaled(&self, p: &Vec3) -> Vec3 {
        let local = self.quaternion().inverse_transform_vector(&(p - self.center()));
        Vec3::new(local.x / self.radii[0], local.y / self.radii[1], local.z / self.radii[2])
    }

    /// Gauge radius of the boundary in direction `s`.
    fn boundary_gauge(&self, s: &Vec3) -> f64 {
        if self.noise_amplitude == 0.0 {
            return 1.0;
        }
        let n = s.norm();
        let dir = if n > 0.0 { s / n } else { Vec3::x() };
        1.0 + self.noise_amplitude * radial_noise(self.noise_seed, &dir) / self.mean_radius()
    }

    /// Strict interior test.
    pub fn contains(&self, p: &Vec3) -> bool {
        let s = self.scaled(p);
        let t = self.boundary_gauge(&s);
        match self.kind {
            PrimitiveKind::Sphere | PrimitiveKind::Ellipsoid => s.norm_squared() < t * t,
            PrimitiveKind::Box => s.amax() < t,
        }
    }

    /// A point exactly on the (perturbed) boundary.
    pub fn sample_boundary<R: Rng>(&self, rng: &mut R) -> Vec3 {
        let s = match self.kind {
            PrimitiveKind::Sphere | PrimitiveKind::Ellipsoid => loop {
                let g = Vec3::from_fn(|_, _| StandardNormal.sample(rng));
                let n = g.norm();
                if n > 1e-12 {
                    break g / n;
                }
            },
            PrimitiveKind::Box => {
                let axis = rng.random_range(0..3);
                let mut s = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
                s[axis] = if rng.random::<bool>() { 1.0 } else { -1.0 };
                s
            }
        };
        let s = s * self.boundary_gauge(&s);
        let local = Vec3::new(s.x * self.radii[0], s.y * self.radii[1], s.z * self.radii[2]);
        self.center() + self.quaternion().transform_vector(&local)
    }
}

/// Free-function form of [`PrimitiveSpec::contains`].
pub fn primitive_occupancy(spec: &PrimitiveSpec, p: &Vec3) -> bool {
    spec.contains(p)
}

/// Uniformly distributed rotation as `[w, x, y, z]`.
pub fn random_rotation<R: Rng>(rng: &mut R) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return q.map(|x| x / n);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sphere(r: f64, noise: f64) -> PrimitiveSpec {
        PrimitiveSpec {
            kind: PrimitiveKind::Sphere,
            center: [0.0; 3],
            radii: [r; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            noise_amplitude: noise,
            noise_seed: 3,
        }
    }

    #[test]
    fn sphere_membership() {
        let s = sphere(0.2, 0.0);
        assert!(s.contains(&Vec3::zeros()));
        assert!(!s.contains(&Vec3::new(0.3, 0.0, 0.0)));
        assert!(!s.contains(&Vec3::new(0.2, 0.0, 0.0)));
    }

    #[test]
    fn validation() {
        assert!(sphere(0.2, 0.0).validate().is_ok());
        assert!(sphere(-0.2, 0.0).validate().is_err());
        let mut s = sphere(0.2, 0.0);
        s.rotation = [1.0, 0.1, 0.0, 0.0];
        assert!(s.validate().is_err());
        s = sphere(0.2, 0.0);
        s.radii[1] = 0.3;
        assert!(s.validate().is_err());
    }

    #[test]
    fn noise_is_bounded_and_smooth() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let d = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
            let n = radial_noise(9, &d);
            assert!((-1.0..=1.0).contains(&n));
            let e = (d + Vec3::new(1e-6, 0.0, 0.0)).normalize();
            assert!((radial_noise(9, &e) - n).abs() < 1e-4);
        }
    }

    #[test]
    fn boundary_samples_lie_on_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for kind in [PrimitiveKind::Sphere, PrimitiveKind::Box, PrimitiveKind::Ellipsoid] {
            let spec = PrimitiveSpec {
                kind,
                center: [0.1, -0.2, 0.05],
                radii: if kind == PrimitiveKind::Sphere { [0.3; 3] } else { [0.3, 0.2, 0.25] },
                rotation: random_rotation(&mut rng),
                noise_amplitude: 0.02,
                noise_seed: 5,
            };
            for _ in 0..200 {
                let p = spec.sample_boundary(&mut rng);
                let c = Vec3::from(spec.center);
                let inward = c + (p - c) * (1.0 - 1e-6);
                let outward = c + (p - c) * (1.0 + 1e-6);
                assert!(spec.contains(&inward) && !spec.contains(&outward), "{kind:?}");
            }
        }
    }
}
