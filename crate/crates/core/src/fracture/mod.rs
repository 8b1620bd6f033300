//! Synthetic fractures by occupancy-space subtraction of a rough
//! primitive from a complete shape.

mod primitive;
mod remesh;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{atomic_write, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::mesh::{load_mesh_or_empty, save_mesh, OccupancyIndex, SamplingCube, TriMesh, Vec3};
use crate::reconstruct::{evaluate_grid, marching_cubes, FieldGrid, FnField, OCCUPANCY_ISO};

pub use primitive::{primitive_occupancy, radial_noise, random_rotation, PrimitiveKind, PrimitiveSpec};
pub use remesh::voxel_remesh;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FractureConfig {
    /// Accepted removed-area fraction window, inclusive.
    pub target: [f64; 2],
    pub max_draws: usize,
    pub area_samples: usize,
    pub noise_amplitude: f64,
    /// Marching Cubes resolution for the fractured and restoration meshes.
    pub resolution: usize,
    pub fracture_points: usize,
    pub nonfracture_points: usize,
    /// Primitive size range, as a fraction of the normalized extent.
    pub size: [f64; 2],
    /// Range of the outward offset of the primitive center from the
    /// surface, in primitive radii.
    pub offset: [f64; 2],
    pub kinds: Vec<PrimitiveKind>,
}

impl Default for FractureConfig {
    fn default() -> Self {
        Self {
            target: [0.05, 0.20],
            max_draws: 200,
            area_samples: 100_000,
            noise_amplitude: 0.02,
            resolution: 256,
            fracture_points: 4096,
            nonfracture_points: 30_000,
            size: [0.15, 0.45],
            offset: [0.2, 0.8],
            kinds: vec![PrimitiveKind::Sphere, PrimitiveKind::Box, PrimitiveKind::Ellipsoid],
        }
    }
}

impl FractureConfig {
    fn validate(&self) -> Result<()> {
        let [lo, hi] = self.target;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidArgument(format!("bad target window {:?}", self.target)));
        }
        if self.area_samples == 0 || self.kinds.is_empty() || self.max_draws == 0 {
            return Err(Error::InvalidArgument(
                "area samples, draws and primitive kinds must be nonempty".into(),
            ));
        }
        if !(0.0 < self.size[0] && self.size[0] <= self.size[1]) {
            return Err(Error::InvalidArgument(format!("bad size range {:?}", self.size)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FractureResult {
    pub seed: u64,
    pub draws: usize,
    pub primitives: Vec<PrimitiveSpec>,
    pub removed_area_fraction: f64,
    pub fractured_mesh: TriMesh,
    pub restoration_mesh: TriMesh,
    /// On the primitive boundary and inside the complete shape.
    pub fracture_surface_points: Vec<Vec3>,
    /// On the complete surface and outside every primitive.
    pub nonfracture_surface_points: Vec<Vec3>,
}

impl FractureResult {
    /// Inside at least one primitive.
    pub fn removed(&self, p: &Vec3) -> bool {
        self.primitives.iter().any(|s| s.contains(p))
    }
}

/// Fraction of `samples` strictly inside any of `primitives`.
pub fn removed_fraction(primitives: &[PrimitiveSpec], samples: &[Vec3]) -> f64 {
    let inside = samples
        .iter()
        .filter(|p| primitives.iter().any(|s| s.contains(p)))
        .count();
    inside as f64 / samples.len() as f64
}

fn draw_primitive(
    rng: &mut ChaCha8Rng,
    cfg: &FractureConfig,
    anchor: &Vec3,
    normal: &Vec3,
) -> PrimitiveSpec {
    let kind = cfg.kinds[rng.random_range(0..cfg.kinds.len())];
    let r = rng.random_range(cfg.size[0]..=cfg.size[1]);
    let radii = match kind {
        PrimitiveKind::Sphere => [r; 3],
        PrimitiveKind::Box | PrimitiveKind::Ellipsoid => {
            [r, r * rng.random_range(0.7..1.4), r * rng.random_range(0.7..1.4)]
        }
    };
    let offset = rng.random_range(cfg.offset[0]..=cfg.offset[1]) * r;
    let center = anchor + normal * offset;
    PrimitiveSpec {
        kind,
        center: [center.x, center.y, center.z],
        radii,
        rotation: random_rotation(rng),
        noise_amplitude: cfg.noise_amplitude,
        noise_seed: rng.random(),
    }
}

/// Binary occupancy grid of the complete shape over the unit sampling cube.
pub fn complete_grid(index: &OccupancyIndex, resolution: usize) -> Result<FieldGrid> {
    let field = FnField(|p: &Vec3| index.contains(p) as u8 as f64);
    evaluate_grid(&field, &SamplingCube::unit(), resolution)
}

/// Fractures `complete` with one rough primitive whose removed surface
/// fraction falls inside `cfg.target`.
pub fn fracture(complete: &TriMesh, seed: u64, cfg: &FractureConfig) -> Result<FractureResult> {
    cfg.validate()?;
    complete.require_watertight()?;
    if !SamplingCube::unit().strictly_contains(complete) {
        return Err(Error::InvalidArgument(
            "complete mesh must be normalized into the unit sampling cube".into(),
        ));
    }
    let index = OccupancyIndex::new(complete)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let area: Vec<_> = complete.sample_surface_with(cfg.area_samples, &mut rng)?;
    let area_points: Vec<Vec3> = area.iter().map(|s| s.point).collect();

    let mut accepted = None;
    for draw in 1..=cfg.max_draws {
        let anchor = &area[rng.random_range(0..area.len())];
        let normal = complete.triangle_normal(anchor.triangle as usize);
        let spec = draw_primitive(&mut rng, cfg, &anchor.point, &normal);
        let fraction = removed_fraction(std::slice::from_ref(&spec), &area_points);
        log::debug!("draw {draw}: {:?} removes {fraction:.4}", spec.kind);
        if (cfg.target[0]..=cfg.target[1]).contains(&fraction) {
            accepted = Some((spec, fraction, draw));
            break;
        }
    }
    let Some((spec, removed_area_fraction, draws)) = accepted else {
        return Err(Error::FractureBudget {
            draws: cfg.max_draws,
        });
    };
    let primitives = vec![spec];

    let c = complete_grid(&index, cfg.resolution)?;
    let (mut f, mut r) = (c.clone(), c.clone());
    for (n, &oc) in c.values.iter().enumerate() {
        let k = n / (c.resolution * c.resolution);
        let j = n / c.resolution % c.resolution;
        let i = n % c.resolution;
        let cut = spec.contains(&c.point(i, j, k));
        f.values[n] = oc * (1.0 - cut as u8 as f64);
        r.values[n] = oc * cut as u8 as f64;
    }
    let fractured_mesh = marching_cubes(&f, OCCUPANCY_ISO);
    let restoration_mesh = marching_cubes(&r, OCCUPANCY_ISO);

    let mut fracture_surface_points = Vec::with_capacity(cfg.fracture_points);
    let budget = cfg.fracture_points.saturating_mul(200);
    for _ in 0..budget {
        if fracture_surface_points.len() == cfg.fracture_points {
            break;
        }
        let p = spec.sample_boundary(&mut rng);
        if index.contains(&p) {
            fracture_surface_points.push(p);
        }
    }
    let nonfracture_surface_points: Vec<Vec3> = complete
        .sample_surface_with(cfg.nonfracture_points.max(1), &mut rng)?
        .into_iter()
        .map(|s| s.point)
        .filter(|p| !spec.contains(p))
        .take(cfg.nonfracture_points)
        .collect();

    Ok(FractureResult {
        seed,
        draws,
        primitives,
        removed_area_fraction,
        fractured_mesh,
        restoration_mesh,
        fracture_surface_points,
        nonfracture_surface_points,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct FractureMeta {
    seed: u64,
    draws: usize,
    removed_area_fraction: f64,
    primitives: Vec<PrimitiveSpec>,
    fracture_points: usize,
    nonfracture_points: usize,
}

/// Point list as a `u64` count followed by little-endian `f32` triples.
pub fn encode_points(points: &[Vec3]) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.u64(points.len() as u64);
    for p in points {
        for d in 0..3 {
            w.f32(p[d] as f32);
        }
    }
    w.into_inner()
}

pub fn decode_points(bytes: &[u8]) -> Result<Vec<Vec3>> {
    let mut r = ByteReader::new(bytes);
    let n = r.count(12)?;
    let pts = (0..n)
        .map(|_| Ok(Vec3::new(r.f32()? as f64, r.f32()? as f64, r.f32()? as f64)))
        .collect::<Result<Vec<_>>>()?;
    if r.remaining() != 0 {
        return Err(Error::Format("trailing bytes in point file".into()));
    }
    Ok(pts)
}

pub const FRACTURED_MESH: &str = "fractured.ply";
pub const RESTORATION_MESH: &str = "restoration.ply";
pub const FRACTURE_META: &str = "fracture.json";
pub const FRACTURE_POINTS: &str = "fracture_points.bin";
pub const NONFRACTURE_POINTS: &str = "nonfracture_points.bin";

/// Writes the two meshes, the metadata and both labeled point files.
pub fn save_fracture(result: &FractureResult, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    save_mesh(&result.fractured_mesh, dir.join(FRACTURED_MESH))?;
    save_mesh(&result.restoration_mesh, dir.join(RESTORATION_MESH))?;
    let meta = FractureMeta {
        seed: result.seed,
        draws: result.draws,
        removed_area_fraction: result.removed_area_fraction,
        primitives: result.primitives.clone(),
        fracture_points: result.fracture_surface_points.len(),
        nonfracture_points: result.nonfracture_surface_points.len(),
    };
    atomic_write(dir.join(FRACTURE_META), serde_json::to_string_pretty(&meta)?.as_bytes())?;
    atomic_write(dir.join(FRACTURE_POINTS), &encode_points(&result.fracture_surface_points))?;
    atomic_write(
        dir.join(NONFRACTURE_POINTS),
        &encode_points(&result.nonfracture_surface_points),
    )?;
    Ok(())
}

/// Reads a result written by [`save_fracture`]; points come back at
/// 32-bit precision and empty meshes as empty.
pub fn load_fracture(dir: impl AsRef<Path>) -> Result<FractureResult> {
    let dir = dir.as_ref();
    let meta: FractureMeta = serde_json::from_slice(&fs::read(dir.join(FRACTURE_META))?)?;
    let mesh_or_empty = |name: &str| load_mesh_or_empty(dir.join(name));
    Ok(FractureResult {
        seed: meta.seed,
        draws: meta.draws,
        primitives: meta.primitives,
        removed_area_fraction: meta.removed_area_fraction,
        fractured_mesh: mesh_or_empty(FRACTURED_MESH)?,
        restoration_mesh: mesh_or_empty(RESTORATION_MESH)?,
        fracture_surface_points: decode_points(&fs::read(dir.join(FRACTURE_POINTS))?)?,
        nonfracture_surface_points: decode_points(&fs::read(dir.join(NONFRACTURE_POINTS))?)?,
    })
}
