//! Labeled probe sets: points in the sampling cube with ground-truth
//! occupancy of the complete, break, fractured and restoration sets.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{atomic_write, ByteReader, ByteWriter};
use crate::break_surface::{fit_break_surface, TpsSurface, DEFAULT_RIDGE, MAX_CONTROLS};
use crate::error::{Error, Result};
use crate::fracture::FractureResult;
use crate::mesh::{OccupancyIndex, SamplingCube, TriMesh, Vec3};

const MAGIC: &[u8; 4] = b"DMSS";
pub const SAMPLE_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Uniform,
    NearSurfaceCoarse,
    NearSurfaceFine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SampleCounts {
    pub uniform: usize,
    pub coarse: usize,
    pub fine: usize,
}

impl SampleCounts {
    pub fn total(&self) -> usize {
        self.uniform + self.coarse + self.fine
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub points: usize,
    pub uniform_share: f64,
    pub coarse_share: f64,
    pub sigma_coarse: f64,
    pub sigma_fine: f64,
    pub max_drop_rate: f64,
    pub ridge: f64,
    pub max_controls: usize,
    /// Fractured-interior samples used to orient the break surface.
    pub orient_samples: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            points: 500_000,
            uniform_share: 0.4,
            coarse_share: 0.4,
            sigma_coarse: 0.025,
            sigma_fine: 0.0025,
            max_drop_rate: 0.05,
            ridge: DEFAULT_RIDGE,
            max_controls: MAX_CONTROLS,
            orient_samples: 4000,
        }
    }
}

impl SamplingConfig {
    /// Per-tier counts; the fine tier takes the rounding remainder.
    pub fn counts(&self) -> SampleCounts {
        let uniform = (self.points as f64 * self.uniform_share).round() as usize;
        let coarse = (self.points as f64 * self.coarse_share).round() as usize;
        SampleCounts {
            uniform: uniform.min(self.points),
            coarse: coarse.min(self.points - uniform.min(self.points)),
            fine: self.points.saturating_sub(uniform + coarse),
        }
    }
}

/// Probe points (32-bit) with one occupancy bit per set. Rows are grouped
/// by source tier in the order uniform, coarse, fine.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub shape_id: String,
    pub points: Vec<[f32; 3]>,
    pub occ_c: Vec<bool>,
    pub occ_b: Vec<bool>,
    pub occ_f: Vec<bool>,
    pub occ_r: Vec<bool>,
    pub provenance: Vec<Source>,
}

/// Metadata written next to a sample file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub shape_id: String,
    pub seed: u64,
    pub requested: SampleCounts,
    pub retained: SampleCounts,
    pub dropped: usize,
    pub drop_rate: f64,
    pub sigma_coarse: f64,
    pub sigma_fine: f64,
    pub tps: TpsSurface,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Vec3 {
        let [x, y, z] = self.points[i];
        Vec3::new(x as f64, y as f64, z as f64)
    }

    /// Row indices breaking `f = c ∧ b`, `r = c ∧ ¬b`.
    pub fn inconsistent_rows(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| {
                let (c, b) = (self.occ_c[i], self.occ_b[i]);
                self.occ_f[i] != (c && b) || self.occ_r[i] != (c && !b)
            })
            .collect()
    }

    /// Copies the selected rows out as 64-bit points with their bits.
    pub fn rows(&self, indices: &[usize]) -> LabeledBatch {
        LabeledBatch {
            points: indices.iter().map(|&i| self.point(i)).collect(),
            occ_c: indices.iter().map(|&i| self.occ_c[i]).collect(),
            occ_b: indices.iter().map(|&i| self.occ_b[i]).collect(),
            occ_f: indices.iter().map(|&i| self.occ_f[i]).collect(),
            occ_r: indices.iter().map(|&i| self.occ_r[i]).collect(),
        }
    }

    /// The only view inference may see: points and fractured occupancy.
    pub fn fractured_view(&self) -> FracturedSamples {
        FracturedSamples {
            points: (0..self.len()).map(|i| self.point(i)).collect(),
            occ_f: self.occ_f.clone(),
        }
    }

    /// `k` distinct rows, deterministic under `seed`.
    pub fn subsample(&self, k: usize, seed: u64) -> Result<Vec<usize>> {
        subsample(self.len(), k, &mut ChaCha8Rng::seed_from_u64(seed))
    }
}

/// Training rows of one shape.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledBatch {
    pub points: Vec<Vec3>,
    pub occ_c: Vec<bool>,
    pub occ_b: Vec<bool>,
    pub occ_f: Vec<bool>,
    pub occ_r: Vec<bool>,
}

impl LabeledBatch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Points with fractured-shape occupancy only.
#[derive(Debug, Clone, PartialEq)]
pub struct FracturedSamples {
    pub points: Vec<Vec3>,
    pub occ_f: Vec<bool>,
}

/// `k` of `n` indices without replacement (partial Fisher–Yates).
pub fn subsample<R: Rng>(n: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if k > n {
        return Err(Error::InvalidArgument(format!("cannot draw {k} rows from {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    Ok(idx)
}

fn to_f32(p: &Vec3) -> [f32; 3] {
    [p.x as f32, p.y as f32, p.z as f32]
}

fn near_surface<R: Rng>(
    mesh: &TriMesh,
    n: usize,
    sigma: f64,
    cube: &SamplingCube,
    rng: &mut R,
) -> Result<Vec<Vec3>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidArgument(format!("noise sigma {sigma}: {e}")))?;
    let (lo, hi) = (cube.min(), cube.max());
    Ok(mesh
        .sample_surface_with(n, rng)?
        .into_iter()
        .map(|s| {
            let p = s.point + mesh.triangle_normal(s.triangle as usize) * normal.sample(rng);
            p.sup(&lo).inf(&hi)
        })
        .collect())
}

/// Fits the ground-truth break surface to the fracture points and orients
/// it toward the fractured interior.
pub fn ground_truth_break(
    complete: &OccupancyIndex,
    fr: &FractureResult,
    cfg: &SamplingConfig,
    seed: u64,
) -> Result<TpsSurface> {
    let tps = fit_break_surface(&fr.fracture_surface_points, cfg.ridge, cfg.max_controls)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cube = SamplingCube::unit();
    let (lo, hi) = (cube.min(), cube.max());
    let mut interior = Vec::new();
    for _ in 0..cfg.orient_samples.saturating_mul(100) {
        if interior.len() == cfg.orient_samples {
            break;
        }
        let p = Vec3::from_fn(|d, _| rng.random_range(lo[d]..hi[d]));
        if complete.contains(&p) && !fr.removed(&p) {
            interior.push(p);
        }
    }
    tps.orient(&interior)
}

/// Draws the tiered probe set, labels it, and drops rows where the
/// spline break set disagrees with the fracture cut inside the shape.
pub fn build_sample_set(
    shape_id: &str,
    complete: &OccupancyIndex,
    fr: &FractureResult,
    tps: &TpsSurface,
    counts: SampleCounts,
    cfg: &SamplingConfig,
    seed: u64,
) -> Result<(SampleSet, SampleMeta)> {
    if counts.total() == 0 {
        return Err(Error::InvalidArgument("empty sample request".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cube = SamplingCube::unit();
    let (lo, hi) = (cube.min(), cube.max());
    let uniform: Vec<Vec3> = (0..counts.uniform)
        .map(|_| Vec3::from_fn(|d, _| rng.random_range(lo[d]..hi[d])))
        .collect();
    let coarse = near_surface(&fr.fractured_mesh, counts.coarse, cfg.sigma_coarse, &cube, &mut rng)?;
    let fine = near_surface(&fr.fractured_mesh, counts.fine, cfg.sigma_fine, &cube, &mut rng)?;

    let tiers = [
        (Source::Uniform, uniform),
        (Source::NearSurfaceCoarse, coarse),
        (Source::NearSurfaceFine, fine),
    ];
    let mut set = SampleSet {
        shape_id: shape_id.to_string(),
        points: Vec::new(),
        occ_c: Vec::new(),
        occ_b: Vec::new(),
        occ_f: Vec::new(),
        occ_r: Vec::new(),
        provenance: Vec::new(),
    };
    let mut retained = [0usize; 3];
    let mut dropped = 0;
    for (t, (source, points)) in tiers.iter().enumerate() {
        let labeled: Vec<([f32; 3], bool, bool, bool)> = points
            .par_iter()
            .map(|p| {
                let q = to_f32(p);
                let x = Vec3::new(q[0] as f64, q[1] as f64, q[2] as f64);
                (q, complete.contains(&x), tps.break_occupancy(&x), fr.removed(&x))
            })
            .collect();
        for (q, c, b, cut) in labeled {
            if c && b == cut {
                dropped += 1;
                continue;
            }
            set.points.push(q);
            set.occ_c.push(c);
            set.occ_b.push(b);
            set.occ_f.push(c && b);
            set.occ_r.push(c && !b);
            set.provenance.push(*source);
            retained[t] += 1;
        }
    }
    let drop_rate = dropped as f64 / counts.total() as f64;
    log::info!("{shape_id}: dropped {dropped} inconsistent rows ({:.3}%)", 100.0 * drop_rate);
    if drop_rate > cfg.max_drop_rate {
        return Err(Error::DropRate {
            rate: drop_rate,
            limit: cfg.max_drop_rate,
        });
    }
    let meta = SampleMeta {
        shape_id: shape_id.to_string(),
        seed,
        requested: counts,
        retained: SampleCounts {
            uniform: retained[0],
            coarse: retained[1],
            fine: retained[2],
        },
        dropped,
        drop_rate,
        sigma_coarse: cfg.sigma_coarse,
        sigma_fine: cfg.sigma_fine,
        tps: tps.clone(),
    };
    Ok((set, meta))
}

fn pack_bits(w: &mut ByteWriter, bits: &[bool]) {
    for chunk in bits.chunks(8) {
        w.u8(chunk.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b as u8) << i)));
    }
}

fn unpack_bits(r: &mut ByteReader, n: usize) -> Result<Vec<bool>> {
    let bytes = r.take(n.div_ceil(8))?;
    Ok((0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
}

pub fn encode_sample_set(set: &SampleSet) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(MAGIC);
    w.u16(SAMPLE_VERSION);
    w.u64(set.len() as u64);
    for p in &set.points {
        p.iter().for_each(|&x| w.f32(x));
    }
    for bits in [&set.occ_c, &set.occ_b, &set.occ_f, &set.occ_r] {
        pack_bits(&mut w, bits);
    }
    w.into_inner()
}

/// Decodes a sample file; tier provenance is restored from the sidecar
/// counts.
pub fn decode_sample_set(bytes: &[u8], meta: &SampleMeta) -> Result<SampleSet> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a DMSS sample file".into()));
    }
    let version = r.u16()?;
    if version != SAMPLE_VERSION {
        return Err(Error::Version {
            expected: SAMPLE_VERSION,
            found: version,
        });
    }
    let n = r.count(12)?;
    let points = (0..n)
        .map(|_| Ok([r.f32()?, r.f32()?, r.f32()?]))
        .collect::<Result<Vec<_>>>()?;
    let occ_c = unpack_bits(&mut r, n)?;
    let occ_b = unpack_bits(&mut r, n)?;
    let occ_f = unpack_bits(&mut r, n)?;
    let occ_r = unpack_bits(&mut r, n)?;
    if r.remaining() != 0 {
        return Err(Error::Format("trailing bytes in sample file".into()));
    }
    let k = meta.retained;
    if k.total() != n {
        return Err(Error::DimensionMismatch {
            what: "sample rows vs sidecar counts",
            expected: k.total(),
            found: n,
        });
    }
    let provenance = std::iter::repeat_n(Source::Uniform, k.uniform)
        .chain(std::iter::repeat_n(Source::NearSurfaceCoarse, k.coarse))
        .chain(std::iter::repeat_n(Source::NearSurfaceFine, k.fine))
        .collect();
    Ok(SampleSet {
        shape_id: meta.shape_id.clone(),
        points,
        occ_c,
        occ_b,
        occ_f,
        occ_r,
        provenance,
    })
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `path` and its `.json` sidecar.
pub fn save_sample_set(set: &SampleSet, meta: &SampleMeta, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    atomic_write(path, &encode_sample_set(set))?;
    atomic_write(sidecar_path(path), serde_json::to_string_pretty(meta)?.as_bytes())
}

pub fn load_sample_set(path: impl AsRef<Path>) -> Result<(SampleSet, SampleMeta)> {
    let path = path.as_ref();
    let meta: SampleMeta = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    let set = decode_sample_set(&fs::read(path)?, &meta)?;
    Ok((set, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::break_surface::{fit_plane, fit_tps};
    use crate::fracture::{PrimitiveKind, PrimitiveSpec};
    use crate::mesh::icosphere;

    /// Sphere cut by a huge box below z = 0, with a flat spline at z = 0.
    fn hemisphere_case() -> (TriMesh, FractureResult, TpsSurface) {
        let sphere = icosphere(Vec3::zeros(), 0.4, 4);
        let cutter = PrimitiveSpec {
            kind: PrimitiveKind::Box,
            center: [0.0, 0.0, -1.0],
            radii: [2.0, 2.0, 1.0],
            rotation: [1.0, 0.0, 0.0, 0.0],
            noise_amplitude: 0.0,
            noise_seed: 0,
        };
        let fr = FractureResult {
            seed: 0,
            draws: 1,
            primitives: vec![cutter],
            removed_area_fraction: 0.5,
            fractured_mesh: sphere.clone(),
            restoration_mesh: TriMesh::empty(),
            fracture_surface_points: vec![],
            nonfracture_surface_points: vec![],
        };
        let plane: Vec<Vec3> = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
            .iter()
            .map(|&(x, y)| Vec3::new(x, y, 0.0))
            .collect();
        let tps = fit_tps(&plane, &fit_plane(&plane).unwrap(), 0.0).unwrap();
        let above = [Vec3::new(0.0, 0.0, 0.2)];
        (sphere, fr, tps.orient(&above).unwrap())
    }

    #[test]
    fn hemisphere_split() {
        let (sphere, fr, tps) = hemisphere_case();
        let index = OccupancyIndex::new(&sphere).unwrap();
        let counts = SampleCounts {
            uniform: 100_000,
            coarse: 0,
            fine: 0,
        };
        let (set, meta) =
            build_sample_set("s", &index, &fr, &tps, counts, &SamplingConfig::default(), 1).unwrap();
        assert!(set.inconsistent_rows().is_empty());
        let c = set.occ_c.iter().filter(|&&b| b).count() as f64;
        let r = set.occ_r.iter().filter(|&&b| b).count() as f64;
        assert!((r / c - 0.5).abs() < 0.02, "{}", r / c);
        assert!(meta.drop_rate < 1e-3);
        assert!(set.points.iter().all(|p| p.iter().all(|x| x.abs() <= 0.55)));
    }

    #[test]
    fn empty_request_rejected() {
        let (sphere, fr, tps) = hemisphere_case();
        let index = OccupancyIndex::new(&sphere).unwrap();
        let r = build_sample_set(
            "s",
            &index,
            &fr,
            &tps,
            SampleCounts::default(),
            &SamplingConfig::default(),
            1,
        );
        assert!(matches!(r, Err(Error::InvalidArgument(m)) if m.contains("empty sample request")));
    }

    #[test]
    fn file_round_trip_and_determinism() {
        let (sphere, fr, tps) = hemisphere_case();
        let index = OccupancyIndex::new(&sphere).unwrap();
        let counts = SampleCounts {
            uniform: 300,
            coarse: 200,
            fine: 101,
        };
        let cfg = SamplingConfig::default();
        let (a, meta) = build_sample_set("s", &index, &fr, &tps, counts, &cfg, 4).unwrap();
        let (b, _) = build_sample_set("s", &index, &fr, &tps, counts, &cfg, 4).unwrap();
        assert_eq!(encode_sample_set(&a), encode_sample_set(&b));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.dmss");
        save_sample_set(&a, &meta, &path).unwrap();
        let (back, meta2) = load_sample_set(&path).unwrap();
        assert_eq!(back, a);
        assert_eq!(meta2, meta);
    }

    #[test]
    fn subsample_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut all = subsample(10, 10, &mut rng).unwrap();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(subsample(10, 1, &mut rng).unwrap().len(), 1);
        assert!(subsample(3, 4, &mut rng).is_err());
        let a = subsample(100, 20, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = subsample(100, 20, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn default_counts_split() {
        let c = SamplingConfig::default().counts();
        assert_eq!((c.uniform, c.coarse, c.fine), (200_000, 200_000, 100_000));
    }
}
