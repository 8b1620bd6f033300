//! Chamfer distance, non-empty rate and non-fracture region error.

mod kdtree;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{hex, json_hash};
use crate::error::{Error, Result};
use crate::fracture::load_fracture;
use crate::mesh::{load_mesh_or_empty, TriMesh, Vec3};

pub use kdtree::KdTree;

pub const DEFAULT_ETA: f64 = 0.02;
pub const DEFAULT_SAMPLES: usize = 30_000;

fn surface_points(mesh: &TriMesh, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be > 0".into()));
    }
    Ok(mesh.sample_surface(n, seed)?.into_iter().map(|s| s.point).collect())
}

/// Mean squared nearest-neighbor distance from each point of `a` to `b`.
pub fn one_sided_sq(a: &[Vec3], b: &KdTree) -> f64 {
    // Summed in a fixed order so the result does not depend on the pool size.
    let d: Vec<f64> = a.par_iter().map(|p| b.nearest_sq(p)).collect();
    d.iter().sum::<f64>() / a.len() as f64
}

/// Symmetric chamfer distance between two point sets: the average of the
/// two one-sided mean squared nearest-neighbor distances.
pub fn chamfer_points(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("chamfer needs two nonempty point sets".into()));
    }
    let (ta, tb) = (KdTree::new(a), KdTree::new(b));
    Ok(0.5 * (one_sided_sq(a, &tb) + one_sided_sq(b, &ta)))
}

/// Chamfer distance on `n` surface samples of each mesh, both drawn with
/// `seed`.
pub fn chamfer(a: &TriMesh, b: &TriMesh, n: usize, seed: u64) -> Result<f64> {
    chamfer_seeded(a, b, n, seed, seed)
}

pub fn chamfer_seeded(a: &TriMesh, b: &TriMesh, n: usize, seed_a: u64, seed_b: u64) -> Result<f64> {
    chamfer_points(&surface_points(a, n, seed_a)?, &surface_points(b, n, seed_b)?)
}

pub fn non_empty(restoration: &TriMesh) -> bool {
    !restoration.is_empty()
}

/// Fraction of predicted samples lying within `eta` of the kept
/// (non-fracture) surface but farther than `eta` from the true restoration.
pub fn nfre_points(pred: &[Vec3], nonfracture: &KdTree, gt: &KdTree, eta: f64) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::InvalidArgument("no predicted samples".into()));
    }
    let eta2 = eta * eta;
    let hits = pred
        .par_iter()
        .filter(|p| nonfracture.nearest_sq(p) < eta2 && gt.nearest_sq(p) > eta2)
        .count();
    Ok(hits as f64 / pred.len() as f64)
}

pub fn nfre(
    pred: &TriMesh,
    gt_restoration: &TriMesh,
    nonfracture_surface: &[Vec3],
    eta: f64,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("eta must be > 0, got {eta}")));
    }
    if nonfracture_surface.is_empty() {
        return Err(Error::InvalidArgument("empty non-fracture surface".into()));
    }
    let p = surface_points(pred, n, seed)?;
    let g = surface_points(gt_restoration, n, seed)?;
    nfre_points(&p, &KdTree::new(nonfracture_surface), &KdTree::new(&g), eta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub eta: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            eta: DEFAULT_ETA,
            samples: DEFAULT_SAMPLES,
            seed: 0,
        }
    }
}

/// Everything needed to score one shape.
#[derive(Debug, Clone)]
pub struct ShapeCase {
    pub shape_id: String,
    pub class: String,
    pub pred: TriMesh,
    pub gt_restoration: TriMesh,
    pub nonfracture: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeRow {
    pub shape_id: String,
    pub class: String,
    pub non_empty: bool,
    /// `None` for empty predictions or failed scoring.
    pub cd: Option<f64>,
    pub nfre: Option<f64>,
    pub eta: f64,
    pub samples: usize,
    pub seed: u64,
    pub error: Option<String>,
}

pub fn evaluate_shape(case: &ShapeCase, cfg: &EvalConfig) -> ShapeRow {
    let mut row = ShapeRow {
        shape_id: case.shape_id.clone(),
        class: case.class.clone(),
        non_empty: non_empty(&case.pred),
        cd: None,
        nfre: None,
        eta: cfg.eta,
        samples: cfg.samples,
        seed: cfg.seed,
        error: None,
    };
    if !row.non_empty {
        return row;
    }
    let scored = chamfer(&case.pred, &case.gt_restoration, cfg.samples, cfg.seed).and_then(|cd| {
        let e = nfre(&case.pred, &case.gt_restoration, &case.nonfracture, cfg.eta, cfg.samples, cfg.seed)?;
        Ok((cd, e))
    });
    match scored {
        Ok((cd, e)) => {
            row.cd = Some(cd);
            row.nfre = Some(e);
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: String,
    pub shapes: usize,
    pub non_empty_pct: f64,
    pub mean_cd: Option<f64>,
    pub mean_nfre: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub config_hash: String,
    pub rows: Vec<ShapeRow>,
    pub classes: Vec<ClassRow>,
    /// Non-empty predictions over all shapes, in percent.
    pub non_empty_pct: f64,
    /// Mean over classes of per-class mean CD (non-empty shapes only).
    pub mean_cd: Option<f64>,
    /// Mean over classes of per-class mean NFRE.
    pub mean_nfre: Option<f64>,
    /// Shape ids lacking a prediction or ground truth.
    pub missing: Vec<String>,
}

fn mean_of(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in xs {
        sum += x;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

impl EvalReport {
    pub fn from_rows(rows: Vec<ShapeRow>, missing: Vec<String>, cfg: &EvalConfig) -> Result<Self> {
        let mut by_class: BTreeMap<&str, Vec<&ShapeRow>> = BTreeMap::new();
        for r in &rows {
            by_class.entry(&r.class).or_default().push(r);
        }
        let classes: Vec<ClassRow> = by_class
            .into_iter()
            .map(|(class, rs)| ClassRow {
                class: class.to_string(),
                shapes: rs.len(),
                non_empty_pct: 100.0 * rs.iter().filter(|r| r.non_empty).count() as f64 / rs.len() as f64,
                mean_cd: mean_of(rs.iter().filter_map(|r| r.cd)),
                mean_nfre: mean_of(rs.iter().filter_map(|r| r.nfre)),
            })
            .collect();
        let non_empty_pct = if rows.is_empty() {
            0.0
        } else {
            100.0 * rows.iter().filter(|r| r.non_empty).count() as f64 / rows.len() as f64
        };
        Ok(Self {
            config: cfg.clone(),
            config_hash: hex(&json_hash(cfg)?),
            mean_cd: mean_of(classes.iter().filter_map(|c| c.mean_cd)),
            mean_nfre: mean_of(classes.iter().filter_map(|c| c.mean_nfre)),
            rows,
            classes,
            non_empty_pct,
            missing,
        })
    }

    /// Plain-text table of rows, classes and aggregates.
    pub fn to_table(&self) -> String {
        let opt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        let mut s = String::new();
        let _ = writeln!(s, "{:<24} {:<12} {:>5} {:>12} {:>10}", "shape", "class", "NE", "CD", "NFRE");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<24} {:<12} {:>5} {:>12} {:>10}",
                r.shape_id,
                r.class,
                if r.non_empty { "yes" } else { "no" },
                opt(r.cd),
                opt(r.nfre)
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<24} {:>6} {:>8} {:>12} {:>10}", "class", "shapes", "NE%", "CD", "NFRE");
        for c in &self.classes {
            let _ = writeln!(
                s,
                "{:<24} {:>6} {:>8.1} {:>12} {:>10}",
                c.class,
                c.shapes,
                c.non_empty_pct,
                opt(c.mean_cd),
                opt(c.mean_nfre)
            );
        }
        let _ = writeln!(
            s,
            "\noverall: NE% {:.1}  CD {}  NFRE {}  (eta {}, n {}, seed {})",
            self.non_empty_pct,
            opt(self.mean_cd),
            opt(self.mean_nfre),
            self.config.eta,
            self.config.samples,
            self.config.seed
        );
        if !self.missing.is_empty() {
            let _ = writeln!(s, "missing: {}", self.missing.join(", "));
        }
        s
    }
}

/// Scores every case in parallel.
pub fn evaluate_cases(cases: &[ShapeCase], cfg: &EvalConfig) -> Result<EvalReport> {
    let rows = cases.par_iter().map(|c| evaluate_shape(c, cfg)).collect();
    EvalReport::from_rows(rows, Vec::new(), cfg)
}

fn find_mesh(dir: &Path, id: &str) -> Option<std::path::PathBuf> {
    ["ply", "obj"]
        .iter()
        .map(|ext| dir.join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
}

/// Scores a directory of predictions. `pred_dir` holds `<id>.ply` or
/// `<id>.obj`; `gt_dir` holds one fracture directory per id; the optional
/// `labels` file maps ids to class names (JSON object). Ids without a
/// label fall in class `all`.
pub fn evaluate_corpus(
    pred_dir: impl AsRef<Path>,
    gt_dir: impl AsRef<Path>,
    labels: Option<&Path>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let (pred_dir, gt_dir) = (pred_dir.as_ref(), gt_dir.as_ref());
    let classes: BTreeMap<String, String> = match labels {
        Some(p) => serde_json::from_slice(&fs::read(p)?)?,
        None => BTreeMap::new(),
    };
    let mut ids: Vec<String> = fs::read_dir(gt_dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    for e in fs::read_dir(pred_dir)?.filter_map(|e| e.ok()) {
        let path = e.path();
        if matches!(path.extension().and_then(|x| x.to_str()), Some("ply" | "obj")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    ids.dedup();

    let mut cases = Vec::new();
    let mut missing = Vec::new();
    for id in ids {
        let pred = find_mesh(pred_dir, &id);
        let gt = gt_dir.join(&id);
        let (Some(pred), true) = (pred, gt.is_dir()) else {
            missing.push(id);
            continue;
        };
        let fr = load_fracture(&gt)?;
        cases.push(ShapeCase {
            class: classes.get(&id).cloned().unwrap_or_else(|| "all".to_string()),
            shape_id: id,
            pred: load_mesh_or_empty(pred)?,
            gt_restoration: fr.restoration_mesh,
            nonfracture: fr.nonfracture_surface_points,
        });
    }
    let rows = cases.par_iter().map(|c| evaluate_shape(c, cfg)).collect();
    EvalReport::from_rows(rows, missing, cfg)
}
