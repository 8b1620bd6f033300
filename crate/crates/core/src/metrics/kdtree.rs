use crate::mesh::Vec3;

/// Exact nearest-neighbor index over a fixed point set. Nodes are stored
/// implicitly: the median of each index range is the node, split on the
/// axis of largest spread.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    ids: Vec<usize>,
    axes: Vec<u8>,
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut ids: Vec<usize> = (0..points.len()).collect();
        let mut axes = vec![0u8; points.len()];
        build(points, &mut ids, &mut axes, 0);
        let ordered = ids.iter().map(|&i| points[i]).collect();
        Self {
            points: ordered,
            ids,
            axes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index (into the original slice) and squared distance of the nearest
    /// point, or `None` for an empty tree.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, self.points.len(), q, &mut best);
        Some((self.ids[best.0], best.1))
    }

    pub fn nearest_sq(&self, q: &Vec3) -> f64 {
        self.nearest(q).map_or(f64::INFINITY, |(_, d)| d)
    }

    fn search(&self, lo: usize, hi: usize, q: &Vec3, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let p = &self.points[mid];
        let d = (p - q).norm_squared();
        if d < best.1 {
            *best = (mid, d);
        }
        let axis = self.axes[mid] as usize;
        let delta = q[axis] - p[axis];
        let (near, far) = if delta < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(near.0, near.1, q, best);
        if delta * delta < best.1 {
            self.search(far.0, far.1, q, best);
        }
    }
}

fn build(points: &[Vec3], ids: &mut [usize], axes: &mut [u8], offset: usize) {
    if ids.len() <= 1 {
        return;
    }
    let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
    for &i in ids.iter() {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let axis = (hi - lo).imax();
    let mid = ids.len() / 2;
    ids.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    axes[offset + mid] = axis as u8;
    let (left, right) = ids.split_at_mut(mid);
    build(points, left, axes, offset);
    build(points, &mut right[1..], axes, offset + mid + 1);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut cloud = |n: usize| -> Vec<Vec3> {
            (0..n).map(|_| Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect()
        };
        let pts = cloud(2000);
        // Duplicates and a degenerate axis.
        let mut pts2 = pts.clone();
        pts2.extend(pts[..100].iter().map(|p| Vec3::new(p.x, 0.0, p.z)));
        pts2.extend_from_slice(&pts[..50]);
        let queries = cloud(500);
        for set in [&pts, &pts2] {
            let tree = KdTree::new(set);
            for q in &queries {
                let brute = set.iter().map(|p| (p - q).norm_squared()).fold(f64::INFINITY, f64::min);
                let (i, d) = tree.nearest(q).unwrap();
                assert_eq!(d, brute);
                assert_eq!((set[i] - q).norm_squared(), d);
            }
        }
    }

    #[test]
    fn empty_and_single() {
        assert!(KdTree::new(&[]).nearest(&Vec3::zeros()).is_none());
        let t = KdTree::new(&[Vec3::new(1.0, 2.0, 3.0)]);
        assert_eq!(t.nearest(&Vec3::zeros()), Some((0, 14.0)));
    }
}
