use crate::error::{Error, Result};
use crate::geometry::{Frame, PointCloud, TriangleMesh};
use rand::Rng;
use std::collections::BinaryHeap;
use std::collections::HashMap;

/// Uniform-area random samples on a mesh surface. Also serves as the
/// baseline the Poisson-disk sampler is measured against.
pub fn uniform_surface_sample<R: Rng>(
    mesh: &TriangleMesh,
    n: usize,
    rng: &mut R,
) -> Result<PointCloud> {
    if mesh.is_empty() {
        return Err(Error::EmptyInput("sampling an empty mesh".into()));
    }
    if n < 1 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    let mut cum = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cum.push(total);
    }
    if total <= 0.0 {
        return Err(Error::Degenerate("mesh has zero surface area".into()));
    }
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.gen_range(0.0..total);
        let f = cum.partition_point(|&c| c <= target).min(mesh.faces.len() - 1);
        let [a, b, c] = mesh.faces[f];
        let (pa, pb, pc) =
            (mesh.vertices[a as usize], mesh.vertices[b as usize], mesh.vertices[c as usize]);
        let mut u: f64 = rng.gen();
        let mut v: f64 = rng.gen();
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        points.push([
            pa[0] + u * (pb[0] - pa[0]) + v * (pc[0] - pa[0]),
            pa[1] + u * (pb[1] - pa[1]) + v * (pc[1] - pa[1]),
            pa[2] + u * (pb[2] - pa[2]) + v * (pc[2] - pa[2]),
        ]);
    }
    PointCloud::new(points, Frame::WorldMm)
}

/// Heap entry ordered by weight, ties broken by index so elimination order
/// is fully deterministic.
#[derive(PartialEq)]
struct HeapEntry {
    weight: f64,
    idx: usize,
    version: u64,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.weight
            .partial_cmp(&other.weight)
            .expect("finite weights")
            .then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Blue-noise surface sampling by weighted sample elimination: oversample
/// the surface uniformly by area (4x), then greedily remove the most
/// crowded candidate until exactly `n` remain. Deterministic given the
/// generator state.
pub fn poisson_disk_sample<R: Rng>(
    mesh: &TriangleMesh,
    n: usize,
    rng: &mut R,
) -> Result<PointCloud> {
    const OVERSAMPLE: usize = 4;
    const ALPHA: f64 = 8.0;

    if mesh.is_empty() {
        return Err(Error::EmptyInput("sampling an empty mesh".into()));
    }
    if n < 1 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    let candidates = uniform_surface_sample(mesh, n * OVERSAMPLE, rng)?;
    let pts = candidates.points();
    let area = mesh.surface_area();
    // radius of non-overlapping disks at hexagonal-packing density
    let r_max = (area / (2.0 * 3.0f64.sqrt() * n as f64)).sqrt();
    let cutoff = 2.0 * r_max;

    // cell grid for neighbor queries at the cutoff radius
    let cell = cutoff.max(1e-12);
    let key = |p: &[f64; 3]| -> (i64, i64, i64) {
        ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64, (p[2] / cell).floor() as i64)
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in pts.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let neighbors = |i: usize| -> Vec<usize> {
        let (cx, cy, cz) = key(&pts[i]);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &j in bucket {
                            if j == i {
                                continue;
                            }
                            let d2 = dist2(&pts[i], &pts[j]);
                            if d2 < cutoff * cutoff {
                                out.push(j);
                            }
                        }
                    }
                }
            }
        }
        out
    };

    let pair_weight = |d2: f64| -> f64 {
        let d = d2.sqrt().min(cutoff);
        (1.0 - d / cutoff).powf(ALPHA)
    };

    let m = pts.len();
    let mut weight = vec![0.0f64; m];
    let adjacency: Vec<Vec<usize>> = (0..m).map(neighbors).collect();
    for i in 0..m {
        for &j in &adjacency[i] {
            weight[i] += pair_weight(dist2(&pts[i], &pts[j]));
        }
    }

    let mut version = vec![0u64; m];
    let mut alive = vec![true; m];
    let mut heap: BinaryHeap<HeapEntry> =
        (0..m).map(|i| HeapEntry { weight: weight[i], idx: i, version: 0 }).collect();

    let mut remaining = m;
    while remaining > n {
        let top = heap.pop().expect("heap cannot drain before n");
        if !alive[top.idx] || top.version != version[top.idx] {
            continue;
        }
        alive[top.idx] = false;
        remaining -= 1;
        for &j in &adjacency[top.idx] {
            if !alive[j] {
                continue;
            }
            weight[j] -= pair_weight(dist2(&pts[top.idx], &pts[j]));
            version[j] += 1;
            heap.push(HeapEntry { weight: weight[j], idx: j, version: version[j] });
        }
    }

    let points: Vec<[f64; 3]> = (0..m).filter(|&i| alive[i]).map(|i| pts[i]).collect();
    debug_assert_eq!(points.len(), n);
    PointCloud::new(points, Frame::WorldMm)
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}
