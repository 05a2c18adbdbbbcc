//! Post-processing of decoded clouds before evaluation: rescale to world
//! millimetres, moving-least-squares smoothing, midpoint densification,
//! and radius-based outlier removal, in that order.

use crate::error::{Error, Result, StageExt};
use crate::geometry::{destandardize, PointCloud, StandardizationStats};
use crate::metrics::nn::{dist2, NnIndex};

#[derive(Clone, Copy, Debug)]
pub struct PostprocessConfig {
    pub mls_radius_mm: f64,
    pub densify_gap_mm: f64,
    pub densify_neighborhood: usize,
    pub outlier_min_neighbors: usize,
    pub outlier_radius_mm: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            mls_radius_mm: 10.0,
            densify_gap_mm: 10.0,
            densify_neighborhood: 10,
            outlier_min_neighbors: 5,
            outlier_radius_mm: 15.0,
        }
    }
}

/// Eigenvector of the smallest eigenvalue of a symmetric 3x3 matrix,
/// via cyclic Jacobi rotations.
fn smallest_eigenvector(m: [[f64; 3]; 3]) -> [f64; 3] {
    let mut a = m;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..32 {
        // largest off-diagonal element
        let (mut p, mut q, mut max) = (0, 1, a[0][1].abs());
        for (i, j) in [(0, 2), (1, 2)] {
            if a[i][j].abs() > max {
                p = i;
                q = j;
                max = a[i][j].abs();
            }
        }
        if max < 1e-14 {
            break;
        }
        let theta = 0.5 * (a[q][q] - a[p][p]) / a[p][q];
        let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
        let c = 1.0 / (t * t + 1.0).sqrt();
        let s = t * c;
        let rot = |mat: &mut [[f64; 3]; 3]| {
            for k in 0..3 {
                let mkp = mat[k][p];
                let mkq = mat[k][q];
                mat[k][p] = c * mkp - s * mkq;
                mat[k][q] = s * mkp + c * mkq;
            }
        };
        rot(&mut a);
        // rows of a
        for k in 0..3 {
            let apk = a[p][k];
            let aqk = a[q][k];
            a[p][k] = c * apk - s * aqk;
            a[q][k] = s * apk + c * aqk;
        }
        rot(&mut v);
    }
    let mut best = 0;
    for k in 1..3 {
        if a[k][k] < a[best][best] {
            best = k;
        }
    }
    [v[0][best], v[1][best], v[2][best]]
}

/// Project each point onto the Gaussian-weighted best-fit plane of its
/// radius neighborhood (degree-1 moving least squares). Points with fewer
/// than 3 neighbors are left unchanged.
pub fn mls_smooth(cloud: &PointCloud, radius_mm: f64) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("mls_smooth on empty cloud".into()));
    }
    let pts = cloud.points();
    let index = NnIndex::build(pts);
    let sigma = radius_mm / 2.0;
    let out = pts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let nbrs = index.within_radius(p, radius_mm, Some(i));
            if nbrs.len() < 3 {
                return *p;
            }
            // weighted centroid (neighborhood includes the point itself)
            let mut wsum = 1.0;
            let mut centroid = *p;
            for a in &mut centroid {
                *a *= 1.0;
            }
            for &j in &nbrs {
                let w = (-dist2(p, &pts[j]) / (2.0 * sigma * sigma)).exp();
                for a in 0..3 {
                    centroid[a] += w * pts[j][a];
                }
                wsum += w;
            }
            for a in &mut centroid {
                *a /= wsum;
            }
            // weighted covariance
            let mut cov = [[0.0; 3]; 3];
            let mut accumulate = |q: &[f64; 3], w: f64| {
                let d = [q[0] - centroid[0], q[1] - centroid[1], q[2] - centroid[2]];
                for r in 0..3 {
                    for c in 0..3 {
                        cov[r][c] += w * d[r] * d[c];
                    }
                }
            };
            accumulate(p, 1.0);
            for &j in &nbrs {
                let w = (-dist2(p, &pts[j]) / (2.0 * sigma * sigma)).exp();
                accumulate(&pts[j], w);
            }
            let normal = smallest_eigenvector(cov);
            let offset = (p[0] - centroid[0]) * normal[0]
                + (p[1] - centroid[1]) * normal[1]
                + (p[2] - centroid[2]) * normal[2];
            [
                p[0] - offset * normal[0],
                p[1] - offset * normal[1],
                p[2] - offset * normal[2],
            ]
        })
        .collect();
    PointCloud::new(out, cloud.frame())
}

/// Insert midpoints between each point and any of its k nearest neighbors
/// farther than the gap threshold. Original points are retained; duplicate
/// midpoints are deduplicated.
pub fn densify(cloud: &PointCloud, config: &PostprocessConfig) -> Result<PointCloud> {
    if cloud.len() < 2 {
        return Err(Error::InvalidArgument("densify needs at least 2 points".into()));
    }
    let pts = cloud.points();
    let index = NnIndex::build(pts);
    let mut midpoints: Vec<[f64; 3]> = Vec::new();
    for (i, p) in pts.iter().enumerate() {
        for (d, j) in index.k_nearest(p, config.densify_neighborhood, Some(i)) {
            if d > config.densify_gap_mm {
                let q = &pts[j];
                midpoints.push([
                    0.5 * (p[0] + q[0]),
                    0.5 * (p[1] + q[1]),
                    0.5 * (p[2] + q[2]),
                ]);
            }
        }
    }
    // bitwise dedup: (i, j) and (j, i) produce identical midpoints
    let key = |p: &[f64; 3]| (p[0].to_bits(), p[1].to_bits(), p[2].to_bits());
    let mut seen: std::collections::HashSet<_> = pts.iter().map(key).collect();
    let mut out = pts.to_vec();
    for m in midpoints {
        if seen.insert(key(&m)) {
            out.push(m);
        }
    }
    PointCloud::new(out, cloud.frame())
}

/// Drop every point with fewer than `outlier_min_neighbors` other points
/// within `outlier_radius_mm`. Single pass.
pub fn remove_outliers(cloud: &PointCloud, config: &PostprocessConfig) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("remove_outliers on empty cloud".into()));
    }
    let pts = cloud.points();
    let index = NnIndex::build(pts);
    let out: Vec<[f64; 3]> = pts
        .iter()
        .enumerate()
        .filter(|(i, p)| {
            index.count_within(p, config.outlier_radius_mm, Some(*i))
                >= config.outlier_min_neighbors
        })
        .map(|(_, p)| *p)
        .collect();
    PointCloud::new(out, cloud.frame())
}

/// Full chain: destandardize, smooth, densify, remove outliers.
pub fn postprocess(
    cloud: &PointCloud,
    stats: &StandardizationStats,
    config: &PostprocessConfig,
) -> Result<PointCloud> {
    let world = destandardize(cloud, stats).stage("postprocess/destandardize")?;
    let smoothed = mls_smooth(&world, config.mls_radius_mm).stage("postprocess/mls")?;
    let dense = densify(&smoothed, config).stage("postprocess/densify")?;
    remove_outliers(&dense, config).stage("postprocess/outliers")
}
