//! Voxel morphology, isosurface extraction, surface sampling, and
//! coordinate standardization: everything between a segmentation-style
//! occupancy grid and a standardized point cloud.

mod marching;
mod mesh;
mod sampling;
mod voxel;

pub use marching::marching_cubes;
pub use mesh::TriangleMesh;
pub use sampling::{poisson_disk_sample, uniform_surface_sample};
pub use voxel::{binary_closing, connected_components, VoxelGrid};

use crate::error::{Error, Result};

/// Coordinate frame of a point cloud. Physical millimetres, or the
/// zero-mean unit-std frame the networks operate in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Frame {
    WorldMm,
    Standardized,
}

impl Frame {
    pub fn name(self) -> &'static str {
        match self {
            Frame::WorldMm => "world-mm",
            Frame::Standardized => "standardized",
        }
    }
}

/// Fixed-size set of 3D points tagged with its coordinate frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
    frame: Frame,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>, frame: Frame) -> Result<Self> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point cloud coordinates".into()));
        }
        Ok(Self { points, frame })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    /// Axis-aligned bounding box, `(min, max)`.
    pub fn bounding_box(&self) -> Option<([f64; 3], [f64; 3])> {
        if self.points.is_empty() {
            return None;
        }
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        Some((lo, hi))
    }

    pub fn bbox_diagonal(&self) -> f64 {
        match self.bounding_box() {
            Some((lo, hi)) => {
                let d = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
            }
            None => 0.0,
        }
    }

    /// Canonical lexicographic point order. Row indices become stable
    /// across runs regardless of sampler ordering.
    pub fn sorted(mut self) -> Self {
        self.points.sort_by(|a, b| a.partial_cmp(b).expect("finite coords"));
        self
    }

    fn expect_frame(&self, frame: Frame) -> Result<()> {
        if self.frame != frame {
            return Err(Error::FrameMismatch {
                expected: frame.name(),
                got: self.frame.name(),
            });
        }
        Ok(())
    }
}

/// Pooled mean (per axis) and scalar std of a training set. A single std
/// pooled over xyz preserves the aspect ratio of every shape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StandardizationStats {
    pub mean: [f64; 3],
    pub std: f64,
}

/// Pooled statistics over all points of all clouds (world-mm frame).
pub fn compute_standardization(clouds: &[PointCloud]) -> Result<StandardizationStats> {
    if clouds.is_empty() || clouds.iter().all(|c| c.is_empty()) {
        return Err(Error::EmptyInput("standardization over no points".into()));
    }
    for c in clouds {
        c.expect_frame(Frame::WorldMm)?;
    }
    let total: usize = clouds.iter().map(|c| c.len()).sum();
    let mut mean = [0.0; 3];
    for c in clouds {
        for p in c.points() {
            for a in 0..3 {
                mean[a] += p[a];
            }
        }
    }
    for m in &mut mean {
        *m /= total as f64;
    }
    let mut ss = 0.0;
    for c in clouds {
        for p in c.points() {
            for a in 0..3 {
                let d = p[a] - mean[a];
                ss += d * d;
            }
        }
    }
    let var = ss / (3.0 * total as f64);
    if var <= 0.0 {
        return Err(Error::Degenerate("zero variance in standardization".into()));
    }
    Ok(StandardizationStats { mean, std: var.sqrt() })
}

/// (x - mean) / std, world-mm -> standardized.
pub fn standardize(cloud: &PointCloud, stats: &StandardizationStats) -> Result<PointCloud> {
    cloud.expect_frame(Frame::WorldMm)?;
    let points = cloud
        .points()
        .iter()
        .map(|p| {
            [
                (p[0] - stats.mean[0]) / stats.std,
                (p[1] - stats.mean[1]) / stats.std,
                (p[2] - stats.mean[2]) / stats.std,
            ]
        })
        .collect();
    Ok(PointCloud { points, frame: Frame::Standardized })
}

/// x * std + mean, standardized -> world-mm.
pub fn destandardize(cloud: &PointCloud, stats: &StandardizationStats) -> Result<PointCloud> {
    cloud.expect_frame(Frame::Standardized)?;
    let points = cloud
        .points()
        .iter()
        .map(|p| {
            [
                p[0] * stats.std + stats.mean[0],
                p[1] * stats.std + stats.mean[1],
                p[2] * stats.std + stats.mean[2],
            ]
        })
        .collect();
    Ok(PointCloud { points, frame: Frame::WorldMm })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(points: Vec<[f64; 3]>) -> PointCloud {
        PointCloud::new(points, Frame::WorldMm).unwrap()
    }

    #[test]
    fn mean_of_two_single_point_clouds() {
        let a = cloud(vec![[0.0, 0.0, 0.0]]);
        let b = cloud(vec![[2.0, 2.0, 2.0]]);
        let stats = compute_standardization(&[a, b]).unwrap();
        assert_eq!(stats.mean, [1.0, 1.0, 1.0]);
    }

    #[test]
    fn already_standard_data_gives_identity_stats() {
        // +-1 in each axis around zero: mean 0, pooled std 1
        let pts = vec![
            [1.0, 1.0, 1.0],
            [-1.0, -1.0, -1.0],
            [1.0, -1.0, 1.0],
            [-1.0, 1.0, -1.0],
        ];
        let stats = compute_standardization(&[cloud(pts)]).unwrap();
        assert!(stats.mean.iter().all(|m| m.abs() < 1e-12));
        assert!((stats.std - 1.0).abs() < 1e-12);
    }

    #[test]
    fn standardize_self_consistency() {
        let mut rng = crate::rng::stream(5, "std");
        use rand::Rng;
        let clouds: Vec<PointCloud> = (0..4)
            .map(|_| {
                cloud(
                    (0..50)
                        .map(|_| {
                            [
                                rng.gen_range(-100.0..300.0),
                                rng.gen_range(0.0..80.0),
                                rng.gen_range(-5.0..5.0),
                            ]
                        })
                        .collect(),
                )
            })
            .collect();
        let stats = compute_standardization(&clouds).unwrap();
        let std_clouds: Vec<PointCloud> =
            clouds.iter().map(|c| standardize(c, &stats).unwrap()).collect();
        // pooled mean ~ 0 and pooled std ~ 1 after standardization
        let total: usize = std_clouds.iter().map(|c| c.len()).sum();
        let mut mean = [0.0; 3];
        for c in &std_clouds {
            for p in c.points() {
                for a in 0..3 {
                    mean[a] += p[a];
                }
            }
        }
        for m in &mut mean {
            *m /= total as f64;
        }
        let mut ss = 0.0;
        for c in &std_clouds {
            for p in c.points() {
                for a in 0..3 {
                    let d = p[a] - mean[a];
                    ss += d * d;
                }
            }
        }
        let std = (ss / (3.0 * total as f64)).sqrt();
        assert!(mean.iter().all(|m| m.abs() < 1e-9), "pooled mean {mean:?}");
        assert!((std - 1.0).abs() < 1e-9, "pooled std {std}");
    }

    #[test]
    fn round_trip_is_identity() {
        let c = cloud(vec![[1.0, 2.0, 3.0], [-4.0, 5.5, 0.25], [10.0, -3.0, 7.0]]);
        let stats = StandardizationStats { mean: [1.0, 1.0, 1.0], std: 2.0 };
        let s = standardize(&c, &stats).unwrap();
        let back = destandardize(&s, &stats).unwrap();
        for (p, q) in c.points().iter().zip(back.points()) {
            for a in 0..3 {
                assert!((p[a] - q[a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hand_computed_standardization() {
        let c = cloud(vec![[3.0, 1.0, 5.0], [-1.0, 3.0, 1.0]]);
        let stats = StandardizationStats { mean: [1.0, 1.0, 1.0], std: 2.0 };
        let s = standardize(&c, &stats).unwrap();
        assert_eq!(s.points()[0], [1.0, 0.0, 2.0]);
        assert_eq!(s.points()[1], [-1.0, 1.0, 0.0]);
        assert_eq!(s.frame(), Frame::Standardized);
    }

    #[test]
    fn identity_stats_is_identity_map() {
        let c = cloud(vec![[1.0, -2.0, 3.0]]);
        let stats = StandardizationStats { mean: [0.0, 0.0, 0.0], std: 1.0 };
        let s = standardize(&c, &stats).unwrap();
        assert_eq!(s.points(), c.points());
    }

    #[test]
    fn frame_mismatch_is_error() {
        let c = PointCloud::new(vec![[0.0; 3]], Frame::Standardized).unwrap();
        let stats = StandardizationStats { mean: [0.0; 3], std: 1.0 };
        assert!(standardize(&c, &stats).is_err());
        let w = cloud(vec![[0.0; 3]]);
        assert!(destandardize(&w, &stats).is_err());
    }

    #[test]
    fn zero_variance_is_error() {
        let c = cloud(vec![[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]]);
        assert!(matches!(compute_standardization(&[c]), Err(Error::Degenerate(_))));
    }
}
