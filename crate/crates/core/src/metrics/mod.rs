//! Shape-discrepancy metrics and the paired statistical test used by the
//! evaluation pipeline.

pub mod nn;
pub(crate) mod wilcoxon;

pub use nn::NnIndex;
pub use wilcoxon::wilcoxon_signed_rank;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use nn::dist2;

/// Per-case metric row.
#[derive(Clone, Debug)]
pub struct MetricReport {
    pub case_id: String,
    pub chamfer_mm: f64,
    pub hausdorff_mm: f64,
    pub f1_percent: Option<f64>,
}

fn check_pair(a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("metric on empty cloud".into()));
    }
    if a.frame() != b.frame() {
        return Err(Error::FrameMismatch { expected: a.frame().name(), got: b.frame().name() });
    }
    Ok(())
}

/// Mean nearest-neighbor distance from every point of `from` to `to`.
fn directed_mean(from: &PointCloud, to_index: &NnIndex) -> f64 {
    let sum: f64 = from.points().iter().map(|p| to_index.nearest_dist(p)).sum();
    sum / from.len() as f64
}

/// Max nearest-neighbor distance from every point of `from` to `to`.
fn directed_max(from: &PointCloud, to_index: &NnIndex) -> f64 {
    from.points().iter().map(|p| to_index.nearest_dist(p)).fold(0.0, f64::max)
}

/// Symmetric Chamfer distance in linear (non-squared) Euclidean form:
/// 0.5 * (mean_a min-dist to b + mean_b min-dist to a).
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    check_pair(a, b)?;
    let ia = NnIndex::build(a.points());
    let ib = NnIndex::build(b.points());
    Ok(0.5 * (directed_mean(a, &ib) + directed_mean(b, &ia)))
}

/// Max of the two directed Hausdorff distances.
pub fn hausdorff(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    check_pair(a, b)?;
    let ia = NnIndex::build(a.points());
    let ib = NnIndex::build(b.points());
    Ok(directed_max(a, &ib).max(directed_max(b, &ia)))
}

/// Reconstruction F1 at threshold `tau_mm`, in percent: precision is the
/// share of predicted points within tau of the reference, recall the share
/// of reference points within tau of the prediction.
pub fn f1_at_tau(pred: &PointCloud, gt: &PointCloud, tau_mm: f64) -> Result<f64> {
    check_pair(pred, gt)?;
    if tau_mm <= 0.0 {
        return Err(Error::InvalidArgument(format!("f1 tau {tau_mm} must be positive")));
    }
    let ig = NnIndex::build(gt.points());
    let ip = NnIndex::build(pred.points());
    let tau2 = tau_mm * tau_mm;
    let hits_p = pred.points().iter().filter(|p| {
        let d = ig.nearest_dist(p);
        d * d <= tau2
    }).count();
    let hits_g = gt.points().iter().filter(|p| {
        let d = ip.nearest_dist(p);
        d * d <= tau2
    }).count();
    let precision = 100.0 * hits_p as f64 / pred.len() as f64;
    let recall = 100.0 * hits_g as f64 / gt.len() as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Default F1 threshold: 1% of the reference cloud's bounding-box diagonal.
pub fn default_f1_tau(gt: &PointCloud) -> f64 {
    0.01 * gt.bbox_diagonal()
}

/// Brute-force oracles, shared by unit tests and the acceptance suite.
pub mod oracle {
    use super::*;

    fn nearest(from: &[[f64; 3]], q: &[f64; 3]) -> f64 {
        from.iter().map(|p| dist2(q, p)).fold(f64::INFINITY, f64::min).sqrt()
    }

    pub fn chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
        let ab: f64 = a.points().iter().map(|p| nearest(b.points(), p)).sum::<f64>()
            / a.len() as f64;
        let ba: f64 = b.points().iter().map(|p| nearest(a.points(), p)).sum::<f64>()
            / b.len() as f64;
        0.5 * (ab + ba)
    }

    pub fn hausdorff(a: &PointCloud, b: &PointCloud) -> f64 {
        let ab = a.points().iter().map(|p| nearest(b.points(), p)).fold(0.0, f64::max);
        let ba = b.points().iter().map(|p| nearest(a.points(), p)).fold(0.0, f64::max);
        ab.max(ba)
    }

    pub fn f1_at_tau(pred: &PointCloud, gt: &PointCloud, tau: f64) -> f64 {
        let hp = pred.points().iter().filter(|p| nearest(gt.points(), p) <= tau).count();
        let hg = gt.points().iter().filter(|p| nearest(pred.points(), p) <= tau).count();
        let precision = 100.0 * hp as f64 / pred.len() as f64;
        let recall = 100.0 * hg as f64 / gt.len() as f64;
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    }

    pub fn neighbor_count(points: &[[f64; 3]], i: usize, radius: f64) -> usize {
        points
            .iter()
            .enumerate()
            .filter(|(j, p)| *j != i && dist2(p, &points[i]) <= radius * radius)
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Frame;
    use rand::Rng;

    fn cloud(points: Vec<[f64; 3]>) -> PointCloud {
        PointCloud::new(points, Frame::WorldMm).unwrap()
    }

    fn random_cloud(n: usize, seed: u64, scale: f64) -> PointCloud {
        let mut rng = crate::rng::substream(17, "metric-cloud", seed);
        cloud(
            (0..n)
                .map(|_| {
                    [
                        rng.gen_range(-scale..scale),
                        rng.gen_range(-scale..scale),
                        rng.gen_range(-scale..scale),
                    ]
                })
                .collect(),
        )
    }

    #[test]
    fn identical_clouds_have_zero_distance() {
        let c = random_cloud(40, 0, 30.0);
        assert_eq!(chamfer(&c, &c).unwrap(), 0.0);
        assert_eq!(hausdorff(&c, &c).unwrap(), 0.0);
        assert_eq!(f1_at_tau(&c, &c, 1.0).unwrap(), 100.0);
    }

    #[test]
    fn chamfer_three_four_five() {
        let a = cloud(vec![[0.0, 0.0, 0.0]]);
        let b = cloud(vec![[3.0, 4.0, 0.0]]);
        assert_eq!(chamfer(&a, &b).unwrap(), 5.0);
    }

    #[test]
    fn hausdorff_one_unmatched_point() {
        let a = cloud(vec![[0.0, 0.0, 0.0]]);
        let b = cloud(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert_eq!(hausdorff(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn matches_brute_force_oracle_on_random_pairs() {
        let mut rng = crate::rng::stream(23, "oracle-sizes");
        for seed in 0..200u64 {
            let n1 = rng.gen_range(1..=64);
            let n2 = rng.gen_range(1..=64);
            let a = random_cloud(n1, seed * 2, 40.0);
            let b = random_cloud(n2, seed * 2 + 1, 40.0);
            let cd = chamfer(&a, &b).unwrap();
            let hd = hausdorff(&a, &b).unwrap();
            let cd_o = oracle::chamfer(&a, &b);
            let hd_o = oracle::hausdorff(&a, &b);
            assert!((cd - cd_o).abs() <= 1e-9 * cd_o.max(1.0), "chamfer {cd} vs {cd_o}");
            assert!((hd - hd_o).abs() <= 1e-9 * hd_o.max(1.0), "hausdorff {hd} vs {hd_o}");
            let f1 = f1_at_tau(&a, &b, 10.0).unwrap();
            let f1_o = oracle::f1_at_tau(&a, &b, 10.0);
            assert!((f1 - f1_o).abs() <= 1e-9, "f1 {f1} vs {f1_o}");
        }
    }

    #[test]
    fn f1_half_precision_full_recall() {
        // pred: 2 points on gt, 2 far away; gt fully covered
        let gt = cloud(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let pred = cloud(vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [50.0, 0.0, 0.0],
            [60.0, 0.0, 0.0],
        ]);
        let f1 = f1_at_tau(&pred, &gt, 0.5).unwrap();
        // precision 50, recall 100 -> 2*50*100/150 = 66.67
        assert!((f1 - 200.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn f1_zero_when_farther_than_tau() {
        let a = cloud(vec![[0.0, 0.0, 0.0]]);
        let b = cloud(vec![[100.0, 0.0, 0.0]]);
        assert_eq!(f1_at_tau(&a, &b, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn f1_monotone_in_tau() {
        let a = random_cloud(50, 7, 20.0);
        let b = random_cloud(50, 8, 20.0);
        let mut last = 0.0;
        for tau in [0.5, 1.0, 2.0, 5.0, 10.0, 50.0, 200.0] {
            let f1 = f1_at_tau(&a, &b, tau).unwrap();
            assert!(f1 >= last - 1e-12, "f1 not monotone at tau {tau}");
            last = f1;
        }
        assert_eq!(last, 100.0);
    }

    #[test]
    fn symmetric_and_rigid_invariant() {
        let a = random_cloud(30, 11, 25.0);
        let b = random_cloud(45, 12, 25.0);
        assert_eq!(chamfer(&a, &b).unwrap(), chamfer(&b, &a).unwrap());
        assert_eq!(hausdorff(&a, &b).unwrap(), hausdorff(&b, &a).unwrap());

        // joint rigid transform: rotation about z by 0.7 rad + translation
        let (s, c) = 0.7f64.sin_cos();
        let rt = |p: &[f64; 3]| -> [f64; 3] {
            [c * p[0] - s * p[1] + 13.0, s * p[0] + c * p[1] - 4.0, p[2] + 21.0]
        };
        let ar = cloud(a.points().iter().map(rt).collect());
        let br = cloud(b.points().iter().map(rt).collect());
        let cd0 = chamfer(&a, &b).unwrap();
        let cd1 = chamfer(&ar, &br).unwrap();
        let hd0 = hausdorff(&a, &b).unwrap();
        let hd1 = hausdorff(&ar, &br).unwrap();
        assert!((cd0 - cd1).abs() < 1e-9);
        assert!((hd0 - hd1).abs() < 1e-9);
    }

    #[test]
    fn directed_hausdorff_dominates_directed_mean() {
        let a = random_cloud(40, 21, 15.0);
        let b = random_cloud(40, 22, 15.0);
        let ib = NnIndex::build(b.points());
        assert!(directed_max(&a, &ib) >= directed_mean(&a, &ib));
    }

    #[test]
    fn empty_and_frame_errors() {
        let a = cloud(vec![[0.0; 3]]);
        let empty = PointCloud::new(vec![], Frame::WorldMm).unwrap();
        assert!(chamfer(&a, &empty).is_err());
        let std = PointCloud::new(vec![[0.0; 3]], Frame::Standardized).unwrap();
        assert!(chamfer(&a, &std).is_err());
        assert!(f1_at_tau(&a, &a, 0.0).is_err());
    }
}
