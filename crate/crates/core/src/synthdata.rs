//! Synthetic paired data: smooth tube phantoms voxelized on a grid, plus
//! parameterized corruption emulating over- and under-segmentation. The
//! corrupted grid runs through the same extraction pipeline as the
//! reference, so surface extraction and sampling are exercised end to end.

use crate::error::{Error, Result, StageExt};
use crate::geometry::{
    binary_closing, compute_standardization, connected_components, marching_cubes,
    poisson_disk_sample, PointCloud, StandardizationStats, VoxelGrid,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Smooth open 3D path with a varying radius profile, both defined at the
/// control points and interpolated along a Catmull-Rom spline.
#[derive(Clone, Debug)]
pub struct TubeSpec {
    pub control_points: Vec<[f64; 3]>,
    pub radii_mm: Vec<f64>,
    pub seed: u64,
}

/// Box the random phantoms live in, mm.
const BOX_MM: f64 = 300.0;
const RADIUS_RANGE: (f64, f64) = (15.0, 30.0);

impl TubeSpec {
    /// Random spec: 8..=16 control points from a momentum walk inside the
    /// box, radii smoothed over neighbors. Steps are retried until they
    /// clear the self-intersection screen even after wall reflections.
    pub fn random<R: Rng>(rng: &mut R, seed: u64) -> Self {
        let n: usize = rng.gen_range(8..=16);
        let raw: Vec<f64> =
            (0..n).map(|_| rng.gen_range(RADIUS_RANGE.0..RADIUS_RANGE.1)).collect();
        let radii_mm: Vec<f64> = (0..n)
            .map(|i| {
                let a = raw[i.saturating_sub(1)];
                let b = raw[i];
                let c = raw[(i + 1).min(n - 1)];
                (a + b + c) / 3.0
            })
            .collect();
        let min_r = radii_mm.iter().cloned().fold(f64::INFINITY, f64::min);
        let min_step = 2.0 * min_r + 4.0;

        let margin = RADIUS_RANGE.1 + 10.0;
        let lo = margin;
        let hi = BOX_MM - margin;
        let center = [(lo + hi) / 2.0; 3];
        let mut p = [
            rng.gen_range(lo..hi),
            rng.gen_range(lo..hi),
            rng.gen_range(lo..hi),
        ];
        let mut dir = random_unit(rng);
        let mut control_points = vec![p];
        while control_points.len() < n {
            let mut placed = false;
            for attempt in 0..16 {
                let mut d = dir;
                if attempt > 0 {
                    // steer toward the box center when reflections keep
                    // shortening the step
                    let mut to_center =
                        [center[0] - p[0], center[1] - p[1], center[2] - p[2]];
                    normalize(&mut to_center);
                    for a in 0..3 {
                        d[a] = 0.4 * d[a] + 0.6 * to_center[a];
                    }
                }
                let fresh = random_unit(rng);
                for a in 0..3 {
                    d[a] = 0.65 * d[a] + 0.35 * fresh[a];
                }
                normalize(&mut d);
                let step = rng.gen_range(min_step + 2.0..min_step + 22.0);
                let mut q = p;
                let mut nd = d;
                for a in 0..3 {
                    q[a] += step * d[a];
                    if q[a] < lo {
                        q[a] = 2.0 * lo - q[a];
                        nd[a] = -nd[a];
                    }
                    if q[a] > hi {
                        q[a] = 2.0 * hi - q[a];
                        nd[a] = -nd[a];
                    }
                }
                if dist(&p, &q) >= min_step {
                    control_points.push(q);
                    p = q;
                    dir = nd;
                    placed = true;
                    break;
                }
            }
            if !placed {
                // deterministic fallback: a straight step toward the center
                let mut to_center = [center[0] - p[0], center[1] - p[1], center[2] - p[2]];
                normalize(&mut to_center);
                let mut q = p;
                for a in 0..3 {
                    q[a] += (min_step + 5.0) * to_center[a];
                }
                control_points.push(q);
                dir = to_center;
                p = q;
            }
        }
        Self { control_points, radii_mm, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.control_points.len() < 2 {
            return Err(Error::InvalidArgument("tube path needs >= 2 control points".into()));
        }
        if self.control_points.len() != self.radii_mm.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} control points vs {} radii",
                self.control_points.len(),
                self.radii_mm.len()
            )));
        }
        if self.radii_mm.iter().any(|r| *r <= 0.0) {
            return Err(Error::InvalidArgument("tube radii must be positive".into()));
        }
        // self-intersection screening: consecutive control points closer
        // than the tube diameter fold the sweep back onto itself
        let min_r = self.radii_mm.iter().cloned().fold(f64::INFINITY, f64::min);
        for w in self.control_points.windows(2) {
            let d = dist(&w[0], &w[1]);
            if d < 2.0 * min_r {
                return Err(Error::InvalidArgument(format!(
                    "consecutive control points {d:.1} mm apart fail self-intersection screening"
                )));
            }
        }
        Ok(())
    }
}

fn random_unit<R: Rng>(rng: &mut R) -> [f64; 3] {
    use rand_distr::StandardNormal;
    let mut v = [
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    ];
    normalize(&mut v);
    v
}

fn normalize(v: &mut [f64; 3]) {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-12);
    for a in v {
        *a /= n;
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Catmull-Rom point for segment i at parameter u in [0, 1].
fn catmull_rom(pts: &[[f64; 3]], vals: &[f64], i: usize, u: f64) -> ([f64; 3], f64) {
    let n = pts.len();
    let p0 = pts[i.saturating_sub(1)];
    let p1 = pts[i];
    let p2 = pts[(i + 1).min(n - 1)];
    let p3 = pts[(i + 2).min(n - 1)];
    let (v0, v1, v2, v3) = (
        vals[i.saturating_sub(1)],
        vals[i],
        vals[(i + 1).min(n - 1)],
        vals[(i + 2).min(n - 1)],
    );
    let u2 = u * u;
    let u3 = u2 * u;
    let w0 = -0.5 * u3 + u2 - 0.5 * u;
    let w1 = 1.5 * u3 - 2.5 * u2 + 1.0;
    let w2 = -1.5 * u3 + 2.0 * u2 + 0.5 * u;
    let w3 = 0.5 * u3 - 0.5 * u2;
    let mut p = [0.0; 3];
    for a in 0..3 {
        p[a] = w0 * p0[a] + w1 * p1[a] + w2 * p2[a] + w3 * p3[a];
    }
    (p, w0 * v0 + w1 * v1 + w2 * v2 + w3 * v3)
}

/// Dense polyline samples of (path point, radius) along the spline.
pub fn tube_path(spec: &TubeSpec, step_mm: f64) -> Vec<([f64; 3], f64)> {
    let n = spec.control_points.len();
    let mut out = Vec::new();
    for i in 0..n - 1 {
        let seg_len = dist(&spec.control_points[i], &spec.control_points[i + 1]);
        let steps = ((seg_len / step_mm).ceil() as usize).max(2);
        for k in 0..steps {
            let u = k as f64 / steps as f64;
            out.push(catmull_rom(&spec.control_points, &spec.radii_mm, i, u));
        }
    }
    out.push((
        *spec.control_points.last().unwrap(),
        *spec.radii_mm.last().unwrap(),
    ));
    out
}

/// Occupancy of the union of spheres swept along the spline.
pub fn gen_tube(spec: &TubeSpec, spacing_mm: f64) -> Result<VoxelGrid> {
    spec.validate()?;
    if spacing_mm <= 0.0 {
        return Err(Error::InvalidArgument("spacing must be positive".into()));
    }
    let path = tube_path(spec, spacing_mm * 0.5);
    let r_max = spec.radii_mm.iter().cloned().fold(0.0, f64::max);
    // leave headroom for corruption blobs that sit off the surface
    let margin = r_max + 90.0 + 2.0 * spacing_mm;
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for (p, _) in &path {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    for a in 0..3 {
        lo[a] -= margin;
        hi[a] += margin;
    }
    let dims = (
        ((hi[0] - lo[0]) / spacing_mm).ceil() as usize + 1,
        ((hi[1] - lo[1]) / spacing_mm).ceil() as usize + 1,
        ((hi[2] - lo[2]) / spacing_mm).ceil() as usize + 1,
    );
    let mut grid = VoxelGrid::new(dims, (spacing_mm, spacing_mm, spacing_mm), lo)?;
    stamp_spheres(&mut grid, &path, 0.0);
    Ok(grid)
}

/// Mark every voxel within `radius + pad` of any path sample.
fn stamp_spheres(grid: &mut VoxelGrid, path: &[([f64; 3], f64)], pad: f64) {
    let (sx, sy, sz) = grid.spacing_mm;
    for (c, r) in path {
        let r = r + pad;
        let lo = [
            (((c[0] - r) - grid.origin_mm[0]) / sx).floor().max(0.0) as usize,
            (((c[1] - r) - grid.origin_mm[1]) / sy).floor().max(0.0) as usize,
            (((c[2] - r) - grid.origin_mm[2]) / sz).floor().max(0.0) as usize,
        ];
        let hi = [
            ((((c[0] + r) - grid.origin_mm[0]) / sx).ceil() as usize).min(grid.dims.0 - 1),
            ((((c[1] + r) - grid.origin_mm[1]) / sy).ceil() as usize).min(grid.dims.1 - 1),
            ((((c[2] + r) - grid.origin_mm[2]) / sz).ceil() as usize).min(grid.dims.2 - 1),
        ];
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    if !grid.get(x, y, z) {
                        let p = grid.voxel_center(x, y, z);
                        if dist(&p, c) <= r {
                            grid.set(x, y, z, true);
                        }
                    }
                }
            }
        }
    }
}

/// Deletion / spurious-blob / jitter parameters. Deletions emulate
/// under-segmentation, blobs over-segmentation.
#[derive(Clone, Debug, Default)]
pub struct CorruptionSpec {
    pub deleted_fractions: Vec<f64>,
    pub n_spurious_blobs: usize,
    pub blob_radius_mm: (f64, f64),
    pub blob_offset_mm: (f64, f64),
    pub jitter_sigma_mm: f64,
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.deleted_fractions.iter().any(|f| !(*f > 0.0 && *f < 0.5)) {
            return Err(Error::InvalidArgument(
                "deleted fractions must lie in (0, 0.5)".into(),
            ));
        }
        if self.jitter_sigma_mm < 0.0 {
            return Err(Error::InvalidArgument("jitter sigma must be >= 0".into()));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.deleted_fractions.is_empty()
            && self.n_spurious_blobs == 0
            && self.jitter_sigma_mm == 0.0
    }
}

/// Apply segment deletions, spurious ellipsoidal blobs, and boundary
/// jitter to a tube occupancy grid. The tube path drives where segments
/// are cut and where blobs anchor.
pub fn corrupt<R: Rng>(
    grid: &VoxelGrid,
    path: &[([f64; 3], f64)],
    spec: &CorruptionSpec,
    rng: &mut R,
) -> Result<VoxelGrid> {
    spec.validate()?;
    let mut out = grid.clone();
    let m = path.len();

    // under-segmentation: carve out interior stretches of the path
    for &frac in &spec.deleted_fractions {
        let len = ((m as f64 * frac) as usize).max(1);
        let start_max = m.saturating_sub(len + m / 10).max(1);
        let start = rng.gen_range((m / 10).min(start_max - 1)..start_max);
        let (sx, sy, sz) = out.spacing_mm;
        for (c, r) in &path[start..start + len] {
            let rr = r + 2.0 * sx.max(sy).max(sz);
            let lo = [
                (((c[0] - rr) - out.origin_mm[0]) / sx).floor().max(0.0) as usize,
                (((c[1] - rr) - out.origin_mm[1]) / sy).floor().max(0.0) as usize,
                (((c[2] - rr) - out.origin_mm[2]) / sz).floor().max(0.0) as usize,
            ];
            let hi = [
                ((((c[0] + rr) - out.origin_mm[0]) / sx).ceil() as usize).min(out.dims.0 - 1),
                ((((c[1] + rr) - out.origin_mm[1]) / sy).ceil() as usize).min(out.dims.1 - 1),
                ((((c[2] + rr) - out.origin_mm[2]) / sz).ceil() as usize).min(out.dims.2 - 1),
            ];
            for x in lo[0]..=hi[0] {
                for y in lo[1]..=hi[1] {
                    for z in lo[2]..=hi[2] {
                        if out.get(x, y, z) && dist(&out.voxel_center(x, y, z), c) <= rr {
                            out.set(x, y, z, false);
                        }
                    }
                }
            }
        }
    }

    // over-segmentation: ellipsoidal blobs offset from the surface
    for _ in 0..spec.n_spurious_blobs {
        let (anchor, r_at) = path[rng.gen_range(0..m)];
        let dir = random_unit(rng);
        let offset = r_at + rng.gen_range(spec.blob_offset_mm.0..=spec.blob_offset_mm.1);
        let center = [
            anchor[0] + offset * dir[0],
            anchor[1] + offset * dir[1],
            anchor[2] + offset * dir[2],
        ];
        let semi = [
            rng.gen_range(spec.blob_radius_mm.0..=spec.blob_radius_mm.1),
            rng.gen_range(spec.blob_radius_mm.0..=spec.blob_radius_mm.1),
            rng.gen_range(spec.blob_radius_mm.0..=spec.blob_radius_mm.1),
        ];
        let (sx, sy, sz) = out.spacing_mm;
        let rmax = semi[0].max(semi[1]).max(semi[2]);
        let lo = [
            (((center[0] - rmax) - out.origin_mm[0]) / sx).floor().max(0.0) as usize,
            (((center[1] - rmax) - out.origin_mm[1]) / sy).floor().max(0.0) as usize,
            (((center[2] - rmax) - out.origin_mm[2]) / sz).floor().max(0.0) as usize,
        ];
        let hi = [
            ((((center[0] + rmax) - out.origin_mm[0]) / sx).ceil() as usize).min(out.dims.0 - 1),
            ((((center[1] + rmax) - out.origin_mm[1]) / sy).ceil() as usize).min(out.dims.1 - 1),
            ((((center[2] + rmax) - out.origin_mm[2]) / sz).ceil() as usize).min(out.dims.2 - 1),
        ];
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    let p = out.voxel_center(x, y, z);
                    let q = [
                        (p[0] - center[0]) / semi[0],
                        (p[1] - center[1]) / semi[1],
                        (p[2] - center[2]) / semi[2],
                    ];
                    if q[0] * q[0] + q[1] * q[1] + q[2] * q[2] <= 1.0 {
                        out.set(x, y, z, true);
                    }
                }
            }
        }
    }

    // boundary jitter: flip surface voxels with the probability that a
    // N(0, sigma) displacement crosses half a voxel
    if spec.jitter_sigma_mm > 0.0 {
        let spacing = out.spacing_mm.0.min(out.spacing_mm.1).min(out.spacing_mm.2);
        let p_flip = crate::metrics::wilcoxon::erfc(
            spacing / (2.0 * spec.jitter_sigma_mm * std::f64::consts::SQRT_2),
        );
        let (nx, ny, nz) = out.dims;
        let snapshot = out.clone();
        let mut flips = Vec::new();
        for x in 0..nx {
            for y in 0..ny {
                for z in 0..nz {
                    let occ = snapshot.get(x, y, z);
                    let mut boundary = false;
                    for (dx, dy, dz) in
                        [(1i64, 0i64, 0i64), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
                    {
                        let q = snapshot.get_clamped(x as i64 + dx, y as i64 + dy, z as i64 + dz);
                        if q != occ {
                            boundary = true;
                            break;
                        }
                    }
                    if boundary && rng.gen_bool(p_flip.clamp(0.0, 0.999)) {
                        flips.push((x, y, z, !occ));
                    }
                }
            }
        }
        for (x, y, z, v) in flips {
            out.set(x, y, z, v);
        }
    }

    Ok(out)
}

/// Corruption severity presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Severity {
    Mild,
    Moderate,
    Severe,
}

impl Severity {
    pub fn spec<R: Rng>(self, rng: &mut R) -> CorruptionSpec {
        match self {
            Severity::Mild => CorruptionSpec {
                deleted_fractions: vec![rng.gen_range(0.05..0.10)],
                n_spurious_blobs: usize::from(rng.gen_bool(0.5)),
                blob_radius_mm: (8.0, 14.0),
                blob_offset_mm: (10.0, 25.0),
                jitter_sigma_mm: 0.3,
            },
            Severity::Moderate => CorruptionSpec {
                deleted_fractions: vec![rng.gen_range(0.10..0.20), rng.gen_range(0.05..0.12)],
                n_spurious_blobs: rng.gen_range(1..=2),
                blob_radius_mm: (10.0, 18.0),
                blob_offset_mm: (15.0, 45.0),
                jitter_sigma_mm: 0.5,
            },
            Severity::Severe => CorruptionSpec {
                deleted_fractions: vec![rng.gen_range(0.20..0.30), rng.gen_range(0.15..0.25)],
                n_spurious_blobs: rng.gen_range(2..=3),
                blob_radius_mm: (12.0, 24.0),
                blob_offset_mm: (20.0, 60.0),
                jitter_sigma_mm: 0.8,
            },
        }
    }
}

/// Fractions of cases per severity level; must sum to 1.
#[derive(Clone, Copy, Debug)]
pub struct SeverityMix {
    pub mild: f64,
    pub moderate: f64,
    pub severe: f64,
}

impl Default for SeverityMix {
    fn default() -> Self {
        Self { mild: 0.4, moderate: 0.3, severe: 0.3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One generated case: reference and corrupted grids plus their sampled
/// world-mm clouds (lexicographically sorted).
pub struct Case {
    pub id: String,
    pub severity: Severity,
    pub ref_grid: VoxelGrid,
    pub sub_grid: VoxelGrid,
    pub ref_cloud: PointCloud,
    pub sub_cloud: PointCloud,
}

pub struct Dataset {
    pub cases: Vec<Case>,
    pub splits: Vec<Split>,
    pub stats: StandardizationStats,
}

impl Dataset {
    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == split)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct DatasetConfig {
    pub n_cases: usize,
    pub n_points: usize,
    pub spacing_mm: f64,
    pub closing_radius: usize,
    pub mix: SeverityMix,
    /// Explicit (train, val, test) counts; defaults to [`split_counts`].
    pub split_override: Option<(usize, usize, usize)>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_cases: 150,
            n_points: 256,
            spacing_mm: 2.0,
            closing_radius: 1,
            mix: SeverityMix::default(),
            split_override: None,
        }
    }
}

/// Split counts at the reference 405:61:112 proportions: floor val,
/// floor test, remainder train.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let val = n * 61 / 578;
    let test = n * 112 / 578;
    (n - val - test, val, test)
}

/// Generate `n_cases` paired cases with per-case derived seeds, split them
/// train/val/test, and pool standardization statistics over the training
/// split only (both members of each pair).
pub fn make_dataset(cfg: &DatasetConfig, master_seed: u64) -> Result<Dataset> {
    if cfg.n_cases < 10 {
        return Err(Error::InvalidArgument(format!(
            "need at least 10 cases to split, got {}",
            cfg.n_cases
        )));
    }
    let (train, val, test) = cfg.split_override.unwrap_or_else(|| split_counts(cfg.n_cases));
    if train + val + test != cfg.n_cases || train == 0 {
        return Err(Error::InvalidArgument(format!(
            "split {train}/{val}/{test} does not cover {} cases",
            cfg.n_cases
        )));
    }

    // deterministic severity assignment honoring the mix proportions
    let mut severities = Vec::with_capacity(cfg.n_cases);
    let n_mild = (cfg.n_cases as f64 * cfg.mix.mild).round() as usize;
    let n_sev = (cfg.n_cases as f64 * cfg.mix.severe).round() as usize;
    for i in 0..cfg.n_cases {
        severities.push(if i < n_mild {
            Severity::Mild
        } else if i >= cfg.n_cases - n_sev.min(cfg.n_cases) {
            Severity::Severe
        } else {
            Severity::Moderate
        });
    }
    use rand::seq::SliceRandom;
    severities.shuffle(&mut crate::rng::stream(master_seed, "synth/severity"));

    let mut cases = Vec::with_capacity(cfg.n_cases);
    for i in 0..cfg.n_cases {
        let mut rng: ChaCha8Rng = crate::rng::substream(master_seed, "synth/case", i as u64);
        let case = build_case(cfg, i, severities[i], &mut rng)
            .stage("synth/case")?;
        cases.push(case);
    }

    let mut splits = Vec::with_capacity(cfg.n_cases);
    for i in 0..cfg.n_cases {
        splits.push(if i < train {
            Split::Train
        } else if i < train + val {
            Split::Val
        } else {
            Split::Test
        });
    }

    let train_clouds: Vec<PointCloud> = cases
        .iter()
        .zip(&splits)
        .filter(|(_, s)| **s == Split::Train)
        .flat_map(|(c, _)| [c.ref_cloud.clone(), c.sub_cloud.clone()])
        .collect();
    let stats = compute_standardization(&train_clouds).stage("synth/stats")?;

    Ok(Dataset { cases, splits, stats })
}

fn build_case<R: Rng>(
    cfg: &DatasetConfig,
    index: usize,
    severity: Severity,
    rng: &mut R,
) -> Result<Case> {
    let spec = TubeSpec::random(rng, index as u64);
    let raw = gen_tube(&spec, cfg.spacing_mm)?;
    let ref_grid = binary_closing(&raw, cfg.closing_radius)?;
    let (components, _) = connected_components(&ref_grid);
    if components != 1 {
        return Err(Error::Degenerate(format!(
            "case {index}: reference has {components} components"
        )));
    }
    let path = tube_path(&spec, cfg.spacing_mm * 0.5);
    let corruption = severity.spec(rng);
    let sub_grid = corrupt(&ref_grid, &path, &corruption, rng)?;

    let ref_mesh = marching_cubes(&ref_grid, 0.5)?;
    let sub_mesh = marching_cubes(&sub_grid, 0.5)?;
    if ref_mesh.is_empty() || sub_mesh.is_empty() {
        return Err(Error::Degenerate(format!("case {index}: empty surface")));
    }
    let ref_cloud = poisson_disk_sample(&ref_mesh, cfg.n_points, rng)?.sorted();
    let sub_cloud = poisson_disk_sample(&sub_mesh, cfg.n_points, rng)?.sorted();

    Ok(Case {
        id: format!("case_{index:04}"),
        severity,
        ref_grid,
        sub_grid,
        ref_cloud,
        sub_cloud,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::chamfer;
    use crate::rng;

    fn straight_spec(n: usize, r: f64, length: f64) -> TubeSpec {
        let control_points = (0..n)
            .map(|i| [60.0 + length * i as f64 / (n - 1) as f64, 150.0, 150.0])
            .collect();
        TubeSpec { control_points, radii_mm: vec![r; n], seed: 0 }
    }

    #[test]
    fn straight_tube_volume_matches_capsule() {
        let r = 20.0;
        let length = 180.0;
        let spec = straight_spec(4, r, length);
        let grid = gen_tube(&spec, 2.0).unwrap();
        let vol = grid.occupied_volume_mm3();
        let capsule = std::f64::consts::PI * r * r * length
            + 4.0 / 3.0 * std::f64::consts::PI * r * r * r;
        let rel = (vol - capsule).abs() / capsule;
        assert!(rel < 0.10, "volume {vol:.0} vs capsule {capsule:.0}, rel {rel:.3}");
    }

    #[test]
    fn generated_tubes_are_connected() {
        for seed in 0..5u64 {
            let spec = TubeSpec::random(&mut rng::substream(1, "tube", seed), seed);
            let grid = gen_tube(&spec, 2.5).unwrap();
            let (count, _) = connected_components(&grid);
            assert_eq!(count, 1, "seed {seed}");
        }
    }

    #[test]
    fn same_seed_same_grid() {
        let mk = || {
            let spec = TubeSpec::random(&mut rng::stream(2, "det"), 0);
            gen_tube(&spec, 2.0).unwrap()
        };
        assert_eq!(mk(), mk());
    }

    #[test]
    fn degenerate_path_is_rejected() {
        let spec = TubeSpec {
            control_points: vec![[0.0; 3]],
            radii_mm: vec![10.0],
            seed: 0,
        };
        assert!(gen_tube(&spec, 2.0).is_err());
        let close = TubeSpec {
            control_points: vec![[0.0; 3], [1.0, 0.0, 0.0]],
            radii_mm: vec![10.0, 10.0],
            seed: 0,
        };
        assert!(gen_tube(&close, 2.0).is_err());
    }

    #[test]
    fn zero_corruption_is_identity() {
        let spec = straight_spec(4, 18.0, 160.0);
        let grid = gen_tube(&spec, 2.0).unwrap();
        let path = tube_path(&spec, 1.0);
        let out =
            corrupt(&grid, &path, &CorruptionSpec::default(), &mut rng::stream(3, "c")).unwrap();
        assert_eq!(grid, out);
    }

    #[test]
    fn deleting_a_middle_segment_disconnects() {
        let spec = straight_spec(4, 18.0, 200.0);
        let grid = gen_tube(&spec, 2.0).unwrap();
        let path = tube_path(&spec, 1.0);
        let mut disconnected = 0;
        for seed in 0..5u64 {
            let spec_c = CorruptionSpec {
                deleted_fractions: vec![0.2],
                ..Default::default()
            };
            let out = corrupt(&grid, &path, &spec_c, &mut rng::substream(4, "del", seed)).unwrap();
            let (count, _) = connected_components(&out);
            if count >= 2 {
                disconnected += 1;
            }
        }
        assert!(disconnected >= 4, "only {disconnected}/5 cuts disconnected the tube");
    }

    #[test]
    fn chamfer_grows_with_deleted_fraction() {
        let spec = straight_spec(4, 18.0, 220.0);
        let grid = gen_tube(&spec, 2.0).unwrap();
        let path = tube_path(&spec, 1.0);
        let mesh = marching_cubes(&grid, 0.5).unwrap();
        let mut medians = Vec::new();
        for frac in [0.05, 0.15, 0.3] {
            let mut cds = Vec::new();
            for seed in 0..10u64 {
                let mut rng = rng::substream(5, "grow", seed + (frac * 1000.0) as u64);
                let spec_c = CorruptionSpec {
                    deleted_fractions: vec![frac],
                    ..Default::default()
                };
                let out = corrupt(&grid, &path, &spec_c, &mut rng).unwrap();
                let sub_mesh = marching_cubes(&out, 0.5).unwrap();
                let clean = poisson_disk_sample(&mesh, 128, &mut rng).unwrap();
                let corroded = poisson_disk_sample(&sub_mesh, 128, &mut rng).unwrap();
                cds.push(chamfer(&clean, &corroded).unwrap());
            }
            cds.sort_by(|a, b| a.partial_cmp(b).unwrap());
            medians.push(cds[cds.len() / 2]);
        }
        assert!(
            medians[0] < medians[1] && medians[1] < medians[2],
            "medians not monotone: {medians:?}"
        );
    }

    #[test]
    fn split_counts_rule() {
        // floor val, floor test, remainder train at 405:61:112
        assert_eq!(split_counts(100), (71, 10, 19));
        assert_eq!(split_counts(578), (405, 61, 112));
        let (tr, va, te) = split_counts(150);
        assert_eq!(tr + va + te, 150);
    }

    #[test]
    fn dataset_contract_holds() {
        let cfg = DatasetConfig {
            n_cases: 12,
            n_points: 64,
            spacing_mm: 3.0,
            split_override: Some((8, 2, 2)),
            ..Default::default()
        };
        let ds = make_dataset(&cfg, 11).unwrap();
        assert_eq!(ds.cases.len(), 12);
        for case in &ds.cases {
            assert_eq!(case.ref_cloud.len(), 64);
            assert_eq!(case.sub_cloud.len(), 64);
        }
        assert_eq!(ds.indices_of(Split::Train).len(), 8);
        assert_eq!(ds.indices_of(Split::Val).len(), 2);
        assert_eq!(ds.indices_of(Split::Test).len(), 2);

        // stats recompute from the training split only
        let train_clouds: Vec<PointCloud> = ds
            .indices_of(Split::Train)
            .into_iter()
            .flat_map(|i| [ds.cases[i].ref_cloud.clone(), ds.cases[i].sub_cloud.clone()])
            .collect();
        let expect = compute_standardization(&train_clouds).unwrap();
        assert_eq!(ds.stats, expect);

        // determinism
        let ds2 = make_dataset(&cfg, 11).unwrap();
        assert_eq!(ds2.cases[3].ref_cloud, ds.cases[3].ref_cloud);
        assert_eq!(ds2.cases[7].sub_cloud, ds.cases[7].sub_cloud);
    }

    #[test]
    fn too_few_cases_is_error() {
        let cfg = DatasetConfig { n_cases: 5, ..Default::default() };
        assert!(make_dataset(&cfg, 0).is_err());
    }
}
