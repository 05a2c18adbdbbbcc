//! Uniform-grid nearest-neighbor index over 3D points.
//!
//! Queries are exact: the expanding-shell search only stops once no
//! unexplored cell can hold a closer point, and radius queries compare the
//! same squared distances a brute-force scan would. Agreement with brute
//! force is asserted by the metric tests and the acceptance suite.

use std::collections::HashMap;

#[inline]
pub fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

pub struct NnIndex<'a> {
    points: &'a [[f64; 3]],
    cell: f64,
    buckets: HashMap<(i64, i64, i64), Vec<u32>>,
    key_lo: (i64, i64, i64),
    key_hi: (i64, i64, i64),
}

/// Beyond this many rings the shell enumeration costs more than a linear
/// scan; fall back to brute force (still exact).
const FAR_RING_LIMIT: i64 = 64;

impl<'a> NnIndex<'a> {
    pub fn build(points: &'a [[f64; 3]]) -> Self {
        assert!(!points.is_empty(), "NnIndex over empty point set");
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let diag = ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2) + (hi[2] - lo[2]).powi(2))
            .sqrt();
        // roughly one point per cell; degenerate clouds fall back to unit cells
        let cell = if diag > 0.0 { diag / (points.len() as f64).cbrt() } else { 1.0 };
        let mut buckets: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        let mut key_lo = (i64::MAX, i64::MAX, i64::MAX);
        let mut key_hi = (i64::MIN, i64::MIN, i64::MIN);
        for (i, p) in points.iter().enumerate() {
            let k = Self::key_for(p, cell);
            key_lo = (key_lo.0.min(k.0), key_lo.1.min(k.1), key_lo.2.min(k.2));
            key_hi = (key_hi.0.max(k.0), key_hi.1.max(k.1), key_hi.2.max(k.2));
            buckets.entry(k).or_default().push(i as u32);
        }
        Self { points, cell, buckets, key_lo, key_hi }
    }

    /// Chebyshev cell distance from a query cell to the occupied key box;
    /// rings closer than this are provably empty.
    fn first_ring(&self, c: (i64, i64, i64)) -> i64 {
        let gap = |lo: i64, hi: i64, v: i64| -> i64 { (lo - v).max(v - hi).max(0) };
        gap(self.key_lo.0, self.key_hi.0, c.0)
            .max(gap(self.key_lo.1, self.key_hi.1, c.1))
            .max(gap(self.key_lo.2, self.key_hi.2, c.2))
    }

    #[inline]
    fn key_for(p: &[f64; 3], cell: f64) -> (i64, i64, i64) {
        (
            (p[0] / cell).floor() as i64,
            (p[1] / cell).floor() as i64,
            (p[2] / cell).floor() as i64,
        )
    }

    fn brute_nearest(&self, q: &[f64; 3]) -> f64 {
        self.points.iter().map(|p| dist2(q, p)).fold(f64::INFINITY, f64::min).sqrt()
    }

    /// Exact nearest-neighbor distance from `q` to the indexed set.
    pub fn nearest_dist(&self, q: &[f64; 3]) -> f64 {
        let key = Self::key_for(q, self.cell);
        let (cx, cy, cz) = key;
        let mut best = f64::INFINITY;
        let mut ring = self.first_ring(key);
        if ring > FAR_RING_LIMIT {
            return self.brute_nearest(q);
        }
        loop {
            // nothing in ring k or beyond can beat best once
            // (k-1) * cell exceeds it
            if best.is_finite() && (ring - 1) as f64 * self.cell > best {
                break;
            }
            if ring > FAR_RING_LIMIT {
                return self.brute_nearest(q);
            }
            self.for_ring(cx, cy, cz, ring, |bucket| {
                for &i in bucket {
                    let d2 = dist2(q, &self.points[i as usize]);
                    let d = d2.sqrt();
                    if d < best {
                        best = d;
                    }
                }
            });
            ring += 1;
        }
        best
    }

    /// Indices of all points with distance <= radius from `q`,
    /// optionally excluding one index (the query point itself).
    pub fn within_radius(&self, q: &[f64; 3], radius: f64, exclude: Option<usize>) -> Vec<usize> {
        let r2 = radius * radius;
        let lo = (
            ((q[0] - radius) / self.cell).floor() as i64,
            ((q[1] - radius) / self.cell).floor() as i64,
            ((q[2] - radius) / self.cell).floor() as i64,
        );
        let hi = (
            ((q[0] + radius) / self.cell).floor() as i64,
            ((q[1] + radius) / self.cell).floor() as i64,
            ((q[2] + radius) / self.cell).floor() as i64,
        );
        let mut out = Vec::new();
        for x in lo.0..=hi.0 {
            for y in lo.1..=hi.1 {
                for z in lo.2..=hi.2 {
                    if let Some(bucket) = self.buckets.get(&(x, y, z)) {
                        for &i in bucket {
                            let i = i as usize;
                            if Some(i) == exclude {
                                continue;
                            }
                            if dist2(q, &self.points[i]) <= r2 {
                                out.push(i);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub fn count_within(&self, q: &[f64; 3], radius: f64, exclude: Option<usize>) -> usize {
        self.within_radius(q, radius, exclude).len()
    }

    /// The k nearest indexed points to `q` (excluding `exclude`), sorted by
    /// ascending distance with index as tie-break. Returns fewer than k if
    /// the set is small.
    pub fn k_nearest(&self, q: &[f64; 3], k: usize, exclude: Option<usize>) -> Vec<(f64, usize)> {
        let limit = self.points.len() - usize::from(exclude.is_some());
        let want = k.min(limit);
        if want == 0 {
            return Vec::new();
        }
        let brute = |this: &Self| -> Vec<(f64, usize)> {
            let mut all: Vec<(f64, usize)> = this
                .points
                .iter()
                .enumerate()
                .filter(|(j, _)| Some(*j) != exclude)
                .map(|(j, p)| (dist2(q, p).sqrt(), j))
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
            all.truncate(want);
            all
        };
        let key = Self::key_for(q, self.cell);
        let (cx, cy, cz) = key;
        let mut found: Vec<(f64, usize)> = Vec::new();
        let mut ring = self.first_ring(key);
        if ring > FAR_RING_LIMIT {
            return brute(self);
        }
        loop {
            let kth = if found.len() >= want { found[want - 1].0 } else { f64::INFINITY };
            if kth.is_finite() && (ring - 1) as f64 * self.cell > kth {
                break;
            }
            if ring > FAR_RING_LIMIT {
                return brute(self);
            }
            self.for_ring(cx, cy, cz, ring, |bucket| {
                for &i in bucket {
                    let i = i as usize;
                    if Some(i) == exclude {
                        continue;
                    }
                    let d = dist2(q, &self.points[i]).sqrt();
                    found.push((d, i));
                }
            });
            found.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
            found.truncate(want * 4 + 16);
            ring += 1;
        }
        found.truncate(want);
        found
    }

    /// Visit every bucket whose cell is at Chebyshev ring distance exactly
    /// `ring` from (cx, cy, cz).
    fn for_ring<F: FnMut(&Vec<u32>)>(&self, cx: i64, cy: i64, cz: i64, ring: i64, mut f: F) {
        if ring == 0 {
            if let Some(b) = self.buckets.get(&(cx, cy, cz)) {
                f(b);
            }
            return;
        }
        for dx in -ring..=ring {
            for dy in -ring..=ring {
                for dz in -ring..=ring {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                        continue;
                    }
                    if let Some(b) = self.buckets.get(&(cx + dx, cy + dy, cz + dz)) {
                        f(b);
                    }
                }
            }
        }
    }
}
