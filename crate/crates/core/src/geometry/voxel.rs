use crate::error::{Error, Result};

/// Binary occupancy lattice with physical spacing.
///
/// Linear layout is x-major / z-fastest: `idx = (x * ny + y) * nz + z`.
/// `origin_mm` is the world position of voxel (0, 0, 0)'s center.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub dims: (usize, usize, usize),
    pub spacing_mm: (f64, f64, f64),
    pub origin_mm: [f64; 3],
    occupancy: Vec<bool>,
}

impl VoxelGrid {
    pub fn new(
        dims: (usize, usize, usize),
        spacing_mm: (f64, f64, f64),
        origin_mm: [f64; 3],
    ) -> Result<Self> {
        if dims.0 < 1 || dims.1 < 1 || dims.2 < 1 {
            return Err(Error::InvalidArgument(format!("grid dims {dims:?} must be >= 1")));
        }
        if spacing_mm.0 <= 0.0 || spacing_mm.1 <= 0.0 || spacing_mm.2 <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "grid spacing {spacing_mm:?} must be positive"
            )));
        }
        let n = dims.0 * dims.1 * dims.2;
        Ok(Self { dims, spacing_mm, origin_mm, occupancy: vec![false; n] })
    }

    pub fn from_occupancy(
        dims: (usize, usize, usize),
        spacing_mm: (f64, f64, f64),
        origin_mm: [f64; 3],
        occupancy: Vec<bool>,
    ) -> Result<Self> {
        let mut g = Self::new(dims, spacing_mm, origin_mm)?;
        if occupancy.len() != g.occupancy.len() {
            return Err(Error::ShapeMismatch(format!(
                "occupancy length {} for dims {:?}",
                occupancy.len(),
                dims
            )));
        }
        g.occupancy = occupancy;
        Ok(g)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.dims.1 + y) * self.dims.2 + z
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.occupancy[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = self.index(x, y, z);
        self.occupancy[i] = v;
    }

    /// Occupancy at signed coordinates; outside the grid reads as empty.
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64, z: i64) -> bool {
        if x < 0 || y < 0 || z < 0 {
            return false;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        if x >= self.dims.0 || y >= self.dims.1 || z >= self.dims.2 {
            return false;
        }
        self.get(x, y, z)
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }

    pub fn count_occupied(&self) -> usize {
        self.occupancy.iter().filter(|&&v| v).count()
    }

    /// World-mm position of a voxel center.
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        [
            self.origin_mm[0] + x as f64 * self.spacing_mm.0,
            self.origin_mm[1] + y as f64 * self.spacing_mm.1,
            self.origin_mm[2] + z as f64 * self.spacing_mm.2,
        ]
    }

    /// Occupied volume in mm^3.
    pub fn occupied_volume_mm3(&self) -> f64 {
        self.count_occupied() as f64 * self.spacing_mm.0 * self.spacing_mm.1 * self.spacing_mm.2
    }
}

/// Structuring element offsets: the Chebyshev ball of the given radius,
/// i.e. a (2r+1)^3 box. A Euclidean ball cannot bridge a one-voxel gap
/// between two lone voxels (erosion re-opens it); the box can, which is
/// the behavior fragmented-segmentation merging needs.
fn ball_offsets(radius: i64) -> Vec<(i64, i64, i64)> {
    let mut offs = Vec::new();
    for dx in -radius..=radius {
        for dy in -radius..=radius {
            for dz in -radius..=radius {
                offs.push((dx, dy, dz));
            }
        }
    }
    offs
}

/// Morphological closing: dilation by a box of `radius_voxels` followed by
/// erosion with the same element. Out-of-grid reads count as empty for the
/// dilation and occupied for the erosion, which keeps closing extensive at
/// the grid boundary.
pub fn binary_closing(grid: &VoxelGrid, radius_voxels: usize) -> Result<VoxelGrid> {
    if radius_voxels < 1 {
        return Err(Error::InvalidArgument("closing radius must be >= 1".into()));
    }
    let r = radius_voxels as i64;
    let offs = ball_offsets(r);
    let (nx, ny, nz) = grid.dims;

    let mut dilated = VoxelGrid::new(grid.dims, grid.spacing_mm, grid.origin_mm)?;
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                if !grid.get(x, y, z) {
                    continue;
                }
                for &(dx, dy, dz) in &offs {
                    let (qx, qy, qz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                    if qx >= 0
                        && qy >= 0
                        && qz >= 0
                        && (qx as usize) < nx
                        && (qy as usize) < ny
                        && (qz as usize) < nz
                    {
                        dilated.set(qx as usize, qy as usize, qz as usize, true);
                    }
                }
            }
        }
    }

    let mut out = VoxelGrid::new(grid.dims, grid.spacing_mm, grid.origin_mm)?;
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                if !dilated.get(x, y, z) {
                    continue;
                }
                let mut keep = true;
                for &(dx, dy, dz) in &offs {
                    let (qx, qy, qz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                    let inside = qx >= 0
                        && qy >= 0
                        && qz >= 0
                        && (qx as usize) < nx
                        && (qy as usize) < ny
                        && (qz as usize) < nz;
                    // out-of-grid treated as occupied during erosion
                    if inside && !dilated.get(qx as usize, qy as usize, qz as usize) {
                        keep = false;
                        break;
                    }
                }
                out.set(x, y, z, keep);
            }
        }
    }
    Ok(out)
}

/// 26-connected component labeling of occupied voxels.
///
/// Returns the component count (background excluded) and a per-voxel label
/// array: 0 for background, 1..=count for components.
pub fn connected_components(grid: &VoxelGrid) -> (usize, Vec<u32>) {
    let (nx, ny, nz) = grid.dims;
    let mut labels = vec![0u32; nx * ny * nz];
    let mut count = 0u32;
    let mut stack: Vec<(usize, usize, usize)> = Vec::new();

    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let i = grid.index(x, y, z);
                if !grid.occupancy()[i] || labels[i] != 0 {
                    continue;
                }
                count += 1;
                labels[i] = count;
                stack.push((x, y, z));
                while let Some((cx, cy, cz)) = stack.pop() {
                    for dx in -1i64..=1 {
                        for dy in -1i64..=1 {
                            for dz in -1i64..=1 {
                                if dx == 0 && dy == 0 && dz == 0 {
                                    continue;
                                }
                                let (qx, qy, qz) =
                                    (cx as i64 + dx, cy as i64 + dy, cz as i64 + dz);
                                if !grid.get_clamped(qx, qy, qz) {
                                    continue;
                                }
                                let (qx, qy, qz) = (qx as usize, qy as usize, qz as usize);
                                let qi = grid.index(qx, qy, qz);
                                if labels[qi] == 0 {
                                    labels[qi] = count;
                                    stack.push((qx, qy, qz));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (count as usize, labels)
}
