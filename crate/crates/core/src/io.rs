//! File formats: voxel grids ("VGRD"), point clouds ("PCLD"), model
//! checkpoints ("CKPT"), standardization stats, and ASCII OBJ meshes.
//! All integers and floats are little-endian.

use crate::error::{Error, Result};
use crate::geometry::{Frame, PointCloud, StandardizationStats, TriangleMesh, VoxelGrid};
use crate::numerics::Tensor;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

const VGRD_MAGIC: &[u8; 4] = b"VGRD";
const PCLD_MAGIC: &[u8; 4] = b"PCLD";
const CKPT_MAGIC: &[u8; 4] = b"CKPT";
const FORMAT_VERSION: u16 = 1;

// ---- primitive readers/writers ----

fn write_u16<W: Write>(w: &mut W, v: u16) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4], what: &str) -> Result<()> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    if &b != magic {
        return Err(Error::Format(format!("{what}: bad magic {b:?}")));
    }
    let version = read_u16(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("{what}: unsupported version {version}")));
    }
    Ok(())
}

// ---- voxel grids ----

/// Layout: magic, version u16, dims 3xu32, spacing 3xf64, origin 3xf64,
/// occupancy bit-packed LSB-first over the grid's linear index order.
pub fn write_voxel_grid(path: &Path, grid: &VoxelGrid) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(VGRD_MAGIC)?;
    write_u16(&mut w, FORMAT_VERSION)?;
    write_u32(&mut w, grid.dims.0 as u32)?;
    write_u32(&mut w, grid.dims.1 as u32)?;
    write_u32(&mut w, grid.dims.2 as u32)?;
    for s in [grid.spacing_mm.0, grid.spacing_mm.1, grid.spacing_mm.2] {
        write_f64(&mut w, s)?;
    }
    for o in grid.origin_mm {
        write_f64(&mut w, o)?;
    }
    let occ = grid.occupancy();
    let mut byte = 0u8;
    for (i, &v) in occ.iter().enumerate() {
        if v {
            byte |= 1 << (i % 8);
        }
        if i % 8 == 7 {
            w.write_all(&[byte])?;
            byte = 0;
        }
    }
    if occ.len() % 8 != 0 {
        w.write_all(&[byte])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_voxel_grid(path: &Path) -> Result<VoxelGrid> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, VGRD_MAGIC, "voxel grid")?;
    let dims = (read_u32(&mut r)? as usize, read_u32(&mut r)? as usize, read_u32(&mut r)? as usize);
    let spacing = (read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?);
    let origin = [read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?];
    let n = dims.0 * dims.1 * dims.2;
    let mut packed = vec![0u8; n.div_ceil(8)];
    r.read_exact(&mut packed)?;
    let occupancy = (0..n).map(|i| packed[i / 8] & (1 << (i % 8)) != 0).collect();
    VoxelGrid::from_occupancy(dims, spacing, origin, occupancy)
}

// ---- point clouds ----

/// Layout: magic, version u16, frame u8 (0 world-mm, 1 standardized),
/// N u32, then N x 3 f64.
pub fn write_point_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(PCLD_MAGIC)?;
    write_u16(&mut w, FORMAT_VERSION)?;
    w.write_all(&[match cloud.frame() {
        Frame::WorldMm => 0u8,
        Frame::Standardized => 1u8,
    }])?;
    write_u32(&mut w, cloud.len() as u32)?;
    for p in cloud.points() {
        for &c in p {
            write_f64(&mut w, c)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_point_cloud(path: &Path) -> Result<PointCloud> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, PCLD_MAGIC, "point cloud")?;
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    let frame = match tag[0] {
        0 => Frame::WorldMm,
        1 => Frame::Standardized,
        t => return Err(Error::Format(format!("point cloud: unknown frame tag {t}"))),
    };
    let n = read_u32(&mut r)? as usize;
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        points.push([read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?]);
    }
    PointCloud::new(points, frame)
}

// ---- meshes (ASCII OBJ, v/f records only) ----

pub fn write_obj(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v[0], v[1], v[2])?;
    }
    for f in &mesh.faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    let r = BufReader::new(File::open(path)?);
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut p = [0.0; 3];
                for c in &mut p {
                    *c = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| Error::Format(format!("obj line {}: bad vertex", lineno + 1)))?;
                }
                vertices.push(p);
            }
            Some("f") => {
                let mut f = [0u32; 3];
                for c in &mut f {
                    let tok = it
                        .next()
                        .ok_or_else(|| Error::Format(format!("obj line {}: bad face", lineno + 1)))?;
                    // tolerate v/vt/vn face syntax by taking the first index
                    let idx: u32 = tok
                        .split('/')
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| Error::Format(format!("obj line {}: bad face", lineno + 1)))?;
                    *c = idx
                        .checked_sub(1)
                        .ok_or_else(|| Error::Format(format!("obj line {}: 0 index", lineno + 1)))?;
                }
                faces.push(f);
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces)
}

// ---- standardization stats ----

/// 4 x f64: mean x, mean y, mean z, pooled std.
pub fn write_stats(path: &Path, stats: &StandardizationStats) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for m in stats.mean {
        write_f64(&mut w, m)?;
    }
    write_f64(&mut w, stats.std)?;
    w.flush()?;
    Ok(())
}

pub fn read_stats(path: &Path) -> Result<StandardizationStats> {
    let mut r = BufReader::new(File::open(path)?);
    let mean = [read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?];
    let std = read_f64(&mut r)?;
    if !(std > 0.0) {
        return Err(Error::Format(format!("stats: non-positive std {std}")));
    }
    Ok(StandardizationStats { mean, std })
}

// ---- model checkpoints ----

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointKind {
    Vae,
    GlobalDdpm,
    LocalDdpm,
}

impl CheckpointKind {
    fn tag(self) -> u8 {
        match self {
            CheckpointKind::Vae => 1,
            CheckpointKind::GlobalDdpm => 2,
            CheckpointKind::LocalDdpm => 3,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        Ok(match t {
            1 => CheckpointKind::Vae,
            2 => CheckpointKind::GlobalDdpm,
            3 => CheckpointKind::LocalDdpm,
            _ => return Err(Error::Format(format!("checkpoint: unknown kind {t}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            CheckpointKind::Vae => "VAE",
            CheckpointKind::GlobalDdpm => "GLOBAL_DDPM",
            CheckpointKind::LocalDdpm => "LOCAL_DDPM",
        }
    }
}

/// Serialized model: kind tag, a key=value echo of every hyperparameter the
/// model was built with, training metadata, and named parameter blocks in a
/// fixed order.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub config_echo: String,
    pub epochs: u32,
    pub final_losses: Vec<f64>,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    /// Look up a key in the config echo (`key = value` lines).
    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config_echo.lines().find_map(|l| {
            let (k, v) = l.split_once('=')?;
            (k.trim() == key).then_some(v.trim())
        })
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    write_u16(&mut w, FORMAT_VERSION)?;
    w.write_all(&[ckpt.kind.tag()])?;
    let echo = ckpt.config_echo.as_bytes();
    write_u32(&mut w, echo.len() as u32)?;
    w.write_all(echo)?;
    write_u32(&mut w, ckpt.epochs)?;
    write_u32(&mut w, ckpt.final_losses.len() as u32)?;
    for &l in &ckpt.final_losses {
        write_f64(&mut w, l)?;
    }
    write_u32(&mut w, ckpt.params.len() as u32)?;
    for (name, t) in &ckpt.params {
        let nb = name.as_bytes();
        write_u32(&mut w, nb.len() as u32)?;
        w.write_all(nb)?;
        write_u32(&mut w, t.shape().len() as u32)?;
        for &d in t.shape() {
            write_u64(&mut w, d as u64)?;
        }
        for &v in t.data() {
            write_f64(&mut w, v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, CKPT_MAGIC, "checkpoint")?;
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    let kind = CheckpointKind::from_tag(tag[0])?;
    let echo_len = read_u32(&mut r)? as usize;
    let mut echo = vec![0u8; echo_len];
    r.read_exact(&mut echo)?;
    let config_echo = String::from_utf8(echo)
        .map_err(|_| Error::Format("checkpoint: config echo is not UTF-8".into()))?;
    let epochs = read_u32(&mut r)?;
    let n_losses = read_u32(&mut r)? as usize;
    let mut final_losses = Vec::with_capacity(n_losses);
    for _ in 0..n_losses {
        final_losses.push(read_f64(&mut r)?);
    }
    let n_params = read_u32(&mut r)? as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name_len = read_u32(&mut r)? as usize;
        let mut nb = vec![0u8; name_len];
        r.read_exact(&mut nb)?;
        let name = String::from_utf8(nb)
            .map_err(|_| Error::Format("checkpoint: param name is not UTF-8".into()))?;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(read_f64(&mut r)?);
        }
        params.push((name, Tensor::new(shape, data)?));
    }
    Ok(Checkpoint { kind, config_echo, epochs, final_losses, params })
}
