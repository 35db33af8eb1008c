//! On-disk formats.
//!
//! `DTEN` dense tensor, all integers and floats little-endian:
//!
//! ```text
//! b"DTEN" | u32 version (1) | u32 rank | rank x u64 dims | row-major f64 data
//! ```
//!
//! Gradient fields use a small container around two `DTEN` payloads:
//!
//! ```text
//! b"DTGF" | u32 version (1) | u64 height | u64 width | DTEN gx (H x W-1) | DTEN gy (H-1 x W)
//! ```
//!
//! Sparse observations are CSV with header `row,col,depth` (0-based indices, meters).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ConfidenceMap, DepthMap, GradientField, SparseObservations};

pub const DTEN_MAGIC: &[u8; 4] = b"DTEN";
pub const GRADIENT_MAGIC: &[u8; 4] = b"DTGF";
pub const FORMAT_VERSION: u32 = 1;

/// A dense tensor as stored in a `DTEN` payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u64>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Self {
            dims: vec![rows as u64, cols as u64],
            data,
        }
    }

    fn as_matrix(&self, what: &str) -> Result<(usize, usize)> {
        match self.dims.as_slice() {
            [r, c] => Ok((*r as usize, *c as usize)),
            dims => Err(Error::Format(format!(
                "{what}: expected a rank-2 tensor, got dims {dims:?}"
            ))),
        }
    }
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated file: {e}")))?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact::<4>(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact::<8>(r)?))
}

fn expect_magic(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let got = read_exact::<4>(r)?;
    if &got != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    Ok(())
}

pub fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    let count: u64 = t.dims.iter().product();
    if count as usize != t.data.len() {
        return Err(Error::shape(format!(
            "tensor dims {:?} hold {count} values, data has {}",
            t.dims,
            t.data.len()
        )));
    }
    w.write_all(DTEN_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(t.dims.len() as u32).to_le_bytes())?;
    for d in &t.dims {
        w.write_all(&d.to_le_bytes())?;
    }
    for v in &t.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    expect_magic(r, DTEN_MAGIC)?;
    let rank = read_u32(r)?;
    if rank > 8 {
        return Err(Error::Format(format!("implausible rank {rank}")));
    }
    let dims = (0..rank).map(|_| read_u64(r)).collect::<Result<Vec<_>>>()?;
    let count = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
    let mut data = Vec::with_capacity(count.min(1 << 24) as usize);
    for _ in 0..count {
        data.push(f64::from_le_bytes(read_exact::<8>(r)?));
    }
    Ok(Tensor { dims, data })
}

pub fn depth_to_bytes(depth: &DepthMap) -> Vec<u8> {
    let mut buf = Vec::with_capacity(24 + 8 * depth.len());
    write_tensor(
        &mut buf,
        &Tensor::matrix(depth.height(), depth.width(), depth.flatten()),
    )
    .expect("writing to a Vec cannot fail");
    buf
}

pub fn depth_from_bytes(mut bytes: &[u8]) -> Result<DepthMap> {
    let t = read_tensor(&mut bytes)?;
    let (h, w) = t.as_matrix("depth map")?;
    DepthMap::new(h, w, t.data)
}

pub fn write_depth(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    std::fs::write(path, depth_to_bytes(depth))?;
    Ok(())
}

pub fn read_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    depth_from_bytes(&std::fs::read(path)?)
}

pub fn write_confidence(path: impl AsRef<Path>, conf: &ConfidenceMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(
        &mut w,
        &Tensor::matrix(conf.height(), conf.width(), conf.values().to_vec()),
    )?;
    w.flush()?;
    Ok(())
}

pub fn read_confidence(path: impl AsRef<Path>) -> Result<ConfidenceMap> {
    let t = read_tensor(&mut BufReader::new(File::open(path)?))?;
    let (h, w) = t.as_matrix("confidence map")?;
    ConfidenceMap::new(h, w, t.data)
}

pub fn gradients_to_bytes(g: &GradientField) -> Vec<u8> {
    let (h, w) = (g.height(), g.width());
    let mut buf = Vec::new();
    buf.extend_from_slice(GRADIENT_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(h as u64).to_le_bytes());
    buf.extend_from_slice(&(w as u64).to_le_bytes());
    write_tensor(&mut buf, &Tensor::matrix(h, w - 1, g.gx().to_vec())).expect("in-memory write");
    write_tensor(&mut buf, &Tensor::matrix(h - 1, w, g.gy().to_vec())).expect("in-memory write");
    buf
}

pub fn gradients_from_bytes(mut bytes: &[u8]) -> Result<GradientField> {
    let r = &mut bytes;
    expect_magic(r, GRADIENT_MAGIC)?;
    let h = read_u64(r)? as usize;
    let w = read_u64(r)? as usize;
    let gx = read_tensor(r)?;
    let gy = read_tensor(r)?;
    if gx.as_matrix("gx")? != (h, w.saturating_sub(1))
        || gy.as_matrix("gy")? != (h.saturating_sub(1), w)
    {
        return Err(Error::Format(format!(
            "gradient payload dims {:?} / {:?} do not match header {h}x{w}",
            gx.dims, gy.dims
        )));
    }
    if !r.is_empty() {
        return Err(Error::Format(format!(
            "{} trailing bytes after gradient payloads",
            r.len()
        )));
    }
    GradientField::new(h, w, gx.data, gy.data)
}

pub fn write_gradients(path: impl AsRef<Path>, g: &GradientField) -> Result<()> {
    std::fs::write(path, gradients_to_bytes(g))?;
    Ok(())
}

pub fn read_gradients(path: impl AsRef<Path>) -> Result<GradientField> {
    gradients_from_bytes(&std::fs::read(path)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationRow {
    row: usize,
    col: usize,
    depth: f64,
}

pub fn write_observations(w: impl Write, obs: &SparseObservations) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    // an empty file still carries the header
    out.write_record(["row", "col", "depth"])?;
    for (row, col, depth) in obs.points() {
        out.write_record(&[row.to_string(), col.to_string(), depth.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Parse observation CSV onto a `height x width` grid.
pub fn read_observations(r: impl Read, height: usize, width: usize) -> Result<SparseObservations> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["row", "col", "depth"] {
        return Err(Error::Format(format!(
            "observation CSV header must be row,col,depth; got {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut points = Vec::new();
    for rec in rdr.deserialize::<ObservationRow>() {
        let rec = rec?;
        points.push((rec.row, rec.col, rec.depth));
    }
    SparseObservations::from_points(height, width, points)
}

pub fn write_observations_file(path: impl AsRef<Path>, obs: &SparseObservations) -> Result<()> {
    write_observations(BufWriter::new(File::create(path)?), obs)
}

pub fn read_observations_file(
    path: impl AsRef<Path>,
    height: usize,
    width: usize,
) -> Result<SparseObservations> {
    read_observations(BufReader::new(File::open(path)?), height, width)
}
