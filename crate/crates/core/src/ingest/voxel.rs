use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::points::PointFrame;
use crate::tensor::Tensor;

/// Grid resolution along (X, Y, Z). X is the short depth axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoxelDims {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl Default for VoxelDims {
    fn default() -> Self {
        Self { x: 10, y: 32, z: 32 }
    }
}

impl VoxelDims {
    pub fn as_array(&self) -> [usize; 3] {
        [self.x, self.y, self.z]
    }

    pub fn volume(&self) -> usize {
        self.x * self.y * self.z
    }
}

/// Axis-aligned box in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Bounds {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        let b = Self { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if !(self.min[a].is_finite() && self.max[a].is_finite()) || self.max[a] <= self.min[a] {
                return Err(Error::Validation(format!(
                    "bounds axis {a}: [{}, {}] has no positive extent",
                    self.min[a], self.max[a]
                )));
            }
        }
        Ok(())
    }

    pub fn translated(&self, by: [f64; 3]) -> Self {
        Self {
            min: [self.min[0] + by[0], self.min[1] + by[1], self.min[2] + by[2]],
            max: [self.max[0] + by[0], self.max[1] + by[1], self.max[2] + by[2]],
        }
    }

    /// Parses `xmin,xmax,ymin,ymax,zmin,zmax`.
    pub fn parse(s: &str) -> Result<Self> {
        let v: Vec<f64> = s
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Validation(format!("bounds {s:?}: {e}")))?;
        if v.len() != 6 {
            return Err(Error::Validation(format!("bounds {s:?}: expected 6 comma-separated numbers")));
        }
        Self::new([v[0], v[2], v[4]], [v[1], v[3], v[5]])
    }

    /// Per-axis 1st to 99th percentile of all point coordinates. An axis
    /// with no spread is widened by 0.5 on each side.
    pub fn from_percentiles<'a>(frames: impl IntoIterator<Item = &'a PointFrame>) -> Result<Self> {
        let mut axes: [Vec<f64>; 3] = Default::default();
        for f in frames {
            for p in &f.points {
                for (a, v) in p.coords().into_iter().enumerate() {
                    axes[a].push(v);
                }
            }
        }
        if axes[0].is_empty() {
            return Err(Error::Validation("cannot derive bounds from zero points".into()));
        }
        let mut min = [0.0; 3];
        let mut max = [0.0; 3];
        for a in 0..3 {
            let v = &mut axes[a];
            v.sort_by(f64::total_cmp);
            min[a] = percentile(v, 0.01);
            max[a] = percentile(v, 0.99);
            if max[a] <= min[a] {
                min[a] -= 0.5;
                max[a] += 0.5;
            }
        }
        Self::new(min, max)
    }

    /// Bin index of one coordinate, or `None` when outside the box.
    /// A point exactly on the upper face lands in the last bin.
    pub fn bin(&self, axis: usize, v: f64, dim: usize) -> Option<usize> {
        let (lo, hi) = (self.min[axis], self.max[axis]);
        if !(lo..=hi).contains(&v) {
            return None;
        }
        let idx = ((v - lo) / (hi - lo) * dim as f64).floor() as usize;
        Some(idx.min(dim - 1))
    }
}

/// Linear interpolation between order statistics of a sorted slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `[T, X, Y, Z]` grid of per-voxel point counts.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelSequence {
    pub values: Tensor<f32>,
    pub bounds: Bounds,
    pub label: Option<usize>,
}

impl VoxelSequence {
    pub fn frames(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn dims(&self) -> VoxelDims {
        let s = self.values.shape();
        VoxelDims { x: s[1], y: s[2], z: s[3] }
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let v = self.dims().volume();
        &self.values.data()[t * v..][..v]
    }

    pub fn frame_sums(&self) -> Vec<f64> {
        (0..self.frames()).map(|t| self.frame(t).iter().map(|&c| c as f64).sum()).collect()
    }

    /// Divides every frame by its own maximum; all-zero frames stay zero.
    pub fn max_normalized(&self) -> Self {
        let mut out = self.clone();
        let v = self.dims().volume();
        for frame in out.values.data_mut().chunks_exact_mut(v) {
            let m = frame.iter().copied().fold(0.0f32, f32::max);
            if m > 0.0 {
                frame.iter_mut().for_each(|c| *c /= m);
            }
        }
        out
    }

    const MAGIC: &'static [u8; 4] = b"OGVX";
    const VERSION: u32 = 1;

    /// Binary layout: magic `OGVX`, u32 version, u32 T/X/Y/Z, i64 label
    /// (-1 for none), 6 f64 bounds (min xyz, max xyz), then T*X*Y*Z u32
    /// counts. All little-endian.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        for &d in self.values.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&self.label.map_or(-1i64, |l| l as i64).to_le_bytes())?;
        for v in self.bounds.min.iter().chain(&self.bounds.max) {
            w.write_all(&v.to_le_bytes())?;
        }
        for &c in self.values.data() {
            w.write_all(&(c.round() as u32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let mut cur = ByteCursor { buf: &buf, pos: 0 };
        if cur.take(4)? != Self::MAGIC {
            return Err(Error::Format("offset 0: bad voxel file magic".into()));
        }
        let version = cur.u32()?;
        if version != Self::VERSION {
            return Err(Error::Format(format!("offset 4: unsupported voxel file version {version}")));
        }
        let shape = [cur.u32()? as usize, cur.u32()? as usize, cur.u32()? as usize, cur.u32()? as usize];
        let label = cur.i64()?;
        let mut b = [0.0; 6];
        for v in &mut b {
            *v = cur.f64()?;
        }
        let bounds = Bounds::new([b[0], b[1], b[2]], [b[3], b[4], b[5]])?;
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(cur.u32()? as f32);
        }
        if cur.pos != buf.len() {
            return Err(Error::Format(format!("offset {}: trailing bytes", cur.pos)));
        }
        Ok(Self { values: Tensor::new(shape.to_vec(), data)?, bounds, label: (label >= 0).then_some(label as usize) })
    }
}

pub(crate) struct ByteCursor<'a> {
    pub buf: &'a [u8],
    pub pos: usize,
}

impl<'a> ByteCursor<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "offset {}: truncated, needed {n} more bytes but {} remain",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Bins the points of each frame into a count grid. Out-of-bounds points are
/// discarded.
pub fn voxelize(window: &[PointFrame], bounds: &Bounds, dims: VoxelDims) -> Result<VoxelSequence> {
    bounds.validate()?;
    if window.is_empty() {
        return Err(Error::EmptySequence);
    }
    if dims.x == 0 || dims.y == 0 || dims.z == 0 {
        return Err(Error::Validation(format!("voxel dims {dims:?} must be positive")));
    }
    let vol = dims.volume();
    let mut data = vec![0.0f32; window.len() * vol];
    for (t, frame) in window.iter().enumerate() {
        let grid = &mut data[t * vol..][..vol];
        for p in &frame.points {
            let (Some(i), Some(j), Some(k)) =
                (bounds.bin(0, p.x, dims.x), bounds.bin(1, p.y, dims.y), bounds.bin(2, p.z, dims.z))
            else {
                continue;
            };
            grid[(i * dims.y + j) * dims.z + k] += 1.0;
        }
    }
    Ok(VoxelSequence {
        values: Tensor::new(vec![window.len(), dims.x, dims.y, dims.z], data)?,
        bounds: *bounds,
        label: None,
    })
}
