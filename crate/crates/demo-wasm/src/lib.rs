//! Browser bindings for three small views into the library: voxelize and
//! project a point cloud, run one OGConv layer over a hand-drawn mask, and
//! follow a mask down a stack of conv + pool blocks.

use ogpcl::ingest::{voxelize, Bounds, Point, PointFrame, VoxelDims};
use ogpcl::ogconv::{occupancy_count, ogconv_forward, MaskedFeature, OgConvParams};
use ogpcl::ops::{maxpool2d, Conv2dGeometry};
use ogpcl::projection::{project, Reduction};
use ogpcl::{Error, Result, Tensor};
use wasm_bindgen::prelude::*;

const KERNEL: (usize, usize) = (3, 3);

#[wasm_bindgen]
pub struct Projection {
    top: Vec<f32>,
    front: Vec<f32>,
    side: Vec<f32>,
    dims: [usize; 3],
    kept: usize,
}

#[wasm_bindgen]
impl Projection {
    /// `[Y, Z]` map.
    #[wasm_bindgen(getter)]
    pub fn top(&self) -> Vec<f32> {
        self.top.clone()
    }

    /// `[X, Z]` map.
    #[wasm_bindgen(getter)]
    pub fn front(&self) -> Vec<f32> {
        self.front.clone()
    }

    /// `[X, Y]` map.
    #[wasm_bindgen(getter)]
    pub fn side(&self) -> Vec<f32> {
        self.side.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn dims(&self) -> Vec<u32> {
        self.dims.iter().map(|&d| d as u32).collect()
    }

    /// Points that landed inside the bounds.
    #[wasm_bindgen(getter)]
    pub fn kept(&self) -> u32 {
        self.kept as u32
    }
}

/// `xyz` holds packed point coordinates; `bounds` is
/// `[xmin, xmax, ymin, ymax, zmin, zmax]`.
pub fn voxel_projection(xyz: &[f32], bounds: &[f64], dims: [usize; 3]) -> Result<Projection> {
    if !xyz.len().is_multiple_of(3) {
        return Err(Error::Validation(format!("{} coordinates is not a whole number of points", xyz.len())));
    }
    let &[x0, x1, y0, y1, z0, z1] = bounds else {
        return Err(Error::Validation(format!("expected 6 bound values, got {}", bounds.len())));
    };
    let bounds = Bounds::new([x0, y0, z0], [x1, y1, z1])?;
    let frame = PointFrame {
        frame_index: 0,
        points: xyz.chunks_exact(3).map(|p| Point::new(p[0] as f64, p[1] as f64, p[2] as f64)).collect(),
    };
    let [x, y, z] = dims;
    let seq = voxelize(std::slice::from_ref(&frame), &bounds, VoxelDims { x, y, z })?;
    let kept = seq.frame_sums()[0] as usize;
    let grid = Tensor::new(vec![x, y, z], seq.frame(0).to_vec())?;
    let p = project(&grid, Reduction::Max)?;
    Ok(Projection { top: p.top.into_data(), front: p.front.into_data(), side: p.side.into_data(), dims, kept })
}

#[wasm_bindgen]
pub struct ConvStep {
    output: Vec<f32>,
    count: Vec<f32>,
    mask: Vec<f32>,
}

#[wasm_bindgen]
impl ConvStep {
    #[wasm_bindgen(getter)]
    pub fn output(&self) -> Vec<f32> {
        self.output.clone()
    }

    /// Occupied cells under each 3x3 window.
    #[wasm_bindgen(getter)]
    pub fn count(&self) -> Vec<f32> {
        self.count.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn mask(&self) -> Vec<f32> {
        self.mask.clone()
    }
}

fn mask_tensor(mask: &[u8], h: usize, w: usize) -> Result<Tensor<f32>> {
    Tensor::new(vec![1, 1, h, w], mask.iter().map(|&m| if m > 0 { 1.0 } else { 0.0 }).collect())
}

/// One OGConv with an all-ones 3x3 kernel and "same" padding over a map that
/// holds `value` on every occupied cell.
pub fn ogconv_demo(mask: &[u8], h: usize, w: usize, value: f32, compensation: bool) -> Result<ConvStep> {
    let m = mask_tensor(mask, h, w)?;
    let x = m.map(|v| v * value);
    let geometry = Conv2dGeometry::same(KERNEL);
    let params = OgConvParams { kernel: Tensor::ones(&[1, 1, KERNEL.0, KERNEL.1]), bias: None, geometry, compensation };
    let count = occupancy_count(&m, KERNEL, geometry)?;
    let (y, _) = ogconv_forward(&MaskedFeature::new(x, m)?, &params)?;
    Ok(ConvStep { output: y.features.into_data(), count: count.into_data(), mask: y.mask.into_data() })
}

#[wasm_bindgen]
pub struct MaskStack {
    masks: Vec<u8>,
    sizes: Vec<u32>,
}

#[wasm_bindgen]
impl MaskStack {
    /// Every level's mask, packed one after the other.
    #[wasm_bindgen(getter)]
    pub fn masks(&self) -> Vec<u8> {
        self.masks.clone()
    }

    /// `[h0, w0, h1, w1, ...]`, starting with the input.
    #[wasm_bindgen(getter)]
    pub fn sizes(&self) -> Vec<u32> {
        self.sizes.clone()
    }
}

/// Occupancy after each of up to `blocks` 3x3 OGConv layers, each followed
/// by a `pool` x `pool` max pool. Stops early once the map is smaller than
/// the pool window.
pub fn mask_pyramid(mask: &[u8], h: usize, w: usize, blocks: usize, pool: usize) -> Result<MaskStack> {
    if pool == 0 {
        return Err(Error::Validation("pool must be positive".into()));
    }
    let mut m = mask_tensor(mask, h, w)?;
    let mut out = MaskStack { masks: Vec::new(), sizes: Vec::new() };
    let push = |out: &mut MaskStack, m: &Tensor<f32>| {
        out.sizes.extend([m.shape()[2] as u32, m.shape()[3] as u32]);
        out.masks.extend(m.data().iter().map(|&v| v as u8));
    };
    push(&mut out, &m);
    for _ in 0..blocks {
        if m.shape()[2] < pool || m.shape()[3] < pool {
            break;
        }
        let d = occupancy_count(&m, KERNEL, Conv2dGeometry::same(KERNEL))?;
        let grown = d.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        m = maxpool2d(&grown, (pool, pool), (pool, pool))?.0;
        push(&mut out, &m);
    }
    Ok(out)
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = projectPoints)]
pub fn project_points(
    xyz: &[f32],
    bounds: &[f64],
    x: usize,
    y: usize,
    z: usize,
) -> std::result::Result<Projection, JsError> {
    voxel_projection(xyz, bounds, [x, y, z]).map_err(js)
}

#[wasm_bindgen(js_name = ogconvStep)]
pub fn ogconv_step(
    mask: &[u8],
    h: usize,
    w: usize,
    value: f32,
    compensation: bool,
) -> std::result::Result<ConvStep, JsError> {
    ogconv_demo(mask, h, w, value, compensation).map_err(js)
}

#[wasm_bindgen(js_name = propagateMask)]
pub fn propagate_mask(
    mask: &[u8],
    h: usize,
    w: usize,
    blocks: usize,
    pool: usize,
) -> std::result::Result<MaskStack, JsError> {
    mask_pyramid(mask, h, w, blocks, pool).map_err(js)
}
