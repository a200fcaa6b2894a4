//! Tri-view projection of voxel frames.
//!
//! A frame `V[x,y,z]` collapses to
//! `top(y,z) = max_x V`, `front(x,z) = max_y V`, `side(x,y) = max_z V`,
//! each with a binary occupancy mask `value > 0`.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::ingest::voxel::{VoxelDims, VoxelSequence};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Top,
    Front,
    Side,
}

impl View {
    pub const ALL: [View; 3] = [View::Top, View::Front, View::Side];

    /// `(H, W)` of this view's map for a given voxel grid.
    pub fn map_size(self, dims: VoxelDims) -> (usize, usize) {
        match self {
            View::Top => (dims.y, dims.z),
            View::Front => (dims.x, dims.z),
            View::Side => (dims.x, dims.y),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            View::Top => "top",
            View::Front => "front",
            View::Side => "side",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "top" => Ok(View::Top),
            "front" => Ok(View::Front),
            "side" => Ok(View::Side),
            other => Err(Error::Validation(format!("unknown view {other:?}"))),
        }
    }
}

/// How a voxel line collapses to one pixel. `Max` is the standard choice;
/// `Sum` exists for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Max,
    Sum,
}

/// Three `[1,H,W]` maps and their binary masks.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionTriple {
    pub top: Tensor<f32>,
    pub front: Tensor<f32>,
    pub side: Tensor<f32>,
    pub top_mask: Tensor<f32>,
    pub front_mask: Tensor<f32>,
    pub side_mask: Tensor<f32>,
}

impl ProjectionTriple {
    pub fn view(&self, v: View) -> (&Tensor<f32>, &Tensor<f32>) {
        match v {
            View::Top => (&self.top, &self.top_mask),
            View::Front => (&self.front, &self.front_mask),
            View::Side => (&self.side, &self.side_mask),
        }
    }
}

fn mask_of(t: &Tensor<f32>) -> Tensor<f32> {
    t.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

/// Projects one `[X,Y,Z]` frame.
pub fn project(frame: &Tensor<f32>, reduction: Reduction) -> Result<ProjectionTriple> {
    let &[x, y, z] = frame.shape() else {
        return Err(dim_err(format!("project: expected [X,Y,Z] frame, got {:?}", frame.shape())));
    };
    project_slice(frame.data(), VoxelDims { x, y, z }, reduction)
}

fn project_slice(v: &[f32], d: VoxelDims, reduction: Reduction) -> Result<ProjectionTriple> {
    if v.iter().any(|&c| c < 0.0 || c.is_nan()) {
        return Err(Error::Validation("project: voxel values must be non-negative".into()));
    }
    let combine = |a: f32, b: f32| match reduction {
        Reduction::Max => a.max(b),
        Reduction::Sum => a + b,
    };
    let mut top = vec![0.0f32; d.y * d.z];
    let mut front = vec![0.0f32; d.x * d.z];
    let mut side = vec![0.0f32; d.x * d.y];
    for i in 0..d.x {
        for j in 0..d.y {
            for k in 0..d.z {
                let c = v[(i * d.y + j) * d.z + k];
                top[j * d.z + k] = combine(top[j * d.z + k], c);
                front[i * d.z + k] = combine(front[i * d.z + k], c);
                side[i * d.y + j] = combine(side[i * d.y + j], c);
            }
        }
    }
    let top = Tensor::new(vec![1, d.y, d.z], top)?;
    let front = Tensor::new(vec![1, d.x, d.z], front)?;
    let side = Tensor::new(vec![1, d.x, d.y], side)?;
    Ok(ProjectionTriple {
        top_mask: mask_of(&top),
        front_mask: mask_of(&front),
        side_mask: mask_of(&side),
        top,
        front,
        side,
    })
}

/// Projects every frame of a sequence, preserving order.
pub fn project_sequence(seq: &VoxelSequence, reduction: Reduction) -> Result<Vec<ProjectionTriple>> {
    let d = seq.dims();
    (0..seq.frames()).map(|t| project_slice(seq.frame(t), d, reduction)).collect()
}
