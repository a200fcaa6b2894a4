use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AugmentPolicy, Bounds, VoxelDims, VoxelSequence, DEFAULT_CLASSES};
use crate::ops::Conv2dGeometry;
use crate::projection::{project_sequence, ProjectionTriple, Reduction, View};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub pool: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchConfig {
    pub view: View,
    pub blocks: Vec<BlockConfig>,
    /// Width `d_v` of the per-view feature.
    pub fc_out: usize,
    pub fc_relu: bool,
}

impl BranchConfig {
    /// Three 3x3 blocks widening 1 -> 16 -> 32 -> 64. The 10-row front and
    /// side maps skip pooling along their short axis in the first block.
    pub fn standard(view: View) -> Self {
        let pools = match view {
            View::Top => [(2, 2), (2, 2), (2, 2)],
            View::Front | View::Side => [(1, 2), (2, 2), (2, 2)],
        };
        let blocks = [16, 32, 64]
            .into_iter()
            .zip(pools)
            .map(|(out_channels, pool)| BlockConfig { out_channels, kernel: (3, 3), pool })
            .collect();
        Self { view, blocks, fc_out: 192, fc_relu: true }
    }

    pub fn out_channels(&self) -> usize {
        self.blocks.last().map_or(1, |b| b.out_channels)
    }

    /// Spatial size of the branch output for a map of size `input`.
    pub fn output_size(&self, input: (usize, usize)) -> Result<(usize, usize)> {
        let mut hw = input;
        for (i, b) in self.blocks.iter().enumerate() {
            hw = Conv2dGeometry::same(b.kernel).output_size(hw, b.kernel)?;
            if b.pool.0 == 0 || b.pool.1 == 0 || hw.0 < b.pool.0 || hw.1 < b.pool.1 {
                return Err(Error::Validation(format!(
                    "{} branch block {i}: pool {:?} does not fit a {}x{} map",
                    self.view.name(),
                    b.pool,
                    hw.0,
                    hw.1
                )));
            }
            hw = (hw.0 / b.pool.0, hw.1 / b.pool.1);
        }
        Ok(hw)
    }
}

/// Everything needed to rebuild a model and its input pipeline. The
/// canonical JSON form is embedded in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub voxel_dims: VoxelDims,
    pub bounds: Option<Bounds>,
    pub seq_len: usize,
    pub stride: usize,
    pub branches: Vec<BranchConfig>,
    pub hidden: usize,
    pub classes: Vec<String>,
    pub compensation: bool,
    pub reduction: Reduction,
    pub normalize_frames: bool,
    pub augment: AugmentPolicy,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            voxel_dims: VoxelDims::default(),
            bounds: None,
            seq_len: 60,
            stride: 10,
            branches: View::ALL.into_iter().map(BranchConfig::standard).collect(),
            hidden: 128,
            classes: DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect(),
            compensation: true,
            reduction: Reduction::Max,
            normalize_frames: false,
            augment: AugmentPolicy::default(),
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.branches.is_empty() {
            return fail("at least one view branch is required".into());
        }
        for (i, b) in self.branches.iter().enumerate() {
            if self.branches[..i].iter().any(|o| o.view == b.view) {
                return fail(format!("view {} configured twice", b.view.name()));
            }
            if b.fc_out == 0 || b.blocks.iter().any(|k| k.out_channels == 0 || k.kernel.0 == 0 || k.kernel.1 == 0) {
                return fail(format!("{} branch has a zero-sized layer", b.view.name()));
            }
            b.output_size(b.view.map_size(self.voxel_dims))?;
        }
        if self.hidden == 0 || self.seq_len == 0 || self.stride == 0 {
            return fail("hidden, seq_len and stride must be positive".into());
        }
        if self.voxel_dims.volume() == 0 {
            return fail("voxel dims must be positive".into());
        }
        if self.classes.len() < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes.len()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if let Some(b) = &self.bounds {
            b.validate()?;
        }
        Ok(())
    }

    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_canonical(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn views(&self) -> Vec<View> {
        self.branches.iter().map(|b| b.view).collect()
    }

    /// Keeps only the listed views, in the listed order. Views without an
    /// existing branch get the standard one.
    pub fn with_views(&self, views: &[View]) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::Validation("no views selected".into()));
        }
        let branches = views
            .iter()
            .map(|&v| self.branches.iter().find(|b| b.view == v).cloned().unwrap_or_else(|| BranchConfig::standard(v)))
            .collect();
        let c = Self { branches, ..self.clone() };
        c.validate()?;
        Ok(c)
    }

    /// Width of the per-frame concatenated feature fed to the BiLSTM.
    pub fn feature_width(&self) -> usize {
        self.branches.iter().map(|b| b.fc_out).sum()
    }

    /// Voxel sequence to the per-frame projections the network consumes.
    pub fn prepare(&self, seq: &VoxelSequence) -> Result<Vec<ProjectionTriple>> {
        if seq.dims() != self.voxel_dims {
            return Err(Error::Dimension(format!(
                "voxel grid {:?} does not match configured {:?}",
                seq.dims().as_array(),
                self.voxel_dims.as_array()
            )));
        }
        if self.normalize_frames {
            project_sequence(&seq.max_normalized(), self.reduction)
        } else {
            project_sequence(seq, self.reduction)
        }
    }
}
