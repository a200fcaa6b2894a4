//! Training-time augmentation. Jitter acts on points before voxelization;
//! translation and flip act on voxel grids afterwards.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ingest::points::PointFrame;
use crate::ingest::voxel::VoxelSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub jitter: bool,
    /// Standard deviation of the coordinate noise, meters.
    pub jitter_sigma: f64,
    pub translate: bool,
    /// Offsets are drawn uniformly from `-max_shift..=max_shift` bins on Y and Z.
    pub max_shift: usize,
    pub flip: bool,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self { jitter: true, jitter_sigma: 0.05, translate: true, max_shift: 2, flip: true }
    }
}

impl AugmentPolicy {
    pub fn disabled() -> Self {
        Self { jitter: false, translate: false, flip: false, ..Self::default() }
    }

    pub fn is_identity(&self) -> bool {
        !(self.jitter && self.jitter_sigma > 0.0) && !(self.translate && self.max_shift > 0) && !self.flip
    }
}

/// Adds Gaussian noise to every coordinate.
pub fn augment_points(window: &[PointFrame], policy: &AugmentPolicy, seed: u64) -> Vec<PointFrame> {
    let mut out = window.to_vec();
    if !policy.jitter || policy.jitter_sigma <= 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, policy.jitter_sigma).expect("positive sigma");
    for p in out.iter_mut().flat_map(|f| f.points.iter_mut()) {
        p.x += normal.sample(&mut rng);
        p.y += normal.sample(&mut rng);
        p.z += normal.sample(&mut rng);
    }
    out
}

/// Applies a random Y/Z translation and a random Y mirror. One draw per
/// sequence, so every frame moves together.
pub fn augment_voxels(seq: &VoxelSequence, policy: &AugmentPolicy, seed: u64) -> VoxelSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = seq.clone();
    if policy.translate && policy.max_shift > 0 {
        let m = policy.max_shift as i64;
        let dy = rng.gen_range(-m..=m);
        let dz = rng.gen_range(-m..=m);
        out = translate(&out, dy, dz);
    }
    if policy.flip && rng.gen_bool(0.5) {
        out = flip_y(&out);
    }
    out
}

/// Shifts content by `(dy, dz)` bins with zero fill; counts shifted past the
/// edge are dropped.
pub fn translate(seq: &VoxelSequence, dy: i64, dz: i64) -> VoxelSequence {
    let d = seq.dims();
    let mut out = seq.clone();
    let vol = d.volume();
    for (src, dst) in seq.values.data().chunks_exact(vol).zip(out.values.data_mut().chunks_exact_mut(vol)) {
        dst.iter_mut().for_each(|v| *v = 0.0);
        for x in 0..d.x {
            for y in 0..d.y {
                let ny = y as i64 + dy;
                if ny < 0 || ny >= d.y as i64 {
                    continue;
                }
                for z in 0..d.z {
                    let nz = z as i64 + dz;
                    if nz < 0 || nz >= d.z as i64 {
                        continue;
                    }
                    dst[(x * d.y + ny as usize) * d.z + nz as usize] = src[(x * d.y + y) * d.z + z];
                }
            }
        }
    }
    out
}

/// Mirrors the Y axis.
pub fn flip_y(seq: &VoxelSequence) -> VoxelSequence {
    let d = seq.dims();
    let mut out = seq.clone();
    let vol = d.volume();
    for (src, dst) in seq.values.data().chunks_exact(vol).zip(out.values.data_mut().chunks_exact_mut(vol)) {
        for x in 0..d.x {
            for y in 0..d.y {
                let from = (x * d.y + y) * d.z;
                let to = (x * d.y + (d.y - 1 - y)) * d.z;
                dst[to..to + d.z].copy_from_slice(&src[from..from + d.z]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::points::Point;
    use crate::ingest::voxel::{voxelize, Bounds, VoxelDims};
    use rand::Rng;

    fn random_seq(seed: u64) -> VoxelSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames: Vec<PointFrame> = (0..3)
            .map(|i| PointFrame {
                frame_index: i,
                points: (0..40).map(|_| Point::new(rng.gen(), rng.gen(), rng.gen())).collect(),
            })
            .collect();
        voxelize(&frames, &Bounds::new([0.0; 3], [1.0; 3]).unwrap(), VoxelDims { x: 4, y: 8, z: 8 }).unwrap()
    }

    #[test]
    fn disabled_policy_is_identity() {
        let seq = random_seq(1);
        let p = AugmentPolicy::disabled();
        assert!(p.is_identity());
        assert_eq!(augment_voxels(&seq, &p, 99), seq);
        let frames = vec![PointFrame { frame_index: 0, points: vec![Point::new(0.1, 0.2, 0.3)] }];
        assert_eq!(augment_points(&frames, &p, 99), frames);
    }

    #[test]
    fn flip_is_involution() {
        let seq = random_seq(2);
        assert_ne!(flip_y(&seq), seq);
        assert_eq!(flip_y(&flip_y(&seq)), seq);
    }

    /// Independent oracle: the shifted grid keeps exactly the counts whose
    /// destination stays in range.
    #[test]
    fn translation_sum_oracle() {
        let seq = random_seq(3);
        let d = seq.dims();
        let moved = translate(&seq, 1, 0);
        for t in 0..seq.frames() {
            let kept: f64 = (0..d.x)
                .flat_map(|x| (0..d.y - 1).flat_map(move |y| (0..d.z).map(move |z| (x, y, z))))
                .map(|(x, y, z)| seq.frame(t)[(x * d.y + y) * d.z + z] as f64)
                .sum();
            assert_eq!(moved.frame_sums()[t], kept);
            assert!(moved.frame_sums()[t] <= seq.frame_sums()[t]);
        }
        assert_eq!(translate(&translate(&seq, 0, 2), 0, -2).frame_sums().len(), seq.frames());
        assert_eq!(translate(&seq, 0, 0), seq);
    }

    #[test]
    fn deterministic_in_seed() {
        let seq = random_seq(4);
        let p = AugmentPolicy::default();
        assert_eq!(augment_voxels(&seq, &p, 7), augment_voxels(&seq, &p, 7));
        let frames = vec![PointFrame { frame_index: 0, points: vec![Point::new(0.1, 0.2, 0.3)] }];
        let a = augment_points(&frames, &p, 5);
        assert_eq!(a, augment_points(&frames, &p, 5));
        assert_ne!(a, frames);
    }
}
