use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{
    parse_frame_stream, parse_manifest, parse_radhar, voxelize, window_sequences, Bounds, PointFrame, VoxelSequence,
};
use crate::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[cfg_attr(feature = "cli", derive(clap::ValueEnum))]
#[serde(rename_all = "lowercase")]
pub enum StreamFormat {
    /// `frame_index x y z [doppler [intensity]]` lines.
    #[default]
    Frames,
    /// Raw RadHAR text logs.
    Radhar,
}

pub fn read_frames(path: &Path, format: StreamFormat) -> Result<Vec<PointFrame>> {
    let r = BufReader::new(File::open(path).map_err(|e| with_path(e, path))?);
    let frames = match format {
        StreamFormat::Frames => parse_frame_stream(r),
        StreamFormat::Radhar => parse_radhar(r),
    };
    frames.map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse { line, msg: format!("{}: {msg}", path.display()) },
        other => other,
    })
}

fn with_path(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn is_voxel_file(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("vox"))
}

pub fn read_voxel_file(path: &Path) -> Result<VoxelSequence> {
    VoxelSequence::read_from(BufReader::new(File::open(path).map_err(|e| with_path(e, path))?))
}

/// Labelled sequences. Windows cut from the same recording share a group so
/// cross-validation never splits a recording across folds.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<VoxelSequence>,
    pub groups: Vec<usize>,
    pub sources: Vec<PathBuf>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Result<Vec<usize>> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| s.label.ok_or_else(|| Error::Validation(format!("sequence {i} has no label"))))
            .collect()
    }

    pub fn push(&mut self, sample: VoxelSequence, group: usize) {
        self.samples.push(sample);
        self.groups.push(group);
    }

    pub fn group_count(&self) -> usize {
        self.groups.iter().max().map_or(0, |&g| g + 1)
    }
}

/// Loads every manifest entry. `.vox` files are used as they are; frame
/// streams are windowed with the configured length and stride and voxelized.
/// When the config has no bounds they are derived from the streams and
/// written back into it.
pub fn load_manifest(manifest: &Path, config: &mut ModelConfig, format: StreamFormat) -> Result<Dataset> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let file = File::open(manifest).map_err(|e| with_path(e, manifest))?;
    let entries = parse_manifest(BufReader::new(file), base, &config.classes)?;
    if entries.is_empty() {
        return Err(Error::Validation(format!("{} lists no sequences", manifest.display())));
    }
    let mut streams = Vec::new();
    for e in &entries {
        if is_voxel_file(&e.path) {
            streams.push(None);
        } else {
            streams.push(Some(read_frames(&e.path, format)?));
        }
    }
    if config.bounds.is_none() && streams.iter().any(Option::is_some) {
        config.bounds = Some(Bounds::from_percentiles(streams.iter().flatten().flatten())?);
    }
    let mut data = Dataset::default();
    for (g, (e, stream)) in entries.iter().zip(streams).enumerate() {
        data.sources.push(e.path.clone());
        match stream {
            None => {
                let mut seq = read_voxel_file(&e.path)?;
                if seq.dims() != config.voxel_dims {
                    return Err(Error::Dimension(format!(
                        "{}: grid {:?} does not match configured {:?}",
                        e.path.display(),
                        seq.dims().as_array(),
                        config.voxel_dims.as_array()
                    )));
                }
                seq.label = Some(e.label);
                data.push(seq, g);
            }
            Some(frames) => {
                let windows = window_sequences(&frames, config.seq_len, config.stride)?;
                if windows.is_empty() {
                    return Err(Error::Validation(format!(
                        "{}: {} frames is shorter than the sequence length {}",
                        e.path.display(),
                        frames.len(),
                        config.seq_len
                    )));
                }
                let bounds = config.bounds.expect("bounds set above");
                for w in windows {
                    let mut seq = voxelize(&w, &bounds, config.voxel_dims)?;
                    seq.label = Some(e.label);
                    data.push(seq, g);
                }
            }
        }
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{serialize_frame_stream, Point, VoxelDims};
    use std::io::Write;

    fn stream(frames: usize, x: f64) -> String {
        let f: Vec<PointFrame> = (0..frames)
            .map(|i| PointFrame { frame_index: i as u64, points: vec![Point::new(x, 0.1 * i as f64, 0.5)] })
            .collect();
        serialize_frame_stream(&f)
    }

    #[test]
    fn loads_streams_and_voxel_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), stream(7, 1.0)).unwrap();
        let vox = VoxelSequence {
            values: crate::Tensor::ones(&[4, 2, 3, 3]),
            bounds: Bounds::new([0.0; 3], [1.0; 3]).unwrap(),
            label: None,
        };
        let mut f = File::create(dir.path().join("b.vox")).unwrap();
        vox.write_to(&mut f).unwrap();
        let mut m = File::create(dir.path().join("m.tsv")).unwrap();
        writeln!(m, "a.txt\tjump\nb.vox\t4").unwrap();
        drop(m);
        let mut cfg =
            ModelConfig { seq_len: 4, stride: 3, voxel_dims: VoxelDims { x: 2, y: 3, z: 3 }, ..Default::default() };
        let d = load_manifest(&dir.path().join("m.tsv"), &mut cfg, StreamFormat::Frames).unwrap();
        // 7 frames, length 4, stride 3 -> 2 windows, plus the voxel file
        assert_eq!(d.len(), 3);
        assert_eq!(d.groups, vec![0, 0, 1]);
        assert_eq!(d.labels().unwrap(), vec![2, 2, 4]);
        assert!(cfg.bounds.is_some());

        writeln!(File::create(dir.path().join("short.tsv")).unwrap(), "a.txt\t0").unwrap();
        let mut cfg = ModelConfig { seq_len: 8, ..cfg };
        assert!(load_manifest(&dir.path().join("short.tsv"), &mut cfg, StreamFormat::Frames).is_err());
        assert!(matches!(
            load_manifest(&dir.path().join("missing.tsv"), &mut cfg, StreamFormat::Frames),
            Err(Error::Io(_))
        ));
    }
}
