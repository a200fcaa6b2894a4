use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Radial velocity, m/s.
    pub doppler: Option<f64>,
    pub intensity: Option<f64>,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z, doppler: None, intensity: None }
    }

    pub fn coords(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// One radar frame. May contain no points.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointFrame {
    pub frame_index: u64,
    pub points: Vec<Point>,
}

impl PointFrame {
    pub fn empty(frame_index: u64) -> Self {
        Self { frame_index, points: Vec::new() }
    }
}

/// A single detection in sensor polar coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarDetection {
    /// Meters.
    pub range: f64,
    /// Radians, in (-pi, pi].
    pub azimuth: f64,
    /// Radians, in [-pi/2, pi/2].
    pub elevation: f64,
    /// Hz.
    pub doppler_shift: f64,
    /// Meters.
    pub wavelength: f64,
}

/// Converts a detection to Cartesian `(x, y, z)` plus radial velocity
/// `v = doppler_shift * wavelength / 2`.
pub fn polar_to_cartesian(d: &RadarDetection) -> Result<(f64, f64, f64, f64)> {
    let vals = [d.range, d.azimuth, d.elevation, d.doppler_shift, d.wavelength];
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("non-finite detection {d:?}")));
    }
    use std::f64::consts::{FRAC_PI_2, PI};
    if d.range < 0.0 || d.azimuth <= -PI || d.azimuth > PI || d.elevation.abs() > FRAC_PI_2 {
        return Err(Error::Validation(format!("detection out of range {d:?}")));
    }
    let (sa, ca) = d.azimuth.sin_cos();
    let (se, ce) = d.elevation.sin_cos();
    Ok((d.range * ca * ce, d.range * sa * ce, d.range * se, d.doppler_shift * d.wavelength / 2.0))
}

/// Parses the canonical text stream: one point per line,
/// `frame_index x y z [doppler [intensity]]`, `#` comments, frame indices
/// non-decreasing. Gaps in the frame index produce empty frames.
pub fn parse_frame_stream(reader: impl BufRead) -> Result<Vec<PointFrame>> {
    let mut frames: Vec<PointFrame> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !(4..=6).contains(&fields.len()) {
            return Err(Error::Parse { line: lineno, msg: format!("expected 4 to 6 fields, got {}", fields.len()) });
        }
        let index: u64 = fields[0]
            .parse()
            .map_err(|_| Error::Parse { line: lineno, msg: format!("bad frame index {:?}", fields[0]) })?;
        let num = |k: usize| -> Result<f64> {
            fields[k]
                .parse::<f64>()
                .map_err(|_| Error::Parse { line: lineno, msg: format!("bad number {:?}", fields[k]) })
        };
        let (x, y, z) = (num(1)?, num(2)?, num(3)?);
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::Parse { line: lineno, msg: "non-finite coordinate".into() });
        }
        let doppler = if fields.len() > 4 { Some(num(4)?).filter(|v| !v.is_nan()) } else { None };
        let intensity = if fields.len() > 5 { Some(num(5)?) } else { None };
        let point = Point { x, y, z, doppler, intensity };

        match frames.last_mut() {
            Some(last) if last.frame_index == index => last.points.push(point),
            Some(last) if last.frame_index > index => {
                return Err(Error::Format(format!("line {lineno}: frame index {index} after {}", last.frame_index)));
            }
            Some(last) => {
                let from = last.frame_index + 1;
                frames.extend((from..index).map(PointFrame::empty));
                frames.push(PointFrame { frame_index: index, points: vec![point] });
            }
            None => frames.push(PointFrame { frame_index: index, points: vec![point] }),
        }
    }
    Ok(frames)
}

/// Inverse of [`parse_frame_stream`]. Empty frames produce no lines.
pub fn serialize_frame_stream(frames: &[PointFrame]) -> String {
    let mut out = String::new();
    for f in frames {
        for p in &f.points {
            write!(out, "{} {} {} {}", f.frame_index, p.x, p.y, p.z).unwrap();
            match (p.doppler, p.intensity) {
                (None, None) => {}
                (Some(d), None) => write!(out, " {d}").unwrap(),
                (d, Some(i)) => write!(out, " {} {i}", d.unwrap_or(f64::NAN)).unwrap(),
            }
            out.push('\n');
        }
    }
    out
}

/// Sliding windows of exactly `len` frames every `stride` frames; a trailing
/// partial window is dropped.
pub fn window_sequences(frames: &[PointFrame], len: usize, stride: usize) -> Result<Vec<Vec<PointFrame>>> {
    if stride == 0 || len == 0 {
        return Err(Error::Validation(format!("window length {len} and stride {stride} must be positive")));
    }
    if frames.len() < len {
        return Ok(Vec::new());
    }
    Ok((0..=frames.len() - len).step_by(stride).map(|s| frames[s..s + len].to_vec()).collect())
}
