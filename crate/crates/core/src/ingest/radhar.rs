//! Best-effort reader for RadHAR raw text logs.
//!
//! Those logs are YAML-like dumps of one message per point, separated by
//! `---` lines, with keys such as `point_id`, `x`, `y`, `z`, `velocity` and
//! `intensity` (plus nested `header:` fields that are ignored). A frame ends
//! whenever `point_id` fails to increase, i.e. resets to 0 for the next
//! frame. Frames are renumbered consecutively from 0.

use std::io::BufRead;

use crate::error::{Error, Result};
use crate::ingest::points::{Point, PointFrame};

#[derive(Default)]
struct Message {
    point_id: Option<u64>,
    x: Option<f64>,
    y: Option<f64>,
    z: Option<f64>,
    velocity: Option<f64>,
    intensity: Option<f64>,
}

pub fn parse_radhar(reader: impl BufRead) -> Result<Vec<PointFrame>> {
    let mut frames: Vec<PointFrame> = Vec::new();
    let mut last_id: Option<u64> = None;
    let mut msg = Message::default();
    let mut start_line = 1;

    let mut flush = |msg: &mut Message, line: usize, frames: &mut Vec<PointFrame>| -> Result<()> {
        let m = std::mem::take(msg);
        let (Some(x), Some(y), Some(z)) = (m.x, m.y, m.z) else {
            if m.point_id.is_some() {
                return Err(Error::Parse { line, msg: "point message without x/y/z".into() });
            }
            return Ok(());
        };
        let id = m.point_id.unwrap_or(0);
        if frames.is_empty() || last_id.is_none_or(|l| id <= l) {
            frames.push(PointFrame::empty(frames.len() as u64));
        }
        last_id = Some(id);
        frames.last_mut().expect("frame pushed").points.push(Point {
            x,
            y,
            z,
            doppler: m.velocity,
            intensity: m.intensity,
        });
        Ok(())
    };

    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim() == "---" {
            flush(&mut msg, start_line, &mut frames)?;
            start_line = i + 2;
            continue;
        }
        // nested header fields are indented
        if line.starts_with(char::is_whitespace) {
            continue;
        }
        let Some((key, value)) = line.split_once(':') else {
            continue;
        };
        let value = value.trim();
        let num = || -> Result<f64> {
            value.parse().map_err(|_| Error::Parse { line: i + 1, msg: format!("bad value for {key}: {value:?}") })
        };
        match key.trim() {
            "point_id" => msg.point_id = Some(num()? as u64),
            "x" => msg.x = Some(num()?),
            "y" => msg.y = Some(num()?),
            "z" => msg.z = Some(num()?),
            "velocity" => msg.velocity = Some(num()?),
            "intensity" => msg.intensity = Some(num()?),
            _ => {}
        }
    }
    flush(&mut msg, start_line, &mut frames)?;
    Ok(frames)
}
