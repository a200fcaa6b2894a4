//! Binary checkpoints.
//!
//! Layout (little-endian): magic `OGPC`, u32 version, u32 config length,
//! canonical config JSON, then records `{u32 name length, name, u32 ndim,
//! u32 dims.., f32 data}` for every parameter followed by batch-norm
//! buffers `<branch>.block<i>.running_mean|running_var|batches_tracked`.
//! The u64 batch counter is stored bit-for-bit as two f32 words (low, high).

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::voxel::ByteCursor;
use crate::model::config::ModelConfig;
use crate::model::network::OgPcl;

const MAGIC: &[u8; 4] = b"OGPC";
const VERSION: u32 = 1;

fn write_record(out: &mut Vec<u8>, name: &str, shape: &[usize], data: impl Iterator<Item = f32>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn checkpoint_bytes(model: &OgPcl<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = model.config().canonical();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    for (name, t) in model.params() {
        write_record(&mut out, &name, t.shape(), t.data().iter().copied());
    }
    for (name, s) in model.stats() {
        let c = s.channels();
        write_record(&mut out, &format!("{name}.running_mean"), &[c], s.mean.iter().copied());
        write_record(&mut out, &format!("{name}.running_var"), &[c], s.var.iter().copied());
        let bits = s.batches_tracked;
        let words = [f32::from_bits(bits as u32), f32::from_bits((bits >> 32) as u32)];
        write_record(&mut out, &format!("{name}.batches_tracked"), &[2], words.into_iter());
    }
    out
}

pub fn save_checkpoint(model: &OgPcl<f32>, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&checkpoint_bytes(model))?;
    Ok(())
}

struct Record<'a> {
    offset: usize,
    name: &'a str,
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn read_record<'a>(cur: &mut ByteCursor<'a>) -> Result<Record<'a>> {
    let offset = cur.pos;
    let len = cur.u32()? as usize;
    let name = std::str::from_utf8(cur.take(len)?)
        .map_err(|_| Error::Format(format!("offset {offset}: record name is not UTF-8")))?;
    let ndim = cur.u32()? as usize;
    if ndim > 8 {
        return Err(Error::Format(format!("offset {offset}: record {name:?} claims {ndim} dimensions")));
    }
    let shape = (0..ndim).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    let bytes =
        cur.take(n.checked_mul(4).ok_or_else(|| Error::Format(format!("offset {offset}: record too large")))?)?;
    let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
    Ok(Record { offset, name, shape, data })
}

/// Parses a checkpoint. Every record must be present exactly once with
/// the shape the embedded config implies.
pub fn checkpoint_from_bytes(buf: &[u8]) -> Result<OgPcl<f32>> {
    let mut cur = ByteCursor { buf, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Format("offset 0: bad checkpoint magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("offset 4: unsupported checkpoint version {version}")));
    }
    let len = cur.u32()? as usize;
    let text =
        std::str::from_utf8(cur.take(len)?).map_err(|_| Error::Format("offset 12: config is not UTF-8".into()))?;
    let config = ModelConfig::from_canonical(text)
        .map_err(|e| Error::Format(format!("offset 12: invalid embedded config: {e}")))?;
    let mut model = OgPcl::<f32>::new(config)?;

    let mut params = model.params_mut();
    for (expected, t) in params.iter_mut() {
        let r = read_record(&mut cur)?;
        if r.name != expected || r.shape != t.shape() {
            return Err(Error::Format(format!(
                "offset {}: expected record {expected:?} {:?}, found {:?} {:?}",
                r.offset,
                t.shape(),
                r.name,
                r.shape
            )));
        }
        t.data_mut().copy_from_slice(&r.data);
    }
    drop(params);
    for (name, s) in model.stats_mut() {
        let c = s.channels();
        let mut next = |suffix: &str, shape: &[usize]| -> Result<Vec<f32>> {
            let r = read_record(&mut cur)?;
            let want = format!("{name}.{suffix}");
            if r.name != want || r.shape != shape {
                return Err(Error::Format(format!(
                    "offset {}: expected record {want:?} {shape:?}, found {:?} {:?}",
                    r.offset, r.name, r.shape
                )));
            }
            Ok(r.data)
        };
        s.mean = next("running_mean", &[c])?;
        s.var = next("running_var", &[c])?;
        let w = next("batches_tracked", &[2])?;
        s.batches_tracked = w[0].to_bits() as u64 | (w[1].to_bits() as u64) << 32;
    }
    if cur.pos != buf.len() {
        return Err(Error::Format(format!("offset {}: trailing bytes after last record", cur.pos)));
    }
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<OgPcl<f32>> {
    checkpoint_from_bytes(&fs::read(path)?)
}

/// Loads and insists the embedded config equals `expected`.
pub fn load_checkpoint_strict(path: &Path, expected: &ModelConfig) -> Result<OgPcl<f32>> {
    let m = load_checkpoint(path)?;
    if m.config() != expected {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint config {} differs from expected {}",
            m.config().canonical(),
            expected.canonical()
        )));
    }
    Ok(m)
}

/// CSV with header `e0,..,e{2H-1},label`. Unlabelled rows leave the label
/// column empty.
pub fn write_embeddings_csv(mut w: impl Write, rows: &[(Vec<f32>, Option<usize>)], width: usize) -> Result<()> {
    let header: Vec<String> = (0..width).map(|i| format!("e{i}")).collect();
    writeln!(w, "{},label", header.join(","))?;
    for (e, label) in rows {
        if e.len() != width {
            return Err(Error::Dimension(format!("embedding width {} != {width}", e.len())));
        }
        let cells: Vec<String> = e.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{}", cells.join(","), label.map_or(String::new(), |l| l.to_string()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::Mode;

    fn trained_like() -> OgPcl<f32> {
        let cfg = ModelConfig { hidden: 4, ..Default::default() }.with_views(&[crate::projection::View::Side]).unwrap();
        let mut m = OgPcl::<f32>::new(cfg).unwrap();
        for (i, (_, s)) in m.stats_mut().into_iter().enumerate() {
            s.mean.iter_mut().for_each(|v| *v = 0.1 * i as f32);
            s.batches_tracked = (1u64 << 40) + 7;
        }
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = trained_like();
        let bytes = checkpoint_bytes(&m);
        let back = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(back.config(), m.config());
        for ((_, a), (_, b)) in m.params().into_iter().zip(back.params()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        for ((_, a), (_, b)) in m.stats().into_iter().zip(back.stats()) {
            assert_eq!(a, b);
        }
        assert_eq!(checkpoint_bytes(&back), bytes);
        let _ = Mode::Infer;
    }

    #[test]
    fn truncation_and_corruption() {
        let bytes = checkpoint_bytes(&trained_like());
        for cut in [0, 3, 7, 11, 40, bytes.len() / 2, bytes.len() - 1] {
            match checkpoint_from_bytes(&bytes[..cut]) {
                Err(Error::Format(msg)) => assert!(msg.contains("offset"), "{msg}"),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(checkpoint_from_bytes(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(checkpoint_from_bytes(&bad), Err(Error::Format(_))));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(checkpoint_from_bytes(&long), Err(Error::Format(_))));
    }

    #[test]
    fn strict_load_detects_other_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ogpc");
        let m = trained_like();
        save_checkpoint(&m, &p).unwrap();
        load_checkpoint_strict(&p, m.config()).unwrap();
        let other = ModelConfig { seed: 1, ..m.config().clone() };
        assert!(matches!(load_checkpoint_strict(&p, &other), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn embeddings_csv() {
        let mut out = Vec::new();
        write_embeddings_csv(&mut out, &[(vec![0.5, -1.0], Some(3)), (vec![0.0, 2.0], None)], 2).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "e0,e1,label\n0.5,-1,3\n0,2,\n");
    }
}
