//! Scene files: raw I/Q, YOLO-style labels and `key=value` metadata.

use std::io::{Read, Write};

use num_complex::Complex64;

use super::IqRecording;
use crate::detect::BBox;
use crate::error::{Error, Result};
use crate::kv::KvMap;

/// Little-endian interleaved `f32` (I, Q) pairs.
pub fn write_iq<W: Write>(mut w: W, samples: &[Complex64]) -> Result<()> {
    let mut buf = Vec::with_capacity(samples.len() * 8);
    for s in samples {
        buf.extend_from_slice(&(s.re as f32).to_le_bytes());
        buf.extend_from_slice(&(s.im as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_iq<R: Read>(mut r: R) -> Result<Vec<Complex64>> {
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() % 8 != 0 {
        return Err(Error::Format(format!("I/Q stream of {} bytes is not a whole number of pairs", raw.len())));
    }
    Ok(raw
        .chunks_exact(8)
        .map(|c| {
            let i = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let q = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(i as f64, q as f64)
        })
        .collect())
}

/// One `class_id x_center y_center width height` line per box.
pub fn format_labels(labels: &[(usize, BBox)]) -> String {
    labels
        .iter()
        .map(|(c, b)| format!("{c} {:.6} {:.6} {:.6} {:.6}\n", b.cx, b.cy, b.w, b.h))
        .collect()
}

pub fn parse_labels(text: &str) -> Result<Vec<(usize, BBox)>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(no, line)| {
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Format(format!("label line {}: {line:?}", no + 1));
            if f.len() != 5 {
                return Err(bad());
            }
            let class: usize = f[0].parse().map_err(|_| bad())?;
            let v: Vec<f64> = f[1..].iter().map(|s| s.parse()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
            Ok((class, BBox::new(v[0], v[1], v[2], v[3])))
        })
        .collect()
}

pub fn scene_metadata(rec: &IqRecording) -> KvMap {
    let mut m = KvMap::new();
    m.set("snr_db", rec.channel.snr_db);
    m.set("seed", rec.seed);
    m.set("f_s", rec.f_s);
    m.set("n", rec.samples.len());
    m.set("k_factor", rec.channel.k_factor);
    m.set("num_signals", rec.num_signals());
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iq_layout_is_interleaved_little_endian() {
        let s = [Complex64::new(1.0, -2.0)];
        let mut buf = Vec::new();
        write_iq(&mut buf, &s).unwrap();
        assert_eq!(&buf[..4], &1.0f32.to_le_bytes());
        assert_eq!(&buf[4..], &(-2.0f32).to_le_bytes());
        assert_eq!(read_iq(&buf[..]).unwrap(), s.to_vec());
        assert!(read_iq(&buf[..5]).is_err());
    }

    #[test]
    fn labels_parse_back() {
        let l = vec![(3, BBox::new(0.5, 0.25, 0.1, 0.2))];
        assert_eq!(parse_labels(&format_labels(&l)).unwrap(), l);
        assert!(parse_labels("1 0.5 0.5 0.1").is_err());
    }
}
