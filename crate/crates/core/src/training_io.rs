//! Training-set file: `HCDT1`, `u64` M, `u32` P, `u32` Q, then M records of
//! `u64` pixel index, P `f64` and Q `f64`, all little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{TrainingPair, TrainingSet};

pub const MAGIC: &[u8; 5] = b"HCDT1";

pub fn write_training_set(mut out: impl Write, set: &TrainingSet) -> Result<()> {
    let mut buf = Vec::with_capacity(21 + set.len() * (8 + 8 * (set.x_dim() + set.y_dim())));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(set.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(set.x_dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(set.y_dim() as u32).to_le_bytes());
    for p in set.pairs() {
        buf.extend_from_slice(&(p.pixel as u64).to_le_bytes());
        for v in p.x.iter().chain(&p.y) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Reads a training set for an image with `num_pixels` pixels.
pub fn read_training_set(mut input: impl Read, num_pixels: usize) -> Result<TrainingSet> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 21 || &bytes[..5] != MAGIC {
        return Err(Error::Format("not a training-set file (bad magic)".into()));
    }
    let m = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes")) as usize;
    let p = u32::from_le_bytes(bytes[13..17].try_into().expect("4 bytes")) as usize;
    let q = u32::from_le_bytes(bytes[17..21].try_into().expect("4 bytes")) as usize;
    let record = 8 + 8 * (p + q);
    let body = &bytes[21..];
    if m.checked_mul(record) != Some(body.len()) {
        return Err(Error::Format(format!(
            "training-set file holds {} payload bytes, header promises {m} records of {record}",
            body.len()
        )));
    }
    let f64_at = |b: &[u8]| f64::from_le_bytes(b.try_into().expect("8 bytes"));
    let pairs = body
        .chunks_exact(record)
        .map(|r| {
            let vals: Vec<f64> = r[8..].chunks_exact(8).map(f64_at).collect();
            TrainingPair {
                pixel: u64::from_le_bytes(r[..8].try_into().expect("8 bytes")) as usize,
                x: vals[..p].to_vec(),
                y: vals[p..].to_vec(),
            }
        })
        .collect();
    TrainingSet::new(pairs, num_pixels)
}

pub fn save_training_set(path: impl AsRef<Path>, set: &TrainingSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_training_set(&mut w, set)?;
    w.flush()?;
    Ok(())
}

pub fn load_training_set(path: impl AsRef<Path>, num_pixels: usize) -> Result<TrainingSet> {
    read_training_set(BufReader::new(File::open(path)?), num_pixels)
}
