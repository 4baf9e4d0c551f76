//! Binary dataset files.
//!
//! Layout: 8-byte magic, little-endian `u32` format version, `u32` header
//! length, JSON [`DatasetHeader`], then fixed-width records of
//! `state (f64 × width) | action u32 | next (f64 × width) | reward f64 |
//! done u8 | packed edge bits | stage u32`, all little-endian.

use super::collect::Dataset;
use crate::factored::{EdgeMask, FactorSchema, FactoredState, TransitionRecord};
use serde::{Deserialize, Serialize};
use std::io::{self, Read, Write};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"ELDNDSET";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub env: String,
    pub grid: Option<usize>,
    pub seed: u64,
    pub records: usize,
    pub record_bytes: usize,
    pub schema: FactorSchema,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a dataset file (bad magic)")]
    Magic,
    #[error("unsupported dataset version {0} (this build reads {FORMAT_VERSION})")]
    Version(u32),
    #[error("malformed header: {0}")]
    Header(String),
}

fn record_bytes(schema: &FactorSchema) -> usize {
    16 * schema.state_width() + 4 + 8 + 1 + EdgeMask::packed_len(schema.n_factors()) + 4
}

pub fn write_dataset(mut w: impl Write, data: &Dataset) -> Result<(), DatasetError> {
    let header = DatasetHeader {
        env: data.env.clone(),
        grid: data.grid,
        seed: data.seed,
        records: data.records.len(),
        record_bytes: record_bytes(&data.schema),
        schema: data.schema.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| DatasetError::Header(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::with_capacity(header.record_bytes);
    for r in &data.records {
        buf.clear();
        r.state.0.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
        buf.extend_from_slice(&(r.action as u32).to_le_bytes());
        r.next.0.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
        buf.extend_from_slice(&r.reward.to_le_bytes());
        buf.push(u8::from(r.done));
        buf.extend_from_slice(&r.graph.pack());
        buf.extend_from_slice(&(r.stage as u32).to_le_bytes());
        debug_assert_eq!(buf.len(), header.record_bytes);
        w.write_all(&buf)?;
    }
    Ok(())
}

fn take<const K: usize>(b: &[u8], at: &mut usize) -> [u8; K] {
    let out = b[*at..*at + K].try_into().expect("length checked");
    *at += K;
    out
}

pub fn read_dataset(mut r: impl Read) -> Result<(DatasetHeader, Dataset), DatasetError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DatasetError::Magic);
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(DatasetError::Version(version));
    }
    r.read_exact(&mut word)?;
    let mut json = vec![0u8; u32::from_le_bytes(word) as usize];
    r.read_exact(&mut json)?;
    let header: DatasetHeader = serde_json::from_slice(&json).map_err(|e| DatasetError::Header(e.to_string()))?;
    let schema = &header.schema;
    if header.record_bytes != record_bytes(schema) {
        return Err(DatasetError::Header("record width does not match the schema".into()));
    }
    let (width, n) = (schema.state_width(), schema.n_factors());
    let mut buf = vec![0u8; header.record_bytes];
    let mut records = Vec::with_capacity(header.records);
    for _ in 0..header.records {
        r.read_exact(&mut buf)?;
        let mut at = 0;
        let state = (0..width).map(|_| f64::from_le_bytes(take(&buf, &mut at))).collect();
        let action = u32::from_le_bytes(take(&buf, &mut at)) as usize;
        let next = (0..width).map(|_| f64::from_le_bytes(take(&buf, &mut at))).collect();
        let reward = f64::from_le_bytes(take(&buf, &mut at));
        let done = take::<1>(&buf, &mut at)[0] != 0;
        let packed = EdgeMask::packed_len(n);
        let graph = EdgeMask::unpack(n, &buf[at..at + packed]);
        at += packed;
        let stage = u32::from_le_bytes(take(&buf, &mut at)) as usize;
        records.push(TransitionRecord {
            state: FactoredState(state),
            action,
            next: FactoredState(next),
            reward,
            done,
            graph,
            stage,
        });
    }
    let data = Dataset {
        env: header.env.clone(),
        grid: header.grid,
        seed: header.seed,
        schema: header.schema.clone(),
        records,
    };
    Ok((header, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_env, scripted_collect, GridConfig};

    #[test]
    fn round_trip_is_lossless_and_byte_stable() {
        let mut e = make_env("carwash", GridConfig::default()).unwrap();
        let (d, _) = scripted_collect(e.as_mut(), 300, 5).unwrap();
        let mut bytes = Vec::new();
        write_dataset(&mut bytes, &d).unwrap();
        let (h, back) = read_dataset(bytes.as_slice()).unwrap();
        assert_eq!(h.schema, *e.schema());
        assert_eq!(back, d);
        let mut again = Vec::new();
        write_dataset(&mut again, &back).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(matches!(read_dataset(&b"NOTADATA\x01\0\0\0"[..]), Err(DatasetError::Magic)));
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&9u32.to_le_bytes());
        assert!(matches!(read_dataset(bytes.as_slice()), Err(DatasetError::Version(9))));
    }
}
