//! Attribution dumps: a sequence of records, each laid out (little endian) as
//! magic `AEVATT1`, `u64` explicand id, `u32` length + UTF-8 explainer id,
//! `u32` target, `u32` rank and dims, then `f32` values row-major.

use std::path::Path;

use crate::binio::{push_f32s, push_u32, read_file, write_file, ByteReader};
use crate::error::Result;
use crate::explain::AttributionMap;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8] = b"AEVATT1";

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionRecord<T> {
    pub explicand_id: u64,
    pub explainer_id: String,
    pub target: usize,
    pub values: Tensor<T>,
}

impl<T: Scalar> AttributionRecord<T> {
    pub fn from_map(explicand_id: u64, map: &AttributionMap<T>) -> Self {
        AttributionRecord {
            explicand_id,
            explainer_id: map.explainer_id.clone(),
            target: map.target,
            values: map.values.clone(),
        }
    }
}

pub fn encode_attributions<T: Scalar>(records: &[AttributionRecord<T>]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&r.explicand_id.to_le_bytes());
        push_u32(&mut out, r.explainer_id.len());
        out.extend_from_slice(r.explainer_id.as_bytes());
        push_u32(&mut out, r.target);
        push_u32(&mut out, r.values.shape().len());
        for &d in r.values.shape() {
            push_u32(&mut out, d);
        }
        push_f32s(&mut out, r.values.data());
    }
    out
}

pub fn decode_attributions<T: Scalar>(
    path: &Path,
    bytes: &[u8],
) -> Result<Vec<AttributionRecord<T>>> {
    let mut r = ByteReader::new(path, bytes);
    let mut records = Vec::new();
    while r.offset() < bytes.len() {
        r.expect_magic(MAGIC)?;
        let explicand_id = r.u64_le()?;
        let id_len = r.u32_le()? as usize;
        let at = r.offset();
        let explainer_id = std::str::from_utf8(r.take(id_len)?)
            .map_err(|_| r.error_at(at, "explainer id is not UTF-8"))?
            .to_string();
        let target = r.u32_le()? as usize;
        let rank_at = r.offset();
        let rank = r.u32_le()? as usize;
        if rank == 0 || rank > 4 {
            return Err(r.error_at(rank_at, format!("unsupported rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| r.u32_le().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        if len == 0 {
            return Err(r.error_at(rank_at, "zero-sized shape"));
        }
        let data = r.f32_vec(len)?;
        let values = Tensor::new(
            shape,
            data.into_iter().map(|v| T::narrow(v as f64)).collect(),
        )
        .map_err(|e| r.error(e.to_string()))?;
        records.push(AttributionRecord {
            explicand_id,
            explainer_id,
            target,
            values,
        });
    }
    Ok(records)
}

pub fn save_attributions<T: Scalar>(records: &[AttributionRecord<T>], path: &Path) -> Result<()> {
    write_file(path, &encode_attributions(records))
}

pub fn load_attributions<T: Scalar>(path: &Path) -> Result<Vec<AttributionRecord<T>>> {
    decode_attributions(path, &read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn record(id: u64) -> AttributionRecord<f32> {
        AttributionRecord {
            explicand_id: id,
            explainer_id: "ig".into(),
            target: 3,
            values: Tensor::new(vec![1, 2, 2], vec![0.5, -1.25, 3.0, 1e-7]).unwrap(),
        }
    }

    #[test]
    fn roundtrip_multiple_records() {
        let recs = vec![record(7), record(u64::MAX)];
        let bytes = encode_attributions(&recs);
        assert_eq!(
            decode_attributions::<f32>(Path::new("m"), &bytes).unwrap(),
            recs
        );
    }

    #[test]
    fn truncated_record_is_a_format_error() {
        let bytes = encode_attributions(&[record(1)]);
        let err =
            decode_attributions::<f32>(Path::new("m"), &bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }
}
