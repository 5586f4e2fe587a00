//! Binary checkpoint: magic, JSON config, then named float32 tensors.

use std::path::Path;

use ndarray::Array2;

use super::model::{FusionConfig, FusionModel};
use super::FusionError;
use crate::binio::{put_f32s, put_str16, put_u32, ByteReader, ShortRead};
use crate::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"KATCKPT1";

impl From<ShortRead> for FusionError {
    fn from(e: ShortRead) -> Self {
        FusionError::Checkpoint { offset: e.offset, reason: e.to_string() }
    }
}

pub fn write_checkpoint<T: Scalar>(model: &FusionModel<T>) -> Vec<u8> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    let config = serde_json::to_vec(model.config()).expect("config serializes");
    put_u32(&mut out, config.len() as u32);
    out.extend_from_slice(&config);
    put_u32(&mut out, model.params().len() as u32);
    for (spec, t) in model.specs().iter().zip(model.params()) {
        put_str16(&mut out, &spec.name);
        if spec.vector {
            put_u32(&mut out, 1);
            put_u32(&mut out, spec.cols as u32);
        } else {
            put_u32(&mut out, 2);
            put_u32(&mut out, spec.rows as u32);
            put_u32(&mut out, spec.cols as u32);
        }
        let data: Vec<f32> = t.iter().map(|v| v.to_f64_lossy() as f32).collect();
        put_f32s(&mut out, &data);
    }
    out
}

pub fn read_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<FusionModel<T>, FusionError> {
    let mut r = ByteReader::new(bytes);
    let corrupt = |offset: usize, reason: String| FusionError::Checkpoint { offset, reason };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(corrupt(0, "bad magic".into()));
    }
    let len = r.u32()? as usize;
    let at = r.offset();
    let config: FusionConfig =
        serde_json::from_slice(r.take(len)?).map_err(|e| corrupt(at, format!("config: {e}")))?;
    config.validate()?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let at = r.offset();
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| corrupt(at, "tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        let (rows, cols) = match rank {
            1 => (1, r.u32()? as usize),
            2 => (r.u32()? as usize, r.u32()? as usize),
            _ => return Err(corrupt(at, format!("tensor {name:?} has unsupported rank {rank}"))),
        };
        let mut data = Vec::new();
        r.f32s(rows * cols, &mut data)?;
        let t = Array2::from_shape_vec((rows, cols), data.into_iter().map(|v| T::from_f64_lossy(v as f64)).collect())
            .expect("length matches shape");
        tensors.push((name, t));
    }
    if r.remaining() != 0 {
        return Err(corrupt(r.offset(), "trailing bytes".into()));
    }
    FusionModel::from_tensors(config, tensors)
}

pub fn save_checkpoint<T: Scalar>(model: &FusionModel<T>, path: &Path) -> Result<(), FusionError> {
    std::fs::write(path, write_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<FusionModel<T>, FusionError> {
    read_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> FusionConfig {
        FusionConfig { d: 8, layers_enc: 1, layers_dec: 1, heads: 2, d_ff: 16, vocab_size: 16, ..FusionConfig::toy(16) }
    }

    #[test]
    fn round_trip_is_exact_for_f32() {
        let m = FusionModel::<f32>::new(tiny()).unwrap();
        let back: FusionModel<f32> = read_checkpoint(&write_checkpoint(&m)).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.config(), m.config());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let m = FusionModel::<f32>::new(tiny()).unwrap();
        let mut bytes = write_checkpoint(&m);
        // Grow the vocabulary in the stored config without touching tensors.
        let pat = b"\"vocab_size\":16";
        let pos = bytes.windows(pat.len()).position(|w| w == pat).unwrap();
        bytes[pos + pat.len() - 1] = b'7';
        assert!(matches!(read_checkpoint::<f32>(&bytes), Err(FusionError::Contract(_))));
    }

    #[test]
    fn truncation_reports_offset() {
        let m = FusionModel::<f32>::new(tiny()).unwrap();
        let bytes = write_checkpoint(&m);
        match read_checkpoint::<f32>(&bytes[..bytes.len() - 3]) {
            Err(FusionError::Checkpoint { offset, .. }) => assert!(offset > 8),
            other => panic!("{other:?}"),
        }
    }
}
