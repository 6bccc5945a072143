//! Versioned model checkpoints.
//!
//! Layout: 8-byte magic, 1-byte version, u32 BE JSON header length, JSON
//! header (architecture config, schedule parameters, ordered parameter
//! names and shapes), then each tensor's values as little-endian f64 in
//! header order. Weights are addressed by name so a load verifies it is
//! reconstructing the exact architecture it was saved from.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schedule::ScheduleParams;
use super::unet::{Denoiser, DenoiserConfig};
use crate::error::{Result, SpicError};

const MAGIC: &[u8; 8] = b"SPICCKPT";
const VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: DenoiserConfig,
    schedule: ScheduleParams,
    params: Vec<ParamEntry>,
}

pub fn save(path: &Path, model: &Denoiser, schedule: &ScheduleParams) -> Result<()> {
    let header = Header {
        config: model.config().clone(),
        schedule: *schedule,
        params: model
            .params()
            .iter()
            .map(|(name, value)| ParamEntry {
                name: name.to_string(),
                shape: value.shape().to_vec(),
            })
            .collect(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| SpicError::Checkpoint(e.to_string()))?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&[VERSION])?;
    f.write_all(&(header_json.len() as u32).to_be_bytes())?;
    f.write_all(&header_json)?;
    for (_, value) in model.params().iter() {
        for &v in value.iter() {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.into_inner().map_err(|e| SpicError::Io(e.into_error()))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Denoiser, ScheduleParams)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(SpicError::Checkpoint(format!(
            "bad magic {magic:02x?}, not a checkpoint"
        )));
    }
    let mut version = [0u8; 1];
    f.read_exact(&mut version)?;
    if version[0] != VERSION {
        return Err(SpicError::Checkpoint(format!(
            "unsupported checkpoint version {}",
            version[0]
        )));
    }
    let mut len_bytes = [0u8; 4];
    f.read_exact(&mut len_bytes)?;
    let header_len = u32::from_be_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    f.read_exact(&mut header_json)?;
    let header: Header =
        serde_json::from_slice(&header_json).map_err(|e| SpicError::Checkpoint(e.to_string()))?;

    // Weight seeding is irrelevant: every tensor is overwritten below.
    let mut model = Denoiser::new(header.config, 0)?;
    if header.params.len() != model.params().len() {
        return Err(SpicError::Checkpoint(format!(
            "checkpoint lists {} tensors, architecture has {}",
            header.params.len(),
            model.params().len()
        )));
    }
    for (i, entry) in header.params.iter().enumerate() {
        if model.params().name(i) != entry.name {
            return Err(SpicError::Checkpoint(format!(
                "tensor {i} is {} in the checkpoint but {} in the architecture",
                entry.name,
                model.params().name(i)
            )));
        }
        if model.params().value(i).shape() != entry.shape.as_slice() {
            return Err(SpicError::Checkpoint(format!(
                "tensor {} shape {:?} does not match architecture {:?}",
                entry.name,
                entry.shape,
                model.params().value(i).shape()
            )));
        }
        let n = model.params().value(i).len();
        let mut raw = vec![0u8; n * 8];
        f.read_exact(&mut raw).map_err(|_| {
            SpicError::Checkpoint(format!("weight data truncated at tensor {}", entry.name))
        })?;
        for (j, slot) in model
            .params_mut()
            .value_mut(i)
            .iter_mut()
            .enumerate()
        {
            let mut b = [0u8; 8];
            b.copy_from_slice(&raw[j * 8..j * 8 + 8]);
            let v = f64::from_le_bytes(b);
            if !v.is_finite() {
                return Err(SpicError::Checkpoint(format!(
                    "non-finite weight in tensor {}",
                    entry.name
                )));
            }
            *slot = v;
        }
    }
    let mut trailing = [0u8; 1];
    if f.read(&mut trailing)? != 0 {
        return Err(SpicError::Checkpoint(
            "trailing bytes after weight data".into(),
        ));
    }
    Ok((model, header.schedule))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, ArrayD, IxDyn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn tiny_model(seed: u64) -> Denoiser {
        Denoiser::new(
            DenoiserConfig {
                base_channels: 4,
                channel_mult: vec![1, 2],
                res_blocks: 1,
                attend_lowest: true,
                n_classes: 3,
                spade_hidden: 4,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_everything_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut model = tiny_model(42);
        let mut rng = ChaCha12Rng::seed_from_u64(110);
        for i in 0..model.params().len() {
            model
                .params_mut()
                .value_mut(i)
                .mapv_inplace(|v| v + rng.gen_range(-0.1..0.1));
        }
        let sched = ScheduleParams {
            t_max: 123,
            beta_start: 2e-4,
            beta_end: 0.015,
        };
        save(&path, &model, &sched).unwrap();
        let (loaded, loaded_sched) = load(&path).unwrap();
        assert_eq!(loaded_sched, sched);
        assert_eq!(loaded.config(), model.config());
        for i in 0..model.params().len() {
            assert_eq!(
                loaded.params().value(i),
                model.params().value(i),
                "{}",
                model.params().name(i)
            );
        }
    }

    #[test]
    fn loaded_model_predicts_identically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut model = tiny_model(1);
        let mut rng = ChaCha12Rng::seed_from_u64(111);
        for i in 0..model.params().len() {
            model
                .params_mut()
                .value_mut(i)
                .mapv_inplace(|v| v + rng.gen_range(-0.05..0.05));
        }
        save(&path, &model, &ScheduleParams::default()).unwrap();
        let (loaded, _) = load(&path).unwrap();

        let x6 = ArrayD::from_shape_fn(IxDyn(&[1, 6, 8, 8]), |_| rng.gen_range(-1.0..1.0));
        let ssm = crate::types::SegmentationMap::new(
            Array2::from_shape_fn((8, 8), |_| rng.gen_range(0..3u8)),
            3,
        )
        .unwrap();
        let a = model.predict_eps(&x6, &[17], &[&ssm]).unwrap();
        let b = loaded.predict_eps(&x6, &[17], &[&ssm]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = tiny_model(2);
        save(&path, &model, &ScheduleParams::default()).unwrap();
        let good = std::fs::read(&path).unwrap();

        // Bad magic.
        let mut bad = good.clone();
        bad[0] ^= 0xFF;
        std::fs::write(&path, &bad).unwrap();
        assert!(load(&path).is_err());

        // Bad version.
        let mut bad = good.clone();
        bad[8] = 99;
        std::fs::write(&path, &bad).unwrap();
        assert!(load(&path).is_err());

        // Truncated weights.
        std::fs::write(&path, &good[..good.len() - 9]).unwrap();
        assert!(load(&path).is_err());

        // Trailing garbage.
        let mut bad = good.clone();
        bad.push(0);
        std::fs::write(&path, &bad).unwrap();
        assert!(load(&path).is_err());

        // Pristine copy still loads.
        std::fs::write(&path, &good).unwrap();
        assert!(load(&path).is_ok());
    }

    #[test]
    fn non_finite_weights_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = tiny_model(3);
        save(&path, &model, &ScheduleParams::default()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        // Overwrite the last weight with NaN.
        bytes[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(load(&path).is_err());
    }
}
