//! Checkpoint layout: `u64` LE header length, JSON header, then every
//! parameter as LE `f64` in layer order (weights row-major, then biases).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{MlpArchitecture, MlpModel, TrainConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub architecture: MlpArchitecture,
    pub config: TrainConfig,
    pub seed: u64,
}

pub fn save_checkpoint<W: Write>(model: &MlpModel, config: &TrainConfig, mut w: W) -> Result<()> {
    let header = serde_json::to_vec(&Checkpoint {
        architecture: model.architecture,
        config: config.clone(),
        seed: config.seed,
    })?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for p in model.params() {
        w.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_checkpoint<R: Read>(mut r: R) -> Result<(MlpModel, Checkpoint)> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 24 {
        return Err(Error::Container(format!("checkpoint header of {len} bytes")));
    }
    let mut header = vec![0u8; len];
    r.read_exact(&mut header)?;
    let ck: Checkpoint = serde_json::from_slice(&header)?;
    ck.architecture.validate()?;
    let mut model = MlpModel::zeros(ck.architecture);
    let mut buf = [0u8; 8];
    for layer in &mut model.layers {
        for p in layer.w.iter_mut().chain(layer.b.iter_mut()) {
            r.read_exact(&mut buf)?;
            *p = f64::from_le_bytes(buf);
        }
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Container(format!("{} trailing checkpoint bytes", rest.len())));
    }
    Ok((model, ck))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::init_xavier;
    use crate::rng;

    #[test]
    fn checkpoint_round_trip() {
        let arch = MlpArchitecture::new(12, 5, 2);
        let model = init_xavier(arch, &mut rng::stream(3, 0, "init"));
        let cfg = TrainConfig::default().with_seed(3);
        let mut buf = Vec::new();
        save_checkpoint(&model, &cfg, &mut buf).unwrap();
        let (back, ck) = load_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, model);
        assert_eq!(ck.seed, 3);
        assert!(load_checkpoint(&buf[..buf.len() - 1]).is_err());
    }
}
