//! `MDLB` dataset container.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! "MDLB" | version u32 | config_len u32 | config JSON | master_seed u64
//! kind u8 | feature u8 | bits u32 | k0 u32 | k1 u32 | k0+k1 patterns u64
//! n u64 | n records
//! record: digit u8 | label u8 | env u8 | color u8 | wm_bank u8 (0xff = none)
//!         wm_index u32 | noise_seed u64 | glyph side² bytes | image side²·3 bytes
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::taskgen::{
    Color, Dataset, DatasetKind, Feature, Latents, Sample, TaskConfig, WatermarkBanks, WatermarkRef,
};

pub const CONTAINER_MAGIC: &[u8; 4] = b"MDLB";
pub const CONTAINER_VERSION: u32 = 1;

fn feature_code(f: Feature) -> u8 {
    match f {
        Feature::Digit => 0,
        Feature::Color => 1,
        Feature::Watermark => 2,
    }
}

fn feature_from(code: u8) -> Result<Feature> {
    Ok(match code {
        0 => Feature::Digit,
        1 => Feature::Color,
        2 => Feature::Watermark,
        c => return Err(Error::Container(format!("bad feature code {c}"))),
    })
}

pub fn write_container<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    w.write_all(CONTAINER_MAGIC)?;
    w.write_all(&CONTAINER_VERSION.to_le_bytes())?;
    let cfg = serde_json::to_vec(ds.config())?;
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(&cfg)?;
    w.write_all(&ds.master_seed().to_le_bytes())?;
    let (kind, feature) = match ds.kind() {
        DatasetKind::Original => (0u8, 0u8),
        DatasetKind::Isolated(f) => (1, feature_code(f)),
        DatasetKind::OutOfDistribution(f) => (2, feature_code(f)),
    };
    w.write_all(&[kind, feature])?;
    let banks = ds.banks();
    w.write_all(&(banks.bits as u32).to_le_bytes())?;
    w.write_all(&(banks.bank0.len() as u32).to_le_bytes())?;
    w.write_all(&(banks.bank1.len() as u32).to_le_bytes())?;
    for p in banks.bank0.iter().chain(&banks.bank1) {
        w.write_all(&p.to_le_bytes())?;
    }
    w.write_all(&(ds.len() as u64).to_le_bytes())?;
    for s in ds.samples() {
        let l = &s.latents;
        let color = match l.color {
            Color::Red => 0u8,
            Color::Green => 1,
            Color::None => 2,
        };
        let (bank, index) = l.watermark.map_or((0xff, 0), |wm| (wm.bank, wm.index));
        w.write_all(&[l.digit_class, l.label, l.environment, color, bank])?;
        w.write_all(&index.to_le_bytes())?;
        w.write_all(&l.noise_seed.to_le_bytes())?;
        w.write_all(&s.glyph)?;
        w.write_all(&s.image)?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Container(format!("truncated container: {e}")))?;
        Ok(buf)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Container(format!("truncated container: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
}

pub fn read_container<R: Read>(r: R) -> Result<Dataset> {
    let mut r = Reader { inner: r };
    if &r.array::<4>()? != CONTAINER_MAGIC {
        return Err(Error::Container("magic is not MDLB".into()));
    }
    let version = r.u32()?;
    if version != CONTAINER_VERSION {
        return Err(Error::Container(format!("unsupported version {version}")));
    }
    let cfg_len = r.u32()? as usize;
    let config: TaskConfig = serde_json::from_slice(&r.bytes(cfg_len)?)?;
    config.validate()?;
    let master_seed = r.u64()?;
    let [kind, feature] = r.array::<2>()?;
    let kind = match kind {
        0 => DatasetKind::Original,
        1 => DatasetKind::Isolated(feature_from(feature)?),
        2 => DatasetKind::OutOfDistribution(feature_from(feature)?),
        k => return Err(Error::Container(format!("bad dataset kind {k}"))),
    };
    let bits = r.u32()? as usize;
    let (k0, k1) = (r.u32()? as usize, r.u32()? as usize);
    let mut patterns = Vec::with_capacity(k0 + k1);
    for _ in 0..k0 + k1 {
        patterns.push(r.u64()?);
    }
    let bank1 = patterns.split_off(k0);
    let banks = WatermarkBanks {
        bits,
        bank0: patterns,
        bank1,
    };
    let n = r.u64()? as usize;
    let side = config.image_side;
    let mut samples = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let [digit_class, label, environment, color, bank] = r.array::<5>()?;
        let index = r.u32()?;
        let noise_seed = r.u64()?;
        let color = match color {
            0 => Color::Red,
            1 => Color::Green,
            2 => Color::None,
            c => return Err(Error::Container(format!("bad color code {c}"))),
        };
        let watermark = match bank {
            0xff => None,
            b @ (0 | 1) => {
                if index as usize >= banks.bank(b).len() {
                    return Err(Error::Container(format!("watermark index {index} out of bank")));
                }
                Some(WatermarkRef { bank: b, index })
            }
            b => return Err(Error::Container(format!("bad watermark bank {b}"))),
        };
        let glyph = r.bytes(side * side)?;
        let image = r.bytes(side * side * 3)?;
        samples.push(Sample {
            latents: Latents {
                digit_class,
                label,
                environment,
                color,
                watermark,
                noise_seed,
            },
            glyph: glyph.into(),
            image,
        });
    }
    Ok(Dataset::from_parts(config, banks, master_seed, kind, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskgen::{make_dataset, make_ood_testset, SyntheticDigits};

    #[test]
    fn container_round_trip() {
        let cfg = TaskConfig::scenario_b(0.15, 4).at_side(16);
        let src = SyntheticDigits::new(16);
        for ds in [
            make_dataset(&cfg, 40, 9, &src).unwrap(),
            make_ood_testset(&cfg, Feature::Watermark, 12, 9, &src).unwrap(),
        ] {
            let mut buf = Vec::new();
            write_container(&ds, &mut buf).unwrap();
            assert_eq!(&buf[..4], b"MDLB");
            let back = read_container(buf.as_slice()).unwrap();
            assert_eq!(back, ds);
        }
    }

    #[test]
    fn truncated_container_is_an_error() {
        let cfg = TaskConfig::scenario_a(0.25).at_side(16);
        let ds = make_dataset(&cfg, 3, 1, &SyntheticDigits::new(16)).unwrap();
        let mut buf = Vec::new();
        write_container(&ds, &mut buf).unwrap();
        for cut in [0, 3, 10, buf.len() - 1] {
            assert!(read_container(&buf[..cut]).is_err());
        }
    }
}
