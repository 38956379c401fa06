//! Little-endian weights container.
//!
//! ```text
//! "SGWT" | version u32
//! config: u32 count, then u32 fields
//!         (image, patch, channels, embed, heads, layers, mlp ratio, params, hidden…)
//!         u32 count, then f64 fields (k, joint lower, joint upper), u32 squash
//! u32 tensor count, then per tensor:
//!         u32 name length, name bytes, u32 rank, u32 dims…, f32 data
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{Corrector, CorrectionSpace, ModelWeights, Squash, VitConfig, CORRECTION_DIM};
use crate::diff::Tensor;
use crate::kinematics::VISIBLE_JOINTS;
use crate::{Error, Result};

pub const SGWT_MAGIC: &[u8; 4] = b"SGWT";
pub const SGWT_VERSION: u32 = 1;

fn u32_le(w: &mut impl Write, v: usize) -> std::io::Result<()> {
    w.write_all(&(v as u32).to_le_bytes())
}

pub fn write_weights(w: &mut impl Write, c: &Corrector) -> std::io::Result<()> {
    let cfg = &c.weights.config;
    w.write_all(SGWT_MAGIC)?;
    w.write_all(&SGWT_VERSION.to_le_bytes())?;
    let mut ints =
        vec![cfg.image_size, cfg.patch_size, cfg.channels, cfg.embed_dim, cfg.heads, cfg.layers, cfg.mlp_ratio, cfg.params];
    ints.extend(&cfg.head_hidden);
    u32_le(w, ints.len())?;
    for v in ints {
        u32_le(w, v)?;
    }
    let s = &c.space;
    let floats: Vec<f64> = s.k.iter().chain(&s.joint_lower).chain(&s.joint_upper).copied().collect();
    u32_le(w, floats.len())?;
    for v in floats {
        w.write_all(&v.to_le_bytes())?;
    }
    u32_le(w, matches!(s.squash, Squash::Literal) as usize)?;
    u32_le(w, c.weights.tensors.len())?;
    for (name, t) in &c.weights.tensors {
        u32_le(w, name.len())?;
        w.write_all(name.as_bytes())?;
        u32_le(w, t.rank())?;
        for &d in t.shape() {
            u32_le(w, d)?;
        }
        for &v in t.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

struct In<R> {
    r: R,
}

impl<R: Read> In<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.r.read_exact(&mut b).map_err(|_| Error::Format("truncated weights file".into()))?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    /// A count that must not exceed `max`, guarding allocations.
    fn count(&mut self, max: usize, what: &str) -> Result<usize> {
        let n = self.u32()?;
        if n > max {
            return Err(Error::Format(format!("implausible {what} count {n}")));
        }
        Ok(n)
    }
}

pub fn read_weights(r: impl Read) -> Result<Corrector> {
    let mut r = In { r };
    if &r.bytes::<4>()? != SGWT_MAGIC {
        return Err(Error::Format("missing SGWT magic".into()));
    }
    let version = r.u32()?;
    if version != SGWT_VERSION as usize {
        return Err(Error::Format(format!("unsupported weights version {version}")));
    }
    let n = r.count(64, "config field")?;
    if n < 8 {
        return Err(Error::Format(format!("config block has {n} fields, expected at least 8")));
    }
    let ints = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let config = VitConfig {
        image_size: ints[0],
        patch_size: ints[1],
        channels: ints[2],
        embed_dim: ints[3],
        heads: ints[4],
        layers: ints[5],
        mlp_ratio: ints[6],
        params: ints[7],
        head_hidden: ints[8..].to_vec(),
    };
    let nf = r.u32()?;
    if nf != CORRECTION_DIM + 2 * VISIBLE_JOINTS {
        return Err(Error::Format(format!("correction block has {nf} values")));
    }
    let f = (0..nf).map(|_| Ok(f64::from_le_bytes(r.bytes()?))).collect::<Result<Vec<f64>>>()?;
    let squash = if r.u32()? == 1 { Squash::Literal } else { Squash::Centered };
    let space = CorrectionSpace {
        k: f[..CORRECTION_DIM].try_into().unwrap(),
        joint_lower: f[CORRECTION_DIM..CORRECTION_DIM + VISIBLE_JOINTS].try_into().unwrap(),
        joint_upper: f[CORRECTION_DIM + VISIBLE_JOINTS..].try_into().unwrap(),
        squash,
    };
    let count = r.count(4096, "tensor")?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let len = r.count(256, "name length")?;
        let mut name = vec![0u8; len];
        r.r.read_exact(&mut name).map_err(|_| Error::Format("truncated tensor name".into()))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = r.count(8, "rank")?;
        let dims = (0..rank).map(|_| r.count(1 << 24, "dimension")).collect::<Result<Vec<_>>>()?;
        let numel: usize = dims.iter().product();
        if numel > 1 << 26 {
            return Err(Error::Format(format!("tensor {name} is implausibly large")));
        }
        let data = (0..numel).map(|_| Ok(f32::from_le_bytes(r.bytes()?) as f64)).collect::<Result<Vec<_>>>()?;
        tensors.insert(name, Tensor::new(&dims, data)?);
    }
    let weights = ModelWeights { config, tensors };
    weights.validate()?;
    space.validate()?;
    Ok(Corrector { weights, space })
}

pub fn save_weights(path: &Path, c: &Corrector) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_weights(&mut w, c).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<Corrector> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_weights(std::io::BufReader::new(f)).map_err(|e| e.at(path))
}
