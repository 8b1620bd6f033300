//! `DMCK` checkpoint files.
//!
//! Layout (little-endian): magic `DMCK`, version `u16`, the two network
//! configs, shape count, parameter blobs, both code tables, an optional
//! optimizer state, the 32-byte training-config hash, and finally a
//! SHA-256 over everything before it.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use super::adam::{Adam, OptimizerState, RowAdam};
use super::mlp::{Mlp, MlpConfig};
use super::model::AutodecoderModel;
use crate::binio::{atomic_write, ByteReader, ByteWriter};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DMCK";
pub const CHECKPOINT_VERSION: u16 = 1;
const NO_SKIP: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: AutodecoderModel,
    pub optimizer: Option<OptimizerState>,
    pub config_hash: [u8; 32],
}

fn put_config(w: &mut ByteWriter, c: &MlpConfig) {
    w.u64(c.input_dim as u64);
    w.u64(c.hidden_width as u64);
    w.u64(c.depth as u64);
    w.u64(c.skip_layer.map_or(NO_SKIP, |s| s as u64));
}

fn get_config(r: &mut ByteReader) -> Result<MlpConfig> {
    let mut next = || -> Result<usize> {
        usize::try_from(r.u64()?).map_err(|_| Error::Format("config value overflows".into()))
    };
    let input_dim = next()?;
    let hidden_width = next()?;
    let depth = next()?;
    let skip = r.u64()?;
    let c = MlpConfig {
        input_dim,
        hidden_width,
        depth,
        skip_layer: (skip != NO_SKIP).then_some(skip as usize),
    };
    c.validate().map_err(|e| Error::Format(format!("bad network config: {e}")))?;
    Ok(c)
}

fn put_table(w: &mut ByteWriter, t: &Array2<f64>) {
    t.iter().for_each(|&x| w.f64(x));
}

fn get_table(r: &mut ByteReader, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let n = rows * cols;
    if n.saturating_mul(8) > r.remaining() {
        return Err(Error::Format("code table exceeds file size".into()));
    }
    let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    Ok(Array2::from_shape_vec((rows, cols), data).expect("sized"))
}

fn put_row_adam(w: &mut ByteWriter, o: &RowAdam) {
    w.f64(o.lr);
    o.t.iter().for_each(|&t| w.u64(t));
    put_table(w, &o.m);
    put_table(w, &o.v);
}

fn get_row_adam(r: &mut ByteReader, rows: usize, cols: usize) -> Result<RowAdam> {
    let lr = r.f64()?;
    let t = (0..rows).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    Ok(RowAdam {
        lr,
        t,
        m: get_table(r, rows, cols)?,
        v: get_table(r, rows, cols)?,
    })
}

fn put_adam(w: &mut ByteWriter, o: &Adam) {
    w.f64(o.lr);
    w.u64(o.t);
    w.f64s(&o.m);
    w.f64s(&o.v);
}

fn get_adam(r: &mut ByteReader, len: usize) -> Result<Adam> {
    let lr = r.f64()?;
    let t = r.u64()?;
    let (m, v) = (r.f64s()?, r.f64s()?);
    if m.len() != len || v.len() != len {
        return Err(Error::Format("optimizer moment length mismatch".into()));
    }
    Ok(Adam { lr, t, m, v })
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let m = &ck.model;
    let mut w = ByteWriter::new();
    w.bytes(MAGIC);
    w.u16(CHECKPOINT_VERSION);
    put_config(&mut w, m.f.config());
    put_config(&mut w, m.g.config());
    w.u64(m.shapes() as u64);
    w.f64s(&m.f.to_flat());
    w.f64s(&m.g.to_flat());
    put_table(&mut w, &m.z_c);
    put_table(&mut w, &m.z_b);
    match &ck.optimizer {
        None => w.u8(0),
        Some(o) => {
            w.u8(1);
            put_adam(&mut w, &o.theta);
            put_adam(&mut w, &o.phi);
            put_row_adam(&mut w, &o.z_c);
            put_row_adam(&mut w, &o.z_b);
        }
    }
    w.bytes(&ck.config_hash);
    let mut bytes = w.into_inner();
    let digest = Sha256::digest(&bytes);
    bytes.extend_from_slice(&digest);
    bytes
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 2 + 32 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a DMCK checkpoint".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum);
    }
    let mut r = ByteReader::new(body);
    r.take(4)?;
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let fc = get_config(&mut r)?;
    let gc = get_config(&mut r)?;
    let shapes = r.u64()? as usize;
    let mut f = Mlp::zeros(fc)?;
    f.set_flat(&r.f64s()?)?;
    let mut g = Mlp::zeros(gc)?;
    g.set_flat(&r.f64s()?)?;
    let (p, q) = (fc.latent_dim(), gc.latent_dim());
    let z_c = get_table(&mut r, shapes, p)?;
    let z_b = get_table(&mut r, shapes, q)?;
    let optimizer = match r.u8()? {
        0 => None,
        1 => Some(OptimizerState {
            theta: get_adam(&mut r, fc.param_count())?,
            phi: get_adam(&mut r, gc.param_count())?,
            z_c: get_row_adam(&mut r, shapes, p)?,
            z_b: get_row_adam(&mut r, shapes, q)?,
        }),
        other => return Err(Error::Format(format!("bad optimizer flag {other}"))),
    };
    let config_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
    }
    let model = AutodecoderModel { f, g, z_c, z_b };
    model.validate()?;
    Ok(Checkpoint {
        model,
        optimizer,
        config_hash,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path, &encode_checkpoint(ck))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}

/// Loads a checkpoint and insists on the given latent sizes.
pub fn load_checkpoint_expecting(path: impl AsRef<Path>, p: usize, q: usize) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    for (what, expected, found) in [
        ("complete latent size", p, ck.model.p()),
        ("break latent size", q, ck.model.q()),
    ] {
        if expected != found {
            return Err(Error::DimensionMismatch {
                what,
                expected,
                found,
            });
        }
    }
    Ok(ck)
}
