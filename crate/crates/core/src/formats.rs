//! Binary dataset (`RVB1`) and checkpoint (`RVBM`) files.
//!
//! All integers and floats are little-endian. Both files end with a CRC32
//! (IEEE) of every byte between the 6-byte magic/version prefix and the CRC
//! itself.
//!
//! `RVB1` dataset, version 1:
//!
//! ```text
//! "RVB1"  version:u16
//! N:u32  T:u16  A:u16  C:u16
//! norm mean[A]:f64  norm std[A]:f64
//! conditions[N*C]:f64
//! trajectories[N*T*A]:f64          (raw units, time-major per sample)
//! crc32:u32
//! ```
//!
//! `RVBM` checkpoint, version 1:
//!
//! ```text
//! "RVBM"  version:u16
//! provenance_len:u32  provenance:[u8]   (UTF-8 JSON)
//! kind:u8 (0 bridge, 1 regression)
//! T:u16  A:u16  C:u16  activation:u8 (0 tanh, 1 gelu)  dropout:f64
//! anchor_depth:u16    anchor_widths[depth]:u32
//! velocity_depth:u16  velocity_widths[depth]:u32
//! norm mean[A]:f64  norm std[A]:f64
//! tensor_count:u32, then per tensor: rank:u8 dims[rank]:u32 values:f64...
//! has_train_state:u8
//!   step:u64
//!   first moments, then second moments: values:f64 in tensor order
//!   stream states (batch, noise, time, dropout): 4 x u64 each
//!   loss accumulator: total:f64 sem:f64 flow:f64 count:u64
//! crc32:u32
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{Activation, Arch, ModelBundle, ModelKind};
use crate::numerics::{OptimizerState, RngStream, StreamLabel, Tensor};
use crate::synth::{Dataset, NormStats};
use crate::train::{LossAccumulator, TrainStreams};

pub const DATASET_MAGIC: &[u8; 4] = b"RVB1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RVBM";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        self.buf.reserve(vs.len() * 8);
        for v in vs {
            self.f64(*v);
        }
    }
    fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf[6..]);
        self.u32(crc);
        self.buf
    }
}

fn dim16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::Invalid(format!("{what} {v} does not fit in u16")))
}

fn dim32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Invalid(format!("{what} {v} does not fit in u32")))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic, version and CRC; returns a reader positioned after the
    /// version field and limited to the payload.
    fn open(bytes: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        if bytes.len() < 10 || &bytes[..4] != magic {
            return Err(Error::Format(format!(
                "missing {} magic",
                String::from_utf8_lossy(magic)
            )));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let end = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[end..].try_into().expect("4 bytes"));
        if crc32fast::hash(&bytes[6..end]) != stored {
            return Err(Error::Format("CRC mismatch".into()));
        }
        Ok(Self {
            buf: &bytes[..end],
            pos: 6,
        })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2")))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8")))
            .collect())
    }
    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format("trailing bytes before CRC".into()));
        }
        Ok(())
    }
}

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let mut w = Writer::default();
    w.bytes(DATASET_MAGIC);
    w.u16(FORMAT_VERSION);
    w.u32(dim32(ds.len(), "sample count")?);
    w.u16(dim16(ds.horizon, "horizon")?);
    w.u16(dim16(ds.action_dim, "action_dim")?);
    w.u16(dim16(ds.cond_width, "cond_width")?);
    w.f64s(&ds.norm.mean);
    w.f64s(&ds.norm.std);
    w.f64s(&ds.conditions);
    w.f64s(&ds.trajectories);
    Ok(w.finish())
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::open(bytes, DATASET_MAGIC)?;
    let n = r.u32()? as usize;
    let t = r.u16()? as usize;
    let a = r.u16()? as usize;
    let c = r.u16()? as usize;
    let mean = r.f64s(a)?;
    let std = r.f64s(a)?;
    let conditions = r.f64s(n * c)?;
    let trajectories = r.f64s(n * t * a)?;
    r.done()?;
    let ds = Dataset {
        horizon: t,
        action_dim: a,
        cond_width: c,
        conditions,
        trajectories,
        norm: NormStats { mean, std },
        modes: Vec::new(),
    };
    ds.validate()?;
    Ok(ds)
}

/// Optimizer and stream state saved alongside parameters for resuming.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub opt: OptimizerState,
    pub streams: TrainStreams,
    pub acc: LossAccumulator,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub provenance: String,
    pub bundle: ModelBundle,
    pub train_state: Option<TrainState>,
}

fn write_widths(w: &mut Writer, widths: &[usize]) -> Result<()> {
    w.u16(dim16(widths.len(), "depth")?);
    for &h in widths {
        w.u32(dim32(h, "width")?);
    }
    Ok(())
}

fn read_widths(r: &mut Reader<'_>) -> Result<Vec<usize>> {
    let depth = r.u16()? as usize;
    (0..depth).map(|_| Ok(r.u32()? as usize)).collect()
}

fn write_stream(w: &mut Writer, s: &RngStream) {
    for v in s.state() {
        w.u64(v);
    }
}

fn read_stream(r: &mut Reader<'_>, label: StreamLabel) -> Result<RngStream> {
    let mut st = [0u64; 4];
    for v in &mut st {
        *v = r.u64()?;
    }
    Ok(RngStream::from_state(st, label))
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let b = &ck.bundle;
    b.validate()?;
    let mut w = Writer::default();
    w.bytes(CHECKPOINT_MAGIC);
    w.u16(FORMAT_VERSION);
    w.u32(dim32(ck.provenance.len(), "provenance")?);
    w.bytes(ck.provenance.as_bytes());
    w.u8(match b.kind {
        ModelKind::Bridge => 0,
        ModelKind::Regression => 1,
    });
    w.u16(dim16(b.arch.horizon, "horizon")?);
    w.u16(dim16(b.arch.action_dim, "action_dim")?);
    w.u16(dim16(b.arch.cond_width, "cond_width")?);
    w.u8(match b.arch.activation {
        Activation::Tanh => 0,
        Activation::Gelu => 1,
    });
    w.f64(b.arch.dropout);
    write_widths(&mut w, &b.arch.anchor_hidden)?;
    write_widths(&mut w, &b.arch.velocity_hidden)?;
    w.f64s(&b.norm.mean);
    w.f64s(&b.norm.std);
    w.u32(dim32(b.params.len(), "tensor count")?);
    for p in &b.params {
        let rank = u8::try_from(p.shape().len()).map_err(|_| Error::Invalid("tensor rank".into()))?;
        w.u8(rank);
        for &d in p.shape() {
            w.u32(dim32(d, "tensor dim")?);
        }
        w.f64s(p.data());
    }
    match &ck.train_state {
        None => w.u8(0),
        Some(ts) => {
            w.u8(1);
            w.u64(ts.opt.step);
            for m in ts.opt.first_moment.iter().chain(&ts.opt.second_moment) {
                w.f64s(m.data());
            }
            for s in ts.streams.all() {
                write_stream(&mut w, s);
            }
            w.f64(ts.acc.total);
            w.f64(ts.acc.sem);
            w.f64(ts.acc.flow);
            w.u64(ts.acc.count);
        }
    }
    Ok(w.finish())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::open(bytes, CHECKPOINT_MAGIC)?;
    let plen = r.u32()? as usize;
    let provenance = String::from_utf8(r.take(plen)?.to_vec())
        .map_err(|_| Error::Format("provenance is not UTF-8".into()))?;
    let kind = match r.u8()? {
        0 => ModelKind::Bridge,
        1 => ModelKind::Regression,
        k => return Err(Error::Format(format!("unknown model kind {k}"))),
    };
    let horizon = r.u16()? as usize;
    let action_dim = r.u16()? as usize;
    let cond_width = r.u16()? as usize;
    let activation = match r.u8()? {
        0 => Activation::Tanh,
        1 => Activation::Gelu,
        a => return Err(Error::Format(format!("unknown activation {a}"))),
    };
    let dropout = r.f64()?;
    let anchor_hidden = read_widths(&mut r)?;
    let velocity_hidden = read_widths(&mut r)?;
    let mean = r.f64s(action_dim)?;
    let std = r.f64s(action_dim)?;
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = r.u8()? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| Ok(r.u32()? as usize)).collect::<Result<_>>()?;
        let n = shape.iter().product();
        params.push(Tensor::new(shape, r.f64s(n)?)?);
    }
    let bundle = ModelBundle {
        arch: Arch {
            horizon,
            action_dim,
            cond_width,
            anchor_hidden,
            velocity_hidden,
            activation,
            dropout,
        },
        kind,
        norm: NormStats { mean, std },
        params,
    };
    bundle.validate().map_err(|e| Error::Format(e.to_string()))?;
    let train_state = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let read_moments = |r: &mut Reader<'_>| -> Result<Vec<Tensor>> {
                bundle
                    .params
                    .iter()
                    .map(|p| Tensor::new(p.shape().to_vec(), r.f64s(p.numel())?))
                    .collect()
            };
            let first_moment = read_moments(&mut r)?;
            let second_moment = read_moments(&mut r)?;
            let streams = TrainStreams {
                batch: read_stream(&mut r, StreamLabel::Batch)?,
                noise: read_stream(&mut r, StreamLabel::SourceNoise)?,
                time: read_stream(&mut r, StreamLabel::TimeSampling)?,
                dropout: read_stream(&mut r, StreamLabel::Batch)?,
            };
            let acc = LossAccumulator {
                total: r.f64()?,
                sem: r.f64()?,
                flow: r.f64()?,
                count: r.u64()?,
            };
            Some(TrainState {
                opt: OptimizerState {
                    step,
                    first_moment,
                    second_moment,
                },
                streams,
                acc,
            })
        }
        f => return Err(Error::Format(format!("bad train-state flag {f}"))),
    };
    r.done()?;
    Ok(Checkpoint {
        provenance,
        bundle,
        train_state,
    })
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    std::fs::write(path, encode_dataset(ds)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&std::fs::read(path)?)
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ck)?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::init_params;
    use crate::synth::{generate_task, TaskSpec};

    fn small_ds() -> Dataset {
        generate_task(&TaskSpec {
            samples: 20,
            ..TaskSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn dataset_header_layout() {
        let ds = small_ds();
        let bytes = encode_dataset(&ds).unwrap();
        assert_eq!(&bytes[..4], b"RVB1");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 20);
        assert_eq!(u16::from_le_bytes([bytes[10], bytes[11]]), 16);
        assert_eq!(u16::from_le_bytes([bytes[12], bytes[13]]), 2);
        assert_eq!(u16::from_le_bytes([bytes[14], bytes[15]]), 8);
        let expected = 4 + 2 + 10 + 2 * 2 * 8 + 20 * 8 * 8 + 20 * 32 * 8 + 4;
        assert_eq!(bytes.len(), expected);
        let crc = crc32fast::hash(&bytes[6..bytes.len() - 4]);
        assert_eq!(&bytes[bytes.len() - 4..], &crc.to_le_bytes());
    }

    #[test]
    fn dataset_corruption_detected() {
        let mut bytes = encode_dataset(&small_ds()).unwrap();
        bytes[100] ^= 1;
        assert!(decode_dataset(&bytes).unwrap_err().to_string().contains("CRC"));
        bytes[0] = b'X';
        assert!(decode_dataset(&bytes).is_err());
    }

    #[test]
    fn checkpoint_round_trip_with_state() {
        let arch = Arch {
            anchor_hidden: vec![4],
            velocity_hidden: vec![5, 3],
            activation: Activation::Gelu,
            ..Arch::default()
        };
        let mut s = RngStream::new(1, StreamLabel::Init);
        let mut bundle = init_params(&arch, NormStats { mean: vec![0.1, 0.2], std: vec![1.5, 0.5] }, &mut s).unwrap();
        for p in &mut bundle.params {
            *p = s.normal_tensor(p.shape());
        }
        let mut opt = OptimizerState::new(&bundle.params);
        opt.step = 17;
        opt.first_moment[0].data_mut()[0] = 0.25;
        let ck = Checkpoint {
            provenance: "{\"seed\":3}".into(),
            bundle,
            train_state: Some(TrainState {
                opt,
                streams: TrainStreams::new(9),
                acc: LossAccumulator { total: 1.0, sem: 0.5, flow: 0.5, count: 2 },
            }),
        };
        let bytes = encode_checkpoint(&ck).unwrap();
        assert_eq!(&bytes[..4], b"RVBM");
        assert_eq!(decode_checkpoint(&bytes).unwrap(), ck);
    }
}
