//! Binary artifacts: embeddings, denoiser checkpoints and latents.
//!
//! Every file starts with an 8-byte magic string and a little-endian `u32`
//! format version.

use std::path::Path;

use posedance_core::backend::{MlpArchitecture, MlpDenoiser};
use posedance_core::inversion::{EmbeddingMode, TimestepEmbeddings};
use posedance_core::{Latent, Tensor};

use crate::error::{Error, Result};

pub const EMBEDDINGS_MAGIC: &[u8; 8] = b"PDEMBED\0";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PDCKPT\0\0";
pub const LATENT_MAGIC: &[u8; 8] = b"PDLATENT";
pub const FORMAT_VERSION: u32 = 1;

/// Magic, version, `T`, embedding dimension and the mode byte.
pub const EMBEDDINGS_HEADER_LEN: usize = 8 + 4 + 4 + 4 + 1;

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(path: &'a Path, bytes: &'a [u8], magic: &[u8; 8]) -> Result<Self> {
        let mut r = Reader { path, bytes, pos: 0 };
        if r.take(8)? != magic {
            return Err(Error::format(path, "bad magic"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::format(path, format!("unsupported format version {version}")));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.path, "truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(4).ok_or_else(|| Error::format(self.path, "length overflow"))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| Error::format(self.path, "length overflow"))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(self.path, "trailing bytes"));
        }
        Ok(())
    }
}

fn header(magic: &[u8; 8]) -> Vec<u8> {
    let mut out = magic.to_vec();
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out
}

fn put_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(Error::io(path))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(Error::io(path))
}

/// Rounds every entry to the nearest `f32`, the precision stored on disk.
pub fn round_embeddings(e: &mut TimestepEmbeddings) {
    for v in e.unconditional.iter_mut().chain(e.conditional.iter_mut()) {
        v.iter_mut().for_each(|x| *x = *x as f32 as f64);
    }
}

pub fn encode_embeddings(e: &TimestepEmbeddings) -> Vec<u8> {
    let mut out = header(EMBEDDINGS_MAGIC);
    out.extend_from_slice(&(e.num_steps() as u32).to_le_bytes());
    out.extend_from_slice(&(e.embedding_dim as u32).to_le_bytes());
    out.push(match e.mode {
        EmbeddingMode::NullOnly => 0,
        EmbeddingMode::Generalizable => 1,
    });
    for v in &e.unconditional {
        put_f32s(&mut out, v);
    }
    for v in &e.conditional {
        put_f32s(&mut out, v);
    }
    out
}

pub fn decode_embeddings(path: &Path, bytes: &[u8]) -> Result<TimestepEmbeddings> {
    let mut r = Reader::new(path, bytes, EMBEDDINGS_MAGIC)?;
    let steps = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let mode = match r.u8()? {
        0 => EmbeddingMode::NullOnly,
        1 => EmbeddingMode::Generalizable,
        m => return Err(Error::format(path, format!("unknown embedding mode {m}"))),
    };
    let unconditional = (0..steps).map(|_| r.f32s(dim)).collect::<Result<Vec<_>>>()?;
    let conditional = (0..steps).map(|_| r.f32s(dim)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    let e = TimestepEmbeddings {
        unconditional,
        conditional,
        embedding_dim: dim,
        mode,
    };
    e.validate().map_err(|err| Error::format(path, err))?;
    Ok(e)
}

pub fn write_embeddings(path: &Path, e: &TimestepEmbeddings) -> Result<()> {
    write(path, &encode_embeddings(e))
}

pub fn read_embeddings(path: &Path) -> Result<TimestepEmbeddings> {
    decode_embeddings(path, &read(path)?)
}

fn put_shape(out: &mut Vec<u8>, s: [usize; 3]) {
    for d in s {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
}

fn get_shape(r: &mut Reader<'_>) -> Result<[usize; 3]> {
    Ok([r.u32()? as usize, r.u32()? as usize, r.u32()? as usize])
}

/// Architecture descriptor, parameter count and `f32` parameters. Training
/// keeps parameters on the `f32` grid, so the round trip is exact.
pub fn encode_checkpoint(net: &MlpDenoiser) -> Vec<u8> {
    let a = net.architecture();
    let mut out = header(CHECKPOINT_MAGIC);
    put_shape(&mut out, a.latent_shape);
    match a.control_shape {
        Some(s) => {
            out.push(1);
            put_shape(&mut out, s);
        }
        None => {
            out.push(0);
            put_shape(&mut out, [0; 3]);
        }
    }
    for d in [a.embedding_dim, a.hidden, a.time_features] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(net.params().len() as u64).to_le_bytes());
    put_f32s(&mut out, net.params());
    out
}

pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> Result<MlpDenoiser> {
    let mut r = Reader::new(path, bytes, CHECKPOINT_MAGIC)?;
    let latent_shape = get_shape(&mut r)?;
    let has_control = r.u8()?;
    let control = get_shape(&mut r)?;
    let arch = MlpArchitecture {
        latent_shape,
        control_shape: (has_control == 1).then_some(control),
        embedding_dim: r.u32()? as usize,
        hidden: r.u32()? as usize,
        time_features: r.u32()? as usize,
    };
    let count = r.u64()? as usize;
    let params = r.f32s(count)?;
    r.finish()?;
    MlpDenoiser::from_params(arch, params).map_err(|e| Error::format(path, e))
}

pub fn write_checkpoint(path: &Path, net: &MlpDenoiser) -> Result<()> {
    write(path, &encode_checkpoint(net))
}

pub fn read_checkpoint(path: &Path) -> Result<MlpDenoiser> {
    decode_checkpoint(path, &read(path)?)
}

/// Shape and `f64` values, so inversion endpoints reload bit-exactly.
pub fn write_latent(path: &Path, z: &Latent) -> Result<()> {
    let mut out = header(LATENT_MAGIC);
    put_shape(&mut out, z.shape());
    for v in z.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    write(path, &out)
}

pub fn read_latent(path: &Path) -> Result<Latent> {
    let bytes = read(path)?;
    let mut r = Reader::new(path, &bytes, LATENT_MAGIC)?;
    let shape = get_shape(&mut r)?;
    let data = r.f64s(shape.iter().product())?;
    r.finish()?;
    Tensor::from_vec(shape, data).map_err(|e| Error::format(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use posedance_core::backend::{train_toy_denoiser, TrainingConfig, TrainingExample};
    use posedance_core::{NoiseSchedule, ScheduleProfile};
    use proptest::prelude::*;

    fn embeddings(steps: usize, dim: usize, seed: u64) -> TimestepEmbeddings {
        let v = |t: usize, k: u64| (0..dim).map(|i| (((t * 31 + i * 7) as u64 ^ seed ^ k) % 97) as f64 / 13.0 - 3.0).collect::<Vec<_>>();
        TimestepEmbeddings {
            unconditional: (0..steps).map(|t| v(t, 1)).collect(),
            conditional: (0..steps).map(|t| v(t, 2)).collect(),
            embedding_dim: dim,
            mode: EmbeddingMode::Generalizable,
        }
    }

    proptest! {
        #[test]
        fn embeddings_round_trip_and_stay_parameter_free(steps in 1usize..60, dim in 1usize..40, seed in 0u64..1000) {
            let mut e = embeddings(steps, dim, seed);
            round_embeddings(&mut e);
            let bytes = encode_embeddings(&e);
            prop_assert_eq!(bytes.len(), EMBEDDINGS_HEADER_LEN + steps * 2 * dim * 4);
            prop_assert_eq!(decode_embeddings(Path::new("e.bin"), &bytes).unwrap(), e);
        }
    }

    #[test]
    fn corrupt_embeddings_are_rejected() {
        let e = embeddings(3, 4, 0);
        let bytes = encode_embeddings(&e);
        let p = Path::new("e.bin");
        assert!(decode_embeddings(p, &bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_embeddings(p, &bad).unwrap_err().to_string().contains("magic"));
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_embeddings(p, &extra).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let s = NoiseSchedule::new(10, ScheduleProfile::LinearToy).unwrap();
        let data = vec![TrainingExample {
            latent: Tensor::filled([1, 2, 2], 0.3),
            embedding: vec![0.5, -0.5],
            control: Some(posedance_core::backend::ControlMap::zeros([1, 2, 2])),
        }];
        let cfg = TrainingConfig {
            steps: 5,
            hidden: 4,
            time_features: 2,
            ..Default::default()
        };
        let (net, _) = train_toy_denoiser(&data, &s, &cfg).unwrap();
        let bytes = encode_checkpoint(&net);
        assert_eq!(decode_checkpoint(Path::new("c.bin"), &bytes).unwrap(), net);
    }

    #[test]
    fn latent_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.bin");
        let z = Tensor::from_vec([2, 1, 3], vec![0.1, -1e-300, 3.5, f64::MIN_POSITIVE, 7.0, -0.0]).unwrap();
        write_latent(&p, &z).unwrap();
        assert_eq!(read_latent(&p).unwrap(), z);
    }
}
