//! Checkpoint file: magic `PCM1`, header `(r, P, H, w, Q, mode)` as
//! little-endian `u64` (mode 0 = point, 1 = quantile), then every parameter
//! tensor in declared order as little-endian `f64`.

use super::params::{Mode, ModelShape, Params};
use crate::error::{Error, Result};
use crate::scalar::Real;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PCM1";
const HEADER: usize = 4 + 6 * 8;

pub fn write_checkpoint<T: Real>(params: &Params<T>, path: &Path) -> Result<()> {
    let s = params.shape();
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    let mode = match s.mode() {
        Mode::Point => 0u64,
        Mode::Quantile => 1,
    };
    for v in [s.latent as u64, s.input as u64, s.hidden as u64, s.window as u64, s.n_levels() as u64, mode] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in params.as_slice() {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint; `levels` supplies the quantile grid (must match `Q`).
pub fn read_checkpoint<T: Real>(path: &Path, levels: &[f64]) -> Result<Params<T>> {
    let buf = fs::read(path)?;
    let bad = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    if buf.len() < HEADER || &buf[..4] != CHECKPOINT_MAGIC {
        return Err(bad("missing PCM1 header".into()));
    }
    let field = |k: usize| u64::from_le_bytes(buf[4 + 8 * k..12 + 8 * k].try_into().unwrap()) as usize;
    let (r, p, h, w, q, mode) = (field(0), field(1), field(2), field(3), field(4), field(5));
    let shape = match (mode, q) {
        (0, 0) => ModelShape::point(p, r, h, w),
        (1, q) if q == levels.len() && q > 0 => ModelShape::quantile(p, r, h, w, levels.to_vec()),
        (1, q) => return Err(bad(format!("checkpoint has {q} quantile levels, {} supplied", levels.len()))),
        _ => return Err(bad(format!("unknown mode {mode} with Q={q}"))),
    };
    shape.validate()?;
    let n = shape.layout().total();
    if buf.len() != HEADER + 8 * n {
        return Err(bad(format!("expected {n} parameters, payload has {} bytes", buf.len() - HEADER)));
    }
    let data = buf[HEADER..].chunks_exact(8).map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap()))).collect();
    Params::from_vec(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let d = tempfile::tempdir().unwrap();
        let f = d.path().join("m.pcm");
        let levels = vec![0.1, 0.5, 0.9];
        let p = Params::<f64>::init(ModelShape::quantile(4, 2, 3, 5, levels.clone()), 3);
        write_checkpoint(&p, &f).unwrap();
        let back: Params<f64> = read_checkpoint(&f, &levels).unwrap();
        assert_eq!(back, p);
        let bytes = fs::read(&f).unwrap();
        assert_eq!(&bytes[..4], b"PCM1");
        assert_eq!(u64::from_le_bytes(bytes[4..12].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[36..44].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[44..52].try_into().unwrap()), 1);
    }

    #[test]
    fn level_count_mismatch_is_rejected() {
        let d = tempfile::tempdir().unwrap();
        let f = d.path().join("m.pcm");
        let p = Params::<f64>::init(ModelShape::quantile(4, 2, 3, 5, vec![0.1, 0.9]), 3);
        write_checkpoint(&p, &f).unwrap();
        assert!(read_checkpoint::<f64>(&f, &[0.5]).is_err());
    }
}
