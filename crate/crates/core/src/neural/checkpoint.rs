//! Binary checkpoint, little-endian:
//!
//! ```text
//! "NNO1" | u32 version | u32 n, m, N, d_c, L
//! f64 in_mean[n+m+1], in_std[n+m+1], out_mean[n], out_std[n]
//! f64 params (lift_W, lift_b, (W_l, b_l, K_l)…, proj_W, proj_b; row-major)
//! u32 CRC32 of every preceding byte
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{NnoConfig, NnoError, NnoModel, Normalization};

const MAGIC: &[u8; 4] = b"NNO1";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 5 * 4;

pub fn write_model(model: &NnoModel, mut out: impl Write) -> Result<(), NnoError> {
    let cfg = model.config();
    let norm = model.normalization();
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * (model.param_count() + 2 * cfg.input_dim() + 2 * cfg.n) + 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [cfg.n, cfg.m, cfg.steps, cfg.channels, cfg.layers] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for arr in [&norm.in_mean, &norm.in_std, &norm.out_mean, &norm.out_std] {
        arr.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
    }
    model.params().iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_model(mut input: impl Read) -> Result<NnoModel, NnoError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
        return Err(NnoError::VersionMismatch(format!("magic {magic:?}")));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != VERSION {
        return Err(NnoError::VersionMismatch(format!("version {version}")));
    }
    if bytes.len() < HEADER_LEN {
        return Err(NnoError::ShapeHeaderInconsistency(format!("{} bytes is shorter than the header", bytes.len())));
    }
    let f = |k: usize| u32_at(8 + 4 * k) as usize;
    let cfg = NnoConfig::new(f(0), f(1), f(2), f(3), f(4));
    cfg.validate().map_err(|e| NnoError::ShapeHeaderInconsistency(e.to_string()))?;
    let floats = 2 * cfg.input_dim() + 2 * cfg.n + cfg.param_count();
    let expected = HEADER_LEN + 8 * floats + 4;
    if bytes.len() != expected {
        return Err(NnoError::ShapeHeaderInconsistency(format!(
            "header implies {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let body = expected - 4;
    let stored = u32_at(body);
    let computed = crc32fast::hash(&bytes[..body]);
    if stored != computed {
        return Err(NnoError::Corrupted { stored, computed });
    }
    let mut values = bytes[HEADER_LEN..body]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut take = |k: usize| values.by_ref().take(k).collect::<Vec<f64>>();
    let norm = Normalization {
        in_mean: take(cfg.input_dim()),
        in_std: take(cfg.input_dim()),
        out_mean: take(cfg.n),
        out_std: take(cfg.n),
    };
    let params = take(cfg.param_count());
    NnoModel::from_parts(cfg, params, norm)
}

pub fn save_model(model: &NnoModel, path: impl AsRef<Path>) -> Result<(), NnoError> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<NnoModel, NnoError> {
    read_model(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{encode_input, nno_forward};
    use crate::predictor::ControlHistory;

    fn model() -> NnoModel {
        let cfg = NnoConfig::new(2, 1, 4, 6, 2);
        let mut m = NnoModel::random(cfg, 17).unwrap();
        m.set_normalization(Normalization {
            in_mean: vec![0.1, 0.2, 0.3, 0.5],
            in_std: vec![1.5, 2.0, 0.7, 0.3],
            out_mean: vec![-0.2, 0.4],
            out_std: vec![0.9, 1.1],
        })
        .unwrap();
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.nno");
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, m);
        let hist = ControlHistory::from_fn(0.4, 0.1, 1, 0.0, |t| vec![t.sin()]).unwrap();
        let z = encode_input(&[0.3, -0.1], &hist);
        let (a, b) = (nno_forward(&m, &z).unwrap(), nno_forward(&back, &z).unwrap());
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn truncated_file_is_shape_error() {
        let mut buf = Vec::new();
        write_model(&model(), &mut buf).unwrap();
        buf.truncate(buf.len() - 20);
        assert!(matches!(read_model(&buf[..]), Err(NnoError::ShapeHeaderInconsistency(_))));
        assert!(matches!(read_model(&buf[..12]), Err(NnoError::ShapeHeaderInconsistency(_))));
    }

    #[test]
    fn wrong_magic_is_version_error() {
        let mut buf = Vec::new();
        write_model(&model(), &mut buf).unwrap();
        buf[0] = b'X';
        assert!(matches!(read_model(&buf[..]), Err(NnoError::VersionMismatch(_))));
        let mut buf2 = Vec::new();
        write_model(&model(), &mut buf2).unwrap();
        buf2[4] = 9;
        assert!(matches!(read_model(&buf2[..]), Err(NnoError::VersionMismatch(_))));
    }

    #[test]
    fn flipped_payload_byte_is_detected() {
        let mut buf = Vec::new();
        write_model(&model(), &mut buf).unwrap();
        let mid = buf.len() / 2;
        buf[mid] ^= 0x40;
        assert!(matches!(read_model(&buf[..]), Err(NnoError::Corrupted { .. })));
    }
}
