//! Checkpoint container: magic `QSWN`, a `u32` format version, a leading
//! UTF-8 key=value config block (u32 byte length prefix), then one record
//! per parameter — name length `u16`, UTF-8 name, rank `u8`, dims as
//! `u32`s, and the raw values as little-endian `f32`s. Round trips are
//! bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{QSwinConfig, QSwinModel, ShiftPolicy};

const MAGIC: &[u8; 4] = b"QSWN";
const VERSION: u32 = 1;

pub fn save(model: &QSwinModel, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e: std::io::Error| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    let cfg_text = model.cfg.to_kv();
    w.write_all(&(cfg_text.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(cfg_text.as_bytes()).map_err(io)?;
    for (name, tensor) in model.store().iter_named() {
        w.write_all(&(name.len() as u16).to_le_bytes()).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        let shape = tensor.shape();
        w.write_all(&[shape.len() as u8]).map_err(io)?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
        }
        for v in tensor.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load(path: &Path) -> Result<QSwinModel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |msg: &str| Error::Validation(format!("{}: {msg}", path.display()));

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, path)?;
    if &magic != MAGIC {
        return Err(bad("not a QSWN checkpoint (bad magic)"));
    }
    let version = read_u32(&mut r, path)?;
    if version != VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let cfg_len = read_u32(&mut r, path)? as usize;
    let mut cfg_bytes = vec![0u8; cfg_len];
    read_exact(&mut r, &mut cfg_bytes, path)?;
    let cfg_text =
        String::from_utf8(cfg_bytes).map_err(|_| bad("config block is not valid UTF-8"))?;
    let cfg = parse_config(&cfg_text)?;
    let mut model = QSwinModel::new(cfg, 0)?;

    let mut seen = 0usize;
    loop {
        let mut len_buf = [0u8; 2];
        match r.read(&mut len_buf) {
            Ok(0) => break,
            Ok(1) => {
                read_exact(&mut r, &mut len_buf[1..], path)?;
            }
            Ok(_) => {}
            Err(e) => return Err(Error::io(path, e)),
        }
        let name_len = u16::from_le_bytes(len_buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes, path)?;
        let name =
            String::from_utf8(name_bytes).map_err(|_| bad("parameter name is not UTF-8"))?;
        let mut rank = [0u8; 1];
        read_exact(&mut r, &mut rank, path)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(read_u32(&mut r, path)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0f32; numel];
        let mut buf = [0u8; 4];
        for v in data.iter_mut() {
            read_exact(&mut r, &mut buf, path)?;
            *v = f32::from_le_bytes(buf);
        }
        let id = model
            .store()
            .find(&name)
            .ok_or_else(|| bad(&format!("unknown parameter {name:?}")))?;
        if model.store().get(id).shape() != shape.as_slice() {
            return Err(bad(&format!(
                "parameter {name:?} has shape {:?}, expected {:?}",
                shape,
                model.store().get(id).shape()
            )));
        }
        model.store_mut().set_data(id, data);
        seen += 1;
    }
    if seen != model.store().len() {
        return Err(bad(&format!(
            "checkpoint holds {seen} parameters, model needs {}",
            model.store().len()
        )));
    }
    Ok(model)
}

fn parse_config(text: &str) -> Result<QSwinConfig> {
    let mut cfg = QSwinConfig {
        input_resolution: 0,
        patch_size: 1,
        embed_dim: 1,
        depths: vec![],
        num_heads: vec![],
        window_size: 1,
        shift_policy: ShiftPolicy::HalfWindow,
        feature_dim: 1,
        mlp_ratio: 1,
        quadratic: true,
        rel_pos_bias: false,
        layer_norm_eps: 1e-5,
    };
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Validation(format!("bad config line {line:?}")))?;
        let key = key
            .strip_prefix("model.")
            .ok_or_else(|| Error::Validation(format!("unexpected config key {key:?}")))?;
        cfg.set_kv(key, value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::io(path, e))
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, path)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn save_load_forward_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.qswn");
        let model = QSwinModel::new(QSwinConfig::tiny(), 31).unwrap();
        save(&model, &path).unwrap();
        let loaded = load(&path).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data: Vec<f32> = (0..32 * 32 * 3).map(|_| rng.random_range(0.0..1.0)).collect();
        let img = Tensor::new(data, &[32, 32, 3]).unwrap();
        let tape = Tape::no_grad();
        let (f1, s1) = model.forward(&tape, &img).unwrap();
        let (f2, s2) = loaded.forward(&tape, &img).unwrap();
        assert_eq!(s1.item().to_bits(), s2.item().to_bits());
        assert_eq!(
            f1.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            f2.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.qswn");
        let model = QSwinModel::new(QSwinConfig::tiny(), 31).unwrap();
        save(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load(&path).is_err());
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.qswn");
        std::fs::write(&path, b"NOPE0000").unwrap();
        match load(&path) {
            Err(Error::Validation(msg)) => assert!(msg.contains("magic"), "{msg}"),
            Err(other) => panic!("expected validation error, got {other:?}"),
            Ok(_) => panic!("bogus file loaded"),
        }
    }
}
