use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{LabeledImage, Provenance};
use crate::error::{Error, Result};

/// Read a labeled corpus from `dir`: a `manifest.csv` of `filename,label`
/// rows next to PNG or PPM images. Returns a deterministic seeded
/// `train_frac` / `1 - train_frac` split.
pub fn load_dataset(
    dir: &Path,
    train_frac: f32,
    seed: u64,
) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>)> {
    if !(0.0..=1.0).contains(&train_frac) {
        return Err(Error::Validation(format!(
            "train fraction {train_frac} outside [0, 1]"
        )));
    }
    let manifest = dir.join("manifest.csv");
    let file = File::open(&manifest).map_err(|_| {
        Error::Ingestion(format!(
            "no manifest.csv in {} (expected filename,label rows)",
            dir.display()
        ))
    })?;
    let mut images = Vec::new();
    for (line_no, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&manifest, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line_no == 0 && line.eq_ignore_ascii_case("filename,label") {
            continue;
        }
        let (name, label_text) = line.split_once(',').ok_or_else(|| {
            Error::Ingestion(format!("missing label for {line:?} in manifest.csv"))
        })?;
        let label: f32 = label_text.trim().parse().map_err(|_| {
            Error::Ingestion(format!("unparseable label {label_text:?} for file {name:?}"))
        })?;
        if !(0.0..=3.0).contains(&label) {
            return Err(Error::Validation(format!(
                "label {label} for {name:?} outside the [0, 3] score range"
            )));
        }
        let path = dir.join(name.trim());
        let mut img = read_image(&path)?;
        img.label = label;
        img.provenance = Provenance::Real;
        images.push(img);
    }
    if images.is_empty() {
        return Err(Error::Ingestion(format!(
            "{} holds no labeled images",
            dir.display()
        )));
    }
    let mut order: Vec<usize> = (0..images.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (images.len() as f32 * train_frac).round() as usize;
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(images.len() - n_train);
    for (rank, idx) in order.into_iter().enumerate() {
        if rank < n_train {
            train.push(images[idx].clone());
        } else {
            test.push(images[idx].clone());
        }
    }
    Ok((train, test))
}

/// Write `filename,label` rows.
pub fn write_manifest(dir: &Path, entries: &[(String, f32)]) -> Result<PathBuf> {
    let path = dir.join("manifest.csv");
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "filename,label").map_err(|e| Error::io(&path, e))?;
    for (name, label) in entries {
        writeln!(w, "{name},{label}").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Decode a PNG or binary PPM (P6) image into unit-range RGB. The label is
/// set to 0; callers attach the real one.
pub fn read_image(path: &Path) -> Result<LabeledImage> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "png" => read_png(path),
        "ppm" => read_ppm(path),
        other => Err(Error::Ingestion(format!(
            "unsupported image extension {other:?} for {}",
            path.display()
        ))),
    }
}

/// Encode to PNG or PPM depending on the path extension.
pub fn write_image(img: &LabeledImage, path: &Path) -> Result<()> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "png" => write_png(img, path),
        "ppm" => write_ppm(img, path),
        other => Err(Error::Validation(format!(
            "unsupported image extension {other:?} for {}",
            path.display()
        ))),
    }
}

fn read_png(path: &Path) -> Result<LabeledImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Ingestion(format!(
            "{}: only 8-bit PNGs are supported",
            path.display()
        )));
    }
    let mut pixels = Vec::with_capacity(w * h * 3);
    for i in 0..w * h {
        let base = i * channels;
        let (r, g, b) = match channels {
            1 => (buf[base], buf[base], buf[base]),
            2 => (buf[base], buf[base], buf[base]),
            _ => (buf[base], buf[base + 1], buf[base + 2]),
        };
        pixels.push(r as f32 / 255.0);
        pixels.push(g as f32 / 255.0);
        pixels.push(b as f32 / 255.0);
    }
    LabeledImage::new(pixels, w, h, 0.0, Provenance::Real)
}

fn write_png(img: &LabeledImage, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        img.width as u32,
        img.height as u32,
    );
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
    let bytes: Vec<u8> = img
        .pixels
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))
}

fn read_ppm(path: &Path) -> Result<LabeledImage> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Ingestion(format!("{}: {msg}", path.display()));
    // Header: "P6" <w> <h> <maxval> then a single whitespace byte.
    let mut pos = 0usize;
    let mut next_token = |bytes: &[u8]| -> Result<String> {
        while pos < bytes.len() && (bytes[pos] as char).is_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            while pos < bytes.len() && (bytes[pos] as char).is_whitespace() {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !(bytes[pos] as char).is_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Ingestion("truncated PPM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if next_token(&bytes)? != "P6" {
        return Err(bad("not a binary P6 PPM"));
    }
    let w: usize = next_token(&bytes)?.parse().map_err(|_| bad("bad width"))?;
    let h: usize = next_token(&bytes)?.parse().map_err(|_| bad("bad height"))?;
    let maxval: usize = next_token(&bytes)?.parse().map_err(|_| bad("bad maxval"))?;
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit PPMs are supported"));
    }
    pos += 1; // single whitespace after maxval
    let need = w * h * 3;
    if bytes.len() < pos + need {
        return Err(bad("truncated pixel data"));
    }
    let pixels = bytes[pos..pos + need]
        .iter()
        .map(|&b| b as f32 / maxval as f32)
        .collect();
    LabeledImage::new(pixels, w, h, 0.0, Provenance::Real)
}

fn write_ppm(img: &LabeledImage, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "P6\n{} {}\n255\n", img.width, img.height).map_err(|e| Error::io(path, e))?;
    let bytes: Vec<u8> = img
        .pixels
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;
    use crate::data::SyntheticSpec;

    fn write_corpus(dir: &Path, count: usize) {
        let mut entries = Vec::new();
        for i in 0..count {
            let p = i as f32 / count.max(1) as f32;
            let img = generate_synthetic(&SyntheticSpec::new(16, p, i as u64)).unwrap();
            let name = format!("img{i:03}.png");
            write_image(&img, &dir.join(&name)).unwrap();
            entries.push((name, img.label));
        }
        write_manifest(dir, &entries).unwrap();
    }

    #[test]
    fn split_is_80_20_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), 10);
        let (train, test) = load_dataset(dir.path(), 0.8, 3).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(test.len(), 2);
        let (train2, test2) = load_dataset(dir.path(), 0.8, 3).unwrap();
        for (a, b) in train.iter().zip(&train2) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.pixels, b.pixels);
        }
        assert_eq!(test[0].label, test2[0].label);
        // A different seed reshuffles.
        let (train3, _) = load_dataset(dir.path(), 0.8, 4).unwrap();
        assert!(train.iter().zip(&train3).any(|(a, b)| a.pixels != b.pixels));
    }

    #[test]
    fn empty_directory_is_ingestion_error() {
        let dir = tempfile::tempdir().unwrap();
        match load_dataset(dir.path(), 0.8, 0) {
            Err(Error::Ingestion(_)) => {}
            other => panic!("expected ingestion error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn missing_label_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("manifest.csv"), "orphan.png\n").unwrap();
        let err = load_dataset(dir.path(), 0.8, 0).unwrap_err();
        assert!(err.to_string().contains("orphan.png"), "{err}");
    }

    #[test]
    fn out_of_range_label_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let img = generate_synthetic(&SyntheticSpec::new(16, 0.0, 0)).unwrap();
        write_image(&img, &dir.path().join("a.png")).unwrap();
        std::fs::write(dir.path().join("manifest.csv"), "a.png,4.5\n").unwrap();
        match load_dataset(dir.path(), 0.8, 0) {
            Err(Error::Validation(msg)) => assert!(msg.contains("4.5"), "{msg}"),
            other => panic!("expected validation error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn png_roundtrip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let img = generate_synthetic(&SyntheticSpec::new(24, 0.5, 8)).unwrap();
        let path = dir.path().join("x.png");
        write_image(&img, &path).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!((back.width, back.height), (24, 24));
        for (a, b) in img.pixels.iter().zip(&back.pixels) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn ppm_roundtrip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let img = generate_synthetic(&SyntheticSpec::new(20, 0.3, 2)).unwrap();
        let path = dir.path().join("x.ppm");
        write_image(&img, &path).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!((back.width, back.height), (20, 20));
        for (a, b) in img.pixels.iter().zip(&back.pixels) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}
