//! Binary PPM (P6) codec, maxval up to 255.

use std::fs;
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| bad(path, e.to_string()))?;
    decode_ppm(&bytes).map_err(|reason| bad(path, reason))
}

/// Decodes P6 bytes. Samples are scaled to `[0, 1]` by `maxval`.
pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 0usize;
    let mut header = [0usize; 3];

    let magic = bytes.get(..2).ok_or("file too short")?;
    if magic != b"P6" {
        return Err(format!("not a binary PPM (magic {:?})", String::from_utf8_lossy(magic)));
    }
    pos += 2;

    for slot in header.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(format!("expected a number in header at byte {start}"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).map_err(|e| e.to_string())?;
        *slot = text.parse().map_err(|e| format!("header value {text:?}: {e}"))?;
    }
    // exactly one whitespace byte separates header and raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err("missing whitespace after maxval".into()),
    }

    let [width, height, maxval] = header;
    if width == 0 || height == 0 {
        return Err(format!("degenerate size {width}x{height}"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval} (1..=255)"));
    }
    let n = width * height;
    let raster = bytes
        .get(pos..pos + 3 * n)
        .ok_or_else(|| format!("raster truncated: need {} bytes, have {}", 3 * n, bytes.len() - pos))?;
    let scale = 1.0 / maxval as f32;
    let mut data = vec![0.0f32; 3 * n];
    for (i, px) in raster.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * n + i] = px[c] as f32 * scale;
        }
    }
    Ok(Image::new(width, height, data).expect("sized above"))
}

/// Encodes as P6 with maxval 255, rounding and clamping to `[0, 1]`.
pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let (w, h) = (img.width(), img.height());
    let n = w * h;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * n);
    let data = img.data();
    for i in 0..n {
        for c in 0..3 {
            let v = (data[c * n + i].clamp(0.0, 1.0) * 255.0).round() as u8;
            out.push(v);
        }
    }
    out
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, encode_ppm(img))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_with_comment() {
        let mut bytes = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 128, 255]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!((img.width(), img.height()), (2, 1));
        assert_eq!(img.data(), &[1.0, 0.0, 0.0, 128.0 / 255.0, 0.0, 1.0]);
    }

    #[test]
    fn byte_exact_roundtrip() {
        let mut bytes = b"P6\n3 2\n255\n".to_vec();
        bytes.extend((0..18u8).map(|v| v * 13));
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(encode_ppm(&img), bytes);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(decode_ppm(b"P3\n1 1\n255\n000").is_err());
        assert!(decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\n\0\0\0").is_err());
        assert!(decode_ppm(b"P6\n0 2\n255\n").is_err());
    }
}
