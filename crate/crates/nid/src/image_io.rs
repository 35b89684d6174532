//! Binary PGM (P5) and PPM (P6) images with 8-bit samples.

use std::path::Path;

use nid_core::data::{quantize, Image};

use crate::error::{IoError, Result};

/// Encodes a 1- or 3-channel image; values are quantized with
/// round-half-up after clamping to `[0, 1]`.
pub fn encode_pnm(image: &Image) -> Result<Vec<u8>> {
    let magic = match image.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(IoError::format("image", format!("{c} channels; PNM holds 1 or 3"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.data.iter().map(|&v| quantize(v)));
    Ok(out)
}

fn skip_space_and_comments(bytes: &[u8], pos: &mut usize) {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            return;
        }
    }
}

fn header_number(bytes: &[u8], pos: &mut usize, name: &str) -> Result<usize> {
    skip_space_and_comments(bytes, pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| IoError::format("PNM header", format!("missing or invalid {name}")))
}

/// Decodes P5/P6 data with maxval 255 into an image with values `b / 255`.
pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(IoError::format("PNM header", "expected P5 or P6 magic")),
    };
    let mut pos = 2;
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(IoError::format("PNM header", format!("maxval {maxval}; only 255 is supported")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(IoError::format("PNM header", "no separator before payload")),
    }
    let expected = width * height * channels;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(IoError::Truncated {
            what: "PNM payload",
            expected,
            found: payload.len(),
        });
    }
    let data = payload[..expected].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Image::new(width, height, channels, data)?)
}

pub fn write_pnm(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pnm(image)?).map_err(|e| IoError::file(path, e))
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    decode_pnm(&std::fs::read(path).map_err(|e| IoError::file(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_maps_to_128() {
        let img = Image::filled(2, 1, 1, 0.5);
        let bytes = encode_pnm(&img).unwrap();
        assert_eq!(&bytes[bytes.len() - 2..], &[128, 128]);
    }

    #[test]
    fn black_and_white_payloads() {
        for (v, b) in [(0.0, 0u8), (1.0, 255u8)] {
            let bytes = encode_pnm(&Image::filled(3, 2, 3, v)).unwrap();
            assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
            assert!(bytes[11..].iter().all(|&x| x == b));
        }
    }

    #[test]
    fn round_trip_is_exact_on_quantized_values() {
        let img = Image::new(2, 2, 1, vec![0.0, 0.2, 0.61, 1.0]).unwrap().quantized();
        let back = decode_pnm(&encode_pnm(&img).unwrap()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn comments_and_errors() {
        let img = decode_pnm(b"P5 # c\n2 1\n255\n\x00\xff").unwrap();
        assert_eq!(img.data, vec![0.0, 1.0]);
        assert!(matches!(decode_pnm(b"P5\n2 2\n255\n\x00"), Err(IoError::Truncated { .. })));
        assert!(decode_pnm(b"P4\n1 1\n255\n\x00").is_err());
        assert!(decode_pnm(b"P5\n1 1\n65535\n\x00\x00").is_err());
    }
}
