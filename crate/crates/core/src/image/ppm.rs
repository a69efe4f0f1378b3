//! Binary PPM (P6, maxval 255) reading and writing.
//!
//! Writing always emits the canonical header `P6\n<w> <h>\n255\n`, so a file
//! with that header survives a read/write cycle byte for byte.

use std::fs;
use std::path::Path;

use super::{quantize_value, Image, CHANNELS};
use crate::error::{Error, Result};

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes)
}

pub fn write_ppm(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(image)).map_err(|e| Error::io(path, e))
}

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let (h, w) = image.dims();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(h * w * CHANNELS);
    let plane = image.plane_len();
    let data = image.data();
    for p in 0..plane {
        for c in 0..CHANNELS {
            out.push((quantize_value(data[c * plane + p]) * 255.0).round() as u8);
        }
    }
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut cursor = HeaderCursor { bytes, pos: 0 };
    let magic = cursor.token()?;
    if magic != b"P6" {
        return Err(Error::format(
            "ppm",
            format!("expected magic P6, found {:?}", String::from_utf8_lossy(magic)),
        ));
    }
    let width = cursor.number()?;
    let height = cursor.number()?;
    let maxval = cursor.number()?;
    if maxval != 255 {
        return Err(Error::format(
            "ppm",
            format!("only maxval 255 is supported, found {maxval}"),
        ));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(cursor.pos) {
        Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
        _ => return Err(Error::format("ppm", "missing whitespace after maxval")),
    }
    if width == 0 || height == 0 {
        return Err(Error::format("ppm", "zero image dimension"));
    }
    let plane = width * height;
    let payload = &bytes[cursor.pos..];
    if payload.len() < plane * CHANNELS {
        return Err(Error::format(
            "ppm",
            format!(
                "truncated payload: {} bytes, expected {}",
                payload.len(),
                plane * CHANNELS
            ),
        ));
    }
    let mut data = vec![0.0; plane * CHANNELS];
    for (p, px) in payload.chunks_exact(CHANNELS).take(plane).enumerate() {
        for c in 0..CHANNELS {
            data[c * plane + p] = f64::from(px[c]) / 255.0;
        }
    }
    Image::new(height, width, data)
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn token(&mut self) -> Result<&'a [u8]> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(Error::format("ppm", "unexpected end of header")),
            }
        }
        let start = self.pos;
        while let Some(b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || *b == b'#' {
                break;
            }
            self.pos += 1;
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Result<usize> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| {
                Error::format(
                    "ppm",
                    format!("bad header number {:?}", String::from_utf8_lossy(tok)),
                )
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::quantize;
    use proptest::prelude::*;

    #[test]
    fn single_white_pixel() {
        let img = decode_ppm(b"P6\n1 1\n255\n\xff\xff\xff").unwrap();
        assert_eq!(img.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let img = decode_ppm(b"P6 # comment\n1 # w\n1\n255\n\x00\x80\xff").unwrap();
        assert_eq!(img.data(), &[0.0, 128.0 / 255.0, 1.0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(decode_ppm(b"P3\n1 1\n255\n0 0 0").is_err());
        assert!(decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\n\0\0\0").is_err());
        assert!(decode_ppm(b"").is_err());
    }

    #[test]
    fn canonical_bytes_round_trip() {
        let mut bytes = b"P6\n3 2\n255\n".to_vec();
        bytes.extend((0u8..18).map(|b| b.wrapping_mul(37)));
        assert_eq!(encode_ppm(&decode_ppm(&bytes).unwrap()), bytes);
    }

    proptest! {
        #[test]
        fn quantized_images_round_trip(h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
            let mut s = seed;
            let img = Image::from_fn(h, w, |_, _, _| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64
            }).unwrap();
            let q = quantize(&img);
            prop_assert_eq!(decode_ppm(&encode_ppm(&q)).unwrap(), q);
        }
    }
}
