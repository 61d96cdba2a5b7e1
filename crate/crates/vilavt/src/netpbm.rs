//! Netpbm images: P2/P3/P5/P6 in, binary PPM and plain PGM out.

use std::fs;
use std::io::Write;
use std::path::Path;

use vilavt_core::image::RgbImage;

#[derive(Debug, thiserror::Error)]
pub enum NetpbmError {
    #[error("not a netpbm file (magic {0:?})")]
    BadMagic(String),
    #[error("unsupported netpbm variant {0}")]
    Unsupported(String),
    #[error("malformed header: {0}")]
    Header(&'static str),
    #[error("maxval {0} outside 1..=65535")]
    MaxVal(u32),
    #[error("sample {value} exceeds maxval {maxval}")]
    SampleRange { value: u32, maxval: u32 },
    #[error("pixel data truncated: expected {expected} samples, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("image has zero width or height")]
    Empty,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Option<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).ok()?.parse().ok()
    }
}

fn scale(v: u32, maxval: u32) -> Result<u8, NetpbmError> {
    if v > maxval {
        return Err(NetpbmError::SampleRange { value: v, maxval });
    }
    if maxval == 255 {
        return Ok(v as u8);
    }
    Ok(((v * 255 * 2 + maxval) / (2 * maxval)) as u8)
}

/// Decodes a netpbm byte stream. Grayscale inputs are replicated to RGB.
pub fn decode(bytes: &[u8]) -> Result<RgbImage, NetpbmError> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        let head = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(NetpbmError::BadMagic(head));
    }
    let kind = bytes[1];
    let (channels, binary) = match kind {
        b'2' => (1, false),
        b'3' => (3, false),
        b'5' => (1, true),
        b'6' => (3, true),
        b'1' | b'4' | b'7' => return Err(NetpbmError::Unsupported(format!("P{}", kind as char))),
        _ => return Err(NetpbmError::BadMagic(String::from_utf8_lossy(&bytes[..2]).into_owned())),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number().ok_or(NetpbmError::Header("width"))? as usize;
    let height = cur.number().ok_or(NetpbmError::Header("height"))? as usize;
    let maxval = cur.number().ok_or(NetpbmError::Header("maxval"))?;
    if width == 0 || height == 0 {
        return Err(NetpbmError::Empty);
    }
    if maxval == 0 || maxval > 65535 {
        return Err(NetpbmError::MaxVal(maxval));
    }
    let expected = width * height * channels;
    let mut samples = Vec::with_capacity(expected);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
            return Err(NetpbmError::Header("missing separator before raster"));
        }
        let raster = &bytes[cur.pos + 1..];
        let width_bytes = if maxval < 256 { 1 } else { 2 };
        if raster.len() < expected * width_bytes {
            return Err(NetpbmError::Truncated {
                expected,
                found: raster.len() / width_bytes,
            });
        }
        for i in 0..expected {
            let v = if width_bytes == 1 {
                u32::from(raster[i])
            } else {
                u32::from(u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]))
            };
            samples.push(scale(v, maxval)?);
        }
    } else {
        for found in 0..expected {
            let v = cur.number().ok_or(NetpbmError::Truncated { expected, found })?;
            samples.push(scale(v, maxval)?);
        }
    }
    let data = if channels == 3 {
        samples
    } else {
        samples.iter().flat_map(|&g| [g, g, g]).collect()
    };
    Ok(RgbImage::new(width, height, data).expect("sample count checked"))
}

/// Binary PPM (P6, maxval 255).
pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

/// Plain-text PGM (P2) with the given maxval, twelve samples per line.
pub fn encode_pgm_plain(width: usize, height: usize, maxval: u16, samples: &[u16]) -> String {
    assert_eq!(samples.len(), width * height, "sample count must match the size");
    let mut out = format!("P2\n{width} {height}\n{maxval}\n");
    for line in samples.chunks(12) {
        let row: Vec<String> = line.iter().map(|s| s.to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_image(path: &Path) -> Result<RgbImage, crate::Error> {
    let bytes = fs::read(path).map_err(|e| crate::Error::io(path, e))?;
    decode(&bytes).map_err(|e| crate::Error::format(path, e))
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<(), crate::Error> {
    let mut f = fs::File::create(path).map_err(|e| crate::Error::io(path, e))?;
    f.write_all(&encode_ppm(img)).map_err(|e| crate::Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_and_binary_agree() {
        let p3 = b"P3\n# two pixels\n2 1\n255\n255 0 0  0 128 255\n";
        let mut p6 = b"P6 2 1 255\n".to_vec();
        p6.extend_from_slice(&[255, 0, 0, 0, 128, 255]);
        let a = decode(p3).unwrap();
        let b = decode(&p6).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.pixel(1, 0), [0, 128, 255]);
    }

    #[test]
    fn gray_is_replicated_and_rescaled() {
        let img = decode(b"P2 2 1 15 0 15").unwrap();
        assert_eq!(img.pixel(0, 0), [0, 0, 0]);
        assert_eq!(img.pixel(1, 0), [255, 255, 255]);
        let mut p5 = b"P5 1 1 65535\n".to_vec();
        p5.extend_from_slice(&[0x80, 0x00]);
        assert_eq!(decode(&p5).unwrap().pixel(0, 0), [128, 128, 128]);
    }

    #[test]
    fn ppm_round_trip() {
        let img = RgbImage::from_fn(5, 3, |x, y| [(x * 40) as u8, (y * 70) as u8, 9]);
        assert_eq!(decode(&encode_ppm(&img)).unwrap(), img);
    }

    #[test]
    fn plain_pgm_layout() {
        let s = encode_pgm_plain(2, 2, 65535, &[0, 1, 2, 65535]);
        assert_eq!(s, "P2\n2 2\n65535\n0 1 2 65535\n");
        let img = decode(s.as_bytes()).unwrap();
        assert_eq!(img.pixel(1, 1), [255, 255, 255]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(decode(b"GIF89a"), Err(NetpbmError::BadMagic(_))));
        assert!(matches!(decode(b"P4 1 1 1"), Err(NetpbmError::Unsupported(_))));
        assert!(matches!(decode(b"P3 2 1 255 1 2 3"), Err(NetpbmError::Truncated { .. })));
        assert!(matches!(decode(b"P2 1 1 10 11"), Err(NetpbmError::SampleRange { .. })));
        assert!(matches!(decode(b"P2 0 1 10"), Err(NetpbmError::Empty)));
        assert!(matches!(decode(b"P6 1 1 255\n\x01"), Err(NetpbmError::Truncated { .. })));
    }
}
