//! Binary portable graymap (P5) and pixmap (P6) encoding, maxval 255.

use std::io::{self, Write};
use std::path::Path;

use crate::error::{invalid, Result};
use crate::image::{Image, Mask};

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn header(magic: &str, width: usize, height: usize) -> Vec<u8> {
    format!("{magic}\n{width} {height}\n255\n").into_bytes()
}

/// P5 bytes for a binary mask: 0 background, 255 foreground.
pub fn encode_mask(mask: &Mask) -> Vec<u8> {
    let mut out = header("P5", mask.width, mask.height);
    out.extend(mask.data.iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

/// P5 bytes for a float map in `[0, 1]`, linearly quantized.
pub fn encode_gray(values: &[f64], height: usize, width: usize) -> Vec<u8> {
    assert_eq!(values.len(), height * width);
    let mut out = header("P5", width, height);
    out.extend(values.iter().map(|&v| quantize(v)));
    out
}

/// P6 bytes for an RGB image with channel values in `[0, 1]`.
pub fn encode_rgb(image: &Image) -> Vec<u8> {
    assert_eq!(image.channels, 3, "P6 needs three channels");
    let mut out = header("P6", image.width, image.height);
    out.extend(image.data.iter().map(|&v| quantize(v)));
    out
}

pub fn write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)
}

/// Parses a P5 or P6 file with maxval 255, returning (channels, height,
/// width, samples).
pub fn decode(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(invalid("pnm", "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let channels = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(invalid("pnm", format!("unsupported magic {other}"))),
    };
    let parse = |s: &str| s.parse::<usize>().map_err(|e| invalid("pnm", e.to_string()));
    let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(invalid("pnm", format!("maxval {maxval} != 255")));
    }
    let need = width * height * channels;
    let body = bytes.get(pos..pos + need).ok_or_else(|| invalid("pnm", "truncated body"))?;
    Ok((channels, height, width, body.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_round_trip() {
        let mut m = Mask::empty(3, 4);
        m.set(1, 2, true);
        let (c, h, w, body) = decode(&encode_mask(&m)).unwrap();
        assert_eq!((c, h, w), (1, 3, 4));
        assert_eq!(body[6], 255);
        assert_eq!(body.iter().filter(|&&b| b == 255).count(), 1);
    }

    #[test]
    fn rgb_quantization() {
        let mut img = Image::new(1, 2, 3);
        img.data = vec![0.0, 0.5, 1.0, 2.0, -1.0, 0.25];
        let (_, _, _, body) = decode(&encode_rgb(&img)).unwrap();
        assert_eq!(body, vec![0, 128, 255, 255, 0, 64]);
    }
}
