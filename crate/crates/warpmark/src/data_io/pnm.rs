//! Binary PGM (P5) and PPM (P6) with 8-bit samples.

use std::path::Path;

use crate::error::{Error, Result};
use crate::imageops::Image;

fn fmt_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Reads one whitespace-delimited ASCII token, skipping `#` comments.
fn next_token<'a>(bytes: &'a [u8], pos: &mut usize, path: &Path) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(fmt_err(path, "unexpected end of header"));
    }
    Ok(&bytes[start..*pos])
}

fn parse_number(token: &[u8], path: &Path) -> Result<usize> {
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| fmt_err(path, format!("bad header number {:?}", String::from_utf8_lossy(token))))
}

pub fn load_pnm(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes, path)
}

pub fn decode_pnm(bytes: &[u8], path: &Path) -> Result<Image> {
    if bytes.len() < 2 {
        return Err(fmt_err(path, "file too short"));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        magic => {
            return Err(fmt_err(
                path,
                format!("unknown magic {:?} (only binary P5/P6)", String::from_utf8_lossy(magic)),
            ))
        }
    };
    let mut pos = 2;
    let w = parse_number(next_token(&bytes, &mut pos, path)?, path)?;
    let h = parse_number(next_token(&bytes, &mut pos, path)?, path)?;
    let maxval = parse_number(next_token(&bytes, &mut pos, path)?, path)?;
    if maxval == 0 || maxval > 255 {
        return Err(fmt_err(path, format!("unsupported maxval {maxval} (only 1..=255)")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = h * w * channels;
    if bytes.len() < pos + need {
        return Err(Error::io(
            path,
            std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!("raster truncated: {} of {need} bytes", bytes.len().saturating_sub(pos)),
            ),
        ));
    }
    let scale = 1.0 / maxval as f32;
    let data = bytes[pos..pos + need].iter().map(|&b| b as f32 * scale).collect();
    Image::new(h, w, channels, data)
}

pub fn save_pnm(img: &Image, path: &Path) -> Result<()> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(
        img.data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
