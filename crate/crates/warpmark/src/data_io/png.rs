//! Minimal PNG support: 8-bit non-interlaced grayscale and RGB.
//!
//! The encoder writes filter-0 scanlines in stored (uncompressed) deflate
//! blocks, which every PNG reader accepts. The decoder implements the full
//! inflate algorithm (stored, fixed, and dynamic Huffman blocks) plus all
//! five scanline filters, so files produced by ordinary encoders load too.
//! Anything outside 8-bit gray/RGB is rejected with a format error rather
//! than guessed at.

use std::path::Path;

use crate::error::{Error, Result};
use crate::imageops::Image;

const SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A];

fn crc32(data: &[u8]) -> u32 {
    // Standard table-driven CRC-32 (polynomial 0xEDB88320).
    static TABLE: std::sync::OnceLock<[u32; 256]> = std::sync::OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = [0u32; 256];
        for (n, entry) in t.iter_mut().enumerate() {
            let mut c = n as u32;
            for _ in 0..8 {
                c = if c & 1 != 0 { 0xEDB88320 ^ (c >> 1) } else { c >> 1 };
            }
            *entry = c;
        }
        t
    });
    let mut c = 0xFFFFFFFFu32;
    for &b in data {
        c = table[((c ^ b as u32) & 0xFF) as usize] ^ (c >> 8);
    }
    c ^ 0xFFFFFFFF
}

fn adler32(data: &[u8]) -> u32 {
    const MOD: u32 = 65521;
    let mut a = 1u32;
    let mut b = 0u32;
    for chunk in data.chunks(5552) {
        for &byte in chunk {
            a += byte as u32;
            b += a;
        }
        a %= MOD;
        b %= MOD;
    }
    (b << 16) | a
}

fn push_chunk(out: &mut Vec<u8>, tag: &[u8; 4], body: &[u8]) {
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    let start = out.len();
    out.extend_from_slice(tag);
    out.extend_from_slice(body);
    let crc = crc32(&out[start..]);
    out.extend_from_slice(&crc.to_be_bytes());
}

/// Encodes an [`Image`] as PNG bytes (quantizing to 8 bits).
pub fn encode_png(img: &Image) -> Vec<u8> {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let color_type = if c == 1 { 0u8 } else { 2u8 };

    let mut ihdr = Vec::with_capacity(13);
    ihdr.extend_from_slice(&(w as u32).to_be_bytes());
    ihdr.extend_from_slice(&(h as u32).to_be_bytes());
    ihdr.extend_from_slice(&[8, color_type, 0, 0, 0]);

    // Filter byte 0 before each scanline.
    let mut raw = Vec::with_capacity(h * (1 + w * c));
    for v in 0..h {
        raw.push(0u8);
        for u in 0..w {
            for ch in 0..c {
                let val = (img.get(v, u, ch).clamp(0.0, 1.0) * 255.0).round() as u8;
                raw.push(val);
            }
        }
    }

    // zlib stream with stored deflate blocks.
    let mut idat = vec![0x78, 0x01];
    let mut offset = 0;
    loop {
        let remaining = raw.len() - offset;
        let block = remaining.min(65535);
        let last = offset + block == raw.len();
        idat.push(if last { 1 } else { 0 });
        idat.extend_from_slice(&(block as u16).to_le_bytes());
        idat.extend_from_slice(&(!(block as u16)).to_le_bytes());
        idat.extend_from_slice(&raw[offset..offset + block]);
        offset += block;
        if last {
            break;
        }
    }
    idat.extend_from_slice(&adler32(&raw).to_be_bytes());

    let mut out = Vec::new();
    out.extend_from_slice(&SIGNATURE);
    push_chunk(&mut out, b"IHDR", &ihdr);
    push_chunk(&mut out, b"IDAT", &idat);
    push_chunk(&mut out, b"IEND", &[]);
    out
}

pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    std::fs::write(path, encode_png(img)).map_err(|e| Error::io(path, e))
}

struct BitReader<'a> {
    data: &'a [u8],
    byte: usize,
    bit: u32,
}

impl<'a> BitReader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self { data, byte: 0, bit: 0 }
    }

    fn take_bit(&mut self) -> Result<u32> {
        if self.byte >= self.data.len() {
            return Err(Error::Numeric("inflate: out of input".into()));
        }
        let b = (self.data[self.byte] >> self.bit) & 1;
        self.bit += 1;
        if self.bit == 8 {
            self.bit = 0;
            self.byte += 1;
        }
        Ok(b as u32)
    }

    fn take_bits(&mut self, n: u32) -> Result<u32> {
        let mut v = 0u32;
        for i in 0..n {
            v |= self.take_bit()? << i;
        }
        Ok(v)
    }

    fn align_byte(&mut self) {
        if self.bit != 0 {
            self.bit = 0;
            self.byte += 1;
        }
    }
}

/// Canonical Huffman decoding table built from code lengths.
struct Huffman {
    counts: [u16; 16],
    symbols: Vec<u16>,
}

impl Huffman {
    fn from_lengths(lengths: &[u8]) -> Result<Self> {
        let mut counts = [0u16; 16];
        for &l in lengths {
            counts[l as usize] += 1;
        }
        counts[0] = 0;
        let mut offsets = [0u16; 16];
        for l in 1..16 {
            offsets[l] = offsets[l - 1] + counts[l - 1];
        }
        let mut symbols = vec![0u16; lengths.iter().filter(|&&l| l > 0).count()];
        for (sym, &l) in lengths.iter().enumerate() {
            if l > 0 {
                symbols[offsets[l as usize] as usize] = sym as u16;
                offsets[l as usize] += 1;
            }
        }
        Ok(Self { counts, symbols })
    }

    fn decode(&self, reader: &mut BitReader) -> Result<u16> {
        let mut code = 0i32;
        let mut first = 0i32;
        let mut index = 0i32;
        for len in 1..16 {
            code |= reader.take_bit()? as i32;
            let count = self.counts[len] as i32;
            if code - first < count {
                return Ok(self.symbols[(index + (code - first)) as usize]);
            }
            index += count;
            first = (first + count) << 1;
            code <<= 1;
        }
        Err(Error::Numeric("inflate: invalid Huffman code".into()))
    }
}

const LENGTH_BASE: [u16; 29] = [
    3, 4, 5, 6, 7, 8, 9, 10, 11, 13, 15, 17, 19, 23, 27, 31, 35, 43, 51, 59, 67, 83, 99, 115, 131,
    163, 195, 227, 258,
];
const LENGTH_EXTRA: [u8; 29] = [
    0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3, 4, 4, 4, 4, 5, 5, 5, 5, 0,
];
const DIST_BASE: [u16; 30] = [
    1, 2, 3, 4, 5, 7, 9, 13, 17, 25, 33, 49, 65, 97, 129, 193, 257, 385, 513, 769, 1025, 1537,
    2049, 3073, 4097, 6145, 8193, 12289, 16385, 24577,
];
const DIST_EXTRA: [u8; 30] = [
    0, 0, 0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6, 6, 7, 7, 8, 8, 9, 9, 10, 10, 11, 11, 12, 12, 13,
    13,
];

fn inflate(data: &[u8]) -> Result<Vec<u8>> {
    let mut reader = BitReader::new(data);
    let mut out = Vec::new();
    loop {
        let bfinal = reader.take_bit()?;
        let btype = reader.take_bits(2)?;
        match btype {
            0 => {
                reader.align_byte();
                let len = reader.take_bits(16)? as usize;
                let nlen = reader.take_bits(16)? as usize;
                if len != (!nlen & 0xFFFF) {
                    return Err(Error::Numeric("inflate: stored block length check failed".into()));
                }
                for _ in 0..len {
                    out.push(reader.take_bits(8)? as u8);
                }
            }
            1 => {
                let mut litlen = [0u8; 288];
                for (i, l) in litlen.iter_mut().enumerate() {
                    *l = match i {
                        0..=143 => 8,
                        144..=255 => 9,
                        256..=279 => 7,
                        _ => 8,
                    };
                }
                let lit = Huffman::from_lengths(&litlen)?;
                let dist = Huffman::from_lengths(&[5u8; 30])?;
                inflate_block(&mut reader, &lit, &dist, &mut out)?;
            }
            2 => {
                let hlit = reader.take_bits(5)? as usize + 257;
                let hdist = reader.take_bits(5)? as usize + 1;
                let hclen = reader.take_bits(4)? as usize + 4;
                const ORDER: [usize; 19] = [
                    16, 17, 18, 0, 8, 7, 9, 6, 10, 5, 11, 4, 12, 3, 13, 2, 14, 1, 15,
                ];
                let mut cl_lengths = [0u8; 19];
                for &pos in ORDER.iter().take(hclen) {
                    cl_lengths[pos] = reader.take_bits(3)? as u8;
                }
                let cl = Huffman::from_lengths(&cl_lengths)?;
                let mut lengths = vec![0u8; hlit + hdist];
                let mut i = 0;
                while i < lengths.len() {
                    let sym = cl.decode(&mut reader)?;
                    match sym {
                        0..=15 => {
                            lengths[i] = sym as u8;
                            i += 1;
                        }
                        16 => {
                            if i == 0 {
                                return Err(Error::Numeric("inflate: repeat with no previous length".into()));
                            }
                            let prev = lengths[i - 1];
                            let n = reader.take_bits(2)? as usize + 3;
                            for _ in 0..n {
                                lengths[i] = prev;
                                i += 1;
                            }
                        }
                        17 => {
                            i += reader.take_bits(3)? as usize + 3;
                        }
                        18 => {
                            i += reader.take_bits(7)? as usize + 11;
                        }
                        _ => return Err(Error::Numeric("inflate: bad code-length symbol".into())),
                    }
                }
                let lit = Huffman::from_lengths(&lengths[..hlit])?;
                let dist = Huffman::from_lengths(&lengths[hlit..])?;
                inflate_block(&mut reader, &lit, &dist, &mut out)?;
            }
            _ => return Err(Error::Numeric("inflate: reserved block type".into())),
        }
        if bfinal == 1 {
            break;
        }
    }
    Ok(out)
}

fn inflate_block(reader: &mut BitReader, lit: &Huffman, dist: &Huffman, out: &mut Vec<u8>) -> Result<()> {
    loop {
        let sym = lit.decode(reader)?;
        match sym {
            0..=255 => out.push(sym as u8),
            256 => return Ok(()),
            257..=285 => {
                let idx = (sym - 257) as usize;
                let len = LENGTH_BASE[idx] as usize + reader.take_bits(LENGTH_EXTRA[idx] as u32)? as usize;
                let dsym = dist.decode(reader)? as usize;
                if dsym >= 30 {
                    return Err(Error::Numeric("inflate: bad distance symbol".into()));
                }
                let d = DIST_BASE[dsym] as usize + reader.take_bits(DIST_EXTRA[dsym] as u32)? as usize;
                if d > out.len() {
                    return Err(Error::Numeric("inflate: distance past window".into()));
                }
                let start = out.len() - d;
                for k in 0..len {
                    let b = out[start + k];
                    out.push(b);
                }
            }
            _ => return Err(Error::Numeric("inflate: bad literal symbol".into())),
        }
    }
}

fn paeth(a: i32, b: i32, c: i32) -> u8 {
    let p = a + b - c;
    let (pa, pb, pc) = ((p - a).abs(), (p - b).abs(), (p - c).abs());
    if pa <= pb && pa <= pc {
        a as u8
    } else if pb <= pc {
        b as u8
    } else {
        c as u8
    }
}

fn unfilter(raw: &[u8], h: usize, w: usize, bpp: usize, path: &Path) -> Result<Vec<u8>> {
    let stride = w * bpp;
    if raw.len() != h * (stride + 1) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("decompressed size {} does not match {h}x{w}", raw.len()),
        });
    }
    let mut out = vec![0u8; h * stride];
    for v in 0..h {
        let filter = raw[v * (stride + 1)];
        let line = &raw[v * (stride + 1) + 1..(v + 1) * (stride + 1)];
        for x in 0..stride {
            let left = if x >= bpp { out[v * stride + x - bpp] } else { 0 } as i32;
            let up = if v > 0 { out[(v - 1) * stride + x] } else { 0 } as i32;
            let up_left = if v > 0 && x >= bpp {
                out[(v - 1) * stride + x - bpp]
            } else {
                0
            } as i32;
            let recon = match filter {
                0 => line[x] as i32,
                1 => line[x] as i32 + left,
                2 => line[x] as i32 + up,
                3 => line[x] as i32 + (left + up) / 2,
                4 => line[x] as i32 + paeth(left, up, up_left) as i32,
                f => {
                    return Err(Error::Format {
                        path: path.to_path_buf(),
                        msg: format!("unknown scanline filter {f}"),
                    })
                }
            };
            out[v * stride + x] = (recon & 0xFF) as u8;
        }
    }
    Ok(out)
}

/// Decodes PNG bytes. Only 8-bit depth, color types 0 (gray) and 2 (RGB),
/// non-interlaced.
pub fn decode_png(bytes: &[u8], path: &Path) -> Result<Image> {
    let fmt = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    if bytes.len() < 8 || bytes[..8] != SIGNATURE {
        return Err(fmt("missing PNG signature".into()));
    }
    let mut pos = 8;
    let mut dims = None;
    let mut idat = Vec::new();
    while pos + 8 <= bytes.len() {
        let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let tag = &bytes[pos + 4..pos + 8];
        let body_start = pos + 8;
        let body_end = body_start + len;
        if body_end + 4 > bytes.len() {
            return Err(fmt("truncated chunk".into()));
        }
        let body = &bytes[body_start..body_end];
        match tag {
            b"IHDR" => {
                if len != 13 {
                    return Err(fmt("bad IHDR length".into()));
                }
                let w = u32::from_be_bytes(body[0..4].try_into().unwrap()) as usize;
                let h = u32::from_be_bytes(body[4..8].try_into().unwrap()) as usize;
                let (depth, color, _comp, _filter, interlace) =
                    (body[8], body[9], body[10], body[11], body[12]);
                if depth != 8 {
                    return Err(fmt(format!("unsupported bit depth {depth} (only 8)")));
                }
                let c = match color {
                    0 => 1,
                    2 => 3,
                    other => {
                        return Err(fmt(format!(
                            "unsupported color type {other} (only grayscale and RGB)"
                        )))
                    }
                };
                if interlace != 0 {
                    return Err(fmt("interlaced PNG not supported".into()));
                }
                if w == 0 || h == 0 {
                    return Err(fmt("zero-sized image".into()));
                }
                dims = Some((h, w, c));
            }
            b"IDAT" => idat.extend_from_slice(body),
            b"IEND" => break,
            _ => {} // ancillary chunks ignored
        }
        pos = body_end + 4;
    }
    let (h, w, c) = dims.ok_or_else(|| fmt("missing IHDR".into()))?;
    if idat.len() < 6 {
        return Err(fmt("missing image data".into()));
    }
    if idat[0] & 0x0F != 8 {
        return Err(fmt("unsupported zlib compression method".into()));
    }
    let raw = inflate(&idat[2..idat.len() - 4]).map_err(|e| fmt(format!("corrupt deflate stream: {e}")))?;
    let expect_adler = u32::from_be_bytes(idat[idat.len() - 4..].try_into().unwrap());
    if adler32(&raw) != expect_adler {
        return Err(fmt("adler32 checksum mismatch".into()));
    }
    let pixels = unfilter(&raw, h, w, c, path)?;
    let data = pixels.iter().map(|&b| b as f32 / 255.0).collect();
    Image::new(h, w, c, data)
}

pub fn load_png(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(h: usize, w: usize, c: usize) -> Image {
        let mut img = Image::fill(h, w, c, 0.0);
        for v in 0..h {
            for u in 0..w {
                for ch in 0..c {
                    let val = ((v + u + ch) % 7) as f32 / 6.0;
                    img.set(v, u, ch, val);
                }
            }
        }
        img
    }

    #[test]
    fn round_trip_gray_and_rgb() {
        for c in [1usize, 3] {
            let img = checker(9, 13, c);
            let bytes = encode_png(&img);
            let back = decode_png(&bytes, Path::new("mem.png")).unwrap();
            assert_eq!((back.height(), back.width(), back.channels()), (9, 13, c));
            for (a, b) in img.data().iter().zip(back.data()) {
                assert!((a - b).abs() <= 1.0 / 510.0 + 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn rejects_palette_and_16_bit() {
        let img = checker(4, 4, 1);
        let mut bytes = encode_png(&img);
        // Flip the color type byte inside IHDR (offset 8+8+9).
        bytes[25] = 3; // palette
        assert!(matches!(
            decode_png(&bytes, Path::new("p.png")),
            Err(Error::Format { .. })
        ));
        let mut bytes = encode_png(&img);
        bytes[24] = 16; // bit depth
        assert!(matches!(
            decode_png(&bytes, Path::new("d.png")),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn rejects_truncated_data() {
        let img = checker(6, 6, 3);
        let bytes = encode_png(&img);
        assert!(decode_png(&bytes[..bytes.len() / 2], Path::new("t.png")).is_err());
        assert!(decode_png(b"hello", Path::new("h.png")).is_err());
    }

    #[test]
    fn crc_and_adler_reference_values() {
        // Published check values for both algorithms.
        assert_eq!(crc32(b"123456789"), 0xCBF43926);
        assert_eq!(adler32(b"Wikipedia"), 0x11E60398);
    }

    #[test]
    fn decodes_externally_compressed_fixtures() {
        // Files written by Pillow with real zlib compression (dynamic
        // Huffman blocks); expected values recorded at fixture creation.
        let gray = decode_png(
            include_bytes!("../../tests/data/fixture_gray.png"),
            Path::new("fixture_gray.png"),
        )
        .unwrap();
        assert_eq!((gray.height(), gray.width(), gray.channels()), (24, 31, 1));
        let sum: i64 = gray.data().iter().map(|&v| (v * 255.0).round() as i64).sum();
        assert_eq!(sum, 99480);
        let px = |v: usize, u: usize| (gray.get(v, u, 0) * 255.0).round() as i64;
        assert_eq!((px(0, 0), px(12, 15), px(23, 30)), (19, 212, 140));

        let rgb = decode_png(
            include_bytes!("../../tests/data/fixture_rgb.png"),
            Path::new("fixture_rgb.png"),
        )
        .unwrap();
        assert_eq!((rgb.height(), rgb.width(), rgb.channels()), (17, 23, 3));
        let sum: i64 = rgb.data().iter().map(|&v| (v * 255.0).round() as i64).sum();
        assert_eq!(sum, 148075);
        let px = |v: usize, u: usize, c: usize| (rgb.get(v, u, c) * 255.0).round() as i64;
        assert_eq!((px(0, 0, 0), px(0, 0, 1), px(0, 0, 2)), (20, 19, 14));
        assert_eq!((px(8, 11, 0), px(8, 11, 1), px(8, 11, 2)), (218, 43, 124));
        assert_eq!((px(16, 22, 0), px(16, 22, 1), px(16, 22, 2)), (170, 63, 238));
    }
}
