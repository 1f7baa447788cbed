use std::fs;
use std::io::Write;
use std::path::Path;

use super::{GrayImage, ImageError, Result, RgbImage};

/// Loads an image. Binary PPM (P6) and PGM (P5) with maxval 255 are decoded
/// natively; PNG and JPEG go through the `image` crate. Grayscale sources have
/// their channel replicated into R, G and B.
pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            ImageError::NotFound(path.to_path_buf())
        } else {
            ImageError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        return decode_pnm(&bytes, path);
    }
    decode_with_codec(&bytes, path)
}

fn decode_with_codec(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let format = image::guess_format(bytes)
        .map_err(|_| ImageError::UnsupportedFormat(path.to_path_buf()))?;
    let decoded = image::load_from_memory_with_format(bytes, format).map_err(|e| {
        ImageError::MalformedHeader {
            path: path.to_path_buf(),
            reason: e.to_string(),
        }
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let pixels = rgb.pixels().map(|p| p.0).collect();
    RgbImage::new(w, h, pixels)
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    data_offset: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    let malformed = |reason: &str| ImageError::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(malformed("unknown magic")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments between tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(malformed("header ends early")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("expected a decimal number"));
        }
        let text =
            std::str::from_utf8(&bytes[start..pos]).map_err(|_| malformed("non-ascii number"))?;
        *field = text.parse().map_err(|_| malformed("number out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(malformed("missing whitespace after maxval")),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(malformed("zero dimension"));
    }
    if maxval != 255 {
        return Err(malformed("only maxval 255 is supported"));
    }
    Ok(Header {
        channels,
        width,
        height,
        data_offset: pos,
    })
}

fn decode_pnm(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let header = parse_header(bytes, path)?;
    let expected = header
        .width
        .checked_mul(header.height)
        .and_then(|n| n.checked_mul(header.channels))
        .ok_or_else(|| ImageError::MalformedHeader {
            path: path.to_path_buf(),
            reason: "dimensions overflow".into(),
        })?;
    let data = &bytes[header.data_offset..];
    if data.len() < expected {
        return Err(ImageError::TruncatedData {
            path: path.to_path_buf(),
            expected,
            found: data.len(),
        });
    }
    let data = &data[..expected];
    let pixels = if header.channels == 1 {
        data.iter().map(|&v| [v, v, v]).collect()
    } else {
        data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
    };
    RgbImage::new(header.width, header.height, pixels)
}

fn write_file(path: &Path, header: String, data: &[u8]) -> Result<()> {
    let io_err = |source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = std::io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    file.write_all(header.as_bytes()).map_err(io_err)?;
    file.write_all(data).map_err(io_err)?;
    file.flush().map_err(io_err)
}

/// Writes a binary PGM (P5, maxval 255).
pub fn save_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let header = format!("P5\n{} {}\n255\n", img.width(), img.height());
    write_file(path.as_ref(), header, img.pixels())
}

/// Writes a binary PPM (P6, maxval 255).
pub fn save_ppm(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let header = format!("P6\n{} {}\n255\n", img.width(), img.height());
    let data: Vec<u8> = img.pixels().iter().flatten().copied().collect();
    write_file(path.as_ref(), header, &data)
}
