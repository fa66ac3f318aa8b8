//! On-disk formats: 8-bit PNG for colour images, PFM for float maps.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{io_err, Error, Result};
use crate::grid::ImageGrid;

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), detail: detail.into() }
}

/// Write an RGB or grayscale image as 8-bit PNG (values rounded to the nearest level).
pub fn write_png(path: &Path, image: &ImageGrid) -> Result<()> {
    let color = match image.channels() {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(format_err(path, format!("PNG output supports 1 or 3 channels, got {c}"))),
    };
    let file = File::create(path).map_err(io_err(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), image.width() as u32, image.height() as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| format_err(path, e.to_string()))?;
    let bytes: Vec<u8> = image.data().iter().map(|&v| quantize_u8(v)).collect();
    writer.write_image_data(&bytes).map_err(|e| format_err(path, e.to_string()))?;
    writer.finish().map_err(|e| format_err(path, e.to_string()))?;
    Ok(())
}

#[inline]
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Read an 8-bit grayscale / RGB / RGBA PNG; alpha is dropped.
pub fn read_png(path: &Path) -> Result<ImageGrid> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| format_err(path, e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| format_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| format_err(path, e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let src_c = info.color_type.samples();
    let keep = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 1,
        png::ColorType::Rgb | png::ColorType::Rgba => 3,
        png::ColorType::Indexed => return Err(format_err(path, "unexpanded palette image")),
    };
    let mut data = Vec::with_capacity(w * h * keep);
    for px in buf[..info.buffer_size()].chunks_exact(src_c) {
        data.extend(px[..keep].iter().map(|&b| b as f64 / 255.0));
    }
    ImageGrid::new(w, h, keep, data)
}

/// Little-endian PFM (`Pf` for one channel, `PF` for three), rows stored bottom-up.
pub fn write_pfm(path: &Path, width: usize, height: usize, channels: usize, values: &[f32]) -> Result<()> {
    let tag = match channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(format_err(path, format!("PFM supports 1 or 3 channels, got {c}"))),
    };
    if values.len() != width * height * channels {
        return Err(format_err(path, "value count does not match dimensions"));
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    write!(w, "{tag}\n{width} {height}\n-1.0\n").map_err(io_err(path))?;
    let row = width * channels;
    for y in (0..height).rev() {
        for v in &values[y * row..(y + 1) * row] {
            w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Returns `(width, height, channels, values)` with rows top-down.
pub fn read_pfm(path: &Path) -> Result<(usize, usize, usize, Vec<f32>)> {
    let mut bytes = Vec::new();
    File::open(path).map_err(io_err(path))?.read_to_end(&mut bytes).map_err(io_err(path))?;
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    // Header: tag, width, height, scale separated by whitespace; one whitespace byte before data.
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, "truncated PFM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let channels = match fields[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        t => return Err(format_err(path, format!("not a PFM file (tag `{t}`)"))),
    };
    let parse = |s: &str| s.parse::<usize>().map_err(|_| format_err(path, format!("bad PFM dimension `{s}`")));
    let (width, height) = (parse(&fields[1])?, parse(&fields[2])?);
    let scale: f32 = fields[3].parse().map_err(|_| format_err(path, "bad PFM scale"))?;
    let little = scale < 0.0;
    let n = width * height * channels;
    let body = bytes.get(pos..pos + 4 * n).ok_or_else(|| format_err(path, "truncated PFM data"))?;
    let stored: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| {
            let b = [c[0], c[1], c[2], c[3]];
            if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) }
        })
        .collect();
    let row = width * channels;
    let mut values = Vec::with_capacity(n);
    for y in (0..height).rev() {
        values.extend_from_slice(&stored[y * row..(y + 1) * row]);
    }
    Ok((width, height, channels, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn png_round_trip_within_one_level(w in 1usize..9, h in 1usize..9, seed in 0u64..1000) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("a.png");
            let im = ImageGrid::from_fn(w, h, 3, |x, y, c| ((x * 31 + y * 17 + c * 7 + seed as usize) % 101) as f64 / 100.0).unwrap();
            write_png(&path, &im).unwrap();
            let back = read_png(&path).unwrap();
            prop_assert!(back.same_shape(&im));
            for (a, b) in im.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 1.0 / 255.0);
            }
        }

        #[test]
        fn pfm_round_trip_is_bit_exact(values in proptest::collection::vec(-1e6f32..1e6, 12)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("d.pfm");
            write_pfm(&path, 4, 3, 1, &values).unwrap();
            let (w, h, c, back) = read_pfm(&path).unwrap();
            prop_assert_eq!((w, h, c), (4, 3, 1));
            prop_assert_eq!(back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_png(Path::new("/nonexistent/x.png")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.png"));
    }
}
