//! Binary PGM (P5) and PPM (P6) raster I/O plus area-average resizing.
//! These two codecs are the only image formats the pipeline reads or writes:
//! they are bit-exact, header-only-parseable, and need no external decoders.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::Raster;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a binary PGM/PPM (bad magic)")]
    BadMagic { path: String },
    #[error("{path}: malformed header")]
    BadHeader { path: String },
    #[error("{path}: only maxval 255 is supported, found {maxval}")]
    UnsupportedMaxval { path: String, maxval: u32 },
    #[error("{path}: pixel payload shorter than header promises")]
    Truncated { path: String },
    #[error("{path}: filename stem is not a numeric timestamp")]
    BadTimestamp { path: String },
    #[error("{path}: has {found} channels, sequence started with {expected}")]
    MixedChannels { path: String, expected: usize, found: usize },
}

fn io_err(path: &Path, source: std::io::Error) -> ImageIoError {
    ImageIoError::Io { path: path.display().to_string(), source }
}

/// Header tokens may be separated by any whitespace and `#` comments.
fn next_token(bytes: &[u8], pos: &mut usize) -> Option<u32> {
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
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if *pos == start {
        return None;
    }
    std::str::from_utf8(&bytes[start..*pos]).ok()?.parse().ok()
}

/// Reads a binary PGM or PPM; values come back normalized to [0,1].
pub fn read_raster(path: &Path) -> Result<Raster, ImageIoError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let display = path.display().to_string();
    if bytes.len() < 2 {
        return Err(ImageIoError::BadMagic { path: display });
    }
    let channels = match &bytes[0..2] {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(ImageIoError::BadMagic { path: display }),
    };
    let mut pos = 2;
    let header = || ImageIoError::BadHeader { path: path.display().to_string() };
    let width = next_token(&bytes, &mut pos).ok_or_else(header)? as usize;
    let height = next_token(&bytes, &mut pos).ok_or_else(header)? as usize;
    let maxval = next_token(&bytes, &mut pos).ok_or_else(header)?;
    if maxval != 255 {
        return Err(ImageIoError::UnsupportedMaxval { path: display, maxval });
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(header());
    }
    pos += 1;
    let need = width * height * channels;
    if bytes.len() < pos + need {
        return Err(ImageIoError::Truncated { path: display });
    }
    let data = bytes[pos..pos + need].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Raster { height, width, channels, data })
}

/// Writes a binary PGM (1 channel) or PPM (3 channels), quantizing to 8 bits.
pub fn write_raster(raster: &Raster, path: &Path) -> Result<(), ImageIoError> {
    let magic = match raster.channels {
        1 => "P5",
        3 => "P6",
        c => panic!("rasters with {c} channels have no PGM/PPM encoding"),
    };
    let mut bytes = format!("{magic}\n{} {}\n255\n", raster.width, raster.height).into_bytes();
    bytes.extend(raster.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Area-average resize; overlap-weighted so constants stay constant for any
/// (including fractional) scale factor.
pub fn resize_area(src: &Raster, out_height: usize, out_width: usize) -> Raster {
    assert!(out_height > 0 && out_width > 0, "resize target must be non-empty");
    if out_height == src.height && out_width == src.width {
        return src.clone();
    }
    let mut out = Raster::filled(out_height, out_width, src.channels, 0.0);
    let sy = src.height as f64 / out_height as f64;
    let sx = src.width as f64 / out_width as f64;
    for row in 0..out_height {
        let y0 = row as f64 * sy;
        let y1 = y0 + sy;
        let iy0 = y0.floor() as usize;
        let iy1 = (y1.ceil() as usize).min(src.height);
        for col in 0..out_width {
            let x0 = col as f64 * sx;
            let x1 = x0 + sx;
            let ix0 = x0.floor() as usize;
            let ix1 = (x1.ceil() as usize).min(src.width);
            for ch in 0..src.channels {
                let mut acc = 0.0;
                let mut area = 0.0;
                for iy in iy0..iy1 {
                    let wy = (y1.min((iy + 1) as f64) - y0.max(iy as f64)).max(0.0);
                    for ix in ix0..ix1 {
                        let wx = (x1.min((ix + 1) as f64) - x0.max(ix as f64)).max(0.0);
                        acc += wy * wx * src.get(iy, ix, ch);
                        area += wy * wx;
                    }
                }
                out.set(row, col, ch, acc / area);
            }
        }
    }
    out
}

/// Loads every `<timestamp>.pgm` / `<timestamp>.ppm` in a directory, sorted
/// by timestamp. An empty directory is a valid empty sequence.
pub fn load_image_sequence(dir: &Path) -> Result<(Vec<Raster>, Vec<f64>), ImageIoError> {
    let mut found: Vec<(f64, PathBuf)> = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let path = entry.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !matches!(ext, "pgm" | "ppm") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        let ts: f64 = stem
            .parse()
            .map_err(|_| ImageIoError::BadTimestamp { path: path.display().to_string() })?;
        found.push((ts, path));
    }
    found.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut frames = Vec::with_capacity(found.len());
    let mut timestamps = Vec::with_capacity(found.len());
    let mut channels = None;
    for (ts, path) in found {
        let raster = read_raster(&path)?;
        match channels {
            None => channels = Some(raster.channels),
            Some(expected) if expected != raster.channels => {
                return Err(ImageIoError::MixedChannels {
                    path: path.display().to_string(),
                    expected,
                    found: raster.channels,
                });
            }
            _ => {}
        }
        frames.push(raster);
        timestamps.push(ts);
    }
    Ok((frames, timestamps))
}
