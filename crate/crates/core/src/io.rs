//! File formats: 8-bit PNG/PGM rasters, the `DFLD` field container and
//! minutiae CSV.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::DistortionField;
use crate::geom::Vec2;
use crate::minutiae::MinutiaSet;
use crate::raster::{FingerMask, GrayImage};

pub const DFLD_MAGIC: &[u8; 4] = b"DFLD";
pub const DFLD_VERSION: u32 = 1;

#[inline]
fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Quantises to the 8-bit grid used on disk.
pub fn quantize(img: &GrayImage) -> GrayImage {
    let data = img.data().iter().map(|v| to_u8(*v) as f32 / 255.0).collect();
    GrayImage::new(img.width(), img.height(), data).expect("same size")
}

pub fn gray_to_bytes(img: &GrayImage) -> Vec<u8> {
    img.data().iter().map(|v| to_u8(*v)).collect()
}

pub fn gray_from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<GrayImage> {
    GrayImage::new(width, height, bytes.iter().map(|b| *b as f32 / 255.0).collect())
}

fn is_pgm(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

/// Writes an 8-bit grayscale image; `.pgm` gets binary PGM, anything else PNG.
pub fn write_gray(path: &Path, img: &GrayImage) -> Result<()> {
    let bytes = gray_to_bytes(img);
    if is_pgm(path) {
        let mut f = fs::File::create(path)?;
        write!(f, "P5\n{} {}\n255\n", img.width(), img.height())?;
        f.write_all(&bytes)?;
        return Ok(());
    }
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, bytes)
        .ok_or_else(|| Error::Format("raster size overflow".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn read_gray(path: &Path) -> Result<GrayImage> {
    if is_pgm(path) {
        return read_pgm(&fs::read(path)?);
    }
    let img = image::open(path)?.into_luma8();
    gray_from_bytes(img.width() as usize, img.height() as usize, img.as_raw())
}

/// Parses ASCII (`P2`) or binary (`P5`) PGM with maxval ≤ 255.
pub fn read_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 0;
    let mut tokens = Vec::new();
    // header: magic, width, height, maxval, each separated by whitespace/comments
    while tokens.len() < 4 {
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
            return Err(Error::Format("truncated PGM header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM header field {s:?}")));
    let (w, h, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
    }
    let scale = maxval as f32;
    let data: Vec<f32> = match tokens[0].as_str() {
        "P5" => {
            pos += 1;
            let raw = bytes
                .get(pos..pos + w * h)
                .ok_or_else(|| Error::Format("truncated PGM raster".into()))?;
            raw.iter().map(|b| *b as f32 / scale).collect()
        }
        "P2" => {
            let text = String::from_utf8_lossy(&bytes[pos..]);
            let vals: std::result::Result<Vec<f32>, _> = text
                .split_ascii_whitespace()
                .take(w * h)
                .map(|t| t.parse::<u32>().map(|v| v as f32 / scale))
                .collect();
            vals.map_err(|_| Error::Format("bad PGM sample".into()))?
        }
        m => return Err(Error::Format(format!("unsupported PGM magic {m}"))),
    };
    GrayImage::new(w, h, data)
}

/// Writes ASCII PGM.
pub fn write_pgm_ascii(path: &Path, img: &GrayImage) -> Result<()> {
    let mut out = format!("P2\n{} {}\n255\n", img.width(), img.height());
    for row in gray_to_bytes(img).chunks(img.width()) {
        let line: Vec<String> = row.iter().map(|b| b.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_mask(path: &Path, mask: &FingerMask) -> Result<()> {
    let img = GrayImage::new(
        mask.width(),
        mask.height(),
        mask.bits().iter().map(|b| if *b { 1.0 } else { 0.0 }).collect(),
    )?;
    write_gray(path, &img)
}

pub fn read_mask(path: &Path) -> Result<FingerMask> {
    let img = read_gray(path)?;
    FingerMask::from_bits(img.width(), img.height(), img.data().iter().map(|v| *v >= 0.5).collect())
}

/// Encodes a field as `DFLD`: magic, version, grid size, block size, then
/// `x, y` pairs as little-endian `f32`, row-major.
pub fn encode_dfld(field: &DistortionField) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 8 * field.vectors().len());
    out.extend_from_slice(DFLD_MAGIC);
    for v in [DFLD_VERSION, field.grid_w() as u32, field.grid_h() as u32, field.block_size() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in field.vectors() {
        out.extend_from_slice(&(v.x as f32).to_le_bytes());
        out.extend_from_slice(&(v.y as f32).to_le_bytes());
    }
    out
}

pub fn decode_dfld(bytes: &[u8]) -> Result<DistortionField> {
    if bytes.len() < 20 || &bytes[..4] != DFLD_MAGIC {
        return Err(Error::Format("missing DFLD magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != DFLD_VERSION {
        return Err(Error::Format(format!("unsupported DFLD version {version}")));
    }
    let (gw, gh, block) = (u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize);
    let n = gw
        .checked_mul(gh)
        .ok_or_else(|| Error::Format("DFLD grid overflow".into()))?;
    if bytes.len() != 20 + 8 * n {
        return Err(Error::Format(format!(
            "DFLD payload is {} bytes, expected {}",
            bytes.len() - 20,
            8 * n
        )));
    }
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64;
    let vectors = (0..n)
        .map(|k| Vec2::new(f32_at(20 + 8 * k), f32_at(24 + 8 * k)))
        .collect();
    DistortionField::new(gw, gh, block, vectors)
}

pub fn write_dfld(path: &Path, field: &DistortionField) -> Result<()> {
    fs::write(path, encode_dfld(field))?;
    Ok(())
}

pub fn read_dfld(path: &Path) -> Result<DistortionField> {
    decode_dfld(&fs::read(path)?)
}

/// `id,x,y` CSV.
pub fn write_minutiae<W: Write>(w: W, set: &MinutiaSet) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["id", "x", "y"])?;
    for (id, p) in set.ids.iter().zip(&set.points) {
        wr.write_record([id.to_string(), p.x.to_string(), p.y.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_minutiae<R: Read>(r: R) -> Result<MinutiaSet> {
    let mut rd = csv::Reader::from_reader(BufReader::new(r));
    let headers = rd.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "x", "y"] {
        return Err(Error::Format(format!("expected header id,x,y, got {headers:?}")));
    }
    let mut ids = Vec::new();
    let mut points = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).ok_or_else(|| Error::Format("short minutia row".into()));
        ids.push(field(0)?.trim().parse::<u32>().map_err(|e| Error::Format(e.to_string()))?);
        let x = field(1)?.trim().parse::<f64>().map_err(|e| Error::Format(e.to_string()))?;
        let y = field(2)?.trim().parse::<f64>().map_err(|e| Error::Format(e.to_string()))?;
        points.push(Vec2::new(x, y));
    }
    MinutiaSet::new(ids, points)
}

pub fn write_minutiae_file(path: &Path, set: &MinutiaSet) -> Result<()> {
    write_minutiae(fs::File::create(path)?, set)
}

pub fn read_minutiae_file(path: &Path) -> Result<MinutiaSet> {
    read_minutiae(fs::File::open(path)?)
}

/// Reads `key=value` lines, skipping blanks and `#` comments.
pub fn read_key_values<R: Read>(r: R) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
