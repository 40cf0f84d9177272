//! On-disk formats.
//!
//! Matrices and rasters are little-endian binary: a 4-byte magic, two `u32`
//! dimensions, then row-major payload. `EPD1` holds a `rows x cols` matrix of
//! `f32`, `EPF1` an `H x W` raster of `f32`, and `EPB1` an `H x W` binary
//! heatmap with one byte (0 or 1) per cell. Keypoints are CSV text with the
//! header `x,y,score`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::detection::{BinaryHeatmap, Keypoint, KeypointList, Raster};
use crate::error::{Error, Result};

pub const DESCRIPTOR_MAGIC: &[u8; 4] = b"EPD1";
pub const RASTER_MAGIC: &[u8; 4] = b"EPF1";
pub const HEATMAP_MAGIC: &[u8; 4] = b"EPB1";
pub const KEYPOINT_HEADER: &str = "x,y,score";

fn read_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<(usize, usize)> {
    let mut buf = [0u8; 12];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("file shorter than its 12-byte header".into()))?;
    if &buf[..4] != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&buf[..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    let a = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    let b = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    if a == 0 || b == 0 {
        return Err(Error::Format(format!("empty {a}x{b} payload")));
    }
    Ok((a, b))
}

fn write_header<W: Write>(w: &mut W, magic: &[u8; 4], a: usize, b: usize) -> Result<()> {
    let dim = |n: usize| {
        u32::try_from(n).map_err(|_| Error::Format(format!("dimension {n} does not fit in u32")))
    };
    w.write_all(magic)?;
    w.write_all(&dim(a)?.to_le_bytes())?;
    w.write_all(&dim(b)?.to_le_bytes())?;
    Ok(())
}

fn read_exact_payload<R: Read>(r: &mut R, len: usize) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    r.take(len as u64 + 1).read_to_end(&mut payload)?;
    if payload.len() != len {
        return Err(Error::Format(format!(
            "payload is {}{} bytes, expected {len}",
            if payload.len() > len { "more than " } else { "" },
            payload.len().min(len)
        )));
    }
    Ok(payload)
}

fn read_f32_payload<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let bytes = read_exact_payload(r, count * 4)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect())
}

fn write_f32<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&(v as f32).to_le_bytes())?;
    Ok(())
}

/// Reads an `EPD1` matrix.
pub fn read_matrix<R: Read>(r: &mut R) -> Result<DMatrix<f64>> {
    let (rows, cols) = read_header(r, DESCRIPTOR_MAGIC)?;
    let values = read_f32_payload(r, rows * cols)?;
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

/// Writes an `EPD1` matrix; values are rounded to `f32`.
pub fn write_matrix<W: Write>(w: &mut W, m: &DMatrix<f64>) -> Result<()> {
    write_header(w, DESCRIPTOR_MAGIC, m.nrows(), m.ncols())?;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            write_f32(w, m[(r, c)])?;
        }
    }
    Ok(())
}

pub fn read_raster<R: Read>(r: &mut R) -> Result<Raster> {
    let (h, w) = read_header(r, RASTER_MAGIC)?;
    let values = read_f32_payload(r, h * w)?;
    Raster::new(h, w, values).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_raster<W: Write>(w: &mut W, raster: &Raster) -> Result<()> {
    write_header(w, RASTER_MAGIC, raster.height(), raster.width())?;
    for &v in raster.values() {
        write_f32(w, v)?;
    }
    Ok(())
}

pub fn read_heatmap<R: Read>(r: &mut R) -> Result<BinaryHeatmap> {
    let (h, w) = read_header(r, HEATMAP_MAGIC)?;
    let bytes = read_exact_payload(r, h * w)?;
    BinaryHeatmap::new(h, w, bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_heatmap<W: Write>(w: &mut W, map: &BinaryHeatmap) -> Result<()> {
    write_header(w, HEATMAP_MAGIC, map.height(), map.width())?;
    w.write_all(map.values())?;
    Ok(())
}

pub fn read_keypoints<R: BufRead>(r: R) -> Result<KeypointList> {
    let mut lines = r.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim_end_matches('\r') == KEYPOINT_HEADER => {}
        Some(Ok(h)) => return Err(Error::Format(format!("bad keypoint header {h:?}"))),
        Some(Err(e)) => return Err(e.into()),
        None => return Err(Error::Format("missing keypoint header".into())),
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Format(format!("line {}: bad number {s:?}", n + 2)))
        };
        if fields.len() != 3 {
            return Err(Error::Format(format!("line {}: expected 3 fields", n + 2)));
        }
        out.push(Keypoint::new(parse(fields[0])?, parse(fields[1])?, parse(fields[2])?));
    }
    Ok(out)
}

pub fn write_keypoints<W: Write>(w: &mut W, kps: &[Keypoint]) -> Result<()> {
    writeln!(w, "{KEYPOINT_HEADER}")?;
    for k in kps {
        writeln!(w, "{},{},{}", k.x, k.y, k.score)?;
    }
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    read_matrix(&mut open(path.as_ref())?)
}

pub fn save_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_matrix(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn load_raster(path: impl AsRef<Path>) -> Result<Raster> {
    read_raster(&mut open(path.as_ref())?)
}

pub fn save_raster(path: impl AsRef<Path>, raster: &Raster) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_raster(&mut w, raster)?;
    w.flush()?;
    Ok(())
}

pub fn load_heatmap(path: impl AsRef<Path>) -> Result<BinaryHeatmap> {
    read_heatmap(&mut open(path.as_ref())?)
}

pub fn save_heatmap(path: impl AsRef<Path>, map: &BinaryHeatmap) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_heatmap(&mut w, map)?;
    w.flush()?;
    Ok(())
}

pub fn load_keypoints(path: impl AsRef<Path>) -> Result<KeypointList> {
    read_keypoints(open(path.as_ref())?)
}

pub fn save_keypoints(path: impl AsRef<Path>, kps: &[Keypoint]) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_keypoints(&mut w, kps)?;
    w.flush()?;
    Ok(())
}
