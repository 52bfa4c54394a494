//! On-disk artifacts: region JSON, sensitivity CSV and binary graymaps.
//!
//! Floats are written with 17 significant digits so a saved region reloads
//! bit for bit and two identical runs produce identical files.

use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Polyhedron;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMeta {
    pub x_o: Vec<f64>,
    pub y_c: usize,
    pub y_t: usize,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMeta {
    #[serde(default)]
    pub query: Option<QueryMeta>,
    pub method: String,
    pub verified: bool,
    pub margin: f64,
    #[serde(default)]
    pub log10_under: Option<f64>,
    #[serde(default)]
    pub log10_over: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BoxBounds {
    lb: Vec<f64>,
    ub: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RegionFile {
    dim: usize,
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    c: Vec<f64>,
    #[serde(rename = "box")]
    bounds: BoxBounds,
    meta: RegionMeta,
}

/// JSON formatter that prints every float with 17 significant digits.
struct ExactFloats;

impl serde_json::ser::Formatter for ExactFloats {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

fn to_f64s<S: Scalar>(v: &[S]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

fn from_f64s<S: Scalar>(v: &[f64]) -> Vec<S> {
    v.iter().map(|&x| S::lit(x)).collect()
}

pub fn region_to_json<S: Scalar>(region: &Polyhedron<S>, meta: &RegionMeta) -> Result<String> {
    let file = RegionFile {
        dim: region.dim(),
        w: region.rows().iter().map(|r| to_f64s(r)).collect(),
        c: to_f64s(region.rhs()),
        bounds: BoxBounds {
            lb: to_f64s(region.lower()),
            ub: to_f64s(region.upper()),
        },
        meta: meta.clone(),
    };
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, ExactFloats);
    file.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

pub fn region_from_json<S: Scalar>(text: &str) -> Result<(Polyhedron<S>, RegionMeta)> {
    let file: RegionFile = serde_json::from_str(text)?;
    let n = file.dim;
    if file.bounds.lb.len() != n || file.bounds.ub.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: file.bounds.lb.len().min(file.bounds.ub.len()),
        });
    }
    if let Some(bad) = file.w.iter().find(|r| r.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: bad.len(),
        });
    }
    if file.w.len() != file.c.len() {
        return Err(Error::DimensionMismatch {
            expected: file.w.len(),
            got: file.c.len(),
        });
    }
    let region = Polyhedron::new(
        file.w.iter().map(|r| from_f64s(r)).collect(),
        from_f64s(&file.c),
        from_f64s(&file.bounds.lb),
        from_f64s(&file.bounds.ub),
    )?;
    Ok((region, file.meta))
}

/// Write via a temporary file in the same directory and rename, so readers
/// never see a partial file.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn save_region<S: Scalar>(path: impl AsRef<Path>, region: &Polyhedron<S>, meta: &RegionMeta) -> Result<()> {
    write_atomic(path, region_to_json(region, meta)?.as_bytes())
}

pub fn load_region<S: Scalar>(path: impl AsRef<Path>) -> Result<(Polyhedron<S>, RegionMeta)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    region_from_json(&text)
}

/// Image shape for a map of `n` values: square when `n` is a perfect
/// square, otherwise a single column.
pub fn map_shape(n: usize) -> (usize, usize) {
    let side = (n as f64).sqrt().round() as usize;
    if side * side == n {
        (side, side)
    } else {
        (1, n)
    }
}

/// Row-major CSV with `width` values per line.
pub fn sensitivity_csv(map: &[u32], width: usize) -> String {
    let mut out = String::new();
    for row in map.chunks(width.max(1)) {
        let line: Vec<String> = row.iter().map(u32::to_string).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_sensitivity_csv(text: &str) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        for field in line.split(',').filter(|f| !f.trim().is_empty()) {
            out.push(field.trim().parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("not an integer: `{field}`"),
            })?);
        }
    }
    Ok(out)
}

/// Binary graymap (P5, maxval 255) with pixel value `count - 1`.
pub fn sensitivity_pgm(map: &[u32], width: usize) -> Vec<u8> {
    let width = width.max(1);
    let height = map.len().div_ceil(width);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(map.iter().map(|&v| v.saturating_sub(1).min(255) as u8));
    out.resize(out.len() + width * height - map.len(), 0);
    out
}

/// Parse a P5 graymap written by [`sensitivity_pgm`]; returns width, height
/// and the pixel bytes.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |msg: &str| Error::Parse {
        line: 0,
        msg: msg.to_string(),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated graymap header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not a P5 graymap"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if max != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    let data = &bytes[pos + 1..];
    if data.len() != w * h {
        return Err(bad("pixel data length does not match header"));
    }
    Ok((w, h, data.to_vec()))
}
