//! Mask file formats.
//!
//! * 16-bit binary PGM (`P5`, maxval 65535, big-endian samples) for
//!   normalized masks; a sample is `round(v * 65535)`.
//! * Headerless CSV of reals, one image row per line, for raw masks.
//! * A JSON sidecar `<maskfile>.meta.json` describing the mask.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Mask, MaskError, NormalizationOp, NormalizedMask};

pub const META_VERSION: u32 = 1;
const PGM_MAXVAL: f64 = 65535.0;

#[derive(Debug, Error)]
pub enum MaskIoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {context}: {reason}")]
    Format { context: String, reason: String },
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("unsupported mask metadata version {found} (this build reads <= {supported})")]
    VersionMismatch { found: u32, supported: u32 },
}

impl MaskIoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        MaskIoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn format(context: impl Into<String>, reason: impl Into<String>) -> Self {
        MaskIoError::Format {
            context: context.into(),
            reason: reason.into(),
        }
    }
}

/// On-disk format, chosen by file extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskFormat {
    Pgm,
    Csv,
}

impl MaskFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("pgm") => Some(MaskFormat::Pgm),
            Some("csv") => Some(MaskFormat::Csv),
            _ => None,
        }
    }
}

/// A mask read from disk: PGM files are already normalized, CSV files are raw.
#[derive(Debug, Clone)]
pub enum LoadedMask {
    Normalized(NormalizedMask),
    Raw(Mask),
}

impl LoadedMask {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            LoadedMask::Normalized(m) => m.dims(),
            LoadedMask::Raw(m) => m.dims(),
        }
    }
}

pub fn encode_pgm(mask: &NormalizedMask) -> Vec<u8> {
    let header = format!("P5\n{} {}\n65535\n", mask.width(), mask.height());
    let mut out = Vec::with_capacity(header.len() + 2 * mask.values().len());
    out.extend_from_slice(header.as_bytes());
    for &v in mask.values() {
        let sample = (v * PGM_MAXVAL).round().clamp(0.0, PGM_MAXVAL) as u16;
        out.extend_from_slice(&sample.to_be_bytes());
    }
    out
}

/// The mask exactly as it reads back after a PGM round trip.
pub fn quantize(mask: &NormalizedMask) -> NormalizedMask {
    let values = mask
        .values()
        .iter()
        .map(|&v| (v * PGM_MAXVAL).round().clamp(0.0, PGM_MAXVAL) as u16 as f64 / PGM_MAXVAL)
        .collect();
    NormalizedMask::from_mask_unchecked(Mask::from_parts_unchecked(mask.width(), mask.height(), values))
}

/// Decodes a binary PGM. 8-bit files (maxval < 256) are accepted too.
pub fn decode_pgm(bytes: &[u8]) -> Result<NormalizedMask, MaskIoError> {
    let ctx = "pgm";
    let mut pos = 0usize;
    let next_token = |pos: &mut usize| -> Result<String, MaskIoError> {
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
            return Err(MaskIoError::format(ctx, "truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };

    let magic = next_token(&mut pos)?;
    if magic != "P5" {
        return Err(MaskIoError::format(ctx, format!("expected P5 magic, got {magic:?}")));
    }
    let parse = |s: String, what: &str| -> Result<usize, MaskIoError> {
        s.parse::<usize>()
            .map_err(|_| MaskIoError::format(ctx, format!("invalid {what} {s:?}")))
    };
    let width = parse(next_token(&mut pos)?, "width")?;
    let height = parse(next_token(&mut pos)?, "height")?;
    let maxval = parse(next_token(&mut pos)?, "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(MaskIoError::format(ctx, format!("maxval {maxval} out of range")));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(MaskIoError::format(ctx, "missing raster separator"));
    }
    pos += 1;
    let bytes_per_sample = if maxval < 256 { 1 } else { 2 };
    let n = width
        .checked_mul(height)
        .ok_or_else(|| MaskIoError::format(ctx, "dimensions overflow"))?;
    let raster = &bytes[pos..];
    if raster.len() != n * bytes_per_sample {
        return Err(MaskIoError::format(
            ctx,
            format!(
                "expected {} raster bytes for {width}x{height}, found {}",
                n * bytes_per_sample,
                raster.len()
            ),
        ));
    }
    let values: Vec<f64> = if bytes_per_sample == 1 {
        raster.iter().map(|&b| b as f64 / maxval as f64).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f64 / maxval as f64).min(1.0))
            .collect()
    };
    Ok(NormalizedMask::try_from(Mask::new(width, height, values)?)?)
}

pub fn encode_csv(mask: &Mask) -> String {
    let mut wtr = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    for row in mask.values().chunks(mask.width()) {
        wtr.write_record(row.iter().map(|v| v.to_string()))
            .expect("writing to memory");
    }
    String::from_utf8(wtr.into_inner().expect("flush to memory")).expect("csv output is utf-8")
}

pub fn decode_csv(text: &str) -> Result<Mask, MaskIoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut width = None;
    let mut values = Vec::new();
    let mut height = 0;
    for (line, record) in rdr.records().enumerate() {
        let record =
            record.map_err(|e| MaskIoError::format(format!("csv line {}", line + 1), e.to_string()))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(MaskIoError::format(
                    format!("csv line {}", line + 1),
                    format!("expected {w} columns, found {}", record.len()),
                ))
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| {
                MaskIoError::format(format!("csv line {}", line + 1), format!("not a number: {field:?}"))
            })?;
            values.push(v);
        }
        height += 1;
    }
    let width = width.ok_or_else(|| MaskIoError::format("csv", "empty file"))?;
    Ok(Mask::new(width, height, values)?)
}

pub fn write_pgm(path: &Path, mask: &NormalizedMask) -> Result<(), MaskIoError> {
    write_bytes(path, &encode_pgm(mask))
}

pub fn write_csv(path: &Path, mask: &Mask) -> Result<(), MaskIoError> {
    write_bytes(path, encode_csv(mask).as_bytes())
}

pub fn read_pgm(path: &Path) -> Result<NormalizedMask, MaskIoError> {
    let bytes = fs::read(path).map_err(|e| MaskIoError::io(path, e))?;
    decode_pgm(&bytes).map_err(|e| with_context(e, path))
}

pub fn read_csv(path: &Path) -> Result<Mask, MaskIoError> {
    let text = fs::read_to_string(path).map_err(|e| MaskIoError::io(path, e))?;
    decode_csv(&text).map_err(|e| with_context(e, path))
}

/// Reads a mask in whichever format its extension names.
pub fn read_mask_file(path: &Path) -> Result<LoadedMask, MaskIoError> {
    match MaskFormat::from_path(path) {
        Some(MaskFormat::Pgm) => read_pgm(path).map(LoadedMask::Normalized),
        Some(MaskFormat::Csv) => read_csv(path).map(LoadedMask::Raw),
        None => Err(MaskIoError::format(
            path.display().to_string(),
            "unknown mask extension (expected .pgm or .csv)",
        )),
    }
}

fn with_context(err: MaskIoError, path: &Path) -> MaskIoError {
    match err {
        MaskIoError::Format { context, reason } => MaskIoError::Format {
            context: format!("{} ({context})", path.display()),
            reason,
        },
        other => other,
    }
}

/// Writes through a temporary file and renames it into place.
pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), MaskIoError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| MaskIoError::io(parent, e))?;
        }
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| MaskIoError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| MaskIoError::io(&tmp, e))?;
    f.sync_all().map_err(|e| MaskIoError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| MaskIoError::io(path, e))
}

/// Sidecar metadata stored next to every mask file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskMeta {
    #[serde(default = "default_meta_version")]
    pub version: u32,
    pub image_id: String,
    pub method_id: String,
    pub detector_id: String,
    pub width: usize,
    pub height: usize,
    /// Pipeline that was (for PGM) or should be (for CSV) applied.
    #[serde(default)]
    pub pipeline: Vec<NormalizationOp>,
}

fn default_meta_version() -> u32 {
    META_VERSION
}

impl MaskMeta {
    pub fn sidecar_path(mask_path: &Path) -> PathBuf {
        let mut name = mask_path.as_os_str().to_os_string();
        name.push(".meta.json");
        PathBuf::from(name)
    }

    pub fn read(path: &Path) -> Result<Self, MaskIoError> {
        let text = fs::read_to_string(path).map_err(|e| MaskIoError::io(path, e))?;
        let meta: MaskMeta = serde_json::from_str(&text)
            .map_err(|e| MaskIoError::format(path.display().to_string(), e.to_string()))?;
        if meta.version > META_VERSION {
            return Err(MaskIoError::VersionMismatch {
                found: meta.version,
                supported: META_VERSION,
            });
        }
        Ok(meta)
    }

    pub fn write(&self, path: &Path) -> Result<(), MaskIoError> {
        let mut text = serde_json::to_string_pretty(self).expect("meta serializes");
        text.push('\n');
        write_bytes(path, text.as_bytes())
    }
}
