//! Dataset persistence: a manifest plus per-scan PSEG rasters.
//!
//! Raster header is 16 bytes: magic "PSEG", version u16, H u16, W u16,
//! dtype u16 (1 = u8, 2 = f64 LE), 4 reserved bytes. Round-trips are
//! bit-exact.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use crate::dataset::{Dataset, Scan, SplitTag};
use crate::error::{Error, Result};
use crate::grid::{Grid, Image, Mask};

const MAGIC: &[u8; 4] = b"PSEG";
const VERSION: u16 = 1;
const DTYPE_U8: u16 = 1;
const DTYPE_F64: u16 = 2;

fn write_header(buf: &mut Vec<u8>, h: usize, w: usize, dtype: u16) {
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(h as u16).to_le_bytes());
    buf.extend_from_slice(&(w as u16).to_le_bytes());
    buf.extend_from_slice(&dtype.to_le_bytes());
    buf.extend_from_slice(&[0u8; 4]);
}

fn read_header(bytes: &[u8], path: &Path) -> Result<(usize, usize, u16)> {
    if bytes.len() < 16 || &bytes[0..4] != MAGIC {
        return Err(Error::parse(format!("{}: not a PSEG raster", path.display())));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::parse(format!(
            "{}: unsupported PSEG version {}",
            path.display(),
            version
        )));
    }
    let h = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let w = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let dtype = u16::from_le_bytes([bytes[10], bytes[11]]);
    Ok((h, w, dtype))
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + mask.data().len());
    write_header(&mut buf, mask.h(), mask.w(), DTYPE_U8);
    buf.extend_from_slice(mask.data());
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let bytes = fs::read(path)?;
    let (h, w, dtype) = read_header(&bytes, path)?;
    if dtype != DTYPE_U8 {
        return Err(Error::parse(format!(
            "{}: expected u8 raster, got dtype {}",
            path.display(),
            dtype
        )));
    }
    if bytes.len() != 16 + h * w {
        return Err(Error::parse(format!("{}: truncated raster", path.display())));
    }
    let mask = Grid::from_vec(h, w, bytes[16..].to_vec())?;
    mask.validate_binary()
        .map_err(|e| Error::parse(format!("{}: {}", path.display(), e)))?;
    Ok(mask)
}

pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + image.data().len() * 8);
    write_header(&mut buf, image.h(), image.w(), DTYPE_F64);
    for v in image.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path)?;
    let (h, w, dtype) = read_header(&bytes, path)?;
    if dtype != DTYPE_F64 {
        return Err(Error::parse(format!(
            "{}: expected f64 raster, got dtype {}",
            path.display(),
            dtype
        )));
    }
    if bytes.len() != 16 + h * w * 8 {
        return Err(Error::parse(format!("{}: truncated raster", path.display())));
    }
    let data = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Grid::from_vec(h, w, data)
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    spacing: (f64, f64),
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden_style: Option<u32>,
    image: String,
    mask: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    split_tag: SplitTag,
    scans: Vec<ManifestEntry>,
}

/// Saves a dataset as a directory with manifest.json and per-scan rasters.
pub fn save_dataset(d: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(d.scans.len());
    for scan in &d.scans {
        let image_name = format!("{}_image.pseg", scan.id);
        let mask_name = format!("{}_mask.pseg", scan.id);
        write_image(&dir.join(&image_name), &scan.image)?;
        write_mask(&dir.join(&mask_name), &scan.reference_mask)?;
        entries.push(ManifestEntry {
            id: scan.id.clone(),
            spacing: scan.spacing,
            hidden_style: scan.hidden_style,
            image: image_name,
            mask: mask_name,
        });
    }
    let manifest = Manifest {
        version: 1,
        split_tag: d.split_tag,
        scans: entries,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::parse(e.to_string()))?;
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    let json = fs::read_to_string(&manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&json)
        .map_err(|e| Error::parse(format!("{}: {}", manifest_path.display(), e)))?;
    let mut scans = Vec::with_capacity(manifest.scans.len());
    for entry in manifest.scans {
        let image = read_image(&dir.join(&entry.image))?;
        let mask = read_mask(&dir.join(&entry.mask))
            .map_err(|e| Error::parse(format!("scan {}: {}", entry.id, e)))?;
        scans.push(Scan {
            id: entry.id,
            image,
            reference_mask: mask,
            spacing: entry.spacing,
            hidden_style: entry.hidden_style,
        });
    }
    Dataset::new(scans, manifest.split_tag)
}
