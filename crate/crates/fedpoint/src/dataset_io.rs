//! On-disk dataset layout: one directory per site holding a plain-text
//! manifest and one binary file per slide.
//!
//! Slide format: magic `FPTS`, format version (u16 LE), point count (u32 LE),
//! feature dimension (u32 LE), label (u8), then coordinates as `n x 3` f32 LE
//! and features as `n x d` f32 LE. Values are generated on an f32 grid, so
//! the round trip through this format is bit-exact.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use fedpoint_core::points::PointSet;
use fedpoint_core::synth::realized_gamma;

pub const SLIDE_MAGIC: &[u8; 4] = b"FPTS";
pub const SLIDE_VERSION: u16 = 1;

#[derive(Debug)]
pub enum DatasetError {
    Io(std::io::Error),
    Format(String),
}

impl fmt::Display for DatasetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetError::Io(e) => write!(f, "dataset io error: {e}"),
            DatasetError::Format(m) => write!(f, "dataset format error: {m}"),
        }
    }
}

impl std::error::Error for DatasetError {}

impl From<std::io::Error> for DatasetError {
    fn from(e: std::io::Error) -> Self {
        DatasetError::Io(e)
    }
}

fn format_err(msg: impl Into<String>) -> DatasetError {
    DatasetError::Format(msg.into())
}

pub fn write_slide(path: &Path, slide: &PointSet) -> Result<(), DatasetError> {
    let n = slide.len() as u32;
    let d = slide.feature_dim() as u32;
    let mut buf = Vec::with_capacity(4 + 2 + 4 + 4 + 1 + slide.len() * (3 + slide.feature_dim()) * 4);
    buf.extend_from_slice(SLIDE_MAGIC);
    buf.extend_from_slice(&SLIDE_VERSION.to_le_bytes());
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&d.to_le_bytes());
    buf.push(slide.label());
    for &c in slide.coords() {
        buf.extend_from_slice(&(c as f32).to_le_bytes());
    }
    for &v in slide.features() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_slide(path: &Path) -> Result<PointSet, DatasetError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut off = 0usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8], DatasetError> {
        if *off + n > bytes.len() {
            return Err(format_err(format!(
                "{}: truncated at byte {} (wanted {n} more)",
                path.display(),
                *off
            )));
        }
        let s = &bytes[*off..*off + n];
        *off += n;
        Ok(s)
    };
    let magic = take(&mut off, 4)?;
    if magic != SLIDE_MAGIC {
        return Err(format_err(format!(
            "{}: bad magic {magic:?}, not a slide file",
            path.display()
        )));
    }
    let version = u16::from_le_bytes(take(&mut off, 2)?.try_into().unwrap());
    if version != SLIDE_VERSION {
        return Err(format_err(format!(
            "{}: unsupported version {version} (expected {SLIDE_VERSION})",
            path.display()
        )));
    }
    let n = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let label = take(&mut off, 1)?[0];
    if label > 1 {
        return Err(format_err(format!("{}: label {label} is not binary", path.display())));
    }
    if d == 0 {
        return Err(format_err(format!("{}: zero feature dimension", path.display())));
    }
    let mut coords = Vec::with_capacity(n * 3);
    for _ in 0..n * 3 {
        let v = f32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
        coords.push(v as f64);
    }
    let mut features = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        let v = f32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
        features.push(v as f64);
    }
    if off != bytes.len() {
        return Err(format_err(format!(
            "{}: {} trailing bytes",
            path.display(),
            bytes.len() - off
        )));
    }
    PointSet::new(coords, features, d, label).map_err(|e| format_err(format!("{e}")))
}

/// One site as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteOnDisk {
    pub name: String,
    pub gamma: f64,
    pub unseen: bool,
    pub slides: Vec<PointSet>,
}

/// Write one site directory: `manifest.txt` plus numbered slide files.
pub fn write_site(root: &Path, site: &SiteOnDisk) -> Result<(), DatasetError> {
    let dir = root.join(&site.name);
    fs::create_dir_all(&dir)?;
    let mut manifest = String::new();
    manifest.push_str(&format!("site = {}\n", site.name));
    manifest.push_str(&format!("gamma = {}\n", site.gamma));
    manifest.push_str(&format!("unseen = {}\n", site.unseen));
    manifest.push_str(&format!("slides = {}\n", site.slides.len()));
    for (i, slide) in site.slides.iter().enumerate() {
        let file = format!("slide_{i:04}.fpts");
        write_slide(&dir.join(&file), slide)?;
        manifest.push_str(&format!("slide = {file}\n"));
    }
    fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

/// Read one site directory back.
pub fn read_site(dir: &Path) -> Result<SiteOnDisk, DatasetError> {
    let manifest_path = dir.join("manifest.txt");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| format_err(format!("{}: {e}", manifest_path.display())))?;
    let mut name = None;
    let mut gamma = None;
    let mut unseen = false;
    let mut files = Vec::new();
    for line in text.lines() {
        let Some((k, v)) = line.split_once('=') else {
            continue;
        };
        let (k, v) = (k.trim(), v.trim());
        match k {
            "site" => name = Some(v.to_string()),
            "gamma" => {
                gamma = Some(v.parse::<f64>().map_err(|_| {
                    format_err(format!("{}: bad gamma {v:?}", manifest_path.display()))
                })?)
            }
            "unseen" => unseen = v == "true",
            "slide" => files.push(v.to_string()),
            _ => {}
        }
    }
    if files.is_empty() {
        return Err(format_err(format!(
            "{}: no slides listed in manifest",
            dir.display()
        )));
    }
    let mut slides = Vec::with_capacity(files.len());
    for f in &files {
        slides.push(read_slide(&dir.join(f))?);
    }
    Ok(SiteOnDisk {
        name: name.unwrap_or_else(|| {
            dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
        }),
        gamma: gamma
            .or_else(|| realized_gamma(&slides))
            .ok_or_else(|| format_err(format!("{}: gamma undetermined", dir.display())))?,
        unseen,
        slides,
    })
}

/// Write a whole dataset. Refuses to touch an existing directory unless
/// `force` is set.
pub fn write_dataset(root: &Path, sites: &[SiteOnDisk], force: bool) -> Result<(), DatasetError> {
    if root.exists() && !force {
        return Err(format_err(format!(
            "{} already exists; pass --force to overwrite",
            root.display()
        )));
    }
    if root.exists() {
        fs::remove_dir_all(root)?;
    }
    fs::create_dir_all(root)?;
    for site in sites {
        write_site(root, site)?;
    }
    Ok(())
}

/// Read every site directory under `root`, sorted by name.
pub fn read_dataset(root: &Path) -> Result<Vec<SiteOnDisk>, DatasetError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| format_err(format!("{}: {e}", root.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(format_err(format!("{}: no site directories", root.display())));
    }
    dirs.iter().map(|d| read_site(d)).collect()
}
