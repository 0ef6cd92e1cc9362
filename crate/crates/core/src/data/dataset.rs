use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{normalize_hdr, ImagePair};
use crate::error::{Error, Result};
use crate::io::{read_hdr_file, read_ppm_file};

/// One matched `ldr/<stem>.ppm` and `hdr/<stem>.{pfm,hdr}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairEntry {
    pub stem: String,
    pub ldr_path: PathBuf,
    pub hdr_path: PathBuf,
}

#[derive(Clone, Debug, Default)]
pub struct ScanReport {
    pub pairs: Vec<PairEntry>,
    pub warnings: Vec<String>,
}

fn list_dir(dir: &Path, warnings: &mut Vec<String>) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        warnings.push(format!("{} does not exist", dir.display()));
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::file(dir, e))? {
        let path = entry.map_err(|e| Error::file(dir, e))?.path();
        if path.is_file() {
            out.push(path);
        }
    }
    Ok(out)
}

fn stem_and_ext(path: &Path) -> Option<(String, String)> {
    let stem = path.file_stem()?.to_str()?.to_string();
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    Some((stem, ext))
}

/// Matches LDR and HDR files by stem. Unmatched or unrecognized files are
/// reported as warnings; results are sorted by stem.
pub fn scan_dataset(root: &Path) -> Result<ScanReport> {
    if !root.is_dir() {
        return Err(Error::contract(format!(
            "dataset root {} is not a directory",
            root.display()
        )));
    }
    let mut warnings = Vec::new();

    let mut ldr = BTreeMap::new();
    for path in list_dir(&root.join("ldr"), &mut warnings)? {
        match stem_and_ext(&path) {
            Some((stem, ext)) if ext == "ppm" => {
                ldr.insert(stem, path);
            }
            _ => warnings.push(format!("ignoring {}", path.display())),
        }
    }

    let mut hdr: BTreeMap<String, PathBuf> = BTreeMap::new();
    for path in list_dir(&root.join("hdr"), &mut warnings)? {
        match stem_and_ext(&path) {
            Some((stem, ext)) if ext == "pfm" || ext == "hdr" => {
                // PFM is lossless, so it wins over RGBE for the same stem.
                if let Some(prev) = hdr.get(&stem) {
                    warnings.push(format!("both PFM and RGBE targets for {stem}; using PFM"));
                    if ext != "pfm" || prev.extension().is_some_and(|e| e == "pfm") {
                        continue;
                    }
                }
                hdr.insert(stem, path);
            }
            _ => warnings.push(format!("ignoring {}", path.display())),
        }
    }

    let mut pairs = Vec::new();
    for (stem, ldr_path) in ldr {
        match hdr.remove(&stem) {
            Some(hdr_path) => pairs.push(PairEntry {
                stem,
                ldr_path,
                hdr_path,
            }),
            None => warnings.push(format!("no HDR target for {stem}")),
        }
    }
    for stem in hdr.keys() {
        warnings.push(format!("no LDR input for {stem}"));
    }
    Ok(ScanReport { pairs, warnings })
}

/// Reads both images and normalizes the HDR target by its maximum.
pub fn load_pair(entry: &PairEntry) -> Result<ImagePair> {
    let ldr = read_ppm_file(&entry.ldr_path)?;
    let hdr = normalize_hdr(&read_hdr_file(&entry.hdr_path)?);
    ImagePair::new(ldr, hdr, entry.stem.clone())
}

#[derive(Clone, Debug, Default)]
pub struct LoadedDataset {
    pub pairs: Vec<ImagePair>,
    pub warnings: Vec<String>,
    /// Pairs that failed to load, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// Loads every matched pair; failures are collected rather than fatal.
pub fn load_dataset(root: &Path) -> Result<LoadedDataset> {
    let report = scan_dataset(root)?;
    let mut out = LoadedDataset {
        warnings: report.warnings,
        ..Default::default()
    };
    for entry in &report.pairs {
        match load_pair(entry) {
            Ok(p) => out.pairs.push(p),
            Err(e) => out.skipped.push((entry.stem.clone(), e.to_string())),
        }
    }
    Ok(out)
}
