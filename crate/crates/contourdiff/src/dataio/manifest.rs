//! Line-oriented dataset manifest.
//!
//! One line per slice: `volume_id<TAB>domain<TAB>slice_path[<TAB>mask_path]`.
//! Lines of a volume are contiguous and in slice order; paths are relative to
//! the manifest file.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::dataio::Domain;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub volume_id: String,
    pub domain: Domain,
    pub slice_paths: Vec<PathBuf>,
    pub mask_paths: Option<Vec<PathBuf>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let mut out = String::new();
    for entry in &manifest.entries {
        for (i, slice) in entry.slice_paths.iter().enumerate() {
            out.push_str(&entry.volume_id);
            out.push('\t');
            out.push_str(&entry.domain.to_string());
            out.push('\t');
            out.push_str(&slice.to_string_lossy());
            if let Some(masks) = &entry.mask_paths {
                out.push('\t');
                out.push_str(&masks[i].to_string_lossy());
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let manifest_err = |line: usize, message: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut entries: Vec<ManifestEntry> = Vec::new();
    let mut closed_ids: HashSet<String> = HashSet::new();

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() < 3 || fields.len() > 4 {
            return Err(manifest_err(
                lineno,
                format!("expected 3 or 4 tab-separated fields, got {}", fields.len()),
            ));
        }
        let volume_id = fields[0].to_string();
        let domain: Domain = fields[1]
            .parse()
            .map_err(|e: String| manifest_err(lineno, e))?;
        let slice_path = PathBuf::from(fields[2]);
        let mask_path = fields.get(3).map(PathBuf::from);

        if !base.join(&slice_path).exists() {
            return Err(Error::MissingFile(base.join(&slice_path)));
        }
        if let Some(mp) = &mask_path {
            if !base.join(mp).exists() {
                return Err(Error::MissingFile(base.join(mp)));
            }
        }

        let continues_current = entries
            .last()
            .is_some_and(|e: &ManifestEntry| e.volume_id == volume_id);
        if continues_current {
            let entry = entries.last_mut().unwrap();
            if entry.domain != domain {
                return Err(manifest_err(
                    lineno,
                    format!("domain changed within volume `{volume_id}`"),
                ));
            }
            if entry.mask_paths.is_some() != mask_path.is_some() {
                return Err(manifest_err(
                    lineno,
                    format!("inconsistent mask presence within volume `{volume_id}`"),
                ));
            }
            entry.slice_paths.push(slice_path);
            if let (Some(masks), Some(mp)) = (&mut entry.mask_paths, mask_path) {
                masks.push(mp);
            }
        } else {
            if closed_ids.contains(&volume_id) {
                return Err(manifest_err(
                    lineno,
                    format!("duplicate volume_id `{volume_id}`"),
                ));
            }
            if let Some(prev) = entries.last() {
                closed_ids.insert(prev.volume_id.clone());
            }
            entries.push(ManifestEntry {
                volume_id,
                domain,
                slice_paths: vec![slice_path],
                mask_paths: mask_path.map(|mp| vec![mp]),
            });
        }
    }
    Ok(DatasetManifest { entries })
}
