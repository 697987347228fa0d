//! Slice images, masks, volumes and their on-disk layout.
//!
//! Pixels live in `[0, 1]` everywhere in the library; the diffusion core
//! rescales to `[-1, 1]` at its own boundary. Slices are stored as 8-bit
//! grayscale PNG regardless of the source bit depth.

mod config;
mod manifest;

pub use config::RunConfig;
pub use manifest::{load_manifest, save_manifest, DatasetManifest, ManifestEntry};

use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BitDepth {
    Eight,
    Twelve,
}

impl BitDepth {
    pub fn max_value(self) -> u16 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Twelve => 4095,
        }
    }

    pub fn bits(self) -> u8 {
        match self {
            BitDepth::Eight => 8,
            BitDepth::Twelve => 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Input,
    Output,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Input => write!(f, "input"),
            Domain::Output => write!(f, "output"),
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "input" => Ok(Domain::Input),
            "output" => Ok(Domain::Output),
            other => Err(format!("unknown domain `{other}`")),
        }
    }
}

/// A single 2-D grayscale slice with unit-normalized intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceImage {
    pixels: Vec<f32>,
    height: usize,
    width: usize,
    pub source_bit_depth: BitDepth,
}

impl SliceImage {
    pub fn new(pixels: Vec<f32>, height: usize, width: usize, bit_depth: BitDepth) -> Self {
        assert_eq!(pixels.len(), height * width, "pixel buffer size mismatch");
        debug_assert!(
            pixels.iter().all(|&p| (0.0..=1.0).contains(&p)),
            "pixels outside [0, 1]"
        );
        SliceImage {
            pixels,
            height,
            width,
            source_bit_depth: bit_depth,
        }
    }

    pub fn constant(value: f32, height: usize, width: usize) -> Self {
        SliceImage::new(vec![value; height * width], height, width, BitDepth::Eight)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.pixels[row * self.width + col] = value;
    }

    pub fn mean(&self) -> f32 {
        if self.pixels.is_empty() {
            return 0.0;
        }
        self.pixels.iter().sum::<f32>() / self.pixels.len() as f32
    }

    /// Mean absolute per-pixel difference to another slice of the same shape.
    pub fn mean_abs_diff(&self, other: &SliceImage) -> f32 {
        assert_eq!(self.pixels.len(), other.pixels.len());
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs())
            .sum::<f32>()
            / self.pixels.len() as f32
    }
}

/// A boolean mask shape-matched to its slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pixels: Vec<bool>,
    height: usize,
    width: usize,
}

impl BinaryMask {
    pub fn new(pixels: Vec<bool>, height: usize, width: usize) -> Self {
        assert_eq!(pixels.len(), height * width, "mask buffer size mismatch");
        BinaryMask {
            pixels,
            height,
            width,
        }
    }

    pub fn empty(height: usize, width: usize) -> Self {
        BinaryMask::new(vec![false; height * width], height, width)
    }

    pub fn full(height: usize, width: usize) -> Self {
        BinaryMask::new(vec![true; height * width], height, width)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [bool] {
        &mut self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.pixels[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// An ordered stack of slices with optional per-slice masks.
#[derive(Debug, Clone)]
pub struct Volume {
    pub volume_id: String,
    pub slices: Vec<SliceImage>,
    pub masks: Option<Vec<BinaryMask>>,
    pub domain: Domain,
    /// Physical voxel size in mm, (slice axis, row, col).
    pub spacing: [f64; 3],
}

impl Volume {
    pub fn new(volume_id: impl Into<String>, slices: Vec<SliceImage>, domain: Domain) -> Self {
        Volume {
            volume_id: volume_id.into(),
            slices,
            masks: None,
            domain,
            spacing: [1.0, 1.0, 1.0],
        }
    }

    pub fn with_masks(mut self, masks: Vec<BinaryMask>) -> Self {
        assert_eq!(masks.len(), self.slices.len(), "one mask per slice");
        self.masks = Some(masks);
        self
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }
}

/// Normalize raw integer intensities to `[0, 1]` by the full bit-depth range.
pub fn normalize(raw: &[u16], height: usize, width: usize, bit_depth: BitDepth) -> Result<SliceImage> {
    assert_eq!(raw.len(), height * width, "raw buffer size mismatch");
    let max = bit_depth.max_value();
    for (i, &v) in raw.iter().enumerate() {
        if v > max {
            return Err(Error::PixelOutOfRange {
                value: v as u32,
                row: i / width,
                col: i % width,
                bit_depth: bit_depth.bits(),
            });
        }
    }
    let scale = 1.0 / max as f32;
    let pixels = raw.iter().map(|&v| v as f32 * scale).collect();
    Ok(SliceImage::new(pixels, height, width, bit_depth))
}

fn slice_file_name(volume_id: &str, idx: usize) -> String {
    format!("{volume_id}_{idx:04}.png")
}

fn mask_file_name(volume_id: &str, idx: usize) -> String {
    format!("{volume_id}_{idx:04}_mask.png")
}

fn write_gray_png(path: &Path, data: Vec<u8>, height: usize, width: usize) -> Result<()> {
    let img = image::GrayImage::from_raw(width as u32, height as u32, data)
        .expect("buffer matches dimensions");
    img.save(path)?;
    Ok(())
}

/// Write one 8-bit grayscale PNG per slice (and mask) and return the manifest
/// entry describing the volume. Paths in the entry are relative to `directory`.
pub fn save_volume(volume: &Volume, directory: &Path) -> Result<ManifestEntry> {
    std::fs::create_dir_all(directory).map_err(|e| Error::io(directory, e))?;
    let mut slice_paths = Vec::with_capacity(volume.len());
    for (idx, slice) in volume.slices.iter().enumerate() {
        let name = slice_file_name(&volume.volume_id, idx);
        let data: Vec<u8> = slice
            .pixels()
            .iter()
            .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        write_gray_png(&directory.join(&name), data, slice.height(), slice.width())?;
        slice_paths.push(PathBuf::from(name));
    }
    let mask_paths = match &volume.masks {
        Some(masks) => {
            let mut paths = Vec::with_capacity(masks.len());
            for (idx, mask) in masks.iter().enumerate() {
                let name = mask_file_name(&volume.volume_id, idx);
                let data: Vec<u8> = mask
                    .pixels()
                    .iter()
                    .map(|&p| if p { 255 } else { 0 })
                    .collect();
                write_gray_png(&directory.join(&name), data, mask.height(), mask.width())?;
                paths.push(PathBuf::from(name));
            }
            Some(paths)
        }
        None => None,
    };
    Ok(ManifestEntry {
        volume_id: volume.volume_id.clone(),
        domain: volume.domain,
        slice_paths,
        mask_paths,
    })
}

fn load_gray_png(path: &Path) -> Result<SliceImage> {
    let img = image::open(path)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image(other),
        })?
        .into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Ok(SliceImage::new(pixels, h, w, BitDepth::Eight))
}

/// Load a volume described by a manifest entry; paths resolve against `base_dir`.
pub fn load_volume(entry: &ManifestEntry, base_dir: &Path) -> Result<Volume> {
    let mut slices = Vec::with_capacity(entry.slice_paths.len());
    for p in &entry.slice_paths {
        slices.push(load_gray_png(&base_dir.join(p))?);
    }
    let mut volume = Volume::new(entry.volume_id.clone(), slices, entry.domain);
    if let Some(mask_paths) = &entry.mask_paths {
        let mut masks = Vec::with_capacity(mask_paths.len());
        for p in mask_paths {
            let img = load_gray_png(&base_dir.join(p))?;
            let pixels = img.pixels().iter().map(|&v| v > 0.5).collect();
            masks.push(BinaryMask::new(pixels, img.height(), img.width()));
        }
        volume = volume.with_masks(masks);
    }
    Ok(volume)
}

/// Save a list of volumes plus the manifest that indexes them.
pub fn save_dataset(volumes: &[Volume], directory: &Path) -> Result<DatasetManifest> {
    let mut entries = Vec::with_capacity(volumes.len());
    for v in volumes {
        entries.push(save_volume(v, directory)?);
    }
    let manifest = DatasetManifest { entries };
    save_manifest(&manifest, &directory.join("manifest.tsv"))?;
    Ok(manifest)
}

/// Load every volume named by a manifest file.
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<Volume>> {
    let manifest = load_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    manifest
        .entries
        .iter()
        .map(|e| load_volume(e, base))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_saturation_and_zero() {
        let img = normalize(&[255; 4], 2, 2, BitDepth::Eight).unwrap();
        assert!(img.pixels().iter().all(|&p| p == 1.0));
        let img = normalize(&[0; 4], 2, 2, BitDepth::Eight).unwrap();
        assert!(img.pixels().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn normalize_twelve_bit_values() {
        // 4095 / 4095 = 1.0; 2048 / 4095 ≈ 0.50012
        let img = normalize(&[4095, 2048], 1, 2, BitDepth::Twelve).unwrap();
        assert_eq!(img.get(0, 0), 1.0);
        assert!((img.get(0, 1) - 2048.0 / 4095.0).abs() < 1e-7);
        assert!((img.get(0, 1) - 0.50012).abs() < 1e-4);
    }

    #[test]
    fn normalize_rejects_out_of_range_with_index() {
        let err = normalize(&[0, 0, 300, 0], 2, 2, BitDepth::Eight).unwrap_err();
        match err {
            Error::PixelOutOfRange { value, row, col, bit_depth } => {
                assert_eq!((value, row, col, bit_depth), (300, 1, 0, 8));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn normalize_is_monotone() {
        let img = normalize(&[0, 1, 100, 254, 255], 1, 5, BitDepth::Eight).unwrap();
        for i in 1..5 {
            assert!(img.get(0, i) > img.get(0, i - 1));
        }
    }

    #[test]
    fn save_load_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let slice = SliceImage::new(
            (0..64).map(|i| i as f32 / 63.0).collect(),
            8,
            8,
            BitDepth::Eight,
        );
        let vol = Volume::new("v0", vec![slice.clone()], Domain::Input);
        let entry = save_volume(&vol, dir.path()).unwrap();
        let loaded = load_volume(&entry, dir.path()).unwrap();
        let max_diff = slice
            .pixels()
            .iter()
            .zip(loaded.slices[0].pixels())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_diff <= 1.0 / 255.0 + 1e-6, "max diff {max_diff}");
    }

    #[test]
    fn save_volume_names_files_zero_padded() {
        let dir = tempfile::tempdir().unwrap();
        let slices = vec![SliceImage::constant(0.5, 4, 4); 12];
        let vol = Volume::new("vol", slices, Domain::Output);
        let entry = save_volume(&vol, dir.path()).unwrap();
        assert_eq!(entry.slice_paths[0], PathBuf::from("vol_0000.png"));
        assert_eq!(entry.slice_paths[11], PathBuf::from("vol_0011.png"));
        assert!(dir.path().join("vol_0011.png").exists());
    }

    #[test]
    fn constant_half_stores_as_128() {
        let dir = tempfile::tempdir().unwrap();
        let vol = Volume::new("c", vec![SliceImage::constant(0.5, 2, 2)], Domain::Input);
        let entry = save_volume(&vol, dir.path()).unwrap();
        let loaded = load_volume(&entry, dir.path()).unwrap();
        // round(0.5 * 255) = 128, reload gives 128/255
        assert!(loaded.slices[0]
            .pixels()
            .iter()
            .all(|&p| (p - 128.0 / 255.0).abs() < 1e-7));
    }

    #[test]
    fn masks_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut mask = BinaryMask::empty(4, 4);
        mask.set(1, 2, true);
        mask.set(3, 3, true);
        let vol = Volume::new("m", vec![SliceImage::constant(0.0, 4, 4)], Domain::Input)
            .with_masks(vec![mask.clone()]);
        let entry = save_volume(&vol, dir.path()).unwrap();
        let loaded = load_volume(&entry, dir.path()).unwrap();
        assert_eq!(loaded.masks.unwrap()[0], mask);
    }
}
