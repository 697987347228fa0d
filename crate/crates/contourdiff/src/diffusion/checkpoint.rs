//! Versioned single-file model checkpoints.
//!
//! Layout: magic `CDCK`, format version, a JSON header describing the
//! schedule, architecture, and tensor index, then raw little-endian f32
//! tensor data in index order. Loading rebuilds the model from the header
//! before restoring weights, so a checkpoint is self-describing.

use std::io::{Read, Write};
use std::path::Path;

use candle_core::{Device, Tensor};
use candle_nn::VarMap;
use serde::{Deserialize, Serialize};

use crate::diffusion::schedule::{build_schedule, NoiseSchedule};
use crate::diffusion::unet::{build_unet, ArchDescriptor, UNet};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CDCK";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub t_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        build_schedule(self.t_steps, self.beta_min, self.beta_max)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schedule: ScheduleSpec,
    pub arch: ArchDescriptor,
    pub train_steps: usize,
    pub p_adj: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

fn bad(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint(format!("{}: {}", path.display(), message.into()))
}

pub fn save_checkpoint(path: &Path, varmap: &VarMap, meta: &CheckpointMeta) -> Result<()> {
    let data = varmap.data().lock().unwrap();
    let mut names: Vec<&String> = data.keys().collect();
    names.sort();
    let mut tensors = Vec::with_capacity(names.len());
    let mut blobs: Vec<Vec<f32>> = Vec::with_capacity(names.len());
    for name in &names {
        let var = &data[*name];
        let t = var.as_tensor();
        tensors.push(TensorEntry {
            name: (*name).clone(),
            shape: t.dims().to_vec(),
        });
        blobs.push(t.flatten_all()?.to_vec1::<f32>()?);
    }
    let header = Header {
        meta: meta.clone(),
        tensors,
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");

    let mut file = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
    );
    let write = |file: &mut dyn Write, bytes: &[u8]| -> Result<()> {
        file.write_all(bytes).map_err(|e| Error::io(path, e))
    };
    write(&mut file, MAGIC)?;
    write(&mut file, &FORMAT_VERSION.to_le_bytes())?;
    write(&mut file, &(header_json.len() as u64).to_le_bytes())?;
    write(&mut file, &header_json)?;
    for blob in &blobs {
        for v in blob {
            write(&mut file, &v.to_le_bytes())?;
        }
    }
    file.flush().map_err(|e| Error::io(path, e))
}

pub struct LoadedCheckpoint {
    pub model: UNet,
    pub varmap: VarMap,
    pub meta: CheckpointMeta,
    pub schedule: NoiseSchedule,
}

pub fn load_checkpoint(path: &Path, device: &Device) -> Result<LoadedCheckpoint> {
    let mut file = std::io::BufReader::new(
        std::fs::File::open(path).map_err(|e| Error::io(path, e))?,
    );
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(bad(path, "not a checkpoint file (bad magic)"));
    }
    let mut version = [0u8; 4];
    file.read_exact(&mut version).map_err(|e| Error::io(path, e))?;
    let version = u32::from_le_bytes(version);
    if version != FORMAT_VERSION {
        return Err(bad(
            path,
            format!("unsupported checkpoint version {version} (expected {FORMAT_VERSION})"),
        ));
    }
    let mut header_len = [0u8; 8];
    file.read_exact(&mut header_len).map_err(|e| Error::io(path, e))?;
    let mut header_json = vec![0u8; u64::from_le_bytes(header_len) as usize];
    file.read_exact(&mut header_json).map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| bad(path, format!("corrupt header: {e}")))?;

    let schedule = header.meta.schedule.build()?;
    let (model, varmap) = build_unet(&header.meta.arch, device)?;
    {
        let data = varmap.data().lock().unwrap();
        if data.len() != header.tensors.len() {
            return Err(bad(
                path,
                format!(
                    "tensor count mismatch: model has {}, checkpoint has {}",
                    data.len(),
                    header.tensors.len()
                ),
            ));
        }
        for entry in &header.tensors {
            let numel: usize = entry.shape.iter().product();
            let mut bytes = vec![0u8; numel * 4];
            file.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
            let values: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let var = data
                .get(&entry.name)
                .ok_or_else(|| bad(path, format!("unknown tensor `{}`", entry.name)))?;
            if var.dims() != entry.shape.as_slice() {
                return Err(bad(
                    path,
                    format!(
                        "tensor `{}` shape mismatch: model {:?}, checkpoint {:?}",
                        entry.name,
                        var.dims(),
                        entry.shape
                    ),
                ));
            }
            let tensor = Tensor::from_vec(values, entry.shape.clone(), device)?;
            var.set(&tensor)?;
        }
    }
    Ok(LoadedCheckpoint {
        model,
        varmap,
        meta: header.meta,
        schedule,
    })
}
