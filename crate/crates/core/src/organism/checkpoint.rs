//! On-disk format: a directory holding `manifest.json` and `tensors.bin`
//! (little-endian f32, row-major, tensors back to back at the recorded
//! byte offsets).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Attention, Block, GroundTruth, Matrix, ModelConfig, Organism, PlantSpec, Weights};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSORS_FILE: &str = "tensors.bin";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: ModelConfig,
    plant_spec: PlantSpec,
    ground_truth: GroundTruth,
    fingerprint: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    offset: usize,
    shape: Vec<usize>,
}

pub fn save_checkpoint(organism: &Organism, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for (name, shape, data) in organism.weights().tensors() {
        tensors.push(TensorEntry {
            name,
            offset: blob.len(),
            shape,
        });
        for x in data {
            blob.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: organism.config().clone(),
        plant_spec: organism.spec().clone(),
        ground_truth: organism.ground_truth().clone(),
        fingerprint: organism.fingerprint().to_string(),
        tensors,
    };
    let tensors_path = dir.join(TENSORS_FILE);
    fs::write(&tensors_path, &blob).map_err(|e| Error::io(&tensors_path, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest)?;
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(())
}

fn skeleton(config: &ModelConfig) -> Weights {
    let (d, m, v) = (config.hidden_dim, config.mlp_width, config.vocab_size);
    let blocks = (0..config.num_layers)
        .map(|l| Block {
            attention: config.attention_enabled_layers.contains(&l).then(|| Attention {
                wq: Matrix::zeros(d, d),
                bq: vec![0.0; d],
                wk: Matrix::zeros(d, d),
                wv: Matrix::zeros(d, d),
                wo: Matrix::zeros(d, d),
            }),
            w_gate: Matrix::zeros(d, m),
            b_gate: vec![0.0; m],
            w_in: Matrix::zeros(d, m),
            b_in: vec![0.0; m],
            w_out: Matrix::zeros(m, d),
        })
        .collect();
    Weights {
        embed: Matrix::zeros(v, d),
        blocks,
        unembed: Matrix::zeros(d, v),
    }
}

fn tensor_slots(w: &mut Weights) -> Vec<&mut [f32]> {
    let mut out: Vec<&mut [f32]> = vec![&mut w.embed.data];
    for b in w.blocks.iter_mut() {
        if let Some(a) = b.attention.as_mut() {
            out.push(&mut a.wq.data);
            out.push(&mut a.bq);
            out.push(&mut a.wk.data);
            out.push(&mut a.wv.data);
            out.push(&mut a.wo.data);
        }
        out.push(&mut b.w_gate.data);
        out.push(&mut b.b_gate);
        out.push(&mut b.w_in.data);
        out.push(&mut b.b_in);
        out.push(&mut b.w_out.data);
    }
    out.push(&mut w.unembed.data);
    out
}

pub fn load_checkpoint(dir: &Path) -> Result<Organism> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let raw = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_slice(&raw).map_err(|e| Error::CorruptManifest(e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::CorruptManifest(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    manifest
        .config
        .validate()
        .map_err(|e| Error::CorruptManifest(e.to_string()))?;

    let mut weights = skeleton(&manifest.config);
    let expected: Vec<(String, Vec<usize>)> = weights
        .tensors()
        .into_iter()
        .map(|(name, shape, _)| (name, shape))
        .collect();
    if expected.len() != manifest.tensors.len() {
        return Err(Error::CorruptManifest(format!(
            "expected {} tensors, manifest lists {}",
            expected.len(),
            manifest.tensors.len()
        )));
    }
    for ((name, shape), entry) in expected.iter().zip(&manifest.tensors) {
        if *name != entry.name {
            return Err(Error::CorruptManifest(format!(
                "expected tensor `{name}`, found `{}`",
                entry.name
            )));
        }
        if *shape != entry.shape {
            return Err(Error::DimensionMismatch(format!(
                "tensor `{name}` has shape {:?}, config implies {:?}",
                entry.shape, shape
            )));
        }
    }

    let tensors_path = dir.join(TENSORS_FILE);
    let blob = fs::read(&tensors_path).map_err(|e| Error::io(&tensors_path, e))?;
    let needed = manifest
        .tensors
        .iter()
        .map(|t| t.offset + 4 * t.shape.iter().product::<usize>())
        .max()
        .unwrap_or(0);
    if blob.len() < needed {
        return Err(Error::TruncatedBlob {
            expected: needed,
            found: blob.len(),
        });
    }
    for (slot, entry) in tensor_slots(&mut weights).into_iter().zip(&manifest.tensors) {
        let bytes = &blob[entry.offset..entry.offset + 4 * slot.len()];
        for (x, chunk) in slot.iter_mut().zip(bytes.chunks_exact(4)) {
            *x = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        }
    }

    let organism = Organism::from_parts(
        manifest.config,
        manifest.plant_spec,
        manifest.ground_truth,
        weights,
    );
    if organism.fingerprint() != manifest.fingerprint {
        return Err(Error::CorruptManifest(format!(
            "fingerprint mismatch: manifest {}, contents {}",
            manifest.fingerprint,
            organism.fingerprint()
        )));
    }
    Ok(organism)
}
