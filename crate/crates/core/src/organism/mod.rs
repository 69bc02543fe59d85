//! The synthetic "model organism": a small decoder-only transformer whose
//! entity cells, distractors, and fact circuits are planted by construction.
//!
//! Residual layout: the first `hidden_dim - semantic_dims` coordinates form
//! the token subspace (embeddings, unembedding directions, context mixing);
//! the remaining coordinates are orthonormal semantic slots (mention flag,
//! relation flag, per-entity detector and key slots, per-relation slots).
//! Every block is an optional single-head causal attention followed by a
//! sigmoid-gated linear MLP:
//!
//! ```text
//! a_j(t) = sigmoid(h(t)·W_gate[:, j] + b_gate[j]) * (h(t)·W_in[:, j] + b_in[j])
//! h(t)  += Σ_j a_j(t) W_out[j, :]
//! ```
//!
//! `a_j(t)` is the traced channel value, the quantity entering the down-projection.

mod backward;
mod build;
mod checkpoint;
mod forward;
mod hooks;
mod plant;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use backward::Tape;
pub use build::build_organism;
pub use checkpoint::{load_checkpoint, save_checkpoint, MANIFEST_FILE, TENSORS_FILE};
pub use forward::{ActivationTrace, ForwardOutput, LayerTrace, LogitMode};
pub(crate) use forward::softmax_in_place;
pub use hooks::{Hook, HookSet, Positions};
pub use plant::{
    CircuitLayout, DistractorPlant, EntityPlant, FactPlant, PlantGains, PlantSpec, RelationPlant,
};

pub type TokenId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub mlp_width: usize,
    pub vocab_size: usize,
    pub seed: u64,
    /// Expected column norm of background weights.
    pub noise_scale: f64,
    pub attention_enabled_layers: BTreeSet<usize>,
}

impl ModelConfig {
    /// A config with attention on layer 0 (context mixing) and on the two
    /// layers that gather relation and entity information.
    pub fn new(num_layers: usize, hidden_dim: usize, mlp_width: usize, vocab_size: usize) -> Self {
        let attention_enabled_layers = if num_layers >= 4 {
            [0, num_layers - 3, num_layers - 2].into_iter().collect()
        } else {
            (0..num_layers.saturating_sub(1)).collect()
        };
        ModelConfig {
            num_layers,
            hidden_dim,
            mlp_width,
            vocab_size,
            seed: 7,
            noise_scale: 0.05,
            attention_enabled_layers,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_noise(mut self, noise_scale: f64) -> Self {
        self.noise_scale = noise_scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_layers < 3 {
            return fail(format!("num_layers = {} < 3", self.num_layers));
        }
        if self.mlp_width < 8 {
            return fail(format!("mlp_width = {} < 8", self.mlp_width));
        }
        if self.hidden_dim < 8 {
            return fail(format!("hidden_dim = {} < 8", self.hidden_dim));
        }
        if self.vocab_size < 16 {
            return fail(format!("vocab_size = {} < 16", self.vocab_size));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return fail(format!("noise_scale = {} must be finite and >= 0", self.noise_scale));
        }
        if let Some(&bad) = self.attention_enabled_layers.iter().find(|&&l| l >= self.num_layers) {
            return fail(format!("attention layer {bad} >= num_layers {}", self.num_layers));
        }
        Ok(())
    }

    pub fn check_neuron(&self, id: NeuronId) -> Result<()> {
        if id.layer >= self.num_layers || id.neuron >= self.mlp_width {
            return Err(Error::InvalidPlant(format!(
                "neuron {id} outside ({} layers, {} neurons)",
                self.num_layers, self.mlp_width
            )));
        }
        Ok(())
    }
}

/// An MLP channel, addressed by layer and neuron index.
///
/// Ordering is (layer, neuron), which is also the ranking tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: usize,
    pub neuron: usize,
}

impl NeuronId {
    pub const fn new(layer: usize, neuron: usize) -> Self {
        NeuronId { layer, neuron }
    }
}

impl fmt::Display for NeuronId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}-N{}", self.layer, self.neuron)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedFact {
    pub entity_id: String,
    pub relation: String,
    pub relation_token: TokenId,
    pub answer_token: TokenId,
    pub fact_layer: usize,
    pub neuron: NeuronId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedDistractor {
    pub entity_id: String,
    pub neuron: NeuronId,
    pub consistency: f64,
}

/// What was planted, recorded at build time. This is the oracle the
/// analysis pipeline is checked against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub planted_cells: BTreeMap<String, NeuronId>,
    /// Second cell of entities planted with a two-cell code.
    pub extra_cells: BTreeMap<String, Vec<NeuronId>>,
    pub identity_directions: BTreeMap<String, Vec<f32>>,
    pub planted_facts: Vec<PlantedFact>,
    pub distractors: Vec<PlantedDistractor>,
    /// Every neuron with constructed (non-background) weights.
    pub reserved: BTreeSet<NeuronId>,
}

impl GroundTruth {
    pub fn is_background(&self, id: NeuronId) -> bool {
        !self.reserved.contains(&id)
    }

    pub fn facts_for<'a>(&'a self, entity_id: &'a str) -> impl Iterator<Item = &'a PlantedFact> + 'a {
        self.planted_facts.iter().filter(move |f| f.entity_id == entity_id)
    }

    pub fn is_two_cell(&self, entity_id: &str) -> bool {
        self.extra_cells.get(entity_id).is_some_and(|c| !c.is_empty())
    }
}

/// Dense row-major f32 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    /// `out[c] += Σ_r x[r] * self[r, c]`
    #[inline]
    pub(crate) fn accumulate_left(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o += xr * w as f64;
            }
        }
    }

    /// `out[r] += Σ_c self[r, c] * y[c]`
    #[inline]
    pub(crate) fn accumulate_right(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (&w, &yc) in self.row(r).iter().zip(y) {
                acc += w as f64 * yc;
            }
            *o += acc;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub wq: Matrix,
    pub bq: Vec<f32>,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub attention: Option<Attention>,
    /// d × M
    pub w_gate: Matrix,
    pub b_gate: Vec<f32>,
    /// d × M
    pub w_in: Matrix,
    pub b_in: Vec<f32>,
    /// M × d
    pub w_out: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    /// V × d
    pub embed: Matrix,
    pub blocks: Vec<Block>,
    /// d × V
    pub unembed: Matrix,
}

impl Weights {
    /// Tensors in canonical order: name, shape, data.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        fn mat<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f32])>, name: String, m: &'a Matrix) {
            out.push((name, vec![m.rows, m.cols], &m.data));
        }
        let mut out = Vec::new();
        mat(&mut out, "embed".into(), &self.embed);
        for (l, b) in self.blocks.iter().enumerate() {
            if let Some(a) = &b.attention {
                mat(&mut out, format!("layers.{l}.attn.wq"), &a.wq);
                out.push((format!("layers.{l}.attn.bq"), vec![a.bq.len()], &a.bq));
                mat(&mut out, format!("layers.{l}.attn.wk"), &a.wk);
                mat(&mut out, format!("layers.{l}.attn.wv"), &a.wv);
                mat(&mut out, format!("layers.{l}.attn.wo"), &a.wo);
            }
            mat(&mut out, format!("layers.{l}.mlp.w_gate"), &b.w_gate);
            out.push((format!("layers.{l}.mlp.b_gate"), vec![b.b_gate.len()], &b.b_gate));
            mat(&mut out, format!("layers.{l}.mlp.w_in"), &b.w_in);
            out.push((format!("layers.{l}.mlp.b_in"), vec![b.b_in.len()], &b.b_in));
            mat(&mut out, format!("layers.{l}.mlp.w_out"), &b.w_out);
        }
        mat(&mut out, "unembed".into(), &self.unembed);
        out
    }
}

/// A built organism. Immutable after construction; `forward` is pure.
#[derive(Debug, Clone)]
pub struct Organism {
    config: ModelConfig,
    spec: PlantSpec,
    ground_truth: GroundTruth,
    weights: Weights,
    fingerprint: String,
    pub(crate) kernels: Vec<forward::BlockKernels>,
}

impl Organism {
    pub(crate) fn from_parts(
        config: ModelConfig,
        spec: PlantSpec,
        ground_truth: GroundTruth,
        weights: Weights,
    ) -> Self {
        let fingerprint = compute_fingerprint(&config, &spec, &weights);
        let kernels = forward::block_kernels(&weights);
        Organism {
            config,
            spec,
            ground_truth,
            weights,
            fingerprint,
            kernels,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn spec(&self) -> &PlantSpec {
        &self.spec
    }

    pub fn ground_truth(&self) -> &GroundTruth {
        &self.ground_truth
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    /// Content hash over config, plant spec, and every tensor.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn num_layers(&self) -> usize {
        self.config.num_layers
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn mlp_width(&self) -> usize {
        self.config.mlp_width
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    /// Copy of this organism with one neuron's down-projection row zeroed.
    pub fn with_zeroed_output_row(&self, id: NeuronId) -> Result<Organism> {
        self.config.check_neuron(id)?;
        let mut weights = self.weights.clone();
        let w_out = &mut weights.blocks[id.layer].w_out;
        for c in 0..w_out.cols {
            w_out.set(id.neuron, c, 0.0);
        }
        Ok(Organism::from_parts(
            self.config.clone(),
            self.spec.clone(),
            self.ground_truth.clone(),
            weights,
        ))
    }
}

fn compute_fingerprint(config: &ModelConfig, spec: &PlantSpec, weights: &Weights) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(config).expect("config serializes"));
    hasher.update(serde_json::to_vec(spec).expect("spec serializes"));
    for (name, shape, data) in weights.tensors() {
        hasher.update(name.as_bytes());
        for s in shape {
            hasher.update((s as u64).to_le_bytes());
        }
        for x in data {
            hasher.update(x.to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
