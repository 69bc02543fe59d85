use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    Attention, Block, GroundTruth, Matrix, ModelConfig, NeuronId, Organism, PlantSpec,
    PlantedDistractor, PlantedFact, TokenId, Weights,
};
use crate::error::{Error, Result};

/// Token embeddings are resampled while their cosine with an earlier one exceeds this.
const MAX_TOKEN_COSINE: f64 = 0.5;
const MAX_REJECTIONS: usize = 20_000;
/// Gate bias of the always-on prior neuron.
const PRIOR_GATE_BIAS: f32 = 8.0;

/// Semantic slot indices inside the residual stream.
struct Slots {
    token_dims: usize,
    mention_flag: usize,
    relation_flag: usize,
    detector: HashMap<String, usize>,
    key: HashMap<String, usize>,
    halves: HashMap<String, (usize, usize)>,
    relation: HashMap<String, usize>,
}

impl Slots {
    fn assign(config: &ModelConfig, spec: &PlantSpec) -> Result<Self> {
        let sem = spec.semantic_dims();
        let d = config.hidden_dim;
        if sem + 8 > d {
            return Err(Error::CapacityExceeded(format!(
                "{sem} semantic slots leave fewer than 8 token dimensions in hidden_dim {d}"
            )));
        }
        let token_dims = d - sem;
        let mut next = token_dims;
        let mut take = || {
            next += 1;
            next - 1
        };
        let mention_flag = take();
        let relation_flag = take();
        let mut detector = HashMap::new();
        let mut key = HashMap::new();
        let mut halves = HashMap::new();
        for e in &spec.entities {
            detector.insert(e.entity_id.clone(), take());
            key.insert(e.entity_id.clone(), take());
        }
        for e in spec.entities.iter().filter(|e| e.second_cell.is_some()) {
            let a = take();
            let b = take();
            halves.insert(e.entity_id.clone(), (a, b));
        }
        let mut relation = HashMap::new();
        for r in &spec.relations {
            relation.insert(r.name.clone(), take());
        }
        Ok(Slots {
            token_dims,
            mention_flag,
            relation_flag,
            detector,
            key,
            halves,
            relation,
        })
    }
}

struct Allocator {
    used: BTreeSet<NeuronId>,
    width: usize,
}

impl Allocator {
    fn claim(&mut self, id: NeuronId) -> Result<()> {
        if !self.used.insert(id) {
            return Err(Error::DuplicateCell(id));
        }
        Ok(())
    }

    fn next_free(&mut self, layer: usize) -> Result<NeuronId> {
        let id = (0..self.width)
            .map(|n| NeuronId::new(layer, n))
            .find(|id| !self.used.contains(id))
            .ok_or_else(|| {
                Error::CapacityExceeded(format!("no free neuron left in layer {layer}"))
            })?;
        self.used.insert(id);
        Ok(id)
    }
}

fn validate_spec(config: &ModelConfig, spec: &PlantSpec) -> Result<()> {
    let vocab = config.vocab_size;
    let check_token = |id: TokenId| -> Result<()> {
        if (id as usize) < vocab {
            Ok(())
        } else {
            Err(Error::OutOfVocabulary { id, vocab })
        }
    };
    let layout = &spec.layout;
    layout.validate(config)?;

    let mut token_owner: HashMap<TokenId, &str> = HashMap::new();
    let mut entity_cells: HashMap<&str, NeuronId> = HashMap::new();
    for e in &spec.entities {
        if entity_cells.insert(&e.entity_id, e.cell).is_some() {
            return Err(Error::DuplicateEntity(e.entity_id.clone()));
        }
        if e.detector_tokens.is_empty() {
            return Err(Error::InvalidPlant(format!(
                "entity `{}` has no detector tokens",
                e.entity_id
            )));
        }
        for &t in &e.detector_tokens {
            check_token(t)?;
            if let Some(other) = token_owner.insert(t, &e.entity_id) {
                if other != e.entity_id {
                    return Err(Error::InvalidPlant(format!(
                        "token {t} is a detector token of both `{other}` and `{}`",
                        e.entity_id
                    )));
                }
            }
        }
        config.check_neuron(e.cell)?;
        if e.cell.layer >= layout.entity_layer {
            return Err(Error::InvalidPlant(format!(
                "cell {} of `{}` is not below the entity-gather layer {}",
                e.cell, e.entity_id, layout.entity_layer
            )));
        }
        if let Some(second) = e.second_cell {
            config.check_neuron(second)?;
            if second.layer != e.cell.layer {
                return Err(Error::InvalidPlant(format!(
                    "two-cell entity `{}` must use one layer",
                    e.entity_id
                )));
            }
            if layout.relation_layer >= layout.entity_layer {
                return Err(Error::InvalidPlant(format!(
                    "two-cell entity `{}` needs the relation gathered below layer {}",
                    e.entity_id, layout.entity_layer
                )));
            }
        }
    }

    let mut relation_names = BTreeSet::new();
    for r in &spec.relations {
        if !relation_names.insert(r.name.as_str()) {
            return Err(Error::InvalidPlant(format!("duplicate relation `{}`", r.name)));
        }
        if r.tokens.is_empty() {
            return Err(Error::InvalidPlant(format!("relation `{}` has no tokens", r.name)));
        }
        for &t in &r.tokens {
            check_token(t)?;
            if let Some(owner) = token_owner.get(&t) {
                return Err(Error::InvalidPlant(format!(
                    "token {t} is both a detector token of `{owner}` and a trigger of `{}`",
                    r.name
                )));
            }
        }
    }

    for f in &spec.facts {
        let cell = *entity_cells
            .get(f.entity_id.as_str())
            .ok_or_else(|| Error::UnknownEntity(f.entity_id.clone()))?;
        if !relation_names.contains(f.relation.as_str()) {
            return Err(Error::InvalidPlant(format!("unknown relation `{}`", f.relation)));
        }
        check_token(f.answer_token)?;
        if f.layer >= config.num_layers {
            return Err(Error::InvalidPlant(format!("fact layer {} out of range", f.layer)));
        }
        if f.layer <= cell.layer {
            return Err(Error::FactBelowCell {
                entity: f.entity_id.clone(),
                fact_layer: f.layer,
                cell_layer: cell.layer,
            });
        }
        let two_cell = spec.entity(&f.entity_id).is_some_and(|e| e.second_cell.is_some());
        if two_cell && f.layer <= layout.entity_layer {
            return Err(Error::InvalidPlant(format!(
                "fact of two-cell entity `{}` at layer {} must sit above the entity-gather layer {}",
                f.entity_id, f.layer, layout.entity_layer
            )));
        }
        if f.layer < layout.first_fact_layer() {
            return Err(Error::InvalidPlant(format!(
                "fact layer {} is below the gather layers (first usable layer {})",
                f.layer,
                layout.first_fact_layer()
            )));
        }
    }

    for d in &spec.distractors {
        if !entity_cells.contains_key(d.entity_id.as_str()) {
            return Err(Error::UnknownEntity(d.entity_id.clone()));
        }
        config.check_neuron(d.neuron)?;
        if !(0.0..1.0).contains(&d.consistency) {
            return Err(Error::InvalidPlant(format!(
                "distractor consistency {} not in [0, 1)",
                d.consistency
            )));
        }
    }
    for &t in &spec.prior_tokens {
        check_token(t)?;
    }
    Ok(())
}

fn unit_vectors(
    rng: &mut ChaCha8Rng,
    count: usize,
    dims: usize,
    total_dims: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut tries = 0;
        let v = loop {
            let mut v: Vec<f64> = (0..dims).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            let clash = accepted
                .iter()
                .any(|u| u.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() > MAX_TOKEN_COSINE);
            if !clash {
                break v;
            }
            tries += 1;
            if tries > MAX_REJECTIONS {
                return Err(Error::CapacityExceeded(format!(
                    "cannot place {count} near-orthogonal vectors in {dims} token dimensions"
                )));
            }
        };
        accepted.push(v);
    }
    Ok(accepted
        .into_iter()
        .map(|mut v| {
            v.resize(total_dims, 0.0);
            v
        })
        .collect())
}

fn noise_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| (scale * rng.sample::<f64, _>(StandardNormal)) as f32)
        .collect();
    Matrix { rows, cols, data }
}

fn set_column(m: &mut Matrix, col: usize, v: &[f64]) {
    for (r, &x) in v.iter().enumerate() {
        m.set(r, col, x as f32);
    }
}

fn set_row(m: &mut Matrix, row: usize, v: &[f64]) {
    for (c, &x) in v.iter().enumerate() {
        m.set(row, c, x as f32);
    }
}

fn basis(d: usize, slot: usize, scale: f64) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[slot] = scale;
    v
}

fn identity(d: usize) -> Matrix {
    let mut m = Matrix::zeros(d, d);
    for i in 0..d {
        m.set(i, i, 1.0);
    }
    m
}

fn context_attention(d: usize, token_dims: usize, mix: f64) -> Attention {
    let mut wv = Matrix::zeros(d, d);
    for i in 0..token_dims {
        wv.set(i, i, mix as f32);
    }
    Attention {
        wq: Matrix::zeros(d, d),
        bq: vec![0.0; d],
        wk: Matrix::zeros(d, d),
        wv,
        wo: identity(d),
    }
}

/// Query-independent head: score(s) = query_gain * h(s)[flag_slot]; copies `copy` slots.
fn gather_attention(d: usize, flag_slot: usize, query_gain: f64, copy: &[(usize, f64)]) -> Attention {
    let mut bq = vec![0.0; d];
    bq[0] = query_gain as f32;
    let mut wk = Matrix::zeros(d, d);
    wk.set(flag_slot, 0, 1.0);
    let mut wv = Matrix::zeros(d, d);
    for &(slot, scale) in copy {
        wv.set(slot, slot, scale as f32);
    }
    Attention {
        wq: Matrix::zeros(d, d),
        bq,
        wk,
        wv,
        wo: identity(d),
    }
}

/// Construct an organism whose weights realize `spec` exactly, on top of
/// seeded background noise.
pub fn build_organism(config: ModelConfig, spec: PlantSpec) -> Result<Organism> {
    config.validate()?;
    validate_spec(&config, &spec)?;
    let slots = Slots::assign(&config, &spec)?;
    let g = &spec.gains;
    let d = config.hidden_dim;
    let m = config.mlp_width;
    let v = config.vocab_size;
    let layout = spec.layout;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // Embeddings: random token-subspace parts, plus shared semantic components.
    let token_parts = unit_vectors(&mut rng, v, slots.token_dims, d)?;
    let unembed_cols = unit_vectors(&mut rng, v, slots.token_dims, d)?;

    let mut embed_rows = token_parts;
    let omega = g.alias_share;
    for e in &spec.entities {
        let s = slots.detector[&e.entity_id];
        for &t in &e.detector_tokens {
            let row = &mut embed_rows[t as usize];
            row.iter_mut().for_each(|x| *x *= (1.0 - omega * omega).sqrt());
            row[s] = omega;
        }
    }
    let rho = g.relation_share;
    for r in &spec.relations {
        let n = slots.relation[&r.name];
        for &t in &r.tokens {
            let row = &mut embed_rows[t as usize];
            row.iter_mut().for_each(|x| *x *= (1.0 - rho * rho).sqrt());
            row[slots.relation_flag] = rho / 2f64.sqrt();
            row[n] = rho / 2f64.sqrt();
        }
    }
    let mut embed = Matrix::zeros(v, d);
    for (t, row) in embed_rows.iter().enumerate() {
        set_row(&mut embed, t, row);
    }
    let mut unembed = Matrix::zeros(d, v);
    for (t, col) in unembed_cols.iter().enumerate() {
        set_column(&mut unembed, t, col);
    }

    // Background blocks.
    let per_entry = config.noise_scale / (d as f64).sqrt();
    let mut blocks: Vec<Block> = (0..config.num_layers)
        .map(|_| Block {
            attention: None,
            w_gate: noise_matrix(&mut rng, d, m, per_entry),
            b_gate: vec![0.0; m],
            w_in: noise_matrix(&mut rng, d, m, per_entry),
            b_in: vec![0.0; m],
            w_out: noise_matrix(&mut rng, m, d, per_entry),
        })
        .collect();

    let mut key_copy: Vec<(usize, f64)> = spec
        .entities
        .iter()
        .map(|e| (slots.key[&e.entity_id], 1.0))
        .collect();
    for &(a, b) in slots.halves.values() {
        key_copy.extend([(a, 1.0), (b, 1.0)]);
    }
    let relation_copy: Vec<(usize, f64)> = spec
        .relations
        .iter()
        .map(|r| (slots.relation[&r.name], 2f64.sqrt() / rho))
        .collect();
    for &l in &config.attention_enabled_layers {
        let attn = if l == layout.entity_layer {
            gather_attention(d, slots.mention_flag, g.gather_sharpness, &key_copy)
        } else if l == layout.relation_layer {
            let gain = g.gather_sharpness * 2f64.sqrt() / rho;
            gather_attention(d, slots.relation_flag, gain, &relation_copy)
        } else {
            context_attention(d, slots.token_dims, g.context_mix)
        };
        blocks[l].attention = Some(attn);
    }

    let mut alloc = Allocator {
        used: BTreeSet::new(),
        width: m,
    };
    for e in &spec.entities {
        alloc.claim(e.cell)?;
        if let Some(second) = e.second_cell {
            alloc.claim(second)?;
        }
    }
    for dist in &spec.distractors {
        alloc.claim(dist.neuron)?;
    }

    let act = g.cell_activation;
    let gate_gain = g.cell_gate_gain / omega;
    let gate_bias = -g.cell_gate_gain * g.cell_gate_threshold;
    let mut identity_directions = BTreeMap::new();
    let mut planted_cells = BTreeMap::new();
    let mut extra_cells = BTreeMap::new();

    let plant_detector_gate = |block: &mut Block, j: usize, s: usize| {
        set_column(&mut block.w_gate, j, &basis(d, s, gate_gain));
        block.b_gate[j] = gate_bias as f32;
    };

    for e in &spec.entities {
        let s = slots.detector[&e.entity_id];
        let k = slots.key[&e.entity_id];
        let mut u = vec![0.0; d];
        u[slots.mention_flag] = 1.0 / 2f64.sqrt();
        u[k] = 1.0 / 2f64.sqrt();
        identity_directions.insert(
            e.entity_id.clone(),
            u.iter().map(|&x| x as f32).collect::<Vec<f32>>(),
        );
        planted_cells.insert(e.entity_id.clone(), e.cell);

        let cells: Vec<(NeuronId, usize)> = match e.second_cell {
            None => vec![(e.cell, k)],
            Some(second) => {
                let (wa, wb) = slots.halves[&e.entity_id];
                extra_cells.insert(e.entity_id.clone(), vec![second]);
                vec![(e.cell, wa), (second, wb)]
            }
        };
        for &(cell, write_slot) in &cells {
            let block = &mut blocks[cell.layer];
            plant_detector_gate(block, cell.neuron, s);
            set_column(&mut block.w_in, cell.neuron, &basis(d, s, act / omega));
            block.b_in[cell.neuron] = 0.0;
            let mut row = vec![0.0; d];
            row[slots.mention_flag] = 1.0 / act;
            row[write_slot] = 1.0 / act;
            set_row(&mut block.w_out, cell.neuron, &row);
        }
        if e.second_cell.is_some() {
            // Bounded AND on the gathered halves: each half detector contributes
            // at most half the key. Half detectors also need a gathered relation,
            // so they stay silent on prompts that ask nothing about the entity.
            let det_layer = layout.entity_layer;
            for &(_, half_slot) in &cells {
                let id = alloc.next_free(det_layer)?;
                let block = &mut blocks[det_layer];
                let mut gate = basis(d, half_slot, g.detector_gain);
                // The mention position sees its own half twice after the gather,
                // so the relation carries double weight here too.
                for &r in slots.relation.values() {
                    gate[r] = 2.0 * g.detector_gain;
                }
                set_column(&mut block.w_gate, id.neuron, &gate);
                block.b_gate[id.neuron] = (-2.5 * g.detector_gain) as f32;
                set_column(&mut block.w_in, id.neuron, &vec![0.0; d]);
                block.b_in[id.neuron] = 1.0;
                set_row(&mut block.w_out, id.neuron, &basis(d, k, 0.5));
            }
        }
    }

    let mut distractors = Vec::new();
    for dist in &spec.distractors {
        let entity = spec.entity(&dist.entity_id).expect("validated");
        let s = slots.detector[&dist.entity_id];
        let noise_gain = g.distractor_noise / (1.0 - dist.consistency);
        let direction = &unit_vectors(&mut rng, 1, slots.token_dims, d)?[0];
        let anchor = embed.row(entity.detector_tokens[0] as usize);
        let offset: f64 = direction.iter().zip(anchor).map(|(a, &b)| a * b as f64).sum();
        let block = &mut blocks[dist.neuron.layer];
        plant_detector_gate(block, dist.neuron.neuron, s);
        let mut value = basis(d, s, act / omega);
        for (x, dir) in value.iter_mut().zip(direction) {
            *x += noise_gain * dir;
        }
        set_column(&mut block.w_in, dist.neuron.neuron, &value);
        block.b_in[dist.neuron.neuron] = (-noise_gain * offset) as f32;
        distractors.push(PlantedDistractor {
            entity_id: dist.entity_id.clone(),
            neuron: dist.neuron,
            consistency: dist.consistency,
        });
    }

    let relation_token: HashMap<&str, TokenId> = spec
        .relations
        .iter()
        .map(|r| (r.name.as_str(), r.tokens[0]))
        .collect();
    let mut planted_facts = Vec::new();
    for f in &spec.facts {
        let entity = spec.entity(&f.entity_id).expect("validated");
        let (gain, threshold) = if entity.second_cell.is_some() {
            (g.two_cell_fact_gain, g.two_cell_fact_threshold)
        } else {
            (g.fact_gain, g.fact_threshold)
        };
        let id = alloc.next_free(f.layer)?;
        let block = &mut blocks[f.layer];
        let mut key = vec![0.0; d];
        key[slots.key[&f.entity_id]] = gain;
        // Double relation weight: the mention position holds the key twice.
        key[slots.relation[&f.relation]] = 2.0 * gain;
        set_column(&mut block.w_gate, id.neuron, &key);
        block.b_gate[id.neuron] = (-gain * threshold) as f32;
        set_column(&mut block.w_in, id.neuron, &vec![0.0; d]);
        block.b_in[id.neuron] = 1.0;
        let row: Vec<f64> = (0..d)
            .map(|i| g.answer_gain * unembed.get(i, f.answer_token as usize) as f64)
            .collect();
        set_row(&mut block.w_out, id.neuron, &row);
        planted_facts.push(PlantedFact {
            entity_id: f.entity_id.clone(),
            relation: f.relation.clone(),
            relation_token: relation_token[f.relation.as_str()],
            answer_token: f.answer_token,
            fact_layer: f.layer,
            neuron: id,
        });
    }

    if !spec.prior_tokens.is_empty() {
        let last = config.num_layers - 1;
        let id = alloc.next_free(last)?;
        let block = &mut blocks[last];
        set_column(&mut block.w_gate, id.neuron, &vec![0.0; d]);
        block.b_gate[id.neuron] = PRIOR_GATE_BIAS;
        set_column(&mut block.w_in, id.neuron, &vec![0.0; d]);
        block.b_in[id.neuron] = 1.0;
        let row: Vec<f64> = (0..d)
            .map(|i| {
                spec.prior_tokens
                    .iter()
                    .map(|&t| g.prior_gain * unembed.get(i, t as usize) as f64)
                    .sum()
            })
            .collect();
        set_row(&mut block.w_out, id.neuron, &row);
    }

    let ground_truth = GroundTruth {
        planted_cells,
        extra_cells,
        identity_directions,
        planted_facts,
        distractors,
        reserved: alloc.used,
    };
    let weights = Weights {
        embed,
        blocks,
        unembed,
    };
    Ok(Organism::from_parts(config, spec, ground_truth, weights))
}
