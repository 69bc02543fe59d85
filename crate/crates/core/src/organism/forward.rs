use std::collections::BTreeMap;

use super::backward::{LayerTape, Tape};
use super::hooks::{Hook, HookSet};
use super::{sigmoid, Matrix, Organism, TokenId, Weights};
use crate::error::{Error, Result};

/// Which positions get logits computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogitMode {
    All,
    Last,
    None,
}

/// Recorded values of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    width: usize,
    dim: usize,
    /// T × M channel values after channel hooks.
    channels: Vec<f64>,
    /// T × d residual entering the MLP (after hidden hooks).
    residual: Vec<f64>,
}

impl LayerTrace {
    pub fn seq_len(&self) -> usize {
        self.channels.len() / self.width
    }

    pub fn channel(&self, t: usize, neuron: usize) -> f64 {
        self.channels[t * self.width + neuron]
    }

    pub fn channels_at(&self, t: usize) -> &[f64] {
        &self.channels[t * self.width..(t + 1) * self.width]
    }

    pub fn residual_at(&self, t: usize) -> &[f64] {
        &self.residual[t * self.dim..(t + 1) * self.dim]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActivationTrace {
    pub layers: BTreeMap<usize, LayerTrace>,
}

impl ActivationTrace {
    pub fn layer(&self, layer: usize) -> Option<&LayerTrace> {
        self.layers.get(&layer)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub seq_len: usize,
    /// One row per position for [`LogitMode::All`], one row for `Last`, none for `None`.
    pub logits: Vec<Vec<f64>>,
    pub trace: ActivationTrace,
}

impl ForwardOutput {
    pub fn last_logits(&self) -> Option<&[f64]> {
        self.logits.last().map(Vec::as_slice)
    }
}

/// Multiplication strategy for one weight matrix; planted matrices are
/// mostly zero and are evaluated from their nonzero entries.
#[derive(Debug, Clone)]
pub(crate) enum Kernel {
    Dense,
    Sparse(Vec<(u32, u32, f32)>),
}

impl Kernel {
    fn for_matrix(m: &Matrix) -> Kernel {
        let nonzero = m.data.iter().filter(|&&x| x != 0.0).count();
        if nonzero * 4 < m.data.len() {
            let entries = m
                .data
                .iter()
                .enumerate()
                .filter(|(_, &x)| x != 0.0)
                .map(|(i, &x)| ((i / m.cols) as u32, (i % m.cols) as u32, x))
                .collect();
            Kernel::Sparse(entries)
        } else {
            Kernel::Dense
        }
    }

    /// `out += x · m`
    #[inline]
    pub(crate) fn left(&self, m: &Matrix, x: &[f64], out: &mut [f64]) {
        match self {
            Kernel::Dense => m.accumulate_left(x, out),
            Kernel::Sparse(entries) => {
                for &(r, c, w) in entries {
                    out[c as usize] += x[r as usize] * w as f64;
                }
            }
        }
    }

    /// `out += m · y`
    #[inline]
    pub(crate) fn right(&self, m: &Matrix, y: &[f64], out: &mut [f64]) {
        match self {
            Kernel::Dense => m.accumulate_right(y, out),
            Kernel::Sparse(entries) => {
                for &(r, c, w) in entries {
                    out[r as usize] += w as f64 * y[c as usize];
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BlockKernels {
    /// q, k, v, o
    pub attention: Option<[Kernel; 4]>,
    /// gate, in, out
    pub mlp: [Kernel; 3],
}

pub(crate) fn block_kernels(weights: &Weights) -> Vec<BlockKernels> {
    weights
        .blocks
        .iter()
        .map(|b| BlockKernels {
            attention: b.attention.as_ref().map(|a| {
                [
                    Kernel::for_matrix(&a.wq),
                    Kernel::for_matrix(&a.wk),
                    Kernel::for_matrix(&a.wv),
                    Kernel::for_matrix(&a.wo),
                ]
            }),
            mlp: [
                Kernel::for_matrix(&b.w_gate),
                Kernel::for_matrix(&b.w_in),
                Kernel::for_matrix(&b.w_out),
            ],
        })
        .collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Organism {
    /// Runs the model on `tokens` with `hooks` applied.
    pub fn forward(&self, tokens: &[TokenId], hooks: &HookSet, mode: LogitMode) -> Result<ForwardOutput> {
        self.run(tokens, hooks, mode, false).map(|(out, _)| out)
    }

    /// Like [`Organism::forward`] with last-position logits, also returning
    /// the cached intermediates needed for reverse-mode gradients.
    pub fn forward_with_tape(&self, tokens: &[TokenId], hooks: &HookSet) -> Result<(ForwardOutput, Tape)> {
        let (out, tape) = self.run(tokens, hooks, LogitMode::Last, true)?;
        Ok((out, tape.expect("tape requested")))
    }

    /// Last-position logits with no hooks.
    pub fn next_token_logits(&self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        let out = self.forward(tokens, &HookSet::new(), LogitMode::Last)?;
        Ok(out.logits.into_iter().next().expect("last logits"))
    }

    fn run(
        &self,
        tokens: &[TokenId],
        hooks: &HookSet,
        mode: LogitMode,
        keep_tape: bool,
    ) -> Result<(ForwardOutput, Option<Tape>)> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("token sequence"));
        }
        let vocab = self.config.vocab_size;
        if let Some(&id) = tokens.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::OutOfVocabulary { id, vocab });
        }
        let n = tokens.len();
        hooks.validate(&self.config, n)?;
        let d = self.config.hidden_dim;
        let m = self.config.mlp_width;
        let w = &self.weights;

        let mut h = vec![0.0f64; n * d];
        for (t, &tok) in tokens.iter().enumerate() {
            for (x, &e) in h[t * d..(t + 1) * d].iter_mut().zip(w.embed.row(tok as usize)) {
                *x = e as f64;
            }
        }

        let mut trace = ActivationTrace::default();
        let mut layer_tapes = Vec::new();
        for (l, block) in w.blocks.iter().enumerate() {
            let kernels = &self.kernels[l];
            let mut tape = LayerTape::default();

            if let (Some(attn), Some([kq, kk, kv, ko])) = (&block.attention, &kernels.attention) {
                let mut q = vec![0.0; n * d];
                let mut k = vec![0.0; n * d];
                let mut v = vec![0.0; n * d];
                for t in 0..n {
                    let ht = &h[t * d..(t + 1) * d];
                    let qt = &mut q[t * d..(t + 1) * d];
                    for (x, &b) in qt.iter_mut().zip(&attn.bq) {
                        *x = b as f64;
                    }
                    kq.left(&attn.wq, ht, qt);
                    kk.left(&attn.wk, ht, &mut k[t * d..(t + 1) * d]);
                    kv.left(&attn.wv, ht, &mut v[t * d..(t + 1) * d]);
                }
                let mut probs = vec![0.0; n * n];
                let mut mixed = vec![0.0; d];
                for t in 0..n {
                    let qt = &q[t * d..(t + 1) * d];
                    let row = &mut probs[t * n..t * n + t + 1];
                    for (s, p) in row.iter_mut().enumerate() {
                        *p = dot(qt, &k[s * d..(s + 1) * d]);
                    }
                    softmax_in_place(row);
                    mixed.iter_mut().for_each(|x| *x = 0.0);
                    for (s, &p) in row.iter().enumerate() {
                        for (o, &vs) in mixed.iter_mut().zip(&v[s * d..(s + 1) * d]) {
                            *o += p * vs;
                        }
                    }
                    ko.left(&attn.wo, &mixed, &mut h[t * d..(t + 1) * d]);
                }
                if keep_tape {
                    tape.q = q;
                    tape.k = k;
                    tape.v = v;
                    tape.probs = probs;
                }
            }

            for hook in hooks.hidden_hooks(l) {
                match hook {
                    Hook::SetHidden {
                        position, vector, ..
                    } => h[position * d..(position + 1) * d].copy_from_slice(vector),
                    Hook::AddHidden {
                        position, vector, ..
                    } => {
                        for (x, &dv) in h[position * d..(position + 1) * d].iter_mut().zip(vector) {
                            *x += dv;
                        }
                    }
                    _ => unreachable!("filtered to hidden hooks"),
                }
            }
            let record = hooks.records(l);
            let residual = if record { h.clone() } else { Vec::new() };

            let [kg, ki, ko] = &kernels.mlp;
            let mut gate_pre = vec![0.0; n * m];
            let mut val = vec![0.0; n * m];
            let mut act = vec![0.0; n * m];
            for t in 0..n {
                let ht = &h[t * d..(t + 1) * d];
                let gt = &mut gate_pre[t * m..(t + 1) * m];
                for (x, &b) in gt.iter_mut().zip(&block.b_gate) {
                    *x = b as f64;
                }
                kg.left(&block.w_gate, ht, gt);
                let vt = &mut val[t * m..(t + 1) * m];
                for (x, &b) in vt.iter_mut().zip(&block.b_in) {
                    *x = b as f64;
                }
                ki.left(&block.w_in, ht, vt);
                for j in 0..m {
                    act[t * m + j] = sigmoid(gate_pre[t * m + j]) * val[t * m + j];
                }
            }
            for hook in hooks.channel_hooks(l) {
                match hook {
                    Hook::ScaleChannel {
                        cell,
                        alpha,
                        positions,
                    } => {
                        for t in (0..n).filter(|&t| positions.contains(t)) {
                            act[t * m + cell.neuron] *= alpha;
                        }
                    }
                    Hook::SetChannel {
                        cell,
                        value,
                        position,
                    } => act[position * m + cell.neuron] = *value,
                    _ => unreachable!("filtered to channel hooks"),
                }
            }
            for t in 0..n {
                ko.left(&block.w_out, &act[t * m..(t + 1) * m], &mut h[t * d..(t + 1) * d]);
            }
            if record {
                trace.layers.insert(
                    l,
                    LayerTrace {
                        width: m,
                        dim: d,
                        channels: act,
                        residual,
                    },
                );
            }
            if keep_tape {
                tape.gate_pre = gate_pre;
                tape.val = val;
                layer_tapes.push(tape);
            }
        }

        let positions: Vec<usize> = match mode {
            LogitMode::All => (0..n).collect(),
            LogitMode::Last => vec![n - 1],
            LogitMode::None => Vec::new(),
        };
        let mut logits = Vec::with_capacity(positions.len());
        for t in positions {
            let mut row = vec![0.0; self.config.vocab_size];
            w.unembed.accumulate_left(&h[t * d..(t + 1) * d], &mut row);
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("logits at position {t}")));
            }
            logits.push(row);
        }
        let tape = keep_tape.then(|| Tape {
            seq_len: n,
            hooks: hooks.clone(),
            layers: layer_tapes,
        });
        Ok((
            ForwardOutput {
                seq_len: n,
                logits,
                trace,
            },
            tape,
        ))
    }
}

pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}
