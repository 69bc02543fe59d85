use super::forward::dot;
use super::hooks::{Hook, HookSet};
use super::{sigmoid, Organism};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub(crate) struct LayerTape {
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// T × T causal attention weights.
    pub probs: Vec<f64>,
    pub gate_pre: Vec<f64>,
    pub val: Vec<f64>,
}

/// Intermediates of one forward pass, for exact reverse-mode gradients of a
/// linear functional of the last-position logits.
#[derive(Debug, Clone)]
pub struct Tape {
    pub(crate) seq_len: usize,
    pub(crate) hooks: HookSet,
    pub(crate) layers: Vec<LayerTape>,
}

impl Tape {
    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    /// Gradient of `Σ_v dlogits[v] · logits_last[v]` with respect to the
    /// residual at (`layer`, `position`) right after that layer's hidden
    /// hooks, i.e. the value the MLP of `layer` reads.
    pub fn grad_hidden(
        &self,
        organism: &Organism,
        dlogits: &[f64],
        layer: usize,
        position: usize,
    ) -> Result<Vec<f64>> {
        let cfg = organism.config();
        if dlogits.len() != cfg.vocab_size {
            return Err(Error::DimensionMismatch(format!(
                "dlogits has length {}, vocab is {}",
                dlogits.len(),
                cfg.vocab_size
            )));
        }
        if layer >= cfg.num_layers || position >= self.seq_len {
            return Err(Error::InvalidArgument(format!(
                "gradient site ({layer}, {position}) outside the taped pass"
            )));
        }
        let n = self.seq_len;
        let d = cfg.hidden_dim;
        let m = cfg.mlp_width;
        let w = organism.weights();

        let mut g = vec![0.0; n * d];
        w.unembed
            .accumulate_right(dlogits, &mut g[(n - 1) * d..n * d]);

        for l in (layer..cfg.num_layers).rev() {
            let block = &w.blocks[l];
            let kernels = &organism.kernels[l];
            let tape = &self.layers[l];
            let [kg, ki, ko] = &kernels.mlp;

            // MLP: h_out = h_mid + a' W_out with a' = hooks(sigmoid(z) * v).
            let mut da = vec![0.0; n * m];
            for t in 0..n {
                ko.right(&block.w_out, &g[t * d..(t + 1) * d], &mut da[t * m..(t + 1) * m]);
            }
            let channel_hooks: Vec<&Hook> = self.hooks.channel_hooks(l).collect();
            for hook in channel_hooks.into_iter().rev() {
                match hook {
                    Hook::ScaleChannel {
                        cell,
                        alpha,
                        positions,
                    } => {
                        for t in (0..n).filter(|&t| positions.contains(t)) {
                            da[t * m + cell.neuron] *= alpha;
                        }
                    }
                    Hook::SetChannel { cell, position, .. } => da[position * m + cell.neuron] = 0.0,
                    _ => unreachable!("filtered to channel hooks"),
                }
            }
            let mut dz = vec![0.0; m];
            let mut dv = vec![0.0; m];
            for t in 0..n {
                for j in 0..m {
                    let s = sigmoid(tape.gate_pre[t * m + j]);
                    let a = da[t * m + j];
                    dz[j] = a * tape.val[t * m + j] * s * (1.0 - s);
                    dv[j] = a * s;
                }
                let gt = &mut g[t * d..(t + 1) * d];
                kg.right(&block.w_gate, &dz, gt);
                ki.right(&block.w_in, &dv, gt);
            }
            if l == layer {
                return Ok(g[position * d..(position + 1) * d].to_vec());
            }

            for hook in self.hooks.hidden_hooks(l) {
                if let Hook::SetHidden { position: p, .. } = hook {
                    g[p * d..(p + 1) * d].iter_mut().for_each(|x| *x = 0.0);
                }
            }

            if let (Some(attn), Some([kq, kk, kv, ko])) = (&block.attention, &kernels.attention) {
                let mut dq = vec![0.0; n * d];
                let mut dk = vec![0.0; n * d];
                let mut dvv = vec![0.0; n * d];
                let mut d_mixed = vec![0.0; d];
                let mut dp = vec![0.0; n];
                for t in 0..n {
                    d_mixed.iter_mut().for_each(|x| *x = 0.0);
                    ko.right(&attn.wo, &g[t * d..(t + 1) * d], &mut d_mixed);
                    let probs = &tape.probs[t * n..t * n + t + 1];
                    for s in 0..=t {
                        dp[s] = dot(&d_mixed, &tape.v[s * d..(s + 1) * d]);
                        for (o, &x) in dvv[s * d..(s + 1) * d].iter_mut().zip(&d_mixed) {
                            *o += probs[s] * x;
                        }
                    }
                    let mean: f64 = (0..=t).map(|s| probs[s] * dp[s]).sum();
                    for s in 0..=t {
                        let ds = probs[s] * (dp[s] - mean);
                        if ds == 0.0 {
                            continue;
                        }
                        for c in 0..d {
                            dq[t * d + c] += ds * tape.k[s * d + c];
                            dk[s * d + c] += ds * tape.q[t * d + c];
                        }
                    }
                }
                for t in 0..n {
                    let gt = &mut g[t * d..(t + 1) * d];
                    kq.right(&attn.wq, &dq[t * d..(t + 1) * d], gt);
                    kk.right(&attn.wk, &dk[t * d..(t + 1) * d], gt);
                    kv.right(&attn.wv, &dvv[t * d..(t + 1) * d], gt);
                }
            }
        }
        unreachable!("loop returns at the requested layer")
    }
}
