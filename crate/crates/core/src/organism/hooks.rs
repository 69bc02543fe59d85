use std::collections::BTreeSet;

use super::{ModelConfig, NeuronId};
use crate::error::{Error, Result};

/// Token positions a channel hook applies to.
#[derive(Debug, Clone, PartialEq)]
pub enum Positions {
    All,
    At(Vec<usize>),
}

impl Positions {
    pub(crate) fn contains(&self, t: usize) -> bool {
        match self {
            Positions::All => true,
            Positions::At(ps) => ps.contains(&t),
        }
    }
}

/// A single forward-pass intervention or probe.
///
/// Hidden-state hooks act on the residual stream after the layer's attention
/// and before its MLP. Channel hooks act on the MLP channel values before
/// the down-projection. Hooks at the same site apply in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub enum Hook {
    /// Record post-hook channel values and the pre-MLP residual of a layer.
    Record { layer: usize },
    ScaleChannel {
        cell: NeuronId,
        alpha: f64,
        positions: Positions,
    },
    SetChannel {
        cell: NeuronId,
        value: f64,
        position: usize,
    },
    SetHidden {
        layer: usize,
        position: usize,
        vector: Vec<f64>,
    },
    AddHidden {
        layer: usize,
        position: usize,
        vector: Vec<f64>,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HookSet {
    hooks: Vec<Hook>,
}

impl HookSet {
    pub fn new() -> Self {
        HookSet::default()
    }

    /// Records every layer.
    pub fn record_all(num_layers: usize) -> Self {
        HookSet {
            hooks: (0..num_layers).map(|layer| Hook::Record { layer }).collect(),
        }
    }

    pub fn with(mut self, hook: Hook) -> Self {
        self.hooks.push(hook);
        self
    }

    pub fn push(&mut self, hook: Hook) {
        self.hooks.push(hook);
    }

    pub fn hooks(&self) -> &[Hook] {
        &self.hooks
    }

    pub fn is_empty(&self) -> bool {
        self.hooks.is_empty()
    }

    pub(crate) fn records(&self, layer: usize) -> bool {
        self.hooks
            .iter()
            .any(|h| matches!(h, Hook::Record { layer: l } if *l == layer))
    }

    pub(crate) fn hidden_hooks(&self, layer: usize) -> impl Iterator<Item = &Hook> {
        self.hooks.iter().filter(move |h| match h {
            Hook::SetHidden { layer: l, .. } | Hook::AddHidden { layer: l, .. } => *l == layer,
            _ => false,
        })
    }

    pub(crate) fn channel_hooks(&self, layer: usize) -> impl Iterator<Item = &Hook> {
        self.hooks.iter().filter(move |h| match h {
            Hook::ScaleChannel { cell, .. } | Hook::SetChannel { cell, .. } => cell.layer == layer,
            _ => false,
        })
    }

    /// Checks every hook against the model shape and a sequence length.
    pub fn validate(&self, config: &ModelConfig, seq_len: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidHook(msg));
        let check_pos = |p: usize| -> Result<()> {
            if p >= seq_len {
                return Err(Error::InvalidHook(format!(
                    "position {p} out of range for sequence length {seq_len}"
                )));
            }
            Ok(())
        };
        let check_cell = |c: NeuronId| -> Result<()> {
            if c.layer >= config.num_layers || c.neuron >= config.mlp_width {
                return Err(Error::InvalidHook(format!("cell {c} outside the model")));
            }
            Ok(())
        };
        let mut set_sites = BTreeSet::new();
        for hook in &self.hooks {
            match hook {
                Hook::Record { layer } => {
                    if *layer >= config.num_layers {
                        return bad(format!("record layer {layer} >= {}", config.num_layers));
                    }
                }
                Hook::ScaleChannel {
                    cell,
                    alpha,
                    positions,
                } => {
                    check_cell(*cell)?;
                    if !alpha.is_finite() {
                        return bad(format!("non-finite scale {alpha}"));
                    }
                    if let Positions::At(ps) = positions {
                        ps.iter().try_for_each(|&p| check_pos(p))?;
                    }
                }
                Hook::SetChannel {
                    cell,
                    value,
                    position,
                } => {
                    check_cell(*cell)?;
                    check_pos(*position)?;
                    if !value.is_finite() {
                        return bad(format!("non-finite channel value {value}"));
                    }
                }
                Hook::SetHidden {
                    layer,
                    position,
                    vector,
                }
                | Hook::AddHidden {
                    layer,
                    position,
                    vector,
                } => {
                    if *layer >= config.num_layers {
                        return bad(format!("hidden hook layer {layer} >= {}", config.num_layers));
                    }
                    check_pos(*position)?;
                    if vector.len() != config.hidden_dim {
                        return bad(format!(
                            "hidden vector has length {}, expected {}",
                            vector.len(),
                            config.hidden_dim
                        ));
                    }
                    if vector.iter().any(|x| !x.is_finite()) {
                        return bad("non-finite hidden vector".into());
                    }
                    if matches!(hook, Hook::SetHidden { .. }) && !set_sites.insert((*layer, *position)) {
                        return bad(format!(
                            "two set-hidden hooks at layer {layer}, position {position}"
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> ModelConfig {
        ModelConfig::new(4, 16, 8, 32)
    }

    #[test]
    fn rejects_out_of_range_position() {
        let hooks = HookSet::new().with(Hook::SetChannel {
            cell: NeuronId::new(1, 2),
            value: 1.0,
            position: 5,
        });
        assert!(matches!(hooks.validate(&config(), 5), Err(Error::InvalidHook(_))));
        assert!(hooks.validate(&config(), 6).is_ok());
    }

    #[test]
    fn rejects_duplicate_set_hidden() {
        let set = Hook::SetHidden {
            layer: 1,
            position: 0,
            vector: vec![0.0; 16],
        };
        let hooks = HookSet::new().with(set.clone()).with(set);
        assert!(hooks.validate(&config(), 3).is_err());
    }

    #[test]
    fn rejects_wrong_vector_length() {
        let hooks = HookSet::new().with(Hook::AddHidden {
            layer: 0,
            position: 0,
            vector: vec![0.0; 15],
        });
        assert!(hooks.validate(&config(), 1).is_err());
    }
}
