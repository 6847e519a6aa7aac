use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Gradients, ModelConfig, Parameters};
use crate::error::{Error, Result};

/// Row `index` of the value matrix of MLP layer `layer`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ValueVectorId {
    pub layer: usize,
    pub index: usize,
}

impl ValueVectorId {
    pub fn new(layer: usize, index: usize) -> Self {
        Self { layer, index }
    }

    /// Position in the layer-major enumeration of all value vectors.
    pub fn flat(self, config: &ModelConfig) -> usize {
        self.layer * config.d_ff + self.index
    }

    pub fn from_flat(flat: usize, config: &ModelConfig) -> Self {
        Self { layer: flat / config.d_ff, index: flat % config.d_ff }
    }

    pub fn validate(self, config: &ModelConfig) -> Result<()> {
        if self.layer >= config.n_layers || self.index >= config.d_ff {
            return Err(Error::Index(format!(
                "value vector ({}, {}) outside {} layers × {} rows",
                self.layer, self.index, config.n_layers, config.d_ff
            )));
        }
        Ok(())
    }
}

/// Unit of localization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Whole rows of the MLP value matrices.
    ValueVector,
    /// Individual entries of the MLP value matrices, indexed layer-major then
    /// row-major (`layer·d_ff·d_model + row·d_model + col`).
    IndividualWeight,
}

/// A set of trainable value vectors (or value-matrix weights).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueVectorMask {
    mode: MaskMode,
    /// Sorted, unique flat indices in the unit space of `mode`.
    members: Vec<usize>,
    total: usize,
}

impl ValueVectorMask {
    pub fn units(config: &ModelConfig, mode: MaskMode) -> usize {
        match mode {
            MaskMode::ValueVector => config.n_layers * config.d_ff,
            MaskMode::IndividualWeight => config.n_layers * config.d_ff * config.d_model,
        }
    }

    pub fn empty(config: &ModelConfig, mode: MaskMode) -> Self {
        Self { mode, members: Vec::new(), total: Self::units(config, mode) }
    }

    pub fn full(config: &ModelConfig, mode: MaskMode) -> Self {
        let total = Self::units(config, mode);
        Self { mode, members: (0..total).collect(), total }
    }

    /// Builds a mask from flat unit indices, rejecting duplicates and
    /// out-of-range members.
    pub fn from_flat(config: &ModelConfig, mode: MaskMode, members: impl IntoIterator<Item = usize>) -> Result<Self> {
        let total = Self::units(config, mode);
        let mut set = BTreeSet::new();
        for m in members {
            if m >= total {
                return Err(Error::Index(format!("mask member {m} >= {total}")));
            }
            if !set.insert(m) {
                return Err(Error::Contract(format!("duplicate mask member {m}")));
            }
        }
        Ok(Self { mode, members: set.into_iter().collect(), total })
    }

    pub fn from_vectors(config: &ModelConfig, ids: impl IntoIterator<Item = ValueVectorId>) -> Result<Self> {
        let mut flat = Vec::new();
        for id in ids {
            id.validate(config)?;
            flat.push(id.flat(config));
        }
        Self::from_flat(config, MaskMode::ValueVector, flat)
    }

    pub fn mode(&self) -> MaskMode {
        self.mode
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Exact selected fraction `len / total`.
    pub fn ratio(&self) -> f64 {
        self.members.len() as f64 / self.total as f64
    }

    pub fn contains(&self, flat: usize) -> bool {
        self.members.binary_search(&flat).is_ok()
    }

    /// Value-vector ids, for value-vector masks.
    pub fn vectors(&self, config: &ModelConfig) -> Vec<ValueVectorId> {
        match self.mode {
            MaskMode::ValueVector => self.members.iter().map(|&f| ValueVectorId::from_flat(f, config)).collect(),
            MaskMode::IndividualWeight => Vec::new(),
        }
    }

    pub fn is_disjoint(&self, other: &Self) -> bool {
        let (mut i, mut j) = (0, 0);
        while i < self.members.len() && j < other.members.len() {
            match self.members[i].cmp(&other.members[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return false,
            }
        }
        true
    }

    /// Per-tensor element selection this mask induces on the parameters.
    pub fn selection(&self, config: &ModelConfig) -> ParamSelection {
        let layout = config.layout();
        let mut per = vec![Selection::Nothing; layout.n_tensors];
        let row = config.d_model;
        let per_layer = config.d_ff * row;
        for layer in 0..config.n_layers {
            let idx = layout.mlp_value(layer);
            per[idx] = match self.mode {
                MaskMode::ValueVector => {
                    let lo = layer * config.d_ff;
                    let rows: Vec<usize> = self
                        .members
                        .iter()
                        .filter(|&&m| m >= lo && m < lo + config.d_ff)
                        .map(|&m| m - lo)
                        .collect();
                    if rows.is_empty() {
                        Selection::Nothing
                    } else {
                        Selection::Rows { row_len: row, rows }
                    }
                }
                MaskMode::IndividualWeight => {
                    let lo = layer * per_layer;
                    let elems: Vec<usize> = self
                        .members
                        .iter()
                        .filter(|&&m| m >= lo && m < lo + per_layer)
                        .map(|&m| m - lo)
                        .collect();
                    if elems.is_empty() {
                        Selection::Nothing
                    } else {
                        Selection::Elements(elems)
                    }
                }
            };
        }
        ParamSelection { per_tensor: per }
    }
}

/// Which elements of one parameter tensor are trainable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Selection {
    Nothing,
    Everything,
    Rows { row_len: usize, rows: Vec<usize> },
    Elements(Vec<usize>),
}

impl Selection {
    /// Calls `f` on every selected flat element index of a tensor of `len`.
    pub fn for_each(&self, len: usize, mut f: impl FnMut(usize)) {
        match self {
            Selection::Nothing => {}
            Selection::Everything => (0..len).for_each(f),
            Selection::Rows { row_len, rows } => {
                for &r in rows {
                    (r * row_len..(r + 1) * row_len).for_each(&mut f);
                }
            }
            Selection::Elements(e) => e.iter().for_each(|&i| f(i)),
        }
    }
}

/// Element selection over every parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSelection {
    per_tensor: Vec<Selection>,
}

impl ParamSelection {
    pub fn everything(config: &ModelConfig) -> Self {
        Self { per_tensor: vec![Selection::Everything; config.layout().n_tensors] }
    }

    pub fn get(&self, tensor: usize) -> &Selection {
        &self.per_tensor[tensor]
    }

    /// Whether any element of `tensor` is selected.
    pub fn touches(&self, tensor: usize) -> bool {
        !matches!(self.per_tensor[tensor], Selection::Nothing)
    }

    /// Zeroes every gradient entry outside the selection.
    pub fn apply(&self, grads: &mut Gradients) {
        for (i, sel) in self.per_tensor.iter().enumerate() {
            let g = grads.tensor_mut(i);
            match sel {
                Selection::Everything => {}
                Selection::Nothing => g.iter_mut().for_each(|v| *v = 0.0),
                other => {
                    let mut keep = vec![false; g.len()];
                    other.for_each(g.len(), |j| keep[j] = true);
                    for (v, k) in g.iter_mut().zip(keep) {
                        if !k {
                            *v = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Zeroes gradient entries outside `mask`; entries inside are unchanged.
pub fn mask_gradients(mut grads: Gradients, mask: &ValueVectorMask, params: &Parameters) -> Gradients {
    mask.selection(params.config()).apply(&mut grads);
    grads
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig { n_layers: 2, d_model: 4, d_ff: 6, n_heads: 2, vocab_size: 7, max_seq_len: 8, ..ModelConfig::default() }
    }

    #[test]
    fn value_vector_count_is_layers_times_d_ff() {
        let c = cfg();
        assert_eq!(ValueVectorMask::full(&c, MaskMode::ValueVector).len(), 12);
        assert_eq!(ValueVectorMask::full(&c, MaskMode::IndividualWeight).len(), 48);
    }

    #[test]
    fn rejects_invalid_members() {
        let c = cfg();
        assert!(ValueVectorMask::from_flat(&c, MaskMode::ValueVector, [12]).is_err());
        assert!(ValueVectorMask::from_flat(&c, MaskMode::ValueVector, [1, 1]).is_err());
        assert!(ValueVectorMask::from_vectors(&c, [ValueVectorId::new(2, 0)]).is_err());
    }

    #[test]
    fn ratio_is_exact() {
        let c = cfg();
        let m = ValueVectorMask::from_flat(&c, MaskMode::ValueVector, [0, 5, 7]).unwrap();
        assert_eq!(m.ratio(), 3.0 / 12.0);
    }

    #[test]
    fn disjointness() {
        let c = cfg();
        let a = ValueVectorMask::from_flat(&c, MaskMode::ValueVector, [0, 5, 7]).unwrap();
        let b = ValueVectorMask::from_flat(&c, MaskMode::ValueVector, [1, 6, 8]).unwrap();
        let d = ValueVectorMask::from_flat(&c, MaskMode::ValueVector, [8, 7]).unwrap();
        assert!(a.is_disjoint(&b));
        assert!(!a.is_disjoint(&d));
    }
}
