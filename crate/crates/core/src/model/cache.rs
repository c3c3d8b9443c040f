use super::{ModelConfig, ModelError};

#[derive(Debug, Clone, PartialEq)]
struct LayerCache {
    /// `len x dim`; each row is the concatenation of all heads, keys
    /// stored after rotary embedding.
    keys: Vec<f32>,
    values: Vec<f32>,
}

/// Per-layer key/value history of one decoding context.
///
/// All layers always hold the same number of positions. Entries are never
/// rewritten once appended, so truncation leaves the surviving prefix
/// untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache {
    layers: Vec<LayerCache>,
    width: usize,
    max_context: usize,
    len: usize,
}

impl KvCache {
    pub fn new(config: &ModelConfig) -> Self {
        let layer = LayerCache {
            keys: Vec::new(),
            values: Vec::new(),
        };
        Self {
            layers: vec![layer; config.n_layers],
            width: config.dim,
            max_context: config.max_context,
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn max_context(&self) -> usize {
        self.max_context
    }

    /// Positions still available before `max_context`.
    pub fn remaining(&self) -> usize {
        self.max_context - self.len
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Drops positions `len..` from every layer.
    pub fn truncate(&mut self, len: usize) -> Result<(), ModelError> {
        if len > self.len {
            return Err(ModelError::TruncateBeyondLength {
                len: self.len,
                requested: len,
            });
        }
        for layer in &mut self.layers {
            layer.keys.truncate(len * self.width);
            layer.values.truncate(len * self.width);
        }
        self.len = len;
        Ok(())
    }

    pub fn clear(&mut self) {
        // Cannot fail: 0 <= len.
        let _ = self.truncate(0);
    }

    pub fn keys(&self, layer: usize) -> &[f32] {
        &self.layers[layer].keys
    }

    pub fn values(&self, layer: usize) -> &[f32] {
        &self.layers[layer].values
    }

    /// Snapshot equality on bit patterns of every K/V entry and the length.
    pub fn bits_eq(&self, other: &Self) -> bool {
        fn same(a: &[f32], b: &[f32]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        self.len == other.len
            && self.width == other.width
            && self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| same(&a.keys, &b.keys) && same(&a.values, &b.values))
    }

    /// Stages one layer's K/V row for the position being processed.
    pub(super) fn push_row(&mut self, layer: usize, key: &[f32], value: &[f32]) {
        debug_assert_eq!(key.len(), self.width);
        let l = &mut self.layers[layer];
        l.keys.extend_from_slice(key);
        l.values.extend_from_slice(value);
    }

    /// Commits a position once every layer has pushed its row.
    pub(super) fn commit_position(&mut self) {
        self.len += 1;
        debug_assert!(self
            .layers
            .iter()
            .all(|l| l.keys.len() == self.len * self.width));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, ModelWeights};

    fn setup() -> (ModelWeights, KvCache) {
        let cfg = ModelConfig::default();
        let w = ModelWeights::init(cfg, 3).unwrap();
        let cache = KvCache::new(&cfg);
        (w, cache)
    }

    #[test]
    fn truncate_to_current_len_is_noop() {
        let (w, mut cache) = setup();
        forward(&w, &[256, 1, 2, 3], &mut cache).unwrap();
        let snap = cache.clone();
        cache.truncate(cache.len()).unwrap();
        assert!(cache.bits_eq(&snap));
    }

    #[test]
    fn append_then_truncate_restores_snapshot() {
        let (w, mut cache) = setup();
        forward(&w, &[256, 72, 105], &mut cache).unwrap();
        let snap = cache.clone();
        forward(&w, &[10, 20, 30], &mut cache).unwrap();
        assert_eq!(cache.len(), 6);
        cache.truncate(3).unwrap();
        assert!(cache.bits_eq(&snap));
    }

    #[test]
    fn truncate_beyond_len_errors() {
        let (w, mut cache) = setup();
        forward(&w, &[256], &mut cache).unwrap();
        assert!(matches!(
            cache.truncate(2),
            Err(ModelError::TruncateBeyondLength { len: 1, requested: 2 })
        ));
    }

    #[test]
    fn layers_share_length() {
        let (w, mut cache) = setup();
        forward(&w, &[256, 5, 6, 7, 8], &mut cache).unwrap();
        for l in 0..cache.n_layers() {
            assert_eq!(cache.keys(l).len(), 5 * 64);
            assert_eq!(cache.values(l).len(), 5 * 64);
        }
    }
}
