use serde::{Deserialize, Serialize};

/// Raw next-token scores over the vocabulary.
///
/// The model computes in f32; scores are widened to f64 on output so that
/// guidance arithmetic and entropy run at full precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Logits(pub Vec<f64>);

impl Logits {
    pub fn new(scores: Vec<f64>) -> Self {
        Self(scores)
    }

    pub fn from_f32(scores: &[f32]) -> Self {
        Self(scores.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Index of the largest score; ties go to the lowest id.
    pub fn argmax(&self) -> u32 {
        let mut best = 0usize;
        for (i, &v) in self.0.iter().enumerate().skip(1) {
            if v > self.0[best] {
                best = i;
            }
        }
        best as u32
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl From<Vec<f64>> for Logits {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}
