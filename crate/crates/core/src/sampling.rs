//! Greedy and temperature/top-k/top-p sampling.

use std::fmt;
use std::str::FromStr;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::Logits;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Greedy,
    Stochastic,
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplerKind::Greedy => "greedy",
            SamplerKind::Stochastic => "stochastic",
        })
    }
}

impl FromStr for SamplerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(SamplerKind::Greedy),
            "stochastic" => Ok(SamplerKind::Stochastic),
            other => Err(format!("unknown sampler {other:?} (expected greedy or stochastic)")),
        }
    }
}

/// Sampling parameters. Greedy decoding ignores everything but `kind`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Greedy,
            temperature: 0.6,
            top_p: 0.95,
            top_k: 20,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn greedy() -> Self {
        Self::default()
    }

    pub fn stochastic(seed: u64) -> Self {
        Self {
            kind: SamplerKind::Stochastic,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.kind == SamplerKind::Greedy {
            return Ok(());
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(format!("temperature must be > 0, got {}", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(format!("top_p must be in (0, 1], got {}", self.top_p));
        }
        if self.top_k == 0 {
            return Err("top_k must be at least 1".into());
        }
        Ok(())
    }
}

pub fn sample_greedy(logits: &Logits) -> u32 {
    logits.argmax()
}

/// Support and probabilities the stochastic sampler draws from, in
/// descending probability order (ties by lowest id).
///
/// Pipeline: divide by temperature, keep the `top_k` highest, softmax over
/// the survivors, keep the shortest prefix whose cumulative mass reaches
/// `top_p`, renormalize.
pub fn truncated_distribution(logits: &Logits, cfg: &SamplerConfig) -> Vec<(u32, f64)> {
    let scaled: Vec<f64> = logits.as_slice().iter().map(|&v| v / cfg.temperature).collect();
    let mut order: Vec<u32> = (0..scaled.len() as u32).collect();
    order.sort_by(|&a, &b| scaled[b as usize].total_cmp(&scaled[a as usize]).then(a.cmp(&b)));
    order.truncate(cfg.top_k.max(1));

    let max = scaled[order[0] as usize];
    let exps: Vec<f64> = order.iter().map(|&i| (scaled[i as usize] - max).exp()).collect();
    let z: f64 = exps.iter().sum();

    let mut kept = Vec::with_capacity(order.len());
    let mut cum = 0.0;
    for (&id, &e) in order.iter().zip(&exps) {
        let p = e / z;
        kept.push((id, p));
        cum += p;
        if cum >= cfg.top_p {
            break;
        }
    }
    let mass: f64 = kept.iter().map(|&(_, p)| p).sum();
    for (_, p) in kept.iter_mut() {
        *p /= mass;
    }
    kept
}

/// Draws one token from [`truncated_distribution`] using a single uniform
/// variate from `rng`.
pub fn sample_stochastic(logits: &Logits, cfg: &SamplerConfig, rng: &mut ChaCha8Rng) -> u32 {
    let dist = truncated_distribution(logits, cfg);
    let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    let mut cum = 0.0;
    for &(id, p) in &dist {
        cum += p;
        if u < cum {
            return id;
        }
    }
    dist.last().expect("top_k >= 1").0
}

/// Config plus generator state for one decoding session.
#[derive(Debug, Clone)]
pub struct Sampler {
    cfg: SamplerConfig,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(cfg: SamplerConfig) -> Self {
        Self {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        }
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn sample(&mut self, logits: &Logits) -> u32 {
        match self.cfg.kind {
            SamplerKind::Greedy => sample_greedy(logits),
            SamplerKind::Stochastic => sample_stochastic(logits, &self.cfg, &mut self.rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_examples() {
        assert_eq!(sample_greedy(&Logits(vec![0.0, 3.0, 1.0])), 1);
        assert_eq!(sample_greedy(&Logits(vec![2.0, 2.0, 0.0])), 0);
        let mut v = vec![-5.0; 12];
        v[7] = 0.0;
        assert_eq!(sample_greedy(&Logits(v)), 7);
    }

    fn fixture() -> Logits {
        Logits((0..40).map(|i| ((i * 7919) % 23) as f64 * 0.3).collect())
    }

    #[test]
    fn top_k_one_is_argmax() {
        let l = fixture();
        for seed in 0..50 {
            let cfg = SamplerConfig {
                top_k: 1,
                ..SamplerConfig::stochastic(seed)
            };
            assert_eq!(Sampler::new(cfg).sample(&l), l.argmax());
        }
    }

    #[test]
    fn tiny_top_p_is_argmax() {
        let l = fixture();
        for seed in 0..50 {
            let cfg = SamplerConfig {
                top_p: 1e-12,
                ..SamplerConfig::stochastic(seed)
            };
            assert_eq!(Sampler::new(cfg).sample(&l), l.argmax());
        }
    }

    #[test]
    fn truncation_sums_to_one_and_respects_k() {
        let l = fixture();
        let d = truncated_distribution(&l, &SamplerConfig::stochastic(0));
        assert!(d.len() <= 20);
        assert!((d.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(d.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn seeded_draws_repeat() {
        let l = fixture();
        let draw = |seed| {
            let mut s = Sampler::new(SamplerConfig::stochastic(seed));
            (0..200).map(|_| s.sample(&l)).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }

    #[test]
    fn validation() {
        assert!(SamplerConfig::stochastic(0).validate().is_ok());
        let bad = SamplerConfig {
            temperature: 0.0,
            ..SamplerConfig::stochastic(0)
        };
        assert!(bad.validate().is_err());
        let bad = SamplerConfig {
            top_p: 1.5,
            ..SamplerConfig::stochastic(0)
        };
        assert!(bad.validate().is_err());
        let greedy_ignores = SamplerConfig {
            top_p: 7.0,
            ..SamplerConfig::greedy()
        };
        assert!(greedy_ignores.validate().is_ok());
    }
}
