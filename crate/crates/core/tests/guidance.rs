mod support;

use mti_core::guidance::{init_uncond_cache, negative_branch_logits, vanilla_uncond_step};
use mti_core::model::forward;
use mti_core::{decode, GuidanceConfig, GuidanceMode, KvCache, ModelBundle, ModelConfig, ModelWeights, SamplerConfig, Tokenizer};
use support::oracle::{full_forward, max_abs_diff, sharpened};

fn neg() -> Vec<u32> {
    Tokenizer.tokenize(b"OUTPUT ERROR")
}

#[test]
fn branch_matches_uncached_concatenation() {
    for w in [ModelWeights::init(ModelConfig::default(), 31).unwrap(), sharpened(31, 5.0)] {
        let mut cache = KvCache::new(&w.config);
        let mut seq = vec![256u32, 81, 58, 32];
        forward(&w, &seq, &mut cache).unwrap();
        for step in 0..6u32 {
            let snap = cache.clone();
            let branch = negative_branch_logits(&w, &mut cache, &neg()).unwrap();
            assert!(cache.bits_eq(&snap));
            let mut full = seq.clone();
            full.extend(neg());
            let mm = max_abs_diff(branch.as_slice(), &full_forward(&w, &full));
            assert!(mm <= 1e-5, "step {step}: {mm}");
            let next = (step * 53 + 7) % 256;
            forward(&w, &[next], &mut cache).unwrap();
            seq.push(next);
        }
    }
}

#[test]
fn three_token_negative_prompt_forwards_three_positions() {
    let m = ModelBundle::from_seed(ModelConfig::default(), 4).unwrap();
    let g = GuidanceConfig::new(GuidanceMode::Mti).with_tau(0.0).with_neg_prompt(vec![69, 82, 82]);
    let t = decode(&m, &[256, 65], &g, &SamplerConfig::greedy(), 8, &[]).unwrap();
    for r in &t.records {
        assert_eq!(r.forwarded_positions_delta, 1 + 3);
    }
    assert_eq!(t.totals.forwarded_positions_branch, 3 * t.records.len());
}

#[test]
fn vanilla_cache_holds_negative_prompt_then_emitted_tokens() {
    let m = ModelBundle::from_seed(ModelConfig::default(), 12).unwrap();
    let g = GuidanceConfig::new(GuidanceMode::Vanilla);
    let t = decode(&m, &[256, 120, 121], &g, &SamplerConfig::stochastic(3), 10, &[]).unwrap();
    let emitted = t.generated_tokens();

    let (mut cache_u, mut logits) = init_uncond_cache(&m.weights, &neg()).unwrap();
    assert_eq!(cache_u.len(), neg().len());
    let mut ctx = neg();
    for (step, &tok) in emitted.iter().enumerate() {
        // logits for step `step` cover [neg, x_1 .. x_{step}]
        assert_eq!(cache_u.len(), neg().len() + step);
        let mm = max_abs_diff(logits.as_slice(), &full_forward(&m.weights, &ctx));
        assert!(mm <= 1e-5, "{mm}");
        logits = vanilla_uncond_step(&m.weights, &mut cache_u, tok).unwrap();
        ctx.push(tok);
    }
    assert_eq!(cache_u.len(), neg().len() + emitted.len());
    assert_eq!(t.cache.uncond, cache_u.len());
}
