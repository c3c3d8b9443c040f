use mti_core::analysis::{
    answer_entropy, cfg_usage, changed_partition, cohort_compare, gated_token_frequencies, high_entropy_share,
    ingest_reader, AnswerRecord, ReportOptions, SummaryReport, TokenStat, WordMode,
};
use mti_core::decode::trace_to_jsonl;
use mti_core::rng::XorShift64Star;
use mti_core::{decode, GuidanceConfig, GuidanceMode, ModelBundle, ModelConfig, SamplerConfig};
use std::collections::HashMap;

fn record(tokens: Vec<TokenStat>, correct: Option<bool>) -> AnswerRecord {
    AnswerRecord {
        source: "synthetic".into(),
        model_name: "none".into(),
        correct,
        tokens,
        entropy_approximated: false,
        trace: None,
    }
}

fn random_record(rng: &mut XorShift64Star, n: usize, correct: Option<bool>) -> AnswerRecord {
    let words = ["so", "if", "wait", "however", "**", "then"];
    let tokens = (0..n)
        .map(|step| {
            let h = rng.next_unit() * rng.next_unit() * 3.0;
            let gated = h > 1.0;
            TokenStat {
                step,
                token_text: words[(rng.next_u64() % words.len() as u64) as usize].into(),
                entropy: h,
                gated,
                changed: gated && rng.next_unit() < 0.4,
            }
        })
        .collect();
    record(tokens, correct)
}

#[test]
fn answer_entropy_recomputed() {
    let mut rng = XorShift64Star::from_seed(1);
    let r = random_record(&mut rng, 10, None);
    let mut sum = 0.0;
    for t in &r.tokens {
        sum += t.entropy;
    }
    assert_eq!(answer_entropy(&r).unwrap(), sum / 10.0);
}

#[test]
fn high_entropy_share_brute_force() {
    let mut rng = XorShift64Star::from_seed(2);
    let r = random_record(&mut rng, 1000, None);
    for cutoff in [0.0, 0.25, 0.5, 1.0, 2.0] {
        let s = high_entropy_share(&r, cutoff);
        let above: Vec<f64> = r.tokens.iter().map(|t| t.entropy).filter(|&h| h > cutoff).collect();
        let mut mass_above = 0.0;
        for h in &above {
            mass_above += h;
        }
        let total: f64 = r.tokens.iter().map(|t| t.entropy).sum();
        assert_eq!(s.count_above, above.len());
        assert_eq!(s.share_above, mass_above / total);
    }
    let shares: Vec<f64> = [0.0, 0.5, 1.0, 1.5, 3.0].iter().map(|&c| high_entropy_share(&r, c).share_above).collect();
    assert!(shares.windows(2).all(|w| w[0] >= w[1]));
    assert!(shares.iter().all(|s| (0.0..=1.0).contains(s)));
}

#[test]
fn cohorts_recomputed() {
    let mut rng = XorShift64Star::from_seed(3);
    let recs: Vec<AnswerRecord> = (0..50).map(|i| random_record(&mut rng, 20 + i, Some(i % 3 != 0))).collect();
    let r = cohort_compare(&recs).unwrap();
    let stats = |label: bool| {
        let v: Vec<f64> = recs
            .iter()
            .filter(|r| r.correct == Some(label))
            .map(|r| r.tokens.iter().map(|t| t.entropy).sum::<f64>() / r.tokens.len() as f64)
            .collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let std = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64).sqrt();
        (v.len(), mean, std)
    };
    let (nc, mc, sc) = stats(true);
    let (ni, mi, si) = stats(false);
    assert_eq!((r.correct.count, r.incorrect.count), (nc, ni));
    assert!((r.correct.mean - mc).abs() < 1e-12 && (r.incorrect.mean - mi).abs() < 1e-12);
    assert!((r.correct.std - sc).abs() < 1e-12 && (r.incorrect.std - si).abs() < 1e-12);
    assert!((r.mean_difference - (mi - mc)).abs() < 1e-12);
}

#[test]
fn partition_counts_by_hand() {
    // (entropy, gated, changed); bins of width 0.5 over [0, 3)
    let rows = [
        (0.1, true, false),
        (0.2, true, false),
        (0.7, true, true),
        (1.2, false, false),
        (1.6, true, true),
        (1.9, true, false),
        (2.4, true, true),
        (4.0, true, true),
    ];
    let r = record(
        rows.iter()
            .enumerate()
            .map(|(i, &(h, g, c))| TokenStat { step: i, token_text: "t".into(), entropy: h, gated: g, changed: c })
            .collect(),
        None,
    );
    let p = changed_partition(&r, 0.5, 3.0).unwrap();
    assert_eq!(p.changed.bins, vec![0, 1, 0, 1, 1, 0]);
    assert_eq!(p.changed.overflow, 1);
    assert_eq!(p.unchanged.bins, vec![2, 0, 0, 1, 0, 0]);
    assert_eq!(p.changed.total() + p.unchanged.total(), 7);
    assert_eq!(cfg_usage(&r), 7.0 / 8.0);
}

#[test]
fn frequencies_recounted() {
    let mut rng = XorShift64Star::from_seed(4);
    let recs: Vec<AnswerRecord> = (0..8).map(|_| random_record(&mut rng, 200, None)).collect();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for r in &recs {
        for t in r.tokens.iter().filter(|t| t.gated) {
            *counts.entry(t.token_text.as_str()).or_default() += 1;
        }
    }
    let mut expected: Vec<(String, usize)> = counts.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    expected.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    expected.truncate(4);
    assert_eq!(gated_token_frequencies(&recs, 4, WordMode::Token), expected);
}

#[test]
fn ingest_of_emitted_traces_is_lossless() {
    let m = ModelBundle::from_seed(ModelConfig::default(), 21).unwrap();
    let mut file = String::new();
    let mut originals = Vec::new();
    for (i, mode) in GuidanceMode::ALL.into_iter().enumerate() {
        let t = decode(&m, &[256, 50 + i as u32], &GuidanceConfig::new(mode).with_tau(5.53), &SamplerConfig::stochastic(i as u64), 25, &[]).unwrap();
        file.push_str(&trace_to_jsonl(&t));
        originals.push(AnswerRecord::from(t));
    }
    let back = ingest_reader(file.as_bytes()).unwrap();
    assert_eq!(back, originals);
    let opts = ReportOptions::default();
    assert_eq!(SummaryReport::build(&back, opts).unwrap(), SummaryReport::build(&originals, opts).unwrap());
    for (a, b) in back.iter().zip(&originals) {
        assert_eq!(cfg_usage(a), b.trace.as_ref().unwrap().cfg_usage());
    }
}
