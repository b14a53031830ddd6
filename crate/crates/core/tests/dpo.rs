use candle_core::{DType, Device};
use durflow_core::data::synthetic::{generate_corpus, SyntheticConfig};
use durflow_core::data::MelConfig;
use durflow_core::dpo::*;
use durflow_core::duration::{DurModelConfig, DurationModel, SamplingParams};
use durflow_core::nn::ParamStore;

fn small_cfg(vocab: usize) -> DurModelConfig {
    DurModelConfig {
        enc_layers: 1,
        dec_layers: 1,
        hidden: 32,
        heads: 2,
        ref_query_len: 4,
        vocab_size: vocab,
        ..DurModelConfig::default()
    }
}

fn fixture(dtype: DType) -> (DurModelConfig, ParamStore, Vec<PreferencePair>) {
    let corpus = generate_corpus(&SyntheticConfig::default(), &MelConfig::default(), None).unwrap();
    let cfg = small_cfg(corpus.vocab.len());
    let store = ParamStore::new(7, dtype, &Device::Cpu);
    let model = DurationModel::new(&cfg, &store).unwrap();
    let pairs = generate_pairs(&corpus.utterances, &model, &SamplingParams::default(), 3, 40, None).unwrap();
    assert!(pairs.len() >= 4, "an untrained model should rarely reproduce the labels");
    (cfg, store, pairs)
}

#[test]
fn loss_at_reference_is_ln2() {
    let (cfg, store, pairs) = fixture(DType::F64);
    let tr = DpoTrainer::new(&cfg, &store, &DpoConfig::default()).unwrap();
    for p in &pairs {
        let loss = dpo_loss(&tr.policy, tr.reference(), p, 0.1).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() <= 1e-9, "{loss}");
    }
}

#[test]
fn loss_matches_bradley_terry() {
    let (cfg, store, pairs) = fixture(DType::F64);
    let dcfg = DpoConfig {
        steps: 3,
        lr: 1e-3,
        ..DpoConfig::default()
    };
    let mut tr = DpoTrainer::new(&cfg, &store, &dcfg).unwrap();
    tr.train(&pairs, |_, _| {}).unwrap();
    for p in &pairs {
        let loss = dpo_loss(&tr.policy, tr.reference(), p, 0.1).unwrap();
        let bt = bt_preference_prob(&tr.policy, tr.reference(), p, 0.1).unwrap();
        assert!(((-loss).exp() - bt).abs() <= 1e-12);
    }
}

#[test]
fn closed_form_loss_limits() {
    assert_eq!(dpo_loss_from_logprobs(0.0, 0.0, 0.0, 0.0, 0.1), std::f64::consts::LN_2);
    let mut prev = f64::INFINITY;
    for i in -50..=50 {
        let m = i as f64 * 4.0;
        let l = dpo_loss_from_logprobs(m, 0.0, 0.0, 0.0, 0.1);
        assert!(l < prev);
        prev = l;
    }
    assert!(dpo_loss_from_logprobs(1e4, 0.0, 0.0, 0.0, 0.1) < 1e-40);
    assert!(dpo_loss_from_logprobs(-1e4, 0.0, 0.0, 0.0, 0.1) > 999.0);
}

#[test]
fn one_step_increases_margin() {
    let (cfg, store, pairs) = fixture(DType::F64);
    let pair = &pairs[0];
    let dcfg = DpoConfig {
        lr: 1e-4,
        ..DpoConfig::default()
    };
    let mut tr = DpoTrainer::new(&cfg, &store, &dcfg).unwrap();
    let before = pair_margin(&tr.policy, tr.reference(), pair).unwrap();
    let (w, l) = tr.reference_logprobs(&[pair]).unwrap();
    tr.step(&[pair], &w, &l).unwrap();
    let after = pair_margin(&tr.policy, tr.reference(), pair).unwrap();
    assert_eq!(before, 0.0);
    assert!(after > before, "{after}");
}

#[test]
fn zero_lr_leaves_policy_unchanged() {
    let (cfg, store, pairs) = fixture(DType::F32);
    let dcfg = DpoConfig {
        lr: 0.0,
        steps: 2,
        ..DpoConfig::default()
    };
    let mut tr = DpoTrainer::new(&cfg, &store, &dcfg).unwrap();
    let report = tr.train(&pairs, |_, _| {}).unwrap();
    assert_eq!(tr.store.fingerprint().unwrap(), store.fingerprint().unwrap());
    assert_eq!(report.reference_fingerprint, store.fingerprint().unwrap());
    assert!(report.losses.iter().all(|&l| (l - std::f64::consts::LN_2).abs() < 1e-6));
}

#[test]
fn training_replays_bit_exactly() {
    let (cfg, store, pairs) = fixture(DType::F32);
    let dcfg = DpoConfig {
        steps: 3,
        batch_size: 2,
        ..DpoConfig::default()
    };
    let run = || {
        let mut tr = DpoTrainer::new(&cfg, &store, &dcfg).unwrap();
        let r = tr.train(&pairs, |_, _| {}).unwrap();
        (r.losses, tr.store.fingerprint().unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn sequence_logprob_is_token_sum() {
    let (cfg, store, pairs) = fixture(DType::F64);
    let model = DurationModel::new(&cfg, &store).unwrap();
    let ex = pairs[0].winner();
    let tokens = token_logprobs(&model, &ex).unwrap();
    assert_eq!(tokens.len(), ex.durations.len());
    assert!((tokens.iter().sum::<f64>() - seq_logprob(&model, &ex).unwrap()).abs() < 1e-12);
}

#[test]
fn uniform_model_scores_n_ln_100() {
    let (cfg, store, pairs) = fixture(DType::F64);
    // Zeroing every weight makes the duration logits constant.
    let zeroed = store.deep_clone().unwrap();
    for v in zeroed.vars() {
        v.set(&v.as_tensor().zeros_like().unwrap()).unwrap();
    }
    let model = DurationModel::new(&cfg, &zeroed).unwrap();
    let ex = pairs[0].winner();
    let lp = seq_logprob(&model, &ex).unwrap();
    let expect = -(ex.durations.len() as f64) * 100f64.ln();
    assert!((lp - expect).abs() < 1e-9, "{lp} vs {expect}");
}

#[test]
fn losers_differ_from_winners_and_pass_the_filter() {
    let corpus = generate_corpus(&SyntheticConfig::default(), &MelConfig::default(), None).unwrap();
    let cfg = small_cfg(corpus.vocab.len());
    let model = DurationModel::new(&cfg, &ParamStore::new(7, DType::F32, &Device::Cpu)).unwrap();
    let medians = corpus.duration_medians();
    let filter = PauseFilter::new(medians).with_multiple(4.0);
    let pairs = generate_pairs(&corpus.utterances, &model, &SamplingParams::default(), 3, 40, Some(&filter)).unwrap();
    for p in &pairs {
        assert_ne!(p.d_w, p.d_l);
        assert!(filter.check(&p.phonemes, &p.d_l).is_none(), "{}", p.id);
    }

    // A filter nothing can pass leaves every item unpaired.
    let strict = PauseFilter::new(corpus.duration_medians()).with_multiple(0.0);
    let none = generate_pairs(&corpus.utterances, &model, &SamplingParams::default(), 3, 40, Some(&strict)).unwrap();
    assert!(none.is_empty());
}

#[test]
fn epochs_override_steps() {
    let cfg = DpoConfig {
        steps: 7,
        batch_size: 8,
        ..DpoConfig::default()
    };
    assert_eq!(cfg.steps_for(100), 7);
    let cfg = DpoConfig { epochs: Some(8), ..cfg };
    assert_eq!(cfg.steps_for(100), 100);
    assert_eq!(cfg.steps_for(10), 10);
    assert_eq!(cfg.steps_for(3), 8);
}
