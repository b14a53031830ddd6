use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{aggregate_metrics, DurationMetrics};
use crate::data::Utterance;
use crate::dpo::{generate_pairs, DpoConfig, DpoTrainer, PreferencePair};
use crate::duration::{sample_durations, DurModelConfig, DurationExample, DurationModel, SamplingParams};
use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub const CSV_HEADER: &str = "pair_count,mean_abs_dur_err,exact_match,total_len_err";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub pair_counts: Vec<usize>,
    /// One DPO run per seed and count; rows report the median.
    pub seeds: Vec<u64>,
    pub dpo: DpoConfig,
    pub sampling: SamplingParams,
    pub clip_frames: usize,
    /// Seeds pair generation and the held-out evaluation streams.
    pub data_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            pair_counts: vec![10, 50, 100],
            seeds: vec![0, 1, 2],
            dpo: DpoConfig::default(),
            sampling: SamplingParams::default(),
            clip_frames: 300,
            data_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub pair_count: usize,
    pub seed: u64,
    pub metrics: DurationMetrics,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub pair_count: usize,
    pub metrics: DurationMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub baseline: DurationMetrics,
    /// Count 0 first, then one median row per requested count.
    pub rows: Vec<SweepRow>,
    pub runs: Vec<SweepRun>,
    pub pairs_available: usize,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6}\n",
                r.pair_count, r.metrics.mean_abs_err, r.metrics.exact_match, r.metrics.total_len_err
            ));
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:>6}  {:>10}  {:>8}  {:>8}\n", "pairs", "mean|dd|", "exact", "len_err");
        for r in &self.rows {
            s.push_str(&format!(
                "{:>6}  {:>10.4}  {:>8.4}  {:>8.4}\n",
                r.pair_count, r.metrics.mean_abs_err, r.metrics.exact_match, r.metrics.total_len_err
            ));
        }
        s
    }

    /// Writes `sweep.csv` and `sweep.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("sweep.csv"), self.to_csv())?;
        std::fs::write(dir.join("sweep.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Sample durations for every utterance of `held_out` (prompted by another
/// utterance of the same speaker) and score them against the recorded ones.
///
/// Each item draws from its own stream of `seed`, so two policies evaluated
/// with the same seed see the same prompts and the same random numbers.
pub fn evaluate_policy(
    model: &DurationModel,
    held_out: &[Utterance],
    sampling: &SamplingParams,
    clip_frames: usize,
    seed: u64,
) -> Result<DurationMetrics> {
    let mut scored = Vec::with_capacity(held_out.len());
    for i in 0..held_out.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let ex = DurationExample::prompted(held_out, i, clip_frames, &mut rng)?;
        let pred = sample_durations(model, &ex.prompt, &ex.phonemes, sampling, &mut rng)?;
        scored.push((pred, ex.durations));
    }
    aggregate_metrics(&scored)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn median_metrics(ms: &[DurationMetrics]) -> DurationMetrics {
    DurationMetrics {
        exact_match: median(ms.iter().map(|m| m.exact_match).collect()),
        mean_abs_err: median(ms.iter().map(|m| m.mean_abs_err).collect()),
        total_len_err: median(ms.iter().map(|m| m.total_len_err).collect()),
    }
}

/// Pair-count sweep: pairs come from the frozen snapshot's own predictions
/// on `train` (winner = recorded durations); every count and seed runs a
/// fresh DPO from the same snapshot and is evaluated on `held_out`.
pub fn style_transfer_sweep(
    model_cfg: &DurModelConfig,
    snapshot: &ParamStore,
    train: &[Utterance],
    held_out: &[Utterance],
    cfg: &SweepConfig,
    on_run: impl FnMut(&SweepRun),
) -> Result<SweepReport> {
    let policy = DurationModel::new(model_cfg, snapshot)?;
    let pairs = generate_pairs(train, &policy, &cfg.sampling, cfg.data_seed, cfg.clip_frames, None)?;
    sweep_with_pairs(model_cfg, snapshot, &pairs, held_out, cfg, on_run)
}

/// As [`style_transfer_sweep`] with a precomputed pair pool.
pub fn sweep_with_pairs(
    model_cfg: &DurModelConfig,
    snapshot: &ParamStore,
    pairs: &[PreferencePair],
    held_out: &[Utterance],
    cfg: &SweepConfig,
    mut on_run: impl FnMut(&SweepRun),
) -> Result<SweepReport> {
    if cfg.seeds.is_empty() || cfg.pair_counts.is_empty() {
        return Err(Error::Config("sweep needs at least one seed and one pair count".into()));
    }
    let needed = cfg.pair_counts.iter().copied().max().unwrap_or(0);
    if pairs.len() < needed {
        return Err(Error::Input(format!(
            "sweep asks for {needed} pairs but only {} are available",
            pairs.len()
        )));
    }
    let eval_seed = cfg.data_seed.wrapping_add(1);
    let base_model = DurationModel::new(model_cfg, snapshot)?;
    let baseline = evaluate_policy(&base_model, held_out, &cfg.sampling, cfg.clip_frames, eval_seed)?;
    let mut rows = vec![SweepRow {
        pair_count: 0,
        metrics: baseline,
    }];
    let mut runs = Vec::new();
    for &count in &cfg.pair_counts {
        let mut per_seed = Vec::with_capacity(cfg.seeds.len());
        for &seed in &cfg.seeds {
            let mut order: Vec<usize> = (0..pairs.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let subset: Vec<PreferencePair> = order[..count].iter().map(|&i| pairs[i].clone()).collect();
            let metrics = if count == 0 {
                baseline
            } else {
                let dcfg = DpoConfig { seed, ..cfg.dpo.clone() };
                let mut tr = DpoTrainer::new(model_cfg, snapshot, &dcfg)?;
                let report = tr.train(&subset, |_, _| {})?;
                let m = evaluate_policy(&tr.policy, held_out, &cfg.sampling, cfg.clip_frames, eval_seed)?;
                let run = SweepRun {
                    pair_count: count,
                    seed,
                    metrics: m,
                    final_loss: report.losses.last().copied().unwrap_or(f64::NAN),
                };
                on_run(&run);
                runs.push(run);
                m
            };
            per_seed.push(metrics);
        }
        rows.push(SweepRow {
            pair_count: count,
            metrics: median_metrics(&per_seed),
        });
    }
    Ok(SweepReport {
        baseline,
        rows,
        runs,
        pairs_available: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn csv_schema() {
        let m = DurationMetrics {
            exact_match: 0.5,
            mean_abs_err: 1.25,
            total_len_err: 0.1,
        };
        let r = SweepReport {
            baseline: m,
            rows: vec![SweepRow { pair_count: 0, metrics: m }],
            runs: vec![],
            pairs_available: 0,
        };
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("pair_count,mean_abs_dur_err,exact_match,total_len_err"));
        assert_eq!(lines.next(), Some("0,1.250000,0.500000,0.100000"));
    }
}
