#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use durflow_annotate::{Candidate, Rendition, Store, StoreConfig};
use durflow_core::data::synthetic::synthetic_vocab;
use durflow_core::data::write_mel;
use durflow_core::dpo::{PauseFilter, PromptRecord};
use ndarray::Array2;

pub fn annotators(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("ann{i}")).collect()
}

/// `n` candidates with media and reference clips under `dir`.
pub fn candidates(dir: &Path, n: usize) -> Vec<Candidate> {
    std::fs::create_dir_all(dir.join("media")).unwrap();
    write_mel(dir.join("ref.mel"), &Array2::from_elem((20, 80), 0.5f32)).unwrap();
    (0..n)
        .map(|i| {
            let id = format!("t{i:04}");
            let media: Vec<PathBuf> = (0..2).map(|k| PathBuf::from(format!("media/{id}-{k}.wav"))).collect();
            for (k, m) in media.iter().enumerate() {
                std::fs::write(dir.join(m), format!("{id}-{k}")).unwrap();
            }
            Candidate {
                id,
                prompt: PromptRecord {
                    phonemes: vec!["m".into(), "a".into()],
                    durations: vec![4, 9],
                    ref_mel: PathBuf::from("ref.mel"),
                },
                phonemes: vec!["t".into(), "a".into(), "m".into()],
                renditions: [
                    Rendition {
                        durations: vec![3, 10, 5],
                        media: media[0].clone(),
                    },
                    Rendition {
                        durations: vec![3, 7 + (i % 3) as u32, 6],
                        media: media[1].clone(),
                    },
                ],
            }
        })
        .collect()
}

pub fn open(dir: &Path, n_annotators: usize, seed: u64) -> Store {
    Store::open(StoreConfig {
        log_path: dir.join("log.jsonl"),
        media_root: dir.to_path_buf(),
        vocab: synthetic_vocab(),
        annotators: annotators(n_annotators),
        pause_filter: Some(PauseFilter::new(HashMap::from([(
            synthetic_vocab().id("a").unwrap(),
            5.0,
        )]))),
        seed,
    })
    .unwrap()
}
