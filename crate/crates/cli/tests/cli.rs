use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY_ACOUSTIC: &[&str] = &[
    "acoustic.n_layers=1",
    "acoustic.hidden_dim=32",
    "acoustic.n_heads=2",
    "acoustic.phone_dim=16",
    "acoustic.spk_dim=16",
    "acoustic.speaker_channels=16",
    "acoustic.time_dim=32",
];

const TINY_DURATION: &[&str] = &[
    "duration.enc_layers=1",
    "duration.dec_layers=1",
    "duration.hidden=32",
    "duration.heads=2",
    "duration.ref_query_len=4",
];

fn durflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_durflow"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn with_sets(base: &[&str], sets: &[&str]) -> Vec<String> {
    let mut v: Vec<String> = base.iter().map(|s| s.to_string()).collect();
    for s in sets {
        v.push("--set".into());
        v.push(s.to_string());
    }
    v
}

fn run_ok(args: &[String]) -> String {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = durflow(&refs);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn first_mel(dir: &Path) -> PathBuf {
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&d).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "mel") {
                return p;
            }
        }
    }
    panic!("no mel under {}", dir.display());
}

fn prepare(dir: &Path, name: &str, n: usize, style: &str, seed: u64) -> PathBuf {
    let out = dir.join(name);
    run_ok(&with_sets(
        &["prepare-data", "--out", out.to_str().unwrap(), "--seed", &seed.to_string()],
        &[&format!("synthetic.n_utterances={n}"), &format!("synthetic.style={style}")],
    ));
    out
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = durflow(&["eval", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(durflow(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn bad_override_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.txt");
    std::fs::write(&p, "1,2\n").unwrap();
    let p = p.to_str().unwrap();
    let out = durflow(&["eval", "--predicted", p, "--reference", p, "--set", "nope.x=1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.txt");
    std::fs::write(&p, "3,4,5\n1 2\n").unwrap();
    let json_out = dir.path().join("m.json");
    let p = p.to_str().unwrap();
    let stdout = run_ok(&[
        "eval".into(),
        "--predicted".into(),
        p.into(),
        "--reference".into(),
        p.into(),
        "--out".into(),
        json_out.to_str().unwrap().into(),
    ]);
    let m: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(m["exact_match"], 1.0);
    assert_eq!(m["mean_abs_err"], 0.0);
    assert!(json_out.exists());
}

#[test]
fn eval_failures_are_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    std::fs::write(&a, "3,4\n").unwrap();
    std::fs::write(&b, "3,4\n5\n").unwrap();
    let out = durflow(&["eval", "--predicted", a.to_str().unwrap(), "--reference", b.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let missing = dir.path().join("missing.txt");
    let out = durflow(&["eval", "--predicted", missing.to_str().unwrap(), "--reference", b.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn explicit_durations_fix_frame_count() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = prepare(dir.path(), "corpus", 4, "neutral", 0);
    let ck = dir.path().join("ck/acoustic.safetensors");
    run_ok(&with_sets(
        &["train-acoustic", "--corpus", corpus.to_str().unwrap(), "--out", ck.to_str().unwrap()],
        &[TINY_ACOUSTIC, &["train.steps=2", "train.batch_size=2"]].concat(),
    ));
    let out_dir = dir.path().join("synth");
    let stdout = run_ok(&with_sets(
        &[
            "synth",
            "--acoustic",
            ck.to_str().unwrap(),
            "--phonemes",
            "t a m",
            "--durations",
            "2,1,3",
            "--reference",
            first_mel(&corpus).to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ],
        &["solver.steps=2"],
    ));
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["frames"], 6);
    let mel = durflow_core::data::read_mel(out_dir.join("mel.mel")).unwrap();
    assert_eq!(mel.nrows(), 6);
    let wav = durflow_core::data::read_wav(out_dir.join("audio.wav")).unwrap();
    assert_eq!(wav.samples.len(), 6 * 160);

    // Durations without a duration model or explicit values cannot be resolved.
    let out = durflow(&[
        "synth",
        "--acoustic",
        ck.to_str().unwrap(),
        "--phonemes",
        "t a",
        "--reference",
        first_mel(&corpus).to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn duration_training_pairs_dpo_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p).to_str().unwrap().to_string();
    let corpus = prepare(dir.path(), "corpus", 6, "neutral", 0);
    let styled = prepare(dir.path(), "styled", 6, "storytelling", 1);
    let held = prepare(dir.path(), "held", 4, "storytelling", 2);
    let sets = [TINY_DURATION, &["train.steps=2", "train.batch_size=2"]].concat();
    run_ok(&with_sets(
        &["train-duration", "--corpus", corpus.to_str().unwrap(), "--out", &d("dur.safetensors")],
        &sets,
    ));

    let stdout = run_ok(&with_sets(
        &[
            "generate-pairs",
            "--corpus",
            styled.to_str().unwrap(),
            "--duration",
            &d("dur.safetensors"),
            "--out",
            &d("pairs"),
        ],
        &["pairs.pause_multiple=0"],
    ));
    assert!(stdout.contains("pairs ->"), "{stdout}");
    let pairs_file = dir.path().join("pairs/pairs.jsonl");
    assert!(std::fs::read_to_string(&pairs_file).unwrap().lines().count() > 0);

    let stdout = run_ok(&with_sets(
        &[
            "dpo",
            "--duration",
            &d("dur.safetensors"),
            "--pairs",
            pairs_file.to_str().unwrap(),
            "--out",
            &d("dpo.safetensors"),
        ],
        &["dpo.steps=2", "dpo.batch_size=2"],
    ));
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(v["final_loss"].as_f64().unwrap().is_finite());

    let mel = first_mel(&corpus);
    let wrong_kind = durflow(&[
        "synth",
        "--acoustic",
        &d("dur.safetensors"),
        "--phonemes",
        "t a",
        "--durations",
        "2,2",
        "--reference",
        mel.to_str().unwrap(),
    ]);
    assert_eq!(wrong_kind.status.code(), Some(1));

    run_ok(&with_sets(
        &["train-acoustic", "--corpus", corpus.to_str().unwrap(), "--out", &d("ac.safetensors")],
        &[TINY_ACOUSTIC, &["train.steps=1", "train.batch_size=2"]].concat(),
    ));
    let stdout = run_ok(&with_sets(
        &[
            "synth",
            "--acoustic",
            &d("ac.safetensors"),
            "--duration",
            &d("dpo.safetensors"),
            "--phonemes",
            "t a m a",
            "--prompt-phonemes",
            "m a",
            "--prompt-durations",
            "4,9",
            "--reference",
            mel.to_str().unwrap(),
            "--scale",
            "1.5",
            "--no-vocoder",
            "--out",
            &d("synth2"),
        ],
        &["solver.steps=2"],
    ));
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let durs: Vec<u64> = v["durations"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
    assert_eq!(durs.len(), 4);
    assert!(durs.iter().all(|&x| (1..=99).contains(&x)));
    assert_eq!(v["frames"].as_u64().unwrap(), durs.iter().sum::<u64>());
    assert!(!dir.path().join("synth2/audio.wav").exists());

    run_ok(&with_sets(
        &[
            "sweep",
            "--duration",
            &d("dur.safetensors"),
            "--train-corpus",
            styled.to_str().unwrap(),
            "--test-corpus",
            held.to_str().unwrap(),
            "--out",
            &d("sweep"),
        ],
        &["sweep.pair_counts=[1, 2]", "sweep.seeds=[0]", "sweep.dpo.steps=1", "sweep.dpo.batch_size=2"],
    ));
    let csv = std::fs::read_to_string(dir.path().join("sweep/sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "pair_count,mean_abs_dur_err,exact_match,total_len_err");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,"));
    assert!(dir.path().join("sweep/sweep.json").exists());
}
