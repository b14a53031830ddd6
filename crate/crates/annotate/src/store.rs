use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use durflow_core::data::{check_duration_labels, PhonemeVocab};
use durflow_core::dpo::{PairRecord, PairSource, PauseFilter};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AnnotateError, Result};
use crate::types::{Candidate, Choice, ImportReport, Judgment, Rejection, Side, TaskStatus, TaskView, GUIDELINES};

pub struct StoreConfig {
    pub log_path: PathBuf,
    pub media_root: PathBuf,
    pub vocab: PhonemeVocab,
    pub annotators: Vec<String>,
    pub pause_filter: Option<PauseFilter>,
    /// Seeds the hidden A/B order of newly imported tasks.
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
enum Event {
    Import { candidate: Candidate, swapped: bool },
    Judgment(Judgment),
}

struct Task {
    candidate: Candidate,
    /// When set, side A shows rendition 1 instead of rendition 0.
    swapped: bool,
    assignee: Option<String>,
    winner: Option<usize>,
    skipped_by: HashSet<String>,
}

impl Task {
    fn rendition(&self, side: Side) -> usize {
        match (side, self.swapped) {
            (Side::A, false) | (Side::B, true) => 0,
            _ => 1,
        }
    }
}

struct Inner {
    tasks: BTreeMap<String, Task>,
    assignments: HashMap<String, String>,
    judged: HashSet<(String, String)>,
    /// Per annotator: decisive judgments and total decision time.
    throughput: HashMap<String, (usize, u64)>,
    log: File,
    rng: ChaCha8Rng,
}

pub struct Store {
    media_root: PathBuf,
    vocab: PhonemeVocab,
    annotators: HashSet<String>,
    pause_filter: Option<PauseFilter>,
    inner: Mutex<Inner>,
}

impl Store {
    /// Open (or create) the log at `cfg.log_path` and replay it.
    pub fn open(cfg: StoreConfig) -> Result<Self> {
        if let Some(dir) = cfg.log_path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let events = if cfg.log_path.exists() {
            read_log(&cfg.log_path)?
        } else {
            Vec::new()
        };
        let log = OpenOptions::new().create(true).append(true).open(&cfg.log_path)?;
        let store = Self {
            media_root: cfg.media_root,
            vocab: cfg.vocab,
            annotators: cfg.annotators.into_iter().collect(),
            pause_filter: cfg.pause_filter,
            inner: Mutex::new(Inner {
                tasks: BTreeMap::new(),
                assignments: HashMap::new(),
                judged: HashSet::new(),
                throughput: HashMap::new(),
                log,
                rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            }),
        };
        {
            let mut inner = store.lock();
            for ev in events {
                apply(&mut inner, ev);
            }
        }
        Ok(store)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn check_annotator(&self, annotator: &str) -> Result<()> {
        if self.annotators.contains(annotator) {
            Ok(())
        } else {
            Err(AnnotateError::UnknownAnnotator(annotator.to_string()))
        }
    }

    fn resolve_media(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.media_root.join(p)
        }
    }

    fn validate(&self, c: &Candidate) -> std::result::Result<(), String> {
        if c.id.is_empty() || c.id.contains('/') {
            return Err("task id must be non-empty and contain no '/'".into());
        }
        let ids = self.vocab.encode(&c.phonemes).map_err(|e| e.to_string())?;
        let prompt_ids = self.vocab.encode(&c.prompt.phonemes).map_err(|e| e.to_string())?;
        if prompt_ids.len() != c.prompt.durations.len() {
            return Err("prompt phonemes and durations differ in length".into());
        }
        check_duration_labels(&c.prompt.durations).map_err(|e| format!("prompt: {e}"))?;
        if c.renditions[0].durations == c.renditions[1].durations {
            return Err("renditions have identical durations".into());
        }
        for (i, r) in c.renditions.iter().enumerate() {
            if r.durations.len() != ids.len() {
                return Err(format!(
                    "rendition {i} has {} durations for {} phonemes",
                    r.durations.len(),
                    ids.len()
                ));
            }
            check_duration_labels(&r.durations).map_err(|e| format!("rendition {i}: {e}"))?;
            if !self.resolve_media(&r.media).is_file() {
                return Err(format!("rendition {i}: media {} not found", r.media.display()));
            }
            if let Some(reason) = self.pause_filter.as_ref().and_then(|f| f.check(&ids, &r.durations)) {
                return Err(format!("rendition {i}: {reason}"));
            }
        }
        Ok(())
    }

    /// Create one pending task per valid candidate. Re-importing an identical
    /// candidate is a no-op; reusing an id for different content is rejected.
    pub fn import(&self, candidates: Vec<Candidate>) -> Result<ImportReport> {
        let mut report = ImportReport::default();
        let mut inner = self.lock();
        for c in candidates {
            if let Some(existing) = inner.tasks.get(&c.id) {
                if existing.candidate == c {
                    report.task_ids.push(c.id);
                } else {
                    report.rejected.push(Rejection {
                        id: c.id,
                        reason: "id already used by a different candidate".into(),
                    });
                }
                continue;
            }
            if let Err(reason) = self.validate(&c) {
                tracing::info!(id = %c.id, %reason, "candidate rejected");
                report.rejected.push(Rejection { id: c.id, reason });
                continue;
            }
            let swapped = inner.rng.random_bool(0.5);
            let id = c.id.clone();
            append(&mut inner, Event::Import { candidate: c, swapped })?;
            report.task_ids.push(id);
            report.created += 1;
        }
        Ok(report)
    }

    fn view(&self, inner: &Inner, task_id: &str, annotator: &str) -> TaskView {
        let (judged, ms) = inner.throughput.get(annotator).copied().unwrap_or((0, 0));
        let pairs_per_hour = if ms == 0 {
            0.0
        } else {
            judged as f64 * 3_600_000.0 / ms as f64
        };
        TaskView {
            task_id: task_id.to_string(),
            media_a: format!("/media/{task_id}/A"),
            media_b: format!("/media/{task_id}/B"),
            guidelines: GUIDELINES.iter().map(|g| g.to_string()).collect(),
            judged,
            pairs_per_hour,
        }
    }

    /// The annotator's current task, or a newly assigned pending one.
    pub fn next_task(&self, annotator: &str) -> Result<Option<TaskView>> {
        self.check_annotator(annotator)?;
        let mut inner = self.lock();
        if let Some(id) = inner.assignments.get(annotator).cloned() {
            return Ok(Some(self.view(&inner, &id, annotator)));
        }
        let id = inner
            .tasks
            .iter()
            .find(|(_, t)| t.winner.is_none() && t.assignee.is_none() && !t.skipped_by.contains(annotator))
            .map(|(id, _)| id.clone());
        let Some(id) = id else { return Ok(None) };
        inner.tasks.get_mut(&id).expect("found above").assignee = Some(annotator.to_string());
        inner.assignments.insert(annotator.to_string(), id.clone());
        Ok(Some(self.view(&inner, &id, annotator)))
    }

    pub fn submit(&self, j: Judgment) -> Result<()> {
        self.check_annotator(&j.annotator)?;
        let mut inner = self.lock();
        let task = inner
            .tasks
            .get(&j.task_id)
            .ok_or_else(|| AnnotateError::UnknownTask(j.task_id.clone()))?;
        if inner.judged.contains(&(j.task_id.clone(), j.annotator.clone())) {
            return Err(AnnotateError::Conflict(format!(
                "{} already judged task {}",
                j.annotator, j.task_id
            )));
        }
        if task.assignee.as_deref() != Some(j.annotator.as_str()) {
            return Err(AnnotateError::Conflict(format!(
                "task {} is not assigned to {}",
                j.task_id, j.annotator
            )));
        }
        append(&mut inner, Event::Judgment(j))
    }

    pub fn status(&self, task_id: &str) -> Result<TaskStatus> {
        let inner = self.lock();
        let t = inner
            .tasks
            .get(task_id)
            .ok_or_else(|| AnnotateError::UnknownTask(task_id.to_string()))?;
        Ok(if t.winner.is_some() {
            TaskStatus::Judged
        } else if t.assignee.is_some() {
            TaskStatus::Assigned
        } else if !self.annotators.is_empty() && self.annotators.iter().all(|a| t.skipped_by.contains(a)) {
            TaskStatus::Skipped
        } else {
            TaskStatus::Pending
        })
    }

    pub fn task_ids(&self) -> Vec<String> {
        self.lock().tasks.keys().cloned().collect()
    }

    /// File behind side `side` of a task.
    pub fn media(&self, task_id: &str, side: Side) -> Result<PathBuf> {
        let inner = self.lock();
        let t = inner
            .tasks
            .get(task_id)
            .ok_or_else(|| AnnotateError::UnknownTask(task_id.to_string()))?;
        Ok(self.resolve_media(&t.candidate.renditions[t.rendition(side)].media))
    }

    /// One record per judged task, ordered by task id.
    pub fn export(&self) -> Result<Vec<PairRecord>> {
        let inner = self.lock();
        Ok(inner
            .tasks
            .values()
            .filter_map(|t| {
                let w = t.winner?;
                let c = &t.candidate;
                Some(PairRecord {
                    id: c.id.clone(),
                    prompt: c.prompt.clone(),
                    phonemes: c.phonemes.clone(),
                    d_w: c.renditions[w].durations.clone(),
                    d_l: c.renditions[1 - w].durations.clone(),
                    source: PairSource::Human,
                })
            })
            .collect())
    }

    pub fn export_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in self.export()? {
            out.push_str(&serde_json::to_string(&r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

fn append(inner: &mut Inner, ev: Event) -> Result<()> {
    let line = serde_json::to_string(&ev)?;
    writeln!(inner.log, "{line}")?;
    inner.log.flush()?;
    apply(inner, ev);
    Ok(())
}

fn apply(inner: &mut Inner, ev: Event) {
    match ev {
        Event::Import { candidate, swapped } => {
            inner.tasks.insert(
                candidate.id.clone(),
                Task {
                    candidate,
                    swapped,
                    assignee: None,
                    winner: None,
                    skipped_by: HashSet::new(),
                },
            );
        }
        Event::Judgment(j) => {
            inner.assignments.remove(&j.annotator);
            let Some(t) = inner.tasks.get_mut(&j.task_id) else {
                return;
            };
            t.assignee = None;
            match j.choice {
                Choice::A => t.winner = Some(t.rendition(Side::A)),
                Choice::B => t.winner = Some(t.rendition(Side::B)),
                Choice::Skip => {
                    t.skipped_by.insert(j.annotator.clone());
                }
            }
            if j.choice != Choice::Skip {
                let e = inner.throughput.entry(j.annotator.clone()).or_default();
                e.0 += 1;
                e.1 += j.elapsed_ms;
            }
            inner.judged.insert((j.task_id, j.annotator));
        }
    }
}

/// Replay a log; a torn final line from an interrupted write is dropped.
fn read_log(path: &Path) -> Result<Vec<Event>> {
    let lines: Vec<String> = BufReader::new(File::open(path)?).lines().collect::<std::io::Result<_>>()?;
    let mut events = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(ev) => events.push(ev),
            Err(e) if i + 1 == lines.len() => {
                tracing::warn!(line = i + 1, error = %e, "dropping torn final log line");
            }
            Err(e) => {
                return Err(AnnotateError::Invalid(format!("{}:{}: {e}", path.display(), i + 1)));
            }
        }
    }
    Ok(events)
}
