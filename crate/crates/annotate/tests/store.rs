mod common;

use durflow_annotate::{AnnotateError, Choice, Judgment, Side, TaskStatus};
use durflow_core::data::synthetic::synthetic_vocab;
use durflow_core::dpo::read_pairs;

fn judge(task: &str, who: &str, choice: Choice) -> Judgment {
    Judgment {
        task_id: task.into(),
        annotator: who.into(),
        choice,
        elapsed_ms: 1000,
    }
}

#[test]
fn import_creates_one_task_per_candidate() {
    let dir = tempfile::tempdir().unwrap();
    let store = common::open(dir.path(), 2, 0);
    let report = store.import(common::candidates(dir.path(), 5)).unwrap();
    assert_eq!(report.created, 5);
    assert!(report.rejected.is_empty());
    for id in &report.task_ids {
        assert_eq!(store.status(id).unwrap(), TaskStatus::Pending);
    }
}

#[test]
fn reimport_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let store = common::open(dir.path(), 1, 0);
    let c = common::candidates(dir.path(), 4);
    store.import(c.clone()).unwrap();
    let again = store.import(c.clone()).unwrap();
    assert_eq!(again.created, 0);
    assert_eq!(again.task_ids.len(), 4);
    assert_eq!(store.task_ids().len(), 4);

    let mut changed = c[0].clone();
    changed.renditions[0].durations[0] = 4;
    let r = store.import(vec![changed]).unwrap();
    assert_eq!(r.rejected.len(), 1);
}

#[test]
fn abnormal_pause_is_excluded() {
    let dir = tempfile::tempdir().unwrap();
    let store = common::open(dir.path(), 1, 0);
    let mut c = common::candidates(dir.path(), 2);
    // "a" at the interior position with median 5 and limit 4x.
    c[1].phonemes = vec!["t".into(), "a".into(), "m".into()];
    c[1].renditions[1].durations = vec![3, 21, 6];
    let r = store.import(c).unwrap();
    assert_eq!(r.created, 1);
    assert_eq!(r.rejected.len(), 1);
    assert!(r.rejected[0].reason.contains("abnormal pause"), "{}", r.rejected[0].reason);
}

#[test]
fn missing_media_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let store = common::open(dir.path(), 1, 0);
    let mut c = common::candidates(dir.path(), 1);
    c[0].renditions[0].media = "media/nope.wav".into();
    assert_eq!(store.import(c).unwrap().rejected.len(), 1);
}

#[test]
fn assignment_is_sticky_and_exhausts() {
    let dir = tempfile::tempdir().unwrap();
    let store = common::open(dir.path(), 2, 0);
    assert!(store.next_task("ann0").unwrap().is_none());
    store.import(common::candidates(dir.path(), 1)).unwrap();
    let a = store.next_task("ann0").unwrap().unwrap();
    assert_eq!(store.next_task("ann0").unwrap().unwrap().task_id, a.task_id);
    assert!(store.next_task("ann1").unwrap().is_none());
    assert_eq!(store.status(&a.task_id).unwrap(), TaskStatus::Assigned);
    assert!(matches!(store.next_task("stranger"), Err(AnnotateError::UnknownAnnotator(_))));
}

#[test]
fn choice_resolves_hidden_order() {
    let dir = tempfile::tempdir().unwrap();
    let store = common::open(dir.path(), 1, 3);
    let cands = common::candidates(dir.path(), 12);
    store.import(cands.clone()).unwrap();
    for c in &cands {
        let view = store.next_task("ann0").unwrap().unwrap();
        assert_eq!(view.task_id, c.id);
        let media_a = store.media(&c.id, Side::A).unwrap();
        store.submit(judge(&c.id, "ann0", Choice::A)).unwrap();
        let rec = store.export().unwrap().into_iter().find(|r| r.id == c.id).unwrap();
        let winner = if media_a.ends_with(&c.renditions[0].media) { 0 } else { 1 };
        assert_eq!(rec.d_w, c.renditions[winner].durations);
        assert_eq!(rec.d_l, c.renditions[1 - winner].durations);
    }
}

#[test]
fn skip_returns_task_to_others() {
    let dir = tempfile::tempdir().unwrap();
    let store = common::open(dir.path(), 2, 0);
    store.import(common::candidates(dir.path(), 1)).unwrap();
    let t = store.next_task("ann0").unwrap().unwrap().task_id;
    store.submit(judge(&t, "ann0", Choice::Skip)).unwrap();
    assert_eq!(store.status(&t).unwrap(), TaskStatus::Pending);
    assert!(store.next_task("ann0").unwrap().is_none());
    assert!(store.export().unwrap().is_empty());
    assert_eq!(store.next_task("ann1").unwrap().unwrap().task_id, t);
    store.submit(judge(&t, "ann1", Choice::Skip)).unwrap();
    assert_eq!(store.status(&t).unwrap(), TaskStatus::Skipped);
}

#[test]
fn duplicate_submission_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let store = common::open(dir.path(), 1, 0);
    store.import(common::candidates(dir.path(), 1)).unwrap();
    let t = store.next_task("ann0").unwrap().unwrap().task_id;
    store.submit(judge(&t, "ann0", Choice::A)).unwrap();
    let first = store.export_jsonl().unwrap();
    let err = store.submit(judge(&t, "ann0", Choice::B)).unwrap_err();
    assert!(matches!(err, AnnotateError::Conflict(_)));
    assert_eq!(store.export_jsonl().unwrap(), first);
}

#[test]
fn unassigned_submission_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let store = common::open(dir.path(), 2, 0);
    store.import(common::candidates(dir.path(), 1)).unwrap();
    let t = store.next_task("ann0").unwrap().unwrap().task_id;
    assert!(matches!(
        store.submit(judge(&t, "ann1", Choice::A)),
        Err(AnnotateError::Conflict(_))
    ));
    assert!(matches!(
        store.submit(judge("zzz", "ann0", Choice::A)),
        Err(AnnotateError::UnknownTask(_))
    ));
}

#[test]
fn export_is_deterministic_and_valid() {
    let dir = tempfile::tempdir().unwrap();
    let store = common::open(dir.path(), 1, 0);
    assert_eq!(store.export_jsonl().unwrap(), "");
    store.import(common::candidates(dir.path(), 20)).unwrap();
    while let Some(v) = store.next_task("ann0").unwrap() {
        store.submit(judge(&v.task_id, "ann0", Choice::B)).unwrap();
    }
    let a = store.export_jsonl().unwrap();
    assert_eq!(a, store.export_jsonl().unwrap());
    let path = dir.path().join("pairs.jsonl");
    std::fs::write(&path, &a).unwrap();
    let pairs = read_pairs(&path, &synthetic_vocab()).unwrap();
    assert_eq!(pairs.len(), 20);
    let ids: Vec<&str> = pairs.iter().map(|p| p.id.as_str()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
}

#[test]
fn log_replay_restores_state() {
    let dir = tempfile::tempdir().unwrap();
    let before = {
        let store = common::open(dir.path(), 2, 0);
        store.import(common::candidates(dir.path(), 6)).unwrap();
        for _ in 0..3 {
            let t = store.next_task("ann0").unwrap().unwrap().task_id;
            store.submit(judge(&t, "ann0", Choice::A)).unwrap();
        }
        let t = store.next_task("ann1").unwrap().unwrap().task_id;
        store.submit(judge(&t, "ann1", Choice::Skip)).unwrap();
        // Assigned but never judged: back to pending after restart.
        store.next_task("ann0").unwrap().unwrap();
        store.export_jsonl().unwrap()
    };
    // A torn trailing write must not prevent reopening.
    let log = dir.path().join("log.jsonl");
    let mut raw = std::fs::read_to_string(&log).unwrap();
    raw.push_str("{\"event\":\"judg");
    std::fs::write(&log, raw).unwrap();

    let store = common::open(dir.path(), 2, 0);
    assert_eq!(store.export_jsonl().unwrap(), before);
    let statuses: Vec<TaskStatus> = store.task_ids().iter().map(|t| store.status(t).unwrap()).collect();
    assert_eq!(statuses.iter().filter(|s| **s == TaskStatus::Judged).count(), 3);
    assert_eq!(statuses.iter().filter(|s| **s == TaskStatus::Assigned).count(), 0);
}

#[test]
fn throughput_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let store = common::open(dir.path(), 1, 0);
    store.import(common::candidates(dir.path(), 3)).unwrap();
    for _ in 0..2 {
        let t = store.next_task("ann0").unwrap().unwrap().task_id;
        store.submit(judge(&t, "ann0", Choice::A)).unwrap();
    }
    let v = store.next_task("ann0").unwrap().unwrap();
    assert_eq!(v.judged, 2);
    // Two decisions at one second each.
    assert!((v.pairs_per_hour - 3600.0).abs() < 1e-9);
}
