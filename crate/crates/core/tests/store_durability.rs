use std::fs::OpenOptions;
use std::io::Write;

use corpusforge_core::error::ErrorCode;
use corpusforge_core::store::{ingest_corpus, CorpusFormat, DB_FILE};
use corpusforge_core::triage::task_id;
use corpusforge_core::*;

fn populated(dir: &std::path::Path) -> Vec<u8> {
    let store = Store::open(dir).unwrap();
    store.create_project("demo", "Demo", ProjectConfig::default()).unwrap();
    ingest_corpus(&store, "demo", SAMPLE_CORPUS.as_bytes(), CorpusFormat::Txt).unwrap();
    run_project(&store, "demo").unwrap();
    store.dump()
}

#[test]
fn reopen_restores_committed_state() {
    let dir = tempfile::tempdir().unwrap();
    let dump = populated(dir.path());
    let reopened = Store::open(dir.path()).unwrap();
    assert_eq!(reopened.dump(), dump);
    assert!(reopened.project("demo").unwrap().last_report.is_some());
}

#[test]
fn torn_tail_is_discarded() {
    let dir = tempfile::tempdir().unwrap();
    let dump = populated(dir.path());
    let path = dir.path().join(DB_FILE);
    let clean_len = std::fs::metadata(&path).unwrap().len();
    let mut f = OpenOptions::new().append(true).open(&path).unwrap();
    f.write_all(br#"{"seq":999,"ops":[{"table":"proj"#).unwrap();
    drop(f);

    let reopened = Store::open(dir.path()).unwrap();
    assert_eq!(reopened.dump(), dump);
    assert_eq!(std::fs::metadata(&path).unwrap().len(), clean_len);
    reopened
        .create_project("more", "More", ProjectConfig::default())
        .unwrap();
    drop(reopened);
    assert!(Store::open(dir.path()).unwrap().project("more").is_some());
}

#[test]
fn corrupt_middle_line_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    populated(dir.path());
    let path = dir.path().join(DB_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[1] = "garbage";
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    assert!(matches!(Store::open(dir.path()), Err(Error::Storage(_))));
}

#[test]
fn unknown_format_version_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join(DB_FILE),
        "{\"format\":\"corpusforge-store\",\"version\":99}\n",
    )
    .unwrap();
    let err = Store::open(dir.path()).unwrap_err();
    assert!(err.to_string().contains("99"), "{err}");
}

#[test]
fn long_journal_is_compacted() {
    let dir = tempfile::tempdir().unwrap();
    {
        let store = Store::open(dir.path()).unwrap();
        for i in 0..600 {
            store
                .create_project(&format!("p{i}"), "P", ProjectConfig::default())
                .unwrap();
        }
    }
    let dump = Store::open(dir.path()).unwrap().dump();
    let lines = std::fs::read_to_string(dir.path().join(DB_FILE))
        .unwrap()
        .lines()
        .count();
    assert_eq!(lines, 2);
    assert_eq!(Store::open(dir.path()).unwrap().dump(), dump);
}

#[test]
fn concurrent_claims_have_one_winner() {
    let dir = tempfile::tempdir().unwrap();
    populated(dir.path());
    let store = Store::open(dir.path()).unwrap();
    let task = store.tasks("demo").into_iter().next().unwrap();
    assert_eq!(task.task_id, task_id("demo", task.origin_line));
    let registry = scoring::MetricRegistry::heuristic();
    let n = 8;
    let barrier = std::sync::Barrier::new(n);
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .map(|i| {
                let (store, registry, barrier, id) = (&store, &registry, &barrier, task.task_id.clone());
                s.spawn(move || {
                    barrier.wait();
                    transition_task(
                        store,
                        registry,
                        &id,
                        TaskAction::Claim {
                            assignee: Some(format!("reviewer-{i}")),
                        },
                        0,
                    )
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let winners: Vec<_> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    assert_eq!(winners.len(), 1);
    for r in &results {
        if let Err(e) = r {
            assert_eq!(e.code(), ErrorCode::Conflict);
        }
    }
    drop(store);
    let reopened = Store::open(dir.path()).unwrap();
    let stored = reopened.task(&task.task_id).unwrap();
    assert_eq!(stored.state, TaskState::InReview);
    assert_eq!(stored.version, 1);
    assert_eq!(stored.assignee, winners[0].assignee);
}
