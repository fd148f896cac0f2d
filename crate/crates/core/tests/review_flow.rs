use std::collections::BTreeSet;

use corpusforge_core::error::ErrorCode;
use corpusforge_core::store::{export_dataset, ingest_corpus, read_dataset, CorpusFormat, DatasetFormat};
use corpusforge_core::*;

fn run(corpus: &str, config: ProjectConfig) -> Store {
    let store = Store::in_memory();
    store.create_project("demo", "Demo", config).unwrap();
    ingest_corpus(&store, "demo", corpus.as_bytes(), CorpusFormat::Txt).unwrap();
    run_project(&store, "demo").unwrap();
    store
}

fn claim(store: &Store, id: &str, version: u64) -> Result<ReviewTask> {
    transition_task(
        store,
        &MetricRegistry::heuristic(),
        id,
        TaskAction::Claim {
            assignee: Some("ana".into()),
        },
        version,
    )
}

#[test]
fn single_high_pair_is_auto_accepted_at_zero_cost() {
    let config = ProjectConfig {
        quantizer: QuantizerConfig::absolute(0.2, 0.6),
        ..ProjectConfig::default()
    };
    let store = run("The museum is closed on Mondays.\n", config);
    let pair = &store.pairs("demo")[0];
    assert_eq!(pair.level, Some(QualityLevel::High));
    assert_eq!(pair.status, PairStatus::AutoAccepted);
    assert!(store.tasks("demo").is_empty());
    let out = export_dataset(&store, "demo", DatasetFormat::Jsonl, &store::default_export_statuses()).unwrap();
    let records = read_dataset(&out).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].cost, 0);
    assert_eq!(records[0].status, PairStatus::AutoAccepted);
}

#[test]
fn every_middle_and_low_pair_gets_one_task() {
    let store = run(SAMPLE_CORPUS, ProjectConfig::default());
    let pairs = store.pairs("demo");
    let tasks = store.tasks("demo");
    let reviewable = pairs.iter().filter(|p| p.level != Some(QualityLevel::High)).count();
    assert_eq!(tasks.len(), reviewable);
    let pricing = PricingTable::default();
    for task in &tasks {
        let pair = store.pair("demo", &task.pair_id).unwrap();
        assert_eq!(pair.status, PairStatus::PendingReview);
        assert_eq!(Some(task.level), pair.level);
        assert_eq!(task.price, pricing.per_segment.get(task.level));
        assert_eq!(task.state, TaskState::Pending);
    }
    let cost: u64 = tasks.iter().map(|t| t.price).sum();
    assert_eq!(
        cost,
        store
            .project("demo")
            .unwrap()
            .last_report
            .unwrap()
            .cost
            .total_editing_cost
    );
}

#[test]
fn edit_rescores_and_exports_as_edited() {
    let store = run(SAMPLE_CORPUS, ProjectConfig::default());
    let task = store.tasks("demo").into_iter().next().unwrap();
    let registry = MetricRegistry::heuristic();
    let claimed = claim(&store, &task.task_id, 0).unwrap();
    assert_eq!(claimed.version, 1);
    assert_eq!(store.pair("demo", &task.pair_id).unwrap().status, PairStatus::InReview);

    let new_target = "검토자가 고친 번역 문장입니다.".to_string();
    let done = transition_task(
        &store,
        &registry,
        &task.task_id,
        TaskAction::Edit {
            new_target: new_target.clone(),
        },
        1,
    )
    .unwrap();
    assert_eq!(done.state, TaskState::ResolvedEdit);
    assert_eq!(done.version, 2);

    let pair = store.pair("demo", &task.pair_id).unwrap();
    assert_eq!(pair.status, PairStatus::Edited);
    assert_eq!(pair.target, new_target);
    assert_eq!(pair.level, Some(task.level));
    let expected = score_pair(&pair, &registry).unwrap();
    assert_eq!(pair.score.as_ref(), Some(&expected));

    let out = export_dataset(&store, "demo", DatasetFormat::Jsonl, &store::default_export_statuses()).unwrap();
    let rec = read_dataset(&out)
        .unwrap()
        .into_iter()
        .find(|r| r.id == task.pair_id)
        .unwrap();
    assert_eq!(rec.status, PairStatus::Edited);
    assert_eq!(rec.target, new_target);
    assert_eq!(rec.score, expected.final_score);
}

#[test]
fn stale_version_conflicts_and_changes_nothing() {
    let store = run(SAMPLE_CORPUS, ProjectConfig::default());
    let task = store.tasks("demo").into_iter().next().unwrap();
    claim(&store, &task.task_id, 0).unwrap();
    let before = store.dump();
    let err = transition_task(
        &store,
        &MetricRegistry::heuristic(),
        &task.task_id,
        TaskAction::Accept,
        0,
    )
    .unwrap_err();
    assert_eq!(err.code(), ErrorCode::Conflict);
    assert_eq!(store.dump(), before);
}

#[test]
fn illegal_action_is_a_state_error() {
    let store = run(SAMPLE_CORPUS, ProjectConfig::default());
    let task = store.tasks("demo").into_iter().next().unwrap();
    let before = store.dump();
    let err = transition_task(
        &store,
        &MetricRegistry::heuristic(),
        &task.task_id,
        TaskAction::Accept,
        0,
    )
    .unwrap_err();
    assert_eq!(err.code(), ErrorCode::State);
    assert_eq!(store.dump(), before);
    let missing = claim(&store, "demo~99999", 0).unwrap_err();
    assert_eq!(missing.code(), ErrorCode::NotFound);
}

#[test]
fn release_then_reclaim() {
    let store = run(SAMPLE_CORPUS, ProjectConfig::default());
    let task = store.tasks("demo").into_iter().next().unwrap();
    claim(&store, &task.task_id, 0).unwrap();
    let released = transition_task(
        &store,
        &MetricRegistry::heuristic(),
        &task.task_id,
        TaskAction::Release,
        1,
    )
    .unwrap();
    assert_eq!(released.state, TaskState::Pending);
    assert_eq!(released.assignee, None);
    assert_eq!(
        store.pair("demo", &task.pair_id).unwrap().status,
        PairStatus::PendingReview
    );
    claim(&store, &task.task_id, 2).unwrap();
}

#[test]
fn rejected_pairs_only_with_explicit_include() {
    let store = run(SAMPLE_CORPUS, ProjectConfig::default());
    let task = store.tasks("demo").into_iter().next().unwrap();
    claim(&store, &task.task_id, 0).unwrap();
    transition_task(
        &store,
        &MetricRegistry::heuristic(),
        &task.task_id,
        TaskAction::Reject,
        1,
    )
    .unwrap();

    let default = export_dataset(&store, "demo", DatasetFormat::Jsonl, &store::default_export_statuses()).unwrap();
    assert!(read_dataset(&default).unwrap().iter().all(|r| r.id != task.pair_id));

    let only_rejected: BTreeSet<PairStatus> = [PairStatus::Rejected].into();
    let out = export_dataset(&store, "demo", DatasetFormat::Jsonl, &only_rejected).unwrap();
    let records = read_dataset(&out).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].id, task.pair_id);
}

#[test]
fn export_is_deterministic_and_round_trips() {
    let store = run(SAMPLE_CORPUS, ProjectConfig::default());
    let all: BTreeSet<PairStatus> = [PairStatus::AutoAccepted, PairStatus::PendingReview].into();
    let a = export_dataset(&store, "demo", DatasetFormat::Jsonl, &all).unwrap();
    let b = export_dataset(&store, "demo", DatasetFormat::Jsonl, &all).unwrap();
    assert_eq!(a, b);
    let records = read_dataset(&a).unwrap();
    assert_eq!(records.len(), 89);
    for (rec, pair) in records.iter().zip(store.pairs("demo")) {
        assert_eq!(rec.id, pair.segment_id);
        assert_eq!(rec.score, pair.score.as_ref().unwrap().final_score);
        assert_eq!(rec.metrics, pair.score.as_ref().unwrap().metric_scores);
    }
    let tsv = export_dataset(&store, "demo", DatasetFormat::Tsv, &all).unwrap();
    let tsv = String::from_utf8(tsv).unwrap();
    assert_eq!(tsv.lines().count(), 89);
    assert!(tsv.lines().all(|l| l.split('\t').count() == 6));
}

#[test]
fn export_before_run_is_a_state_error() {
    let store = Store::in_memory();
    store.create_project("demo", "Demo", ProjectConfig::default()).unwrap();
    let err = export_dataset(&store, "demo", DatasetFormat::Jsonl, &store::default_export_statuses()).unwrap_err();
    assert_eq!(err.code(), ErrorCode::State);
}
