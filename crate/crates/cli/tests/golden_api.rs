mod common;

#[tokio::test(flavor = "multi_thread")]
async fn golden_fixtures_match() {
    let run = common::run_golden().await;
    let failures: Vec<String> = run
        .outcomes
        .iter()
        .filter_map(|o| o.result.as_ref().err().map(|e| format!("{}: {e}", o.name)))
        .collect();
    assert!(failures.is_empty(), "{}", failures.join("\n\n"));
    for (method, path) in common::ENDPOINTS {
        assert!(
            run.covered.iter().any(|(m, p)| m == method && p == path),
            "no successful golden exchange for {method} {path}"
        );
    }
}
