use std::sync::Arc;

use uslink_core::eval::{run_rq1, run_rq2, EvalOptions};
use uslink_core::fewshot::build_pool;
use uslink_core::gateway::{Gateway, OracleBackend};
use uslink_core::gold;
use uslink_core::pipeline::Pipeline;
use uslink_core::prompt::{PromptEngine, PromptKind, Task, Templates};
use uslink_core::synth::{self, SynthConfig};

#[test]
fn csv_headers_match_fixtures() {
    let data = synth::dataset(&SynthConfig::small(14, 40), 5);
    let g = gold::build(&data.pairs, &data.store, 3, 2).unwrap();
    let pipeline = Pipeline::new(
        PromptEngine::new(Templates::default(), "gpt-4"),
        Gateway::new(Arc::new(OracleBackend::noisy(0.2, 1)), 2),
        build_pool(&g.fewshot_pairs, &data.store, 2),
    );
    let opts = EvalOptions::default();
    let dir = tempfile::tempdir().unwrap();

    let rq1 = run_rq1(&g, &PromptKind::evaluated(Task::Detect), &pipeline, &opts).unwrap();
    rq1.write_dir(dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("rq1.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), include_str!("fixtures/rq1_header.csv").trim_end());
    let methods: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        methods,
        ["Zero-Shot", "Few-Shot_5", "Few-Shot_10", "CoT_t=0", "CoT_t=.5", "CoT_t=1", "CoT_t=1.3"]
    );
    assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 8));
    let mcnemar = std::fs::read_to_string(dir.path().join("mcnemar.csv")).unwrap();
    assert_eq!(mcnemar.lines().count(), 1 + 21);

    let rq2 = run_rq2(&g, &PromptKind::evaluated(Task::Match), &pipeline, &opts).unwrap();
    rq2.write_dir(dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("rq2.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), include_str!("fixtures/rq2_header.csv").trim_end());
    assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 8));
    let text = std::fs::read_to_string(dir.path().join("rq2.txt")).unwrap();
    assert!(text.contains("Zero-Shot_A"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("rq2.json")).unwrap()).unwrap();
    assert!(json["rq2"][0]["micro_F1"].is_number());
}
