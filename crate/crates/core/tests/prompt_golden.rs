//! Rendered prompts for every kind, compared against files in
//! `tests/fixtures/prompts`. Set `USLINK_UPDATE_GOLDEN=1` to rewrite them.

use std::path::PathBuf;

use uslink_core::abstraction::abstract_gui;
use uslink_core::fewshot::builtin_pool;
use uslink_core::gateway::LlmRequest;
use uslink_core::model::{parse_prototype, UserStory};
use uslink_core::prompt::{PromptEngine, PromptKind, Task, Templates};

fn render(req: &LlmRequest) -> String {
    format!(
        "temperature: {}\nmax_tokens: {}\nlogprobs: {:?}\n--- system\n{}\n--- user\n{}",
        req.temperature, req.max_tokens, req.want_logprobs_for, req.system_text, req.user_text
    )
}

#[test]
fn prompts_match_golden_files() {
    let proto = parse_prototype(include_str!("fixtures/minimal_prototype.json")).unwrap();
    let story = UserStory::new("US001", "As a traveller, I want to search the weather of a city.", "minimal");
    let engine = PromptEngine::new(Templates::default(), "gpt-4");
    let pool = builtin_pool();
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/prompts");
    let update = std::env::var_os("USLINK_UPDATE_GOLDEN").is_some();
    let kinds = PromptKind::evaluated(Task::Detect)
        .into_iter()
        .chain(PromptKind::evaluated(Task::Match))
        .chain([PromptKind::RecFs, PromptKind::RecFsCot]);
    let mut checked = 0;
    for kind in kinds {
        let examples = pool.for_kind(kind).unwrap();
        let req = match kind.task() {
            Task::Detect => engine.render_detection(kind, &story, &abstract_gui(&proto, false), examples),
            Task::Match => engine.render_matching(kind, &story, &abstract_gui(&proto, true), examples),
            Task::Recommend => {
                engine.render_recommendation(kind, &story, &abstract_gui(&proto, false), examples, 1.0)
            }
        }
        .unwrap();
        let got = render(&req);
        let path = dir.join(format!("{}.txt", kind.id()));
        if update {
            std::fs::create_dir_all(&dir).unwrap();
            std::fs::write(&path, &got).unwrap();
        }
        let want = std::fs::read_to_string(&path)
            .unwrap_or_else(|e| panic!("{}: {e} (set USLINK_UPDATE_GOLDEN=1)", path.display()));
        assert_eq!(got, want, "{}", kind.id());
        checked += 1;
    }
    assert_eq!(checked, 16);
}
