//! Few-shot examples built from the reserved GUIs, and the leakage audit.

use crate::abstraction::{abstract_gui, remove_components};
use crate::gold::{seeded_rng, shuffle, with_abstraction_ids, AnnotationPair, GoldRecord, FEWSHOT_STREAM};
use crate::markup::components_to_html;
use crate::model::PrototypeStore;
use crate::pipeline::{ExamplePool, PipelineError};
use crate::prompt::{FewShotExample, DETECT_FEWSHOT_COUNTS};

pub const MATCH_EXAMPLES: usize = 5;
pub const RECOMMEND_EXAMPLES: usize = 3;
/// Seed of the bundled example pool used when no gold standard is given.
pub const BUILTIN_SEED: u64 = 11;

fn id_list(ids: impl IntoIterator<Item = u32>) -> String {
    let ids: Vec<String> = ids.into_iter().map(|i| i.to_string()).collect();
    format!("[{}]", ids.join(", "))
}

/// Builds the example pool from reserved pairs. Pairs are taken in a seeded
/// order and reused cyclically when fewer than needed. Detection examples
/// alternate between the intact GUI (answer 1) and the GUI without the
/// story's components (answer 0).
pub fn build_pool(pairs: &[AnnotationPair], store: &PrototypeStore, seed: u64) -> ExamplePool {
    let mut usable: Vec<&AnnotationPair> = pairs
        .iter()
        .filter(|p| p.validate(store).is_ok())
        .collect();
    if usable.is_empty() {
        return ExamplePool::default();
    }
    shuffle(&mut seeded_rng(seed, FEWSHOT_STREAM), &mut usable);
    let detect_n = DETECT_FEWSHOT_COUNTS.iter().copied().max().unwrap_or(0);
    let pick = |i: usize| usable[i % usable.len()];

    let detection = (0..detect_n)
        .map(|i| {
            let pair = pick(i);
            let proto = with_abstraction_ids(store.get(&pair.gui_id).unwrap());
            let basis = abstract_gui(&proto, true);
            let reduced = remove_components(&proto, &pair.gold_component_ids, &basis)
                .ok()
                .filter(|p| !p.groups.is_empty());
            let (abstraction, answer) = match reduced {
                Some(r) if i % 2 == 1 => (abstract_gui(&r, false).rendered, "0"),
                _ => (abstract_gui(&proto, false).rendered, "1"),
            };
            FewShotExample {
                source_gui_id: pair.gui_id.clone(),
                story_text: pair.story.text.clone(),
                gui_abstraction: abstraction,
                expected_output: answer.into(),
            }
        })
        .collect();

    let matching = (0..MATCH_EXAMPLES)
        .map(|i| {
            let pair = pick(i);
            let proto = with_abstraction_ids(store.get(&pair.gui_id).unwrap());
            FewShotExample {
                source_gui_id: pair.gui_id.clone(),
                story_text: pair.story.text.clone(),
                gui_abstraction: abstract_gui(&proto, true).rendered,
                expected_output: id_list(pair.gold_component_ids.iter().copied()),
            }
        })
        .collect();

    let recommendation = (0..RECOMMEND_EXAMPLES)
        .map(|i| {
            let pair = pick(i);
            let proto = with_abstraction_ids(store.get(&pair.gui_id).unwrap());
            let basis = abstract_gui(&proto, true);
            let gold: Vec<_> = pair
                .gold_component_ids
                .iter()
                .filter_map(|&id| basis.component(&proto, id).cloned())
                .collect();
            let reduced = remove_components(&proto, &pair.gold_component_ids, &basis)
                .unwrap_or_else(|_| proto.clone());
            FewShotExample {
                source_gui_id: pair.gui_id.clone(),
                story_text: pair.story.text.clone(),
                gui_abstraction: abstract_gui(&reduced, false).rendered,
                expected_output: format!("```html\n{}\n```", components_to_html(&gold)),
            }
        })
        .collect();

    ExamplePool {
        detection,
        matching,
        recommendation,
    }
}

/// Example pool drawn from a small generated dataset whose GUI ids cannot
/// collide with user data.
pub fn builtin_pool() -> ExamplePool {
    let data = crate::synth::dataset(&crate::synth::SynthConfig::small(5, 21), BUILTIN_SEED);
    let mut store = PrototypeStore::new();
    for p in data.store.iter() {
        let mut p = p.clone();
        p.gui_id = format!("example-{}", p.gui_id);
        store.insert(p).expect("unique ids");
    }
    let pairs: Vec<AnnotationPair> = data
        .pairs
        .into_iter()
        .map(|mut p| {
            p.gui_id = format!("example-{}", p.gui_id);
            p.story.gui_id = p.gui_id.clone();
            p
        })
        .collect();
    build_pool(&pairs, &store, BUILTIN_SEED)
}

/// Fails when an example stems from an evaluation GUI or reproduces an
/// evaluation abstraction verbatim.
pub fn audit_leakage(pool: &ExamplePool, records: &[GoldRecord]) -> Result<(), PipelineError> {
    let examples = pool
        .detection
        .iter()
        .chain(&pool.matching)
        .chain(&pool.recommendation);
    for ex in examples {
        for r in records {
            if ex.source_gui_id == r.pair.gui_id {
                return Err(PipelineError::Leakage(ex.source_gui_id.clone()));
            }
            let plain = abstract_gui(&r.original, false).rendered;
            let with_ids = abstract_gui(&r.original, true).rendered;
            if ex.gui_abstraction.contains(plain.trim_end()) || ex.gui_abstraction.contains(with_ids.trim_end()) {
                return Err(PipelineError::Leakage(r.pair.gui_id.clone()));
            }
        }
    }
    Ok(())
}
