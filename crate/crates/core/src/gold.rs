//! Gold standard construction: few-shot GUI split, balanced class
//! assignment, and negatives built by removing the annotated components.
//!
//! Randomness comes from ChaCha8 seeded through `seed_from_u64` (PCG32
//! expansion, as specified by `rand_core`), one stream per purpose.
//! Integers below `n` are drawn by rejection sampling over `next_u64`, and
//! shuffles are Fisher-Yates from the last index down. Both are implemented
//! here so builds do not depend on `rand` sampling internals.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::abstraction::{abstract_gui, remove_components};
use crate::model::{GuiPrototype, PrototypeStore, UserStory};

/// Reserved few-shot GUIs.
pub const DEFAULT_FEWSHOT_GUIS: usize = 5;
/// Default build seed; on the default synthetic dataset it reserves 21
/// pairs and leaves 210 for evaluation.
pub const DEFAULT_SEED: u64 = 8;
pub const TOOL_VERSION: &str = concat!("uslink ", env!("CARGO_PKG_VERSION"));

pub const SPLIT_STREAM: u64 = 0;
pub const CLASS_STREAM: u64 = 1;
pub const FEWSHOT_STREAM: u64 = 2;

pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform integer in `0..n`. `n` must be positive.
pub fn uniform_below(rng: &mut impl RngCore, n: u64) -> u64 {
    assert!(n > 0, "empty range");
    let zone = u64::MAX - (u64::MAX % n + 1) % n;
    loop {
        let x = rng.next_u64();
        if x <= zone {
            return x % n;
        }
    }
}

pub fn shuffle<T>(rng: &mut impl RngCore, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = uniform_below(rng, i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GoldError {
    #[error("dataset has {available} distinct GUIs; cannot reserve {requested} and keep any for evaluation")]
    InsufficientData { available: usize, requested: usize },
    #[error("pair {us_id}: {message}")]
    InvalidPair { us_id: String, message: String },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("gold standard violates an invariant: {0}")]
    Invariant(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A story annotated with the components that fulfill it. IDs follow the
/// ID-annotated abstraction of the source prototype.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "PairRow", into = "PairRow")]
pub struct AnnotationPair {
    pub story: UserStory,
    pub gui_id: String,
    pub gold_component_ids: BTreeSet<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PairRow {
    us_id: String,
    gui_id: String,
    story_text: String,
    gold_component_ids: BTreeSet<u32>,
}

impl From<PairRow> for AnnotationPair {
    fn from(r: PairRow) -> Self {
        AnnotationPair {
            story: UserStory::new(&r.us_id, &r.story_text, &r.gui_id),
            gui_id: r.gui_id,
            gold_component_ids: r.gold_component_ids,
        }
    }
}

impl From<AnnotationPair> for PairRow {
    fn from(p: AnnotationPair) -> Self {
        PairRow {
            us_id: p.story.us_id,
            gui_id: p.gui_id,
            story_text: p.story.text,
            gold_component_ids: p.gold_component_ids,
        }
    }
}

impl AnnotationPair {
    pub fn new(us_id: &str, gui_id: &str, text: &str, gold: impl IntoIterator<Item = u32>) -> Self {
        AnnotationPair {
            story: UserStory::new(us_id, text, gui_id),
            gui_id: gui_id.into(),
            gold_component_ids: gold.into_iter().collect(),
        }
    }

    pub fn us_id(&self) -> &str {
        &self.story.us_id
    }

    fn invalid(&self, message: impl Into<String>) -> GoldError {
        GoldError::InvalidPair {
            us_id: self.story.us_id.clone(),
            message: message.into(),
        }
    }

    /// Checks the pair against its prototype.
    pub fn validate(&self, store: &PrototypeStore) -> Result<(), GoldError> {
        if self.gold_component_ids.is_empty() {
            return Err(self.invalid("no gold components"));
        }
        if self.story.text.trim().is_empty() {
            return Err(self.invalid("empty story text"));
        }
        let proto = store
            .get(&self.gui_id)
            .ok_or_else(|| self.invalid(format!("unknown GUI {}", self.gui_id)))?;
        let n = proto.component_count() as u32;
        if let Some(bad) = self.gold_component_ids.iter().find(|&&id| id == 0 || id > n) {
            return Err(self.invalid(format!(
                "component id {bad} outside 1..={n} of {}",
                self.gui_id
            )));
        }
        Ok(())
    }
}

pub fn parse_pairs(text: &str) -> Result<Vec<AnnotationPair>, GoldError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| GoldError::Schema {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn pairs_to_jsonl(pairs: &[AnnotationPair]) -> String {
    pairs
        .iter()
        .map(|p| serde_json::to_string(p).expect("pair serializes") + "\n")
        .collect()
}

/// A copy of `proto` whose component IDs follow its own ID abstraction.
pub fn with_abstraction_ids(proto: &GuiPrototype) -> GuiPrototype {
    let mut p = proto.clone();
    for g in &mut p.groups {
        for c in &mut g.components {
            c.id = 0;
        }
    }
    p.assign_ids();
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoldRecord {
    pub pair: AnnotationPair,
    pub assigned_class: u8,
    pub original: Arc<GuiPrototype>,
    /// The original for class 1; the original minus the gold components for
    /// class 0. Remaining components keep their original IDs.
    pub effective_prototype: Arc<GuiPrototype>,
    pub removed_ids: BTreeSet<u32>,
    /// Unknown fields read from the file, written back unchanged.
    pub extra: BTreeMap<String, Value>,
}

impl GoldRecord {
    fn build(pair: AnnotationPair, class: u8, original: Arc<GuiPrototype>) -> Result<Self, GoldError> {
        let (effective, removed) = if class == 1 {
            (original.clone(), BTreeSet::new())
        } else {
            let basis = abstract_gui(&original, true);
            let reduced = remove_components(&original, &pair.gold_component_ids, &basis)
                .map_err(|e| pair.invalid(e.to_string()))?;
            (Arc::new(reduced), pair.gold_component_ids.clone())
        };
        Ok(GoldRecord {
            pair,
            assigned_class: class,
            original,
            effective_prototype: effective,
            removed_ids: removed,
            extra: BTreeMap::new(),
        })
    }

    pub fn us_id(&self) -> &str {
        self.pair.us_id()
    }

    pub fn gui_id(&self) -> &str {
        &self.pair.gui_id
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub us_id: String,
    pub gui_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoldStandard {
    pub records: Vec<GoldRecord>,
    pub fewshot_guis: Vec<String>,
    pub fewshot_pairs: Vec<AnnotationPair>,
    pub seed: u64,
    pub tool_version: String,
    pub excluded: Vec<Exclusion>,
    pub extra: BTreeMap<String, Value>,
}

/// (reserved GUIs, evaluation pairs, reserved pairs).
pub type FewShotSplit = (Vec<String>, Vec<AnnotationPair>, Vec<AnnotationPair>);

/// Reserves `n_guis` GUIs, drawn without replacement, for few-shot
/// examples. Returns (reserved GUIs sorted, evaluation pairs, reserved
/// pairs), pairs in input order.
pub fn split_fewshot(
    pairs: &[AnnotationPair],
    n_guis: usize,
    seed: u64,
) -> Result<FewShotSplit, GoldError> {
    let mut guis: Vec<&str> = pairs
        .iter()
        .map(|p| p.gui_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if guis.len() <= n_guis {
        return Err(GoldError::InsufficientData {
            available: guis.len(),
            requested: n_guis,
        });
    }
    shuffle(&mut seeded_rng(seed, SPLIT_STREAM), &mut guis);
    let mut reserved: Vec<String> = guis[..n_guis].iter().map(|s| s.to_string()).collect();
    reserved.sort();
    let (fewshot, eval): (Vec<_>, Vec<_>) = pairs
        .iter()
        .cloned()
        .partition(|p| reserved.binary_search(&p.gui_id).is_ok());
    Ok((reserved, eval, fewshot))
}

/// Shuffles the pairs, gives the first half (rounded up) class 1 and the
/// rest class 0. Pairs whose gold set covers the whole prototype are
/// excluded beforehand since their negative would be an empty GUI.
pub fn assign_classes(
    eval_pairs: &[AnnotationPair],
    store: &PrototypeStore,
    seed: u64,
) -> Result<(Vec<GoldRecord>, Vec<Exclusion>), GoldError> {
    let mut cache: BTreeMap<&str, Arc<GuiPrototype>> = BTreeMap::new();
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for pair in eval_pairs {
        pair.validate(store)?;
        let proto = cache
            .entry(pair.gui_id.as_str())
            .or_insert_with(|| Arc::new(with_abstraction_ids(store.get(&pair.gui_id).unwrap())))
            .clone();
        if pair.gold_component_ids.len() == proto.component_count() {
            let reason = "gold components cover the entire prototype".to_string();
            log::warn!("excluding {}: {reason}", pair.us_id());
            excluded.push(Exclusion {
                us_id: pair.us_id().into(),
                gui_id: pair.gui_id.clone(),
                reason,
            });
            continue;
        }
        kept.push((pair, proto));
    }
    let mut order: Vec<usize> = (0..kept.len()).collect();
    shuffle(&mut seeded_rng(seed, CLASS_STREAM), &mut order);
    let positives = kept.len().div_ceil(2);
    let mut class = vec![0u8; kept.len()];
    for &i in &order[..positives] {
        class[i] = 1;
    }
    let records = kept
        .into_iter()
        .zip(class)
        .map(|((pair, proto), c)| GoldRecord::build(pair.clone(), c, proto))
        .collect::<Result<_, _>>()?;
    Ok((records, excluded))
}

/// Full build: validation, few-shot split and class assignment.
pub fn build(
    pairs: &[AnnotationPair],
    store: &PrototypeStore,
    n_guis: usize,
    seed: u64,
) -> Result<GoldStandard, GoldError> {
    let mut seen = BTreeSet::new();
    for p in pairs {
        p.validate(store)?;
        if !seen.insert(p.us_id()) {
            return Err(p.invalid("duplicate us_id"));
        }
    }
    let (fewshot_guis, eval, fewshot_pairs) = split_fewshot(pairs, n_guis, seed)?;
    let (records, excluded) = assign_classes(&eval, store, seed)?;
    let gold = GoldStandard {
        records,
        fewshot_guis,
        fewshot_pairs,
        seed,
        tool_version: TOOL_VERSION.into(),
        excluded,
        extra: BTreeMap::new(),
    };
    gold.check()?;
    Ok(gold)
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderLine {
    kind: String,
    seed: u64,
    fewshot_guis: Vec<String>,
    #[serde(default)]
    fewshot_pairs: Vec<AnnotationPair>,
    tool_version: String,
    record_count: usize,
    #[serde(default)]
    excluded: Vec<Exclusion>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    kind: String,
    gui_id: String,
    us_id: String,
    story_text: String,
    assigned_class: u8,
    gold_component_ids: BTreeSet<u32>,
    removed_ids: BTreeSet<u32>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

const HEADER_KIND: &str = "header";
const RECORD_KIND: &str = "record";

impl GoldStandard {
    pub fn count_class(&self, class: u8) -> usize {
        self.records
            .iter()
            .filter(|r| r.assigned_class == class)
            .count()
    }

    /// Balance, leakage and negative soundness.
    pub fn check(&self) -> Result<(), GoldError> {
        let (ones, zeros) = (self.count_class(1), self.count_class(0));
        if ones.abs_diff(zeros) > 1 {
            return Err(GoldError::Invariant(format!(
                "unbalanced classes: {ones} implemented vs {zeros} not implemented"
            )));
        }
        for r in &self.records {
            if self.fewshot_guis.contains(&r.pair.gui_id) {
                return Err(GoldError::Invariant(format!(
                    "{} uses reserved few-shot GUI {}",
                    r.us_id(),
                    r.pair.gui_id
                )));
            }
            match r.assigned_class {
                1 if r.removed_ids.is_empty() && r.effective_prototype == r.original => {}
                0 if r.removed_ids == r.pair.gold_component_ids => {
                    let remaining: BTreeSet<u32> =
                        r.effective_prototype.components().map(|c| c.id).collect();
                    if !remaining.is_disjoint(&r.removed_ids) {
                        return Err(GoldError::Invariant(format!(
                            "{} keeps removed components",
                            r.us_id()
                        )));
                    }
                }
                c => {
                    return Err(GoldError::Invariant(format!(
                        "{} has inconsistent class {c} / removed ids",
                        r.us_id()
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn emit(&self) -> String {
        let header = HeaderLine {
            kind: HEADER_KIND.into(),
            seed: self.seed,
            fewshot_guis: self.fewshot_guis.clone(),
            fewshot_pairs: self.fewshot_pairs.clone(),
            tool_version: self.tool_version.clone(),
            record_count: self.records.len(),
            excluded: self.excluded.clone(),
            extra: self.extra.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            let line = RecordLine {
                kind: RECORD_KIND.into(),
                gui_id: r.pair.gui_id.clone(),
                us_id: r.pair.story.us_id.clone(),
                story_text: r.pair.story.text.clone(),
                assigned_class: r.assigned_class,
                gold_component_ids: r.pair.gold_component_ids.clone(),
                removed_ids: r.removed_ids.clone(),
                extra: r.extra.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses a gold file, resolving prototypes in `store` and re-deriving
    /// every effective prototype.
    pub fn load(text: &str, store: &PrototypeStore) -> Result<GoldStandard, GoldError> {
        let schema = |line: usize, message: String| GoldError::Schema { line, message };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| schema(1, "empty gold standard file".into()))?;
        let header: HeaderLine =
            serde_json::from_str(first).map_err(|e| schema(1, e.to_string()))?;
        if header.kind != HEADER_KIND {
            return Err(schema(1, format!("expected a header record, found {:?}", header.kind)));
        }
        let mut cache: BTreeMap<String, Arc<GuiPrototype>> = BTreeMap::new();
        let mut records = Vec::with_capacity(header.record_count);
        for (i, line) in lines {
            let row: RecordLine =
                serde_json::from_str(line).map_err(|e| schema(i + 1, e.to_string()))?;
            if row.kind != RECORD_KIND {
                return Err(schema(i + 1, format!("unexpected record kind {:?}", row.kind)));
            }
            if row.assigned_class > 1 {
                return Err(schema(i + 1, format!("assigned_class {} is not 0 or 1", row.assigned_class)));
            }
            let pair = AnnotationPair::new(&row.us_id, &row.gui_id, &row.story_text, row.gold_component_ids);
            pair.validate(store)?;
            let original = cache
                .entry(row.gui_id.clone())
                .or_insert_with(|| Arc::new(with_abstraction_ids(store.get(&row.gui_id).unwrap())))
                .clone();
            let mut record = GoldRecord::build(pair, row.assigned_class, original)?;
            if record.removed_ids != row.removed_ids {
                return Err(schema(i + 1, "removed_ids disagree with the assigned class".into()));
            }
            record.extra = row.extra;
            records.push(record);
        }
        if records.len() != header.record_count {
            return Err(schema(
                records.len() + 1,
                format!(
                    "header announces {} records, file holds {} (truncated?)",
                    header.record_count,
                    records.len()
                ),
            ));
        }
        let gold = GoldStandard {
            records,
            fewshot_guis: header.fewshot_guis,
            fewshot_pairs: header.fewshot_pairs,
            seed: header.seed,
            tool_version: header.tool_version,
            excluded: header.excluded,
            extra: header.extra,
        };
        gold.check()?;
        Ok(gold)
    }

    pub fn load_file(path: &std::path::Path, store: &PrototypeStore) -> Result<GoldStandard, GoldError> {
        let text = std::fs::read_to_string(path).map_err(|e| GoldError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::load(&text, store)
    }
}
