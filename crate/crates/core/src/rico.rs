//! Ingestion of Rico view hierarchies and semantic annotations.
//!
//! Visible hierarchy leaves become components. Each leaf is aligned with the
//! semantic annotation tree by bounds: a semantic component node supplies the
//! component type, and the smallest semantic group node (List Item, Card,
//! Toolbar, ...) covering at least [`ALIGNMENT_OVERLAP`] of the leaf area
//! becomes its layout group. Leaves outside every semantic group are
//! clustered under the highest hierarchy ancestor whose subtree holds no
//! semantically grouped leaf.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use serde_json::Value;

use crate::model::{Bounds, ComponentType, GuiComponent, GuiPrototype, LayoutGroup};

/// Minimum fraction of a leaf's area that must lie inside a semantic node.
pub const ALIGNMENT_OVERLAP: f64 = 0.8;

pub const FALLBACK_GROUP_NAME: &str = "Group";

const MAPPING_TABLE: &str = include_str!("../data/rico_component_map.tsv");

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("hierarchy has no visible leaves")]
    NoVisibleLeaves,
    #[error("malformed {document} document at {path}: {message}")]
    Malformed {
        document: &'static str,
        path: String,
        message: String,
    },
    #[error("invalid json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IngestWarning {
    /// A componentLabel absent from the mapping table; mapped to `Other`.
    UnmappedType { label: String },
    /// A leaf no semantic component node aligned with; typed by its class.
    Unaligned { class: String },
}

#[derive(Debug, Clone)]
pub struct IngestOutput {
    pub prototype: GuiPrototype,
    pub warnings: Vec<IngestWarning>,
    /// Visible leaves without text, name or semantic type (decorative
    /// containers). Reported, not turned into components.
    pub skipped: Vec<String>,
    pub visible_leaves: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Role {
    Group,
    Component(ComponentType),
    Verbatim,
}

fn mapping() -> &'static HashMap<String, Role> {
    static TABLE: OnceLock<HashMap<String, Role>> = OnceLock::new();
    TABLE.get_or_init(|| {
        MAPPING_TABLE
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|l| {
                let cols: Vec<&str> = l.split('\t').collect();
                let role = match (cols[1], cols[2]) {
                    ("group", _) => Role::Group,
                    (_, "=") => Role::Verbatim,
                    (_, t) => Role::Component(t.parse().unwrap_or_else(|never| match never {})),
                };
                (cols[0].to_string(), role)
            })
            .collect()
    })
}

/// Maps a Rico componentLabel to a component type. Unknown labels map to
/// `Other(label)` and produce a warning.
pub fn map_component_label(label: &str) -> (ComponentType, Option<IngestWarning>) {
    match mapping().get(label) {
        Some(Role::Component(t)) => (t.clone(), None),
        Some(Role::Verbatim) | Some(Role::Group) => (ComponentType::Other(label.into()), None),
        None => (
            ComponentType::Other(label.into()),
            Some(IngestWarning::UnmappedType {
                label: label.into(),
            }),
        ),
    }
}

pub fn is_group_label(label: &str) -> bool {
    matches!(mapping().get(label), Some(Role::Group))
}

/// `com.app:id/priceChangeTV` -> `price Change TV`,
/// `storelocator_address_line1` -> `storelocator address line1`.
pub fn name_from_resource_id(resource_id: &str) -> String {
    let base = resource_id.rsplit('/').next().unwrap_or(resource_id);
    let mut words: Vec<String> = Vec::new();
    for part in base.split(['_', '-', '.']).filter(|p| !p.is_empty()) {
        let chars: Vec<char> = part.chars().collect();
        let mut word = String::new();
        for (i, &ch) in chars.iter().enumerate() {
            let boundary = i > 0 && ch.is_uppercase() && chars[i - 1].is_lowercase();
            if boundary && !word.is_empty() {
                words.push(std::mem::take(&mut word));
            }
            word.push(ch);
        }
        if !word.is_empty() {
            words.push(word);
        }
    }
    words.join(" ")
}

#[derive(Debug)]
struct Node {
    bounds: Bounds,
    class: String,
    text: String,
    resource_id: String,
    label: Option<String>,
    icon_class: String,
    visible: bool,
    parent: Option<usize>,
    children: Vec<usize>,
}

fn sanitize(l: i64, t: i64, r: i64, b: i64) -> Bounds {
    Bounds::new(
        l.min(r).max(0),
        t.min(b).max(0),
        l.max(r).max(0),
        t.max(b).max(0),
    )
}

fn str_field(v: &Value, key: &str) -> String {
    match v.get(key) {
        Some(Value::String(s)) => s.trim().to_string(),
        Some(Value::Array(items)) => items
            .iter()
            .filter_map(Value::as_str)
            .collect::<Vec<_>>()
            .join(" ")
            .trim()
            .to_string(),
        _ => String::new(),
    }
}

fn flatten(root: &Value, document: &'static str) -> Result<Vec<Node>, IngestError> {
    let mut nodes = Vec::new();
    let mut stack = vec![(root, None::<usize>, String::from("root"))];
    while let Some((v, parent, path)) = stack.pop() {
        let malformed = |message: &str| IngestError::Malformed {
            document,
            path: path.clone(),
            message: message.into(),
        };
        if !v.is_object() {
            return Err(malformed("node is not an object"));
        }
        let raw = v
            .get("bounds")
            .and_then(Value::as_array)
            .ok_or_else(|| malformed("missing bounds"))?;
        let coords: Vec<i64> = raw
            .iter()
            .map(|x| x.as_i64().or_else(|| x.as_f64().map(|f| f as i64)))
            .collect::<Option<_>>()
            .filter(|c: &Vec<i64>| c.len() == 4)
            .ok_or_else(|| malformed("bounds must be four integers"))?;
        let idx = nodes.len();
        nodes.push(Node {
            bounds: sanitize(coords[0], coords[1], coords[2], coords[3]),
            class: str_field(v, "class"),
            text: str_field(v, "text"),
            resource_id: str_field(v, "resource-id"),
            label: v
                .get("componentLabel")
                .and_then(Value::as_str)
                .map(str::to_string),
            icon_class: str_field(v, "iconClass"),
            visible: v
                .get("visible-to-user")
                .and_then(Value::as_bool)
                .unwrap_or(true),
            parent,
            children: Vec::new(),
        });
        if let Some(p) = parent {
            nodes[p].children.push(idx);
        }
        if let Some(children) = v.get("children").and_then(Value::as_array) {
            // reversed so that document order is preserved when popping
            for (i, child) in children.iter().enumerate().rev() {
                if child.is_null() {
                    continue;
                }
                stack.push((child, Some(idx), format!("{path}.children[{i}]")));
            }
        }
    }
    Ok(nodes)
}

fn hierarchy_root(doc: &Value) -> &Value {
    doc.get("activity")
        .and_then(|a| a.get("root"))
        .unwrap_or(doc)
}

fn covered_fraction(leaf: &Bounds, container: &Bounds) -> f64 {
    if leaf.area() == 0 {
        return if container.contains(leaf) { 1.0 } else { 0.0 };
    }
    let inter = leaf.intersection(container).map_or(0, |b| b.area());
    inter as f64 / leaf.area() as f64
}

fn mutual_overlap(a: &Bounds, b: &Bounds) -> f64 {
    if a.area() == 0 || b.area() == 0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    let inter = a.intersection(b).map_or(0, |x| x.area());
    inter as f64 / a.area().max(b.area()) as f64
}

// An unmapped label with nothing to display cannot form a valid component.
fn anonymous_other(s: &Node, text: &str, name: &str) -> bool {
    let label = s.label.as_deref().unwrap_or_default();
    map_component_label(label).0.is_other()
        && text.is_empty()
        && name.is_empty()
        && s.text.is_empty()
        && s.icon_class.is_empty()
}

fn short_class(class: &str) -> &str {
    class.rsplit('.').next().unwrap_or(class)
}

/// Builds a prototype from a Rico view hierarchy and its semantic
/// annotation document.
pub fn ingest_rico(
    gui_id: &str,
    domain: &str,
    hierarchy: &Value,
    semantics: &Value,
) -> Result<IngestOutput, IngestError> {
    let tree = flatten(hierarchy_root(hierarchy), "hierarchy")?;
    let sem = flatten(semantics, "semantics")?;

    let leaves: Vec<usize> = (0..tree.len())
        .filter(|&i| tree[i].children.is_empty() && tree[i].visible)
        .collect();
    if leaves.is_empty() {
        return Err(IngestError::NoVisibleLeaves);
    }

    let sem_groups: Vec<usize> = (0..sem.len())
        .filter(|&i| sem[i].label.as_deref().is_some_and(is_group_label))
        .collect();
    let sem_components: Vec<usize> = (0..sem.len())
        .filter(|&i| {
            sem[i]
                .label
                .as_deref()
                .is_some_and(|l| !is_group_label(l))
        })
        .collect();

    let mut warnings = Vec::new();
    let mut skipped = Vec::new();
    // leaf index -> component
    let mut components: BTreeMap<usize, GuiComponent> = BTreeMap::new();
    for &leaf in &leaves {
        let node = &tree[leaf];
        let aligned = sem_components
            .iter()
            .map(|&s| (s, mutual_overlap(&node.bounds, &sem[s].bounds)))
            .filter(|&(_, score)| score >= ALIGNMENT_OVERLAP)
            .fold(None::<(usize, f64)>, |best, cand| match best {
                Some(b) if b.1 >= cand.1 => Some(b),
                _ => Some(cand),
            })
            .map(|(s, _)| &sem[s]);
        let name = name_from_resource_id(&node.resource_id);
        let mut text = node.text.clone();
        let ctype = match aligned {
            Some(s) if anonymous_other(s, &text, &name) => {
                skipped.push(format!("{} {:?}", node.class, node.bounds));
                continue;
            }
            Some(s) => {
                let label = s.label.as_deref().unwrap_or_default();
                let (t, warning) = map_component_label(label);
                warnings.extend(warning);
                if text.is_empty() {
                    text = if !s.text.is_empty() {
                        s.text.clone()
                    } else {
                        s.icon_class.clone()
                    };
                }
                t
            }
            None if text.is_empty() && name.is_empty() => {
                skipped.push(format!("{} {:?}", node.class, node.bounds));
                continue;
            }
            None => {
                let class = short_class(&node.class);
                let class = if class.is_empty() { "View" } else { class };
                warnings.push(IngestWarning::Unaligned {
                    class: class.to_string(),
                });
                ComponentType::Other(class.to_string())
            }
        };
        components.insert(leaf, GuiComponent::new(&text, ctype, &name, node.bounds));
    }

    // semantic group assignment: smallest covering group wins
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut uncovered = Vec::new();
    for &leaf in components.keys() {
        let bounds = &tree[leaf].bounds;
        let best = sem_groups
            .iter()
            .copied()
            .filter(|&g| covered_fraction(bounds, &sem[g].bounds) >= ALIGNMENT_OVERLAP)
            .min_by_key(|&g| (sem[g].bounds.area(), g));
        match best {
            Some(g) => members.entry(g).or_default().push(leaf),
            None => uncovered.push(leaf),
        }
    }

    // fallback clustering over the original hierarchy
    let grouped: Vec<bool> = {
        let mut flags = vec![false; tree.len()];
        for leaves in members.values() {
            for &l in leaves {
                flags[l] = true;
            }
        }
        flags
    };
    let mut has_grouped = vec![false; tree.len()];
    for i in (0..tree.len()).rev() {
        // children always have larger indices than their parent
        if grouped[i] {
            has_grouped[i] = true;
        }
        if has_grouped[i] {
            if let Some(p) = tree[i].parent {
                has_grouped[p] = true;
            }
        }
    }
    let mut fallback: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &leaf in &uncovered {
        let mut anchor = leaf;
        while let Some(p) = tree[anchor].parent {
            if has_grouped[p] {
                break;
            }
            anchor = p;
        }
        fallback.entry(anchor).or_default().push(leaf);
    }

    let mut groups = Vec::new();
    for (g, leaves) in &members {
        let comps: Vec<GuiComponent> = leaves.iter().map(|l| components[l].clone()).collect();
        let bounds = comps
            .iter()
            .fold(sem[*g].bounds, |acc, c| acc.union(&c.bounds));
        groups.push(LayoutGroup {
            name: sem[*g].label.clone().unwrap_or_default(),
            bounds,
            components: comps,
        });
    }
    for (anchor, leaves) in &fallback {
        let comps: Vec<GuiComponent> = leaves.iter().map(|l| components[l].clone()).collect();
        let bounds = comps
            .iter()
            .fold(tree[*anchor].bounds, |acc, c| acc.union(&c.bounds));
        groups.push(LayoutGroup {
            name: FALLBACK_GROUP_NAME.into(),
            bounds,
            components: comps,
        });
    }

    let screen = groups
        .iter()
        .fold(tree[0].bounds, |acc, g| acc.union(&g.bounds));
    let prototype = GuiPrototype {
        gui_id: gui_id.into(),
        domain: domain.into(),
        screen,
        groups,
    };
    Ok(IngestOutput {
        prototype,
        warnings,
        skipped,
        visible_leaves: leaves.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn leaf(bounds: [i64; 4], class: &str, text: &str, rid: &str) -> Value {
        json!({"bounds": bounds, "class": class, "text": text, "resource-id": rid,
               "visible-to-user": true, "children": []})
    }

    #[test]
    fn resource_id_names() {
        assert_eq!(name_from_resource_id("com.x:id/priceChangeTV"), "price Change TV");
        assert_eq!(
            name_from_resource_id("com.x:id/storelocator_address_line1"),
            "storelocator address line1"
        );
        assert_eq!(
            name_from_resource_id("overview_viewpager_fab"),
            "overview viewpager fab"
        );
        assert_eq!(name_from_resource_id(""), "");
    }

    #[test]
    fn mapping_table() {
        assert_eq!(map_component_label("Text Button").0, ComponentType::Button);
        assert_eq!(map_component_label("Input").0, ComponentType::TextInput);
        assert_eq!(map_component_label("On/Off Switch").0, ComponentType::Switch);
        assert_eq!(map_component_label("Video"), (ComponentType::Other("Video".into()), None));
        let (t, w) = map_component_label("Hologram");
        assert_eq!(t, ComponentType::Other("Hologram".into()));
        assert!(w.is_some());
        assert!(is_group_label("Toolbar"));
        assert!(!is_group_label("Icon"));
    }

    #[test]
    fn toolbar_annotation_over_two_leaves() {
        let hierarchy = json!({"activity": {"root": {
            "bounds": [0, 0, 1440, 2560], "class": "FrameLayout", "visible-to-user": true,
            "children": [{
                "bounds": [0, 0, 1440, 200], "class": "Toolbar", "visible-to-user": true,
                "children": [
                    leaf([0, 0, 700, 200], "android.widget.TextView", "Settings", "com.x:id/title"),
                    leaf([1300, 50, 1400, 150], "android.widget.ImageButton", "", "com.x:id/done"),
                ]}]}}});
        let semantics = json!({
            "bounds": [0, 0, 1440, 2560], "class": "FrameLayout",
            "children": [{
                "bounds": [0, 0, 1440, 200], "componentLabel": "Toolbar",
                "children": [
                    {"bounds": [0, 0, 700, 200], "componentLabel": "Text", "text": "Settings"},
                    {"bounds": [1300, 50, 1400, 150], "componentLabel": "Icon", "iconClass": "check"}
                ]}]});
        let out = ingest_rico("g", "Health", &hierarchy, &semantics).unwrap();
        let p = &out.prototype;
        assert_eq!(p.groups.len(), 1);
        assert_eq!(p.groups[0].name, "Toolbar");
        assert_eq!(p.groups[0].components.len(), 2);
        let icon = &p.groups[0].components[1];
        assert_eq!(crate::abstraction::component_line(icon), r#""check" (Icon) (done)"#);
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn unannotated_leaves_share_one_fallback_group() {
        // root -> container -> three leaves; nothing annotated as a group.
        let hierarchy = json!({
            "bounds": [0, 0, 1000, 1000], "class": "FrameLayout",
            "children": [{
                "bounds": [0, 0, 1000, 600], "class": "LinearLayout",
                "children": [
                    leaf([0, 0, 1000, 100], "TextView", "Name", "name_label"),
                    leaf([0, 100, 1000, 200], "EditText", "", "name_input"),
                    leaf([0, 200, 1000, 300], "Button", "Save", "save"),
                ]}]});
        let semantics = json!({"bounds": [0, 0, 1000, 1000], "children": [
            {"bounds": [0, 0, 1000, 100], "componentLabel": "Text"},
            {"bounds": [0, 100, 1000, 200], "componentLabel": "Input"},
            {"bounds": [0, 200, 1000, 300], "componentLabel": "Text Button"}]});
        let out = ingest_rico("g", "", &hierarchy, &semantics).unwrap();
        assert_eq!(out.prototype.groups.len(), 1);
        assert_eq!(out.prototype.groups[0].name, FALLBACK_GROUP_NAME);
        assert_eq!(out.prototype.groups[0].components.len(), 3);
        let types: Vec<_> = out.prototype.components().map(|c| c.ctype.clone()).collect();
        assert_eq!(
            types,
            [ComponentType::Label, ComponentType::TextInput, ComponentType::Button]
        );
    }

    #[test]
    fn fallback_stops_below_grouped_subtrees() {
        // root has a toolbar subtree (grouped) and a plain container.
        let hierarchy = json!({
            "bounds": [0, 0, 1000, 1000], "class": "FrameLayout",
            "children": [
                {"bounds": [0, 0, 1000, 100], "class": "Toolbar", "children": [
                    leaf([0, 0, 500, 100], "TextView", "Title", "")]},
                {"bounds": [0, 100, 1000, 1000], "class": "LinearLayout", "children": [
                    leaf([0, 100, 1000, 200], "TextView", "a", ""),
                    {"bounds": [0, 200, 1000, 400], "class": "LinearLayout", "children": [
                        leaf([0, 200, 1000, 300], "TextView", "b", "")]}]},
                leaf([0, 900, 1000, 1000], "TextView", "footer", "")]});
        let semantics = json!({"bounds": [0, 0, 1000, 1000], "children": [
            {"bounds": [0, 0, 1000, 100], "componentLabel": "Toolbar"}]});
        let out = ingest_rico("g", "", &hierarchy, &semantics).unwrap();
        let sizes: Vec<(String, usize)> = out
            .prototype
            .groups
            .iter()
            .map(|g| (g.name.clone(), g.components.len()))
            .collect();
        assert_eq!(
            sizes,
            [("Toolbar".into(), 1), ("Group".into(), 2), ("Group".into(), 1)]
        );
        // unaligned leaves are typed by class and warned about
        assert!(out
            .warnings
            .iter()
            .all(|w| matches!(w, IngestWarning::Unaligned { .. })));
    }

    #[test]
    fn no_visible_leaves() {
        let hierarchy = json!({"bounds": [0, 0, 10, 10], "visible-to-user": false});
        let semantics = json!({"bounds": [0, 0, 10, 10]});
        assert!(matches!(
            ingest_rico("g", "", &hierarchy, &semantics),
            Err(IngestError::NoVisibleLeaves)
        ));
    }

    #[test]
    fn anonymous_decorative_leaf_is_skipped() {
        let hierarchy = json!({"bounds": [0, 0, 100, 100], "children": [
            leaf([0, 0, 100, 50], "View", "", ""),
            leaf([0, 50, 100, 100], "TextView", "hello", "")]});
        let semantics = json!({"bounds": [0, 0, 100, 100]});
        let out = ingest_rico("g", "", &hierarchy, &semantics).unwrap();
        assert_eq!(out.visible_leaves, 2);
        assert_eq!(out.prototype.component_count() + out.skipped.len(), 2);
    }

    #[test]
    fn unknown_label_kept_as_other() {
        let hierarchy = json!({"bounds": [0, 0, 100, 100], "children": [
            leaf([0, 0, 100, 50], "View", "3D", ""),
            leaf([0, 50, 100, 100], "View", "", "")]});
        let semantics = json!({"bounds": [0, 0, 100, 100], "children": [
            {"bounds": [0, 0, 100, 50], "componentLabel": "Hologram"},
            {"bounds": [0, 50, 100, 100], "componentLabel": "Video"}]});
        let out = ingest_rico("g", "", &hierarchy, &semantics).unwrap();
        out.prototype.validate().unwrap();
        assert_eq!(out.skipped.len(), 1);
        assert_eq!(
            out.prototype.groups[0].components[0].ctype,
            ComponentType::Other("Hologram".into())
        );
        assert_eq!(
            out.warnings,
            [IngestWarning::UnmappedType {
                label: "Hologram".into()
            }]
        );
    }
}
