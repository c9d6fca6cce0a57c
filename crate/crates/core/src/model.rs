//! Domain types for GUI prototypes and user stories.
//!
//! Prototypes are exchanged as JSON documents:
//!
//! ```json
//! { "gui_id": "g1", "domain": "Shopping",
//!   "screen": {"left":0,"top":0,"right":1440,"bottom":2560},
//!   "groups": [ { "name": "Toolbar", "bounds": {...},
//!                 "components": [ {"text":"check","type":"Icon","name":"done","bounds":{...}} ] } ] }
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("validation error at {path}: {message}")]
    Validation { path: String, message: String },
    #[error("duplicate gui_id {0:?} in dataset")]
    DuplicateGui(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ModelError {
    fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::Validation {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Path to the offending element for schema and validation errors.
    pub fn path(&self) -> Option<&str> {
        match self {
            ModelError::Schema { path, .. } | ModelError::Validation { path, .. } => Some(path),
            _ => None,
        }
    }
}

/// Pixel rectangle in screen coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Bounds {
    pub left: i64,
    pub top: i64,
    pub right: i64,
    pub bottom: i64,
}

impl Bounds {
    pub const fn new(left: i64, top: i64, right: i64, bottom: i64) -> Self {
        Bounds {
            left,
            top,
            right,
            bottom,
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if self.left < 0 || self.top < 0 || self.right < 0 || self.bottom < 0 {
            return Err(format!("negative coordinate in {self:?}"));
        }
        if self.left > self.right {
            return Err(format!("left {} > right {}", self.left, self.right));
        }
        if self.top > self.bottom {
            return Err(format!("top {} > bottom {}", self.top, self.bottom));
        }
        Ok(())
    }

    pub fn width(&self) -> i64 {
        (self.right - self.left).max(0)
    }

    pub fn height(&self) -> i64 {
        (self.bottom - self.top).max(0)
    }

    pub fn area(&self) -> i64 {
        self.width() * self.height()
    }

    pub fn intersection(&self, other: &Bounds) -> Option<Bounds> {
        let b = Bounds::new(
            self.left.max(other.left),
            self.top.max(other.top),
            self.right.min(other.right),
            self.bottom.min(other.bottom),
        );
        (b.left <= b.right && b.top <= b.bottom).then_some(b)
    }

    pub fn contains(&self, other: &Bounds) -> bool {
        self.left <= other.left
            && self.top <= other.top
            && self.right >= other.right
            && self.bottom >= other.bottom
    }

    pub fn union(&self, other: &Bounds) -> Bounds {
        Bounds::new(
            self.left.min(other.left),
            self.top.min(other.top),
            self.right.max(other.right),
            self.bottom.max(other.bottom),
        )
    }
}

/// Basic GUI component type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ComponentType {
    Label,
    Button,
    TextInput,
    Checkbox,
    RadioButton,
    Icon,
    Image,
    Switch,
    Slider,
    DropDown,
    ListItemText,
    Other(String),
}

const NAMED_TYPES: [(ComponentType, &str); 11] = [
    (ComponentType::Label, "Label"),
    (ComponentType::Button, "Button"),
    (ComponentType::TextInput, "Text Input"),
    (ComponentType::Checkbox, "Checkbox"),
    (ComponentType::RadioButton, "Radio Button"),
    (ComponentType::Icon, "Icon"),
    (ComponentType::Image, "Image"),
    (ComponentType::Switch, "Switch"),
    (ComponentType::Slider, "Slider"),
    (ComponentType::DropDown, "Drop Down"),
    (ComponentType::ListItemText, "List Item Text"),
];

fn type_key(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

impl ComponentType {
    pub fn as_str(&self) -> &str {
        match self {
            ComponentType::Other(name) => name,
            known => NAMED_TYPES
                .iter()
                .find(|(t, _)| t == known)
                .map(|(_, s)| *s)
                .unwrap_or_default(),
        }
    }

    pub fn is_other(&self) -> bool {
        matches!(self, ComponentType::Other(_))
    }
}

impl fmt::Display for ComponentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parsing never fails: known names match case- and separator-insensitively
/// ("TextInput", "text input", "text_input"), anything else becomes `Other`.
impl FromStr for ComponentType {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = type_key(s);
        Ok(NAMED_TYPES
            .iter()
            .find(|(_, name)| type_key(name) == key)
            .map(|(t, _)| t.clone())
            .unwrap_or_else(|| ComponentType::Other(s.trim().to_string())))
    }
}

impl Serialize for ComponentType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ComponentType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(s.parse().unwrap_or_else(|never| match never {}))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuiComponent {
    /// Stable identifier from the ID-annotated abstraction of the source
    /// prototype. 0 means unassigned.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub id: u32,
    #[serde(default)]
    pub text: String,
    #[serde(rename = "type")]
    pub ctype: ComponentType,
    #[serde(default)]
    pub name: String,
    pub bounds: Bounds,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

impl GuiComponent {
    pub fn new(text: &str, ctype: ComponentType, name: &str, bounds: Bounds) -> Self {
        GuiComponent {
            id: 0,
            text: text.to_string(),
            ctype,
            name: name.to_string(),
            bounds,
        }
    }

    fn check(&self, path: &str) -> Result<(), ModelError> {
        self.bounds
            .check()
            .map_err(|m| ModelError::validation(format!("{path}.bounds"), m))?;
        if let ComponentType::Other(name) = &self.ctype {
            if name.trim().is_empty() {
                return Err(ModelError::validation(
                    format!("{path}.type"),
                    "component type must not be empty",
                ));
            }
            if self.text.is_empty() && self.name.is_empty() {
                return Err(ModelError::validation(
                    path,
                    "untyped component needs a text or a name",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutGroup {
    pub name: String,
    pub bounds: Bounds,
    pub components: Vec<GuiComponent>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationWarning {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuiPrototype {
    pub gui_id: String,
    #[serde(default)]
    pub domain: String,
    pub screen: Bounds,
    pub groups: Vec<LayoutGroup>,
}

impl GuiPrototype {
    /// Checks every invariant. Group bounds that do not cover their members
    /// are reported as warnings since source data is noisy.
    pub fn validate(&self) -> Result<Vec<ValidationWarning>, ModelError> {
        if self.gui_id.trim().is_empty() {
            return Err(ModelError::validation("gui_id", "gui_id must not be empty"));
        }
        self.screen
            .check()
            .map_err(|m| ModelError::validation("screen", m))?;
        let mut warnings = Vec::new();
        for (gi, group) in self.groups.iter().enumerate() {
            let gpath = format!("groups[{gi}]");
            group
                .bounds
                .check()
                .map_err(|m| ModelError::validation(format!("{gpath}.bounds"), m))?;
            if group.components.is_empty() {
                return Err(ModelError::validation(
                    format!("{gpath}.components"),
                    "layout group has no components",
                ));
            }
            for (ci, c) in group.components.iter().enumerate() {
                let cpath = format!("{gpath}.components[{ci}]");
                c.check(&cpath)?;
                if !group.bounds.contains(&c.bounds) {
                    warnings.push(ValidationWarning {
                        path: cpath,
                        message: "component lies outside its group bounds".into(),
                    });
                }
            }
        }
        Ok(warnings)
    }

    pub fn component_count(&self) -> usize {
        self.groups.iter().map(|g| g.components.len()).sum()
    }

    pub fn components(&self) -> impl Iterator<Item = &GuiComponent> {
        self.groups.iter().flat_map(|g| g.components.iter())
    }

    /// Gives every component the ID it carries in the ID-annotated
    /// abstraction, unless all components already carry one.
    pub fn assign_ids(&mut self) {
        if self.components().all(|c| c.id != 0) {
            return;
        }
        let abstraction = crate::abstraction::abstract_gui(self, true);
        for line in abstraction.lines.iter() {
            if let (Some(id), Some((g, c))) = (line.component_id, line.origin) {
                self.groups[g].components[c].id = id;
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("prototype serializes")
    }
}

/// Parses and validates a prototype document.
pub fn parse_prototype(document: &str) -> Result<GuiPrototype, ModelError> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let proto: GuiPrototype =
        serde_path_to_error::deserialize(de).map_err(|e| ModelError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
    for w in proto.validate()? {
        log::warn!("{}: {} ({})", proto.gui_id, w.message, w.path);
    }
    Ok(proto)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserStory {
    pub us_id: String,
    pub text: String,
    pub gui_id: String,
}

impl UserStory {
    pub fn new(us_id: &str, text: &str, gui_id: &str) -> Self {
        UserStory {
            us_id: us_id.into(),
            text: text.into(),
            gui_id: gui_id.into(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.text.trim().is_empty() {
            return Err(ModelError::validation(
                format!("stories[{}].text", self.us_id),
                "user story text is empty",
            ));
        }
        if !self.text.trim_start().to_lowercase().starts_with("as a") {
            log::debug!("story {} does not follow the As a ... template", self.us_id);
        }
        Ok(())
    }
}

/// Prototypes keyed by `gui_id`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrototypeStore {
    prototypes: BTreeMap<String, GuiPrototype>,
}

impl PrototypeStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, proto: GuiPrototype) -> Result<(), ModelError> {
        if self.prototypes.contains_key(&proto.gui_id) {
            return Err(ModelError::DuplicateGui(proto.gui_id));
        }
        self.prototypes.insert(proto.gui_id.clone(), proto);
        Ok(())
    }

    pub fn get(&self, gui_id: &str) -> Option<&GuiPrototype> {
        self.prototypes.get(gui_id)
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &GuiPrototype> {
        self.prototypes.values()
    }

    /// Loads every `*.json` file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, ModelError> {
        let io = |e| ModelError::Io {
            path: dir.display().to_string(),
            source: e,
        };
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut store = PrototypeStore::new();
        for path in paths {
            let text = std::fs::read_to_string(&path).map_err(|e| ModelError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            let proto = parse_prototype(&text).map_err(|e| match e {
                ModelError::Schema { path: p, message } => ModelError::Schema {
                    path: format!("{}:{p}", path.display()),
                    message,
                },
                ModelError::Validation { path: p, message } => ModelError::Validation {
                    path: format!("{}:{p}", path.display()),
                    message,
                },
                other => other,
            })?;
            store.insert(proto)?;
        }
        Ok(store)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), ModelError> {
        let io = |e| ModelError::Io {
            path: dir.display().to_string(),
            source: e,
        };
        std::fs::create_dir_all(dir).map_err(io)?;
        for proto in self.iter() {
            std::fs::write(dir.join(format!("{}.json", proto.gui_id)), proto.to_json())
                .map_err(io)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "gui_id": "g1", "domain": "Test",
        "screen": {"left":0,"top":0,"right":100,"bottom":200},
        "groups": [{"name":"Toolbar","bounds":{"left":0,"top":0,"right":100,"bottom":20},
                    "components":[{"text":"OK","type":"Button","name":"ok","bounds":{"left":0,"top":0,"right":50,"bottom":20}}]}]
    }"#;

    #[test]
    fn minimal_document() {
        let p = parse_prototype(MINIMAL).unwrap();
        assert_eq!(p.groups.len(), 1);
        assert_eq!(p.component_count(), 1);
        assert_eq!(p.groups[0].components[0].ctype, ComponentType::Button);
    }

    #[test]
    fn inverted_bounds_report_path() {
        let doc = MINIMAL.replace(
            r#""left":0,"top":0,"right":50"#,
            r#""left":60,"top":0,"right":50"#,
        );
        let err = parse_prototype(&doc).unwrap_err();
        assert!(matches!(err, ModelError::Validation { .. }));
        assert_eq!(err.path(), Some("groups[0].components[0].bounds"));
    }

    #[test]
    fn missing_field_is_schema_error() {
        let doc = MINIMAL.replace(r#""gui_id": "g1","#, "");
        let err = parse_prototype(&doc).unwrap_err();
        assert!(matches!(err, ModelError::Schema { .. }), "{err}");
    }

    #[test]
    fn wrong_type_is_schema_error_with_path() {
        let doc = MINIMAL.replace(r#""bottom":200"#, r#""bottom":"tall""#);
        let err = parse_prototype(&doc).unwrap_err();
        assert!(matches!(err, ModelError::Schema { .. }));
        assert_eq!(err.path(), Some("screen.bottom"));
    }

    #[test]
    fn anonymous_untyped_component_rejected() {
        let doc = MINIMAL.replace(
            r#""text":"OK","type":"Button","name":"ok""#,
            r#""text":"","type":"Blob","name":"""#,
        );
        assert!(matches!(
            parse_prototype(&doc),
            Err(ModelError::Validation { .. })
        ));
        // A specific type may be anonymous.
        let doc = MINIMAL.replace(
            r#""text":"OK","type":"Button","name":"ok""#,
            r#""text":"","type":"Checkbox","name":"""#,
        );
        assert!(parse_prototype(&doc).is_ok());
    }

    #[test]
    fn empty_group_rejected() {
        let doc = r#"{"gui_id":"g","screen":{"left":0,"top":0,"right":1,"bottom":1},
            "groups":[{"name":"x","bounds":{"left":0,"top":0,"right":1,"bottom":1},"components":[]}]}"#;
        let err = parse_prototype(doc).unwrap_err();
        assert_eq!(err.path(), Some("groups[0].components"));
    }

    #[test]
    fn group_bounds_violation_is_only_a_warning() {
        let doc = MINIMAL.replace(r#""right":50,"bottom":20"#, r#""right":150,"bottom":20"#);
        let p = parse_prototype(&doc).unwrap();
        assert_eq!(p.validate().unwrap().len(), 1);
    }

    #[test]
    fn type_names_round_trip() {
        for (t, name) in NAMED_TYPES.iter() {
            assert_eq!(&name.parse::<ComponentType>().unwrap(), t);
            assert_eq!(t.to_string(), *name);
        }
        assert_eq!(
            "textinput".parse::<ComponentType>().unwrap(),
            ComponentType::TextInput
        );
        assert_eq!(
            "Color Picker".parse::<ComponentType>().unwrap(),
            ComponentType::Other("Color Picker".into())
        );
    }

    #[test]
    fn emit_then_parse_is_identity() {
        let p = parse_prototype(MINIMAL).unwrap();
        assert_eq!(parse_prototype(&p.to_json()).unwrap(), p);
    }

    #[test]
    fn duplicate_gui_rejected_by_store() {
        let p = parse_prototype(MINIMAL).unwrap();
        let mut store = PrototypeStore::new();
        store.insert(p.clone()).unwrap();
        assert!(matches!(store.insert(p), Err(ModelError::DuplicateGui(_))));
    }
}
