//! Conversion between GUI components and HTML snippets.
//!
//! [`components_to_html`] renders components as simple form markup (used for
//! few-shot recommendation examples). [`markup_to_components`] recovers
//! text/type/name triples from generated markup so a recommendation can be
//! inserted into a prototype as a new layout group.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;

use crate::model::{Bounds, ComponentType, GuiComponent, GuiPrototype, LayoutGroup};

pub const RECOMMENDATION_GROUP_NAME: &str = "Recommendation";
const ROW_HEIGHT: i64 = 48;

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn unescape(s: &str) -> String {
    s.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&nbsp;", " ")
        .replace("&amp;", "&")
}

fn name_attr(name: &str) -> String {
    if name.is_empty() {
        String::new()
    } else {
        format!(" data-name=\"{}\"", escape(name))
    }
}

pub fn component_to_html(c: &GuiComponent) -> String {
    let text = escape(&c.text);
    let name = name_attr(&c.name);
    match &c.ctype {
        ComponentType::Label => format!("<label{name}>{text}</label>"),
        ComponentType::Button => format!("<button{name}>{text}</button>"),
        ComponentType::TextInput => format!("<input type=\"text\"{name} placeholder=\"{text}\">"),
        ComponentType::Checkbox => format!("<input type=\"checkbox\"{name} aria-label=\"{text}\">"),
        ComponentType::RadioButton => format!("<input type=\"radio\"{name} aria-label=\"{text}\">"),
        ComponentType::Switch => {
            format!("<input type=\"checkbox\" role=\"switch\"{name} aria-label=\"{text}\">")
        }
        ComponentType::Slider => format!("<input type=\"range\"{name} aria-label=\"{text}\">"),
        ComponentType::Icon => format!("<span class=\"icon\"{name}>{text}</span>"),
        ComponentType::Image => format!("<img{name} alt=\"{text}\">"),
        ComponentType::DropDown => format!("<select{name}><option>{text}</option></select>"),
        ComponentType::ListItemText => format!("<li{name}>{text}</li>"),
        ComponentType::Other(t) => {
            format!("<div data-type=\"{}\"{name}>{text}</div>", escape(t))
        }
    }
}

pub fn components_to_html(components: &[GuiComponent]) -> String {
    let mut out = String::from("<div class=\"group\">\n");
    for c in components {
        out.push_str("  ");
        out.push_str(&component_to_html(c));
        out.push('\n');
    }
    out.push_str("</div>");
    out
}

fn tag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"<(/?)([A-Za-z][A-Za-z0-9-]*)((?:\s+[^\s=>/]+(?:\s*=\s*(?:"[^"]*"|'[^']*'|[^\s>]+))?)*)\s*(/?)>"#)
            .unwrap()
    })
}

fn attr_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"([^\s=>/]+)(?:\s*=\s*(?:"([^"]*)"|'([^']*)'|([^\s>]+)))?"#).unwrap()
    })
}

fn attributes(raw: &str) -> HashMap<String, String> {
    attr_re()
        .captures_iter(raw)
        .map(|c| {
            let value = c
                .get(2)
                .or_else(|| c.get(3))
                .or_else(|| c.get(4))
                .map_or("", |m| m.as_str());
            (c[1].to_lowercase(), unescape(value))
        })
        .collect()
}

fn element_name(attrs: &HashMap<String, String>) -> String {
    ["name", "data-name", "id", "aria-label"]
        .iter()
        .find_map(|k| attrs.get(*k).filter(|v| !v.is_empty()))
        .cloned()
        .unwrap_or_default()
}

fn input_component(attrs: &HashMap<String, String>) -> (ComponentType, String) {
    let kind = attrs.get("type").map(|s| s.to_lowercase()).unwrap_or_default();
    let label = attrs
        .get("aria-label")
        .or_else(|| attrs.get("value"))
        .cloned()
        .unwrap_or_default();
    match kind.as_str() {
        "checkbox" if attrs.get("role").is_some_and(|r| r == "switch") => {
            (ComponentType::Switch, label)
        }
        "checkbox" => (ComponentType::Checkbox, label),
        "radio" => (ComponentType::RadioButton, label),
        "range" => (ComponentType::Slider, label),
        "color" => (ComponentType::Other("Color Picker".into()), label),
        "submit" | "button" | "reset" => (
            ComponentType::Button,
            attrs.get("value").cloned().unwrap_or_default(),
        ),
        "hidden" => (ComponentType::Other("Hidden".into()), String::new()),
        _ => (
            ComponentType::TextInput,
            attrs
                .get("placeholder")
                .or_else(|| attrs.get("value"))
                .cloned()
                .unwrap_or_default(),
        ),
    }
}

struct Open {
    tag: String,
    slot: usize,
    text: String,
}

/// Extracts components from markup in document order. Containers (div,
/// form, section, ...) are transparent; text-bearing elements become
/// labels, form controls their matching types.
pub fn markup_to_components(markup: &str) -> Vec<(String, ComponentType, String)> {
    let mut slots: Vec<Option<(String, ComponentType, String)>> = Vec::new();
    let mut stack: Vec<Open> = Vec::new();
    let mut in_select: Option<usize> = None;
    let mut skip_depth = 0usize;
    let mut last = 0;
    let push_text = |stack: &mut Vec<Open>, text: &str| {
        let text = unescape(text);
        if let Some(top) = stack.last_mut() {
            if !text.trim().is_empty() {
                if !top.text.is_empty() {
                    top.text.push(' ');
                }
                top.text.push_str(text.trim());
            }
        }
    };
    for caps in tag_re().captures_iter(markup) {
        let whole = caps.get(0).unwrap();
        if skip_depth == 0 {
            push_text(&mut stack, &markup[last..whole.start()]);
        }
        last = whole.end();
        let closing = !caps[1].is_empty();
        let tag = caps[2].to_lowercase();
        if matches!(tag.as_str(), "style" | "script") {
            skip_depth = if closing { skip_depth.saturating_sub(1) } else { skip_depth + 1 };
            continue;
        }
        if skip_depth > 0 {
            continue;
        }
        let attrs = attributes(&caps[3]);
        if closing {
            if let Some(pos) = stack.iter().rposition(|o| o.tag == tag) {
                let open = stack.remove(pos);
                let text = open.text.split_whitespace().collect::<Vec<_>>().join(" ");
                if open.slot == usize::MAX && tag != "option" {
                    push_text(&mut stack, &text);
                }
                if let Some(Some(slot)) = slots.get_mut(open.slot) {
                    if slot.0.is_empty() {
                        slot.0 = text.clone();
                    }
                }
                if tag == "select" {
                    in_select = None;
                }
                if tag == "option" {
                    if let Some(sel) = in_select {
                        if let Some(Some(slot)) = slots.get_mut(sel) {
                            if slot.0.is_empty() {
                                slot.0 = text;
                            }
                        }
                    }
                }
            }
            continue;
        }
        let name = element_name(&attrs);
        match tag.as_str() {
            "input" => {
                let (ctype, text) = input_component(&attrs);
                if !matches!(&ctype, ComponentType::Other(t) if t == "Hidden") {
                    slots.push(Some((text, ctype, name)));
                }
            }
            "img" => slots.push(Some((
                attrs.get("alt").cloned().unwrap_or_default(),
                ComponentType::Image,
                name,
            ))),
            "select" => {
                slots.push(Some((String::new(), ComponentType::DropDown, name)));
                in_select = Some(slots.len() - 1);
                stack.push(Open {
                    tag,
                    slot: usize::MAX,
                    text: String::new(),
                });
            }
            "option" => stack.push(Open {
                tag,
                slot: usize::MAX,
                text: String::new(),
            }),
            _ if in_select.is_some() => {}
            "br" | "hr" | "meta" | "link" => {}
            _ => {
                let ctype = match tag.as_str() {
                    "button" | "a" => Some(ComponentType::Button),
                    "textarea" => Some(ComponentType::TextInput),
                    "li" => Some(ComponentType::ListItemText),
                    "label" | "p" | "h1" | "h2" | "h3" | "h4" | "h5" | "h6" | "strong" | "em"
                    | "small" | "b" => Some(ComponentType::Label),
                    "span" if attrs.get("class").is_some_and(|c| c.split_whitespace().any(|x| x == "icon")) => {
                        Some(ComponentType::Icon)
                    }
                    "span" => Some(ComponentType::Label),
                    "i" => Some(ComponentType::Icon),
                    "div" => attrs
                        .get("data-type")
                        .map(|t| t.parse().unwrap_or_else(|never| match never {})),
                    _ => None,
                };
                // nested text-bearing elements fold their text into the
                // outermost one
                let nested = stack.iter().any(|o| o.slot != usize::MAX);
                let slot = match ctype {
                    Some(ctype) if !nested => {
                        let text = if tag == "textarea" {
                            attrs.get("placeholder").cloned().unwrap_or_default()
                        } else {
                            String::new()
                        };
                        slots.push(Some((text, ctype, name)));
                        slots.len() - 1
                    }
                    _ => usize::MAX,
                };
                let self_closing = !caps[4].is_empty();
                if !self_closing {
                    stack.push(Open {
                        tag,
                        slot,
                        text: String::new(),
                    });
                }
            }
        }
    }
    slots
        .into_iter()
        .flatten()
        .filter(|(text, ctype, name)| {
            !(matches!(ctype, ComponentType::Label | ComponentType::ListItemText | ComponentType::Other(_))
                && text.is_empty()
                && name.is_empty())
        })
        .collect()
}

/// Builds the layout group a recommendation turns into when inserted below
/// the existing groups of `proto`. Markup without recognizable controls
/// becomes a single untyped component holding the snippet.
pub fn recommendation_group(proto: &GuiPrototype, markup: &str) -> LayoutGroup {
    let mut triples = markup_to_components(markup);
    if triples.is_empty() {
        triples.push((
            markup.trim().to_string(),
            ComponentType::Other("HTML Snippet".into()),
            String::new(),
        ));
    }
    let top = proto
        .groups
        .iter()
        .map(|g| g.bounds.bottom)
        .max()
        .unwrap_or(proto.screen.top);
    let (left, right) = (proto.screen.left, proto.screen.right.max(proto.screen.left));
    let components: Vec<GuiComponent> = triples
        .into_iter()
        .enumerate()
        .map(|(i, (text, ctype, name))| {
            let y = top + i as i64 * ROW_HEIGHT;
            GuiComponent::new(&text, ctype, &name, Bounds::new(left, y, right, y + ROW_HEIGHT))
        })
        .collect();
    let bottom = top + components.len() as i64 * ROW_HEIGHT;
    LayoutGroup {
        name: RECOMMENDATION_GROUP_NAME.into(),
        bounds: Bounds::new(left, top, right, bottom),
        components,
    }
}
