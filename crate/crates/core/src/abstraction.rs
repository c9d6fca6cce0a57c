//! Two-tier textual abstraction of a prototype.
//!
//! Outer tier lines name the layout groups, inner tier lines describe one
//! component each:
//!
//! ```text
//! - Toolbar:
//!   - "check" (Icon) (done)
//! ```
//!
//! With IDs enabled every component line carries `[<id>] ` after the bullet,
//! numbered 1..N in emission order. Groups and components are emitted
//! top-left to bottom-right.

use std::collections::BTreeSet;

use crate::model::{GuiComponent, GuiPrototype, LayoutGroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineKind {
    GroupHeader,
    ComponentLine,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbstractionLine {
    pub kind: LineKind,
    pub text: String,
    pub component_id: Option<u32>,
    /// (group index, component index) in the source prototype.
    pub origin: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuiAbstraction {
    pub gui_id: String,
    pub lines: Vec<AbstractionLine>,
    pub with_ids: bool,
    pub rendered: String,
}

impl GuiAbstraction {
    pub fn component_ids(&self) -> BTreeSet<u32> {
        self.lines.iter().filter_map(|l| l.component_id).collect()
    }

    pub fn component_lines(&self) -> impl Iterator<Item = &AbstractionLine> {
        self.lines
            .iter()
            .filter(|l| l.kind == LineKind::ComponentLine)
    }

    /// Resolves an emitted ID back to the component it labels.
    pub fn component<'p>(&self, proto: &'p GuiPrototype, id: u32) -> Option<&'p GuiComponent> {
        let (g, c) = self
            .lines
            .iter()
            .find(|l| l.component_id == Some(id))?
            .origin?;
        proto.groups.get(g)?.components.get(c)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AbstractionError {
    #[error("component id {0} is not present in the abstraction")]
    UnknownId(u32),
    #[error("id basis belongs to {basis:?}, prototype is {proto:?}")]
    BasisMismatch { basis: String, proto: String },
    #[error("id basis was rendered without component ids")]
    BasisWithoutIds,
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

/// `"<text>" (<Type>) (<name>)`; empty fields render as `""` and `()`.
pub fn component_line(c: &GuiComponent) -> String {
    format!("{} ({}) ({})", quote(&c.text), c.ctype, c.name)
}

fn reading_order<T>(items: &[T], bounds: impl Fn(&T) -> (i64, i64)) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by_key(|&i| {
        let (top, left) = bounds(&items[i]);
        (top, left, i)
    });
    order
}

pub fn abstract_gui(p: &GuiPrototype, with_ids: bool) -> GuiAbstraction {
    let mut lines = Vec::with_capacity(p.groups.len() + p.component_count());
    let mut next_id = 1u32;
    let group_order = reading_order(&p.groups, |g: &LayoutGroup| (g.bounds.top, g.bounds.left));
    for gi in group_order {
        let group = &p.groups[gi];
        lines.push(AbstractionLine {
            kind: LineKind::GroupHeader,
            text: format!("- {}:", group.name),
            component_id: None,
            origin: None,
        });
        let comp_order = reading_order(&group.components, |c: &GuiComponent| {
            (c.bounds.top, c.bounds.left)
        });
        for ci in comp_order {
            let body = component_line(&group.components[ci]);
            let (text, component_id) = if with_ids {
                let id = next_id;
                next_id += 1;
                (format!("  - [{id}] {body}"), Some(id))
            } else {
                (format!("  - {body}"), None)
            };
            lines.push(AbstractionLine {
                kind: LineKind::ComponentLine,
                text,
                component_id,
                origin: Some((gi, ci)),
            });
        }
    }
    let rendered = lines.iter().fold(String::new(), |mut acc, l| {
        acc.push_str(&l.text);
        acc.push('\n');
        acc
    });
    GuiAbstraction {
        gui_id: p.gui_id.clone(),
        lines,
        with_ids,
        rendered,
    }
}

/// Removes `[<id>] ` prefixes from an ID-annotated rendering.
pub fn strip_ids(rendered: &str) -> String {
    rendered
        .lines()
        .map(|line| match line.strip_prefix("  - [") {
            Some(rest) => match rest.split_once("] ") {
                Some((id, body)) if id.chars().all(|c| c.is_ascii_digit()) => {
                    format!("  - {body}\n")
                }
                _ => format!("{line}\n"),
            },
            None => format!("{line}\n"),
        })
        .collect()
}

/// Drops the components whose IDs in `id_basis` are listed in `victim_ids`.
/// Groups left empty are dropped entirely.
pub fn remove_components(
    p: &GuiPrototype,
    victim_ids: &BTreeSet<u32>,
    id_basis: &GuiAbstraction,
) -> Result<GuiPrototype, AbstractionError> {
    if id_basis.gui_id != p.gui_id {
        return Err(AbstractionError::BasisMismatch {
            basis: id_basis.gui_id.clone(),
            proto: p.gui_id.clone(),
        });
    }
    if !id_basis.with_ids {
        return Err(AbstractionError::BasisWithoutIds);
    }
    let mut doomed = BTreeSet::new();
    for &id in victim_ids {
        let origin = id_basis
            .lines
            .iter()
            .find(|l| l.component_id == Some(id))
            .and_then(|l| l.origin)
            .ok_or(AbstractionError::UnknownId(id))?;
        doomed.insert(origin);
    }
    let groups = p
        .groups
        .iter()
        .enumerate()
        .filter_map(|(gi, g)| {
            let components: Vec<_> = g
                .components
                .iter()
                .enumerate()
                .filter(|(ci, _)| !doomed.contains(&(gi, *ci)))
                .map(|(_, c)| c.clone())
                .collect();
            (!components.is_empty()).then(|| LayoutGroup {
                name: g.name.clone(),
                bounds: g.bounds,
                components,
            })
        })
        .collect();
    Ok(GuiPrototype {
        gui_id: p.gui_id.clone(),
        domain: p.domain.clone(),
        screen: p.screen,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Bounds, ComponentType};

    fn comp(text: &str, t: ComponentType, name: &str, top: i64, left: i64) -> GuiComponent {
        GuiComponent::new(text, t, name, Bounds::new(left, top, left + 10, top + 10))
    }

    fn group(name: &str, top: i64, left: i64, components: Vec<GuiComponent>) -> LayoutGroup {
        LayoutGroup {
            name: name.into(),
            bounds: Bounds::new(left, top, 1000, 1000),
            components,
        }
    }

    fn proto(groups: Vec<LayoutGroup>) -> GuiPrototype {
        GuiPrototype {
            gui_id: "g".into(),
            domain: String::new(),
            screen: Bounds::new(0, 0, 1000, 1000),
            groups,
        }
    }

    #[test]
    fn reference_component_lines() {
        let cases = [
            (
                comp("+7.10", ComponentType::Label, "price Change TV", 0, 0),
                r#""+7.10" (Label) (price Change TV)"#,
            ),
            (
                comp("Install App", ComponentType::Button, "native Ad Call To", 0, 0),
                r#""Install App" (Button) (native Ad Call To)"#,
            ),
            (
                comp("Example: 'New York'", ComponentType::TextInput, "location", 0, 0),
                r#""Example: 'New York'" (Text Input) (location)"#,
            ),
            (
                comp("check", ComponentType::Icon, "done", 0, 0),
                r#""check" (Icon) (done)"#,
            ),
            (comp("", ComponentType::Checkbox, "", 0, 0), r#""" (Checkbox) ()"#),
        ];
        for (c, want) in cases {
            assert_eq!(component_line(&c), want);
        }
    }

    #[test]
    fn quotes_are_doubled() {
        let c = comp(r#"say "hi""#, ComponentType::Label, "", 0, 0);
        assert_eq!(component_line(&c), r#""say ""hi""" (Label) ()"#);
    }

    #[test]
    fn groups_ordered_by_top() {
        let p = proto(vec![
            group("Lower", 10, 0, vec![comp("a", ComponentType::Label, "", 10, 0)]),
            group("Upper", 5, 0, vec![comp("b", ComponentType::Label, "", 5, 0)]),
        ]);
        let a = abstract_gui(&p, false);
        assert_eq!(a.lines[0].text, "- Upper:");
        assert_eq!(a.rendered, "- Upper:\n  - \"b\" (Label) ()\n- Lower:\n  - \"a\" (Label) ()\n");
    }

    #[test]
    fn top_tie_broken_by_left() {
        let p = proto(vec![group(
            "G",
            0,
            0,
            vec![
                comp("right", ComponentType::Label, "", 5, 300),
                comp("left", ComponentType::Label, "", 5, 10),
            ],
        )]);
        let a = abstract_gui(&p, true);
        assert_eq!(a.lines[1].text, r#"  - [1] "left" (Label) ()"#);
        assert_eq!(a.lines[2].text, r#"  - [2] "right" (Label) ()"#);
    }

    #[test]
    fn strip_ids_matches_plain() {
        let p = proto(vec![group(
            "G",
            0,
            0,
            vec![
                comp("[3] tricky", ComponentType::Label, "x", 0, 0),
                comp("b", ComponentType::Button, "y", 5, 0),
            ],
        )]);
        assert_eq!(
            strip_ids(&abstract_gui(&p, true).rendered),
            abstract_gui(&p, false).rendered
        );
    }

    #[test]
    fn remove_everything_yields_no_groups() {
        let p = proto(vec![
            group("A", 0, 0, vec![comp("a", ComponentType::Label, "", 0, 0)]),
            group("B", 50, 0, vec![comp("b", ComponentType::Label, "", 50, 0)]),
        ]);
        let basis = abstract_gui(&p, true);
        let out = remove_components(&p, &basis.component_ids(), &basis).unwrap();
        assert!(out.groups.is_empty());
    }

    #[test]
    fn unknown_victim_rejected() {
        let p = proto(vec![group("A", 0, 0, vec![comp("a", ComponentType::Label, "", 0, 0)])]);
        let basis = abstract_gui(&p, true);
        let err = remove_components(&p, &BTreeSet::from([7]), &basis).unwrap_err();
        assert_eq!(err, AbstractionError::UnknownId(7));
    }

    #[test]
    fn two_labels_and_a_checkbox() {
        // Settings screen: a story annotated over two labels and a checkbox.
        let p = proto(vec![
            group(
                "Toolbar",
                0,
                0,
                vec![
                    comp("Settings", ComponentType::Label, "title", 0, 0),
                    comp("check", ComponentType::Icon, "done", 0, 900),
                ],
            ),
            group(
                "List Item",
                100,
                0,
                vec![
                    comp("Mark days complete", ComponentType::Label, "pref title", 100, 0),
                    comp("Tap a day to mark it", ComponentType::Label, "pref summary", 130, 0),
                    comp("", ComponentType::Checkbox, "pref checkbox", 100, 900),
                ],
            ),
            group(
                "List Item",
                200,
                0,
                vec![comp("Units", ComponentType::Label, "pref title", 200, 0)],
            ),
        ]);
        let basis = abstract_gui(&p, true);
        let victims = BTreeSet::from([3, 4, 5]);
        let out = remove_components(&p, &victims, &basis).unwrap();
        let before = abstract_gui(&p, false);
        let after = abstract_gui(&out, false);
        let expected: Vec<&str> = before
            .lines
            .iter()
            .enumerate()
            // line 3 is the emptied group header, lines 4..=6 the victims
            .filter(|(i, _)| !(3..=6).contains(i))
            .map(|(_, l)| l.text.as_str())
            .collect();
        let got: Vec<&str> = after.lines.iter().map(|l| l.text.as_str()).collect();
        assert_eq!(got, expected);
    }
}
