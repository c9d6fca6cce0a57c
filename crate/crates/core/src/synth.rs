//! Deterministic synthetic prototypes and annotated stories, shaped like
//! a full annotated corpus (60 GUIs, 231 story/GUI pairs). Used for tests,
//! demos and the acceptance suite.

use crate::gold::{seeded_rng, shuffle, uniform_below, AnnotationPair};
use crate::model::{Bounds, ComponentType, GuiComponent, GuiPrototype, LayoutGroup, PrototypeStore};

const SCREEN_WIDTH: i64 = 1440;
const SCREEN_HEIGHT: i64 = 2560;
const ROW: i64 = 120;
const MAX_PAIRS_PER_GUI: usize = 8;
const DATA_STREAM: u64 = 7;
const RANDOM_STREAM: u64 = 8;
/// Seed of the bundled default dataset.
pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub guis: usize,
    pub pairs: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            guis: 60,
            pairs: 231,
        }
    }
}

impl SynthConfig {
    /// `pairs` is clamped to what `guis` GUIs can hold.
    pub fn small(guis: usize, pairs: usize) -> Self {
        SynthConfig { guis, pairs }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub store: PrototypeStore,
    pub pairs: Vec<AnnotationPair>,
}

struct Domain {
    name: &'static str,
    items: &'static str,
    item: &'static str,
    role: &'static str,
    choices: [&'static str; 2],
}

const DOMAINS: &[Domain] = &[
    Domain { name: "Shopping", items: "products", item: "Product", role: "shopper", choices: ["Electronics", "Clothing"] },
    Domain { name: "Travel", items: "trips", item: "Trip", role: "traveler", choices: ["Paris", "Rome"] },
    Domain { name: "Education", items: "courses", item: "Lesson", role: "student", choices: ["Beginner", "Advanced"] },
    Domain { name: "Health & Fitness", items: "workouts", item: "Workout", role: "athlete", choices: ["Cardio", "Strength"] },
    Domain { name: "Music & Audio", items: "songs", item: "Song", role: "listener", choices: ["Rock", "Jazz"] },
    Domain { name: "News & Magazines", items: "articles", item: "Article", role: "reader", choices: ["Politics", "Sports"] },
    Domain { name: "Food & Drink", items: "recipes", item: "Recipe", role: "home cook", choices: ["Vegan", "Desserts"] },
    Domain { name: "Finance", items: "transactions", item: "Transaction", role: "account holder", choices: ["Income", "Expenses"] },
];

type Spec = (&'static str, ComponentType, &'static str);

struct Feature {
    group: &'static str,
    components: fn(&Domain) -> Vec<(String, ComponentType, String)>,
    story: &'static str,
}

fn owned(specs: &[Spec]) -> Vec<(String, ComponentType, String)> {
    specs
        .iter()
        .map(|(t, c, n)| (t.to_string(), c.clone(), n.to_string()))
        .collect()
}

const FEATURES: &[Feature] = &[
    Feature {
        group: "Toolbar",
        components: |d| vec![
            (format!("Search {}", d.items), ComponentType::TextInput, "search src text".into()),
            ("search".into(), ComponentType::Icon, "search button".into()),
        ],
        story: "As a {role}, I want to search for {items} so that I can find them quickly.",
    },
    Feature {
        group: "Toolbar",
        components: |d| vec![
            ("Category".into(), ComponentType::Label, "filter label".into()),
            (d.choices[0].into(), ComponentType::DropDown, "category spinner".into()),
        ],
        story: "As a {role}, I want to filter {items} by category so that I only see relevant entries.",
    },
    Feature {
        group: "Card",
        components: |_| owned(&[
            ("Email", ComponentType::TextInput, "email input"),
            ("Password", ComponentType::TextInput, "password input"),
            ("Sign in", ComponentType::Button, "login button"),
        ]),
        story: "As a {role}, I want to sign in with my email and password so that I can access my account.",
    },
    Feature {
        group: "List Item",
        components: |_| owned(&[
            ("star border", ComponentType::Icon, "favorite icon"),
            ("Add to favorites", ComponentType::Label, "favorite label"),
        ]),
        story: "As a {role}, I want to mark {items} as favorites so that I can revisit them later.",
    },
    Feature {
        group: "List Item",
        components: |_| owned(&[
            ("Notifications", ComponentType::Label, "pref title"),
            ("", ComponentType::Switch, "notifications switch"),
        ]),
        story: "As a {role}, I want to turn notifications on or off so that I am not disturbed.",
    },
    Feature {
        group: "Button Bar",
        components: |_| owned(&[("Share", ComponentType::Button, "share button")]),
        story: "As a {role}, I want to share {items} with my friends so that they can see them too.",
    },
    Feature {
        group: "Card",
        components: |_| owned(&[
            ("Total: $0.00", ComponentType::Label, "cart total"),
            ("Checkout", ComponentType::Button, "checkout button"),
        ]),
        story: "As a {role}, I want to check out my selection so that I can pay for my order.",
    },
    Feature {
        group: "Toolbar",
        components: |_| owned(&[
            ("Sort by", ComponentType::Label, "sort label"),
            ("Newest", ComponentType::DropDown, "sort spinner"),
        ]),
        story: "As a {role}, I want to sort {items} by date so that I see the newest first.",
    },
    Feature {
        group: "Card",
        components: |_| owned(&[
            ("Rate this", ComponentType::Label, "rating title"),
            ("4.5", ComponentType::Other("Rating Bar".into()), "rating bar"),
            ("Submit", ComponentType::Button, "submit rating"),
        ]),
        story: "As a {role}, I want to rate {items} so that other users benefit from my opinion.",
    },
    Feature {
        group: "List Item",
        components: |_| owned(&[
            ("Dark mode", ComponentType::Label, "pref title"),
            ("", ComponentType::Checkbox, "dark mode checkbox"),
        ]),
        story: "As a {role}, I want to enable a dark theme so that the app is easier on my eyes at night.",
    },
    Feature {
        group: "List Item",
        components: |_| owned(&[
            ("Volume", ComponentType::Label, "volume label"),
            ("", ComponentType::Slider, "volume seekbar"),
        ]),
        story: "As a {role}, I want to adjust the volume so that sounds are not too loud.",
    },
    Feature {
        group: "Card",
        components: |_| owned(&[
            ("", ComponentType::Image, "profile image"),
            ("Change photo", ComponentType::Button, "change photo button"),
        ]),
        story: "As a {role}, I want to change my profile picture so that others recognize me.",
    },
    Feature {
        group: "Date Picker",
        components: |_| owned(&[
            ("Pick a date", ComponentType::Label, "date label"),
            ("Today", ComponentType::DropDown, "date spinner"),
        ]),
        story: "As a {role}, I want to pick a date so that I can plan ahead.",
    },
    Feature {
        group: "Card",
        components: |_| owned(&[
            ("Credit card", ComponentType::RadioButton, "card radio"),
            ("PayPal", ComponentType::RadioButton, "paypal radio"),
        ]),
        story: "As a {role}, I want to choose a payment method so that I can pay the way I prefer.",
    },
    Feature {
        group: "Card",
        components: |_| owned(&[
            ("Example: 'New York'", ComponentType::TextInput, "location"),
            ("my location", ComponentType::Icon, "locate button"),
        ]),
        story: "As a {role}, I want to enter my location so that I get results nearby.",
    },
    Feature {
        group: "List Item",
        components: |d| vec![
            (format!("{} 1", d.item), ComponentType::ListItemText, "item title".into()),
            (format!("{} 2", d.item), ComponentType::ListItemText, "item title".into()),
            (format!("{} 3", d.item), ComponentType::ListItemText, "item title".into()),
        ],
        story: "As a {role}, I want to see an overview of all {items} so that I know what is available.",
    },
];

fn story_text(template: &str, d: &Domain) -> String {
    template.replace("{role}", d.role).replace("{items}", d.items)
}

/// Builds `cfg.guis` prototypes and `cfg.pairs` annotated stories. Every
/// prototype has a title bar outside all annotations, so no gold set
/// covers a whole prototype.
pub fn dataset(cfg: &SynthConfig, seed: u64) -> SynthDataset {
    let mut rng = seeded_rng(seed, DATA_STREAM);
    let cap = MAX_PAIRS_PER_GUI.min(FEATURES.len());
    let pairs_total = cfg.pairs.min(cfg.guis * cap);
    // every GUI gets one story while stories last, the rest are spread at random
    let mut counts = vec![0usize; cfg.guis];
    for c in counts.iter_mut().take(pairs_total) {
        *c = 1;
    }
    let mut left = pairs_total.saturating_sub(cfg.guis);
    while left > 0 {
        let g = uniform_below(&mut rng, cfg.guis as u64) as usize;
        if counts[g] < cap {
            counts[g] += 1;
            left -= 1;
        }
    }
    let mut store = PrototypeStore::new();
    let mut pairs = Vec::with_capacity(pairs_total);
    for (gi, &count) in counts.iter().enumerate() {
        let domain = &DOMAINS[gi % DOMAINS.len()];
        let gui_id = format!("gui-{:03}", gi + 1);
        // distinct titles keep abstractions of different screens distinct
        let title = format!("{} {}", domain.name, gi / DOMAINS.len() + 1);
        let mut features: Vec<usize> = (0..FEATURES.len()).collect();
        shuffle(&mut rng, &mut features);
        let extra = uniform_below(&mut rng, 3) as usize;
        let shown = (count + extra).clamp(2, FEATURES.len());
        features.truncate(shown);

        let mut groups = vec![LayoutGroup {
            name: "Toolbar".into(),
            bounds: Bounds::new(0, 0, SCREEN_WIDTH, ROW),
            components: vec![
                GuiComponent::new("arrow back", ComponentType::Icon, "back", Bounds::new(0, 0, 160, ROW)),
                GuiComponent::new(&title, ComponentType::Label, "title", Bounds::new(200, 0, 900, ROW)),
            ],
        }];
        let mut y = ROW;
        let mut layout = Vec::new();
        for &f in &features {
            let feature = &FEATURES[f];
            let specs = (feature.components)(domain);
            let top = y;
            let comps: Vec<GuiComponent> = specs
                .into_iter()
                .enumerate()
                .map(|(i, (text, ctype, name))| {
                    let row_top = top + i as i64 * ROW;
                    GuiComponent::new(&text, ctype, &name, Bounds::new(40, row_top, SCREEN_WIDTH - 40, row_top + ROW))
                })
                .collect();
            y = top + comps.len() as i64 * ROW;
            layout.push((f, groups.len(), comps.len()));
            groups.push(LayoutGroup {
                name: feature.group.into(),
                bounds: Bounds::new(0, top, SCREEN_WIDTH, y),
                components: comps,
            });
        }
        let mut proto = GuiPrototype {
            gui_id: gui_id.clone(),
            domain: domain.name.into(),
            screen: Bounds::new(0, 0, SCREEN_WIDTH, y.max(SCREEN_HEIGHT)),
            groups,
        };
        proto.assign_ids();
        for &(f, group, _) in layout.iter().take(count) {
            let gold = proto.groups[group].components.iter().map(|c| c.id);
            let us_id = format!("US{:03}", pairs.len() + 1);
            pairs.push(AnnotationPair::new(
                &us_id,
                &gui_id,
                &story_text(FEATURES[f].story, domain),
                gold,
            ));
        }
        store.insert(proto).expect("unique generated ids");
    }
    SynthDataset { store, pairs }
}

/// Feature stories not shown on `proto`, phrased for its domain; handy
/// negatives for demos.
pub fn missing_stories(proto: &GuiPrototype) -> Vec<String> {
    let Some(domain) = DOMAINS.iter().find(|d| d.name == proto.domain) else {
        return Vec::new();
    };
    FEATURES
        .iter()
        .filter(|f| {
            let specs = (f.components)(domain);
            !specs
                .iter()
                .all(|(_, _, name)| proto.components().any(|c| &c.name == name))
        })
        .map(|f| story_text(f.story, domain))
        .collect()
}

const RANDOM_TEXTS: [&str; 10] = [
    "", "OK", "Save", "say \"hi\"", "Example: 'New York'", "+7.10", "arrow back", "Ünïcödé", "a, b", "[3] not an id",
];
const RANDOM_TYPES: [&str; 13] = [
    "Label", "Button", "Text Input", "Checkbox", "Radio Button", "Icon", "Image", "Switch", "Slider",
    "Drop Down", "List Item Text", "Web View", "Map View",
];

/// A random valid prototype with 1..=6 groups of 1..=8 components on a
/// coarse grid, so that equal tops and lefts occur often.
pub fn random_prototype(seed: u64) -> GuiPrototype {
    let mut rng = seeded_rng(seed, RANDOM_STREAM);
    let mut below = |n: u64| uniform_below(&mut rng, n) as i64;
    let n_groups = 1 + below(6) as usize;
    let mut groups = Vec::with_capacity(n_groups);
    for g in 0..n_groups {
        let top = below(8) * 200;
        let left = below(3) * 400;
        let n_comps = 1 + below(8) as usize;
        let components = (0..n_comps)
            .map(|_| {
                let ct = top + below(4) * 40;
                let cl = left + below(3) * 100;
                let text = RANDOM_TEXTS[below(RANDOM_TEXTS.len() as u64) as usize];
                let ctype = RANDOM_TYPES[below(RANDOM_TYPES.len() as u64) as usize]
                    .parse::<ComponentType>()
                    .expect("known type names parse");
                let mut name = if below(4) == 0 { String::new() } else { format!("res {}", below(50)) };
                if ctype.is_other() && text.is_empty() && name.is_empty() {
                    name = "view".into();
                }
                GuiComponent::new(text, ctype, &name, Bounds::new(cl, ct, cl + 90, ct + 40))
            })
            .collect();
        groups.push(LayoutGroup {
            name: format!("Group {g}"),
            bounds: Bounds::new(left, top, left + 400, top + 200),
            components,
        });
    }
    GuiPrototype {
        gui_id: format!("random-{seed}"),
        domain: String::new(),
        screen: Bounds::new(0, 0, SCREEN_WIDTH, SCREEN_HEIGHT),
        groups,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape() {
        let d = dataset(&SynthConfig::default(), DEFAULT_SEED);
        assert_eq!(d.store.len(), 60);
        assert_eq!(d.pairs.len(), 231);
        for p in &d.pairs {
            p.validate(&d.store).unwrap();
            let proto = d.store.get(&p.gui_id).unwrap();
            assert!(p.gold_component_ids.len() < proto.component_count());
        }
        for proto in d.store.iter() {
            proto.validate().unwrap();
        }
    }

    #[test]
    fn random_prototypes_validate() {
        for seed in 0..50 {
            let p = random_prototype(seed);
            p.validate().unwrap();
            assert_eq!(p, random_prototype(seed));
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(dataset(&SynthConfig::small(4, 9), 3), dataset(&SynthConfig::small(4, 9), 3));
    }

    #[test]
    fn missing_stories_exclude_present_features() {
        let d = dataset(&SynthConfig::small(1, 1), 3);
        let proto = d.store.iter().next().unwrap();
        let missing = missing_stories(proto);
        assert!(!missing.is_empty());
        assert!(!missing.contains(&d.pairs[0].story.text));
    }
}
