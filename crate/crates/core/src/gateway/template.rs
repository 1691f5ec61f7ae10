//! Plain-text templates with `{name}` placeholders. `{{` and `}}` are
//! literal braces.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Placeholder(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Template {
    id: String,
    segments: Vec<Segment>,
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

impl Template {
    pub fn new(id: &str, text: &str) -> Result<Self> {
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut chars = text.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '{' if chars.peek() == Some(&'{') => {
                    chars.next();
                    literal.push('{');
                }
                '}' if chars.peek() == Some(&'}') => {
                    chars.next();
                    literal.push('}');
                }
                '{' => {
                    let mut name = String::new();
                    loop {
                        match chars.next() {
                            Some('}') => break,
                            Some(ch) if is_name_char(ch) => name.push(ch),
                            _ => {
                                return Err(invalid(format!(
                                    "template {id}: malformed placeholder after '{{{name}'"
                                )))
                            }
                        }
                    }
                    if name.is_empty() {
                        return Err(invalid(format!("template {id}: empty placeholder")));
                    }
                    if !literal.is_empty() {
                        segments.push(Segment::Literal(core::mem::take(&mut literal)));
                    }
                    segments.push(Segment::Placeholder(name));
                }
                '}' => return Err(invalid(format!("template {id}: unmatched '}}'"))),
                other => literal.push(other),
            }
        }
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        Ok(Self {
            id: id.to_string(),
            segments,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn placeholders(&self) -> BTreeSet<&str> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Placeholder(n) => Some(n.as_str()),
                Segment::Literal(_) => None,
            })
            .collect()
    }

    /// Substitute every placeholder. Extra bindings are ignored; a missing
    /// one is an error.
    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<String> {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Literal(l) => out.push_str(l),
                Segment::Placeholder(name) => match bindings.get(name) {
                    Some(v) => out.push_str(v),
                    None => {
                        return Err(invalid(format!(
                            "template {}: placeholder {{{name}}} is unbound",
                            self.id
                        )))
                    }
                },
            }
        }
        Ok(out)
    }
}

pub mod ids {
    pub const FUSE: &str = "fuse";
    pub const APPLY: &str = "apply";
    pub const PARAPHRASE: &str = "paraphrase";
    pub const TASK: &str = "task";
    pub const GRADIENT_PREFIX: &str = "gradient_";
}

const BUILTIN: &[(&str, &str)] = &[
    ("gradient_clarity", include_str!("../../templates/gradient_clarity.txt")),
    (
        "gradient_examples",
        include_str!("../../templates/gradient_examples.txt"),
    ),
    ("gradient_format", include_str!("../../templates/gradient_format.txt")),
    ("gradient_style", include_str!("../../templates/gradient_style.txt")),
    (ids::FUSE, include_str!("../../templates/fuse.txt")),
    (ids::APPLY, include_str!("../../templates/apply.txt")),
    (ids::PARAPHRASE, include_str!("../../templates/paraphrase.txt")),
    (ids::TASK, include_str!("../../templates/task.txt")),
];

/// Templates by id.
#[derive(Clone, Debug, Default)]
pub struct TemplateSet {
    templates: BTreeMap<String, Template>,
}

impl TemplateSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The templates compiled into the crate.
    pub fn builtin() -> Self {
        let mut set = Self::empty();
        for (id, text) in BUILTIN {
            set.insert(Template::new(id, text).expect("builtin templates parse"));
        }
        set
    }

    pub fn builtin_sources() -> impl Iterator<Item = (&'static str, &'static str)> {
        BUILTIN.iter().copied()
    }

    pub fn insert(&mut self, template: Template) -> Option<Template> {
        self.templates.insert(template.id.clone(), template)
    }

    pub fn get(&self, id: &str) -> Option<&Template> {
        self.templates.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}
