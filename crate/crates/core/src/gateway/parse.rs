//! The fenced gradient protocol.
//!
//! Every gradient, fusion, and probe template instructs the model to answer
//! with blocks of the form
//!
//! ```text
//! <<<GRADIENT>>>
//! reason: ...
//! edit: ...
//! <<<END>>>
//! ```
//!
//! Text outside the markers is ignored, so prose preambles are harmless.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BLOCK_OPEN: &str = "<<<GRADIENT>>>";
pub const BLOCK_CLOSE: &str = "<<<END>>>";

/// The prompt dimension an agent is responsible for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Clarity,
    Examples,
    Format,
    Style,
}

impl AgentRole {
    pub const ALL: [AgentRole; 4] = [
        AgentRole::Clarity,
        AgentRole::Examples,
        AgentRole::Format,
        AgentRole::Style,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Clarity => "clarity",
            AgentRole::Examples => "examples",
            AgentRole::Format => "format",
            AgentRole::Style => "style",
        }
    }

    pub fn template_id(self) -> &'static str {
        match self {
            AgentRole::Clarity => "gradient_clarity",
            AgentRole::Examples => "gradient_examples",
            AgentRole::Format => "gradient_format",
            AgentRole::Style => "gradient_style",
        }
    }

    pub fn from_template_id(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.template_id() == id)
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(name.trim()))
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One atomic improvement direction.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GradientBlock {
    pub agent_role: AgentRole,
    pub reason: String,
    pub suggested_edit: String,
    pub raw_source: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedBlocks {
    pub blocks: Vec<GradientBlock>,
    /// Malformed or unterminated blocks that were skipped.
    pub warnings: usize,
    /// Well-formed blocks dropped by the block cap.
    pub truncated: usize,
}

#[derive(Clone, Copy)]
enum Field {
    Reason,
    Edit,
}

fn strip_label<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let trimmed = line.trim_start();
    let head = trimmed.get(..label.len())?;
    head.eq_ignore_ascii_case(label).then(|| &trimmed[label.len()..])
}

fn parse_body(body: &str, role: AgentRole) -> Option<GradientBlock> {
    let mut reason = String::new();
    let mut edit = String::new();
    let mut field = None;
    for line in body.lines() {
        let (target, text) = if let Some(rest) = strip_label(line, "reason:") {
            (Field::Reason, rest)
        } else if let Some(rest) = strip_label(line, "edit:") {
            (Field::Edit, rest)
        } else {
            match field {
                Some(f) => (f, line),
                None => continue,
            }
        };
        let buf = match target {
            Field::Reason => &mut reason,
            Field::Edit => &mut edit,
        };
        if field.is_some() && !buf.is_empty() {
            buf.push('\n');
        }
        buf.push_str(text.trim());
        field = Some(target);
    }
    let reason = reason.trim();
    let edit = edit.trim();
    if reason.is_empty() || edit.is_empty() {
        return None;
    }
    Some(GradientBlock {
        agent_role: role,
        reason: reason.to_string(),
        suggested_edit: edit.to_string(),
        raw_source: body.trim().to_string(),
    })
}

fn scan_blocks(raw: &str, role: AgentRole, max_blocks: usize) -> ParsedBlocks {
    let mut out = ParsedBlocks {
        blocks: Vec::new(),
        warnings: 0,
        truncated: 0,
    };
    let mut rest = raw;
    while let Some(start) = rest.find(BLOCK_OPEN) {
        let after = &rest[start + BLOCK_OPEN.len()..];
        let close = after.find(BLOCK_CLOSE);
        let reopen = after.find(BLOCK_OPEN);
        match (close, reopen) {
            (Some(c), o) if o.is_none_or(|o| c < o) => {
                match parse_body(&after[..c], role) {
                    Some(block) if out.blocks.len() < max_blocks => out.blocks.push(block),
                    Some(_) => out.truncated += 1,
                    None => out.warnings += 1,
                }
                rest = &after[c + BLOCK_CLOSE.len()..];
            }
            (_, o) => {
                // Unterminated: skip to the next opener, if any.
                out.warnings += 1;
                rest = o.map_or("", |o| &after[o..]);
            }
        }
    }
    out
}

/// Split a gradient response into at most `max_blocks` blocks attributed to
/// `role`. Fails only when nothing parseable is found.
pub fn parse_gradient_blocks(raw: &str, role: AgentRole, max_blocks: usize) -> Result<ParsedBlocks> {
    let parsed = scan_blocks(raw, role, max_blocks);
    if parsed.blocks.is_empty() && parsed.truncated == 0 {
        return Err(Error::EmptyGradient {
            warnings: parsed.warnings,
        });
    }
    Ok(parsed)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FusionParse {
    pub block: GradientBlock,
    pub warnings: usize,
}

/// Parse a fusion response. When several blocks are present the first wins
/// and a warning is recorded.
pub fn parse_fusion(raw: &str, dominant_role: AgentRole) -> Result<FusionParse> {
    let mut parsed = scan_blocks(raw, dominant_role, usize::MAX);
    if parsed.blocks.is_empty() {
        return Err(Error::FusionParse(alloc::format!(
            "no well-formed block ({} malformed)",
            parsed.warnings
        )));
    }
    let extra = parsed.blocks.len() - 1;
    let block = parsed.blocks.swap_remove(0);
    Ok(FusionParse {
        block,
        warnings: parsed.warnings + usize::from(extra > 0),
    })
}

/// Render a block in the wire format.
pub fn format_block(reason: &str, edit: &str) -> String {
    alloc::format!("{BLOCK_OPEN}\nreason: {reason}\nedit: {edit}\n{BLOCK_CLOSE}")
}
