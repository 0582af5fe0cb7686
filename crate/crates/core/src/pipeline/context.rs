//! Minimal dialogue memory: ordered user/agent/tool turns with group-wise
//! eviction.

use serde::{Deserialize, Serialize};

use super::tools::ToolResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Agent,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextTurn {
    pub role: Role,
    pub text: String,
    #[serde(default)]
    pub interrupted: bool,
}

impl ContextTurn {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            text: text.into(),
            interrupted: false,
        }
    }

    /// Text as shown to a language model.
    pub fn render(&self) -> String {
        if self.interrupted {
            format!("{} (interrupted)", self.text)
        } else {
            self.text.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueContext {
    pub turns: Vec<ContextTurn>,
    pub max_turns: usize,
}

impl Default for DialogueContext {
    fn default() -> Self {
        Self::new(20)
    }
}

impl DialogueContext {
    pub fn new(max_turns: usize) -> Self {
        Self {
            turns: Vec::new(),
            max_turns,
        }
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    /// Appends one exchange and trims. Nothing is recorded for an empty
    /// user text; an absent or empty agent reply records the user side only.
    pub fn record_exchange(&mut self, user: &str, tool: Option<&ToolResult>, agent: Option<(&str, bool)>) {
        let user = user.trim();
        if user.is_empty() {
            return;
        }
        self.turns.push(ContextTurn::new(Role::User, user));
        if let Some(t) = tool {
            self.turns.push(ContextTurn::new(Role::Tool, t.content.clone()));
        }
        if let Some((text, interrupted)) = agent {
            let text = text.trim();
            if !text.is_empty() {
                self.turns.push(ContextTurn {
                    role: Role::Agent,
                    text: text.to_string(),
                    interrupted,
                });
            }
        }
        *self = trim_context(std::mem::take(self));
    }
}

/// Drops whole groups (a user turn plus the tool and agent turns that follow
/// it) from the front until at most `max_turns` remain.
pub fn trim_context(mut ctx: DialogueContext) -> DialogueContext {
    while ctx.turns.len() > ctx.max_turns {
        let group_end = ctx.turns[1..]
            .iter()
            .position(|t| t.role == Role::User)
            .map_or(ctx.turns.len(), |p| p + 1);
        ctx.turns.drain(..group_end);
    }
    ctx
}
