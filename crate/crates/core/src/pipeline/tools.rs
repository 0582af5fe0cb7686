//! Keyword-routed tool calls and injection of their results into the
//! model prompt.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::PipelineError;

/// Prefix placed before injected tool output.
pub const TOOL_PREFIX: &str = "You may refer to the following content:";
/// Chinese variant of [`TOOL_PREFIX`].
pub const TOOL_PREFIX_ZH: &str = "你可以参考以下内容：";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResult {
    pub tool_name: String,
    pub content: String,
}

impl ToolResult {
    pub fn new(tool_name: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            tool_name: tool_name.into(),
            content: content.into(),
        }
    }
}

/// Renders `result` as a prompt block under the default prefix.
pub fn inject_tool_result(result: &ToolResult) -> Result<String, PipelineError> {
    inject_tool_result_with(TOOL_PREFIX, result)
}

pub fn inject_tool_result_with(prefix: &str, result: &ToolResult) -> Result<String, PipelineError> {
    if result.content.trim().is_empty() {
        return Err(PipelineError::EmptyToolContent(result.tool_name.clone()));
    }
    Ok(format!("{prefix}\n{}", result.content))
}

/// Renders several results, separated by blank lines.
pub fn inject_tool_results(results: &[ToolResult]) -> Result<String, PipelineError> {
    let blocks = results.iter().map(inject_tool_result).collect::<Result<Vec<_>, _>>()?;
    Ok(blocks.join("\n\n"))
}

/// Executes a tool call.
#[async_trait]
pub trait ToolExecutor: Send + Sync {
    async fn call(&self, query: &str) -> Result<String, PipelineError>;
}

/// A tool that answers with fixed content after a fixed delay.
#[derive(Debug, Clone)]
pub struct StaticTool {
    pub content: String,
    pub delay: Duration,
}

#[async_trait]
impl ToolExecutor for StaticTool {
    async fn call(&self, _query: &str) -> Result<String, PipelineError> {
        tokio::time::sleep(self.delay).await;
        Ok(self.content.clone())
    }
}

/// `POST {"query": ...}` to an endpoint answering `{"content": ...}`.
#[derive(Debug, Clone)]
pub struct HttpTool {
    client: reqwest::Client,
    endpoint: String,
}

impl HttpTool {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            client: reqwest::Client::new(),
            endpoint: endpoint.into(),
        }
    }
}

#[derive(Deserialize)]
struct HttpToolReply {
    content: String,
}

#[async_trait]
impl ToolExecutor for HttpTool {
    async fn call(&self, query: &str) -> Result<String, PipelineError> {
        let reply: HttpToolReply = self
            .client
            .post(&self.endpoint)
            .json(&serde_json::json!({ "query": query }))
            .send()
            .await
            .and_then(reqwest::Response::error_for_status)
            .map_err(|e| PipelineError::component("tool", e))?
            .json()
            .await
            .map_err(|e| PipelineError::component("tool", e))?;
        Ok(reply.content)
    }
}

#[derive(Clone)]
pub struct Tool {
    pub name: String,
    pub pattern: Regex,
    pub deadline: Duration,
    pub executor: Arc<dyn ToolExecutor>,
}

impl std::fmt::Debug for Tool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tool")
            .field("name", &self.name)
            .field("pattern", &self.pattern.as_str())
            .field("deadline", &self.deadline)
            .finish()
    }
}

/// Ordered tool table; the first matching pattern wins.
#[derive(Debug, Clone, Default)]
pub struct ToolRegistry {
    tools: Vec<Tool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolCall {
    pub tool: String,
    pub query: String,
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tool; `pattern` is matched case-insensitively.
    pub fn register(
        &mut self,
        name: impl Into<String>,
        pattern: &str,
        deadline: Duration,
        executor: Arc<dyn ToolExecutor>,
    ) -> Result<(), regex::Error> {
        let pattern = Regex::new(&format!("(?i){pattern}"))?;
        self.tools.push(Tool {
            name: name.into(),
            pattern,
            deadline,
            executor,
        });
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tool> {
        self.tools.iter().find(|t| t.name == name)
    }

    /// Calls the tool, honouring its deadline.
    pub async fn execute(&self, call: &ToolCall) -> Result<ToolResult, PipelineError> {
        let tool = self
            .get(&call.tool)
            .ok_or_else(|| PipelineError::component("tool", format!("unknown tool {}", call.tool)))?;
        let content = tokio::time::timeout(tool.deadline, tool.executor.call(&call.query))
            .await
            .map_err(|_| PipelineError::ToolTimeout(tool.name.clone()))??;
        Ok(ToolResult::new(&tool.name, content))
    }
}

/// Picks at most one tool for `user_text`.
pub fn decide_tool(user_text: &str, registry: &ToolRegistry) -> Option<ToolCall> {
    registry
        .tools
        .iter()
        .find(|t| t.pattern.is_match(user_text))
        .map(|t| ToolCall {
            tool: t.name.clone(),
            query: user_text.trim().to_string(),
        })
}
