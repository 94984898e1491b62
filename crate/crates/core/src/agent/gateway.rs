//! Backend that drives a model through an OpenAI-compatible chat-completions
//! gateway, executing its tool calls inside the task workspace.

use std::env;
use std::process::Command;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::trace::{CommandEvent, MarkerEvent, MarkerKind, TraceFragment, TurnRecord};
use super::{AgentBackend, BackendError, TaskContext};

pub const GATEWAY_URL_ENV: &str = "RAMP_GATEWAY_URL";
pub const GATEWAY_KEY_ENV: &str = "RAMP_GATEWAY_KEY";

const MAX_TOOL_OUTPUT: usize = 4000;

const SYSTEM_PROMPT: &str = "You are a software engineer working inside a repository. \
Use the run_command tool to inspect files, edit code, build, and run tests. \
Call finish when the task is complete, or skip_task if you decide not to complete it.";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ChatMessage {
    role: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tool_calls: Option<Vec<ToolCall>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tool_call_id: Option<String>,
}

impl ChatMessage {
    fn text(role: &str, content: impl Into<String>) -> Self {
        Self {
            role: role.into(),
            content: Some(content.into()),
            tool_calls: None,
            tool_call_id: None,
        }
    }

    fn tool_result(call_id: &str, content: impl Into<String>) -> Self {
        Self {
            role: "tool".into(),
            content: Some(content.into()),
            tool_calls: None,
            tool_call_id: Some(call_id.into()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ToolCall {
    id: String,
    #[serde(rename = "type", default = "function_type")]
    kind: String,
    function: FunctionCall,
}

fn function_type() -> String {
    "function".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FunctionCall {
    name: String,
    #[serde(default)]
    arguments: String,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ChatMessage,
}

#[derive(Debug, Default, Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

fn tool_definitions() -> Value {
    json!([
        {
            "type": "function",
            "function": {
                "name": "run_command",
                "description": "Run a shell command in the repository root and return its output.",
                "parameters": {
                    "type": "object",
                    "properties": {"command": {"type": "string"}},
                    "required": ["command"]
                }
            }
        },
        {
            "type": "function",
            "function": {
                "name": "finish",
                "description": "Declare the current task complete.",
                "parameters": {"type": "object", "properties": {"summary": {"type": "string"}}}
            }
        },
        {
            "type": "function",
            "function": {
                "name": "skip_task",
                "description": "Stop working on the current task without completing it.",
                "parameters": {"type": "object", "properties": {"reason": {"type": "string"}}}
            }
        }
    ])
}

fn looks_like_context_overflow(body: &str) -> bool {
    let lower = body.to_ascii_lowercase();
    lower.contains("context_length")
        || lower.contains("maximum context")
        || lower.contains("context window")
}

fn tail(text: &str, limit: usize) -> &str {
    if text.len() <= limit {
        return text;
    }
    let mut start = text.len() - limit;
    while !text.is_char_boundary(start) {
        start += 1;
    }
    &text[start..]
}

pub struct GatewayBackend {
    base_url: String,
    api_key: Option<String>,
    model: String,
    client: reqwest::blocking::Client,
}

impl GatewayBackend {
    pub fn new(
        base_url: impl Into<String>,
        api_key: Option<String>,
        model: impl Into<String>,
    ) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .connect_timeout(Duration::from_secs(10))
            .timeout(Duration::from_secs(600))
            .build()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            model: model.into(),
            client,
        })
    }

    /// Reads the gateway location from `RAMP_GATEWAY_URL` and the optional
    /// key from `RAMP_GATEWAY_KEY`.
    pub fn from_env(model: impl Into<String>) -> Result<Self, BackendError> {
        let url = env::var(GATEWAY_URL_ENV)
            .map_err(|_| BackendError::Unavailable(format!("{GATEWAY_URL_ENV} is not set")))?;
        Self::new(url, env::var(GATEWAY_KEY_ENV).ok(), model)
    }

    fn task_prompt(ctx: &TaskContext) -> String {
        format!(
            "Repository: {}\nCurrent task: {} (task {}).\n\
             Complete the task so that its tests pass. Earlier stages of the pipeline \
             have already been worked on; their outputs are in the repository.",
            ctx.workspace.display(),
            ctx.task_name,
            ctx.task_id
        )
    }

    fn complete(
        &self,
        messages: &[ChatMessage],
    ) -> Result<Result<ChatResponse, String>, BackendError> {
        let mut request = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .json(&json!({
                "model": self.model,
                "messages": messages,
                "tools": tool_definitions(),
                "tool_choice": "auto",
            }));
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let status = response.status();
        let body = response
            .text()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        if status.is_success() {
            serde_json::from_str(&body)
                .map(Ok)
                .map_err(|e| BackendError::Protocol(format!("bad completion body: {e}")))
        } else if status.is_client_error() && looks_like_context_overflow(&body) {
            Ok(Err(body))
        } else {
            Err(BackendError::Unavailable(format!(
                "gateway returned {status}: {}",
                tail(&body, 200)
            )))
        }
    }
}

fn run_shell(command: &str, ctx: &TaskContext) -> (CommandEvent, String) {
    let started = Instant::now();
    let output = Command::new("sh")
        .arg("-c")
        .arg(command)
        .current_dir(&ctx.workspace)
        .output();
    let duration = started.elapsed().as_secs_f64();
    match output {
        Ok(out) => {
            let exit_code = out.status.code().unwrap_or(-1);
            let mut text = String::from_utf8_lossy(&out.stdout).into_owned();
            text.push_str(&String::from_utf8_lossy(&out.stderr));
            let shown = format!("exit code {exit_code}\n{}", tail(&text, MAX_TOOL_OUTPUT));
            (
                CommandEvent {
                    command_line: command.to_string(),
                    exit_code,
                    duration,
                },
                shown,
            )
        }
        Err(e) => (
            CommandEvent {
                command_line: command.to_string(),
                exit_code: -1,
                duration,
            },
            format!("failed to start command: {e}"),
        ),
    }
}

impl AgentBackend for GatewayBackend {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn attempt(&mut self, ctx: &TaskContext) -> Result<TraceFragment, BackendError> {
        let mut messages = vec![
            ChatMessage::text("system", SYSTEM_PROMPT),
            ChatMessage::text("user", Self::task_prompt(ctx)),
        ];
        let mut fragment = TraceFragment::new(ctx.task_id);
        loop {
            if fragment.turns.len() >= ctx.remaining_budget {
                fragment.truncated = true;
                break;
            }
            let started = Instant::now();
            let index = fragment.turns.len();
            let response = match self.complete(&messages)? {
                Ok(response) => response,
                Err(body) => {
                    let mut turn = TurnRecord::empty(index);
                    turn.wall_time = started.elapsed().as_secs_f64();
                    turn.markers.push(MarkerEvent::new(
                        MarkerKind::ContextOverflow,
                        ctx.task_id,
                        tail(&body, 200).to_string(),
                    ));
                    fragment.turns.push(turn);
                    break;
                }
            };
            let usage = response.usage.unwrap_or_default();
            let message = response
                .choices
                .into_iter()
                .next()
                .map(|c| c.message)
                .ok_or_else(|| BackendError::Protocol("completion without choices".into()))?;
            let mut turn = TurnRecord {
                tokens_in: usage.prompt_tokens,
                tokens_out: usage.completion_tokens,
                ..TurnRecord::empty(index)
            };
            let calls = message.tool_calls.clone().unwrap_or_default();
            messages.push(message);
            let mut done = calls.is_empty();
            for call in calls {
                let args: Result<Value, _> = if call.function.arguments.trim().is_empty() {
                    Ok(json!({}))
                } else {
                    serde_json::from_str(&call.function.arguments)
                };
                let reply = match (call.function.name.as_str(), args) {
                    ("run_command", Ok(args)) => {
                        match args.get("command").and_then(Value::as_str) {
                            Some(command) => {
                                let (event, shown) = run_shell(command, ctx);
                                turn.commands.push(event);
                                shown
                            }
                            None => {
                                turn.markers.push(MarkerEvent::new(
                                    MarkerKind::ToolError,
                                    ctx.task_id,
                                    "run_command without a command",
                                ));
                                "error: missing 'command' argument".to_string()
                            }
                        }
                    }
                    ("finish", Ok(_)) => {
                        done = true;
                        "ok".to_string()
                    }
                    ("skip_task", Ok(args)) => {
                        done = true;
                        let reason = args
                            .get("reason")
                            .and_then(Value::as_str)
                            .unwrap_or("")
                            .to_string();
                        turn.markers.push(MarkerEvent::new(
                            MarkerKind::SkipDecision,
                            ctx.task_id,
                            reason,
                        ));
                        "ok".to_string()
                    }
                    (name, args) => {
                        let detail = match args {
                            Err(e) => format!("bad arguments for {name}: {e}"),
                            Ok(_) => format!("unknown tool {name}"),
                        };
                        turn.markers.push(MarkerEvent::new(
                            MarkerKind::ToolError,
                            ctx.task_id,
                            detail.clone(),
                        ));
                        format!("error: {detail}")
                    }
                };
                messages.push(ChatMessage::tool_result(&call.id, reply));
            }
            turn.wall_time = started.elapsed().as_secs_f64();
            fragment.turns.push(turn);
            if done {
                break;
            }
        }
        Ok(fragment)
    }
}
