//! HTTP chat-completion provider.
//!
//! Posts the task-tagged request as JSON with the rendered `prompt` and
//! `model` added, and expects `{"text": ...}` back (optionally with
//! `title` and `cited_chunks`).

use std::time::Duration;

use super::prompts::{self, PromptSet};
use super::{AssistantError, DiffOp, Provider, ProviderRequest, ProviderResponse};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug)]
pub struct RemoteProvider {
    endpoint: String,
    model: Option<String>,
    api_key: Option<String>,
    prompts: PromptSet,
    agent: ureq::Agent,
}

impl RemoteProvider {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            model: None,
            api_key: None,
            prompts: PromptSet::builtin(),
            agent,
        }
    }

    pub fn with_model(mut self, model: Option<String>) -> Self {
        self.model = model;
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_prompts(mut self, prompts: PromptSet) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn render_prompt(&self, request: &ProviderRequest) -> String {
        match request {
            ProviderRequest::ProposeEdit { document, messages } => prompts::render(
                &self.prompts.propose_edit,
                &[
                    ("document", &document.content),
                    ("messages", &prompts::format_messages(messages)),
                ],
            ),
            ProviderRequest::AnswerQuestion { question, chunks } => prompts::render(
                &self.prompts.answer_question,
                &[("question", question), ("chunks", &prompts::format_chunks(chunks))],
            ),
            ProviderRequest::SummarizeContext { records } => prompts::render(
                &self.prompts.summarize_context,
                &[("history", &prompts::format_history(records))],
            ),
            ProviderRequest::SummarizeChange { diff, .. } => {
                let mut rendered = String::new();
                for hunk in &diff.hunks {
                    let mark = match hunk.op {
                        DiffOp::Keep => ' ',
                        DiffOp::Delete => '-',
                        DiffOp::Insert => '+',
                    };
                    for line in &hunk.lines {
                        rendered.push(mark);
                        rendered.push_str(line.trim_end_matches('\n'));
                        rendered.push('\n');
                    }
                }
                prompts::render(&self.prompts.summarize_change, &[("document", &rendered)])
            }
        }
    }
}

impl Provider for RemoteProvider {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, AssistantError> {
        let unavailable = |e: String| AssistantError::ProviderUnavailable(e);
        let mut body = serde_json::to_value(request).map_err(|e| unavailable(e.to_string()))?;
        if let Some(obj) = body.as_object_mut() {
            obj.insert("prompt".into(), self.render_prompt(request).into());
            if let Some(model) = &self.model {
                obj.insert("model".into(), model.clone().into());
            }
        }
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let response: ProviderResponse = req
            .send_json(&body)
            .map_err(|e| unavailable(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| unavailable(format!("bad response: {e}")))?;
        Ok(response)
    }
}
