//! Fault-injecting, call-recording backend for tests and harnesses.
//!
//! Text requests are answered, in priority order, by the queued script, then
//! the rule closure, then the deterministic mock. Every call is recorded.

use std::collections::VecDeque;
use std::sync::Mutex;

use super::mock::{task_of, MockBackend, PromptTask};
use super::{Backend, ChatRequest, ImageRequest, ProviderError, ProviderKind, TextResult, Usage};
use crate::model::ReferenceImage;

type TextRule = Box<dyn Fn(&ChatRequest) -> Option<Result<String, ProviderError>> + Send + Sync>;

#[derive(Debug, Clone, PartialEq)]
pub enum RecordedCall {
    Text { task: PromptTask, request: ChatRequest },
    Images(ImageRequest),
}

pub struct ScriptedBackend {
    fallback: MockBackend,
    script: Mutex<VecDeque<Result<String, ProviderError>>>,
    rule: Option<TextRule>,
    image_fault: Option<ProviderError>,
    calls: Mutex<Vec<RecordedCall>>,
}

impl ScriptedBackend {
    pub fn new(seed: u64) -> Self {
        Self {
            fallback: MockBackend::new(seed),
            script: Mutex::new(VecDeque::new()),
            rule: None,
            image_fault: None,
            calls: Mutex::new(Vec::new()),
        }
    }

    /// Queues replies consumed by the next text calls, one each.
    pub fn with_script(self, replies: impl IntoIterator<Item = Result<String, ProviderError>>) -> Self {
        self.script.lock().unwrap().extend(replies);
        self
    }

    pub fn with_rule(
        mut self,
        rule: impl Fn(&ChatRequest) -> Option<Result<String, ProviderError>> + Send + Sync + 'static,
    ) -> Self {
        self.rule = Some(Box::new(rule));
        self
    }

    /// Answers every request of `task` with `reply`.
    pub fn answering(self, task: PromptTask, reply: Result<String, ProviderError>) -> Self {
        self.with_rule(move |req| (task_of(req) == task).then(|| reply.clone()))
    }

    pub fn failing_images(mut self, error: ProviderError) -> Self {
        self.image_fault = Some(error);
        self
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.calls.lock().unwrap().clone()
    }

    pub fn text_requests(&self) -> Vec<ChatRequest> {
        self.calls()
            .into_iter()
            .filter_map(|c| match c {
                RecordedCall::Text { request, .. } => Some(request),
                RecordedCall::Images(_) => None,
            })
            .collect()
    }

    pub fn image_call_count(&self) -> usize {
        self.calls().iter().filter(|c| matches!(c, RecordedCall::Images(_))).count()
    }
}

impl Backend for ScriptedBackend {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Mock
    }

    fn complete(&self, request: &ChatRequest) -> Result<TextResult, ProviderError> {
        self.calls
            .lock()
            .unwrap()
            .push(RecordedCall::Text { task: task_of(request), request: request.clone() });
        let scripted = self.script.lock().unwrap().pop_front();
        match scripted.or_else(|| self.rule.as_ref().and_then(|rule| rule(request))) {
            Some(Ok(content)) => Ok(TextResult { content, usage: Usage::default() }),
            Some(Err(err)) => Err(err),
            None => self.fallback.complete(request),
        }
    }

    fn generate_images(&self, request: &ImageRequest) -> Result<Vec<ReferenceImage>, ProviderError> {
        self.calls.lock().unwrap().push(RecordedCall::Images(request.clone()));
        match &self.image_fault {
            Some(err) => Err(err.clone()),
            None => self.fallback.generate_images(request),
        }
    }
}
