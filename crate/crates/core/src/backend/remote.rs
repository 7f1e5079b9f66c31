use std::time::Duration;

use reqwest::blocking::{Client, RequestBuilder};
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{
    CreateSession, ErrorBody, ModelInfo, NextRequest, NextResponse, ScoreResponse,
    SessionCreated, TextRequest,
};
use super::{Backend, BackendDescriptor, BackendError, BackendKind, Generation, SessionId};
use crate::scoring::ModelScore;
use crate::tokenizer::SharedTokenizer;

/// Extra attempts after a failed request before giving up.
pub const RETRIES: usize = 2;

/// Client for a backend served over the HTTP session protocol. The local
/// tokenizer must match the served model's, which `connect` checks.
#[derive(Debug)]
pub struct RemoteBackend {
    descriptor: BackendDescriptor,
    base: String,
    client: Client,
}

enum Attempt<T> {
    Done(Result<T, BackendError>),
    Retry(String),
}

impl RemoteBackend {
    pub fn connect(
        base_url: &str,
        tokenizer: SharedTokenizer,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let base = base_url.trim_end_matches('/').to_string();
        let mut backend = RemoteBackend {
            descriptor: BackendDescriptor {
                model_id: String::new(),
                tokenizer,
                kind: BackendKind::Remote,
            },
            base,
            client,
        };
        let info: ModelInfo = backend.send(|c, base| c.get(format!("{base}/v1/model")))?;
        let tok = &backend.descriptor.tokenizer;
        if info.tokenizer_category != tok.category().as_str() || info.vocab_size != tok.vocab_size() {
            return Err(BackendError::Incompatible(format!(
                "served model {} has a {} tokenizer with {} tokens, local tokenizer {} is {} with {}",
                info.model_id,
                info.tokenizer_category,
                info.vocab_size,
                tok.name(),
                tok.category(),
                tok.vocab_size()
            )));
        }
        backend.descriptor.model_id = info.model_id;
        Ok(backend)
    }

    /// Overrides the model id reported by the server.
    pub fn with_model_id(mut self, model_id: impl Into<String>) -> Self {
        self.descriptor.model_id = model_id.into();
        self
    }

    fn attempt<T: DeserializeOwned>(request: RequestBuilder) -> Attempt<T> {
        let response = match request.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = response.status();
        if status.is_server_error() {
            return Attempt::Retry(format!("server answered {status}"));
        }
        if status.is_client_error() {
            let detail = format!("HTTP {status}");
            return Attempt::Done(Err(match response.json::<ErrorBody>() {
                Ok(body) => BackendError::from_code(&body.error, &detail),
                Err(_) => BackendError::Unavailable(detail),
            }));
        }
        Attempt::Done(
            response
                .json::<T>()
                .map_err(|e| BackendError::Unavailable(format!("malformed response: {e}"))),
        )
    }

    /// Sends a request, retrying transport failures and server errors.
    fn send<T: DeserializeOwned>(
        &self,
        build: impl Fn(&Client, &str) -> RequestBuilder,
    ) -> Result<T, BackendError> {
        let mut last = String::new();
        for _ in 0..=RETRIES {
            match Self::attempt(build(&self.client, &self.base)) {
                Attempt::Done(result) => return result,
                Attempt::Retry(why) => last = why,
            }
        }
        Err(BackendError::Unavailable(format!(
            "{} after {} attempts: {last}",
            self.base,
            RETRIES + 1
        )))
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, BackendError> {
        self.send(|c, base| c.post(format!("{base}{path}")).json(body))
    }
}

impl Backend for RemoteBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn open_session(&self, prompt: &str) -> Result<SessionId, BackendError> {
        let r: SessionCreated = self.post(
            "/v1/sessions",
            &CreateSession {
                prompt: prompt.to_string(),
            },
        )?;
        Ok(SessionId(r.session_id))
    }

    fn fork(&self, session: &SessionId) -> Result<SessionId, BackendError> {
        let r: SessionCreated =
            self.post(&format!("/v1/sessions/{session}/fork"), &serde_json::json!({}))?;
        Ok(SessionId(r.session_id))
    }

    fn generate(&self, session: &SessionId, n: usize) -> Result<Generation, BackendError> {
        let r: NextResponse = self.post(&format!("/v1/sessions/{session}/next"), &NextRequest { n })?;
        if r.tokens.len() != r.nlls.len() {
            return Err(BackendError::Unavailable(
                "token and nll lists differ in length".into(),
            ));
        }
        Ok(Generation {
            tokens: r.tokens,
            nlls: r.nlls,
            text_incremental: r.texts_incremental,
            eos: r.eos,
        })
    }

    fn score_text(&self, session: &SessionId, text: &str) -> Result<ModelScore, BackendError> {
        let r: ScoreResponse = self.post(
            &format!("/v1/sessions/{session}/score"),
            &TextRequest {
                text: text.to_string(),
            },
        )?;
        Ok(ModelScore {
            nll_sum: r.nll_sum,
            token_count: r.token_count,
        })
    }

    fn append_text(&self, session: &SessionId, text: &str) -> Result<(), BackendError> {
        let _: super::wire::Ok = self.post(
            &format!("/v1/sessions/{session}/append"),
            &TextRequest {
                text: text.to_string(),
            },
        )?;
        Ok(())
    }

    fn close(&self, session: &SessionId) -> Result<(), BackendError> {
        let _: super::wire::Ok =
            self.send(|c, base| c.delete(format!("{base}/v1/sessions/{session}")))?;
        Ok(())
    }
}
