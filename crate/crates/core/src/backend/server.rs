//! HTTP front end exposing any [`Backend`] through the session protocol.

use std::net::SocketAddr;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::sync::oneshot;

use super::wire::{
    CreateSession, ErrorBody, ModelInfo, NextRequest, NextResponse, ScoreResponse,
    SessionCreated, TextRequest,
};
use super::{BackendError, SessionId, SharedBackend};

pub fn status_of(err: &BackendError) -> StatusCode {
    match err {
        BackendError::SessionNotFound(_) => StatusCode::NOT_FOUND,
        BackendError::SessionFinished => StatusCode::CONFLICT,
        BackendError::Encoding(_) => StatusCode::UNPROCESSABLE_ENTITY,
        BackendError::EmptySegment | BackendError::BadRequest(_) | BackendError::Incompatible(_) => {
            StatusCode::BAD_REQUEST
        }
        BackendError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
    }
}

struct ApiError(BackendError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.0.code().to_string(),
        };
        (status_of(&self.0), Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError(BackendError::BadRequest(e.to_string())))
}

/// Runs a backend call off the async workers, since backends may block.
async fn call<T: Serialize + Send + 'static>(
    backend: SharedBackend,
    f: impl FnOnce(&SharedBackend) -> Result<T, BackendError> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(move || f(&backend))
        .await
        .map_err(|e| ApiError(BackendError::Unavailable(e.to_string())))?
        .map(Json)
        .map_err(ApiError)
}

async fn model(State(b): State<SharedBackend>) -> Json<ModelInfo> {
    let d = b.descriptor();
    Json(ModelInfo {
        model_id: d.model_id.clone(),
        tokenizer_category: d.tokenizer.category().as_str().to_string(),
        vocab_size: d.tokenizer.vocab_size(),
    })
}

async fn create(State(b): State<SharedBackend>, body: Bytes) -> ApiResult<SessionCreated> {
    let req: CreateSession = parse(&body)?;
    call(b, move |b| {
        b.open_session(&req.prompt)
            .map(|id| SessionCreated { session_id: id.0 })
    })
    .await
}

async fn fork(State(b): State<SharedBackend>, Path(id): Path<String>) -> ApiResult<SessionCreated> {
    call(b, move |b| {
        b.fork(&SessionId(id)).map(|id| SessionCreated { session_id: id.0 })
    })
    .await
}

async fn next(
    State(b): State<SharedBackend>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<NextResponse> {
    let req: NextRequest = parse(&body)?;
    call(b, move |b| {
        b.generate(&SessionId(id), req.n).map(|g| NextResponse {
            tokens: g.tokens,
            nlls: g.nlls,
            texts_incremental: g.text_incremental,
            eos: g.eos,
        })
    })
    .await
}

async fn score(
    State(b): State<SharedBackend>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<ScoreResponse> {
    let req: TextRequest = parse(&body)?;
    call(b, move |b| {
        b.score_text(&SessionId(id), &req.text).map(|s| ScoreResponse {
            nll_sum: s.nll_sum,
            token_count: s.token_count,
        })
    })
    .await
}

async fn append(
    State(b): State<SharedBackend>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<super::wire::Ok> {
    let req: TextRequest = parse(&body)?;
    call(b, move |b| {
        b.append_text(&SessionId(id), &req.text)
            .map(|()| super::wire::Ok { ok: true })
    })
    .await
}

async fn close(State(b): State<SharedBackend>, Path(id): Path<String>) -> ApiResult<super::wire::Ok> {
    call(b, move |b| {
        b.close(&SessionId(id)).map(|()| super::wire::Ok { ok: true })
    })
    .await
}

pub fn router(backend: SharedBackend) -> Router {
    Router::new()
        .route("/v1/model", get(model))
        .route("/v1/sessions", post(create))
        .route("/v1/sessions/{id}", delete(close))
        .route("/v1/sessions/{id}/fork", post(fork))
        .route("/v1/sessions/{id}/next", post(next))
        .route("/v1/sessions/{id}/score", post(score))
        .route("/v1/sessions/{id}/append", post(append))
        .with_state(backend)
}

/// Serves a backend until the returned future is dropped or `shutdown` fires.
pub async fn serve(
    listener: tokio::net::TcpListener,
    backend: SharedBackend,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(backend))
        .with_graceful_shutdown(shutdown)
        .await
}

/// A protocol server running on its own thread; stops when dropped.
pub struct BackgroundServer {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl BackgroundServer {
    /// Binds `addr` (port 0 picks a free port) and starts serving.
    pub fn start(backend: SharedBackend, addr: &str) -> std::io::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let std_listener = std::net::TcpListener::bind(addr)?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let (stop, stopped) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener)?;
                serve(listener, backend, async {
                    let _ = stopped.await;
                })
                .await
            })
        });
        Ok(BackgroundServer {
            addr,
            stop: Some(stop),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server exits, which normally means forever.
    pub fn wait(mut self) -> std::io::Result<()> {
        let _keep_running = self.stop.take();
        match self.thread.take().map(JoinHandle::join) {
            Some(Ok(result)) => result,
            Some(Err(_)) => Err(std::io::Error::other("server thread panicked")),
            None => Ok(()),
        }
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}
