//! WebSocket endpoint: one independent session task per connection.

use std::future::Future;
use std::io::BufWriter;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures::stream::{SplitSink, SplitStream};
use futures::{SinkExt, Stream, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc};
use tokio::time::Instant;
use tracing::{debug, info, warn};

use duplex_core::audio::AudioFrame;
use duplex_core::pvad::{
    EnergyScorer, FrameScorer, NeuralScorer, ReferenceEncoder, ReferenceScorer, SpeakerEmbedding,
};
use duplex_core::session::{run_session, Session, SessionEvent, SessionOutput};
use duplex_core::turn::{TraceWriter, TurnState};

use crate::config::{ConfigError, ModelCache, PvadScorer, ServerConfig, SessionConfig};
use crate::protocol::{
    decode_audio, parse_config_message, AudioPacker, ServerMessage, CLOSE_BINARY_BEFORE_CONFIG,
    CLOSE_HANDSHAKE_TIMEOUT, CLOSE_INVALID_CONFIG,
};

/// Immutable state shared by all connections.
pub struct AppState {
    pub config: ServerConfig,
    models: ModelCache,
    encoder: Arc<ReferenceEncoder>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(config: ServerConfig) -> Self {
        Self {
            config,
            models: ModelCache::default(),
            encoder: Arc::new(ReferenceEncoder::default()),
            next_id: AtomicU64::new(0),
        }
    }

    fn session_id(&self) -> String {
        format!("session-{:06}", self.next_id.fetch_add(1, Ordering::Relaxed))
    }

    /// Builds a session for a validated config. Fails only on resources
    /// the config names, such as a weights file.
    pub fn open_session(&self, id: String, config: &SessionConfig) -> Result<Session, ConfigError> {
        let pvad = &config.pvad;
        let embedding = pvad
            .embedding
            .clone()
            .map(SpeakerEmbedding::from_vector)
            .transpose()
            .map_err(|e| ConfigError::Invalid(format!("pvad.embedding: {e}")))?;
        let model = match (&pvad.scorer, &pvad.weights) {
            (PvadScorer::Neural, Some(path)) => Some(self.models.get(path)?),
            _ => None,
        };
        let scorer: Box<dyn FrameScorer> = match (pvad.scorer, &embedding, &model) {
            (PvadScorer::Reference, Some(e), _) => Box::new(ReferenceScorer::new(e.clone(), pvad.reference.clone())),
            (PvadScorer::Neural, Some(e), Some(m)) => Box::new(
                NeuralScorer::new(m.clone(), e.clone()).map_err(|e| ConfigError::Invalid(format!("pvad: {e}")))?,
            ),
            _ => Box::new(EnergyScorer::default()),
        };
        let mut session = Session::new(id, config.settings(), scorer, config.components(), config.eot_backend());
        if embedding.is_none() {
            match (pvad.scorer, model) {
                (PvadScorer::Reference, _) => {
                    session.enroll_on_first_turn(self.encoder.clone(), pvad.reference.clone())
                }
                (PvadScorer::Neural, Some(model)) => session.enroll_with(
                    self.encoder.clone(),
                    Arc::new(move |e| Ok(Box::new(NeuralScorer::new(model.clone(), e)?) as Box<dyn FrameScorer>)),
                ),
                _ => {}
            }
        }
        Ok(session)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/ws", get(ws_handler))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    config: ServerConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    info!(addr = %listener.local_addr()?, "gateway listening");
    axum::serve(listener, router(Arc::new(AppState::new(config))))
        .with_graceful_shutdown(shutdown)
        .await
}

async fn ws_handler(ws: WebSocketUpgrade, State(state): State<Arc<AppState>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| handle_socket(socket, state))
}

type WsSink = SplitSink<WebSocket, Message>;

async fn close_with(mut tx: WsSink, code: u16, message: String) {
    let _ = tx.send(Message::Text(ServerMessage::error(Some(code), message.clone()).to_json())).await;
    let _ = tx
        .send(Message::Close(Some(CloseFrame {
            code,
            reason: message.into(),
        })))
        .await;
}

/// Waits for the config message. `Err` carries the close code and reason.
async fn handshake(
    rx: &mut SplitStream<WebSocket>,
    state: &AppState,
    id: &str,
) -> Result<Option<(SessionConfig, Session)>, (u16, String)> {
    let timeout = Duration::from_millis(state.config.handshake_timeout_ms);
    let deadline = Instant::now() + timeout;
    loop {
        let msg = match tokio::time::timeout_at(deadline, rx.next()).await {
            Err(_) => return Err((CLOSE_HANDSHAKE_TIMEOUT, "no config received".into())),
            Ok(None) | Ok(Some(Err(_))) => return Ok(None),
            Ok(Some(Ok(m))) => m,
        };
        match msg {
            Message::Binary(_) => {
                return Err((CLOSE_BINARY_BEFORE_CONFIG, "audio before config".into()));
            }
            Message::Text(text) => {
                let invalid = |e: String| (CLOSE_INVALID_CONFIG, e);
                let overrides = parse_config_message(&text).map_err(|e| invalid(e.to_string()))?;
                let config = state.config.session.merged(overrides).map_err(|e| invalid(e.to_string()))?;
                let session = state.open_session(id.to_string(), &config).map_err(|e| invalid(e.to_string()))?;
                return Ok(Some((config, session)));
            }
            Message::Close(_) => return Ok(None),
            Message::Ping(_) | Message::Pong(_) => {}
        }
    }
}

async fn handle_socket(socket: WebSocket, state: Arc<AppState>) {
    let (mut tx, mut rx) = socket.split();
    let id = state.session_id();
    let (config, mut session) = match handshake(&mut rx, &state, &id).await {
        Ok(Some(opened)) => opened,
        Ok(None) => return,
        Err((code, reason)) => {
            warn!(session = %id, code, %reason, "handshake rejected");
            close_with(tx, code, reason).await;
            return;
        }
    };
    info!(session = %id, scorer = session.scorer_name(), "session opened");
    if tx.send(Message::Text(ServerMessage::config_ack(&id, &config).to_json())).await.is_err() {
        return;
    }

    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<Message>();
    let writer = tokio::spawn(async move {
        while let Some(m) = out_rx.recv().await {
            if tx.send(m).await.is_err() {
                break;
            }
        }
        let _ = tx.close().await;
    });

    let (in_tx, in_rx) = broadcast::channel::<AudioFrame>(state.config.inbound_frames());
    let reader_out = out_tx.clone();
    let reader_id = id.clone();
    let reader = tokio::spawn(async move {
        while let Some(Ok(msg)) = rx.next().await {
            match msg {
                Message::Binary(bytes) => match decode_audio(&bytes) {
                    Ok(frames) => {
                        for f in frames {
                            let _ = in_tx.send(f);
                        }
                    }
                    Err(e) => {
                        let _ = reader_out.send(Message::Text(ServerMessage::error(None, e.to_string()).to_json()));
                    }
                },
                Message::Text(_) => {
                    let msg = ServerMessage::error(None, "config already received; text input is ignored");
                    let _ = reader_out.send(Message::Text(msg.to_json()));
                }
                Message::Close(_) => break,
                Message::Ping(_) | Message::Pong(_) => {}
            }
        }
        debug!(session = %reader_id, "client input ended");
    });

    let _ = out_tx.send(Message::Text(
        ServerMessage::State {
            state: TurnState::Idle,
            interrupted: false,
        }
        .to_json(),
    ));
    let tracing_on = state.config.trace_dir.is_some();
    if tracing_on {
        session.record_trace(None);
    }
    let mut packer = AudioPacker::default();
    let mut failure = None;
    let sink_tx = out_tx.clone();
    let sink = |out: SessionOutput| {
        let text = |m: ServerMessage| Message::Text(m.to_json());
        match &out {
            SessionOutput::Audio(frame) => {
                if let Some(bytes) = packer.push(frame) {
                    let _ = sink_tx.send(Message::Binary(bytes));
                }
                return;
            }
            SessionOutput::State { interrupted: true, .. } => packer.discard(),
            SessionOutput::State { state, .. } if *state != TurnState::AgentSpeaking => {
                if let Some(bytes) = packer.flush() {
                    let _ = sink_tx.send(Message::Binary(bytes));
                }
            }
            SessionOutput::Event(SessionEvent::PipelineError { message }) => failure = Some(message.clone()),
            _ => {}
        }
        if let Some(m) = ServerMessage::from_output(&out) {
            let _ = sink_tx.send(text(m));
        }
    };
    run_session(&mut session, inbound(in_rx, out_tx.clone(), id.clone()), Instant::now(), sink).await;

    if let (Some(dir), Some(records)) = (&state.config.trace_dir, session.finish_trace(failure.is_some(), failure)) {
        if let Err(e) = write_trace(dir, &id, &records) {
            warn!(session = %id, error = %e, "writing trace failed");
        }
    }
    reader.abort();
    drop(sink_tx);
    drop(out_tx);
    let _ = writer.await;
    info!(session = %id, "session closed");
}

/// Inbound frames; frames lost to the buffer cap are reported to the client.
fn inbound(
    rx: broadcast::Receiver<AudioFrame>,
    out: mpsc::UnboundedSender<Message>,
    id: String,
) -> impl Stream<Item = AudioFrame> {
    futures::stream::unfold((rx, out, id), |(mut rx, out, id)| async move {
        loop {
            match rx.recv().await {
                Ok(frame) => return Some((frame, (rx, out, id))),
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    warn!(session = %id, frames = n, "inbound audio dropped");
                    let event = ServerMessage::Event {
                        event: SessionEvent::AudioDropped { frames: n as usize },
                    };
                    let _ = out.send(Message::Text(event.to_json()));
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    })
}

fn write_trace(
    dir: &std::path::Path,
    id: &str,
    records: &[duplex_core::turn::TraceRecord],
) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let file = std::fs::File::create(dir.join(format!("{id}.jsonl")))?;
    let mut w = TraceWriter::new(BufWriter::new(file));
    for r in records {
        w.write(r)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn overflow_drops_oldest_frames_and_reports_them() {
        let (tx, rx) = broadcast::channel(4);
        let (out_tx, mut out_rx) = mpsc::unbounded_channel();
        for i in 0..10 {
            tx.send(AudioFrame::silence(i)).unwrap();
        }
        drop(tx);
        let got: Vec<u64> = inbound(rx, out_tx, "t".into()).map(|f| f.index()).collect().await;
        assert_eq!(got, [6, 7, 8, 9]);
        let Some(Message::Text(text)) = out_rx.recv().await else { panic!("no drop event") };
        assert_eq!(text, r#"{"type":"event","name":"audio_dropped","frames":6}"#);
    }
}
