//! `/sync?scenario=<id>&client=<name>`: a WebSocket carrying length-prefixed
//! sync frames as binary messages. Errors go back as text messages holding
//! `{"error", "detail"}`; the connection stays open unless the hub drops it.

use std::sync::Arc;

use axum::extract::rejection::QueryRejection;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::response::Response;
use serde::Deserialize;
use serde_json::json;
use tokio::sync::mpsc::{unbounded_channel, UnboundedSender};

use surgedeck_core::displaywall::{encode_frame, ClientSink, FrameDecoder, SyncMessage};

use crate::{ApiError, AppState, ScenarioEntry};

struct SocketSink(UnboundedSender<Vec<u8>>);

impl ClientSink for SocketSink {
    fn deliver(&mut self, msg: &SyncMessage) -> bool {
        self.0.send(encode_frame(msg)).is_ok()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncQuery {
    scenario: String,
    client: String,
}

pub async fn sync_socket(
    State(state): State<Arc<AppState>>,
    q: Result<Query<SyncQuery>, QueryRejection>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let Query(q) = q.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let entry = state.entry(&q.scenario)?;
    Ok(ws.on_upgrade(move |socket| session(socket, state, entry, q.client)))
}

fn error_text(kind: &str, detail: impl ToString) -> Message {
    Message::Text(json!({ "error": kind, "detail": detail.to_string() }).to_string().into())
}

async fn session(mut socket: WebSocket, state: Arc<AppState>, entry: Arc<ScenarioEntry>, client: String) {
    let (tx, mut rx) = unbounded_channel();
    let joined = entry.hub.lock().expect("hub lock").join(&client, Box::new(SocketSink(tx)), state.now());
    if let Err(e) = joined {
        let _ = socket.send(error_text("Sync", e)).await;
        let _ = socket.send(Message::Close(None)).await;
        return;
    }
    tracing::info!(scenario = %entry.id, %client, "joined");
    let mut decoder = FrameDecoder::default();
    loop {
        tokio::select! {
            frame = rx.recv() => match frame {
                Some(frame) => {
                    if socket.send(Message::Binary(frame.into())).await.is_err() {
                        break;
                    }
                }
                // the hub dropped this client
                None => {
                    let _ = socket.send(error_text("Sync", format!("client {client} timed out"))).await;
                    break;
                }
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Binary(bytes))) => {
                    let messages = match decoder.push(&bytes) {
                        Ok(m) => m,
                        Err(e) => {
                            let _ = socket.send(error_text("Codec", e)).await;
                            decoder = FrameDecoder::default();
                            continue;
                        }
                    };
                    for msg in messages {
                        let result = entry.hub.lock().expect("hub lock").submit(&client, msg, state.now());
                        if let Err(e) = result {
                            if socket.send(error_text("Sync", e)).await.is_err() {
                                break;
                            }
                        }
                    }
                }
                Some(Ok(Message::Text(_))) => {
                    let _ = socket.send(error_text("Codec", "sync frames must be binary")).await;
                }
                Some(Ok(Message::Ping(_) | Message::Pong(_))) => {}
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
            },
        }
    }
    entry.hub.lock().expect("hub lock").leave(&client);
    tracing::info!(scenario = %entry.id, %client, "left");
}
