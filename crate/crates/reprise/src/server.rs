//! Newline-delimited JSON over TCP.
//!
//! Each request line is a trace record; each response line carries the
//! outcome fields plus `payload`, the id of the cache entry holding the new
//! output (null when it was not admitted). A line that fails to parse gets
//! `{"error":"parse","line":n}` and the connection stays open.
//!
//! One actor task owns the pipeline, so cache mutations are serialized:
//! every request is served and its cache events flushed before the next one
//! starts. The request's `arrival_time_s` is its timestamp, so replaying the
//! actor's processing order reproduces its outcomes. When no request has
//! arrived for the configured idle time the actor spends that time on cache
//! refinement.

use std::future::Future;
use std::time::Duration;

use anyhow::Result;
use reprise_core::pipeline::Pipeline;
use reprise_core::simgen::SimGenerator;
use reprise_core::types::DEFAULT_TOTAL_STEPS;
use reprise_core::{EntryId, GenerationRequest, ServeOutcome};
use serde::Serialize;
use serde_json::json;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinSet;

use crate::report::OutcomeLine;
use crate::trace::{Resolver, TraceRecord};

/// Serves one request and applies its cache events. Returns the outcome and
/// the id under which the output was admitted.
pub fn serve_one(pipeline: &mut Pipeline<SimGenerator>, req: &GenerationRequest) -> Result<(ServeOutcome, Option<EntryId>)> {
    let outcome = pipeline.handle_request(req, req.arrival_time)?;
    let flushed = pipeline.flush()?;
    Ok((outcome, flushed.admitted.first().copied()))
}

#[derive(Serialize)]
struct Response {
    #[serde(flatten)]
    outcome: OutcomeLine,
    wall_overhead_s: f64,
    payload: Option<u64>,
}

type Reply = oneshot::Sender<Result<(ServeOutcome, Option<EntryId>), String>>;

enum Message {
    Serve(GenerationRequest, Reply),
    Stop,
}

/// What the actor hands back on shutdown.
pub struct ServerState {
    pub pipeline: Pipeline<SimGenerator>,
    /// Request ids in the order they were served.
    pub order: Vec<u64>,
    pub refinement_time: f64,
}

async fn actor(mut pipeline: Pipeline<SimGenerator>, mut rx: mpsc::Receiver<Message>, idle: Duration) -> ServerState {
    let refine = pipeline.config().refine_when_idle;
    let mut order = Vec::new();
    let mut refinement_time = 0.0;
    let mut steps = DEFAULT_TOTAL_STEPS;
    loop {
        let msg = if refine {
            match tokio::time::timeout(idle, rx.recv()).await {
                Ok(m) => m,
                Err(_) => {
                    match pipeline.refine_idle(idle.as_secs_f64(), steps) {
                        Ok(used) => refinement_time += used,
                        Err(e) => log::warn!("idle refinement failed: {e}"),
                    }
                    continue;
                }
            }
        } else {
            rx.recv().await
        };
        match msg {
            Some(Message::Serve(req, reply)) => {
                steps = req.total_steps;
                order.push(req.id);
                let result = serve_one(&mut pipeline, &req).map_err(|e| format!("{e:#}"));
                let _ = reply.send(result);
            }
            Some(Message::Stop) | None => break,
        }
    }
    ServerState {
        pipeline,
        order,
        refinement_time,
    }
}

async fn connection(stream: TcpStream, resolver: Resolver, tx: mpsc::Sender<Message>) -> Result<()> {
    let (read, mut write) = stream.into_split();
    let mut lines = BufReader::new(read).lines();
    let mut n = 0u64;
    while let Some(line) = lines.next_line().await? {
        n += 1;
        if line.trim().is_empty() {
            continue;
        }
        let body = match serde_json::from_str::<TraceRecord>(&line) {
            Err(_) => json!({"error": "parse", "line": n}),
            Ok(rec) => match resolver.resolve(&rec) {
                Err(e) => json!({"error": "invalid", "line": n, "id": rec.id, "message": format!("{e:#}")}),
                Ok(req) => {
                    let (reply, answer) = oneshot::channel();
                    if tx.send(Message::Serve(req, reply)).await.is_err() {
                        json!({"error": "shutdown", "line": n, "id": rec.id})
                    } else {
                        match answer.await {
                            Ok(Ok((o, payload))) => serde_json::to_value(Response {
                                wall_overhead_s: o.wall_overhead,
                                outcome: OutcomeLine::from(&o),
                                payload: payload.map(|e| e.0),
                            })?,
                            Ok(Err(e)) => json!({"error": "internal", "line": n, "id": rec.id, "message": e}),
                            Err(_) => json!({"error": "shutdown", "line": n, "id": rec.id}),
                        }
                    }
                }
            },
        };
        let mut out = serde_json::to_vec(&body)?;
        out.push(b'\n');
        write.write_all(&out).await?;
    }
    Ok(())
}

/// Accepts connections until `shutdown` resolves, then stops the actor and
/// returns its state. Requests already queued are served first.
pub async fn serve(
    listener: TcpListener,
    pipeline: Pipeline<SimGenerator>,
    resolver: Resolver,
    idle: Duration,
    shutdown: impl Future<Output = ()>,
) -> Result<ServerState> {
    let (tx, rx) = mpsc::channel(256);
    let worker = tokio::spawn(actor(pipeline, rx, idle));
    let mut connections = JoinSet::new();
    tokio::pin!(shutdown);
    loop {
        tokio::select! {
            _ = &mut shutdown => break,
            accepted = listener.accept() => {
                let (stream, peer) = accepted?;
                log::debug!("connection from {peer}");
                let (resolver, tx) = (resolver.clone(), tx.clone());
                connections.spawn(async move {
                    if let Err(e) = connection(stream, resolver, tx).await {
                        log::warn!("connection {peer}: {e:#}");
                    }
                });
            }
            Some(_) = connections.join_next(), if !connections.is_empty() => {}
        }
    }
    tx.send(Message::Stop).await.ok();
    drop(tx);
    let state = worker.await?;
    connections.abort_all();
    Ok(state)
}
