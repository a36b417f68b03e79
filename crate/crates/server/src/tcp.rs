use std::sync::Arc;
use std::time::{Duration, Instant};

use thermotwin::telemetry::{
    error_reply, parse_request, read_reply, subscribe_ack, update_message, write_reply, Request, MAX_BACKLOG_MS,
};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch};
use tokio::time::{interval, timeout, MissedTickBehavior};

use crate::hub::Hub;

/// Upper bound on queued outbound lines per client.
const OUTBOX: usize = 256;
/// Control writes slower than this are logged.
pub const WRITE_DEADLINE: Duration = Duration::from_millis(100);

type Outbox = mpsc::Sender<(Instant, String)>;

pub async fn accept_loop(listener: TcpListener, hub: Arc<Hub>) {
    loop {
        match listener.accept().await {
            Ok((stream, peer)) => {
                let _ = stream.set_nodelay(true);
                tracing::debug!(%peer, "telemetry client connected");
                tokio::spawn(connection(stream, hub.clone()));
            }
            Err(e) => tracing::warn!("accept failed: {e}"),
        }
    }
}

async fn connection(stream: TcpStream, hub: Arc<Hub>) {
    let (rd, mut wr) = stream.into_split();
    let (tx, mut rx) = mpsc::channel::<(Instant, String)>(OUTBOX);
    let (kill_tx, mut kill_rx) = watch::channel(false);
    let backlog = Duration::from_millis(MAX_BACKLOG_MS);

    let writer = tokio::spawn(async move {
        loop {
            tokio::select! {
                msg = rx.recv() => {
                    let Some((queued, line)) = msg else { break };
                    if queued.elapsed() > backlog {
                        tracing::warn!("dropping slow telemetry client: {:?} backlog", queued.elapsed());
                        break;
                    }
                    match timeout(backlog, wr.write_all(line.as_bytes())).await {
                        Ok(Ok(())) => {}
                        Ok(Err(_)) => break,
                        Err(_) => {
                            tracing::warn!("dropping slow telemetry client: write blocked for 2 s");
                            break;
                        }
                    }
                }
                _ = kill_rx.changed() => break,
            }
        }
        let _ = wr.shutdown().await;
    });

    let mut lines = BufReader::new(rd).lines();
    let mut publishers = Vec::new();
    loop {
        let line = tokio::select! {
            l = lines.next_line() => l,
            _ = closed(&tx) => break,
        };
        let line = match line {
            Ok(Some(l)) => l,
            _ => break,
        };
        if line.trim().is_empty() {
            continue;
        }
        let started = Instant::now();
        let reply = match parse_request(&line) {
            Err(e) => error_reply(&e),
            Ok(Request::Read { node }) => match hub.read(&node) {
                Ok(r) => read_reply(&node, &r),
                Err(e) => error_reply(&e),
            },
            Ok(Request::Write { node, value }) => {
                let reply = match hub.write(&node, value) {
                    Ok(applied) => write_reply(&node, applied),
                    Err(e) => error_reply(&e),
                };
                let took = started.elapsed();
                if took > WRITE_DEADLINE {
                    tracing::warn!(node, ?took, "DeadlineMiss on control write");
                }
                reply
            }
            Ok(Request::Subscribe { nodes, rate_hz }) => match hub.check_subscription(&nodes, rate_hz) {
                Ok(sub) => {
                    let ack = subscribe_ack(sub, &nodes, rate_hz);
                    if !send(&tx, ack.to_string(), &kill_tx) {
                        break;
                    }
                    publishers.push(tokio::spawn(publish(hub.clone(), tx.clone(), kill_tx.clone(), sub, nodes, rate_hz)));
                    continue;
                }
                Err(e) => error_reply(&e),
            },
        };
        if !send(&tx, reply.to_string(), &kill_tx) {
            break;
        }
    }
    for p in publishers {
        p.abort();
    }
    drop(tx);
    let _ = writer.await;
}

async fn closed(tx: &Outbox) {
    tx.closed().await
}

/// Queue one line; a full queue means the client cannot keep pace.
fn send(tx: &Outbox, mut line: String, kill: &watch::Sender<bool>) -> bool {
    line.push('\n');
    match tx.try_send((Instant::now(), line)) {
        Ok(()) => true,
        Err(mpsc::error::TrySendError::Full(_)) => {
            tracing::warn!("dropping slow telemetry client: outbound queue full");
            let _ = kill.send(true);
            false
        }
        Err(mpsc::error::TrySendError::Closed(_)) => false,
    }
}

/// Time-driven: every tick publishes the current values whether or not they
/// changed.
async fn publish(hub: Arc<Hub>, tx: Outbox, kill: watch::Sender<bool>, sub: u64, nodes: Vec<String>, rate_hz: f64) {
    let mut ticker = interval(Duration::from_secs_f64(1.0 / rate_hz));
    ticker.set_missed_tick_behavior(MissedTickBehavior::Burst);
    loop {
        ticker.tick().await;
        let (t, values) = hub.snapshot(&nodes);
        if !send(&tx, update_message(sub, t, &values).to_string(), &kill) {
            break;
        }
    }
}
