//! Clients for the telemetry protocol and the HTTP gateway.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};
use thermotwin::telemetry::{Quality, Reading, Request};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::tcp::OwnedWriteHalf;
use tokio::net::TcpStream;
use tokio::sync::mpsc;
use tokio::task::JoinHandle;
use tokio::time::timeout;

pub const REQUEST_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{code}: {msg}")]
    Server { code: String, msg: String },
    #[error("connection closed")]
    Closed,
    #[error("no reply within {0:?}")]
    Timeout(Duration),
    #[error("unexpected reply: {0}")]
    Protocol(String),
    #[error("http: {0}")]
    Http(String),
}

impl ClientError {
    /// Server error code, e.g. `OutOfRange`.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Server { code, .. } => Some(code),
            _ => None,
        }
    }
}

/// One pushed batch.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Update {
    pub sub: u64,
    pub t: u64,
    pub values: BTreeMap<String, Option<f64>>,
}

/// Connection to the telemetry port. Replies are matched to requests in
/// order; pushed updates are queued separately.
pub struct TelemetryClient {
    writer: OwnedWriteHalf,
    replies: mpsc::UnboundedReceiver<Value>,
    updates: mpsc::UnboundedReceiver<Update>,
    reader: JoinHandle<()>,
}

impl Drop for TelemetryClient {
    fn drop(&mut self) {
        self.reader.abort();
    }
}

fn check(v: Value) -> Result<Value, ClientError> {
    if v["ok"].as_bool() == Some(true) {
        return Ok(v);
    }
    Err(ClientError::Server {
        code: v["err"].as_str().unwrap_or("Unknown").to_string(),
        msg: v["msg"].as_str().unwrap_or_default().to_string(),
    })
}

impl TelemetryClient {
    pub async fn connect(addr: SocketAddr) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr).await?;
        stream.set_nodelay(true)?;
        let (rd, writer) = stream.into_split();
        let (reply_tx, replies) = mpsc::unbounded_channel();
        let (update_tx, updates) = mpsc::unbounded_channel();
        let reader = tokio::spawn(async move {
            let mut lines = BufReader::new(rd).lines();
            while let Ok(Some(line)) = lines.next_line().await {
                let Ok(v) = serde_json::from_str::<Value>(&line) else { continue };
                if v["op"] == "update" {
                    if let Ok(u) = serde_json::from_value(v) {
                        let _ = update_tx.send(u);
                    }
                } else if reply_tx.send(v).is_err() {
                    break;
                }
            }
        });
        Ok(TelemetryClient { writer, replies, updates, reader })
    }

    /// Send one raw line and wait for its reply, without interpreting it.
    pub async fn send_line(&mut self, line: &str) -> Result<Value, ClientError> {
        self.writer.write_all(line.as_bytes()).await?;
        self.writer.write_all(b"\n").await?;
        match timeout(REQUEST_TIMEOUT, self.replies.recv()).await {
            Ok(Some(v)) => Ok(v),
            Ok(None) => Err(ClientError::Closed),
            Err(_) => Err(ClientError::Timeout(REQUEST_TIMEOUT)),
        }
    }

    pub async fn request(&mut self, req: &Request) -> Result<Value, ClientError> {
        let line = serde_json::to_string(req).map_err(|e| ClientError::Protocol(e.to_string()))?;
        check(self.send_line(&line).await?)
    }

    pub async fn read(&mut self, node: &str) -> Result<Reading, ClientError> {
        let v = self.request(&Request::Read { node: node.into() }).await?;
        let quality: Quality = serde_json::from_value(v["quality"].clone()).map_err(|e| ClientError::Protocol(e.to_string()))?;
        Ok(Reading { value: v["value"].as_f64().unwrap_or(f64::NAN), t: v["t"].as_u64().unwrap_or(0), quality })
    }

    /// Returns the value the node holds after the write.
    pub async fn write(&mut self, node: &str, value: f64) -> Result<f64, ClientError> {
        let v = self.request(&Request::Write { node: node.into(), value }).await?;
        v["value"].as_f64().ok_or_else(|| ClientError::Protocol(v.to_string()))
    }

    /// Returns the subscription id carried by subsequent updates.
    pub async fn subscribe(&mut self, nodes: &[&str], rate_hz: f64) -> Result<u64, ClientError> {
        let nodes = nodes.iter().map(|s| s.to_string()).collect();
        let v = self.request(&Request::Subscribe { nodes, rate_hz }).await?;
        v["sub"].as_u64().ok_or_else(|| ClientError::Protocol(v.to_string()))
    }

    /// Next pushed batch, or `None` once the connection is gone.
    pub async fn next_update(&mut self) -> Option<Update> {
        self.updates.recv().await
    }
}

/// Client for the gateway's `/api` endpoints.
#[derive(Debug, Clone)]
pub struct GatewayClient {
    base: String,
    http: reqwest::Client,
}

/// HTTP status and JSON body of a gateway call.
#[derive(Debug, Clone, PartialEq)]
pub struct GatewayReply {
    pub status: u16,
    pub body: Value,
}

impl GatewayReply {
    pub fn ok(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

impl GatewayClient {
    pub fn new(base: impl Into<String>) -> Self {
        let base = base.into().trim_end_matches('/').to_string();
        GatewayClient { base, http: reqwest::Client::new() }
    }

    async fn finish(resp: reqwest::Response) -> Result<GatewayReply, ClientError> {
        let status = resp.status().as_u16();
        let body = resp.json().await.map_err(|e| ClientError::Http(e.to_string()))?;
        Ok(GatewayReply { status, body })
    }

    pub async fn state(&self) -> Result<GatewayReply, ClientError> {
        let resp = self.http.get(format!("{}/api/state", self.base)).send().await.map_err(|e| ClientError::Http(e.to_string()))?;
        Self::finish(resp).await
    }

    pub async fn command(&self, node: &str, value: f64) -> Result<GatewayReply, ClientError> {
        let resp = self
            .http
            .post(format!("{}/api/command", self.base))
            .json(&json!({ "node": node, "value": value }))
            .send()
            .await
            .map_err(|e| ClientError::Http(e.to_string()))?;
        Self::finish(resp).await
    }

    pub async fn assist(&self, query: &str) -> Result<GatewayReply, ClientError> {
        let resp = self
            .http
            .post(format!("{}/api/assist", self.base))
            .json(&json!({ "query": query }))
            .send()
            .await
            .map_err(|e| ClientError::Http(e.to_string()))?;
        Self::finish(resp).await
    }

    /// Read the first `n` pushed events from `/api/stream`.
    pub async fn stream(&self, n: usize) -> Result<Vec<Value>, ClientError> {
        let mut resp = self.http.get(format!("{}/api/stream", self.base)).send().await.map_err(|e| ClientError::Http(e.to_string()))?;
        let mut buf = String::new();
        let mut out = Vec::new();
        while out.len() < n {
            let Some(chunk) = resp.chunk().await.map_err(|e| ClientError::Http(e.to_string()))? else { break };
            buf.push_str(&String::from_utf8_lossy(&chunk));
            while let Some(end) = buf.find("\n\n") {
                let event: String = buf.drain(..end + 2).collect();
                for line in event.lines() {
                    if let Some(data) = line.strip_prefix("data:") {
                        out.push(serde_json::from_str(data.trim()).map_err(|e| ClientError::Protocol(e.to_string()))?);
                    }
                }
            }
        }
        Ok(out)
    }
}
