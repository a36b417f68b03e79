use std::time::Duration;

use serde_json::Value;
use thermotwin_server::{start, ServerConfig};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::TcpStream;

fn cfg() -> ServerConfig {
    ServerConfig { port: 0, http_port: 0, noise: false, ..Default::default() }
}

async fn roundtrip(lines: &mut tokio::io::Lines<BufReader<tokio::net::tcp::OwnedReadHalf>>, wr: &mut tokio::net::tcp::OwnedWriteHalf, msg: &str) -> Value {
    wr.write_all(format!("{msg}\n").as_bytes()).await.unwrap();
    let line = tokio::time::timeout(Duration::from_secs(2), lines.next_line()).await.unwrap().unwrap().unwrap();
    serde_json::from_str(&line).unwrap()
}

#[tokio::test]
async fn documented_messages_get_documented_replies() {
    let server = start(cfg()).await.unwrap();
    let (rd, mut wr) = TcpStream::connect(server.telemetry_addr).await.unwrap().into_split();
    let mut lines = BufReader::new(rd).lines();

    let v = roundtrip(&mut lines, &mut wr, r#"{"op":"read","node":"TF11"}"#).await;
    assert_eq!(v["ok"], true);
    assert_eq!(v["node"], "TF11");
    assert_eq!(v["quality"], "good");
    assert!(v["value"].as_f64().is_some() && v["t"].as_u64().is_some());

    let v = roundtrip(&mut lines, &mut wr, r#"{"op":"write","node":"Heater_AO","value":35.0}"#).await;
    assert_eq!(v["ok"], true);
    let v = roundtrip(&mut lines, &mut wr, r#"{"op":"write","node":"Heater_AO","value":150}"#).await;
    assert_eq!((v["ok"].as_bool(), v["err"].as_str()), (Some(false), Some("OutOfRange")));
    let v = roundtrip(&mut lines, &mut wr, r#"{"op":"write","node":"TF11","value":1}"#).await;
    assert_eq!(v["err"], "AccessDenied");
    let v = roundtrip(&mut lines, &mut wr, r#"{"op":"read","node":"TF99"}"#).await;
    assert_eq!(v["err"], "UnknownNode");
    let v = roundtrip(&mut lines, &mut wr, "not json").await;
    assert_eq!(v["err"], "MalformedMessage");

    let v = roundtrip(&mut lines, &mut wr, r#"{"op":"subscribe","nodes":["TF11","FT1"],"rate_hz":10}"#).await;
    assert_eq!((v["ok"].as_bool(), v["op"].as_str()), (Some(true), Some("subscribe")));
    let line = tokio::time::timeout(Duration::from_secs(1), lines.next_line()).await.unwrap().unwrap().unwrap();
    let u: Value = serde_json::from_str(&line).unwrap();
    assert_eq!(u["op"], "update");
    assert!(u["values"]["TF11"].is_number() && u["values"]["FT1"].is_number());
}

#[tokio::test]
async fn a_connection_survives_a_closed_peer() {
    let server = start(cfg()).await.unwrap();
    {
        let mut s = TcpStream::connect(server.telemetry_addr).await.unwrap();
        s.write_all(br#"{"op":"subscribe","nodes":["TF11"],"rate_hz":10}"#).await.unwrap();
        s.write_all(b"\n").await.unwrap();
    }
    tokio::time::sleep(Duration::from_millis(300)).await;
    let (rd, mut wr) = TcpStream::connect(server.telemetry_addr).await.unwrap().into_split();
    let mut lines = BufReader::new(rd).lines();
    let v = roundtrip(&mut lines, &mut wr, r#"{"op":"read","node":"FT1"}"#).await;
    assert_eq!(v["ok"], true);
}
