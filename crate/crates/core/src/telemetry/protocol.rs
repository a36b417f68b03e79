use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Reading, TelemetryError};

/// Client-to-server messages, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Request {
    Read { node: String },
    Write { node: String, value: f64 },
    Subscribe { nodes: Vec<String>, rate_hz: f64 },
}

pub fn parse_request(line: &str) -> Result<Request, TelemetryError> {
    serde_json::from_str(line.trim()).map_err(|e| TelemetryError::MalformedMessage(e.to_string()))
}

pub fn read_reply(node: &str, r: &Reading) -> Value {
    json!({ "ok": true, "node": node, "value": r.value, "t": r.t, "quality": r.quality })
}

/// `applied` is the value now held by the node, after any quantisation.
pub fn write_reply(node: &str, applied: f64) -> Value {
    json!({ "ok": true, "node": node, "value": applied })
}

pub fn subscribe_ack(sub: u64, nodes: &[String], rate_hz: f64) -> Value {
    json!({ "ok": true, "op": "subscribe", "sub": sub, "nodes": nodes, "rate_hz": rate_hz })
}

pub fn update_message(sub: u64, t: u64, values: &BTreeMap<String, f64>) -> Value {
    json!({ "op": "update", "sub": sub, "t": t, "values": values })
}

pub fn error_reply(e: &TelemetryError) -> Value {
    json!({ "ok": false, "err": e.code(), "msg": e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::Quality;

    #[test]
    fn requests_parse() {
        assert_eq!(parse_request(r#"{"op":"read","node":"TF11"}"#).unwrap(), Request::Read { node: "TF11".into() });
        assert_eq!(
            parse_request(r#"{"op":"write","node":"Heater_AO","value":35.0}"#).unwrap(),
            Request::Write { node: "Heater_AO".into(), value: 35.0 }
        );
        assert_eq!(
            parse_request(r#"{"op":"subscribe","nodes":["TF11","FT1"],"rate_hz":10}"#).unwrap(),
            Request::Subscribe { nodes: vec!["TF11".into(), "FT1".into()], rate_hz: 10.0 }
        );
    }

    #[test]
    fn garbage_is_malformed() {
        for line in ["", "{", "[]", r#"{"op":"delete","node":"TF11"}"#, r#"{"op":"write","node":"CR_AO"}"#, r#"{"op":"read","node":"TF11","x":1}"#] {
            assert_eq!(parse_request(line).unwrap_err().code(), "MalformedMessage", "{line}");
        }
    }

    #[test]
    fn replies_have_the_wire_shape() {
        let r = Reading { value: 26.36, t: 1234, quality: Quality::Good };
        assert_eq!(read_reply("TF11", &r).to_string(), r#"{"node":"TF11","ok":true,"quality":"good","t":1234,"value":26.36}"#);
        let e = TelemetryError::OutOfRange { node: "Heater_AO".into(), value: 150.0, min: 0.0, max: 100.0 };
        let v = error_reply(&e);
        assert_eq!((v["ok"].as_bool(), v["err"].as_str()), (Some(false), Some("OutOfRange")));
        let mut values = BTreeMap::new();
        values.insert("TF11".to_string(), 26.36);
        let u = update_message(3, 99, &values);
        assert_eq!(u["op"], "update");
        assert_eq!(u["values"]["TF11"], 26.36);
    }
}
