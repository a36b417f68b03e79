use std::net::SocketAddr;
use std::time::Duration;

use axum::routing::post;
use axum::{Json, Router};
use proptest::prelude::*;
use serde_json::{json, Value};

use super::*;
use crate::schema::MEASURED_IDS;

const HEATER_MAX_KW: f64 = 15.7;
const GOLDEN: &str = include_str!("../../tests/golden/idle_context.txt");
const GOLDEN_TWIN: &str = include_str!("../../tests/golden/idle_context_twin.txt");

/// Reference context lines, markup removed. The total-power line
/// is left out: it is rendered from V·I instead of the displayed 0.00 kW.
const REFERENCE_LINES: [&str; 10] = [
    "- Total Heater Voltage: 35.78 V",
    "- Total Heater Current: 0.72 A",
    "- Control Rod Position: 100.00%",
    "- Primary Loop Temperatures [Testsection Inlet Temp, Testsection Outlet Temp, Top Pump Inlet Temp, 1st-HX Inlet Temp, 1st-HX Outlet Temp]: 26.36°C, 26.39°C, 26.39°C, 26.38°C, 26.36°C",
    "- Secondary Loop Temperatures [1st-HX 2nd-side Inlet Temp, 1st-HX 2nd-side Outlet Temp, Top Pump Inlet Temp, 2st-HX Inlet Temp, 2st-HX Outlet Temp]: 26.32°C, 26.39°C, 26.38°C, 26.38°C, 26.33°C",
    "- Four Heater Temperature in Test Section: 26.65°C, 26.65°C, 26.65°C, 26.65°C",
    "- Heat Sink Loop Temperatures [HX Inlet Temp, HX Outlet Temp]: 26.25°C, 26.38°C",
    "- Gauge Pressure [1st Loop Testsection Inlet, 1st Loop Testsection Outlet, 1st Loop Top, 2nd Loop Top]: 112.86 kPa, 106.29 kPa, 100.03 kPa, 100.05 kPa",
    "- Flow Rate [1st Loop, 2nd Loop, 3rd Loop]: 0.1269 kg/s, 0.1227 kg/s, 0.1018 kg/s",
    "- Expected Control Rod Position: 65.91%",
];

fn fixture_context(twin: bool) -> String {
    let (frame, tw) = idle_fixture();
    let d = derived_from_frame(&frame).unwrap();
    build_context(&frame, &d, twin.then_some(&tw), HEATER_MAX_KW).unwrap().text
}

/// An unremarkable operating frame: no rule should fire.
fn calm_frame() -> SensorFrame {
    let (mut f, _) = idle_fixture();
    f.values.insert("TF22".into(), 26.30);
    f.actuators.insert("CR_AO".into(), 40.0);
    f
}

fn codes(a: &Advisory) -> Vec<&str> {
    a.flags.iter().map(|f| f.code.as_str()).collect()
}

fn advise(f: &SensorFrame) -> Advisory {
    fallback_advise(f, &derived_from_frame(f).unwrap(), None).unwrap()
}

#[test]
fn derived_power_formulas() {
    let (frame, _) = idle_fixture();
    let z = compute_derived(&frame, 0.0, 0.0).unwrap();
    assert_eq!((z.p_kw, z.p_elec), (0.0, 0.0));
    let d = compute_derived(&frame, 35.78, 0.72).unwrap();
    assert!((d.p_kw - 0.0257616).abs() < 1e-9);
    assert!((d.p_elec - 0.45 * 0.0257616).abs() < 1e-9);
    assert!((d.avg_heater_temp - 26.65).abs() < 1e-12);
}

#[test]
fn idle_context_matches_golden() {
    assert_eq!(fixture_context(false), GOLDEN);
    assert_eq!(fixture_context(true), GOLDEN_TWIN);
    assert_eq!(fixture_context(true), fixture_context(true));
}

#[test]
fn reference_lines_appear_verbatim() {
    let text = fixture_context(true);
    for line in REFERENCE_LINES {
        assert!(text.lines().any(|l| l == line), "missing line {line}");
    }
    assert!(text.contains("Digital Twin Expectation for Primary Loop Temperatures"));
}

#[test]
fn every_channel_appears_once() {
    let vals: Vec<f64> = (0..MEASURED_IDS.len()).map(|i| 10.0 + 1.37 * i as f64).collect();
    let mut frame = SensorFrame::from_measured(0.0, &vals, 0.0);
    frame.actuators.insert("CR_AO".into(), 77.77);
    let d = compute_derived(&frame, 0.0, 0.0).unwrap();
    let text = build_context(&frame, &d, None, HEATER_MAX_KW).unwrap().text;
    for (i, v) in vals.iter().enumerate() {
        let s = if (20..23).contains(&i) { format!("{v:.4}") } else { format!("{v:.2}") };
        assert_eq!(text.matches(&s).count(), 1, "{} ({s})", MEASURED_IDS[i]);
    }
}

#[test]
fn missing_channel_is_reported() {
    let (mut frame, _) = idle_fixture();
    frame.values.remove("PT3");
    let d = compute_derived(&frame, 1.0, 1.0).unwrap();
    assert!(matches!(build_context(&frame, &d, None, HEATER_MAX_KW), Err(AssistError::MissingChannel(c)) if c == "PT3"));
}

#[test]
fn prompt_layout() {
    let ctx = FacilityContext { text: fixture_context(false) };
    let q = "What happens if demand rises to 1.89 kW?";
    let p = augment_query(q, &ctx).unwrap();
    let text = p.text();
    assert!(text.contains("80") && text.contains("200"));
    assert!(text.ends_with(q));
    assert!(text.starts_with(SYSTEM_PREAMBLE));
    let seps = "\n\n".len() * 2 + "User's Question: ".len();
    assert_eq!(text.len(), SYSTEM_PREAMBLE.len() + ctx.text.len() + q.len() + seps);
    assert!(matches!(augment_query("  ", &ctx), Err(AssistError::EmptyQuery)));
}

#[test]
fn fixture_advisory() {
    let (frame, tw) = idle_fixture();
    let a = fallback_advise(&frame, &derived_from_frame(&frame).unwrap(), Some(&tw)).unwrap();
    // TF22 reads 0.01 °C above TF14 in the reference frame, so the literal
    // inversion rule trips as well.
    assert_eq!(codes(&a), ["hx_inversion", "rod_inserted_powered"]);
    let info = &a.flags[1];
    assert_eq!(info.severity, Severity::Info);
    assert!(info.message.contains("zero power despite electrical readings"));
    assert_eq!(a.safe_to_proceed, SafeToProceed::Conditional);
    assert!(a.recommendations[0].contains("5% increments"));
    assert!(a.render().starts_with("[fallback]"));
}

#[test]
fn calm_frame_raises_nothing() {
    let a = advise(&calm_frame());
    assert!(a.flags.is_empty(), "{:?}", a.flags);
    assert_eq!(a.safe_to_proceed, SafeToProceed::Yes);
}

#[test]
fn loop_temperature_alarm() {
    let mut f = calm_frame();
    f.values.insert("TF12".into(), 85.0);
    let a = advise(&f);
    assert_eq!(codes(&a), ["loop_temp_high"]);
    let fl = &a.flags[0];
    assert_eq!((fl.severity, fl.channel.as_deref(), fl.limit), (Severity::Alarm, Some("TF12"), Some(80.0)));
    assert_eq!(a.safe_to_proceed, SafeToProceed::No);
    f.values.insert("TF12".into(), 80.0);
    assert!(advise(&f).flags.is_empty());
}

#[test]
fn heater_temperature_alarm() {
    let mut f = calm_frame();
    f.values.insert("TH3".into(), 201.0);
    let a = advise(&f);
    assert_eq!(codes(&a), ["heater_temp_high"]);
    assert_eq!(a.flags[0].limit, Some(200.0));
    f.values.insert("TH3".into(), 150.0);
    assert!(advise(&f).flags.is_empty());
}

#[test]
fn negative_flow_warning() {
    let mut f = calm_frame();
    f.values.insert("FT2".into(), -0.01);
    let a = advise(&f);
    assert_eq!(codes(&a), ["negative_flow"]);
    assert_eq!(a.flags[0].severity, Severity::Warning);
    assert!(a.flags[0].message.contains("negative flow rate"));
}

#[test]
fn exchanger_inversion_warning() {
    let mut f = calm_frame();
    f.values.insert("TF32".into(), 30.0);
    f.values.insert("TF24".into(), 29.0);
    let a = advise(&f);
    assert_eq!(codes(&a), ["hx_inversion"]);
    assert_eq!(a.flags[0].channel.as_deref(), Some("TF32"));
}

#[test]
fn rod_inserted_with_electrical_readings() {
    let mut f = calm_frame();
    f.actuators.insert("CR_AO".into(), 100.0);
    assert_eq!(codes(&advise(&f)), ["rod_inserted_powered"]);
    f.aux.insert("Heater_V".into(), 0.0);
    f.aux.insert("Heater_I".into(), 0.0);
    assert!(advise(&f).flags.is_empty());
}

#[test]
fn advisory_serialises_with_lowercase_enums() {
    let mut f = calm_frame();
    f.values.insert("TF12".into(), 85.0);
    let v = serde_json::to_value(advise(&f)).unwrap();
    assert_eq!(v["flags"][0]["severity"], "alarm");
    assert_eq!(v["safe_to_proceed"], "no");
}

fn temp_ids() -> impl Strategy<Value = &'static str> {
    prop::sample::select(&MEASURED_IDS[..16])
}

proptest! {
    #[test]
    fn alarms_are_sound_and_monotone(id in temp_ids(), t in 20.0f64..260.0, bump in 0.0f64..50.0) {
        let mut f = calm_frame();
        f.values.insert(id.to_string(), t);
        let a = advise(&f);
        for fl in a.flags.iter().filter(|fl| fl.severity == Severity::Alarm) {
            let ch = fl.channel.as_deref().unwrap();
            let limit = fl.limit.unwrap();
            prop_assert!(f.value(ch).unwrap() > limit);
        }
        f.values.insert(id.to_string(), t + bump);
        let b = advise(&f);
        let alarms = |x: &Advisory| x.flags.iter().filter(|fl| fl.severity == Severity::Alarm).map(|fl| fl.channel.clone()).collect::<Vec<_>>();
        for ch in alarms(&a) {
            prop_assert!(alarms(&b).contains(&ch));
        }
    }
}

async fn serve(app: Router) -> SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    addr
}

/// Echoes the user message and reports the sampling temperature it saw.
async fn echo(Json(body): Json<Value>) -> Json<Value> {
    let content = format!("T={} {}", body["temperature"], body["messages"][1]["content"].as_str().unwrap());
    Json(json!({"choices": [{"message": {"role": "assistant", "content": content}}]}))
}

#[tokio::test]
async fn http_backend_round_trip() {
    let addr = serve(Router::new().route("/v1/chat/completions", post(echo))).await;
    let backend = HttpBackend::new(format!("http://{addr}/v1"), "mock");
    let (frame, tw) = idle_fixture();
    let reply = assist("status?", &frame, Some(&tw), &Backend::Http(backend), HEATER_MAX_KW).await.unwrap();
    assert_eq!(reply.source, "llm");
    assert_eq!(reply.response, format!("T=0.3 {}", reply.prompt.user));
}

#[tokio::test]
async fn unreachable_backend_falls_back() {
    // Bind then drop to get a port with nothing listening.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut backend = HttpBackend::new(format!("http://127.0.0.1:{port}"), "mock");
    let (frame, _) = idle_fixture();
    let reply = assist("status?", &frame, None, &Backend::Http(backend.clone()), HEATER_MAX_KW).await.unwrap();
    assert_eq!(reply.source, "fallback");
    assert!(reply.response.starts_with("[fallback]"));
    backend.fallback_on_error = false;
    let err = assist("status?", &frame, None, &Backend::Http(backend), HEATER_MAX_KW).await.unwrap_err();
    assert!(matches!(err, AssistError::BackendUnavailable(_)));
}

#[tokio::test]
async fn slow_backend_times_out() {
    let slow = || async {
        tokio::time::sleep(Duration::from_secs(5)).await;
        Json(json!({}))
    };
    let addr = serve(Router::new().route("/chat/completions", post(slow))).await;
    let mut backend = HttpBackend::new(format!("http://{addr}"), "mock");
    backend.timeout = Duration::from_millis(200);
    let p = augment_query("q", &FacilityContext { text: String::new() }).unwrap();
    assert!(matches!(infer(&p, &backend).await, Err(AssistError::Timeout)));
}

#[tokio::test]
async fn malformed_reply_is_bad_response() {
    let addr = serve(Router::new().route("/chat/completions", post(|| async { Json(json!({"choices": []})) }))).await;
    let backend = HttpBackend::new(format!("http://{addr}"), "mock");
    let p = augment_query("q", &FacilityContext { text: String::new() }).unwrap();
    assert!(matches!(infer(&p, &backend).await, Err(AssistError::BadResponse(_))));
}

#[test]
fn request_body_carries_temperature_and_roles() {
    let b = HttpBackend::new("http://x", "m");
    let p = Prompt { system: "s".into(), user: "u".into() };
    let body = b.request_body(&p);
    assert_eq!(body["temperature"], 0.3);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "u");
}
