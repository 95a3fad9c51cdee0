use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use futures_util::{SinkExt, StreamExt};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio_tungstenite::tungstenite::Message;
use tower::ServiceExt;

use surgedeck_core::displaywall::{
    encode_frame, Annotation, AnnotationKind, ClientState, FrameDecoder, PoiChange, SyncBody, SyncMessage,
};
use surgedeck_core::ingest::save_scenario;
use surgedeck_core::synth::{city_scenario, CitySpec};
use surgedeck_service::{router, serve_on, AppState, ServiceConfig};

type Socket = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

struct Server {
    state: Arc<AppState>,
    addr: std::net::SocketAddr,
    id: String,
    _dir: tempfile::TempDir,
}

async fn http(state: &Arc<AppState>, method: Method, uri: &str, body: String) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).body(Body::from(body)).unwrap();
    let res = router(state.clone()).oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn start() -> Server {
    let dir = tempfile::tempdir().unwrap();
    let manifest = std::fs::read_to_string(save_scenario(&city_scenario(&CitySpec::default()), dir.path()).unwrap()).unwrap();
    let state = AppState::new(ServiceConfig { data_dir: dir.path().to_path_buf(), ..ServiceConfig::default() });
    let (status, body) = http(&state, Method::POST, "/scenarios", manifest).await;
    assert_eq!(status, StatusCode::CREATED);
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve_on(listener, state.clone()));
    Server { state, addr, id: body["id"].as_str().unwrap().into(), _dir: dir }
}

struct Client {
    socket: Socket,
    decoder: FrameDecoder,
    state: ClientState,
    received: Vec<SyncMessage>,
    errors: Vec<Value>,
}

impl Client {
    async fn connect(s: &Server, name: &str) -> Self {
        let url = format!("ws://{}/sync?scenario={}&client={name}", s.addr, s.id);
        let (socket, _) = tokio_tungstenite::connect_async(url).await.unwrap();
        Self { socket, decoder: FrameDecoder::default(), state: ClientState::default(), received: vec![], errors: vec![] }
    }

    /// Reads for `wait`, or until `until` holds.
    async fn pump(&mut self, wait: Duration, until: impl Fn(&Self) -> bool) {
        let deadline = tokio::time::Instant::now() + wait;
        while !until(self) {
            let next = tokio::time::timeout_at(deadline, self.socket.next()).await;
            match next {
                Ok(Some(Ok(Message::Binary(b)))) => {
                    for m in self.decoder.push(&b).unwrap() {
                        self.state.apply(&m).unwrap();
                        self.received.push(m);
                    }
                }
                Ok(Some(Ok(Message::Text(t)))) => self.errors.push(serde_json::from_str(&t).unwrap()),
                Ok(Some(Ok(_))) => {}
                _ => break,
            }
        }
    }

    fn shared(&self) -> Vec<String> {
        self.received
            .iter()
            .filter_map(|m| match &m.body {
                SyncBody::ShareAnnotation { id, .. } => Some(id.clone()),
                _ => None,
            })
            .collect()
    }
}

fn share(seq: u64, id: &str) -> SyncMessage {
    let annotation = Annotation { kind: AnnotationKind::DipStick, payload: json!({ "x": seq as f64 * 10.0, "y": 5.0 }) };
    SyncMessage { seq, body: SyncBody::ShareAnnotation { id: id.into(), annotation } }
}

#[tokio::test]
async fn annotations_reach_every_client_once_in_order() {
    let s = start().await;
    let mut a = Client::connect(&s, "a").await;
    let mut b = Client::connect(&s, "b").await;
    let mut c = Client::connect(&s, "c").await;
    for cl in [&mut a, &mut b, &mut c] {
        cl.pump(Duration::from_secs(5), |c| !c.received.is_empty()).await;
        assert!(matches!(cl.received[0].body, SyncBody::Snapshot(_)));
    }

    // five frames, split at arbitrary byte boundaries across three messages
    let ids: Vec<String> = (1..=5).map(|i| format!("note-{i}")).collect();
    let mut bytes = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        bytes.extend(encode_frame(&share(i as u64 + 1, id)));
    }
    let cuts = [0, 7, bytes.len() / 2 + 3, bytes.len()];
    for w in cuts.windows(2) {
        a.socket.send(Message::Binary(bytes[w[0]..w[1]].to_vec().into())).await.unwrap();
    }

    for cl in [&mut b, &mut c] {
        cl.pump(Duration::from_secs(5), |c| c.shared().len() >= 5).await;
        cl.pump(Duration::from_millis(300), |_| false).await;
        assert_eq!(cl.shared(), ids);
        assert!(cl.errors.is_empty(), "{:?}", cl.errors);
    }

    // a POI added over HTTP is broadcast as well
    let (status, _) = http(
        &s.state,
        Method::POST,
        "/pois",
        json!({ "scenario": s.id, "id": 9, "position": [600.0, 700.0, 3.0], "radius": 4.0 }).to_string(),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    b.pump(Duration::from_secs(5), |c| c.state.session.pois.contains_key(&9)).await;
    assert!(b.received.iter().any(|m| matches!(&m.body, SyncBody::PoiUpdate(PoiChange::Upsert { poi }) if poi.id == 9)));
    assert_eq!(b.state.session.annotations.len(), 5);
    let (_, summary) = http(&s.state, Method::GET, &format!("/scenarios/{}", s.id), String::new()).await;
    assert_eq!(summary["pois"], 1);
    assert_eq!(summary["clients"], json!(["a", "b", "c"]));
}

#[tokio::test]
async fn late_joiner_gets_current_state() {
    let s = start().await;
    let mut a = Client::connect(&s, "a").await;
    a.pump(Duration::from_secs(5), |c| !c.received.is_empty()).await;
    a.socket.send(Message::Binary(encode_frame(&share(1, "first")).into())).await.unwrap();
    a.pump(Duration::from_secs(5), |c| c.shared().len() == 1).await;
    let mut late = Client::connect(&s, "late").await;
    late.pump(Duration::from_secs(5), |c| !c.received.is_empty()).await;
    // a hub heartbeat may land between the two reads; compare at the same sequence
    let seq = late.state.last_seq;
    a.pump(Duration::from_secs(5), |c| c.state.last_seq >= seq).await;
    late.pump(Duration::from_millis(1), |c| c.state.last_seq >= a.state.last_seq).await;
    assert_eq!(late.state, a.state);
}

#[tokio::test]
async fn protocol_errors_come_back_as_text() {
    let s = start().await;
    let mut a = Client::connect(&s, "a").await;
    a.pump(Duration::from_secs(5), |c| !c.received.is_empty()).await;
    a.socket.send(Message::Binary(encode_frame(&share(3, "x")).into())).await.unwrap();
    a.socket.send(Message::Binary(encode_frame(&share(2, "y")).into())).await.unwrap();
    a.socket.send(Message::Text("hello".into())).await.unwrap();
    // error texts go out directly and may overtake the queued echo
    a.pump(Duration::from_secs(5), |c| c.errors.len() >= 2 && !c.shared().is_empty()).await;
    assert_eq!(a.errors[0]["error"], "Sync");
    assert!(a.errors[0]["detail"].as_str().unwrap().contains("does not follow"));
    assert_eq!(a.errors[1]["error"], "Codec");
    assert_eq!(a.shared(), vec!["x".to_string()]);

    let mut dup = Client::connect(&s, "a").await;
    dup.pump(Duration::from_secs(5), |c| !c.errors.is_empty()).await;
    assert!(dup.errors[0]["detail"].as_str().unwrap().contains("already connected"));
}

#[tokio::test]
async fn unknown_scenario_is_refused() {
    let s = start().await;
    let url = format!("ws://{}/sync?scenario=nope&client=a", s.addr);
    match tokio_tungstenite::connect_async(url).await {
        Err(tokio_tungstenite::tungstenite::Error::Http(res)) => assert_eq!(res.status(), StatusCode::NOT_FOUND),
        other => panic!("expected 404, got {:?}", other.map(|_| ())),
    }
}
