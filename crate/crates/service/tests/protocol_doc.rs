//! Every JSON example in PROTOCOL.md must decode into the typed payload of
//! its kind.

use teleop_service::protocol::{
    ErrorPayload, FeedbackUpdate, LeaderInput, MessageKind, ModelInfo, SessionEventPayload,
    StateUpdate, WireMessage,
};

fn examples() -> Vec<String> {
    let text =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../PROTOCOL.md")).unwrap();
    let mut out = Vec::new();
    let mut current: Option<String> = None;
    for line in text.lines() {
        match (&mut current, line.trim_start()) {
            (None, "```json") => current = Some(String::new()),
            (Some(buf), "```") => {
                out.push(std::mem::take(buf));
                current = None;
            }
            (Some(buf), _) => {
                buf.push_str(line);
                buf.push('\n');
            }
            _ => {}
        }
    }
    out
}

#[test]
fn documented_examples_decode() {
    let all = examples();
    assert!(all.len() >= 8, "{} examples", all.len());
    let mut seen = Vec::new();
    for text in &all {
        let m = WireMessage::decode(text).unwrap_or_else(|e| panic!("{e}\n{text}"));
        let typed = match m.kind {
            MessageKind::ModelInfo => m.payload_as::<ModelInfo>().map(|_| ()),
            MessageKind::StateUpdate => m.payload_as::<StateUpdate>().map(|_| ()),
            MessageKind::FeedbackUpdate => m.payload_as::<FeedbackUpdate>().map(|_| ()),
            MessageKind::SessionEvent => m.payload_as::<SessionEventPayload>().map(|_| ()),
            MessageKind::LeaderInput => m.payload_as::<LeaderInput>().map(|_| ()),
            MessageKind::Error => m.payload_as::<ErrorPayload>().map(|_| ()),
        };
        typed.unwrap_or_else(|e| panic!("{e}\n{text}"));
        // re-encoding keeps the document's content
        let back: serde_json::Value = serde_json::from_str(&m.encode()).unwrap();
        let orig: serde_json::Value = serde_json::from_str(text).unwrap();
        assert_eq!(back, orig);
        seen.push(m.kind);
    }
    for kind in [
        MessageKind::ModelInfo,
        MessageKind::StateUpdate,
        MessageKind::FeedbackUpdate,
        MessageKind::SessionEvent,
        MessageKind::LeaderInput,
        MessageKind::Error,
    ] {
        assert!(seen.contains(&kind), "no example for {}", kind.as_str());
    }
}
