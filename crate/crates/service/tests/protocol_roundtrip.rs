use proptest::prelude::*;

use teleop_core::session::SessionState;
use teleop_service::protocol::*;

fn finite() -> impl Strategy<Value = f64> {
    -1e3f64..1e3
}

fn vec3() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(finite())
}

fn pose() -> impl Strategy<Value = WirePose> {
    (vec3(), prop::array::uniform4(-1.0f64..1.0)).prop_map(|(translation, quaternion)| WirePose {
        translation,
        quaternion,
    })
}

fn name() -> impl Strategy<Value = String> {
    "[a-z_]{1,8}"
}

fn state() -> impl Strategy<Value = SessionState> {
    prop::sample::select(vec![
        SessionState::Initializing,
        SessionState::AtBasePose,
        SessionState::WaitingForStart,
        SessionState::Approaching,
        SessionState::Running,
        SessionState::Resetting,
        SessionState::Shutdown,
    ])
}

fn limb_state() -> impl Strategy<Value = LimbState> {
    (
        name(),
        prop::collection::vec(finite(), 0..8),
        prop::collection::vec(finite(), 0..8),
        (finite(), finite()),
        (pose(), pose()),
        prop::array::uniform3(any::<bool>()),
        prop::collection::vec(vec3(), 0..4),
    )
        .prop_map(
            |(name, q_actual, q_cmd, (ga, gc), (ta, tc), f, frames)| LimbState {
                name,
                q_actual,
                q_cmd,
                gripper_actual: ga,
                gripper_cmd: gc,
                t_actual: ta,
                t_cmd: tc,
                flags: WireFlags {
                    limit: f[0],
                    velocity: f[1],
                    collision: f[2],
                },
                spheres: frames.clone(),
                frames,
            },
        )
}

fn message() -> impl Strategy<Value = WireMessage> {
    let state_update = (
        state(),
        finite(),
        any::<u64>(),
        0usize..5,
        prop::option::of(name()),
        prop::collection::vec(limb_state(), 0..3),
    )
        .prop_map(
            |(state, timestamp, tick, sessions_completed, recording, limbs)| {
                serde_json::to_value(StateUpdate {
                    state,
                    timestamp,
                    tick,
                    sessions_completed,
                    recording,
                    limbs,
                })
                .unwrap()
            },
        )
        .prop_map(|p| (MessageKind::StateUpdate, p));
    let leader_input = (
        name(),
        vec3(),
        prop::array::uniform4(-1.0f64..1.0),
        prop::option::of(0.0f64..1.0),
    )
        .prop_map(|(limb, delta_translation, delta_rotation_quat, gripper)| {
            serde_json::to_value(LeaderInput {
                limb,
                delta_translation,
                delta_rotation_quat,
                gripper,
            })
            .unwrap()
        })
        .prop_map(|p| (MessageKind::LeaderInput, p));
    let event = (
        state(),
        state(),
        prop::option::of(any::<u64>()),
        prop::option::of(finite()),
        prop::option::of(name()),
    )
        .prop_map(|(from, to, notice_seq, timestamp, message)| {
            let mut p = SessionEventPayload::request(EventName::Transition);
            p.from = Some(from);
            p.to = Some(to);
            p.notice_seq = notice_seq;
            p.timestamp = timestamp;
            p.message = message;
            serde_json::to_value(p).unwrap()
        })
        .prop_map(|p| (MessageKind::SessionEvent, p));
    let feedback = (
        finite(),
        prop::collection::vec(
            (
                name(),
                prop::collection::vec(finite(), 0..7),
                finite(),
                prop::option::of(prop::array::uniform6(finite())),
            ),
            0..3,
        ),
    )
        .prop_map(|(timestamp, limbs)| {
            serde_json::to_value(FeedbackUpdate {
                timestamp,
                limbs: limbs
                    .into_iter()
                    .map(|(n, tau, g, e)| LimbTorques {
                        leader_limb: n.clone(),
                        follower_limb: n,
                        bias: tau.clone(),
                        tracking: tau,
                        gripper: g,
                        eef_error: e,
                    })
                    .collect(),
            })
            .unwrap()
        })
        .prop_map(|p| (MessageKind::FeedbackUpdate, p));
    let error = (name(), prop::option::of(any::<u64>()))
        .prop_map(|(message, in_reply_to)| {
            serde_json::to_value(ErrorPayload {
                message,
                in_reply_to,
            })
            .unwrap()
        })
        .prop_map(|p| (MessageKind::Error, p));
    let info = (name(), finite(), prop::collection::vec(name(), 0..3))
        .prop_map(|(robot, loop_period, mapped_limbs)| {
            serde_json::to_value(ModelInfo {
                schema_version: SCHEMA_VERSION,
                robot,
                loop_period,
                limbs: vec![],
                console_limbs: mapped_limbs.clone(),
                mapped_limbs,
            })
            .unwrap()
        })
        .prop_map(|p| (MessageKind::ModelInfo, p));
    (
        prop_oneof![state_update, leader_input, event, feedback, error, info],
        any::<u64>(),
    )
        .prop_map(|((kind, payload), seq)| WireMessage { kind, seq, payload })
}

proptest! {
    #[test]
    fn encode_decode_identity(m in message()) {
        let back = WireMessage::decode(&m.encode()).unwrap();
        prop_assert_eq!(&back, &m);
        // typed payloads survive too
        match m.kind {
            MessageKind::StateUpdate => { back.payload_as::<StateUpdate>().unwrap(); }
            MessageKind::LeaderInput => { back.payload_as::<LeaderInput>().unwrap(); }
            MessageKind::SessionEvent => { back.payload_as::<SessionEventPayload>().unwrap(); }
            MessageKind::FeedbackUpdate => { back.payload_as::<FeedbackUpdate>().unwrap(); }
            MessageKind::ModelInfo => { back.payload_as::<ModelInfo>().unwrap(); }
            MessageKind::Error => { back.payload_as::<ErrorPayload>().unwrap(); }
        }
    }

    #[test]
    fn typed_state_update_roundtrip(limbs in prop::collection::vec(limb_state(), 1..3), tick in any::<u64>()) {
        let s = StateUpdate { state: SessionState::Running, timestamp: 1.5, tick, sessions_completed: 0, recording: None, limbs };
        let m = WireMessage::new(MessageKind::StateUpdate, 1, &s);
        prop_assert_eq!(WireMessage::decode(&m.encode()).unwrap().payload_as::<StateUpdate>().unwrap(), s);
    }
}
