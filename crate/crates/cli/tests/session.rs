use deskbot_cli::protocol::ClientMessage;
use deskbot_cli::{Mode, Session, SessionConfig, Toggle};
use deskbot_core::datakit::{self, load_session, read_manifest};
use deskbot_core::nn::{self, PolicyArchitecture};
use deskbot_core::Command;

fn teleop(out: &std::path::Path) -> Session {
    Session::new(SessionConfig {
        mode: Mode::Teleop,
        route: "R2".into(),
        out: out.to_path_buf(),
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn full_forward_reaches_the_board_and_moves_the_robot() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = teleop(dir.path());
    let start = s.world().unwrap().robot.pose;
    s.apply(ClientMessage::Ctrl { al: 1.0, ar: 1.0 }).unwrap();
    let mut last = None;
    for _ in 0..10 {
        last = s.tick().unwrap();
    }
    let t = last.unwrap().telemetry;
    assert_eq!((t.pwm_l, t.pwm_r), (255, 255));
    let h = start.heading;
    let along = (t.pose.x - start.x) * h.cos() + (t.pose.y - start.y) * h.sin();
    assert!(along > 0.2, "advanced {along} m");
}

#[test]
fn latest_control_wins() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = teleop(dir.path());
    for (al, ar) in [(1.0, 1.0), (0.0, 0.0), (-1.0, 0.5)] {
        s.apply(ClientMessage::Ctrl { al, ar }).unwrap();
    }
    let t = s.tick().unwrap().unwrap().telemetry;
    assert_eq!((t.pwm_l, t.pwm_r), (-255, 128));
}

#[test]
fn rejected_toggle_leaves_state() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = teleop(dir.path());
    assert!(s.apply(ClientMessage::Toggle { what: Toggle::Policy, on: true }).is_err());
    let t = s.tick().unwrap().unwrap().telemetry;
    assert!(!t.policy);
}

#[test]
fn logging_ten_seconds_records_two_hundred_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = teleop(dir.path());
    s.apply(ClientMessage::Cmd { dir: Command::Left }).unwrap();
    s.apply(ClientMessage::Ctrl { al: 0.4, ar: 0.4 }).unwrap();
    s.apply(ClientMessage::Toggle { what: Toggle::Logging, on: true }).unwrap();
    for _ in 0..200 {
        s.tick().unwrap();
    }
    s.apply(ClientMessage::Toggle { what: Toggle::Logging, on: false }).unwrap();
    let session = s.last_recording().unwrap().to_path_buf();
    assert_eq!(session, dir.path().join("session_000"));
    let rows = read_manifest(&session).unwrap();
    assert_eq!(rows.len(), 200);
    assert!(rows.iter().all(|r| r.command == Command::Left));
    assert!((rows[0].label_action[0] - 0.7).abs() < 1e-12);
    let samples = load_session(&session, 0, 64, 24).unwrap();
    assert_eq!(samples.len(), 200);
    let meta: datakit::SessionMeta =
        serde_json::from_str(&std::fs::read_to_string(session.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta.frames, 200);
    assert!(meta.valid);
}

#[test]
fn policy_toggle_reports_prediction_and_timing() {
    let dir = tempfile::tempdir().unwrap();
    let arch = PolicyArchitecture::default().with_input(64, 24);
    let net = nn::Network::<f32>::init(arch.clone(), 3).unwrap();
    let weights = dir.path().join("weights.obnw");
    nn::io::save(&net, &weights).unwrap();
    std::fs::write(dir.path().join("arch.json"), serde_json::to_string(&arch).unwrap()).unwrap();
    let mut s = Session::new(SessionConfig {
        mode: Mode::Teleop,
        route: "R2".into(),
        weights: Some(weights),
        out: dir.path().to_path_buf(),
        ..Default::default()
    })
    .unwrap();
    let t = s.tick().unwrap().unwrap().telemetry;
    assert!(t.predicted.is_none() && t.inference_ms.is_none());
    s.apply(ClientMessage::Toggle { what: Toggle::Policy, on: true }).unwrap();
    let t = s.tick().unwrap().unwrap().telemetry;
    let p = t.predicted.expect("prediction while the policy drives");
    assert!(p.iter().all(|v| (-1.0..=1.0).contains(v)));
    assert!(t.inference_ms.unwrap() >= 0.0);
    assert!(t.policy);
}

#[test]
fn config_validation() {
    let bad_port = SessionConfig {
        port: 80,
        ..Default::default()
    };
    assert!(bad_port.validate().is_err());
    let no_weights = SessionConfig {
        mode: Mode::Policy,
        ..Default::default()
    };
    assert!(no_weights.validate().is_err());
    let unknown = SessionConfig {
        route: "R9".into(),
        ..Default::default()
    };
    assert!(unknown.validate().is_err());
    let parsed: SessionConfig = serde_json::from_str(r#"{"mode":"collect","route":"R3","minutes":0.5}"#).unwrap();
    assert_eq!(parsed.mode, Mode::Collect);
    assert!(parsed.validate().is_ok());
    assert!(serde_json::from_str::<SessionConfig>(r#"{"mood":"collect"}"#).is_err());
}

#[test]
fn follow_mode_servoes_toward_the_person() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = Session::new(SessionConfig {
        mode: Mode::Follow,
        out: dir.path().to_path_buf(),
        ..Default::default()
    })
    .unwrap();
    let mut moved = false;
    for _ in 0..40 {
        let t = s.tick().unwrap().unwrap().telemetry;
        assert!(t.predicted.is_some());
        moved |= t.pwm_l != 0 || t.pwm_r != 0;
    }
    assert!(moved);
}
