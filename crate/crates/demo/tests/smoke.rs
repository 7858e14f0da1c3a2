//! The demo types compile to plain Rust off-wasm; drive each of the three
//! views far enough to prove the JSON surfaces stay well-formed.

use reachmon_demo::{IntentLab, ScenarioPlayer, TubeExplorer};

#[test]
fn scenario_player_steps_and_serializes() {
    let mut player = ScenarioPlayer::new("crossing", 12, 1.0, "medium").unwrap();
    let path: Vec<[f64; 2]> = serde_json::from_str(&player.path_json()).unwrap();
    assert!(path.len() > 50);
    player.tick(150).unwrap(); // 1.5 s: past the first decisions and estimates
    let frame: serde_json::Value = serde_json::from_str(&player.frame_json()).unwrap();
    assert!(!frame["mode"].as_str().unwrap().is_empty());
    assert!(frame["t"].as_f64().unwrap() >= 1.49);
    assert_eq!(frame["tubes"].as_array().unwrap().len(), 3);
    assert!(frame["intents"][0].as_array().unwrap().len() == 3);
    assert!(!player.finished());
}

#[test]
fn intent_lab_converges_on_clean_measurements() {
    let mut lab = IntentLab::new(0.0, 3).unwrap();
    lab.reset(0.0, 0.0, 1);
    let mut last = None;
    for _ in 0..20 {
        last = Some(lab.step_json().unwrap());
    }
    let frame: serde_json::Value = serde_json::from_str(&last.unwrap()).unwrap();
    assert_eq!(frame["map_intent"], 1);
    assert!(frame["intents"][1].as_f64().unwrap() > 0.8);
    assert!(!frame["predicted"].as_array().unwrap().is_empty());
}

#[test]
fn tube_explorer_produces_nested_xy_boxes() {
    let explorer = TubeExplorer::new().unwrap();
    let json = explorer
        .compute_json(2.0, 0.0, 2.0, 3.0, 1.0, 8, "trackspeed")
        .unwrap();
    let frame: serde_json::Value = serde_json::from_str(&json).unwrap();
    let low = frame["low"].as_array().unwrap();
    let medium = frame["medium"].as_array().unwrap();
    let high = frame["high"].as_array().unwrap();
    assert_eq!(low.len(), medium.len());
    assert_eq!(low.len(), high.len());
    // xy nesting visible in the serialized boxes
    for k in 0..low.len() {
        for d in 0..2 {
            assert!(low[k]["min"][d].as_f64() >= high[k]["min"][d].as_f64());
            assert!(low[k]["max"][d].as_f64() <= high[k]["max"][d].as_f64());
        }
    }
    assert!(!frame["center_trace"].as_array().unwrap().is_empty());
}
