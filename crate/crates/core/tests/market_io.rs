use std::path::PathBuf;

use tvo_core::error::TvoError;
use tvo_core::market::{load_market, market_to_json, parse_market, save_market};

fn bundled(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/markets").join(name)
}

#[test]
fn bundled_markets_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["bs2.json", "bs3.json", "lv2.json"] {
        let market = load_market(bundled(name)).unwrap();
        let path = dir.path().join(name);
        save_market(&market, &path).unwrap();
        let back = load_market(&path).unwrap();
        assert_eq!(market, back, "{name}");
        assert_eq!(market_to_json(&market), market_to_json(&back));
    }
}

const TWO_ASSETS: &str = r#"{
  "assets": [
    {"name": "A", "spot": 1.0, "carry_pillars": [[0.0, 0.01]], "vol": {"type": "bs", "pillars": [[0.0, 0.2]]}},
    {"name": "B", "spot": 2.0, "carry_pillars": [[0.0, 0.02]], "vol": {"type": "bs", "pillars": [[0.0, 0.3]]}}
  ],
  "rate_pillars": [[0.0, 0.01]],
  "correlation": [[1.0, RHO], [RHO, 1.0]]
}"#;

#[test]
fn correlation_out_of_range_is_named() {
    let err = parse_market(&TWO_ASSETS.replace("RHO", "1.2")).unwrap_err();
    assert!(err.is_input_error());
    assert!(err.to_string().contains("correlation"), "{err}");
    assert!(parse_market(&TWO_ASSETS.replace("RHO", "0.3")).is_ok());
}

#[test]
fn unsorted_surface_times_name_asset_and_axis() {
    let doc = r#"{
      "assets": [
        {"name": "A", "spot": 1.0, "carry_pillars": [[0.0, 0.01]],
         "vol": {"type": "lv", "times": [0.0, 1.0, 0.5], "log_moneyness": [-0.1, 0.1],
                 "values": [[0.2, 0.2], [0.2, 0.2], [0.2, 0.2]]}}
      ],
      "rate_pillars": [[0.0, 0.01]],
      "correlation": [[1.0]]
    }"#;
    let err = parse_market(doc).unwrap_err();
    match &err {
        TvoError::Validation { path, .. } => {
            assert!(path.contains("assets[0]"), "{path}");
            assert!(path.contains("times"), "{path}");
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn missing_file_is_an_input_error() {
    let err = load_market("/definitely/not/here.json").unwrap_err();
    assert!(err.is_input_error());
}
