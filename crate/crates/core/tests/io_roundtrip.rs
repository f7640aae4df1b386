use evdn::events::normalize_segment;
use evdn::events::{
    decode_bin, encode_bin, encode_csv, parse_csv, read_events, write_events, Format,
};
use evdn::net::{load_checkpoint, model_forward, save_checkpoint, ModelConfig, ModelWeights};
use evdn::synth::{generate_scene, NoiseConfig, SceneConfig};

fn scene() -> evdn::events::EventStream {
    let cfg = SceneConfig {
        width: 20,
        height: 16,
        duration_s: 0.05,
        ..SceneConfig::default()
    };
    generate_scene(&cfg, &NoiseConfig::default(), 11)
        .unwrap()
        .stream
}

#[test]
fn binary_keeps_events_and_labels() {
    let s = scene();
    let back = decode_bin(&encode_bin(&s)).unwrap();
    assert_eq!(back.events, s.events);
    assert_eq!(back.labels, s.labels);
    assert_eq!((back.width, back.height), (s.width, s.height));
}

#[test]
fn csv_keeps_events() {
    let s = scene();
    let back = parse_csv(&encode_csv(&s)).unwrap();
    assert_eq!(back.events, s.events);
}

#[test]
fn files_roundtrip_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let s = scene();
    for (name, fmt) in [("a.csv", Format::Csv), ("a.evdn", Format::Bin)] {
        let path = dir.path().join(name);
        write_events(&s, &path, fmt).unwrap();
        assert_eq!(
            read_events(&path, Format::from_path(&path)).unwrap().events,
            s.events
        );
    }
}

#[test]
fn checkpoint_reproduces_logits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig::tiny();
    let w = ModelWeights::init(&cfg, 21).unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &w, &cfg).unwrap();
    let (w2, cfg2) = load_checkpoint(&path).unwrap();
    assert_eq!(cfg2, cfg);
    let cloud = normalize_segment(&scene().slice(0, 200)).unwrap();
    let a = model_forward(&cloud, &w, &cfg).unwrap();
    let b = model_forward(&cloud, &w2, &cfg2).unwrap();
    assert_eq!(a.max_abs_diff(&b), 0.0);
}
