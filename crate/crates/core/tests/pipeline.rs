//! End-to-end library pipeline: corpus, training, model file, streaming.

use std::sync::atomic::AtomicBool;
use std::time::Duration;

use tendonsense::motion::{generate_corpus, window_and_normalize, CorpusConfig, SplitSpec};
use tendonsense::nn::{self, load_model, save_model, Model, ModelKind, ModelSpec, TrainConfig};
use tendonsense::nonlin::CorruptionParams;
use tendonsense::par::Exec;
use tendonsense::suitsim::{RoutingLayout, CHANNELS};
use tendonsense::teleop::{
    pred_vs_truth, read_sink_log, run_pipeline, window_to_zyx, zyx_to_joint, InferenceConfig, RobotSink, SinkClient,
    SinkMode, StreamSource,
};

fn small_model() -> (Model, tendonsense::motion::Corpus) {
    let corpus = generate_corpus(
        &CorpusConfig {
            scale: 0.03,
            random_blocks: 3,
            ..CorpusConfig::default()
        },
        &RoutingLayout::default_layout(),
        &CorruptionParams::default(),
        Exec::default(),
    )
    .unwrap();
    let data = window_and_normalize(&corpus, 5, &SplitSpec::default()).unwrap();
    let spec = ModelSpec {
        lstm_hidden: 8,
        fc_widths: vec![16, 8],
        ..ModelSpec::new(ModelKind::ENNet, 5)
    };
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 64,
        ..TrainConfig::default()
    };
    let (params, _) = nn::train(&spec, &data.train, None, &cfg, Exec::default()).unwrap();
    (
        Model {
            spec,
            scaler: data.train.scaler,
            params,
        },
        corpus,
    )
}

#[test]
fn streamed_commands_equal_offline_inference() {
    let (model, corpus) = small_model();
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("m.model");
    save_model(&model_path, &model).unwrap();
    let model = load_model(&model_path, Some(&model.spec)).unwrap();

    let record = corpus.trajectories.iter().max_by_key(|r| r.len()).unwrap();
    let csv = dir.path().join("replay.csv");
    std::fs::write(&csv, record.to_csv()).unwrap();
    let source = StreamSource::replay_file(&csv, 250.0, true).unwrap();

    let log = dir.path().join("sink.csv");
    let sink = RobotSink::bind("127.0.0.1:0", SinkMode::Streaming, Duration::ZERO).unwrap();
    let addr = sink.local_addr().unwrap();
    let log2 = log.clone();
    let h = std::thread::spawn(move || sink.run(&log2));
    let client = SinkClient::connect(addr, SinkMode::Streaming).unwrap();
    let cfg = InferenceConfig {
        duration: Some(Duration::from_millis(1500)),
        ..InferenceConfig::default()
    };
    let stats = run_pipeline(&model, &source, client, &cfg, &AtomicBool::new(false)).unwrap();
    let sink_stats = h.join().unwrap().unwrap();
    assert_eq!(sink_stats.seq_regressions, 0);
    assert_eq!(stats.torn_reads, 0);
    assert_eq!(stats.commands_delivered, sink_stats.logged);

    let rows = read_sink_log(&log).unwrap();
    assert!(rows.len() > 50, "{}", rows.len());
    let n = model.spec.n_steps as u64;
    for r in &rows {
        let end = (r.t_capture * 250.0).round() as u64;
        let window: Vec<[f64; CHANNELS]> = (end + 1 - n..=end).map(|k| source.frame(k).unwrap().frame.s).collect();
        let offline = window_to_zyx(&model, &window).unwrap();
        assert_eq!(offline, r.zyx, "seq {}", r.seq);
    }

    let paired = pred_vs_truth(&rows, &source).unwrap();
    for (p, r) in paired.iter().zip(&rows) {
        let q = zyx_to_joint(r.zyx);
        assert!((p.theta_pred - q.theta.to_degrees()).abs() < 1e-9);
        let k = source.source_index((r.t_capture * 250.0).round() as u64).unwrap();
        assert_eq!(p.theta_true, record.angles[k].theta.to_degrees());
    }
}

#[test]
fn sequential_and_parallel_training_agree() {
    let (model, corpus) = small_model();
    let data = window_and_normalize(&corpus, 5, &SplitSpec::default()).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 100,
        ..TrainConfig::default()
    };
    let (a, ra) = nn::train(&model.spec, &data.train, Some(&data.test), &cfg, Exec::Sequential).unwrap();
    let (b, rb) = nn::train(&model.spec, &data.train, Some(&data.test), &cfg, Exec::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra.epochs, rb.epochs);
    assert_eq!(ra.test_rmse_deg, rb.test_rmse_deg);
}

#[test]
fn model_file_rejects_wrong_spec() {
    let (model, _) = small_model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.model");
    save_model(&path, &model).unwrap();
    let other = ModelSpec::new(ModelKind::ENNet, 5);
    assert!(load_model(&path, Some(&other)).unwrap_err().is_validation());
}
