use std::fs;

use quantbench::data::{
    load_csv, make_synthetic, read_cifar_batch, write_csv, SyntheticKind, SyntheticSpec, CIFAR_RECORD,
};
use quantbench::nn::checkpoint::{load, save};
use quantbench::nn::{build_cnn, build_ffdnn, count_weight_bits};
use quantbench::quantizer::{direct_quantize, GroupSelection};
use quantbench::trainer::{evaluate, quantized_weights_on_grid, retrain_quantized, train_float, TrainConfig};
use quantbench::{Error, Rng};

#[test]
fn csv_data_through_train_quantize_retrain_and_disk() {
    let dir = tempfile::tempdir().unwrap();
    let ds = make_synthetic(&SyntheticSpec {
        kind: SyntheticKind::Blobs { dim: 5, spread: 0.3 },
        n: 600,
        classes: 3,
        seed: 8,
    })
    .unwrap();
    let csv = dir.path().join("blobs.csv");
    write_csv(&ds, &csv).unwrap();
    let back = load_csv(&csv, None).unwrap();
    assert_eq!(back, ds);

    let split = back.split(400, 100).unwrap();
    let net = build_ffdnn(5, 16, 2, 3, &mut Rng::new(1)).unwrap();
    let cfg = TrainConfig {
        max_epochs: 8,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let (float_net, log) = train_float(&net, &split, &cfg).unwrap();
    assert!(log.epochs.len() <= cfg.max_epochs + 1);
    let float_path = dir.path().join("float.ckpt");
    save(&float_net, &float_path).unwrap();
    let float_net = load(&float_path).unwrap();

    let (q, reports) = direct_quantize(&float_net, 2, &GroupSelection::All).unwrap();
    assert_eq!(reports.len(), 3);
    let q_path = dir.path().join("quantized.ckpt");
    save(&q, &q_path).unwrap();
    let q = load(&q_path).unwrap();
    assert!(quantized_weights_on_grid(&q));
    assert!(q.groups().iter().all(|g| g.shadow_weights.is_some()));

    let (r, _) = retrain_quantized(&q, &split, &cfg.for_retraining()).unwrap();
    assert!(quantized_weights_on_grid(&r));
    let test = split.test.as_ref().unwrap();
    let (fe, qe, re) = (
        evaluate(&float_net, test).unwrap(),
        evaluate(&q, test).unwrap(),
        evaluate(&r, test).unwrap(),
    );
    assert!(fe < 10.0, "float {fe}");
    assert!(re <= qe + 2.0, "retrained {re} direct {qe}");
    assert_eq!(
        count_weight_bits(&r, 2),
        2 * r.weight_count() as u64 + 32 * r.bias_count() as u64
    );
}

#[test]
fn cifar_records_feed_the_cnn() {
    let mut bytes = Vec::new();
    for i in 0..4u8 {
        bytes.push(i % 10);
        bytes.extend((0..CIFAR_RECORD - 1).map(|p| ((p * 7 + i as usize) % 256) as u8));
    }
    let ds = read_cifar_batch(&bytes).unwrap();
    assert_eq!(ds.sample_shape(), &[3, 32, 32]);
    assert_eq!(ds.labels, vec![0, 1, 2, 3]);
    assert_eq!(ds.features.data()[1], 7.0 / 255.0);
    let net = build_cnn(&[4], &mut Rng::new(2)).unwrap();
    let p = net.predict(&ds.features).unwrap();
    assert_eq!(p.shape(), &[4, 10]);

    let err = read_cifar_batch(&bytes[..100]).unwrap_err();
    assert!(matches!(err, Error::Format(_)));
    assert!(err.to_string().contains("30730000"));
}

#[test]
fn malformed_csv_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "a,b,label\n1,2,0\n3,x,1\n").unwrap();
    let err = load_csv(&path, None).unwrap_err();
    assert!(matches!(err, Error::Format(_)));
    assert!(err.to_string().contains("line 3"), "{err}");
}
