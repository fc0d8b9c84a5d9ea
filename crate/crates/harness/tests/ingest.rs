use std::io::Write;
use std::path::Path;

use nfe_harness::ingest::ingest_dataset;
use nfe_harness::spec::{DatasetName, DatasetSpec};

const IMAGE: usize = 3 * 32 * 32;

/// Writes a CIFAR-10 style batch with `per_class` records of each class.
fn write_batch(path: &Path, per_class: usize, offset: u8) {
    let mut f = std::fs::File::create(path).unwrap();
    for i in 0..per_class * 10 {
        let label = (i % 10) as u8;
        f.write_all(&[label]).unwrap();
        let px: Vec<u8> = (0..IMAGE).map(|p| (p as u8).wrapping_mul(label).wrapping_add(offset)).collect();
        f.write_all(&px).unwrap();
    }
}

fn fake_cifar10(root: &Path, per_class: usize) {
    let dir = root.join("cifar-10-batches-bin");
    std::fs::create_dir_all(&dir).unwrap();
    for b in 1..=5 {
        write_batch(&dir.join(format!("data_batch_{b}.bin")), per_class, b as u8);
    }
    write_batch(&dir.join("test_batch.bin"), per_class, 9);
}

fn cifar_spec(subsample: f64) -> DatasetSpec {
    DatasetSpec {
        name: DatasetName::Cifar10,
        subsample,
        ..DatasetSpec::default()
    }
}

#[test]
fn full_split_sizes() {
    let root = tempfile::tempdir().unwrap();
    fake_cifar10(root.path(), 4);
    let s = ingest_dataset(&cifar_spec(1.0), Some(root.path())).unwrap();
    assert_eq!(s.train.len(), 5 * 40);
    assert_eq!(s.test.len(), 40);
    assert_eq!(s.train.image_shape(), (3, 32, 32));
}

#[test]
fn stratified_fraction_is_exact_per_class() {
    let root = tempfile::tempdir().unwrap();
    fake_cifar10(root.path(), 4);
    let s = ingest_dataset(&cifar_spec(0.1), Some(root.path())).unwrap();
    assert_eq!(s.train.class_counts(), vec![2; 10]);
}

#[test]
fn train_split_is_normalized_per_channel() {
    let root = tempfile::tempdir().unwrap();
    fake_cifar10(root.path(), 2);
    let s = ingest_dataset(&cifar_spec(1.0), Some(root.path())).unwrap();
    let (mean, std) = s.train.channel_stats();
    for c in 0..3 {
        assert!(mean[c].abs() < 1e-4, "{mean:?}");
        assert!((std[c] - 1.0).abs() < 1e-3, "{std:?}");
    }
}

#[test]
fn test_split_is_deterministic() {
    let root = tempfile::tempdir().unwrap();
    fake_cifar10(root.path(), 2);
    let a = ingest_dataset(&cifar_spec(0.5), Some(root.path())).unwrap();
    let b = ingest_dataset(&cifar_spec(0.5), Some(root.path())).unwrap();
    assert_eq!(a.test.images, b.test.images);
    assert_eq!(a.test.labels, b.test.labels);
}

#[test]
fn missing_and_corrupt_archives() {
    let root = tempfile::tempdir().unwrap();
    let err = ingest_dataset(&cifar_spec(1.0), Some(root.path())).unwrap_err();
    assert_eq!(err.class(), "dataset_missing");

    std::fs::write(root.path().join("cifar-10-binary.tar.gz"), b"not an archive").unwrap();
    let err = ingest_dataset(&cifar_spec(1.0), Some(root.path())).unwrap_err();
    assert_eq!(err.class(), "checksum_mismatch");
    assert_eq!(err.exit_code(), 4);

    let dir = root.path().join("cifar-10-batches-bin");
    fake_cifar10(root.path(), 1);
    std::fs::write(dir.join("test_batch.bin"), vec![0u8; 100]).unwrap();
    let err = ingest_dataset(&cifar_spec(1.0), Some(root.path())).unwrap_err();
    assert_eq!(err.class(), "malformed_archive");
}

#[test]
fn synthetic_splits_share_classes() {
    let spec = DatasetSpec {
        name: DatasetName::Synthetic,
        subsample: 1.0,
        ..DatasetSpec::default()
    };
    let s = ingest_dataset(&spec, None).unwrap();
    assert_eq!(s.train.class_counts(), vec![spec.synthetic_train_per_class; spec.synthetic_classes]);
    assert_eq!(s.test.class_counts(), vec![spec.synthetic_test_per_class; spec.synthetic_classes]);
}
