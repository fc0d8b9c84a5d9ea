//! Dataset ingestion: CIFAR binary archives (checksum-verified) and
//! synthetic data, with normalization and stratified subsampling.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use md5::{Digest, Md5};
use ndarray::Array4;
use nfe_core::data::Dataset;

use crate::error::{HarnessError, Result};
use crate::spec::{DatasetName, DatasetSpec};

/// Environment variable naming the dataset cache directory.
pub const DATA_DIR_ENV: &str = "NFE_DATA_DIR";

const IMAGE_BYTES: usize = 3 * 32 * 32;

struct ArchiveInfo {
    archive: &'static str,
    md5: &'static str,
    dir: &'static str,
    train: &'static [&'static str],
    test: &'static [&'static str],
    label_bytes: usize,
    /// Byte within the label prefix that holds the class.
    label_index: usize,
    classes: usize,
}

const CIFAR10: ArchiveInfo = ArchiveInfo {
    archive: "cifar-10-binary.tar.gz",
    md5: "c32a1d4ab5d03f1284b67883e8d87530",
    dir: "cifar-10-batches-bin",
    train: &[
        "data_batch_1.bin",
        "data_batch_2.bin",
        "data_batch_3.bin",
        "data_batch_4.bin",
        "data_batch_5.bin",
    ],
    test: &["test_batch.bin"],
    label_bytes: 1,
    label_index: 0,
    classes: 10,
};

const CIFAR100: ArchiveInfo = ArchiveInfo {
    archive: "cifar-100-binary.tar.gz",
    md5: "03b5dce01913d631647c71ecec9e9cb8",
    dir: "cifar-100-binary",
    train: &["train.bin"],
    test: &["test.bin"],
    label_bytes: 2,
    label_index: 1,
    classes: 100,
};

/// Normalized train/test splits.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
    /// Per-channel statistics of the (subsampled) training split used for both splits.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Explicit directory, else `$NFE_DATA_DIR`.
pub fn data_dir(explicit: Option<&Path>) -> Result<PathBuf> {
    match explicit {
        Some(p) => Ok(p.to_path_buf()),
        None => std::env::var_os(DATA_DIR_ENV)
            .map(PathBuf::from)
            .ok_or_else(|| HarnessError::DatasetMissing(format!("set {DATA_DIR_ENV} or pass --data-dir"))),
    }
}

pub fn md5_file(path: &Path) -> Result<String> {
    let mut hasher = Md5::new();
    std::io::copy(&mut BufReader::new(File::open(path)?), &mut hasher)?;
    Ok(hex::encode(hasher.finalize()))
}

fn info(name: DatasetName) -> Option<&'static ArchiveInfo> {
    match name {
        DatasetName::Cifar10 => Some(&CIFAR10),
        DatasetName::Cifar100 => Some(&CIFAR100),
        DatasetName::Synthetic => None,
    }
}

/// Finds the extracted batch directory, extracting the archive after
/// verifying its MD5 checksum when only the archive is present.
fn locate(info: &ArchiveInfo, root: &Path) -> Result<PathBuf> {
    let dir = root.join(info.dir);
    let complete = |d: &Path| info.train.iter().chain(info.test).all(|f| d.join(f).is_file());
    if complete(&dir) {
        return Ok(dir);
    }
    let archive = root.join(info.archive);
    if !archive.is_file() {
        return Err(HarnessError::DatasetMissing(format!(
            "neither {} nor {} exists",
            dir.display(),
            archive.display()
        )));
    }
    let actual = md5_file(&archive)?;
    if actual != info.md5 {
        return Err(HarnessError::Checksum {
            file: archive.display().to_string(),
            expected: info.md5.to_string(),
            actual,
        });
    }
    log::info!("extracting {}", archive.display());
    let gz = flate2::read::GzDecoder::new(BufReader::new(File::open(&archive)?));
    tar::Archive::new(gz)
        .unpack(root)
        .map_err(|e| HarnessError::MalformedArchive(format!("{}: {e}", archive.display())))?;
    if !complete(&dir) {
        return Err(HarnessError::MalformedArchive(format!(
            "{} did not contain the expected batch files",
            archive.display()
        )));
    }
    Ok(dir)
}

/// Parses fixed-size records `label prefix + 3072 CHW bytes`, scaling
/// pixels to `[0, 1]`.
pub fn parse_records(bytes: &[u8], label_bytes: usize, label_index: usize, classes: usize) -> Result<(Vec<f32>, Vec<usize>)> {
    let record = label_bytes + IMAGE_BYTES;
    if bytes.is_empty() || !bytes.len().is_multiple_of(record) {
        return Err(HarnessError::MalformedArchive(format!(
            "{} bytes is not a multiple of the {record}-byte record",
            bytes.len()
        )));
    }
    let n = bytes.len() / record;
    let mut pixels = Vec::with_capacity(n * IMAGE_BYTES);
    let mut labels = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(record) {
        let y = rec[label_index] as usize;
        if y >= classes {
            return Err(HarnessError::MalformedArchive(format!("label {y} out of range")));
        }
        labels.push(y);
        pixels.extend(rec[label_bytes..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok((pixels, labels))
}

fn read_split(info: &ArchiveInfo, dir: &Path, files: &[&str]) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for f in files {
        let mut bytes = Vec::new();
        File::open(dir.join(f))?.read_to_end(&mut bytes)?;
        let (p, l) = parse_records(&bytes, info.label_bytes, info.label_index, info.classes)?;
        pixels.extend(p);
        labels.extend(l);
    }
    let n = labels.len();
    let images = Array4::from_shape_vec((n, 3, 32, 32), pixels).expect("record size checked");
    Ok(Dataset::new(images, labels, info.classes)?)
}

/// Loads, subsamples (stratified) and normalizes both splits. Augmentation
/// is applied later, per batch, to the training split only.
pub fn ingest_dataset(spec: &DatasetSpec, root: Option<&Path>) -> Result<Splits> {
    let (train, test) = match info(spec.name) {
        Some(info) => {
            let dir = locate(info, &data_dir(root)?)?;
            (read_split(info, &dir, info.train)?, read_split(info, &dir, info.test)?)
        }
        None => {
            let s = spec.synthetic_image_size;
            let make = |per_class, seed| {
                Dataset::synthetic(per_class, spec.synthetic_classes, (3, s, s), spec.synthetic_noise, seed)
            };
            // same prototypes for both splits, different noise draws
            let all = make(spec.synthetic_train_per_class + spec.synthetic_test_per_class, spec.seed)?;
            let k = spec.synthetic_classes;
            let cut = spec.synthetic_train_per_class * k;
            let idx: Vec<usize> = (0..all.len()).collect();
            (all.subset(&idx[..cut]), all.subset(&idx[cut..]))
        }
    };
    let mut train = train.stratified_subsample(spec.subsample, spec.seed)?;
    let mut test = test.stratified_subsample(spec.test_subsample, spec.seed.wrapping_add(1))?;
    let (mean, std) = train.channel_stats();
    let std: Vec<f64> = std.iter().map(|&s| if s > 0.0 { s } else { 1.0 }).collect();
    train.normalize(&mean, &std)?;
    test.normalize(&mean, &std)?;
    Ok(Splits { train, test, mean, std })
}
