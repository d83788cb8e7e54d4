//! Dataset loading for experiment configs.

use std::path::PathBuf;

use nearlin_core::dataio::{
    assemble_and_whiten, downsample, load_mnist, read_cache, synthetic_gaussian, whiten_matrix, write_cache, EvalSet,
    Split, WhitenOptions, WhitenedDataset,
};
use nearlin_core::densela::matmul_blocked;

use crate::cache::sha256_hex;
use crate::config::{DatasetConfig, MnistSource, SyntheticSource};
use crate::error::CliError;

pub const MNIST_ENV: &str = "NEARLIN_MNIST_DIR";

pub struct LoadedData {
    pub train: WhitenedDataset,
    pub test: Option<EvalSet>,
    /// SHA-256 over the whitened training inputs, labels and feature mask.
    pub hash: String,
}

pub fn mnist_dir(src: &MnistSource) -> Result<PathBuf, CliError> {
    src.mnist_path
        .clone()
        .or_else(|| std::env::var_os(MNIST_ENV).map(PathBuf::from))
        .ok_or_else(|| CliError::Config(format!("dataset.mnist.mnist_path: not set and {MNIST_ENV} is empty")))
}

pub fn dataset_hash(ds: &WhitenedDataset) -> String {
    let mut bytes = Vec::with_capacity(8 * (ds.x_tilde.as_slice().len() + ds.m) + 8 * ds.feature_mask.len());
    for v in ds.x_tilde.as_slice().iter().chain(ds.y.as_slice()) {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for &i in &ds.feature_mask {
        bytes.extend_from_slice(&(i as u64).to_le_bytes());
    }
    sha256_hex(&bytes)
}

fn load_mnist_train(src: &MnistSource) -> Result<WhitenedDataset, CliError> {
    if let Some(cache) = &src.cache_path {
        if cache.exists() {
            return Ok(read_cache(cache)?);
        }
    }
    let dir = mnist_dir(src)?;
    let (raw, labels) = load_mnist(&dir, Split::Train)?;
    let mut images = downsample(&raw, 28 / src.downsample_to)?;
    let mut labels = labels;
    if let Some(n) = src.train_count {
        images = images.truncate(n);
        labels.truncate(n);
    }
    let ds = assemble_and_whiten(
        &images,
        &labels,
        WhitenOptions {
            rank_tol: src.rank_tol,
            drop_dead_features: src.drop_dead_features,
        },
    )?;
    if let Some(cache) = &src.cache_path {
        if let Some(parent) = cache.parent() {
            std::fs::create_dir_all(parent)?;
        }
        write_cache(&ds, cache)?;
    }
    Ok(ds)
}

fn load_mnist_test(src: &MnistSource, train: &WhitenedDataset) -> Result<EvalSet, CliError> {
    let dir = mnist_dir(src)?;
    let (raw, mut labels) = load_mnist(&dir, Split::Test)?;
    let mut images = downsample(&raw, 28 / src.downsample_to)?;
    if let Some(n) = src.test_count {
        images = images.truncate(n);
        labels.truncate(n);
    }
    Ok(train.whiten_images(&images, &labels)?)
}

fn teacher(src: &SyntheticSource) -> Vec<f64> {
    src.teacher.clone().unwrap_or_else(|| {
        let mut t = vec![0.0; src.d];
        t[0] = 1.0;
        t
    })
}

/// Synthetic data; with `test_m`, one draw of `m + test_m` points is split and the
/// test part mapped through the training whitening.
fn load_synthetic(src: &SyntheticSource, need_test: bool) -> Result<(WhitenedDataset, Option<EvalSet>), CliError> {
    let t = teacher(src);
    match (need_test, src.test_m) {
        (true, Some(tm)) => {
            let all = synthetic_gaussian(src.d, src.m + tm, src.seed, &t)?;
            let train_idx: Vec<usize> = (0..src.m).collect();
            let test_idx: Vec<usize> = (src.m..src.m + tm).collect();
            let train = whiten_matrix(
                all.x.select_columns(&train_idx),
                all.y.select_columns(&train_idx),
                1e-8,
            )?;
            let x_test = all.x.select_columns(&test_idx);
            let x_tilde = matmul_blocked(&train.sigma_x_inv_sqrt, &x_test)
                .map_err(|e| CliError::Data(e.to_string()))?;
            let test = EvalSet {
                x_tilde,
                y: all.y.select_columns(&test_idx),
            };
            Ok((train, Some(test)))
        }
        (true, None) => Err(CliError::Config("dataset.synthetic.test_m: required for a test split".into())),
        (false, _) => Ok((synthetic_gaussian(src.d, src.m, src.seed, &t)?, None)),
    }
}

pub fn load_dataset(cfg: &DatasetConfig, need_test: bool) -> Result<LoadedData, CliError> {
    let (train, test) = match cfg {
        DatasetConfig::Mnist(src) => {
            let train = load_mnist_train(src)?;
            let test = if need_test {
                Some(load_mnist_test(src, &train)?)
            } else {
                None
            };
            (train, test)
        }
        DatasetConfig::Synthetic(src) => load_synthetic(src, need_test)?,
    };
    let hash = dataset_hash(&train);
    Ok(LoadedData { train, test, hash })
}
