//! MNIST IDX ingestion, pooling, label binarization, whitening, and a binary
//! cache for whitened datasets.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::densela::{
    self, gemm, inv_sqrt_psd, matmul_blocked, sqrt_psd, vector_norm, DenseMatrix, LinalgError,
    StridedRef,
};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const CACHE_MAGIC: &[u8; 4] = b"NLB1";
const MASK_TAG: &[u8; 4] = b"MASK";

/// Default relative eigenvalue floor for the full-rank check.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("truncated file {path}: expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{height}x{width} image is not divisible by pooling factor {factor}")]
    NotDivisible {
        height: usize,
        width: usize,
        factor: usize,
    },
    #[error("label {label} at index {index} is not a digit")]
    BadLabel { index: usize, label: u8 },
    #[error("need at least as many samples as features: m = {m} < d = {d}")]
    TooFewSamples { m: usize, d: usize },
    #[error("data invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, DataError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Raw 8-bit images as stored in IDX files.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImageSet {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

/// Real-valued images, e.g. after pooling. Intensities stay on the 0..=255 scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl ImageSet {
    pub fn features(&self) -> usize {
        self.height * self.width
    }

    pub fn image(&self, k: usize) -> &[f64] {
        let n = self.features();
        &self.pixels[k * n..(k + 1) * n]
    }

    /// The first `count` images.
    pub fn truncate(&self, count: usize) -> ImageSet {
        let count = count.min(self.count);
        ImageSet {
            count,
            height: self.height,
            width: self.width,
            pixels: self.pixels[..count * self.features()].to_vec(),
        }
    }
}

impl From<&RawImageSet> for ImageSet {
    fn from(raw: &RawImageSet) -> Self {
        ImageSet {
            count: raw.count,
            height: raw.height,
            width: raw.width,
            pixels: raw.pixels.iter().map(|&p| p as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdxKind {
    Images,
    Labels,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IdxData {
    Images(RawImageSet),
    Labels(Vec<u8>),
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn check_len(path: &Path, bytes: &[u8], expected: usize) -> Result<()> {
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(())
}

fn check_magic(path: &Path, bytes: &[u8], expected: u32) -> Result<()> {
    check_len(path, bytes, 4)?;
    let found = be_u32(bytes, 0);
    if found != expected {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

pub fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<RawImageSet> {
    check_magic(path, bytes, IMAGES_MAGIC)?;
    check_len(path, bytes, 16)?;
    let count = be_u32(bytes, 4) as usize;
    let height = be_u32(bytes, 8) as usize;
    let width = be_u32(bytes, 12) as usize;
    let expected = 16 + count * height * width;
    if bytes.len() != expected {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(RawImageSet {
        count,
        height,
        width,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(path, bytes, LABELS_MAGIC)?;
    check_len(path, bytes, 8)?;
    let count = be_u32(bytes, 4) as usize;
    let expected = 8 + count;
    if bytes.len() != expected {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(bytes[8..].to_vec())
}

pub fn load_idx(path: &Path, kind: IdxKind) -> Result<IdxData> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    match kind {
        IdxKind::Images => parse_idx_images(path, &bytes).map(IdxData::Images),
        IdxKind::Labels => parse_idx_labels(path, &bytes).map(IdxData::Labels),
    }
}

pub fn load_idx_images(path: &Path) -> Result<RawImageSet> {
    match load_idx(path, IdxKind::Images)? {
        IdxData::Images(set) => Ok(set),
        IdxData::Labels(_) => unreachable!(),
    }
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    match load_idx(path, IdxKind::Labels)? {
        IdxData::Labels(l) => Ok(l),
        IdxData::Images(_) => unreachable!(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Loads one MNIST split from `dir`, checking that image and label counts agree.
pub fn load_mnist(dir: &Path, split: Split) -> Result<(RawImageSet, Vec<u8>)> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let images = load_idx_images(&dir.join(format!("{prefix}-images-idx3-ubyte")))?;
    let labels = load_idx_labels(&dir.join(format!("{prefix}-labels-idx1-ubyte")))?;
    if images.count != labels.len() {
        return Err(DataError::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    Ok((images, labels))
}

/// Non-overlapping `factor x factor` average pooling.
pub fn downsample(raw: &RawImageSet, factor: usize) -> Result<ImageSet> {
    downsample_real(&ImageSet::from(raw), factor)
}

pub fn downsample_real(src: &ImageSet, factor: usize) -> Result<ImageSet> {
    if factor == 0 || !src.height.is_multiple_of(factor) || !src.width.is_multiple_of(factor) {
        return Err(DataError::NotDivisible {
            height: src.height,
            width: src.width,
            factor,
        });
    }
    if factor == 1 {
        return Ok(src.clone());
    }
    let (h, w) = (src.height / factor, src.width / factor);
    let area = (factor * factor) as f64;
    let mut pixels = Vec::with_capacity(src.count * h * w);
    for k in 0..src.count {
        let img = src.image(k);
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for di in 0..factor {
                    let row = (i * factor + di) * src.width + j * factor;
                    acc += img[row..row + factor].iter().sum::<f64>();
                }
                pixels.push(acc / area);
            }
        }
    }
    Ok(ImageSet {
        count: src.count,
        height: h,
        width: w,
        pixels,
    })
}

/// Digits 0-4 map to +1, digits 5-9 to -1.
pub fn binarize_labels(labels: &[u8]) -> Result<DenseMatrix> {
    let mut y = Vec::with_capacity(labels.len());
    for (index, &label) in labels.iter().enumerate() {
        match label {
            0..=4 => y.push(1.0),
            5..=9 => y.push(-1.0),
            _ => return Err(DataError::BadLabel { index, label }),
        }
    }
    Ok(DenseMatrix::row_vector(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WhitenOptions {
    pub rank_tol: f64,
    /// Drop pixels that are zero in every training image before the rank check.
    pub drop_dead_features: bool,
}

impl Default for WhitenOptions {
    fn default() -> Self {
        Self {
            rank_tol: DEFAULT_RANK_TOL,
            drop_dead_features: false,
        }
    }
}

/// Training data with its whitening transform.
#[derive(Debug, Clone, PartialEq)]
pub struct WhitenedDataset {
    /// `d x m`, columns in the unit ball.
    pub x: DenseMatrix,
    /// `1 x m`, entries ±1.
    pub y: DenseMatrix,
    /// `Σ_X^{-1/2} X`, satisfies `X̃ X̃ᵀ = m I`.
    pub x_tilde: DenseMatrix,
    pub sigma_x: DenseMatrix,
    pub sigma_x_inv_sqrt: DenseMatrix,
    /// `‖Y X̃⁺‖`.
    pub s: f64,
    /// `‖Y Xᵀ Σ_X^{-1/2}‖`, equal to `m s`.
    pub s_raw: f64,
    pub d: usize,
    pub m: usize,
    /// Indices of the kept input features in the original pixel layout.
    pub feature_mask: Vec<usize>,
    /// Pixel count before masking; inputs are scaled by `1/sqrt(input_dim)`.
    pub input_dim: usize,
}

/// Inputs mapped through a training set's whitening transform.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub x_tilde: DenseMatrix,
    pub y: DenseMatrix,
}

impl EvalSet {
    pub fn len(&self) -> usize {
        self.y.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl WhitenedDataset {
    /// Applies the training normalization, mask and `Σ_X^{-1/2}` to other images.
    pub fn whiten_images(&self, images: &ImageSet, labels: &[u8]) -> Result<EvalSet> {
        if images.count != labels.len() {
            return Err(DataError::CountMismatch {
                images: images.count,
                labels: labels.len(),
            });
        }
        if images.features() != self.input_dim {
            return Err(DataError::Invariant(format!(
                "expected {} pixels per image, got {}",
                self.input_dim,
                images.features()
            )));
        }
        let x = feature_matrix(images, &self.feature_mask, self.input_dim);
        let y = binarize_labels(labels)?;
        let x_tilde = matmul_blocked(&self.sigma_x_inv_sqrt, &x)?;
        Ok(EvalSet { x_tilde, y })
    }

    /// The training split itself as an [`EvalSet`].
    pub fn train_set(&self) -> EvalSet {
        EvalSet {
            x_tilde: self.x_tilde.clone(),
            y: self.y.clone(),
        }
    }

    /// Checks every documented invariant, returning the first violation.
    pub fn validate(&self) -> Result<()> {
        for k in 0..self.m {
            let mut norm = 0.0;
            for i in 0..self.d {
                norm += self.x[(i, k)] * self.x[(i, k)];
            }
            if norm.sqrt() > 1.0 + 1e-12 {
                return Err(DataError::Invariant(format!(
                    "column {k} has norm {} > 1",
                    norm.sqrt()
                )));
            }
        }
        if let Some(k) = self.y.as_slice().iter().position(|&v| v != 1.0 && v != -1.0) {
            return Err(DataError::Invariant(format!("label {k} is not ±1")));
        }
        let dev = densela::whitening_deviation(&self.x_tilde, self.m);
        if dev > 1e-6 * (self.d as f64).sqrt() {
            return Err(DataError::Invariant(format!(
                "whitening deviation {dev:e}"
            )));
        }
        if !(self.s > 0.0 && self.s <= 1.0 + 1e-12) {
            return Err(DataError::Invariant(format!("s = {} outside (0, 1]", self.s)));
        }
        Ok(())
    }

    /// `Y X̃ᵀ / m`, the target of the optimal linear map.
    pub fn linear_target(&self) -> Vec<f64> {
        let m = self.m as f64;
        let mut c = vec![0.0; self.d];
        gemm(
            1,
            self.m,
            self.d,
            StridedRef::row_major(self.y.as_slice(), self.m),
            StridedRef::transposed(self.x_tilde.as_slice(), self.m),
            &mut c,
            0.0,
        );
        c.iter_mut().for_each(|v| *v /= m);
        c
    }

    /// Outputs of the optimal linear model `x ↦ Y X̃⁺ x` on the training inputs.
    pub fn linear_optimum_outputs(&self) -> Vec<f64> {
        let c = self.linear_target();
        let mut out = vec![0.0; self.m];
        gemm(
            1,
            self.d,
            self.m,
            StridedRef::row_major(&c, self.d),
            StridedRef::row_major(self.x_tilde.as_slice(), self.m),
            &mut out,
            0.0,
        );
        out
    }

    /// `(1/2m) ‖Y - Y X̃⁺ X̃‖²` and the misclassification risk of the optimal linear model.
    pub fn linear_optimum(&self) -> (f64, f64) {
        let out = self.linear_optimum_outputs();
        let y = self.y.as_slice();
        let loss = out
            .iter()
            .zip(y)
            .map(|(f, y)| (y - f) * (y - f))
            .sum::<f64>()
            / (2.0 * self.m as f64);
        let risk = crate::risk::empirical_risk(&out, y, crate::risk::RiskKind::Misclass, None)
            .expect("matching shapes");
        (loss, risk)
    }
}

/// `d x m` matrix of masked pixels scaled into the unit ball.
fn feature_matrix(images: &ImageSet, mask: &[usize], input_dim: usize) -> DenseMatrix {
    let scale = 1.0 / (255.0 * (input_dim as f64).sqrt());
    let m = images.count;
    let mut x = DenseMatrix::zeros(mask.len(), m);
    for k in 0..m {
        let img = images.image(k);
        for (i, &p) in mask.iter().enumerate() {
            x[(i, k)] = img[p] * scale;
        }
    }
    x
}

/// Builds `X`, `Y`, the whitening transform, and `s` from images and digit labels.
pub fn assemble_and_whiten(
    images: &ImageSet,
    labels: &[u8],
    opts: WhitenOptions,
) -> Result<WhitenedDataset> {
    if images.count != labels.len() {
        return Err(DataError::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    let input_dim = images.features();
    let mask: Vec<usize> = if opts.drop_dead_features {
        (0..input_dim)
            .filter(|&p| (0..images.count).any(|k| images.image(k)[p] != 0.0))
            .collect()
    } else {
        (0..input_dim).collect()
    };
    let x = feature_matrix(images, &mask, input_dim);
    let y = binarize_labels(labels)?;
    whiten(x, y, mask, input_dim, opts.rank_tol)
}

/// Whitens an arbitrary `d x m` design with ±1 labels.
pub fn whiten_matrix(x: DenseMatrix, y: DenseMatrix, rank_tol: f64) -> Result<WhitenedDataset> {
    let d = x.rows();
    whiten(x, y, (0..d).collect(), d, rank_tol)
}

fn whiten(
    x: DenseMatrix,
    y: DenseMatrix,
    feature_mask: Vec<usize>,
    input_dim: usize,
    rank_tol: f64,
) -> Result<WhitenedDataset> {
    let (d, m) = x.shape();
    if y.shape() != (1, m) {
        return Err(DataError::CountMismatch {
            images: m,
            labels: y.cols(),
        });
    }
    if m < d {
        return Err(DataError::TooFewSamples { m, d });
    }
    x.check_finite()?;

    let mut gram = vec![0.0; d * d];
    gemm(
        d,
        m,
        d,
        StridedRef::row_major(x.as_slice(), m),
        StridedRef::transposed(x.as_slice(), m),
        &mut gram,
        0.0,
    );
    let mut sigma_x = DenseMatrix::new(d, d, gram)?.scale(1.0 / m as f64);
    // Symmetrize rounding noise so the eigensolver's symmetry check is about the data.
    for i in 0..d {
        for j in (i + 1)..d {
            let v = 0.5 * (sigma_x[(i, j)] + sigma_x[(j, i)]);
            sigma_x[(i, j)] = v;
            sigma_x[(j, i)] = v;
        }
    }
    let sigma_x_inv_sqrt = inv_sqrt_psd(&sigma_x, rank_tol)?;
    let x_tilde = matmul_blocked(&sigma_x_inv_sqrt, &x)?;

    let mut yxt = vec![0.0; d];
    gemm(
        1,
        m,
        d,
        StridedRef::row_major(y.as_slice(), m),
        StridedRef::transposed(x_tilde.as_slice(), m),
        &mut yxt,
        0.0,
    );
    let s = vector_norm(&yxt) / m as f64;

    let mut yx = vec![0.0; d];
    gemm(
        1,
        m,
        d,
        StridedRef::row_major(y.as_slice(), m),
        StridedRef::transposed(x.as_slice(), m),
        &mut yx,
        0.0,
    );
    let raw = densela::matmul(&DenseMatrix::row_vector(yx), &sigma_x_inv_sqrt)?;
    let s_raw = vector_norm(raw.as_slice());

    Ok(WhitenedDataset {
        x,
        y,
        x_tilde,
        sigma_x,
        sigma_x_inv_sqrt,
        s,
        s_raw,
        d,
        m,
        feature_mask,
        input_dim,
    })
}

/// Gaussian inputs scaled into the unit ball with labels `sign(teacherᵀ x)`.
///
/// A rank-deficient draw is retried with the next seed, at most three times.
pub fn synthetic_gaussian(d: usize, m: usize, seed: u64, teacher: &[f64]) -> Result<WhitenedDataset> {
    if m < d {
        return Err(DataError::TooFewSamples { m, d });
    }
    if teacher.len() != d {
        return Err(DataError::Invariant(format!(
            "teacher has {} entries, expected {d}",
            teacher.len()
        )));
    }
    let mut last_err = None;
    for attempt in 0..=3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        let mut data: Vec<f64> = (0..d * m).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x = DenseMatrix::new(d, m, std::mem::take(&mut data))?;
        let max_norm = (0..m)
            .map(|k| vector_norm(&x.column(k)))
            .fold(0.0f64, f64::max);
        let x = x.scale(1.0 / max_norm);
        let y: Vec<f64> = (0..m)
            .map(|k| {
                let dot: f64 = (0..d).map(|i| teacher[i] * x[(i, k)]).sum();
                if dot < 0.0 {
                    -1.0
                } else {
                    1.0
                }
            })
            .collect();
        match whiten_matrix(x, DenseMatrix::row_vector(y), DEFAULT_RANK_TOL) {
            Ok(ds) => return Ok(ds),
            Err(e @ DataError::Linalg(LinalgError::RankDeficient { .. })) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

/// `Σ_X^{1/2} X̃`, which recovers `X`.
pub fn unwhiten(ds: &WhitenedDataset) -> Result<DenseMatrix> {
    let root = sqrt_psd(&ds.sigma_x)?;
    Ok(matmul_blocked(&root, &ds.x_tilde)?)
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for v in xs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes a dataset: `NLB1`, little-endian `u32 d, u32 m`, then `X, Y, X̃, Σ_X,
/// Σ_X^{-1/2}, s` as `f64`, followed by a `MASK` trailer with the input dimension and
/// kept feature indices.
pub fn write_cache(ds: &WhitenedDataset, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(16 + 8 * (2 * ds.d * ds.m + ds.m + 2 * ds.d * ds.d + 1));
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&(ds.d as u32).to_le_bytes());
    out.extend_from_slice(&(ds.m as u32).to_le_bytes());
    put_f64s(&mut out, ds.x.as_slice());
    put_f64s(&mut out, ds.y.as_slice());
    put_f64s(&mut out, ds.x_tilde.as_slice());
    put_f64s(&mut out, ds.sigma_x.as_slice());
    put_f64s(&mut out, ds.sigma_x_inv_sqrt.as_slice());
    put_f64s(&mut out, &[ds.s]);
    out.extend_from_slice(MASK_TAG);
    out.extend_from_slice(&(ds.input_dim as u32).to_le_bytes());
    out.extend_from_slice(&(ds.feature_mask.len() as u32).to_le_bytes());
    for &i in &ds.feature_mask {
        out.extend_from_slice(&(i as u32).to_le_bytes());
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(&out).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.at + n > self.bytes.len() {
            return Err(DataError::Truncated {
                path: self.path.to_path_buf(),
                expected: self.at + n,
                actual: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(8 * n)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn read_cache(path: &Path) -> Result<WhitenedDataset> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    let mut cur = Cursor {
        path,
        bytes: &bytes,
        at: 0,
    };
    let magic = cur.take(4)?;
    if magic != CACHE_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected: u32::from_be_bytes(*CACHE_MAGIC),
            found: u32::from_be_bytes([magic[0], magic[1], magic[2], magic[3]]),
        });
    }
    let d = cur.u32()? as usize;
    let m = cur.u32()? as usize;
    let x = DenseMatrix::new_finite(d, m, cur.f64s(d * m)?)?;
    let y = DenseMatrix::new_finite(1, m, cur.f64s(m)?)?;
    let x_tilde = DenseMatrix::new_finite(d, m, cur.f64s(d * m)?)?;
    let sigma_x = DenseMatrix::new_finite(d, d, cur.f64s(d * d)?)?;
    let sigma_x_inv_sqrt = DenseMatrix::new_finite(d, d, cur.f64s(d * d)?)?;
    let s = cur.f64s(1)?[0];
    let (input_dim, feature_mask) = if cur.at == bytes.len() {
        (d, (0..d).collect())
    } else {
        if cur.take(4)? != MASK_TAG {
            return Err(DataError::Invariant("unknown trailer in dataset cache".into()));
        }
        let input_dim = cur.u32()? as usize;
        let n = cur.u32()? as usize;
        let mask = (0..n)
            .map(|_| cur.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        (input_dim, mask)
    };
    if feature_mask.len() != d {
        return Err(DataError::Invariant(format!(
            "cache mask has {} entries for d = {d}",
            feature_mask.len()
        )));
    }
    Ok(WhitenedDataset {
        x,
        y,
        x_tilde,
        sigma_x,
        sigma_x_inv_sqrt,
        s,
        s_raw: s * m as f64,
        d,
        m,
        feature_mask,
        input_dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densela::{frobenius_norm, matmul};
    use approx::assert_relative_eq;

    fn idx_images(count: u32, h: u32, w: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        b.extend_from_slice(&count.to_be_bytes());
        b.extend_from_slice(&h.to_be_bytes());
        b.extend_from_slice(&w.to_be_bytes());
        b.extend_from_slice(pixels);
        b
    }

    #[test]
    fn empty_image_file() {
        let set = parse_idx_images(Path::new("mem"), &idx_images(0, 28, 28, &[])).unwrap();
        assert_eq!(set.count, 0);
        assert_eq!((set.height, set.width), (28, 28));
    }

    #[test]
    fn label_magic_rejected_as_images() {
        let mut b = Vec::new();
        b.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&0u32.to_be_bytes());
        match parse_idx_images(Path::new("mem"), &b) {
            Err(DataError::BadMagic { found, .. }) => assert_eq!(found, LABELS_MAGIC),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_images_report_sizes() {
        let b = idx_images(2, 2, 2, &[1, 2, 3]);
        match parse_idx_images(Path::new("mem"), &b) {
            Err(DataError::Truncated { expected, actual, .. }) => {
                assert_eq!((expected, actual), (24, 19))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn downsample_examples() {
        let raw = RawImageSet {
            count: 1,
            height: 2,
            width: 2,
            pixels: vec![7; 4],
        };
        assert_eq!(downsample(&raw, 1).unwrap().pixels, vec![7.0; 4]);
        assert_eq!(downsample(&raw, 2).unwrap().pixels, vec![7.0]);
        let checker: Vec<u8> = (0..16).map(|i| if (i / 4 + i % 4) % 2 == 0 { 0 } else { 255 }).collect();
        let raw = RawImageSet {
            count: 1,
            height: 4,
            width: 4,
            pixels: checker,
        };
        assert_eq!(downsample(&raw, 4).unwrap().pixels, vec![127.5]);
        assert!(matches!(downsample(&raw, 3), Err(DataError::NotDivisible { .. })));
    }

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize_labels(&[0, 4]).unwrap().as_slice(), &[1.0, 1.0]);
        assert_eq!(binarize_labels(&[5, 9]).unwrap().as_slice(), &[-1.0, -1.0]);
        assert_eq!(binarize_labels(&[3, 7, 1]).unwrap().as_slice(), &[1.0, -1.0, 1.0]);
        assert!(matches!(
            binarize_labels(&[1, 10]),
            Err(DataError::BadLabel { index: 1, label: 10 })
        ));
    }

    #[test]
    fn orthogonal_columns_whiten_to_scaled_basis() {
        let m = 4;
        let x = DenseMatrix::identity(m).scale(0.5);
        let y = DenseMatrix::row_vector(vec![1.0, -1.0, 1.0, 1.0]);
        let ds = whiten_matrix(x, y, 1e-8).unwrap();
        let expected = DenseMatrix::identity(m).scale((m as f64).sqrt());
        assert!(frobenius_norm(&ds.x_tilde.sub(&expected).unwrap()) < 1e-12);
        ds.validate().unwrap();
    }

    #[test]
    fn synthetic_is_deterministic_and_valid() {
        let a = synthetic_gaussian(2, 4, 1, &[1.0, 0.0]).unwrap();
        let b = synthetic_gaussian(2, 4, 1, &[1.0, 0.0]).unwrap();
        assert_eq!(a, b);
        for k in 0..4 {
            let expected = if a.x[(0, k)] < 0.0 { -1.0 } else { 1.0 };
            assert_eq!(a.y[(0, k)], expected);
        }
        a.validate().unwrap();
    }

    #[test]
    fn s_two_ways_and_scale_invariance() {
        let teacher = [1.0, -0.5, 0.25, 0.0, 2.0];
        let ds = synthetic_gaussian(5, 50, 3, &teacher).unwrap();
        ds.validate().unwrap();
        // ‖Y X̃⁺‖ via an explicit pseudo-inverse.
        let pinv = densela::pinv_whitened(&ds.x_tilde, ds.m).unwrap();
        let via_pinv = vector_norm(matmul(&ds.y, &pinv).unwrap().as_slice());
        assert_relative_eq!(ds.s, via_pinv, max_relative = 1e-8);
        assert_relative_eq!(ds.s_raw / ds.m as f64, ds.s, max_relative = 1e-8);

        let scaled = whiten_matrix(ds.x.scale(0.3), ds.y.clone(), 1e-8).unwrap();
        assert_relative_eq!(scaled.s, ds.s, max_relative = 1e-8);
    }

    #[test]
    fn unwhiten_round_trip() {
        let ds = synthetic_gaussian(4, 30, 9, &[1.0, 1.0, 0.0, -1.0]).unwrap();
        let back = unwhiten(&ds).unwrap();
        let err = frobenius_norm(&back.sub(&ds.x).unwrap()) / frobenius_norm(&ds.x);
        assert!(err < 1e-8, "{err:e}");
    }

    #[test]
    fn rank_deficient_design() {
        let mut x = DenseMatrix::zeros(3, 10);
        for k in 0..10 {
            x[(0, k)] = (k as f64 + 1.0) / 20.0;
            x[(1, k)] = 0.5 * x[(0, k)];
            x[(2, k)] = ((k * k) % 7) as f64 / 20.0;
        }
        let y = DenseMatrix::row_vector(vec![1.0; 10]);
        assert!(matches!(
            whiten_matrix(x, y, 1e-8),
            Err(DataError::Linalg(LinalgError::RankDeficient { .. }))
        ));
    }

    #[test]
    fn cache_round_trip() {
        let ds = synthetic_gaussian(3, 12, 5, &[1.0, 0.0, 0.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.nlb");
        write_cache(&ds, &path).unwrap();
        let back = read_cache(&path).unwrap();
        assert_eq!(back.x, ds.x);
        assert_eq!(back.x_tilde, ds.x_tilde);
        assert_eq!(back.s, ds.s);
        assert_eq!(back.feature_mask, ds.feature_mask);
    }
}
