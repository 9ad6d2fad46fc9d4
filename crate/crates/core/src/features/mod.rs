//! Frozen feature extraction from patch images and token sequences.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::binfmt::{BinError, Reader, Writer};
use crate::patch::{par_map, PatchImage};
use crate::rng;

pub const FEATURE_FILE_VERSION: u16 = 2;
pub const FILTERS: usize = 16;
pub const KERNEL: usize = 5;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("extractor expects {expected:?} (channels, side), image is {found:?}")]
    DimensionMismatch { expected: (usize, usize), found: (usize, usize) },
    #[error("feature width {dim} is not divisible into {tokens} tokens")]
    IndivisibleDimension { dim: usize, tokens: usize },
    #[error("no precomputed feature for facet {0}")]
    MissingFacet(usize),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported feature file version {0}")]
    VersionUnsupported(u16),
    #[error("feature file truncated")]
    TruncatedFile,
    #[error("malformed feature file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<BinError> for FeatureError {
    fn from(e: BinError) -> Self {
        match e {
            BinError::BadMagic(m) => Self::BadMagic(m),
            BinError::VersionUnsupported { found, .. } => Self::VersionUnsupported(found),
            BinError::TruncatedFile(_) => Self::TruncatedFile,
            BinError::Malformed(m) => Self::Malformed(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub center: usize,
    pub values: Vec<f32>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExtractorKind {
    FixedProjection,
    IdentityPool,
    Precomputed,
}

impl std::str::FromStr for ExtractorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fixed-projection" => Ok(Self::FixedProjection),
            "identity-pool" => Ok(Self::IdentityPool),
            "precomputed" => Ok(Self::Precomputed),
            other => Err(format!("unknown extractor {other:?}")),
        }
    }
}

impl std::fmt::Display for ExtractorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::FixedProjection => "fixed-projection",
            Self::IdentityPool => "identity-pool",
            Self::Precomputed => "precomputed",
        })
    }
}

/// A frozen map from patch images to feature vectors. Fields are private and
/// no method takes `&mut self`, so parameters never change after
/// construction.
#[derive(Debug, Clone)]
pub struct Extractor {
    kind: ExtractorKind,
    seed: u64,
    dim: usize,
    channels: usize,
    side: usize,
    /// `FILTERS × channels × KERNEL × KERNEL`
    filters: Vec<f64>,
    /// `2·FILTERS × dim`
    projection: Vec<f64>,
    table: HashMap<usize, Vec<f32>>,
}

impl Extractor {
    pub fn new(kind: ExtractorKind, seed: u64, dim: usize, channels: usize, side: usize) -> Self {
        let (mut filters, mut projection) = (Vec::new(), Vec::new());
        if kind == ExtractorKind::FixedProjection {
            let mut r = rng::stream(seed, "extractor");
            let fan_in = (channels * KERNEL * KERNEL) as f64;
            let conv = Normal::new(0.0, (2.0 / fan_in).sqrt()).unwrap();
            filters = (0..FILTERS * channels * KERNEL * KERNEL).map(|_| conv.sample(&mut r)).collect();
            let proj = Normal::new(0.0, (1.0 / (2 * FILTERS) as f64).sqrt()).unwrap();
            projection = (0..2 * FILTERS * dim).map(|_| proj.sample(&mut r)).collect();
        }
        Self {
            kind,
            seed,
            dim,
            channels,
            side,
            filters,
            projection,
            table: HashMap::new(),
        }
    }

    /// Extractor that looks features up by center facet.
    pub fn precomputed(features: &[FeatureVector]) -> Self {
        let dim = features.first().map_or(0, FeatureVector::dim);
        let mut ex = Self::new(ExtractorKind::Precomputed, 0, dim, 0, 0);
        ex.table = features.iter().map(|f| (f.center, f.values.clone())).collect();
        ex
    }

    pub fn kind(&self) -> ExtractorKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// FNV hash over every parameter bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for v in self.filters.iter().chain(&self.projection) {
            eat(&v.to_le_bytes());
        }
        let mut keys: Vec<_> = self.table.keys().copied().collect();
        keys.sort_unstable();
        for k in keys {
            eat(&(k as u64).to_le_bytes());
            for v in &self.table[&k] {
                eat(&v.to_le_bytes());
            }
        }
        h
    }

    fn check(&self, img: &PatchImage) -> Result<(), FeatureError> {
        if img.channels() != self.channels || img.n != self.side {
            return Err(FeatureError::DimensionMismatch {
                expected: (self.channels, self.side),
                found: (img.channels(), img.n),
            });
        }
        Ok(())
    }

    fn fixed_projection(&self, img: &PatchImage) -> Vec<f64> {
        let (c, n, half) = (self.channels, self.side, (KERNEL / 2) as isize);
        let mut pooled = vec![0.0; 2 * FILTERS];
        let mut response = vec![0.0; n * n];
        for f in 0..FILTERS {
            let w = &self.filters[f * c * KERNEL * KERNEL..(f + 1) * c * KERNEL * KERNEL];
            response.iter_mut().for_each(|v| *v = 0.0);
            for ch in 0..c {
                let plane = img.channel(ch);
                let k = &w[ch * KERNEL * KERNEL..(ch + 1) * KERNEL * KERNEL];
                for y in 0..n {
                    for x in 0..n {
                        let mut s = 0.0;
                        for ky in 0..KERNEL {
                            let yy = y as isize + ky as isize - half;
                            if yy < 0 || yy >= n as isize {
                                continue;
                            }
                            for kx in 0..KERNEL {
                                let xx = x as isize + kx as isize - half;
                                if xx < 0 || xx >= n as isize {
                                    continue;
                                }
                                s += k[ky * KERNEL + kx] * plane[yy as usize * n + xx as usize];
                            }
                        }
                        response[y * n + x] += s;
                    }
                }
            }
            let (mut sum, mut max) = (0.0, 0.0f64);
            for &r in &response {
                let r = r.max(0.0);
                sum += r;
                max = max.max(r);
            }
            pooled[f] = sum / (n * n) as f64;
            pooled[FILTERS + f] = max;
        }
        let mut out = vec![0.0; self.dim];
        for (i, &p) in pooled.iter().enumerate() {
            let row = &self.projection[i * self.dim..(i + 1) * self.dim];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += p * w;
            }
        }
        out
    }

    fn identity_pool(&self, img: &PatchImage) -> Vec<f64> {
        block_average(&img.data, self.dim)
    }
}

/// Averages `data` over `bins` contiguous blocks; block k covers
/// `[k·L/bins, (k+1)·L/bins)` and always holds at least one element.
pub fn block_average(data: &[f64], bins: usize) -> Vec<f64> {
    let len = data.len();
    (0..bins)
        .map(|k| {
            let start = (k * len / bins).min(len.saturating_sub(1));
            let end = ((k + 1) * len / bins).max(start + 1).min(len);
            data[start..end].iter().sum::<f64>() / (end - start) as f64
        })
        .collect()
}

pub fn extract_feature(img: &PatchImage, ex: &Extractor) -> Result<FeatureVector, FeatureError> {
    let values = match ex.kind {
        ExtractorKind::Precomputed => {
            return ex
                .table
                .get(&img.center)
                .map(|v| FeatureVector {
                    center: img.center,
                    values: v.clone(),
                })
                .ok_or(FeatureError::MissingFacet(img.center));
        }
        ExtractorKind::FixedProjection => {
            ex.check(img)?;
            ex.fixed_projection(img)
        }
        ExtractorKind::IdentityPool => {
            ex.check(img)?;
            ex.identity_pool(img)
        }
    };
    Ok(FeatureVector {
        center: img.center,
        values: values.into_iter().map(|v| v as f32).collect(),
    })
}

pub fn extract_all(images: &[PatchImage], ex: &Extractor) -> Result<Vec<FeatureVector>, FeatureError> {
    par_map(images.len(), |i| extract_feature(&images[i], ex)).into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenConfig {
    pub tokens: usize,
    pub positional: bool,
}

impl Default for TokenConfig {
    fn default() -> Self {
        Self {
            tokens: 16,
            positional: true,
        }
    }
}

/// `tokens × width` row-major token matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub center: usize,
    pub tokens: usize,
    pub width: usize,
    pub positional: bool,
    pub data: Vec<f32>,
}

impl TokenSequence {
    pub fn token(&self, j: usize) -> &[f32] {
        &self.data[j * self.width..(j + 1) * self.width]
    }
}

/// Sinusoidal encoding of position `pos` in a `width`-wide embedding.
pub fn positional_encoding(pos: usize, width: usize) -> Vec<f64> {
    (0..width)
        .map(|i| {
            let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / width as f64);
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

pub fn tokenize(f: &FeatureVector, cfg: TokenConfig) -> Result<TokenSequence, FeatureError> {
    let dim = f.dim();
    if cfg.tokens == 0 || dim % cfg.tokens != 0 {
        return Err(FeatureError::IndivisibleDimension { dim, tokens: cfg.tokens });
    }
    let width = dim / cfg.tokens;
    let mut data = f.values.clone();
    if cfg.positional {
        for j in 0..cfg.tokens {
            for (v, pe) in data[j * width..(j + 1) * width].iter_mut().zip(positional_encoding(j, width)) {
                *v = (*v as f64 + pe) as f32;
            }
        }
    }
    Ok(TokenSequence {
        center: f.center,
        tokens: cfg.tokens,
        width,
        positional: cfg.positional,
        data,
    })
}

/// Concatenates the tokens back into a vector, removing the positional
/// encoding if one was added.
pub fn detokenize(t: &TokenSequence) -> FeatureVector {
    let mut values = t.data.clone();
    if t.positional {
        for j in 0..t.tokens {
            for (v, pe) in values[j * t.width..(j + 1) * t.width].iter_mut().zip(positional_encoding(j, t.width)) {
                *v = (*v as f64 - pe) as f32;
            }
        }
    }
    FeatureVector { center: t.center, values }
}

pub fn encode_features(features: &[FeatureVector]) -> Result<(Vec<u8>, Vec<u8>), FeatureError> {
    let dim = features.first().map_or(0, FeatureVector::dim);
    let mut w = Writer::with_header(FEATURE_FILE_VERSION);
    w.u32(features.len() as u32);
    w.u32(dim as u32);
    let mut ids = Vec::with_capacity(features.len() * 4);
    for f in features {
        if f.dim() != dim {
            return Err(FeatureError::Malformed("feature vectors differ in width".into()));
        }
        for &v in &f.values {
            w.f32(v);
        }
        ids.extend_from_slice(&(f.center as u32).to_le_bytes());
    }
    Ok((w.buf, ids))
}

/// Parses a feature file; `ids` is the companion id column, or `None` to
/// number rows from zero.
pub fn decode_features(bytes: &[u8], ids: Option<&[u8]>) -> Result<Vec<FeatureVector>, FeatureError> {
    let mut r = Reader::open(bytes, FEATURE_FILE_VERSION)?;
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let centers: Vec<usize> = match ids {
        Some(b) => {
            if b.len() != count * 4 {
                return Err(FeatureError::Malformed(format!("id column has {} bytes for {count} rows", b.len())));
            }
            b.chunks_exact(4)
                .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
                .collect()
        }
        None => (0..count).collect(),
    };
    let mut out = Vec::with_capacity(count);
    for center in centers {
        out.push(FeatureVector {
            center,
            values: r.f32s(dim)?,
        });
    }
    if !r.is_at_end() {
        return Err(FeatureError::Malformed("trailing bytes after feature rows".into()));
    }
    Ok(out)
}

pub fn ids_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

/// Writes `path` and its `path.ids` facet-id column.
pub fn write_features(features: &[FeatureVector], path: impl AsRef<Path>) -> Result<(), FeatureError> {
    let path = path.as_ref();
    let (body, ids) = encode_features(features)?;
    std::fs::write(path, body)?;
    std::fs::write(ids_path(path), ids)?;
    Ok(())
}

pub fn load_features(path: impl AsRef<Path>) -> Result<Vec<FeatureVector>, FeatureError> {
    let path = path.as_ref();
    let body = std::fs::read(path)?;
    let ids = match std::fs::read(ids_path(path)) {
        Ok(b) => Some(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };
    decode_features(&body, ids.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patch::DescriptorKind;

    fn image(center: usize, n: usize, f: impl Fn(usize) -> f64) -> PatchImage {
        let channel_ids = vec![DescriptorKind::SurfaceVariation, DescriptorKind::LocalDepth, DescriptorKind::MeanCurvature];
        PatchImage {
            center,
            data: (0..3 * n * n).map(f).collect(),
            channel_ids,
            n,
        }
    }

    #[test]
    fn deterministic_and_frozen() {
        let ex = Extractor::new(ExtractorKind::FixedProjection, 7, 256, 3, 8);
        let sum = ex.checksum();
        let img = image(0, 8, |i| (i as f64 * 0.37).sin());
        let a = extract_feature(&img, &ex).unwrap();
        let b = extract_feature(&img, &ex).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 256);
        assert_eq!(ex.checksum(), sum);
        let other = Extractor::new(ExtractorKind::FixedProjection, 8, 256, 3, 8);
        assert_ne!(other.checksum(), sum);
    }

    #[test]
    fn zero_image_gives_zero_feature() {
        let ex = Extractor::new(ExtractorKind::FixedProjection, 1, 64, 3, 6);
        let f = extract_feature(&image(2, 6, |_| 0.0), &ex).unwrap();
        assert!(f.values.iter().all(|&v| v == 0.0));
        assert_eq!(f.center, 2);
    }

    #[test]
    fn dimension_mismatch() {
        let ex = Extractor::new(ExtractorKind::IdentityPool, 1, 16, 3, 6);
        assert!(matches!(
            extract_feature(&image(0, 5, |_| 1.0), &ex),
            Err(FeatureError::DimensionMismatch { expected: (3, 6), found: (3, 5) })
        ));
    }

    #[test]
    fn identity_pool_block_means() {
        assert_eq!(block_average(&[1.0, 3.0, 5.0, 7.0], 2), vec![2.0, 6.0]);
        assert_eq!(block_average(&[1.0, 2.0], 4), vec![1.0, 1.0, 2.0, 2.0]);
        let ex = Extractor::new(ExtractorKind::IdentityPool, 0, 3, 3, 4);
        let img = image(0, 4, |i| (i / 16) as f64);
        assert_eq!(extract_feature(&img, &ex).unwrap().values, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn precomputed_lookup() {
        let fv = FeatureVector { center: 5, values: vec![1.0, 2.0] };
        let ex = Extractor::precomputed(std::slice::from_ref(&fv));
        assert_eq!(extract_feature(&image(5, 4, |_| 0.0), &ex).unwrap(), fv);
        assert!(matches!(extract_feature(&image(6, 4, |_| 0.0), &ex), Err(FeatureError::MissingFacet(6))));
    }

    #[test]
    fn tokenize_shapes_and_inverse() {
        let f = FeatureVector {
            center: 1,
            values: (0..256).map(|i| i as f32 * 0.5).collect(),
        };
        let t = tokenize(&f, TokenConfig::default()).unwrap();
        assert_eq!((t.tokens, t.width), (16, 16));
        let plain = tokenize(&f, TokenConfig { tokens: 16, positional: false }).unwrap();
        assert_eq!(plain.data, f.values);
        assert_eq!(detokenize(&plain), f);
        assert!(matches!(
            tokenize(&f, TokenConfig { tokens: 7, positional: false }),
            Err(FeatureError::IndivisibleDimension { dim: 256, tokens: 7 })
        ));
    }

    #[test]
    fn positional_encoding_values() {
        let pe = positional_encoding(0, 4);
        assert_eq!(pe, vec![0.0, 1.0, 0.0, 1.0]);
        let pe = positional_encoding(1, 2);
        assert_eq!(pe, vec![1f64.sin(), 1f64.cos()]);
    }

    #[test]
    fn feature_file_roundtrip_and_errors() {
        let feats: Vec<_> = (0..3)
            .map(|i| FeatureVector {
                center: 10 + i,
                values: (0..4).map(|j| (i * 4 + j) as f32 / 3.0).collect(),
            })
            .collect();
        let (body, ids) = encode_features(&feats).unwrap();
        assert_eq!(decode_features(&body, Some(&ids)).unwrap(), feats);

        let mut bad = body.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_features(&bad, None), Err(FeatureError::BadMagic(_))));

        let ten_rows = (0..10)
            .map(|i| FeatureVector { center: i, values: vec![0.0; 4] })
            .collect::<Vec<_>>();
        let (full, _) = encode_features(&ten_rows).unwrap();
        assert!(matches!(decode_features(&full[..full.len() - 16], None), Err(FeatureError::TruncatedFile)));

        let mut v = body.clone();
        v[4..6].copy_from_slice(&9u16.to_le_bytes());
        assert!(matches!(decode_features(&v, None), Err(FeatureError::VersionUnsupported(9))));
    }

    #[test]
    fn write_and_load_with_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let feats = vec![
            FeatureVector { center: 4, values: vec![0.25, -1.5] },
            FeatureVector { center: 9, values: vec![3.0, 1e-7] },
        ];
        write_features(&feats, &path).unwrap();
        assert!(ids_path(&path).exists());
        assert_eq!(load_features(&path).unwrap(), feats);
    }
}
