//! End-to-end segmentation: mesh → patches → features → tokens → labels.

use thiserror::Error;

use crate::features::{self, Extractor, ExtractorKind, FeatureError, FeatureVector, TokenConfig, TokenSequence};
use crate::labels::LabelState;
use crate::mesh::{Adjacency, Mesh, MeshError};
use crate::patch::{extract_patches, PatchConfig, PatchError, MIN_GRID};
use crate::trainer::{run_algorithm1_with, EpochRecord, TrainConfig, TrainError, TrainOutcome};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("no facet has a complete patch ({excluded} excluded)")]
    NoPatches { excluded: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentConfig {
    pub patch: PatchConfig,
    pub extractor: ExtractorKind,
    /// Seed of the frozen extractor, independent of the training seed.
    pub extractor_seed: u64,
    /// Feature dimension.
    pub dim: usize,
    pub tokens: TokenConfig,
    pub train: TrainConfig,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            patch: PatchConfig::default(),
            extractor: ExtractorKind::IdentityPool,
            extractor_seed: 0,
            dim: 256,
            tokens: TokenConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl SegmentConfig {
    /// Checks the settings that can be rejected before touching a mesh.
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.patch.grid < MIN_GRID {
            return Err(PatchError::BadGridSize(self.patch.grid).into());
        }
        if self.tokens.tokens == 0 || self.dim % self.tokens.tokens != 0 {
            return Err(FeatureError::IndivisibleDimension {
                dim: self.dim,
                tokens: self.tokens.tokens,
            }
            .into());
        }
        self.train.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    /// Per-facet labels; facets without a complete patch are excluded.
    pub labels: LabelState,
    pub outcome: TrainOutcome,
    pub excluded: usize,
}

/// Frozen features of every facet with a complete patch, and the number
/// of excluded facets.
pub fn mesh_features(mesh: &Mesh, cfg: &SegmentConfig) -> Result<(Vec<FeatureVector>, usize), PipelineError> {
    cfg.validate()?;
    let adj = Adjacency::build(mesh)?;
    let patches = extract_patches(mesh, &adj, &cfg.patch);
    if patches.images.is_empty() {
        return Err(PipelineError::NoPatches {
            excluded: patches.excluded.len(),
        });
    }
    let ex = Extractor::new(cfg.extractor, cfg.extractor_seed, cfg.dim, cfg.patch.channels.len(), cfg.patch.grid);
    Ok((features::extract_all(&patches.images, &ex)?, patches.excluded.len()))
}

pub fn tokenize_all(features: &[FeatureVector], cfg: TokenConfig) -> Result<Vec<TokenSequence>, FeatureError> {
    features.iter().map(|f| features::tokenize(f, cfg)).collect()
}

/// Trains on given features and scatters labels back onto `facet_count`
/// facets.
pub fn segment_features(
    features: &[FeatureVector],
    facet_count: usize,
    cfg: &SegmentConfig,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<Segmentation, PipelineError> {
    if let Some(f) = features.iter().find(|f| f.center >= facet_count) {
        return Err(FeatureError::MissingFacet(f.center).into());
    }
    let tokens = tokenize_all(features, cfg.tokens)?;
    let outcome = run_algorithm1_with(&tokens, &cfg.train, progress)?;
    Ok(Segmentation {
        labels: outcome.label_state(facet_count),
        excluded: facet_count - features.len(),
        outcome,
    })
}

/// Full unsupervised segmentation of a mesh.
pub fn segment_mesh(
    mesh: &Mesh,
    cfg: &SegmentConfig,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<Segmentation, PipelineError> {
    let (features, _) = mesh_features(mesh, cfg)?;
    segment_features(&features, mesh.facet_count(), cfg, progress)
}
