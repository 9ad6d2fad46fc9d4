//! Per-facet labels and the `facet_id,label` CSV format.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

/// Facet label values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    NonTexture = 0,
    Texture = 1,
    Excluded = -1,
}

impl Label {
    pub const fn value(self) -> i8 {
        self as i8
    }

    pub fn from_value(v: i8) -> Option<Self> {
        match v {
            0 => Some(Self::NonTexture),
            1 => Some(Self::Texture),
            -1 => Some(Self::Excluded),
            _ => None,
        }
    }
}

pub const TEXTURE: i8 = Label::Texture.value();
pub const NON_TEXTURE: i8 = Label::NonTexture.value();
pub const EXCLUDED: i8 = Label::Excluded.value();

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed label record '{content}'")]
    MalformedLine { line: usize, content: String },
}

/// Label of every facet of a mesh, with the per-iteration change history
/// recorded while training.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelState {
    labels: Vec<i8>,
    change_counts: Vec<usize>,
    iteration: usize,
}

impl LabelState {
    pub fn from_labels(labels: Vec<i8>) -> Self {
        Self {
            labels,
            change_counts: Vec::new(),
            iteration: 0,
        }
    }

    pub fn excluded(facets: usize) -> Self {
        Self::from_labels(vec![EXCLUDED; facets])
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, facet: usize) -> i8 {
        self.labels[facet]
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn change_counts(&self) -> &[usize] {
        &self.change_counts
    }

    /// Sets a label. Excluded facets are never relabelled; returns whether
    /// the value changed.
    pub fn set(&mut self, facet: usize, label: i8) -> bool {
        let cur = &mut self.labels[facet];
        if *cur == EXCLUDED || *cur == label {
            return false;
        }
        *cur = label;
        true
    }

    /// Closes an iteration, recording how many labels changed during it.
    pub fn finish_iteration(&mut self, changed: usize) {
        self.change_counts.push(changed);
        self.iteration += 1;
    }

    pub fn count(&self, label: i8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Writes one `facet_id,label` line per facet.
pub fn write_labels(labels: &LabelState, path: impl AsRef<Path>) -> Result<(), LabelError> {
    let path = path.as_ref();
    std::fs::write(path, labels_to_csv(labels)).map_err(|source| LabelError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn labels_to_csv(labels: &LabelState) -> String {
    let mut out = String::with_capacity(labels.len() * 8);
    for (i, l) in labels.labels().iter().enumerate() {
        let _ = writeln!(out, "{i},{l}");
    }
    out
}

/// Reads a label CSV. Facets absent from the file are marked excluded; an
/// empty file yields an empty state.
pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelState, LabelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| LabelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_labels(&text)
}

pub fn parse_labels(text: &str) -> Result<LabelState, LabelError> {
    let mut labels: Vec<i8> = Vec::new();
    let mut seen: Vec<bool> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let bad = || LabelError::MalformedLine {
            line: i + 1,
            content: line.to_string(),
        };
        let (id, label) = line.split_once(',').ok_or_else(bad)?;
        let id: usize = id.trim().parse().map_err(|_| bad())?;
        let label: i8 = label.trim().parse().map_err(|_| bad())?;
        if Label::from_value(label).is_none() {
            return Err(bad());
        }
        if id >= labels.len() {
            labels.resize(id + 1, EXCLUDED);
            seen.resize(id + 1, false);
        }
        if seen[id] {
            return Err(bad());
        }
        seen[id] = true;
        labels[id] = label;
    }
    Ok(LabelState::from_labels(labels))
}
