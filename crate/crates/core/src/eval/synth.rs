//! Planar grids with a displaced textured region and their ground truth.

use nalgebra::Point3;
use rand::Rng;

use super::EvalError;
use crate::labels::{LabelState, NON_TEXTURE, TEXTURE};
use crate::mesh::{primitives, Mesh};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pattern {
    Sine,
    Bumps,
    None,
}

impl std::str::FromStr for Pattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sine" => Ok(Self::Sine),
            "bumps" => Ok(Self::Bumps),
            "none" => Ok(Self::None),
            other => Err(format!("unknown pattern {other:?}")),
        }
    }
}

/// Region of the grid that receives the displacement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mask {
    /// Vertices with column index `i ≥ side/2`.
    HalfPlane,
    /// Vertices within `radius · side` of the grid center.
    Disc { radius: f64 },
    Full,
}

impl Mask {
    fn contains(&self, side: usize, i: usize, j: usize) -> bool {
        match *self {
            Mask::HalfPlane => i >= side / 2,
            Mask::Disc { radius } => {
                let c = (side - 1) as f64 / 2.0;
                let (dx, dy) = (i as f64 - c, j as f64 - c);
                (dx * dx + dy * dy).sqrt() <= radius * side as f64
            }
            Mask::Full => true,
        }
    }
}

impl std::str::FromStr for Mask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "half-plane" => Ok(Self::HalfPlane),
            "full" => Ok(Self::Full),
            "disc" => Ok(Self::Disc { radius: 0.25 }),
            _ => match s.strip_prefix("disc:").map(str::parse::<f64>) {
                Some(Ok(radius)) => Ok(Self::Disc { radius }),
                _ => Err(format!("unknown mask {s:?}")),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub side: usize,
    pub mask: Mask,
    pub pattern: Pattern,
    pub amplitude: f64,
    /// Angular frequency in radians per grid spacing.
    pub frequency: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            side: 64,
            mask: Mask::HalfPlane,
            pattern: Pattern::Sine,
            amplitude: 0.1,
            frequency: 8.0 * std::f64::consts::TAU / 64.0,
            seed: 0,
        }
    }
}

/// Unit-spaced `side × side` grid in the xy-plane whose masked vertices are
/// displaced along z. A facet is textured when any of its vertices is
/// displaced.
pub fn synth_textured_mesh(spec: &SynthSpec) -> Result<(Mesh, LabelState), EvalError> {
    let s = spec.side;
    if s < 16 {
        return Err(EvalError::BadSpec(format!("side {s} is below 16")));
    }
    if !(spec.amplitude >= 0.0) || !spec.amplitude.is_finite() {
        return Err(EvalError::BadSpec(format!("amplitude {} must be finite and ≥ 0", spec.amplitude)));
    }
    if spec.pattern != Pattern::None && !(spec.frequency > 0.0 && spec.frequency.is_finite()) {
        return Err(EvalError::BadSpec(format!("frequency {} must be positive", spec.frequency)));
    }
    if let Mask::Disc { radius } = spec.mask {
        if !(radius > 0.0) {
            return Err(EvalError::BadSpec(format!("disc radius {radius} must be positive")));
        }
    }
    let active = spec.amplitude > 0.0 && spec.pattern != Pattern::None;
    let displaced: Vec<bool> = (0..s * s).map(|v| active && spec.mask.contains(s, v % s, v / s)).collect();

    let bumps = if spec.pattern == Pattern::Bumps && active {
        let mut r = rng::stream(spec.seed, "synth-bumps");
        let masked = displaced.iter().filter(|&&d| d).count() as f64;
        let per_cell = (spec.frequency / std::f64::consts::TAU).powi(2);
        let count = (masked * per_cell).round().max(1.0) as usize;
        (0..count)
            .map(|_| (r.random_range(0.0..(s - 1) as f64), r.random_range(0.0..(s - 1) as f64)))
            .collect()
    } else {
        Vec::new()
    };
    let sigma = std::f64::consts::FRAC_PI_2 / spec.frequency;

    let base = primitives::grid(s, 1.0);
    let height = |v: usize| -> f64 {
        if !displaced[v] {
            return 0.0;
        }
        let (x, y) = ((v % s) as f64, (v / s) as f64);
        match spec.pattern {
            Pattern::Sine => spec.amplitude * (spec.frequency * x).sin() * (spec.frequency * y).sin(),
            Pattern::Bumps => {
                spec.amplitude
                    * bumps
                        .iter()
                        .map(|&(bx, by)| (-((x - bx).powi(2) + (y - by).powi(2)) / (2.0 * sigma * sigma)).exp())
                        .sum::<f64>()
            }
            Pattern::None => 0.0,
        }
    };
    let vertices: Vec<Point3<f64>> = base
        .vertices()
        .iter()
        .enumerate()
        .map(|(v, p)| Point3::new(p.x, p.y, height(v)))
        .collect();
    let mesh = Mesh::new(vertices, base.facets().to_vec()).expect("grid topology is valid");
    let truth = mesh
        .facets()
        .iter()
        .map(|f| if f.iter().any(|&v| displaced[v]) { TEXTURE } else { NON_TEXTURE })
        .collect();
    Ok((mesh, LabelState::from_labels(truth)))
}
