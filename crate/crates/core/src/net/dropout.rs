use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Keep probabilities for each variational dropout site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeepProbs {
    /// Whole embedding rows (word-level dropout).
    pub embedding: f64,
    /// Input to the first layer.
    pub input: f64,
    /// Inputs to layers 2..l.
    pub hidden: f64,
    /// Recurrent hidden path of every layer.
    pub recurrent: f64,
    /// Top layer output fed to the softmax.
    pub output: f64,
}

impl KeepProbs {
    pub const NONE: KeepProbs = KeepProbs {
        embedding: 1.0,
        input: 1.0,
        hidden: 1.0,
        recurrent: 1.0,
        output: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (site, p) in [
            ("embedding", self.embedding),
            ("input", self.input),
            ("hidden", self.hidden),
            ("recurrent", self.recurrent),
            ("output", self.output),
        ] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidValue(format!(
                    "keep probability for {site} must be in (0, 1], got {p}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for KeepProbs {
    fn default() -> Self {
        Self::NONE
    }
}

/// Dimensions the masks must cover.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskShape {
    pub batch: usize,
    pub vocab: usize,
    pub embedding: usize,
    pub hidden: Vec<usize>,
}

/// Per-window Bernoulli keep masks scaled by `1 / keep`. Each mask is reused
/// at every timestep of the window.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    /// One factor per vocabulary row.
    pub embedding: Array1<f64>,
    /// `B x d_in` per layer.
    pub layer_input: Vec<Array2<f64>>,
    /// `B x h` per layer.
    pub recurrent: Vec<Array2<f64>>,
    /// `B x h_top`.
    pub output: Array2<f64>,
}

impl DropoutMasks {
    /// All-ones masks (no dropout).
    pub fn identity(shape: &MaskShape) -> Self {
        let b = shape.batch;
        let top = shape.hidden.last().copied().unwrap_or(shape.embedding);
        DropoutMasks {
            embedding: Array1::ones(shape.vocab),
            layer_input: (0..shape.hidden.len())
                .map(|k| {
                    let d = if k == 0 {
                        shape.embedding
                    } else {
                        shape.hidden[k - 1]
                    };
                    Array2::ones((b, d))
                })
                .collect(),
            recurrent: shape.hidden.iter().map(|&h| Array2::ones((b, h))).collect(),
            output: Array2::ones((b, top)),
        }
    }

    /// Samples fresh masks from `rng`.
    pub fn sample<R: Rng>(shape: &MaskShape, keep: &KeepProbs, rng: &mut R) -> Result<Self> {
        keep.validate()?;
        let b = shape.batch;
        let top = shape.hidden.last().copied().unwrap_or(shape.embedding);
        let embedding =
            Array1::from_shape_simple_fn(shape.vocab, || bernoulli(keep.embedding, rng));
        let mut layer_input = Vec::with_capacity(shape.hidden.len());
        let mut recurrent = Vec::with_capacity(shape.hidden.len());
        for (k, &h) in shape.hidden.iter().enumerate() {
            let (d, p) = if k == 0 {
                (shape.embedding, keep.input)
            } else {
                (shape.hidden[k - 1], keep.hidden)
            };
            layer_input.push(Array2::from_shape_simple_fn((b, d), || bernoulli(p, rng)));
            recurrent.push(Array2::from_shape_simple_fn((b, h), || {
                bernoulli(keep.recurrent, rng)
            }));
        }
        let output = Array2::from_shape_simple_fn((b, top), || bernoulli(keep.output, rng));
        Ok(DropoutMasks {
            embedding,
            layer_input,
            recurrent,
            output,
        })
    }

    pub fn shape(&self) -> MaskShape {
        MaskShape {
            batch: self.output.nrows(),
            vocab: self.embedding.len(),
            embedding: self
                .layer_input
                .first()
                .map_or(self.output.ncols(), |m| m.ncols()),
            hidden: self.recurrent.iter().map(|m| m.ncols()).collect(),
        }
    }
}

/// Samples masks from a generator seeded with `seed`.
pub fn sample_masks(shape: &MaskShape, keep: &KeepProbs, seed: u64) -> Result<DropoutMasks> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DropoutMasks::sample(shape, keep, &mut rng)
}

fn bernoulli<R: Rng>(keep: f64, rng: &mut R) -> f64 {
    if keep >= 1.0 {
        1.0
    } else if rng.gen::<f64>() < keep {
        1.0 / keep
    } else {
        0.0
    }
}
