use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_INIT_SCALE: f64 = 0.1;

/// Group name of the embedding matrix (and of a tied softmax weight).
pub const EMBEDDING_GROUP: &str = "embedding";
/// Group name of the softmax head.
pub const SOFTMAX_GROUP: &str = "softmax";

/// Group name of LSTM layer `k` (1-based).
pub fn layer_group(k: usize) -> String {
    format!("layer_{k}")
}

/// Architecture of a stacked LSTM language model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSizes {
    pub vocab: usize,
    pub embedding: usize,
    /// Hidden size per layer, bottom to top.
    pub hidden: Vec<usize>,
    pub tied: bool,
}

impl ModelSizes {
    pub fn num_layers(&self) -> usize {
        self.hidden.len()
    }

    /// Width of the top layer, i.e. the softmax input (the embedding when there are no layers).
    pub fn top(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.embedding)
    }

    pub fn layer_input(&self, k: usize) -> usize {
        if k == 0 {
            self.embedding
        } else {
            self.hidden[k - 1]
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.embedding == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidValue(format!(
                "zero-sized dimension in {self:?}"
            )));
        }
        if self.tied && self.embedding != self.top() {
            return Err(Error::TyingSizeMismatch {
                embedding: self.embedding,
                hidden: self.top(),
            });
        }
        Ok(())
    }

    /// Canonical clip-group names in parameter order.
    pub fn group_names(&self) -> Vec<String> {
        let mut names = vec![EMBEDDING_GROUP.to_string()];
        names.extend((1..=self.num_layers()).map(layer_group));
        names.push(SOFTMAX_GROUP.to_string());
        names
    }
}

/// Parameters of one LSTM layer. Gate rows are fused in the order
/// input, forget, cell candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    /// `4h x d_in`
    pub w_input: Array2<f64>,
    /// `4h x h`
    pub w_recurrent: Array2<f64>,
    /// `4h`
    pub bias: Array1<f64>,
}

impl LstmLayerParams {
    pub fn hidden(&self) -> usize {
        self.w_recurrent.ncols()
    }

    pub fn input_size(&self) -> usize {
        self.w_input.ncols()
    }

    pub(crate) fn init(input: usize, hidden: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let w_input = uniform_matrix(4 * hidden, input, scale, rng);
        let w_recurrent = uniform_matrix(4 * hidden, hidden, scale, rng);
        let mut bias = Array1::zeros(4 * hidden);
        bias.slice_mut(ndarray::s![hidden..2 * hidden]).fill(1.0);
        LstmLayerParams {
            w_input,
            w_recurrent,
            bias,
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmLayerParams {
            w_input: Array2::zeros((4 * hidden, input)),
            w_recurrent: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }
}

/// Full parameter set: embedding, LSTM stack and softmax head.
///
/// A tied model has no separate softmax weight; the embedding matrix plays
/// both roles.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    /// `V x d_emb`
    pub embedding: Array2<f64>,
    pub layers: Vec<LstmLayerParams>,
    /// `V x h_top`, `None` when tied.
    pub softmax_weight: Option<Array2<f64>>,
    /// `V`
    pub softmax_bias: Array1<f64>,
}

/// Borrowed view of one named parameter tensor.
#[derive(Debug, Clone)]
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

impl<'a> TensorRef<'a> {
    fn new<D: ndarray::Dimension>(name: String, a: &'a ndarray::Array<f64, D>) -> Self {
        TensorRef {
            name,
            shape: a.shape().to_vec(),
            data: a.as_slice().expect("standard layout"),
        }
    }

    pub fn group(&self) -> &str {
        group_of(&self.name)
    }
}

impl NetworkParams {
    /// Draws every weight from `Uniform(-init_scale, init_scale)`; biases are
    /// zero except the forget-gate bias, which is one.
    pub fn init(sizes: &ModelSizes, seed: u64, init_scale: f64) -> Result<Self> {
        sizes.validate()?;
        check_scale(init_scale)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedding = uniform_matrix(sizes.vocab, sizes.embedding, init_scale, &mut rng);
        let layers = (0..sizes.num_layers())
            .map(|k| {
                LstmLayerParams::init(sizes.layer_input(k), sizes.hidden[k], init_scale, &mut rng)
            })
            .collect();
        let softmax_weight =
            (!sizes.tied).then(|| uniform_matrix(sizes.vocab, sizes.top(), init_scale, &mut rng));
        Ok(NetworkParams {
            embedding,
            layers,
            softmax_weight,
            softmax_bias: Array1::zeros(sizes.vocab),
        })
    }

    pub fn sizes(&self) -> ModelSizes {
        ModelSizes {
            vocab: self.embedding.nrows(),
            embedding: self.embedding.ncols(),
            hidden: self.layers.iter().map(LstmLayerParams::hidden).collect(),
            tied: self.is_tied(),
        }
    }

    pub fn vocab(&self) -> usize {
        self.embedding.nrows()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn is_tied(&self) -> bool {
        self.softmax_weight.is_none()
    }

    /// The matrix used by the softmax head.
    pub fn head_weight(&self) -> &Array2<f64> {
        self.softmax_weight.as_ref().unwrap_or(&self.embedding)
    }

    /// Checks internal shape consistency.
    pub fn validate(&self) -> Result<()> {
        let v = self.vocab();
        let mut d_in = self.embedding.ncols();
        for (k, layer) in self.layers.iter().enumerate() {
            let h = layer.hidden();
            if layer.w_recurrent.nrows() != 4 * h
                || layer.w_input.nrows() != 4 * h
                || layer.w_input.ncols() != d_in
                || layer.bias.len() != 4 * h
            {
                return Err(Error::Shape(format!(
                    "layer {} has inconsistent shapes",
                    k + 1
                )));
            }
            d_in = h;
        }
        if let Some(w) = &self.softmax_weight {
            if w.dim() != (v, d_in) {
                return Err(Error::Shape(format!(
                    "softmax weight {:?} expected ({v}, {d_in})",
                    w.dim()
                )));
            }
        } else if self.embedding.ncols() != d_in {
            return Err(Error::TyingSizeMismatch {
                embedding: self.embedding.ncols(),
                hidden: d_in,
            });
        }
        if self.softmax_bias.len() != v {
            return Err(Error::Shape(
                "softmax bias length differs from vocabulary".into(),
            ));
        }
        Ok(())
    }

    /// Named tensors in canonical order.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = vec![TensorRef::new(EMBEDDING_GROUP.into(), &self.embedding)];
        for (k, layer) in self.layers.iter().enumerate() {
            let n = k + 1;
            out.push(TensorRef::new(format!("layer_{n}.w_input"), &layer.w_input));
            out.push(TensorRef::new(
                format!("layer_{n}.w_recurrent"),
                &layer.w_recurrent,
            ));
            out.push(TensorRef::new(format!("layer_{n}.bias"), &layer.bias));
        }
        if let Some(w) = &self.softmax_weight {
            out.push(TensorRef::new("softmax.weight".into(), w));
        }
        out.push(TensorRef::new("softmax.bias".into(), &self.softmax_bias));
        out
    }

    /// Mutable flat views of every tensor, in the same order as [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        out.push((
            EMBEDDING_GROUP.into(),
            self.embedding.as_slice_mut().expect("standard layout"),
        ));
        for (k, layer) in self.layers.iter_mut().enumerate() {
            let n = k + 1;
            out.push((
                format!("layer_{n}.w_input"),
                layer.w_input.as_slice_mut().expect("standard layout"),
            ));
            out.push((
                format!("layer_{n}.w_recurrent"),
                layer.w_recurrent.as_slice_mut().expect("standard layout"),
            ));
            out.push((
                format!("layer_{n}.bias"),
                layer.bias.as_slice_mut().expect("standard layout"),
            ));
        }
        if let Some(w) = &mut self.softmax_weight {
            out.push((
                "softmax.weight".into(),
                w.as_slice_mut().expect("standard layout"),
            ));
        }
        out.push((
            "softmax.bias".into(),
            self.softmax_bias.as_slice_mut().expect("standard layout"),
        ));
        out
    }

    pub fn num_tensors(&self) -> usize {
        self.tensors().len()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Parameters with every entry zero.
    pub fn zeros(sizes: &ModelSizes) -> Result<Self> {
        Self::init(sizes, 0, 0.0).map(|mut p| {
            for layer in &mut p.layers {
                layer.bias.fill(0.0);
            }
            p
        })
    }
}

/// Group a tensor name belongs to.
pub fn group_of(tensor_name: &str) -> &str {
    tensor_name.split('.').next().unwrap_or(tensor_name)
}

pub(crate) fn check_scale(init_scale: f64) -> Result<()> {
    if !(init_scale.is_finite() && init_scale >= 0.0) {
        return Err(Error::InvalidValue(format!(
            "init_scale must be finite and non-negative, got {init_scale}"
        )));
    }
    Ok(())
}

pub(crate) fn uniform_matrix(
    rows: usize,
    cols: usize,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || (2.0 * rng.gen::<f64>() - 1.0) * scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes(tied: bool) -> ModelSizes {
        ModelSizes {
            vocab: 11,
            embedding: 8,
            hidden: vec![6, 8],
            tied,
        }
    }

    #[test]
    fn same_seed_same_params() {
        let a = NetworkParams::init(&sizes(false), 7, 0.1).unwrap();
        let b = NetworkParams::init(&sizes(false), 7, 0.1).unwrap();
        assert_eq!(a, b);
        let c = NetworkParams::init(&sizes(false), 8, 0.1).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_scale_gives_zero_weights_and_unit_forget_bias() {
        let p = NetworkParams::init(&sizes(false), 3, 0.0).unwrap();
        assert!(p.embedding.iter().all(|&v| v == 0.0));
        for layer in &p.layers {
            let h = layer.hidden();
            assert!(layer.w_input.iter().all(|&v| v == 0.0));
            assert!(layer.w_recurrent.iter().all(|&v| v == 0.0));
            for (i, &b) in layer.bias.iter().enumerate() {
                let expect = if (h..2 * h).contains(&i) { 1.0 } else { 0.0 };
                assert_eq!(b, expect);
            }
        }
    }

    #[test]
    fn weights_are_centered_and_bounded() {
        let s = ModelSizes {
            vocab: 1200,
            embedding: 8,
            hidden: vec![8],
            tied: true,
        };
        let p = NetworkParams::init(&s, 1, 0.1).unwrap();
        let all: Vec<f64> = p
            .tensors()
            .iter()
            .filter(|t| !t.name.ends_with("bias"))
            .flat_map(|t| t.data.iter().copied())
            .collect();
        assert!(all.len() >= 10_000);
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        assert!(mean.abs() <= 0.02, "mean {mean}");
        assert!(all.iter().all(|v| v.abs() <= 0.1));
    }

    #[test]
    fn tying_requires_matching_sizes() {
        let s = ModelSizes {
            vocab: 5,
            embedding: 4,
            hidden: vec![6],
            tied: true,
        };
        assert!(matches!(
            NetworkParams::init(&s, 0, 0.1),
            Err(Error::TyingSizeMismatch {
                embedding: 4,
                hidden: 6
            })
        ));
    }

    #[test]
    fn tied_has_one_fewer_tensor() {
        let tied = NetworkParams::init(&sizes(true), 0, 0.1).unwrap();
        let untied = NetworkParams::init(&sizes(false), 0, 0.1).unwrap();
        assert_eq!(tied.num_tensors() + 1, untied.num_tensors());
        assert!(std::ptr::eq(tied.head_weight(), &tied.embedding));
    }

    #[test]
    fn tensor_views_are_consistent() {
        let mut p = NetworkParams::init(&sizes(false), 0, 0.1).unwrap();
        let names: Vec<String> = p.tensors().into_iter().map(|t| t.name).collect();
        let names_mut: Vec<String> = p.tensors_mut().into_iter().map(|t| t.0).collect();
        assert_eq!(names, names_mut);
        assert_eq!(group_of("layer_2.bias"), "layer_2");
        assert_eq!(group_of("embedding"), "embedding");
        p.validate().unwrap();
    }
}
