//! Forward pass and truncated backpropagation through time.
//!
//! Activations are stored time-major: row `t * B + b` of every trace matrix
//! holds batch element `b` at timestep `t`. Gate blocks are fused as
//! `[input | forget | cell | output]`, each `h` wide.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::dropout::DropoutMasks;
use super::grads::GradientSet;
use super::params::{
    layer_group, LstmLayerParams, ModelSizes, NetworkParams, EMBEDDING_GROUP, SOFTMAX_GROUP,
};
use crate::corpus::Window;
use crate::error::{Error, Result};

/// Hidden and cell state of every layer, `B x h_k` each.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub hidden: Vec<Array2<f64>>,
    pub cell: Vec<Array2<f64>>,
}

impl LstmState {
    pub fn zeros(hidden_sizes: &[usize], batch: usize) -> Self {
        LstmState {
            hidden: hidden_sizes
                .iter()
                .map(|&h| Array2::zeros((batch, h)))
                .collect(),
            cell: hidden_sizes
                .iter()
                .map(|&h| Array2::zeros((batch, h)))
                .collect(),
        }
    }

    pub fn batch_size(&self) -> usize {
        self.hidden.first().map_or(0, |h| h.nrows())
    }
}

/// Everything one layer needs for its backward pass.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// Masked layer inputs, `TB x d_in`.
    pub inputs: Array2<f64>,
    /// Masked previous hidden state fed to the recurrent weight, `TB x h`.
    pub recurrent_inputs: Array2<f64>,
    /// Previous cell state, `TB x h`.
    pub prev_cells: Array2<f64>,
    /// Gate activations `[i | f | g | o]`, `TB x 4h`.
    pub gates: Array2<f64>,
    /// Cell state, `TB x h`.
    pub cells: Array2<f64>,
    /// `tanh` of the cell state, `TB x h`.
    pub cell_tanh: Array2<f64>,
    /// Layer output (the state sequence), `TB x h`.
    pub hidden: Array2<f64>,
    pub input_mask: Array2<f64>,
    pub recurrent_mask: Array2<f64>,
    pub batch: usize,
}

impl LayerTrace {
    pub fn steps(&self) -> usize {
        self.hidden.nrows() / self.batch
    }

    /// Hidden state at timestep `t`, `B x h`.
    pub fn hidden_at(&self, t: usize) -> ArrayView2<'_, f64> {
        self.hidden
            .slice(s![t * self.batch..(t + 1) * self.batch, ..])
    }

    pub fn cell_at(&self, t: usize) -> ArrayView2<'_, f64> {
        self.cells
            .slice(s![t * self.batch..(t + 1) * self.batch, ..])
    }
}

/// Cached forward computation over one window.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub sizes: ModelSizes,
    pub batch: usize,
    pub steps: usize,
    /// Input ids, time-major.
    pub tokens: Vec<u32>,
    /// Target ids, time-major.
    pub targets: Vec<u32>,
    pub embedding_mask: Array1<f64>,
    pub layers: Vec<LayerTrace>,
    /// Masked top-layer output fed to the softmax, `TB x h_top`.
    pub top_output: Array2<f64>,
    pub output_mask: Array2<f64>,
    /// Softmax probabilities, `TB x V`.
    pub probs: Array2<f64>,
    /// Summed negative log-likelihood (nats) over all positions.
    pub total_nll: f64,
}

impl ForwardTrace {
    pub fn positions(&self) -> usize {
        self.batch * self.steps
    }

    pub fn loss(&self) -> f64 {
        self.total_nll / self.positions() as f64
    }

    /// State after the last timestep, detached for the next window.
    pub fn final_state(&self) -> LstmState {
        let t = self.steps - 1;
        LstmState {
            hidden: self
                .layers
                .iter()
                .map(|l| l.hidden_at(t).to_owned())
                .collect(),
            cell: self
                .layers
                .iter()
                .map(|l| l.cell_at(t).to_owned())
                .collect(),
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Multiplies row `t * B + b` of `x` by row `b` of `mask`.
fn apply_batch_mask(x: &mut Array2<f64>, mask: &Array2<f64>) {
    let b = mask.nrows();
    for mut chunk in x.axis_chunks_iter_mut(Axis(0), b) {
        chunk *= mask;
    }
}

/// Runs one LSTM layer over a time-major input sequence (`TB x d_in`).
///
/// `layer_number` is 1-based and only used for error reporting.
pub fn lstm_layer_forward(
    layer: &LstmLayerParams,
    inputs: ArrayView2<'_, f64>,
    init_hidden: ArrayView2<'_, f64>,
    init_cell: ArrayView2<'_, f64>,
    input_mask: &Array2<f64>,
    recurrent_mask: &Array2<f64>,
    layer_number: usize,
) -> Result<LayerTrace> {
    let batch = init_hidden.nrows();
    let h = layer.hidden();
    if batch == 0 || !inputs.nrows().is_multiple_of(batch) {
        return Err(Error::Shape(format!(
            "layer {layer_number}: {} input rows not divisible by batch {batch}",
            inputs.nrows()
        )));
    }
    if inputs.ncols() != layer.input_size()
        || init_hidden.dim() != (batch, h)
        || init_cell.dim() != (batch, h)
        || input_mask.dim() != (batch, layer.input_size())
        || recurrent_mask.dim() != (batch, h)
    {
        return Err(Error::Shape(format!(
            "layer {layer_number}: state, mask or input width disagrees with parameters"
        )));
    }
    let steps = inputs.nrows() / batch;
    let rows = steps * batch;

    let mut masked = inputs.to_owned();
    apply_batch_mask(&mut masked, input_mask);
    let mut pre = masked.dot(&layer.w_input.t());
    pre += &layer.bias;

    let mut gates = Array2::zeros((rows, 4 * h));
    let mut recurrent_inputs = Array2::zeros((rows, h));
    let mut prev_cells = Array2::zeros((rows, h));
    let mut cells = Array2::zeros((rows, h));
    let mut cell_tanh = Array2::zeros((rows, h));
    let mut hidden = Array2::zeros((rows, h));

    let mut h_prev = init_hidden.to_owned();
    let mut c_prev = init_cell.to_owned();
    for t in 0..steps {
        let r0 = t * batch;
        let hm = &h_prev * recurrent_mask;
        let mut z = pre.slice(s![r0..r0 + batch, ..]).to_owned();
        general_mat_mul(1.0, &hm, &layer.w_recurrent.t(), 1.0, &mut z);

        for b in 0..batch {
            let r = r0 + b;
            for j in 0..h {
                let i_g = sigmoid(z[[b, j]]);
                let f_g = sigmoid(z[[b, h + j]]);
                let g_g = z[[b, 2 * h + j]].tanh();
                let o_g = sigmoid(z[[b, 3 * h + j]]);
                let c = f_g * c_prev[[b, j]] + i_g * g_g;
                let tc = c.tanh();
                gates[[r, j]] = i_g;
                gates[[r, h + j]] = f_g;
                gates[[r, 2 * h + j]] = g_g;
                gates[[r, 3 * h + j]] = o_g;
                prev_cells[[r, j]] = c_prev[[b, j]];
                cells[[r, j]] = c;
                cell_tanh[[r, j]] = tc;
                hidden[[r, j]] = o_g * tc;
            }
        }
        let step_h = hidden.slice(s![r0..r0 + batch, ..]);
        let step_c = cells.slice(s![r0..r0 + batch, ..]);
        if step_h.iter().chain(step_c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow {
                layer: layer_number,
                timestep: t,
            });
        }
        recurrent_inputs
            .slice_mut(s![r0..r0 + batch, ..])
            .assign(&hm);
        h_prev.assign(&step_h);
        c_prev.assign(&step_c);
    }

    Ok(LayerTrace {
        inputs: masked,
        recurrent_inputs,
        prev_cells,
        gates,
        cells,
        cell_tanh,
        hidden,
        input_mask: input_mask.clone(),
        recurrent_mask: recurrent_mask.clone(),
        batch,
    })
}

/// Looks up (masked) embedding rows for time-major ids.
fn embed(params: &NetworkParams, tokens: &[u32], mask: &Array1<f64>) -> Array2<f64> {
    let d = params.embedding.ncols();
    let mut out = Array2::zeros((tokens.len(), d));
    for (r, &id) in tokens.iter().enumerate() {
        let factor = mask[id as usize];
        let row = params.embedding.row(id as usize);
        out.row_mut(r).zip_mut_with(&row, |o, &e| *o = e * factor);
    }
    out
}

fn time_major(ids: &Array2<u32>) -> Vec<u32> {
    ids.t().iter().copied().collect()
}

fn check_masks(params: &NetworkParams, masks: &DropoutMasks, batch: usize) -> Result<()> {
    let shape = masks.shape();
    let sizes = params.sizes();
    if shape.batch != batch
        || shape.vocab != sizes.vocab
        || shape.hidden != sizes.hidden
        || (sizes.num_layers() > 0 && shape.embedding != sizes.embedding)
        || masks.output.ncols() != sizes.top()
    {
        return Err(Error::Shape(format!(
            "dropout masks {shape:?} do not fit model {sizes:?} with batch {batch}"
        )));
    }
    Ok(())
}

/// Runs the network over `window`, starting from `carry`.
///
/// Returns the trace and the mean negative log-likelihood (nats) over all
/// `B * T` positions.
pub fn forward(
    params: &NetworkParams,
    window: &Window,
    carry: &LstmState,
    masks: &DropoutMasks,
) -> Result<(ForwardTrace, f64)> {
    let batch = window.batch_size();
    let steps = window.len();
    if batch == 0 || steps == 0 {
        return Err(Error::EmptyStream);
    }
    if window.targets.dim() != window.inputs.dim() {
        return Err(Error::Shape("inputs and targets differ in shape".into()));
    }
    let v = params.vocab();
    if let Some(&bad) = window
        .inputs
        .iter()
        .chain(window.targets.iter())
        .find(|&&id| id as usize >= v)
    {
        return Err(Error::InvalidValue(format!(
            "token id {bad} outside vocabulary of {v}"
        )));
    }
    let sizes = params.sizes();
    if carry.hidden.len() != sizes.num_layers()
        || carry
            .hidden
            .iter()
            .chain(carry.cell.iter())
            .any(|m| m.nrows() != batch)
    {
        return Err(Error::Shape(
            "carry state does not match model or batch".into(),
        ));
    }
    check_masks(params, masks, batch)?;

    let tokens = time_major(&window.inputs);
    let targets = time_major(&window.targets);

    let mut below = embed(params, &tokens, &masks.embedding);
    let mut layers = Vec::with_capacity(params.num_layers());
    for (k, layer) in params.layers.iter().enumerate() {
        let trace = lstm_layer_forward(
            layer,
            below.view(),
            carry.hidden[k].view(),
            carry.cell[k].view(),
            &masks.layer_input[k],
            &masks.recurrent[k],
            k + 1,
        )?;
        below = trace.hidden.clone();
        layers.push(trace);
    }

    let mut top_output = below;
    apply_batch_mask(&mut top_output, &masks.output);
    let mut logits = top_output.dot(&params.head_weight().t());
    logits += &params.softmax_bias;

    let mut total_nll = 0.0;
    for (r, mut row) in logits.axis_iter_mut(Axis(0)).enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        if !max.is_finite() || row.iter().any(|x| x.is_nan()) {
            return Err(Error::NumericOverflow {
                layer: params.num_layers() + 1,
                timestep: r / batch,
            });
        }
        let sum: f64 = row.iter().map(|&x| (x - max).exp()).sum();
        let lse = max + sum.ln();
        total_nll += lse - row[targets[r] as usize];
        row.mapv_inplace(|x| (x - lse).exp());
    }

    let trace = ForwardTrace {
        sizes,
        batch,
        steps,
        tokens,
        targets,
        embedding_mask: masks.embedding.clone(),
        layers,
        top_output,
        output_mask: masks.output.clone(),
        probs: logits,
        total_nll,
    };
    let loss = trace.loss();
    Ok((trace, loss))
}

/// Backpropagates through one layer. Returns the parameter gradients and the
/// gradient with respect to the (unmasked) layer inputs.
fn lstm_layer_backward(
    layer: &LstmLayerParams,
    trace: &LayerTrace,
    d_hidden: &Array2<f64>,
) -> (LstmLayerParams, Array2<f64>) {
    let batch = trace.batch;
    let steps = trace.steps();
    let h = layer.hidden();
    let mut d_gates = Array2::zeros((steps * batch, 4 * h));
    let mut d_recurrent = Array2::zeros((4 * h, h));
    let mut dh_next = Array2::<f64>::zeros((batch, h));
    let mut dc_next = Array2::<f64>::zeros((batch, h));

    for t in (0..steps).rev() {
        let r0 = t * batch;
        for b in 0..batch {
            let r = r0 + b;
            for j in 0..h {
                let i_g = trace.gates[[r, j]];
                let f_g = trace.gates[[r, h + j]];
                let g_g = trace.gates[[r, 2 * h + j]];
                let o_g = trace.gates[[r, 3 * h + j]];
                let tc = trace.cell_tanh[[r, j]];
                let dh = d_hidden[[r, j]] + dh_next[[b, j]];
                let dc = dh * o_g * (1.0 - tc * tc) + dc_next[[b, j]];
                d_gates[[r, j]] = dc * g_g * i_g * (1.0 - i_g);
                d_gates[[r, h + j]] = dc * trace.prev_cells[[r, j]] * f_g * (1.0 - f_g);
                d_gates[[r, 2 * h + j]] = dc * i_g * (1.0 - g_g * g_g);
                d_gates[[r, 3 * h + j]] = dh * tc * o_g * (1.0 - o_g);
                dc_next[[b, j]] = dc * f_g;
            }
        }
        let dz = d_gates.slice(s![r0..r0 + batch, ..]);
        let mut dhm = dz.dot(&layer.w_recurrent);
        dhm *= &trace.recurrent_mask;
        dh_next = dhm;
        let hm = trace.recurrent_inputs.slice(s![r0..r0 + batch, ..]);
        general_mat_mul(1.0, &dz.t(), &hm, 1.0, &mut d_recurrent);
    }

    let d_input = d_gates.t().dot(&trace.inputs);
    let d_bias = d_gates.sum_axis(Axis(0));
    let mut d_x = d_gates.dot(&layer.w_input);
    apply_batch_mask(&mut d_x, &trace.input_mask);
    (
        LstmLayerParams {
            w_input: d_input,
            w_recurrent: d_recurrent,
            bias: d_bias,
        },
        d_x,
    )
}

/// Exact gradient of the window loss with respect to every parameter.
///
/// Gradients do not flow into the carry state the window started from.
pub fn backward(params: &NetworkParams, trace: &ForwardTrace) -> Result<GradientSet> {
    if trace.sizes != params.sizes() {
        return Err(Error::Shape(format!(
            "trace was produced by {:?}, parameters are {:?}",
            trace.sizes,
            params.sizes()
        )));
    }
    let n = trace.positions() as f64;

    let mut d_logits = trace.probs.clone();
    for (r, &y) in trace.targets.iter().enumerate() {
        d_logits[[r, y as usize]] -= 1.0;
    }
    d_logits.mapv_inplace(|x| x / n);

    let d_head = d_logits.t().dot(&trace.top_output);
    let d_head_bias = d_logits.sum_axis(Axis(0));
    let mut d_below = d_logits.dot(params.head_weight());
    apply_batch_mask(&mut d_below, &trace.output_mask);

    let mut layer_grads = Vec::with_capacity(params.num_layers());
    for (layer, lt) in params.layers.iter().zip(&trace.layers).rev() {
        let (g, d_x) = lstm_layer_backward(layer, lt, &d_below);
        layer_grads.push(g);
        d_below = d_x;
    }
    layer_grads.reverse();

    let mut d_embedding = Array2::zeros(params.embedding.raw_dim());
    for (r, &id) in trace.tokens.iter().enumerate() {
        let factor = trace.embedding_mask[id as usize];
        let src = d_below.row(r);
        d_embedding
            .row_mut(id as usize)
            .zip_mut_with(&src, |d, &g| *d += g * factor);
    }

    let tied = params.is_tied();
    if tied {
        d_embedding += &d_head;
    }

    let mut grads = GradientSet::new();
    grads.push(EMBEDDING_GROUP, EMBEDDING_GROUP, into_vec(d_embedding));
    for (k, g) in layer_grads.into_iter().enumerate() {
        let group = layer_group(k + 1);
        grads.push(&group, format!("{group}.w_input"), into_vec(g.w_input));
        grads.push(
            &group,
            format!("{group}.w_recurrent"),
            into_vec(g.w_recurrent),
        );
        grads.push(&group, format!("{group}.bias"), g.bias.to_vec());
    }
    if !tied {
        grads.push(SOFTMAX_GROUP, "softmax.weight", into_vec(d_head));
    }
    grads.push(SOFTMAX_GROUP, "softmax.bias", d_head_bias.to_vec());
    Ok(grads)
}

fn into_vec(a: Array2<f64>) -> Vec<f64> {
    if a.is_standard_layout() {
        a.into_raw_vec_and_offset().0
    } else {
        a.iter().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::batchify;
    use crate::net::dropout::{sample_masks, KeepProbs, MaskShape};

    fn window(ids: &[u32], batch: usize, t: usize) -> Window {
        batchify(ids, batch).unwrap().windows(t).next().unwrap()
    }

    fn mask_shape(p: &NetworkParams, batch: usize) -> MaskShape {
        let s = p.sizes();
        MaskShape {
            batch,
            vocab: s.vocab,
            embedding: s.embedding,
            hidden: s.hidden,
        }
    }

    #[test]
    fn zero_params_give_log_v_loss() {
        let sizes = ModelSizes {
            vocab: 7,
            embedding: 4,
            hidden: vec![3, 4],
            tied: true,
        };
        let p = NetworkParams::init(&sizes, 1, 0.0).unwrap();
        let w = window(&[0, 3, 6, 2, 1, 5, 4, 4, 2, 0], 2, 4);
        let masks = DropoutMasks::identity(&mask_shape(&p, 2));
        let (trace, loss) = forward(&p, &w, &LstmState::zeros(&[3, 4], 2), &masks).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-12);
        assert!(trace.probs.iter().all(|&q| (q - 1.0 / 7.0).abs() < 1e-15));
    }

    #[test]
    fn hand_computed_single_cell() {
        // One layer, h = 2, T = 1, B = 1, untied, V = 3, d_emb = 2.
        let mut p = NetworkParams::init(
            &ModelSizes {
                vocab: 3,
                embedding: 2,
                hidden: vec![2],
                tied: false,
            },
            0,
            0.0,
        )
        .unwrap();
        p.embedding = ndarray::array![[0.5, -0.25], [0.1, 0.2], [-0.3, 0.4]];
        let wi: Vec<f64> = (0..16).map(|i| 0.05 * (i as f64) - 0.3).collect();
        let wr: Vec<f64> = (0..16).map(|i| 0.02 * (i as f64) - 0.1).collect();
        p.layers[0].w_input = Array2::from_shape_vec((8, 2), wi.clone()).unwrap();
        p.layers[0].w_recurrent = Array2::from_shape_vec((8, 2), wr.clone()).unwrap();
        p.layers[0].bias = ndarray::array![0.1, -0.1, 1.0, 0.5, 0.0, 0.2, -0.2, 0.3];
        p.softmax_weight = Some(ndarray::array![[1.0, -1.0], [0.5, 0.25], [-0.75, 0.6]]);
        p.softmax_bias = ndarray::array![0.0, 0.1, -0.1];
        let h0 = [0.2, -0.1];
        let c0 = [0.3, 0.05];

        // Scalar evaluation of the standard cell.
        let x = [0.5, -0.25];
        let mut z = [0.0; 8];
        for (row, zr) in z.iter_mut().enumerate() {
            *zr = p.layers[0].bias[row]
                + wi[row * 2] * x[0]
                + wi[row * 2 + 1] * x[1]
                + wr[row * 2] * h0[0]
                + wr[row * 2 + 1] * h0[1];
        }
        let sg = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut h1 = [0.0; 2];
        for j in 0..2 {
            let c = sg(z[2 + j]) * c0[j] + sg(z[j]) * z[4 + j].tanh();
            h1[j] = sg(z[6 + j]) * c.tanh();
        }
        let w = p.softmax_weight.as_ref().unwrap();
        let logits: Vec<f64> = (0..3)
            .map(|v| w[[v, 0]] * h1[0] + w[[v, 1]] * h1[1] + p.softmax_bias[v])
            .collect();
        let lse = logits.iter().map(|l| l.exp()).sum::<f64>().ln();
        let expected = lse - logits[2];

        let win = Window {
            inputs: ndarray::array![[0u32]],
            targets: ndarray::array![[2u32]],
        };
        let carry = LstmState {
            hidden: vec![ndarray::array![[h0[0], h0[1]]]],
            cell: vec![ndarray::array![[c0[0], c0[1]]]],
        };
        let masks = DropoutMasks::identity(&mask_shape(&p, 1));
        let (_, loss) = forward(&p, &win, &carry, &masks).unwrap();
        assert!((loss - expected).abs() < 1e-14, "{loss} vs {expected}");
    }

    #[test]
    fn identity_masks_match_no_dropout_bitwise() {
        let sizes = ModelSizes {
            vocab: 9,
            embedding: 5,
            hidden: vec![5],
            tied: true,
        };
        let p = NetworkParams::init(&sizes, 4, 0.3).unwrap();
        let w = window(&[1, 2, 3, 4, 5, 6, 7, 8, 0, 1, 2, 3], 2, 5);
        let carry = LstmState::zeros(&[5], 2);
        let ident = DropoutMasks::identity(&mask_shape(&p, 2));
        let sampled = sample_masks(&mask_shape(&p, 2), &KeepProbs::NONE, 99).unwrap();
        let (_, a) = forward(&p, &w, &carry, &ident).unwrap();
        let (_, b) = forward(&p, &w, &carry, &sampled).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn single_token_vocab_has_zero_gradient() {
        let sizes = ModelSizes {
            vocab: 1,
            embedding: 3,
            hidden: vec![3],
            tied: false,
        };
        let p = NetworkParams::init(&sizes, 2, 0.2).unwrap();
        let w = window(&[0; 8], 2, 3);
        let masks = DropoutMasks::identity(&mask_shape(&p, 2));
        let (trace, loss) = forward(&p, &w, &LstmState::zeros(&[3], 2), &masks).unwrap();
        assert_eq!(loss, 0.0);
        let g = backward(&p, &trace).unwrap();
        assert!(g.values().all(|v| v == 0.0));
    }

    #[test]
    fn nan_weight_reports_layer() {
        let sizes = ModelSizes {
            vocab: 4,
            embedding: 3,
            hidden: vec![3, 3],
            tied: true,
        };
        let mut p = NetworkParams::init(&sizes, 2, 0.2).unwrap();
        p.layers[1].w_input[[0, 0]] = f64::NAN;
        let w = window(&[0, 1, 2, 3, 0, 1, 2, 3], 2, 3);
        let masks = DropoutMasks::identity(&mask_shape(&p, 2));
        let err = forward(&p, &w, &LstmState::zeros(&[3, 3], 2), &masks).unwrap_err();
        assert!(
            matches!(
                err,
                Error::NumericOverflow {
                    layer: 2,
                    timestep: 0
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn mismatched_trace_rejected() {
        let a = NetworkParams::init(
            &ModelSizes {
                vocab: 4,
                embedding: 3,
                hidden: vec![3],
                tied: true,
            },
            0,
            0.1,
        )
        .unwrap();
        let b = NetworkParams::init(
            &ModelSizes {
                vocab: 4,
                embedding: 3,
                hidden: vec![3, 3],
                tied: true,
            },
            0,
            0.1,
        )
        .unwrap();
        let w = window(&[0, 1, 2, 3], 1, 3);
        let masks = DropoutMasks::identity(&mask_shape(&a, 1));
        let (trace, _) = forward(&a, &w, &LstmState::zeros(&[3], 1), &masks).unwrap();
        assert!(matches!(backward(&b, &trace), Err(Error::Shape(_))));
    }

    #[test]
    fn composition_matches_prefix_trace() {
        let sizes = ModelSizes {
            vocab: 10,
            embedding: 6,
            hidden: vec![5, 4, 6],
            tied: true,
        };
        let p = NetworkParams::init(&sizes, 21, 0.4).unwrap();
        let w = window(
            &(0..24).map(|i| (i * 7 % 10) as u32).collect::<Vec<_>>(),
            3,
            6,
        );
        let keep = KeepProbs {
            embedding: 0.9,
            input: 0.8,
            hidden: 0.7,
            recurrent: 0.75,
            output: 0.6,
        };
        let masks = sample_masks(&mask_shape(&p, 3), &keep, 8).unwrap();
        let carry = LstmState::zeros(&sizes.hidden, 3);
        let (trace, _) = forward(&p, &w, &carry, &masks).unwrap();
        for k in 1..3 {
            let again = lstm_layer_forward(
                &p.layers[k],
                trace.layers[k - 1].hidden.view(),
                carry.hidden[k].view(),
                carry.cell[k].view(),
                &masks.layer_input[k],
                &masks.recurrent[k],
                k + 1,
            )
            .unwrap();
            assert_eq!(again.hidden, trace.layers[k].hidden);
        }
    }
}
