use serde::{Deserialize, Serialize};

use super::dropout::{DropoutMasks, MaskShape};
use super::lstm::{forward, LstmState};
use super::params::NetworkParams;
use crate::corpus::BatchedStream;
use crate::error::{Error, Result};

/// Totals from one pass over a stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub tokens: usize,
    /// Summed negative log-likelihood in nats.
    pub nll: f64,
    pub perplexity: f64,
}

impl Evaluation {
    pub fn mean_nll(&self) -> f64 {
        self.nll / self.tokens as f64
    }
}

/// Perplexity `exp(total NLL / tokens)` with dropout off and the hidden state
/// carried across consecutive windows.
pub fn evaluate(params: &NetworkParams, stream: &BatchedStream, bptt: usize) -> Result<Evaluation> {
    if stream.supervised_positions() == 0 {
        return Err(Error::EmptyStream);
    }
    let sizes = params.sizes();
    let batch = stream.batch_size();
    let masks = DropoutMasks::identity(&MaskShape {
        batch,
        vocab: sizes.vocab,
        embedding: sizes.embedding,
        hidden: sizes.hidden.clone(),
    });
    let mut state = LstmState::zeros(&sizes.hidden, batch);
    let mut nll = 0.0;
    let mut tokens = 0;
    for window in stream.windows(bptt) {
        let (trace, _) = forward(params, &window, &state, &masks)?;
        nll += trace.total_nll;
        tokens += trace.positions();
        state = trace.final_state();
    }
    Ok(Evaluation {
        tokens,
        nll,
        perplexity: (nll / tokens as f64).exp(),
    })
}
