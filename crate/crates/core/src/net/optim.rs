use std::collections::HashMap;

use super::grads::GradientSet;
use super::params::NetworkParams;
use crate::error::{Error, Result};

/// Plain SGD: `theta <- theta - lr * g` for every tensor.
///
/// Every parameter tensor must have a gradient of the same length; the tied
/// model's softmax weight is the embedding and is updated once.
pub fn sgd_step(params: &mut NetworkParams, grads: &GradientSet, lr: f64) -> Result<()> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(Error::InvalidValue(format!(
            "learning rate must be >= 0, got {lr}"
        )));
    }
    grads.check_finite()?;
    let by_name: HashMap<&str, &[f64]> = grads
        .tensors()
        .map(|t| (t.name.as_str(), t.values.as_slice()))
        .collect();
    let mut targets = params.tensors_mut();
    // Check everything before touching any parameter.
    for (name, data) in &targets {
        match by_name.get(name.as_str()) {
            Some(g) if g.len() == data.len() => {}
            Some(g) => {
                return Err(Error::Shape(format!(
                    "gradient {name} has {} values, parameter has {}",
                    g.len(),
                    data.len()
                )))
            }
            None => return Err(Error::Shape(format!("no gradient for parameter {name}"))),
        }
    }
    if by_name.len() != targets.len() {
        return Err(Error::Shape(
            "gradient set has tensors without parameters".into(),
        ));
    }
    for (name, data) in &mut targets {
        let g = by_name[name.as_str()];
        for (p, &d) in data.iter_mut().zip(g) {
            *p -= lr * d;
        }
    }
    Ok(())
}

/// Running arithmetic mean of parameter snapshots (tail averaging).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamAverage {
    mean: NetworkParams,
    count: u64,
}

impl ParamAverage {
    pub fn new(first: &NetworkParams) -> Self {
        ParamAverage {
            mean: first.clone(),
            count: 1,
        }
    }

    pub fn update(&mut self, params: &NetworkParams) {
        self.count += 1;
        let inv = 1.0 / self.count as f64;
        let current = params.tensors();
        for ((_, mean), cur) in self.mean.tensors_mut().into_iter().zip(current) {
            for (m, &p) in mean.iter_mut().zip(cur.data) {
                *m += (p - *m) * inv;
            }
        }
    }

    pub fn mean(&self) -> &NetworkParams {
        &self.mean
    }

    pub fn count(&self) -> u64 {
        self.count
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::params::ModelSizes;

    fn scalarish() -> NetworkParams {
        NetworkParams::init(
            &ModelSizes {
                vocab: 2,
                embedding: 1,
                hidden: vec![1],
                tied: true,
            },
            0,
            0.5,
        )
        .unwrap()
    }

    fn grads_like(p: &NetworkParams, value: f64) -> GradientSet {
        let mut g = GradientSet::new();
        for t in p.tensors() {
            g.push(t.group(), t.name.clone(), vec![value; t.data.len()]);
        }
        g
    }

    #[test]
    fn zero_lr_is_noop() {
        let mut p = scalarish();
        let before = p.clone();
        sgd_step(&mut p, &grads_like(&before, 3.0), 0.0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn forced_arithmetic() {
        let mut p = scalarish();
        p.embedding[[0, 0]] = 1.0;
        let g = grads_like(&p, 2.0);
        sgd_step(&mut p, &g, 0.1).unwrap();
        assert_eq!(p.embedding[[0, 0]], 0.8);
    }

    #[test]
    fn non_finite_gradients_rejected() {
        let mut p = scalarish();
        let before = p.clone();
        let mut g = grads_like(&p, 1.0);
        g.groups_mut()[1].tensors[0].values[0] = f64::INFINITY;
        assert!(matches!(
            sgd_step(&mut p, &g, 0.1),
            Err(Error::NonFiniteGradient { .. })
        ));
        assert_eq!(p, before);
    }

    #[test]
    fn missing_gradient_rejected() {
        let mut p = scalarish();
        let g = GradientSet::from_groups(vec![("embedding", vec![vec![0.0, 0.0]])]);
        assert!(sgd_step(&mut p, &g, 0.1).is_err());
    }

    #[test]
    fn running_average() {
        let mut p = scalarish();
        p.embedding[[0, 0]] = 1.0;
        let mut avg = ParamAverage::new(&p);
        p.embedding[[0, 0]] = 2.0;
        avg.update(&p);
        p.embedding[[0, 0]] = 3.0;
        avg.update(&p);
        assert_eq!(avg.mean().embedding[[0, 0]], 2.0);
        assert_eq!(avg.count(), 3);
    }
}
