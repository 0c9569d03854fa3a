//! Gradient norm clipping: one global bound, or one bound per parameter group.
//!
//! Both variants rescale a vector `g` by `mu / max(mu, ||g||)`. Under the
//! layer-wise policy every group is an independent vector with its own `mu`,
//! so a large gradient in one group never shrinks another group's step.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::GradientSet;

/// Relative tolerance under which a norm counts as within its bound.
///
/// Rescaling by `mu / n` lands within a few ulps of `mu`; treating such norms
/// as in-bound makes clipping idempotent bit for bit.
pub const NORM_SLACK: f64 = 1e-12;

/// Maximum-gradient-norm policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClipPolicy {
    Global {
        max_norm: f64,
    },
    #[serde(rename = "layerwise")]
    LayerWise {
        norms: BTreeMap<String, f64>,
    },
}

/// Pre- and post-clip norm of each group, in gradient-set order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClipReport {
    pub groups: Vec<GroupClip>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupClip {
    pub group: String,
    pub pre_norm: f64,
    pub post_norm: f64,
}

impl ClipPolicy {
    pub fn layer_wise<S: Into<String>>(norms: impl IntoIterator<Item = (S, f64)>) -> Self {
        ClipPolicy::LayerWise {
            norms: norms.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    /// Checks that every bound is positive and finite.
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, mu: f64| {
            if mu.is_finite() && mu > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidValue(format!(
                    "clip norm for {name} must be > 0, got {mu}"
                )))
            }
        };
        match self {
            ClipPolicy::Global { max_norm } => check("global", *max_norm),
            ClipPolicy::LayerWise { norms } => {
                if norms.is_empty() {
                    return Err(Error::InvalidValue(
                        "layer-wise clip policy is empty".into(),
                    ));
                }
                norms.iter().try_for_each(|(k, &v)| check(k, v))
            }
        }
    }

    /// Checks that a layer-wise policy names exactly `groups`.
    pub fn check_groups<S: AsRef<str>>(&self, groups: &[S]) -> Result<()> {
        let ClipPolicy::LayerWise { norms } = self else {
            return Ok(());
        };
        for g in groups {
            if !norms.contains_key(g.as_ref()) {
                return Err(Error::MissingClipGroup(g.as_ref().to_string()));
            }
        }
        for k in norms.keys() {
            if !groups.iter().any(|g| g.as_ref() == k) {
                return Err(Error::UnknownClipGroup(k.clone()));
            }
        }
        Ok(())
    }

    /// Global policy with the norm a layer-wise policy is equivalent to.
    pub fn to_global_equivalent(&self) -> ClipPolicy {
        match self {
            ClipPolicy::Global { .. } => self.clone(),
            ClipPolicy::LayerWise { norms } => ClipPolicy::Global {
                max_norm: equivalent_global_norm(norms),
            },
        }
    }

    /// Clips in place and reports per-group norms before and after.
    pub fn apply(&self, grads: &mut GradientSet) -> Result<ClipReport> {
        self.validate()?;
        grads.check_finite()?;
        let pre = group_norms(grads);
        match self {
            ClipPolicy::Global { max_norm } => {
                let total = pre.iter().map(|(_, n)| n * n).sum::<f64>().sqrt();
                if let Some(factor) = clip_factor(total, *max_norm) {
                    grads.scale(factor);
                }
            }
            ClipPolicy::LayerWise { norms } => {
                let names: Vec<&str> = grads.group_names();
                self.check_groups(&names)?;
                for (group, (_, n)) in grads.groups_mut().iter_mut().zip(&pre) {
                    if let Some(factor) = clip_factor(*n, norms[&group.name]) {
                        group.values_mut().for_each(|v| *v *= factor);
                    }
                }
            }
        }
        let post = group_norms(grads);
        Ok(ClipReport {
            groups: pre
                .into_iter()
                .zip(post)
                .map(|((group, pre_norm), (_, post_norm))| GroupClip {
                    group,
                    pre_norm,
                    post_norm,
                })
                .collect(),
        })
    }
}

/// `Some(mu / n)` when `n` exceeds `mu`, `None` when the vector is in bound.
fn clip_factor(norm: f64, max_norm: f64) -> Option<f64> {
    (norm > max_norm * (1.0 + NORM_SLACK)).then(|| max_norm / norm)
}

fn l2(values: impl Iterator<Item = f64>) -> f64 {
    values.map(|v| v * v).sum::<f64>().sqrt()
}

/// L2 norm of every group, in gradient-set order.
pub fn group_norms(grads: &GradientSet) -> Vec<(String, f64)> {
    grads
        .groups()
        .iter()
        .map(|g| (g.name.clone(), l2(g.values())))
        .collect()
}

/// L2 norm of the full concatenated gradient.
pub fn global_norm(grads: &GradientSet) -> f64 {
    l2(grads.values())
}

/// Rescales the whole gradient by `mu / max(mu, ||g||)`.
pub fn global_clip(grads: &GradientSet, max_norm: f64) -> Result<GradientSet> {
    let mut out = grads.clone();
    ClipPolicy::Global { max_norm }.apply(&mut out)?;
    Ok(out)
}

/// Rescales each group `i` by `mu_i / max(mu_i, ||g_i||)`.
pub fn layerwise_clip(grads: &GradientSet, norms: &BTreeMap<String, f64>) -> Result<GradientSet> {
    let mut out = grads.clone();
    ClipPolicy::LayerWise {
        norms: norms.clone(),
    }
    .apply(&mut out)?;
    Ok(out)
}

/// Global bound matching a layer-wise policy: `sqrt(sum_i mu_i^2)`.
pub fn equivalent_global_norm(norms: &BTreeMap<String, f64>) -> f64 {
    norms.values().map(|m| m * m).sum::<f64>().sqrt()
}
