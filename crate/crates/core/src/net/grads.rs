use crate::error::{Error, Result};

/// A flat gradient tensor, named like the parameter it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct GradTensor {
    pub name: String,
    pub values: Vec<f64>,
}

/// A named group of gradient tensors that is clipped as one vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradGroup {
    pub name: String,
    pub tensors: Vec<GradTensor>,
}

impl GradGroup {
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors.iter().flat_map(|t| t.values.iter().copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.tensors.iter_mut().flat_map(|t| t.values.iter_mut())
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.values.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Gradient of the loss, partitioned into ordered named groups.
///
/// For a network the groups are `embedding`, `layer_1` .. `layer_l` and
/// `softmax`; every parameter tensor appears in exactly one group.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientSet {
    groups: Vec<GradGroup>,
}

impl GradientSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a set from `(group, [tensor values])` pairs. Tensors are named
    /// `<group>.<index>`; handy for tests and synthetic inputs.
    pub fn from_groups<S: Into<String>>(groups: Vec<(S, Vec<Vec<f64>>)>) -> Self {
        let groups = groups
            .into_iter()
            .map(|(name, tensors)| {
                let name = name.into();
                let tensors = tensors
                    .into_iter()
                    .enumerate()
                    .map(|(i, values)| GradTensor {
                        name: format!("{name}.{i}"),
                        values,
                    })
                    .collect();
                GradGroup { name, tensors }
            })
            .collect();
        GradientSet { groups }
    }

    /// Appends a tensor to `group`, creating the group at the end if absent.
    pub fn push(&mut self, group: &str, name: impl Into<String>, values: Vec<f64>) {
        let tensor = GradTensor {
            name: name.into(),
            values,
        };
        match self.groups.iter_mut().find(|g| g.name == group) {
            Some(g) => g.tensors.push(tensor),
            None => self.groups.push(GradGroup {
                name: group.to_string(),
                tensors: vec![tensor],
            }),
        }
    }

    pub fn groups(&self) -> &[GradGroup] {
        &self.groups
    }

    pub fn groups_mut(&mut self) -> &mut [GradGroup] {
        &mut self.groups
    }

    pub fn group(&self, name: &str) -> Option<&GradGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn group_mut(&mut self, name: &str) -> Option<&mut GradGroup> {
        self.groups.iter_mut().find(|g| g.name == name)
    }

    pub fn group_names(&self) -> Vec<&str> {
        self.groups.iter().map(|g| g.name.as_str()).collect()
    }

    pub fn tensor(&self, name: &str) -> Option<&GradTensor> {
        self.groups
            .iter()
            .flat_map(|g| g.tensors.iter())
            .find(|t| t.name == name)
    }

    pub fn tensors(&self) -> impl Iterator<Item = &GradTensor> + '_ {
        self.groups.iter().flat_map(|g| g.tensors.iter())
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.groups.iter().flat_map(|g| g.values())
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(GradGroup::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Errors on the first non-finite component.
    pub fn check_finite(&self) -> Result<()> {
        for t in self.tensors() {
            if t.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    tensor: t.name.clone(),
                });
            }
        }
        Ok(())
    }

    /// Multiplies every component by `factor`.
    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.groups {
            g.values_mut().for_each(|v| *v *= factor);
        }
    }
}
