use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::StlError;

/// Position of one agent's state block inside a stacked state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub agent: usize,
    pub offset: usize,
    pub dim: usize,
}

/// Ordered agent blocks making up a stacked state `[x_{j1}; x_{j2}; ...]`.
///
/// Agent ids are the numbers used in formula text (`x1`, `x2`, ...).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateLayout {
    blocks: Vec<Block>,
}

impl StateLayout {
    /// Builds a layout from `(agent id, state dim)` pairs in stacking order.
    pub fn new(agents: &[(usize, usize)]) -> Result<Self, StlError> {
        let mut blocks = Vec::with_capacity(agents.len());
        let mut offset = 0;
        let mut seen = BTreeSet::new();
        for &(agent, dim) in agents {
            if dim == 0 {
                return Err(StlError::Layout(format!("agent x{agent} has zero state dimension")));
            }
            if !seen.insert(agent) {
                return Err(StlError::Layout(format!("agent x{agent} listed twice")));
            }
            blocks.push(Block { agent, offset, dim });
            offset += dim;
        }
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn total_dim(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.dim)
    }

    pub fn block(&self, agent: usize) -> Option<&Block> {
        self.blocks.iter().find(|b| b.agent == agent)
    }

    pub fn agents(&self) -> impl Iterator<Item = usize> + '_ {
        self.blocks.iter().map(|b| b.agent)
    }
}

/// The two built-in concave predicate forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum PredicateForm {
    /// `h(x) = c·x + d`
    Affine { coeffs: Vec<f64>, offset: f64 },
    /// `h(x) = e - |A x + b|²`, `A` stored row-major.
    QuadBall {
        center_map: Vec<Vec<f64>>,
        shift: Vec<f64>,
        level: f64,
    },
}

/// A concave, continuously differentiable predicate function over a stacked state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub form: PredicateForm,
    /// Agents whose state blocks carry nonzero coefficients.
    pub support: BTreeSet<usize>,
    /// Source text, kept for diagnostics.
    #[serde(default)]
    pub label: String,
}

impl Predicate {
    pub fn affine(coeffs: Vec<f64>, offset: f64, layout: &StateLayout) -> Self {
        let support = support_of(layout, |i| coeffs[i] != 0.0);
        Self {
            form: PredicateForm::Affine { coeffs, offset },
            support,
            label: String::new(),
        }
    }

    pub fn quad_ball(center_map: Vec<Vec<f64>>, shift: Vec<f64>, level: f64, layout: &StateLayout) -> Self {
        let support = support_of(layout, |i| center_map.iter().any(|row| row[i] != 0.0));
        Self {
            form: PredicateForm::QuadBall { center_map, shift, level },
            support,
            label: String::new(),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Dimension of the stacked state this predicate is defined on.
    pub fn dim(&self) -> usize {
        match &self.form {
            PredicateForm::Affine { coeffs, .. } => coeffs.len(),
            PredicateForm::QuadBall { center_map, .. } => center_map.first().map_or(0, Vec::len),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match &self.form {
            PredicateForm::Affine { coeffs, offset } => dot(coeffs, x) + offset,
            PredicateForm::QuadBall { center_map, shift, level } => {
                let mut sq = 0.0;
                for (row, b) in center_map.iter().zip(shift) {
                    let r = dot(row, x) + b;
                    sq += r * r;
                }
                level - sq
            }
        }
    }

    /// Adds `weight * ∇h(x)` into `out`.
    pub fn add_gradient(&self, x: &[f64], weight: f64, out: &mut [f64]) {
        match &self.form {
            PredicateForm::Affine { coeffs, .. } => {
                for (o, c) in out.iter_mut().zip(coeffs) {
                    *o += weight * c;
                }
            }
            PredicateForm::QuadBall { center_map, shift, .. } => {
                for (row, b) in center_map.iter().zip(shift) {
                    let r = dot(row, x) + b;
                    let s = -2.0 * weight * r;
                    for (o, a) in out.iter_mut().zip(row) {
                        *o += s * a;
                    }
                }
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        self.add_gradient(x, 1.0, &mut g);
        g
    }

    /// Adds `weight * ∇²h` into the row-major `n × n` matrix `out`.
    pub fn add_hessian(&self, weight: f64, out: &mut [f64]) {
        if let PredicateForm::QuadBall { center_map, .. } = &self.form {
            let n = self.dim();
            for row in center_map {
                for i in 0..n {
                    if row[i] == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        out[i * n + j] -= 2.0 * weight * row[i] * row[j];
                    }
                }
            }
        }
    }

    /// `sup_x h(x)`; `+inf` for a non-constant affine predicate.
    pub fn sup(&self) -> f64 {
        match &self.form {
            PredicateForm::Affine { coeffs, offset } => {
                if coeffs.iter().any(|&c| c != 0.0) {
                    f64::INFINITY
                } else {
                    *offset
                }
            }
            PredicateForm::QuadBall { level, .. } => *level,
        }
    }

    /// Predicate function of `¬μ`, i.e. `-h`. Only affine predicates stay concave.
    pub fn negated(&self) -> Result<Self, StlError> {
        match &self.form {
            PredicateForm::Affine { coeffs, offset } => Ok(Self {
                form: PredicateForm::Affine {
                    coeffs: coeffs.iter().map(|c| -c).collect(),
                    offset: -offset,
                },
                support: self.support.clone(),
                label: format!("!({})", self.label),
            }),
            PredicateForm::QuadBall { .. } => Err(StlError::Semantic {
                pos: 0,
                msg: "negated ball2 predicate is not concave".into(),
            }),
        }
    }
}

fn support_of(layout: &StateLayout, nonzero: impl Fn(usize) -> bool) -> BTreeSet<usize> {
    layout
        .blocks()
        .iter()
        .filter(|b| (b.offset..b.offset + b.dim).any(&nonzero))
        .map(|b| b.agent)
        .collect()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
