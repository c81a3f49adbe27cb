use std::ops::Index;
use std::sync::Arc;

use log::warn;

use super::array::Array;
use super::tape::{Grads, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable arrays plus their adaptive-moment optimizer state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    names: Vec<String>,
    values: Vec<Arc<Array>>,
    first_moment: Vec<Array>,
    second_moment: Vec<Array>,
    step: u64,
}

/// Adaptive-moment optimizer constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// Non-finite gradient; parameters and moments untouched.
    Skipped,
}

/// Parameters of one set registered as leaves on a tape.
pub struct Bound<'t> {
    leaves: Vec<Var<'t>>,
    vars: Vec<Var<'t>>,
    frozen: bool,
}

impl<'t> Bound<'t> {
    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    /// The raw parameter leaves, before any stop-gradient wrapping.
    pub fn leaves(&self) -> &[Var<'t>] {
        &self.leaves
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }
}

impl<'t> Index<ParamId> for Bound<'t> {
    type Output = Var<'t>;

    fn index(&self, id: ParamId) -> &Var<'t> {
        &self.vars[id.0]
    }
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name:?}"
        );
        self.first_moment.push(Array::zeros(value.shape()));
        self.second_moment.push(Array::zeros(value.shape()));
        self.names.push(name);
        self.values.push(Arc::new(value));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Array {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn first_moment(&self, id: ParamId) -> &Array {
        &self.first_moment[id.0]
    }

    pub fn second_moment(&self, id: ParamId) -> &Array {
        &self.second_moment[id.0]
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Registers every parameter as a leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        let leaves: Vec<Var<'t>> = self.values.iter().map(|v| tape.leaf_shared(Arc::clone(v))).collect();
        Bound {
            vars: leaves.clone(),
            leaves,
            frozen: false,
        }
    }

    /// Like [`ParameterSet::bind`], but each leaf is wrapped in a stop-gradient
    /// so the set receives exactly zero gradient.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        let leaves: Vec<Var<'t>> = self.values.iter().map(|v| tape.leaf_shared(Arc::clone(v))).collect();
        let vars = leaves.iter().map(|v| v.stop_gradient()).collect();
        Bound {
            leaves,
            vars,
            frozen: true,
        }
    }

    /// Per-parameter gradients, in id order. Frozen bindings yield zeros.
    pub fn gradients(&self, grads: &Grads, bound: &Bound<'_>) -> Vec<Array> {
        bound.leaves.iter().map(|&v| grads.wrt(v)).collect()
    }

    /// One bias-corrected adaptive-moment update.
    pub fn adam_step(&mut self, grads: &[Array], adam: &Adam) -> StepOutcome {
        assert_eq!(grads.len(), self.values.len(), "one gradient per parameter");
        if !grads.iter().all(Array::is_finite) {
            warn!("non-finite gradient, optimizer step skipped at step {}", self.step);
            return StepOutcome::Skipped;
        }
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - adam.beta1.powf(t);
        let c2 = 1.0 - adam.beta2.powf(t);
        for (i, g) in grads.iter().enumerate() {
            assert_eq!(g.shape(), self.values[i].shape(), "gradient shape for {}", self.names[i]);
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let p = Arc::make_mut(&mut self.values[i]).data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                m[j] = adam.beta1 * m[j] + (1.0 - adam.beta1) * gj;
                v[j] = adam.beta2 * v[j] + (1.0 - adam.beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= adam.lr * m_hat / (v_hat.sqrt() + adam.eps);
            }
        }
        StepOutcome::Applied
    }

    pub(crate) fn parts(&self) -> (&[String], &[Arc<Array>], &[Array], &[Array]) {
        (&self.names, &self.values, &self.first_moment, &self.second_moment)
    }

    pub(crate) fn from_parts(
        names: Vec<String>,
        values: Vec<Array>,
        first_moment: Vec<Array>,
        second_moment: Vec<Array>,
        step: u64,
    ) -> Self {
        Self {
            names,
            values: values.into_iter().map(Arc::new).collect(),
            first_moment,
            second_moment,
            step,
        }
    }
}

/// Euclidean norm over all gradient entries.
pub fn global_norm(grads: &[Array]) -> f64 {
    grads.iter().map(Array::sq_norm).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so their global norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Array], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm.is_finite() && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}
