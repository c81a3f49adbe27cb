//! Dense layers over a [`ParameterSet`].

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::array::Array;
use super::params::{Bound, ParamId, ParameterSet};
use super::tape::Var;
use super::DiffError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Elu,
    Tanh,
}

impl Activation {
    fn apply(self, x: Var<'_>) -> Var<'_> {
        match self {
            Self::Identity => x,
            Self::Elu => x.elu(),
            Self::Tanh => x.tanh(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn new(
        params: &mut ParameterSet,
        name: &str,
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        let w: Vec<f64> = (0..inputs * outputs).map(|_| dist.sample(rng)).collect();
        let weight = params.add(
            format!("{name}/w"),
            Array::matrix(inputs, outputs, w).expect("sized"),
        );
        let bias = params.add(format!("{name}/b"), Array::zeros(&[outputs]));
        Self {
            weight,
            bias,
            inputs,
            outputs,
            activation,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>, DiffError> {
        Ok(self.activation.apply(x.affine(p[self.weight], p[self.bias])?))
    }
}

/// Stack of dense layers; hidden layers share one activation, the output
/// layer is linear.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    pub fn new(
        params: &mut ParameterSet,
        name: &str,
        sizes: &[usize],
        hidden: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(sizes.len() >= 2, "an mlp needs input and output sizes");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { Activation::Identity } else { hidden };
                Dense::new(params, &format!("{name}/{i}"), w[0], w[1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, mut x: Var<'t>) -> Result<Var<'t>, DiffError> {
        for layer in &self.layers {
            x = layer.forward(p, x)?;
        }
        Ok(x)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn output_layer(&self) -> &Dense {
        self.layers.last().expect("non-empty")
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn outputs(&self) -> usize {
        self.output_layer().outputs
    }
}
