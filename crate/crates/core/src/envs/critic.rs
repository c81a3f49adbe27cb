//! Reference critics for the true dynamics: value iteration on a state grid,
//! then a value network regressed onto the grid.

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::Rng;

use super::EnvKind;
use crate::behavior::{BehaviorError, ValueNet};
use crate::diffmath::Array;

/// Rectangular grid over the physics state. Periodic axes wrap with period
/// `hi - lo` and exclude `hi`; other axes include both ends and clamp.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points: Vec<usize>,
    pub periodic: Vec<bool>,
}

impl GridSpec {
    pub fn for_env(kind: EnvKind) -> Self {
        match kind {
            EnvKind::PendulumSwingUp => Self {
                lo: vec![-PI, -10.0],
                hi: vec![PI, 10.0],
                points: vec![101, 81],
                periodic: vec![true, false],
            },
            EnvKind::PointMass2D => Self {
                lo: vec![-2.0, -2.0, -3.0, -3.0],
                hi: vec![2.0, 2.0, 3.0, 3.0],
                points: vec![9, 9, 7, 7],
                periodic: vec![false; 4],
            },
        }
    }

    pub fn dims(&self) -> usize {
        self.points.len()
    }

    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn step(&self, d: usize) -> f64 {
        let span = self.hi[d] - self.lo[d];
        if self.periodic[d] {
            span / self.points[d] as f64
        } else {
            span / (self.points[d] - 1) as f64
        }
    }

    /// State at flat node index `i` (first axis varies slowest).
    pub fn node(&self, mut i: usize) -> Vec<f64> {
        let mut s = vec![0.0; self.dims()];
        for d in (0..self.dims()).rev() {
            let k = i % self.points[d];
            i /= self.points[d];
            s[d] = self.lo[d] + k as f64 * self.step(d);
        }
        s
    }

    /// Corner indices and multilinear weights of `state`.
    pub fn stencil(&self, state: &[f64]) -> Vec<(usize, f64)> {
        let mut per_axis: Vec<[(usize, f64); 2]> = Vec::with_capacity(self.dims());
        for d in 0..self.dims() {
            let n = self.points[d];
            let h = self.step(d);
            let (k0, k1, w) = if self.periodic[d] {
                let span = self.hi[d] - self.lo[d];
                let x = (state[d] - self.lo[d]).rem_euclid(span) / h;
                let k = (x.floor() as usize).min(n - 1);
                (k, (k + 1) % n, x - k as f64)
            } else {
                let x = ((state[d] - self.lo[d]) / h).clamp(0.0, (n - 1) as f64);
                let k = (x.floor() as usize).min(n - 2);
                (k, k + 1, x - k as f64)
            };
            per_axis.push([(k0, 1.0 - w), (k1, w)]);
        }
        let mut out = vec![(0usize, 1.0f64)];
        for (d, axis) in per_axis.iter().enumerate() {
            let mut next = Vec::with_capacity(out.len() * 2);
            for &(idx, wt) in &out {
                for &(k, w) in axis {
                    if w != 0.0 {
                        next.push((idx * self.points[d] + k, wt * w));
                    }
                }
            }
            out = next;
        }
        out
    }
}

/// State values on the nodes of a [`GridSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct ValueGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl ValueGrid {
    pub fn interpolate(&self, state: &[f64]) -> f64 {
        self.spec.stencil(state).iter().map(|&(i, w)| w * self.values[i]).sum()
    }
}

/// Discounted optimal values of the decision process with `repeat` physics
/// steps per decision and the finite action set `actions`, iterated until
/// the largest update falls below `tol` or `max_iters` sweeps.
pub fn value_iteration(
    kind: EnvKind,
    repeat: usize,
    gamma: f64,
    spec: &GridSpec,
    actions: &[Vec<f64>],
    tol: f64,
    max_iters: usize,
) -> ValueGrid {
    let n = spec.len();
    let mut rewards = Vec::with_capacity(n * actions.len());
    let mut stencils = Vec::with_capacity(n * actions.len());
    for i in 0..n {
        let s = spec.node(i);
        for a in actions {
            let (next, r) = kind.transition(&s, a, repeat);
            rewards.push(r);
            stencils.push(spec.stencil(&next));
        }
    }
    let mut v = vec![0.0; n];
    for _ in 0..max_iters {
        let mut delta: f64 = 0.0;
        let mut next = vec![0.0; n];
        for i in 0..n {
            let mut best = f64::NEG_INFINITY;
            for j in 0..actions.len() {
                let k = i * actions.len() + j;
                let cont: f64 = stencils[k].iter().map(|&(c, w)| w * v[c]).sum();
                best = best.max(rewards[k] + gamma * cont);
            }
            delta = delta.max((best - v[i]).abs());
            next[i] = best;
        }
        v = next;
        if delta < tol {
            break;
        }
    }
    ValueGrid {
        spec: spec.clone(),
        values: v,
    }
}

/// Evenly spaced actions on `[-1, 1]^dim`, `per_axis` values per component.
pub fn action_lattice(dim: usize, per_axis: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = (0..per_axis)
        .map(|k| -1.0 + 2.0 * k as f64 / (per_axis - 1) as f64)
        .collect();
    let mut out = vec![Vec::new()];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&x| {
                    let mut q = p.clone();
                    q.push(x);
                    q
                })
            })
            .collect();
    }
    out
}

pub struct CriticFit {
    pub value: ValueNet,
    pub grid: ValueGrid,
    /// Root-mean-square error of the network on the grid nodes.
    pub rmse: f64,
}

/// Value iteration on the default grid, then `steps` minibatch regression
/// steps of a fresh value network onto the grid values (read through
/// observations).
pub fn fit_oracle_critic<R: Rng>(
    kind: EnvKind,
    repeat: usize,
    gamma: f64,
    hidden: usize,
    steps: usize,
    rng: &mut R,
) -> Result<CriticFit, BehaviorError> {
    let spec = GridSpec::for_env(kind);
    let actions = action_lattice(kind.action_dim(), if kind.action_dim() == 1 { 9 } else { 5 });
    let grid = value_iteration(kind, repeat, gamma, &spec, &actions, 1e-6, 3000);

    let feats: Vec<Vec<f64>> = (0..spec.len()).map(|i| kind.observe(&spec.node(i))).collect();
    // Regress in units of the return bound so the output layer starts in range.
    let scale = 1.0 / (1.0 - gamma).max(1e-3);
    let targets: Vec<f64> = grid.values.iter().map(|v| v / scale).collect();
    let mut value = ValueNet::new(kind.obs_dim(), hidden, 3e-3, rng);
    let batch = 256.min(spec.len());
    for step in 0..steps {
        if step == steps * 3 / 4 {
            value.set_lr(1e-3);
        }
        let idx = sample(rng, spec.len(), batch);
        let rows: Vec<&Vec<f64>> = idx.iter().map(|i| &feats[i]).collect();
        let x = Array::from_rows(&rows)?;
        let y: Vec<f64> = idx.iter().map(|i| targets[i]).collect();
        value.regress(&x, &y, 100.0)?;
    }
    value.scale_output(scale);

    let pred = value.values(&Array::from_rows(&feats)?)?;
    let mse = pred.iter().zip(&grid.values).map(|(p, v)| (p - v).powi(2)).sum::<f64>() / pred.len() as f64;
    Ok(CriticFit {
        value,
        grid,
        rmse: mse.sqrt(),
    })
}
