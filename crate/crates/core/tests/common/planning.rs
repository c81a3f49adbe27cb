//! Synthetic search models and an independent checker for search trees.

use latplan_core::planner::{MctsOutcome, PlanError, PlanMode, PlannerConfig, SearchModel, ROOT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One-shot model: the first transition from the root earns `-‖a - target‖²`,
/// every later state is absorbing with zero reward and value, so an action's
/// true value is its immediate reward. The proposal is a Gaussian squashed
/// by tanh around `mode`. States count the steps taken.
pub struct Quadratic {
    pub target: Vec<f64>,
    pub mode: Vec<f64>,
    pub spread: f64,
}

impl Quadratic {
    pub fn reward(&self, a: &[f64]) -> f64 {
        -a.iter().zip(&self.target).map(|(x, t)| (x - t) * (x - t)).sum::<f64>()
    }
}

impl SearchModel for Quadratic {
    type State = u32;

    fn action_dim(&self) -> usize {
        self.target.len()
    }

    fn step(&self, states: &[u32], actions: &[Vec<f64>]) -> Result<(Vec<u32>, Vec<f64>), PlanError> {
        let rewards = states
            .iter()
            .zip(actions)
            .map(|(&s, a)| if s == 0 { self.reward(a) } else { 0.0 })
            .collect();
        Ok((states.iter().map(|s| s + 1).collect(), rewards))
    }

    fn value(&self, states: &[u32]) -> Result<Vec<f64>, PlanError> {
        Ok(vec![0.0; states.len()])
    }

    fn policy_mode(&self, states: &[u32]) -> Result<Vec<Vec<f64>>, PlanError> {
        Ok(vec![self.mode.clone(); states.len()])
    }

    fn sample_actions<R: Rng + ?Sized>(&self, _: &u32, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>, PlanError> {
        Ok((0..n)
            .map(|_| {
                self.mode
                    .iter()
                    .map(|m| {
                        let eps: f64 = rng.sample(rand_distr::StandardNormal);
                        (m.atanh() + self.spread * eps).tanh()
                    })
                    .collect()
            })
            .collect())
    }
}

/// Random smooth dynamics on a small vector state.
pub struct RandomDynamics {
    w: Vec<f64>,
    u: Vec<f64>,
    c: Vec<f64>,
    dim: usize,
    action_dim: usize,
}

impl RandomDynamics {
    pub fn new(seed: u64) -> Self {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let dim = r.random_range(1..4);
        let action_dim = r.random_range(1..3);
        let mut draw = |n: usize| (0..n).map(|_| r.random_range(-1.5..1.5)).collect::<Vec<f64>>();
        Self {
            w: draw(dim * dim),
            u: draw(dim * action_dim),
            c: draw(dim + 2),
            dim,
            action_dim,
        }
    }

    pub fn start(&self) -> Vec<f64> {
        vec![0.1; self.dim]
    }
}

impl SearchModel for RandomDynamics {
    type State = Vec<f64>;

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn step(&self, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<f64>), PlanError> {
        let mut next = Vec::new();
        let mut rewards = Vec::new();
        for (s, a) in states.iter().zip(actions) {
            let n: Vec<f64> = (0..self.dim)
                .map(|i| {
                    let ws: f64 = (0..self.dim).map(|j| self.w[i * self.dim + j] * s[j]).sum();
                    let ua: f64 = (0..self.action_dim).map(|j| self.u[i * self.action_dim + j] * a[j]).sum();
                    (ws + ua).tanh()
                })
                .collect();
            rewards.push((n.iter().zip(&self.c).map(|(x, c)| x * c).sum::<f64>() + self.c[self.dim]).sin());
            next.push(n);
        }
        Ok((next, rewards))
    }

    fn value(&self, states: &[Vec<f64>]) -> Result<Vec<f64>, PlanError> {
        Ok(states.iter().map(|s| 2.0 * (s.iter().sum::<f64>() * self.c[self.dim + 1]).cos()).collect())
    }

    fn policy_mode(&self, states: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, PlanError> {
        Ok(states.iter().map(|s| (0..self.action_dim).map(|i| s[i % self.dim].tanh()).collect()).collect())
    }

    fn sample_actions<R: Rng + ?Sized>(&self, _: &Vec<f64>, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>, PlanError> {
        Ok((0..n).map(|_| (0..self.action_dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
    }
}

/// Selection score written out term by term.
pub fn brute_force_score(q: f64, n_edge: u64, p: f64, siblings: &[u64], min_q: f64, max_q: f64, c1: f64, c2: f64) -> f64 {
    let total: u64 = siblings.iter().sum();
    let q_bar = if n_edge == 0 {
        0.0
    } else if max_q > min_q {
        (q - min_q) / (max_q - min_q)
    } else {
        q
    };
    let t = total as f64;
    q_bar + p * (t.sqrt() / (1.0 + n_edge as f64)) * (c1 + ((t + c2 + 1.0) / c2).ln())
}

/// Checks every structural invariant of a finished search and replays its
/// trace. Returns a description of the first violation.
pub fn check_search<S>(out: &MctsOutcome<S>, cfg: &PlannerConfig) -> Result<(), String> {
    let tree = &out.tree;
    let root_visits: u64 = tree.root().stats.iter().map(|e| e.n).sum();
    if root_visits != cfg.simulations as u64 {
        return Err(format!("root visits {root_visits} != {}", cfg.simulations));
    }
    let mut credited: Vec<Vec<Vec<f64>>> = tree.nodes.iter().map(|n| vec![Vec::new(); n.stats.len()]).collect();
    for line in &out.trace {
        let l = line.path.len();
        let mut node = ROOT;
        for (k, &e) in line.path.iter().enumerate() {
            let stats = tree.nodes[node].stats.get(e).ok_or("trace edge missing")?;
            if stats.r != Some(line.rewards[k]) {
                return Err(format!("sim {}: reward mismatch at depth {k}", line.simulation));
            }
            credited[node][e].push(line.returns[k]);
            node = stats.child.ok_or("trace edge not expanded")?;
        }
        for k in 0..=l {
            let mut g = 0.0;
            for tau in 0..l - k {
                g += cfg.gamma.powi(tau as i32) * line.rewards[k + tau];
            }
            g += cfg.gamma.powi((l - k) as i32) * line.leaf_value;
            if (g - line.returns[k]).abs() > 1e-10 {
                return Err(format!("sim {}: G^{k} {} vs recomputed {g}", line.simulation, line.returns[k]));
            }
        }
    }
    for (id, node) in tree.nodes.iter().enumerate() {
        let sum: u64 = node.stats.iter().map(|e| e.n).sum();
        if node.n != sum {
            return Err(format!("node {id}: n={} but edges sum to {sum}", node.n));
        }
        if cfg.mode == PlanMode::MctsPw {
            let bound = ((cfg.c_pw * (node.n as f64).powf(cfg.alpha)).ceil() as usize).max(1);
            if node.stats.len() > bound {
                return Err(format!("node {id}: {} children exceed bound {bound}", node.stats.len()));
            }
        } else if node.stats.len() != cfg.fixed_children {
            return Err(format!("node {id}: {} children in fixed mode", node.stats.len()));
        }
        let visits: Vec<u64> = node.stats.iter().map(|e| e.n).collect();
        let mut best = None::<(usize, f64)>;
        for (e, s) in node.stats.iter().enumerate() {
            let g = &credited[id][e];
            if s.n != g.len() as u64 {
                return Err(format!("node {id} edge {e}: N={} but {} backups", s.n, g.len()));
            }
            if !g.is_empty() {
                let mean = g.iter().sum::<f64>() / g.len() as f64;
                if (mean - s.q).abs() > 1e-10 || !s.q.is_finite() {
                    return Err(format!("node {id} edge {e}: Q={} vs mean {mean}", s.q));
                }
            }
            if s.child.is_some() != s.r.is_some() || s.r.is_some_and(|r| !r.is_finite()) {
                return Err(format!("node {id} edge {e}: inconsistent expansion"));
            }
            if (s.p - 1.0 / node.stats.len() as f64).abs() > 1e-15 {
                return Err(format!("node {id} edge {e}: prior {}", s.p));
            }
            let score = brute_force_score(s.q, s.n, s.p, &visits, tree.bounds.min_q, tree.bounds.max_q, cfg.c1, cfg.c2);
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((e, score));
            }
        }
        if let Some((want, _)) = best {
            let got = latplan_core::planner::puct_select(&node.stats, &tree.bounds, cfg.c1, cfg.c2)
                .map_err(|e| e.to_string())?;
            if got != want {
                return Err(format!("node {id}: puct picked {got}, brute force {want}"));
            }
        }
    }
    Ok(())
}
