use std::fmt;

use rand::Rng;

use super::{
    add_exploration_noise, path_returns, puct_select, should_widen, update_edge, MinMaxBounds, PlanError, PlanMode,
    PlannerConfig, SearchModel,
};

pub type NodeId = usize;

pub const ROOT: NodeId = 0;

/// Statistics of one (state, action) edge. `r` and `child` are filled in when
/// the edge is expanded; `r` is the reward of the child state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EdgeStats {
    pub n: u64,
    pub q: f64,
    pub p: f64,
    pub r: Option<f64>,
    pub child: Option<NodeId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchNode<S> {
    pub state: S,
    /// Edge actions, parallel to `stats`.
    pub actions: Vec<Vec<f64>>,
    pub stats: Vec<EdgeStats>,
    /// Total visits through this node's edges.
    pub n: u64,
}

impl<S> SearchNode<S> {
    fn new(state: S) -> Self {
        Self {
            state,
            actions: Vec::new(),
            stats: Vec::new(),
            n: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    fn push_uniform(&mut self, actions: Vec<Vec<f64>>) {
        for a in actions {
            self.actions.push(a);
            self.stats.push(EdgeStats::default());
        }
        let p = 1.0 / self.stats.len() as f64;
        for s in &mut self.stats {
            s.p = p;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchTree<S> {
    pub nodes: Vec<SearchNode<S>>,
    pub bounds: MinMaxBounds,
}

impl<S> SearchTree<S> {
    pub fn root(&self) -> &SearchNode<S> {
        &self.nodes[ROOT]
    }

    /// Stores the child reached through `edge` of `parent`.
    pub fn expand(&mut self, parent: NodeId, edge: usize, child: S, reward: f64) -> Result<NodeId, PlanError> {
        if self.nodes[parent].stats[edge].child.is_some() {
            return Err(PlanError::AlreadyExpanded(edge));
        }
        let id = self.nodes.len();
        self.nodes.push(SearchNode::new(child));
        let stats = &mut self.nodes[parent].stats[edge];
        stats.r = Some(reward);
        stats.child = Some(id);
        Ok(id)
    }

    /// Propagates `leaf_value` back along `path` (pairs of node and edge
    /// index from the root down). Returns the discounted return credited to
    /// each edge, root edge first, followed by the leaf value.
    pub fn backup(&mut self, path: &[(NodeId, usize)], leaf_value: f64, gamma: f64) -> Vec<f64> {
        let rewards: Vec<f64> = path
            .iter()
            .map(|&(node, e)| self.nodes[node].stats[e].r.expect("edges on a backed-up path are expanded"))
            .collect();
        let returns = path_returns(&rewards, leaf_value, gamma);
        for (k, &(node, e)) in path.iter().enumerate().rev() {
            let stats = &mut self.nodes[node].stats[e];
            update_edge(stats, returns[k]);
            let q = stats.q;
            self.nodes[node].n += 1;
            self.bounds.update(q);
        }
        returns
    }
}

/// One simulation's record: edge indices from the root, edge rewards, leaf
/// value and the returns credited to each edge.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceLine {
    pub simulation: usize,
    pub path: Vec<usize>,
    pub rewards: Vec<f64>,
    pub leaf_value: f64,
    pub returns: Vec<f64>,
}

fn join(xs: impl IntoIterator<Item = impl fmt::Display>) -> String {
    xs.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl fmt::Display for TraceLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "sim={} path={} rewards={} leaf={} G={}",
            self.simulation,
            join(&self.path),
            join(&self.rewards),
            self.leaf_value,
            join(&self.returns)
        )
    }
}

#[derive(Clone, Debug)]
pub struct MctsOutcome<S> {
    pub action: Vec<f64>,
    pub root_edge: usize,
    pub tree: SearchTree<S>,
    pub trace: Vec<TraceLine>,
}

impl<S> MctsOutcome<S> {
    /// Trace lines followed by the chosen root action.
    pub fn trace_text(&self) -> String {
        let mut out: String = self.trace.iter().map(|t| format!("{t}\n")).collect();
        out.push_str(&format!("root edge={} action={}\n", self.root_edge, join(&self.action)));
        out
    }
}

fn proposals<M: SearchModel, R: Rng + ?Sized>(
    model: &M,
    state: &M::State,
    n: usize,
    noise_std: f64,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, PlanError> {
    let raw = model.sample_actions(state, n, rng)?;
    Ok(if noise_std > 0.0 {
        raw.iter().map(|a| add_exploration_noise(a, noise_std, rng)).collect()
    } else {
        raw
    })
}

/// Most visited root edge; ties go to the higher Q, then the lower index.
fn best_root_edge(stats: &[EdgeStats]) -> usize {
    let mut best = 0;
    for (i, s) in stats.iter().enumerate().skip(1) {
        let b = &stats[best];
        if s.n > b.n || (s.n == b.n && s.q > b.q) {
            best = i;
        }
    }
    best
}

/// Runs `cfg.simulations` select, expand and backup passes from `root` and
/// returns the most visited root action. `noise_std` perturbs the actions
/// proposed at the root only.
pub fn mcts_plan<M: SearchModel, R: Rng + ?Sized>(
    model: &M,
    root: &M::State,
    cfg: &PlannerConfig,
    noise_std: f64,
    rng: &mut R,
) -> Result<MctsOutcome<M::State>, PlanError> {
    let fixed = match cfg.mode {
        PlanMode::MctsPw => false,
        PlanMode::MctsFixed => true,
        mode => return Err(PlanError::WrongMode { mode }),
    };
    cfg.validate()?;
    let mut tree = SearchTree {
        nodes: vec![SearchNode::new(root.clone())],
        bounds: MinMaxBounds::default(),
    };
    if fixed {
        let acts = proposals(model, root, cfg.fixed_children, noise_std, rng)?;
        tree.nodes[ROOT].push_uniform(acts);
    }
    let mut trace = Vec::with_capacity(cfg.simulations);
    for sim in 0..cfg.simulations {
        let mut node = ROOT;
        let mut path = Vec::new();
        let leaf = loop {
            if !fixed && should_widen(tree.nodes[node].len(), tree.nodes[node].n, cfg.c_pw, cfg.alpha) {
                let std = if node == ROOT { noise_std } else { 0.0 };
                let acts = proposals(model, &tree.nodes[node].state, 1, std, rng)?;
                tree.nodes[node].push_uniform(acts);
            }
            let e = puct_select(&tree.nodes[node].stats, &tree.bounds, cfg.c1, cfg.c2)?;
            path.push((node, e));
            match tree.nodes[node].stats[e].child {
                Some(child) => node = child,
                None => {
                    let n = &tree.nodes[node];
                    let (mut next, rewards) =
                        model.step(std::slice::from_ref(&n.state), std::slice::from_ref(&n.actions[e]))?;
                    let child = tree.expand(node, e, next.remove(0), rewards[0])?;
                    if fixed {
                        let acts = proposals(model, &tree.nodes[child].state, cfg.fixed_children, 0.0, rng)?;
                        tree.nodes[child].push_uniform(acts);
                    }
                    break child;
                }
            }
        };
        let leaf_value = model.value(std::slice::from_ref(&tree.nodes[leaf].state))?[0];
        let returns = tree.backup(&path, leaf_value, cfg.gamma);
        trace.push(TraceLine {
            simulation: sim,
            path: path.iter().map(|&(_, e)| e).collect(),
            rewards: path
                .iter()
                .map(|&(n, e)| tree.nodes[n].stats[e].r.expect("expanded"))
                .collect(),
            leaf_value,
            returns,
        });
    }
    let root_edge = best_root_edge(&tree.nodes[ROOT].stats);
    let action = tree.nodes[ROOT].actions[root_edge].clone();
    log::trace!("mcts chose root edge {root_edge} after {} simulations", cfg.simulations);
    Ok(MctsOutcome {
        action,
        root_edge,
        tree,
        trace,
    })
}
