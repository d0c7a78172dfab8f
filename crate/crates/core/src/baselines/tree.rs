//! Decision trees over binary features. A split sends `x[f] == 0` left and
//! `x[f] == 1` right, so the only threshold is 0.5.

use serde::{Deserialize, Serialize};

use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { value: f64 },
    Split { feature: usize, left: Box<Node>, right: Box<Node> },
}

impl Node {
    pub fn predict(&self, x: &[u8]) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { value } => return *value,
                Node::Split { feature, left, right } => {
                    node = if x[*feature] == 0 { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features examined per split; `None` examines all.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: None, min_samples_leaf: 1, max_features: None }
    }
}

/// Candidate features for one split: all of them, or a uniformly drawn
/// subset returned in ascending order so ties resolve to the lowest index.
fn candidates(d: usize, max_features: Option<usize>, rng: &mut SeededRng) -> Vec<usize> {
    let mut all: Vec<usize> = (0..d).collect();
    match max_features {
        Some(m) if m < d => {
            rng.shuffle(&mut all);
            all.truncate(m.max(1));
            all.sort_unstable();
            all
        }
        _ => all,
    }
}

fn gini(pos: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let p = pos / n;
    2.0 * p * (1.0 - p)
}

/// CART classifier with Gini impurity; leaves hold the positive fraction.
pub fn fit_classifier(x: &[Vec<u8>], y: &[u8], rows: &[usize], params: &TreeParams, rng: &mut SeededRng) -> Node {
    grow_classifier(x, y, rows.to_vec(), params, 0, rng)
}

fn grow_classifier(
    x: &[Vec<u8>],
    y: &[u8],
    rows: Vec<usize>,
    params: &TreeParams,
    depth: usize,
    rng: &mut SeededRng,
) -> Node {
    let n = rows.len() as f64;
    let pos = rows.iter().filter(|&&r| y[r] == 1).count() as f64;
    let leaf = Node::Leaf { value: if n > 0.0 { pos / n } else { 0.5 } };
    if pos == 0.0 || pos == n || params.max_depth.is_some_and(|m| depth >= m) {
        return leaf;
    }
    let parent = gini(pos, n);
    let mut best: Option<(usize, f64)> = None;
    for f in candidates(x[0].len(), params.max_features, rng) {
        let (mut n1, mut p1) = (0.0, 0.0);
        for &r in &rows {
            if x[r][f] == 1 {
                n1 += 1.0;
                p1 += f64::from(y[r]);
            }
        }
        let n0 = n - n1;
        if (n0 as usize) < params.min_samples_leaf.max(1) || (n1 as usize) < params.min_samples_leaf.max(1) {
            continue;
        }
        let child = (n0 * gini(pos - p1, n0) + n1 * gini(p1, n1)) / n;
        let gain = parent - child;
        if gain > 1e-12 && best.is_none_or(|(_, g)| gain > g) {
            best = Some((f, gain));
        }
    }
    let Some((feature, _)) = best else { return leaf };
    let (right, left): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&r| x[r][feature] == 1);
    Node::Split {
        feature,
        left: Box::new(grow_classifier(x, y, left, params, depth + 1, rng)),
        right: Box::new(grow_classifier(x, y, right, params, depth + 1, rng)),
    }
}

/// Second-order regression tree for boosting: leaf weight
/// `-G / (H + lambda)`, split gain from the usual structure score.
pub fn fit_boosting_tree(
    x: &[Vec<u8>],
    grad: &[f64],
    hess: &[f64],
    rows: &[usize],
    params: &TreeParams,
    lambda: f64,
) -> Node {
    grow_boosting(x, grad, hess, rows.to_vec(), params, lambda, 0)
}

fn grow_boosting(
    x: &[Vec<u8>],
    grad: &[f64],
    hess: &[f64],
    rows: Vec<usize>,
    params: &TreeParams,
    lambda: f64,
    depth: usize,
) -> Node {
    let g: f64 = rows.iter().map(|&r| grad[r]).sum();
    let h: f64 = rows.iter().map(|&r| hess[r]).sum();
    let leaf = Node::Leaf { value: -g / (h + lambda) };
    if params.max_depth.is_some_and(|m| depth >= m) {
        return leaf;
    }
    let score = |g: f64, h: f64| g * g / (h + lambda);
    let parent = score(g, h);
    let mut best: Option<(usize, f64)> = None;
    for f in 0..x[0].len() {
        let (mut n1, mut g1, mut h1) = (0usize, 0.0, 0.0);
        for &r in &rows {
            if x[r][f] == 1 {
                n1 += 1;
                g1 += grad[r];
                h1 += hess[r];
            }
        }
        let n0 = rows.len() - n1;
        if n0 < params.min_samples_leaf.max(1) || n1 < params.min_samples_leaf.max(1) {
            continue;
        }
        let gain = score(g - g1, h - h1) + score(g1, h1) - parent;
        if gain > 1e-12 && best.is_none_or(|(_, b)| gain > b) {
            best = Some((f, gain));
        }
    }
    let Some((feature, _)) = best else { return leaf };
    let (right, left): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&r| x[r][feature] == 1);
    Node::Split {
        feature,
        left: Box::new(grow_boosting(x, grad, hess, left, params, lambda, depth + 1)),
        right: Box::new(grow_boosting(x, grad, hess, right, params, lambda, depth + 1)),
    }
}
