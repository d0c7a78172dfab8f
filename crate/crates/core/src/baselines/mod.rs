//! De-novo tabular classifiers fitted only on the few-shot samples.

mod tree;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use tree::{fit_boosting_tree, fit_classifier, Node, TreeParams};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Probability bounds of the constant model used for single-class data.
pub const CONSTANT_CLIP: (f64, f64) = (0.01, 0.99);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    LogisticRegression,
    RandomForest,
    GradientBoostedTrees,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] =
        [BaselineKind::LogisticRegression, BaselineKind::RandomForest, BaselineKind::GradientBoostedTrees];

    pub fn slug(self) -> &'static str {
        match self {
            BaselineKind::LogisticRegression => "logistic-regression",
            BaselineKind::RandomForest => "random-forest",
            BaselineKind::GradientBoostedTrees => "gradient-boosted-trees",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineKind::LogisticRegression => "Logistic Regression",
            BaselineKind::RandomForest => "Random Forest",
            BaselineKind::GradientBoostedTrees => "Gradient Boosted Trees",
        })
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logistic-regression" | "logreg" | "lr" => Ok(BaselineKind::LogisticRegression),
            "random-forest" | "rf" => Ok(BaselineKind::RandomForest),
            "gradient-boosted-trees" | "gbt" | "xgboost" => Ok(BaselineKind::GradientBoostedTrees),
            other => Err(Error::arg(format!("unknown baseline `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticHyper {
    pub learning_rate: f64,
    pub iterations: usize,
    pub l2: f64,
}

impl Default for LogisticHyper {
    fn default() -> Self {
        Self { learning_rate: 0.5, iterations: 1000, l2: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestHyper {
    pub n_trees: usize,
    pub bootstrap: bool,
    /// Features per split; `None` means floor(sqrt(d)).
    pub max_features: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
}

impl Default for ForestHyper {
    fn default() -> Self {
        Self { n_trees: 100, bootstrap: true, max_features: None, max_depth: None, min_samples_leaf: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtHyper {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
}

impl Default for GbtHyper {
    fn default() -> Self {
        Self { rounds: 50, learning_rate: 0.1, max_depth: 3, min_samples_leaf: 5, lambda: 1.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineHyper {
    pub logistic: LogisticHyper,
    pub forest: ForestHyper,
    pub gbt: GbtHyper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum FittedParams {
    Constant { probability: f64 },
    Logistic { weights: Vec<f64>, bias: f64 },
    Forest { trees: Vec<Node> },
    Boosted { base_margin: f64, learning_rate: f64, trees: Vec<Node> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub kind: BaselineKind,
    pub d: usize,
    pub seed: u64,
    pub params: FittedParams,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_matrix(x: &[Vec<u8>], d: usize) -> Result<()> {
    for (i, row) in x.iter().enumerate() {
        if row.len() != d {
            return Err(Error::arg(format!("row {i} has {} columns, expected {d}", row.len())));
        }
        if row.iter().any(|&v| v > 1) {
            return Err(Error::arg(format!("row {i} is not binary")));
        }
    }
    Ok(())
}

/// Fits `kind` on `x` (n×d, binary) and `y`. Single-class input yields a
/// constant model at the class prior clipped to [`CONSTANT_CLIP`].
pub fn fit(kind: BaselineKind, x: &[Vec<u8>], y: &[u8], hyper: &BaselineHyper, seed: u64) -> Result<BaselineModel> {
    if x.is_empty() {
        return Err(Error::arg("cannot fit on zero rows"));
    }
    if x.len() != y.len() {
        return Err(Error::arg(format!("{} rows but {} labels", x.len(), y.len())));
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::arg("labels must be 0 or 1"));
    }
    let d = x[0].len();
    check_matrix(x, d)?;
    let positives = y.iter().filter(|&&v| v == 1).count();
    let params = if positives == 0 || positives == y.len() {
        let prior = positives as f64 / y.len() as f64;
        FittedParams::Constant { probability: prior.clamp(CONSTANT_CLIP.0, CONSTANT_CLIP.1) }
    } else {
        match kind {
            BaselineKind::LogisticRegression => fit_logistic(x, y, &hyper.logistic).0,
            BaselineKind::RandomForest => fit_forest(x, y, &hyper.forest, seed),
            BaselineKind::GradientBoostedTrees => fit_gbt(x, y, &hyper.gbt),
        }
    };
    Ok(BaselineModel { kind, d, seed, params })
}

impl BaselineModel {
    /// `p(y = 1)` for every row.
    pub fn predict_proba(&self, x: &[Vec<u8>]) -> Result<Vec<f64>> {
        check_matrix(x, self.d)?;
        Ok(x.iter().map(|row| self.predict_row(row)).collect())
    }

    fn predict_row(&self, row: &[u8]) -> f64 {
        match &self.params {
            FittedParams::Constant { probability } => *probability,
            FittedParams::Logistic { weights, bias } => sigmoid(logit(weights, *bias, row)),
            FittedParams::Forest { trees } => trees.iter().map(|t| t.predict(row)).sum::<f64>() / trees.len() as f64,
            FittedParams::Boosted { base_margin, learning_rate, trees } => {
                sigmoid(base_margin + learning_rate * trees.iter().map(|t| t.predict(row)).sum::<f64>())
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        match &self.params {
            FittedParams::Constant { .. } => true,
            FittedParams::Boosted { trees, .. } => trees.iter().all(Node::is_leaf),
            _ => false,
        }
    }
}

fn logit(w: &[f64], b: f64, row: &[u8]) -> f64 {
    b + w.iter().zip(row).filter(|(_, &v)| v == 1).map(|(w, _)| w).sum::<f64>()
}

/// Mean log-loss plus `l2/2 · |w|²` (bias unpenalized).
pub fn logistic_objective(w: &[f64], b: f64, x: &[Vec<u8>], y: &[u8], l2: f64) -> f64 {
    let n = x.len() as f64;
    let nll: f64 = x
        .iter()
        .zip(y)
        .map(|(row, &t)| {
            let z = logit(w, b, row);
            // log(1 + e^z) - t·z, stable for either sign
            z.max(0.0) + (-z.abs()).exp().ln_1p() - f64::from(t) * z
        })
        .sum();
    nll / n + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

/// Full-batch gradient descent; also returns the objective after every
/// iteration.
pub fn fit_logistic(x: &[Vec<u8>], y: &[u8], hyper: &LogisticHyper) -> (FittedParams, Vec<f64>) {
    let d = x[0].len();
    let n = x.len() as f64;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut trace = Vec::with_capacity(hyper.iterations);
    for _ in 0..hyper.iterations {
        let mut gw: Vec<f64> = w.iter().map(|wi| hyper.l2 * wi).collect();
        let mut gb = 0.0;
        for (row, &t) in x.iter().zip(y) {
            let r = (sigmoid(logit(&w, b, row)) - f64::from(t)) / n;
            gb += r;
            for (g, &v) in gw.iter_mut().zip(row) {
                if v == 1 {
                    *g += r;
                }
            }
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= hyper.learning_rate * g;
        }
        b -= hyper.learning_rate * gb;
        trace.push(logistic_objective(&w, b, x, y, hyper.l2));
    }
    (FittedParams::Logistic { weights: w, bias: b }, trace)
}

fn fit_forest(x: &[Vec<u8>], y: &[u8], hyper: &ForestHyper, seed: u64) -> FittedParams {
    let n = x.len();
    let d = x[0].len();
    let params = TreeParams {
        max_depth: hyper.max_depth,
        min_samples_leaf: hyper.min_samples_leaf,
        max_features: Some(hyper.max_features.unwrap_or(((d as f64).sqrt().floor() as usize).max(1))),
    };
    let trees = (0..hyper.n_trees)
        .map(|t| {
            let mut rng = SeededRng::derive(seed, t as u64);
            let rows: Vec<usize> =
                if hyper.bootstrap { (0..n).map(|_| rng.below(n)).collect() } else { (0..n).collect() };
            fit_classifier(x, y, &rows, &params, &mut rng)
        })
        .collect();
    FittedParams::Forest { trees }
}

fn fit_gbt(x: &[Vec<u8>], y: &[u8], hyper: &GbtHyper) -> FittedParams {
    let n = x.len();
    let prior = y.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
    let base_margin = (prior / (1.0 - prior)).ln();
    let rows: Vec<usize> = (0..n).collect();
    let params = TreeParams { max_depth: Some(hyper.max_depth), min_samples_leaf: hyper.min_samples_leaf, max_features: None };
    let mut margin = vec![base_margin; n];
    let mut trees = Vec::with_capacity(hyper.rounds);
    for _ in 0..hyper.rounds {
        let p: Vec<f64> = margin.iter().map(|&m| sigmoid(m)).collect();
        let grad: Vec<f64> = p.iter().zip(y).map(|(p, &t)| p - f64::from(t)).collect();
        let hess: Vec<f64> = p.iter().map(|p| p * (1.0 - p)).collect();
        let tree = fit_boosting_tree(x, &grad, &hess, &rows, &params, hyper.lambda);
        for (m, row) in margin.iter_mut().zip(x) {
            *m += hyper.learning_rate * tree.predict(row);
        }
        trees.push(tree);
    }
    FittedParams::Boosted { base_margin, learning_rate: hyper.learning_rate, trees }
}
