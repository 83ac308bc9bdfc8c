//! Second-order gradient-boosted decision trees for binary classification.
//!
//! Each round computes the logistic-loss gradient `g = p − y` and hessian
//! `h = p(1 − p)` at the current margins (positive rows scaled by
//! `scale_pos_weight`), grows one regression tree by exact greedy search over
//! every feature and every midpoint between consecutive distinct values, and
//! adds `learning_rate`-scaled leaf weights to the margins.
//!
//! Split gain is
//! `½·[G_L²/(H_L+λ) + G_R²/(H_R+λ) − (G_L+G_R)²/(H_L+H_R+λ)] − γ`; splits with
//! non-positive gain or a child hessian below `min_child_weight` are refused.
//! Leaf weights are `−soft(G, α)/(H+λ)`, `soft` being L1 soft-thresholding.
//!
//! Ties between equal-gain splits go to the lowest feature index, then the
//! lowest threshold. Feature scans may run in parallel, but the reduction is
//! sequential, so a fit is bit-identical for any thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GbdtError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("model json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("thread pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
}

pub type Result<T> = std::result::Result<T, GbdtError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub reg_lambda: f64,
    pub reg_alpha: f64,
    pub subsample: f64,
    pub scale_pos_weight: f64,
    pub min_child_weight: f64,
    pub gamma: f64,
    pub seed: u64,
    /// Worker threads; 0 uses every available core. A runtime setting that
    /// never affects results, so it is not serialised.
    #[serde(skip)]
    pub threads: usize,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            max_depth: 3,
            learning_rate: 0.1,
            reg_lambda: 1.0,
            reg_alpha: 0.0,
            subsample: 1.0,
            scale_pos_weight: 1.0,
            min_child_weight: 1.0,
            gamma: 0.0,
            seed: 0,
            threads: 0,
        }
    }
}

pub const PARAM_NAMES: [&str; 11] = [
    "n_estimators",
    "max_depth",
    "learning_rate",
    "reg_lambda",
    "reg_alpha",
    "subsample",
    "scale_pos_weight",
    "min_child_weight",
    "gamma",
    "seed",
    "threads",
];

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GbdtError::InvalidParam(m.to_string()));
        if self.n_estimators == 0 {
            return bad("n_estimators must be >= 1");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be >= 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if !(self.reg_lambda >= 0.0) || !(self.reg_alpha >= 0.0) {
            return bad("reg_lambda and reg_alpha must be >= 0");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must be in (0, 1]");
        }
        if !(self.scale_pos_weight > 0.0) || !self.scale_pos_weight.is_finite() {
            return bad("scale_pos_weight must be a positive finite number");
        }
        if !(self.min_child_weight >= 0.0) || !(self.gamma >= 0.0) {
            return bad("min_child_weight and gamma must be >= 0");
        }
        Ok(())
    }

    /// Sets a parameter by name; integer parameters must be given integral values.
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let int = |v: f64| -> Result<u64> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as u64)
            } else {
                Err(GbdtError::InvalidParam(format!("{name} needs a non-negative integer, got {v}")))
            }
        };
        match name {
            "n_estimators" => self.n_estimators = int(value)? as usize,
            "max_depth" => self.max_depth = int(value)? as usize,
            "learning_rate" => self.learning_rate = value,
            "reg_lambda" => self.reg_lambda = value,
            "reg_alpha" | "reg_alfa" => self.reg_alpha = value,
            "subsample" => self.subsample = value,
            "scale_pos_weight" => self.scale_pos_weight = value,
            "min_child_weight" => self.min_child_weight = value,
            "gamma" => self.gamma = value,
            "seed" | "random_state" => self.seed = int(value)?,
            "threads" | "n_jobs" | "nthread" => {
                self.threads = if value < 0.0 { 0 } else { int(value)? as usize }
            }
            other => return Err(GbdtError::UnknownParam(other.to_string())),
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "n_estimators" => self.n_estimators as f64,
            "max_depth" => self.max_depth as f64,
            "learning_rate" => self.learning_rate,
            "reg_lambda" => self.reg_lambda,
            "reg_alpha" | "reg_alfa" => self.reg_alpha,
            "subsample" => self.subsample,
            "scale_pos_weight" => self.scale_pos_weight,
            "min_child_weight" => self.min_child_weight,
            "gamma" => self.gamma,
            "seed" | "random_state" => self.seed as f64,
            "threads" | "n_jobs" | "nthread" => self.threads as f64,
            _ => return None,
        })
    }
}

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Result<Self> {
        if n_rows.checked_mul(n_cols) != Some(data.len()) {
            return Err(GbdtError::Shape(format!(
                "{} values cannot fill {n_rows} x {n_cols}",
                data.len()
            )));
        }
        Ok(Self { n_rows, n_cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != n_cols {
                return Err(GbdtError::Shape(format!("row {i} has {} columns, expected {n_cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            n_rows: rows.len(),
            n_cols,
            data,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    /// Rows at `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.n_cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            n_rows: indices.len(),
            n_cols: self.n_cols,
            data,
        }
    }
}

/// A tree node. Rows go left when `value < threshold`; missing (NaN) values
/// take the `default_left` branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf {
        weight: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        default_left: bool,
        gain: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { weight } => return *weight,
                Node::Split {
                    feature,
                    threshold,
                    default_left,
                    left,
                    right,
                    ..
                } => {
                    let v = row[*feature];
                    let go_left = if v.is_nan() { *default_left } else { v < *threshold };
                    node = if go_left { left } else { right };
                }
            }
        }
    }

    /// Number of split levels below this node.
    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaves(&self) -> Vec<f64> {
        match self {
            Node::Leaf { weight } => vec![*weight],
            Node::Split { left, right, .. } => {
                let mut v = left.leaves();
                v.extend(right.leaves());
                v
            }
        }
    }

    fn max_feature(&self) -> Option<usize> {
        match self {
            Node::Leaf { .. } => None,
            Node::Split {
                feature, left, right, ..
            } => [Some(*feature), left.max_feature(), right.max_feature()].into_iter().flatten().max(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub params: GbdtParams,
    pub n_features: usize,
    pub base_logit: f64,
    /// Leaf weights already include the learning rate.
    pub trees: Vec<Node>,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Closed-form split gain.
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    0.5 * (score(gl, hl, lambda) + score(gr, hr, lambda) - score(gl + gr, hl + hr, lambda)) - gamma
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    let d = h + lambda;
    if d > 0.0 {
        g * g / d
    } else {
        0.0
    }
}

/// Optimal (unscaled) leaf weight `−soft(G, α)/(H+λ)`.
pub fn leaf_weight(g: f64, h: f64, lambda: f64, alpha: f64) -> f64 {
    let d = h + lambda;
    if d <= 0.0 || g.abs() <= alpha {
        return 0.0;
    }
    -(g - alpha * g.signum()) / d
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Midpoint strictly above `lo`, so that `lo < threshold <= hi`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m > lo {
        m
    } else {
        hi
    }
}

struct Builder<'a> {
    /// Column-major copy of the features.
    cols: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a GbdtParams,
}

impl Builder<'_> {
    fn best_split_for(&self, feature: usize, sorted: &[u32], g: f64, h: f64) -> Option<SplitCandidate> {
        let p = self.params;
        let (mut gl, mut hl) = (0.0, 0.0);
        let mut best: Option<SplitCandidate> = None;
        for j in 0..sorted.len().saturating_sub(1) {
            let i = sorted[j] as usize;
            gl += self.grad[i];
            hl += self.hess[i];
            let col = &self.cols[feature];
            let v = col[i];
            let next = col[sorted[j + 1] as usize];
            if !(v < next) {
                continue;
            }
            let (gr, hr) = (g - gl, h - hl);
            if hl < p.min_child_weight || hr < p.min_child_weight {
                continue;
            }
            let gain = split_gain(gl, hl, gr, hr, p.reg_lambda, p.gamma);
            if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
                best = Some(SplitCandidate {
                    feature,
                    threshold: midpoint(v, next),
                    gain,
                });
            }
        }
        best
    }

    /// `members` is sorted by row index; `sorted[f]` holds the same rows ordered by feature `f`.
    fn grow(&self, members: Vec<u32>, sorted: Vec<Vec<u32>>, depth: usize, go_left: &mut [bool]) -> Node {
        let (g, h) = members.iter().fold((0.0, 0.0), |(g, h), &i| {
            (g + self.grad[i as usize], h + self.hess[i as usize])
        });
        let p = self.params;
        let leaf = || Node::Leaf {
            weight: leaf_weight(g, h, p.reg_lambda, p.reg_alpha) * p.learning_rate,
        };
        if depth >= p.max_depth || members.len() < 2 {
            return leaf();
        }
        let candidates: Vec<Option<SplitCandidate>> = sorted
            .par_iter()
            .enumerate()
            .map(|(f, s)| self.best_split_for(f, s, g, h))
            .collect();
        let mut best: Option<SplitCandidate> = None;
        for c in candidates.into_iter().flatten() {
            if best.is_none_or(|b| c.gain > b.gain) {
                best = Some(c);
            }
        }
        let Some(best) = best else {
            return leaf();
        };

        for &i in &members {
            go_left[i as usize] = self.cols[best.feature][i as usize] < best.threshold;
        }
        let flags: &[bool] = go_left;
        let parts: Vec<(Vec<u32>, Vec<u32>)> = sorted
            .into_par_iter()
            .map(|s| s.into_iter().partition(|&i| flags[i as usize]))
            .collect();
        let (left_members, right_members): (Vec<u32>, Vec<u32>) =
            members.into_iter().partition(|&i| flags[i as usize]);
        let (left_sorted, right_sorted): (Vec<_>, Vec<_>) = parts.into_iter().unzip();

        let left = self.grow(left_members, left_sorted, depth + 1, go_left);
        let right = self.grow(right_members, right_sorted, depth + 1, go_left);
        Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            default_left: true,
            gain: best.gain,
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

/// Row indices ordered by each feature's value (ties by row index).
pub fn presort(x: &FeatureMatrix) -> Vec<Vec<u32>> {
    (0..x.n_cols())
        .into_par_iter()
        .map(|f| {
            let mut s: Vec<u32> = (0..x.n_rows() as u32).collect();
            s.sort_by(|&a, &b| {
                x.get(a as usize, f)
                    .total_cmp(&x.get(b as usize, f))
                    .then(a.cmp(&b))
            });
            s
        })
        .collect()
}

/// Grows one tree on `rows` (sorted ascending) for the given gradients.
pub fn grow_tree(x: &FeatureMatrix, grad: &[f64], hess: &[f64], rows: &[usize], params: &GbdtParams) -> Node {
    grow_presorted(x, grad, hess, rows, &presort(x), params)
}

fn grow_presorted(
    x: &FeatureMatrix,
    grad: &[f64],
    hess: &[f64],
    rows: &[usize],
    order: &[Vec<u32>],
    params: &GbdtParams,
) -> Node {
    let members: Vec<u32> = rows.iter().map(|&i| i as u32).collect();
    let sorted: Vec<Vec<u32>> = if rows.len() == x.n_rows() {
        order.to_vec()
    } else {
        let mut keep = vec![false; x.n_rows()];
        for &i in rows {
            keep[i] = true;
        }
        order
            .par_iter()
            .map(|o| o.iter().copied().filter(|&i| keep[i as usize]).collect())
            .collect()
    };
    let cols: Vec<Vec<f64>> = (0..x.n_cols()).map(|f| (0..x.n_rows()).map(|i| x.get(i, f)).collect()).collect();
    let builder = Builder {
        cols: &cols,
        grad,
        hess,
        params,
    };
    let mut scratch = vec![false; x.n_rows()];
    builder.grow(members, sorted, 0, &mut scratch)
}

/// Gradient and hessian of the weighted logistic loss at `margins`.
pub fn gradients(margins: &[f64], y: &[bool], scale_pos_weight: f64) -> (Vec<f64>, Vec<f64>) {
    margins
        .iter()
        .zip(y)
        .map(|(&m, &t)| {
            let p = sigmoid(m);
            let w = if t { scale_pos_weight } else { 1.0 };
            ((p - t as u8 as f64) * w, p * (1.0 - p) * w)
        })
        .unzip()
}

fn round_seed(seed: u64, round: usize) -> u64 {
    seed ^ (round as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn sample_rows(n: usize, fraction: f64, seed: u64, round: usize) -> Vec<usize> {
    if fraction >= 1.0 {
        return (0..n).collect();
    }
    let k = ((fraction * n as f64).round() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(round_seed(seed, round));
    let mut rows = rand::seq::index::sample(&mut rng, n, k).into_vec();
    rows.sort_unstable();
    rows
}

impl GbdtModel {
    pub fn fit(x: &FeatureMatrix, y: &[bool], params: &GbdtParams) -> Result<Self> {
        params.validate()?;
        if x.n_rows() != y.len() {
            return Err(GbdtError::Shape(format!("{} rows but {} targets", x.n_rows(), y.len())));
        }
        if x.n_rows() == 0 || x.n_cols() == 0 {
            return Err(GbdtError::Shape("empty feature matrix".into()));
        }
        let positives = y.iter().filter(|t| **t).count();
        if positives == 0 || positives == y.len() {
            log::warn!("fitting on a single class ({positives} positives of {})", y.len());
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(params.threads).build()?;
        Ok(pool.install(|| Self::fit_in_pool(x, y, params)))
    }

    fn fit_in_pool(x: &FeatureMatrix, y: &[bool], params: &GbdtParams) -> Self {
        let mut model = GbdtModel {
            params: params.clone(),
            n_features: x.n_cols(),
            base_logit: 0.0,
            trees: Vec::with_capacity(params.n_estimators),
        };
        let mut margins = vec![model.base_logit; x.n_rows()];
        let order = presort(x);
        for round in 0..params.n_estimators {
            let (grad, hess) = gradients(&margins, y, params.scale_pos_weight);
            let rows = sample_rows(x.n_rows(), params.subsample, params.seed, round);
            let tree = grow_presorted(x, &grad, &hess, &rows, &order, params);
            margins
                .par_iter_mut()
                .enumerate()
                .for_each(|(i, m)| *m += tree.predict(x.row(i)));
            model.trees.push(tree);
        }
        model
    }

    pub fn margin(&self, row: &[f64]) -> f64 {
        self.trees.iter().fold(self.base_logit, |m, t| m + t.predict(row))
    }

    /// Probability of the positive class for one row.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        sigmoid(self.margin(row))
    }

    fn check_shape(&self, x: &FeatureMatrix) -> Result<()> {
        if x.n_cols() != self.n_features {
            return Err(GbdtError::Shape(format!(
                "model expects {} features, got {}",
                self.n_features,
                x.n_cols()
            )));
        }
        Ok(())
    }

    pub fn predict_proba(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        self.check_shape(x)?;
        Ok((0..x.n_rows())
            .into_par_iter()
            .map(|i| self.predict_row(x.row(i)))
            .collect())
    }

    /// Class labels with the `proba >= threshold` rule.
    pub fn predict(&self, x: &FeatureMatrix, threshold: f64) -> Result<Vec<bool>> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(GbdtError::InvalidParam(format!("threshold {threshold} outside (0, 1)")));
        }
        Ok(apply_threshold(&self.predict_proba(x)?, threshold))
    }

    /// The first `n` trees.
    pub fn truncated(&self, n: usize) -> GbdtModel {
        GbdtModel {
            trees: self.trees[..n.min(self.trees.len())].to_vec(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: GbdtModel = serde_json::from_str(s)?;
        if let Some(f) = model.trees.iter().filter_map(Node::max_feature).max() {
            if f >= model.n_features {
                return Err(GbdtError::Shape(format!(
                    "tree uses feature {f} but the model has {} features",
                    model.n_features
                )));
            }
        }
        Ok(model)
    }
}

pub fn apply_threshold(proba: &[f64], threshold: f64) -> Vec<bool> {
    proba.iter().map(|&p| p >= threshold).collect()
}

/// Σ wᵢ·logloss(yᵢ, pᵢ), positive rows weighted by `scale_pos_weight`.
pub fn weighted_log_loss(proba: &[f64], y: &[bool], scale_pos_weight: f64) -> f64 {
    proba
        .iter()
        .zip(y)
        .map(|(&p, &t)| {
            let p = p.clamp(1e-300, 1.0 - 1e-16);
            if t {
                -scale_pos_weight * p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum()
}
