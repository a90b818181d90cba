//! Gradient-boosted regression trees on logistic loss with second-order
//! (Newton) leaf values and exact greedy split search.

use serde::{Deserialize, Serialize};

use super::StaticError;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub l2_lambda: f64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 6,
            learning_rate: 0.1,
            min_samples_leaf: 5,
            l2_lambda: 1.0,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<(), StaticError> {
        let ok = self.max_depth > 0
            && self.learning_rate > 0.0
            && self.learning_rate <= 1.0
            && self.min_samples_leaf > 0
            && self.l2_lambda > 0.0;
        if ok {
            Ok(())
        } else {
            Err(StaticError::InvalidParams(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        gain: f64,
    },
    Leaf {
        value: f64,
    },
}

/// Flattened tree; node 0 is the root. Rows with `x[feature] < threshold`
/// go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => at = if x[*feature] < *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    fn scale_leaves(&mut self, factor: f64) {
        for n in &mut self.nodes {
            if let Node::Leaf { value } = n {
                *value *= factor;
            }
        }
    }
}

pub const MODEL_FORMAT: &str = "proctor-gbdt";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub format: String,
    pub format_version: u32,
    pub schema_version: u32,
    pub num_features: usize,
    pub base_score: f64,
    pub params: GbdtParams,
    pub seed: u64,
    /// Hash of the preprocessor the model was trained behind.
    pub preprocessor_hash: Option<String>,
    /// Decision threshold chosen on validation data, when available.
    pub threshold: Option<f64>,
    pub trees: Vec<RegressionTree>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean logistic loss computed from raw scores, stable for large |z|.
fn log_loss(raw: &[f64], y: &[bool]) -> f64 {
    let softplus = |z: f64| if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    raw.iter()
        .zip(y)
        .map(|(&z, &t)| if t { softplus(-z) } else { softplus(z) })
        .sum::<f64>()
        / raw.len() as f64
}

impl GbdtModel {
    pub fn raw_score(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        self.base_score + self.params.learning_rate * sum
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, StaticError> {
        if x.len() != self.num_features {
            return Err(StaticError::SchemaMismatch(format!(
                "{} features given, model expects {}",
                x.len(),
                self.num_features
            )));
        }
        // Clamp keeps the output strictly inside (0, 1) in f64.
        Ok(sigmoid(self.raw_score(x).clamp(-36.0, 36.0)))
    }

    /// Total split gain per feature.
    pub fn gain_importance(&self) -> Vec<f64> {
        let mut imp = vec![0.0; self.num_features];
        for t in &self.trees {
            for n in &t.nodes {
                if let Node::Split { feature, gain, .. } = n {
                    imp[*feature] += gain;
                }
            }
        }
        imp
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, StaticError> {
        let m: Self =
            serde_json::from_str(text).map_err(|e| StaticError::Persist(e.to_string()))?;
        if m.format != MODEL_FORMAT || m.format_version != MODEL_FORMAT_VERSION {
            return Err(StaticError::Persist(format!(
                "unsupported model format {} v{}",
                m.format, m.format_version
            )));
        }
        if m.schema_version != crate::features::SCHEMA_VERSION {
            return Err(StaticError::SchemaMismatch(format!(
                "model schema_version {} differs from {}",
                m.schema_version,
                crate::features::SCHEMA_VERSION
            )));
        }
        for t in &m.trees {
            for n in &t.nodes {
                if let Node::Split { feature, left, right, .. } = n {
                    if *feature >= m.num_features || *left >= t.nodes.len() || *right >= t.nodes.len() {
                        return Err(StaticError::Persist("tree references out of range".into()));
                    }
                }
            }
        }
        Ok(m)
    }
}

struct Grad<'a> {
    g: &'a [f64],
    h: &'a [f64],
}

#[derive(Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    params: &'a GbdtParams,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.params.l2_lambda)
    }

    fn best_split_for(&self, feature: usize, order: &[usize], grad: &Grad, g_tot: f64, h_tot: f64) -> Option<Candidate> {
        let min_leaf = self.params.min_samples_leaf;
        let n = order.len();
        let parent = self.score(g_tot, h_tot);
        let (mut gl, mut hl) = (0.0, 0.0);
        let mut best: Option<Candidate> = None;
        for pos in 0..n - 1 {
            let i = order[pos];
            gl += grad.g[i];
            hl += grad.h[i];
            let left_n = pos + 1;
            if left_n < min_leaf {
                continue;
            }
            if n - left_n < min_leaf {
                break;
            }
            let v = self.x[i][feature];
            let next = self.x[order[pos + 1]][feature];
            if !(v < next) {
                continue;
            }
            let gain = self.score(gl, hl) + self.score(g_tot - gl, h_tot - hl) - parent;
            if best.is_none_or(|b| gain > b.gain) {
                let mid = v + (next - v) / 2.0;
                let threshold = if v < mid && mid <= next { mid } else { next };
                best = Some(Candidate {
                    feature,
                    threshold,
                    gain,
                });
            }
        }
        best
    }

    /// `sorted[f]` lists this node's rows ordered by feature `f`.
    fn build(&mut self, sorted: Vec<Vec<usize>>, grad: &Grad, depth: usize) -> usize {
        let rows = &sorted[0];
        let g_tot: f64 = rows.iter().map(|&i| grad.g[i]).sum();
        let h_tot: f64 = rows.iter().map(|&i| grad.h[i]).sum();
        let leaf_value = -g_tot / (h_tot + self.params.l2_lambda);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: leaf_value });
        if depth >= self.params.max_depth || rows.len() < 2 * self.params.min_samples_leaf {
            return id;
        }
        let candidates = par::map_range(sorted.len(), |f| {
            self.best_split_for(f, &sorted[f], grad, g_tot, h_tot)
        });
        // Lowest feature index wins ties.
        let best = candidates
            .into_iter()
            .flatten()
            .fold(None::<Candidate>, |acc, c| match acc {
                Some(a) if a.gain >= c.gain => Some(a),
                _ => Some(c),
            });
        let Some(split) = best.filter(|c| c.gain > 1e-12) else {
            return id;
        };
        let goes_left = |i: usize| self.x[i][split.feature] < split.threshold;
        let (mut left, mut right) = (Vec::with_capacity(sorted.len()), Vec::with_capacity(sorted.len()));
        for order in &sorted {
            let (l, r): (Vec<usize>, Vec<usize>) = order.iter().partition(|&&i| goes_left(i));
            left.push(l);
            right.push(r);
        }
        drop(sorted);
        let l = self.build(left, grad, depth + 1);
        let r = self.build(right, grad, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: l,
            right: r,
            gain: split.gain,
        };
        id
    }
}

pub struct GbdtTraining {
    pub model: GbdtModel,
    /// Mean training log-loss before any tree, then after each round.
    pub loss_curve: Vec<f64>,
}

/// Stagewise Newton boosting. Each round fits a tree to `g = p - y`,
/// `h = p (1 - p)` with leaf value `-G / (H + lambda)`. If a round would
/// raise the training loss its leaves are halved until it does not, so the
/// recorded loss curve is non-increasing.
pub fn train_gbdt_with_history(
    x: &[Vec<f64>],
    y: &[bool],
    params: &GbdtParams,
    seed: u64,
) -> Result<GbdtTraining, StaticError> {
    params.validate()?;
    if x.len() != y.len() || x.is_empty() {
        return Err(StaticError::ShapeMismatch(format!(
            "{} rows, {} labels",
            x.len(),
            y.len()
        )));
    }
    let width = x[0].len();
    if x.iter().any(|r| r.len() != width) {
        return Err(StaticError::ShapeMismatch("ragged rows".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(StaticError::NonFiniteFeature);
    }
    let pos = y.iter().filter(|&&t| t).count();
    if pos == 0 || pos == y.len() {
        return Err(StaticError::SingleClass);
    }
    let prior = pos as f64 / y.len() as f64;
    let base_score = (prior / (1.0 - prior)).ln();

    let sorted: Vec<Vec<usize>> = par::map_range(width, |f| {
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
        idx
    });

    let mut raw = vec![base_score; x.len()];
    let mut loss = log_loss(&raw, y);
    let mut loss_curve = vec![loss];
    let mut trees = Vec::with_capacity(params.n_trees);
    let lr = params.learning_rate;
    for _ in 0..params.n_trees {
        let p: Vec<f64> = raw.iter().map(|&z| sigmoid(z)).collect();
        let g: Vec<f64> = p.iter().zip(y).map(|(&pi, &t)| pi - t as u8 as f64).collect();
        let h: Vec<f64> = p.iter().map(|&pi| (pi * (1.0 - pi)).max(1e-16)).collect();
        let grad = Grad { g: &g, h: &h };
        let mut builder = Builder {
            x,
            params,
            nodes: Vec::new(),
        };
        builder.build(sorted.clone(), &grad, 0);
        let mut tree = RegressionTree {
            nodes: builder.nodes,
        };
        let outputs: Vec<f64> = par::map_slice(x, |row| tree.predict(row));
        let mut factor = 1.0;
        let mut next: Vec<f64>;
        let mut halvings = 0;
        loop {
            next = raw.iter().zip(&outputs).map(|(r, o)| r + lr * factor * o).collect();
            let candidate = log_loss(&next, y);
            if candidate <= loss {
                loss = candidate;
                break;
            }
            halvings += 1;
            if halvings > 40 {
                factor = 0.0;
                next = raw.clone();
                break;
            }
            factor *= 0.5;
        }
        if factor != 1.0 {
            tree.scale_leaves(factor);
        }
        raw = next;
        loss_curve.push(loss);
        trees.push(tree);
    }
    Ok(GbdtTraining {
        model: GbdtModel {
            format: MODEL_FORMAT.into(),
            format_version: MODEL_FORMAT_VERSION,
            schema_version: crate::features::SCHEMA_VERSION,
            num_features: width,
            base_score,
            params: *params,
            seed,
            preprocessor_hash: None,
            threshold: None,
            trees,
        },
        loss_curve,
    })
}

pub fn train_gbdt(
    x: &[Vec<f64>],
    y: &[bool],
    params: &GbdtParams,
    seed: u64,
) -> Result<GbdtModel, StaticError> {
    Ok(train_gbdt_with_history(x, y, params, seed)?.model)
}
