//! Gradient-boosted decision trees for binary classification.
//!
//! Newton boosting on the logistic loss: every round fits a regression tree
//! to the per-row gradients `g = p − y` and hessians `h = p(1 − p)`. Splits
//! are searched over per-feature quantile histograms. Leaf weights are
//! `−T(G)/(H + λ)`, where `T` soft-thresholds the gradient sum by `α`.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::sigmoid;

const PROB_CLIP: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtHyperparams {
    pub learning_rate: f64,
    pub max_depth: usize,
    pub subsample: f64,
    pub reg_alpha: f64,
    pub reg_lambda: f64,
    pub n_estimators: usize,
    pub min_samples_leaf: usize,
    pub n_bins: usize,
    pub seed: u64,
}

impl Default for GbdtHyperparams {
    /// The best configuration found for the primary model on the original data.
    fn default() -> Self {
        GbdtHyperparams {
            learning_rate: 0.1,
            max_depth: 5,
            subsample: 0.5,
            reg_alpha: 0.1,
            reg_lambda: 0.01,
            n_estimators: 300,
            min_samples_leaf: 1,
            n_bins: 64,
            seed: 0,
        }
    }
}

impl GbdtHyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if !(1..=16).contains(&self.max_depth) {
            return bad("max_depth must be in 1..=16");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must be in (0, 1]");
        }
        if self.reg_alpha < 0.0 || self.reg_lambda < 0.0 {
            return bad("regularization must be non-negative");
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be >= 1");
        }
        if !(2..=65536).contains(&self.n_bins) {
            return bad("n_bins must be in 2..=65536");
        }
        Ok(())
    }
}

/// Learning rates {0.2, 0.1, 0.01} × depths 2..=8 × estimators {100, 200, 300};
/// remaining fields are taken from `base`.
pub fn default_grid(base: &GbdtHyperparams) -> Vec<GbdtHyperparams> {
    let mut grid = Vec::new();
    for &learning_rate in &[0.2, 0.1, 0.01] {
        for max_depth in 2..=8 {
            for &n_estimators in &[100, 200, 300] {
                grid.push(GbdtHyperparams {
                    learning_rate,
                    max_depth,
                    n_estimators,
                    ..base.clone()
                });
            }
        }
    }
    grid
}

/// Bin boundaries for one feature: midpoints between adjacent distinct
/// values, thinned to at most `n_bins − 1` by row quantiles.
pub fn quantile_cuts(values: &[f64], n_bins: usize) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut uniq = v.clone();
    uniq.dedup();
    let mid = |lo: f64, hi: f64| lo + (hi - lo) / 2.0;
    if uniq.len() <= n_bins {
        return uniq.windows(2).map(|w| mid(w[0], w[1])).collect();
    }
    let n = v.len();
    let mut cuts: Vec<f64> = Vec::with_capacity(n_bins - 1);
    for j in 1..n_bins {
        let hi = v[j * n / n_bins];
        let pos = uniq.partition_point(|&u| u < hi);
        if pos == 0 {
            continue;
        }
        let c = mid(uniq[pos - 1], hi);
        if cuts.last().is_none_or(|&last| c > last) {
            cuts.push(c);
        }
    }
    cuts
}

/// Number of cuts strictly below `x`; rows with `bin <= b` satisfy `x <= cuts[b]`.
pub fn bin_of(cuts: &[f64], x: f64) -> usize {
    cuts.partition_point(|&c| c < x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        /// Rows with `x[feature] <= threshold` go left.
        threshold: f64,
        bin: usize,
        gain: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Root split as `(feature, threshold)`, if the tree split at all.
    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes[0] {
            Node::Split {
                feature, threshold, ..
            } => Some((feature, threshold)),
            Node::Leaf { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    /// Prior log-odds of the positive class.
    pub base_score: f64,
    pub trees: Vec<Tree>,
    pub hyperparams: GbdtHyperparams,
    pub n_features: usize,
    /// Training log loss before the first tree and after every round.
    pub train_loss: Vec<f64>,
}

impl BoostedModel {
    pub fn raw_score(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(row)).sum();
        self.base_score + self.hyperparams.learning_rate * sum
    }

    pub fn predict_proba(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        x.iter()
            .map(|row| {
                if row.len() != self.n_features {
                    return Err(Error::Shape {
                        expected: format!("{} features", self.n_features),
                        actual: format!("{} features", row.len()),
                    });
                }
                Ok(sigmoid(self.raw_score(row)))
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// `round,log_loss` rows; round 0 is the prior-only model.
    pub fn write_training_report<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["round", "log_loss"])?;
        for (i, l) in self.train_loss.iter().enumerate() {
            wtr.write_record([i.to_string(), format!("{l:.17e}")])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn soft_threshold(g: f64, alpha: f64) -> f64 {
    if g > alpha {
        g - alpha
    } else if g < -alpha {
        g + alpha
    } else {
        0.0
    }
}

fn leaf_score(g: f64, h: f64, hp: &GbdtHyperparams) -> f64 {
    let t = soft_threshold(g, hp.reg_alpha);
    let denom = h + hp.reg_lambda;
    if denom <= 0.0 {
        0.0
    } else {
        t * t / denom
    }
}

pub fn leaf_value(g: f64, h: f64, hp: &GbdtHyperparams) -> f64 {
    let denom = h + hp.reg_lambda;
    if denom <= 0.0 {
        0.0
    } else {
        -soft_threshold(g, hp.reg_alpha) / denom
    }
}

/// `½ [S(G_L, H_L) + S(G_R, H_R) − S(G, H)]` with `S = T(G)² / (H + λ)`.
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, hp: &GbdtHyperparams) -> f64 {
    0.5 * (leaf_score(gl, hl, hp) + leaf_score(gr, hr, hp) - leaf_score(gl + gr, hl + hr, hp))
}

struct Binned {
    /// Column-major bin indices.
    bins: Vec<Vec<u32>>,
    cuts: Vec<Vec<f64>>,
}

fn bin_matrix(x: &[Vec<f64>], n_features: usize, n_bins: usize) -> Binned {
    let mut bins = Vec::with_capacity(n_features);
    let mut cuts = Vec::with_capacity(n_features);
    for f in 0..n_features {
        let col: Vec<f64> = x.iter().map(|r| r[f]).collect();
        let c = quantile_cuts(&col, n_bins);
        bins.push(col.iter().map(|&v| bin_of(&c, v) as u32).collect());
        cuts.push(c);
    }
    Binned { bins, cuts }
}

struct Builder<'a> {
    data: &'a Binned,
    grad: &'a [f64],
    hess: &'a [f64],
    hp: &'a GbdtHyperparams,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    bin: usize,
    gain: f64,
}

impl Builder<'_> {
    fn best_split(&self, rows: &[usize]) -> Option<BestSplit> {
        let min_leaf = self.hp.min_samples_leaf;
        let mut best: Option<BestSplit> = None;
        for (f, cuts) in self.data.cuts.iter().enumerate() {
            let nb = cuts.len() + 1;
            if nb < 2 {
                continue;
            }
            let col = &self.data.bins[f];
            let mut hg = vec![0.0; nb];
            let mut hh = vec![0.0; nb];
            let mut hc = vec![0usize; nb];
            for &i in rows {
                let b = col[i] as usize;
                hg[b] += self.grad[i];
                hh[b] += self.hess[i];
                hc[b] += 1;
            }
            let (gt, ht): (f64, f64) = (hg.iter().sum(), hh.iter().sum());
            let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0usize);
            for b in 0..nb - 1 {
                gl += hg[b];
                hl += hh[b];
                cl += hc[b];
                let cr = rows.len() - cl;
                if hc[b] == 0 || cl < min_leaf || cr < min_leaf {
                    continue;
                }
                let gain = split_gain(gl, hl, gt - gl, ht - hl, self.hp);
                if gain > 0.0 && best.as_ref().is_none_or(|s| gain > s.gain) {
                    best = Some(BestSplit {
                        feature: f,
                        bin: b,
                        gain,
                    });
                }
            }
        }
        best
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let idx = self.nodes.len();
        let split = if depth < self.hp.max_depth && rows.len() >= 2 * self.hp.min_samples_leaf {
            self.best_split(&rows)
        } else {
            None
        };
        match split {
            None => {
                let g: f64 = rows.iter().map(|&i| self.grad[i]).sum();
                let h: f64 = rows.iter().map(|&i| self.hess[i]).sum();
                self.nodes.push(Node::Leaf {
                    value: leaf_value(g, h, self.hp),
                });
            }
            Some(s) => {
                self.nodes.push(Node::Leaf { value: 0.0 });
                let col = &self.data.bins[s.feature];
                let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| col[i] as usize <= s.bin);
                let left = self.build(l, depth + 1);
                let right = self.build(r, depth + 1);
                self.nodes[idx] = Node::Split {
                    feature: s.feature,
                    threshold: self.data.cuts[s.feature][s.bin],
                    bin: s.bin,
                    gain: s.gain,
                    left,
                    right,
                };
            }
        }
        idx
    }
}

fn check_data(x: &[Vec<f64>], y: &[bool]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            expected: format!("{} labels", x.len()),
            actual: format!("{} labels", y.len()),
        });
    }
    let d = x.first().map_or(0, Vec::len);
    for row in x {
        if row.len() != d {
            return Err(Error::Shape {
                expected: format!("{d} features"),
                actual: format!("{} features", row.len()),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix".into()));
        }
    }
    Ok(d)
}

pub fn fit(x: &[Vec<f64>], y: &[bool], hp: &GbdtHyperparams) -> Result<BoostedModel> {
    hp.validate()?;
    let d = check_data(x, y)?;
    if x.len() < 2 {
        return Err(Error::InsufficientData("need at least 2 rows".into()));
    }
    let pos = y.iter().filter(|&&v| v).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::SingleClass);
    }
    let n = x.len();
    let prior = pos as f64 / n as f64;
    let base_score = (prior / (1.0 - prior)).ln();
    let target: Vec<f64> = y.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    let data = bin_matrix(x, d, hp.n_bins);

    let mut raw = vec![base_score; n];
    let mut trees = Vec::with_capacity(hp.n_estimators);
    let probs = |raw: &[f64]| raw.iter().map(|&r| sigmoid(r)).collect::<Vec<_>>();
    let mut train_loss = vec![log_loss_f(&target, &probs(&raw))];
    let sample_size = ((hp.subsample * n as f64).round() as usize).clamp(1, n);

    for round in 0..hp.n_estimators {
        let p = probs(&raw);
        let grad: Vec<f64> = p.iter().zip(&target).map(|(p, t)| p - t).collect();
        let hess: Vec<f64> = p.iter().map(|p| p * (1.0 - p)).collect();
        let rows: Vec<usize> = if sample_size == n {
            (0..n).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(hp.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(round as u64));
            let mut s = rand::seq::index::sample(&mut rng, n, sample_size).into_vec();
            s.sort_unstable();
            s
        };
        let mut builder = Builder {
            data: &data,
            grad: &grad,
            hess: &hess,
            hp,
            nodes: Vec::new(),
        };
        builder.build(rows, 0);
        let tree = Tree {
            nodes: builder.nodes,
        };
        for (r, row) in raw.iter_mut().zip(x) {
            *r += hp.learning_rate * tree.predict_row(row);
        }
        trees.push(tree);
        train_loss.push(log_loss_f(&target, &probs(&raw)));
    }

    Ok(BoostedModel {
        base_score,
        trees,
        hyperparams: hp.clone(),
        n_features: d,
        train_loss,
    })
}

fn log_loss_f(y: &[f64], p: &[f64]) -> f64 {
    let total: f64 = y
        .iter()
        .zip(p)
        .map(|(&t, &p)| {
            let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    total / y.len() as f64
}

/// Mean binary log loss with probabilities clipped to `[1e-15, 1 − 1e-15]`.
pub fn log_loss(y: &[bool], p: &[f64]) -> Result<f64> {
    if y.len() != p.len() {
        return Err(Error::Shape {
            expected: format!("{} probabilities", y.len()),
            actual: format!("{}", p.len()),
        });
    }
    if y.is_empty() {
        return Err(Error::InsufficientData("log loss of empty set".into()));
    }
    let t: Vec<f64> = y.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    Ok(log_loss_f(&t, p))
}

pub fn accuracy(y: &[bool], p: &[f64]) -> f64 {
    let hits = y.iter().zip(p).filter(|(&t, &p)| (p > 0.5) == t).count();
    hits as f64 / y.len().max(1) as f64
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
pub fn stratified_folds(y: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    use rand::seq::SliceRandom;
    if k < 2 {
        return Err(Error::InvalidArgument("k must be >= 2".into()));
    }
    let mut folds = vec![0; y.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        if idx.len() < k {
            return Err(Error::InsufficientData(format!(
                "class {} has {} samples, fewer than {k} folds",
                u8::from(class),
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            folds[i] = pos % k;
        }
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub hyperparams: GbdtHyperparams,
    pub fold_log_loss: Vec<f64>,
    pub mean_log_loss: f64,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub rows: Vec<CvRow>,
    pub best_index: usize,
    pub folds: Vec<usize>,
}

impl GridSearchResult {
    pub fn best(&self) -> &GbdtHyperparams {
        &self.rows[self.best_index].hyperparams
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "learning_rate",
            "max_depth",
            "n_estimators",
            "subsample",
            "reg_alpha",
            "reg_lambda",
            "mean_log_loss",
            "mean_accuracy",
            "best",
        ])?;
        for (i, r) in self.rows.iter().enumerate() {
            let h = &r.hyperparams;
            wtr.write_record([
                h.learning_rate.to_string(),
                h.max_depth.to_string(),
                h.n_estimators.to_string(),
                h.subsample.to_string(),
                h.reg_alpha.to_string(),
                h.reg_lambda.to_string(),
                format!("{:.17e}", r.mean_log_loss),
                format!("{:.17e}", r.mean_accuracy),
                (i == self.best_index).to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub type Dataset = (Vec<Vec<f64>>, Vec<bool>);

/// Hook applied to each training fold (never the validation fold), e.g. to
/// oversample the minority class. Receives the fold index.
pub type FoldAugment<'a> = dyn Fn(&[Vec<f64>], &[bool], usize) -> Result<Dataset> + Sync + 'a;

/// k-fold stratified grid search minimizing mean validation log loss. Ties
/// prefer fewer estimators, then shallower trees.
pub fn grid_search_cv(
    x: &[Vec<f64>],
    y: &[bool],
    grid: &[GbdtHyperparams],
    k: usize,
    seed: u64,
    augment: Option<&FoldAugment<'_>>,
) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    check_data(x, y)?;
    let folds = stratified_folds(y, k, seed)?;

    let splits = (0..k)
        .map(|f| {
            let (mut tx, mut ty, mut vx, mut vy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for i in 0..x.len() {
                if folds[i] == f {
                    vx.push(x[i].clone());
                    vy.push(y[i]);
                } else {
                    tx.push(x[i].clone());
                    ty.push(y[i]);
                }
            }
            let (tx, ty) = match augment {
                Some(a) => a(&tx, &ty, f)?,
                None => (tx, ty),
            };
            Ok((tx, ty, vx, vy))
        })
        .collect::<Result<Vec<_>>>()?;

    let rows = grid
        .par_iter()
        .map(|hp| {
            let mut losses = Vec::with_capacity(k);
            let mut accs = Vec::with_capacity(k);
            for (tx, ty, vx, vy) in &splits {
                let model = fit(tx, ty, hp)?;
                let p = model.predict_proba(vx)?;
                losses.push(log_loss(vy, &p)?);
                accs.push(accuracy(vy, &p));
            }
            Ok(CvRow {
                hyperparams: hp.clone(),
                mean_log_loss: losses.iter().sum::<f64>() / k as f64,
                mean_accuracy: accs.iter().sum::<f64>() / k as f64,
                fold_log_loss: losses,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let best_index = (0..rows.len())
        .min_by(|&a, &b| {
            let (ra, rb) = (&rows[a], &rows[b]);
            ra.mean_log_loss
                .total_cmp(&rb.mean_log_loss)
                .then(ra.hyperparams.n_estimators.cmp(&rb.hyperparams.n_estimators))
                .then(ra.hyperparams.max_depth.cmp(&rb.hyperparams.max_depth))
        })
        .expect("grid is non-empty");
    Ok(GridSearchResult {
        rows,
        best_index,
        folds,
    })
}
