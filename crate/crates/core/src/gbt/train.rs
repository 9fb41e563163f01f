//! Level-wise tree growth for squared-error boosting.
//!
//! Each level scans every feature once. In exact mode the scan walks a
//! presorted list of present values; in histogram mode it accumulates per-bin
//! sums. Rows whose value is missing are tried on both sides of every
//! candidate threshold and the better side is stored as the default.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::ensemble::{TrainingHistory, TreeEnsemble};
use super::matrix::FeatureMatrix;
use super::params::{GbtParams, SplitMode};
use super::tree::{Tree, TreeNode};
use crate::error::{Error, Result};

const NONE: u32 = u32::MAX;
const MISSING_BIN: u16 = u16::MAX;
/// Splits must beat this absolute gain so that round-off residuals of a
/// constant target do not grow trees.
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    threshold: f64,
    default_left: bool,
    left_sum: f64,
    left_count: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct NodeStats {
    sum: f64,
    count: f64,
}

enum ColumnIndex {
    Exact(Vec<Vec<(f64, u32)>>),
    Histogram { cuts: Vec<Vec<f64>>, bins: Vec<Vec<u16>> },
}

impl ColumnIndex {
    fn build(x: &FeatureMatrix, mode: SplitMode) -> Self {
        let n = x.n_rows();
        let sorted: Vec<Vec<(f64, u32)>> = (0..x.n_features())
            .into_par_iter()
            .map(|f| {
                let mut col: Vec<(f64, u32)> =
                    (0..n).filter_map(|r| x.get(r, f).map(|v| (v, r as u32))).collect();
                col.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                col
            })
            .collect();
        match mode {
            SplitMode::Exact => ColumnIndex::Exact(sorted),
            SplitMode::Histogram { max_bins } => {
                let cuts: Vec<Vec<f64>> =
                    sorted.par_iter().map(|col| histogram_cuts(col, max_bins as usize)).collect();
                let bins = (0..x.n_features())
                    .into_par_iter()
                    .map(|f| {
                        let c = &cuts[f];
                        (0..n)
                            .map(|r| match x.get(r, f) {
                                Some(v) => c.partition_point(|cut| *cut <= v) as u16,
                                None => MISSING_BIN,
                            })
                            .collect()
                    })
                    .collect();
                ColumnIndex::Histogram { cuts, bins }
            }
        }
    }

    fn n_features(&self) -> usize {
        match self {
            ColumnIndex::Exact(s) => s.len(),
            ColumnIndex::Histogram { cuts, .. } => cuts.len(),
        }
    }

    fn is_empty_feature(&self, f: usize) -> bool {
        match self {
            ColumnIndex::Exact(s) => s[f].is_empty(),
            ColumnIndex::Histogram { cuts, .. } => cuts[f].is_empty(),
        }
    }
}

/// Cut points between distinct values; with more distinct values than
/// `max_bins`, cuts sit at evenly spaced ranks.
fn histogram_cuts(sorted: &[(f64, u32)], max_bins: usize) -> Vec<f64> {
    let mut distinct: Vec<(f64, usize)> = Vec::new(); // value, count
    for &(v, _) in sorted {
        match distinct.last_mut() {
            Some((last, c)) if *last == v => *c += 1,
            _ => distinct.push((v, 1)),
        }
    }
    if distinct.len() < 2 {
        return Vec::new();
    }
    let boundary = |i: usize| midpoint(distinct[i].0, distinct[i + 1].0);
    if distinct.len() <= max_bins {
        return (0..distinct.len() - 1).map(boundary).collect();
    }
    let total = sorted.len();
    let mut cuts = Vec::with_capacity(max_bins - 1);
    let mut cum = 0usize;
    let mut next_bin = 1usize;
    for i in 0..distinct.len() - 1 {
        cum += distinct[i].1;
        if cum * max_bins >= next_bin * total {
            cuts.push(boundary(i));
            while next_bin * total <= cum * max_bins {
                next_bin += 1;
            }
        }
    }
    cuts
}

#[inline]
fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m > lo {
        m
    } else {
        hi
    }
}

#[inline]
fn score(sum: f64, count: f64, lambda: f64) -> f64 {
    let d = count + lambda;
    if d > 0.0 {
        sum * sum / d
    } else {
        0.0
    }
}

struct LevelContext<'a> {
    grads: &'a [f64],
    /// Open-node slot of every row, `NONE` for rows in closed nodes or out
    /// of sample.
    row_slot: &'a [u32],
    totals: &'a [NodeStats],
    lambda: f64,
}

impl LevelContext<'_> {
    #[inline]
    fn slot(&self, row: u32) -> Option<usize> {
        let s = self.row_slot[row as usize];
        (s != NONE).then_some(s as usize)
    }

    /// Tries `left` (present rows below the threshold) with the node's
    /// missing rows on each side. Returns the better candidate, left first
    /// on ties.
    fn evaluate(
        &self,
        slot: usize,
        left: NodeStats,
        present: NodeStats,
        threshold: f64,
        best: &mut Option<Candidate>,
    ) {
        let total = self.totals[slot];
        let missing = NodeStats { sum: total.sum - present.sum, count: total.count - present.count };
        let parent = score(total.sum, total.count, self.lambda);
        let mut consider = |l: NodeStats, default_left: bool| {
            let r = NodeStats { sum: total.sum - l.sum, count: total.count - l.count };
            if l.count < 1.0 || r.count < 1.0 {
                return;
            }
            let gain = score(l.sum, l.count, self.lambda) + score(r.sum, r.count, self.lambda) - parent;
            if best.is_none_or(|b| gain > b.gain) {
                *best = Some(Candidate {
                    gain,
                    threshold,
                    default_left,
                    left_sum: l.sum,
                    left_count: l.count,
                });
            }
        };
        consider(
            NodeStats { sum: left.sum + missing.sum, count: left.count + missing.count },
            true,
        );
        if missing.count > 0.0 {
            consider(left, false);
        }
    }

    fn best_exact(&self, col: &[(f64, u32)], n_slots: usize) -> Vec<Option<Candidate>> {
        let mut present = vec![NodeStats::default(); n_slots];
        for &(_, r) in col {
            if let Some(s) = self.slot(r) {
                present[s].sum += self.grads[r as usize];
                present[s].count += 1.0;
            }
        }
        let mut left = vec![NodeStats::default(); n_slots];
        let mut last = vec![f64::NAN; n_slots];
        let mut best: Vec<Option<Candidate>> = vec![None; n_slots];
        for &(v, r) in col {
            let Some(s) = self.slot(r) else { continue };
            if left[s].count > 0.0 && v > last[s] {
                let thr = midpoint(last[s], v);
                self.evaluate(s, left[s], present[s], thr, &mut best[s]);
            }
            left[s].sum += self.grads[r as usize];
            left[s].count += 1.0;
            last[s] = v;
        }
        self.present_vs_missing(&present, &mut best);
        best
    }

    fn best_histogram(&self, bins: &[u16], cuts: &[f64], n_slots: usize) -> Vec<Option<Candidate>> {
        let n_bins = cuts.len() + 1;
        let mut hist = vec![NodeStats::default(); n_slots * n_bins];
        let mut present = vec![NodeStats::default(); n_slots];
        for (r, &b) in bins.iter().enumerate() {
            if b == MISSING_BIN {
                continue;
            }
            let Some(s) = self.slot(r as u32) else { continue };
            let g = self.grads[r];
            let h = &mut hist[s * n_bins + b as usize];
            h.sum += g;
            h.count += 1.0;
            present[s].sum += g;
            present[s].count += 1.0;
        }
        let mut best: Vec<Option<Candidate>> = vec![None; n_slots];
        for s in 0..n_slots {
            let mut left = NodeStats::default();
            for (b, cut) in cuts.iter().enumerate() {
                let h = hist[s * n_bins + b];
                if h.count == 0.0 {
                    continue;
                }
                left.sum += h.sum;
                left.count += h.count;
                if left.count < present[s].count {
                    self.evaluate(s, left, present[s], *cut, &mut best[s]);
                }
            }
        }
        self.present_vs_missing(&present, &mut best);
        best
    }

    /// The split that sends every present row left and every missing row right.
    fn present_vs_missing(&self, present: &[NodeStats], best: &mut [Option<Candidate>]) {
        for (s, p) in present.iter().enumerate() {
            let total = self.totals[s];
            if p.count > 0.0 && total.count > p.count {
                let l = *p;
                let r = NodeStats { sum: total.sum - l.sum, count: total.count - l.count };
                let gain = score(l.sum, l.count, self.lambda) + score(r.sum, r.count, self.lambda)
                    - score(total.sum, total.count, self.lambda);
                if best[s].is_none_or(|b| gain > b.gain) {
                    best[s] = Some(Candidate {
                        gain,
                        threshold: f64::MAX,
                        default_left: false,
                        left_sum: l.sum,
                        left_count: l.count,
                    });
                }
            }
        }
    }
}

struct Grower<'a> {
    x: &'a FeatureMatrix,
    index: &'a ColumnIndex,
    params: &'a GbtParams,
}

impl Grower<'_> {
    /// Grows one tree on `grads` over rows flagged in `in_sample`.
    fn grow(&self, grads: &[f64], in_sample: &[bool]) -> Tree {
        let n = grads.len();
        let mut row_node: Vec<u32> = in_sample.iter().map(|&s| if s { 0 } else { NONE }).collect();
        let mut root = NodeStats::default();
        for r in 0..n {
            if in_sample[r] {
                root.sum += grads[r];
                root.count += 1.0;
            }
        }
        let mut nodes = vec![TreeNode::Leaf { value: 0.0 }];
        let mut stats = vec![root];
        let mut frontier: Vec<u32> = vec![0];

        for _depth in 0..self.params.max_depth {
            let open: Vec<u32> =
                frontier.iter().copied().filter(|&i| stats[i as usize].count >= 2.0).collect();
            if open.is_empty() {
                break;
            }
            let mut slot_of = vec![NONE; nodes.len()];
            for (s, &node) in open.iter().enumerate() {
                slot_of[node as usize] = s as u32;
            }
            let totals: Vec<NodeStats> = open.iter().map(|&i| stats[i as usize]).collect();
            let row_slot: Vec<u32> =
                row_node.iter().map(|&nd| if nd == NONE { NONE } else { slot_of[nd as usize] }).collect();
            let ctx = LevelContext {
                grads,
                row_slot: &row_slot,
                totals: &totals,
                lambda: self.params.lambda,
            };
            let per_feature: Vec<Vec<Option<Candidate>>> = (0..self.index.n_features())
                .into_par_iter()
                .map(|f| {
                    if self.index.is_empty_feature(f) {
                        return vec![None; open.len()];
                    }
                    match self.index {
                        ColumnIndex::Exact(cols) => ctx.best_exact(&cols[f], open.len()),
                        ColumnIndex::Histogram { cuts, bins } => {
                            ctx.best_histogram(&bins[f], &cuts[f], open.len())
                        }
                    }
                })
                .collect();

            // Reduce in feature order; strict improvement keeps the lowest index.
            let mut chosen: Vec<Option<(usize, Candidate)>> = vec![None; open.len()];
            for (f, cands) in per_feature.iter().enumerate() {
                for (s, c) in cands.iter().enumerate() {
                    if let Some(c) = c {
                        if chosen[s].is_none_or(|(_, b)| c.gain > b.gain) {
                            chosen[s] = Some((f, *c));
                        }
                    }
                }
            }

            let mut next_frontier = Vec::new();
            // split node id -> (feature, threshold, default_left, left id)
            let mut splits: Vec<Option<(usize, f64, bool, u32)>> = vec![None; nodes.len()];
            for (s, &node) in open.iter().enumerate() {
                let Some((f, c)) = chosen[s] else { continue };
                if !(c.gain > self.params.gamma && c.gain > MIN_GAIN) {
                    continue;
                }
                let total = stats[node as usize];
                let left_id = nodes.len() as u32;
                nodes.push(TreeNode::Leaf { value: 0.0 });
                nodes.push(TreeNode::Leaf { value: 0.0 });
                stats.push(NodeStats { sum: c.left_sum, count: c.left_count });
                stats.push(NodeStats { sum: total.sum - c.left_sum, count: total.count - c.left_count });
                nodes[node as usize] = TreeNode::Split {
                    feature: f as u32,
                    threshold: c.threshold,
                    default_left: c.default_left,
                    left: left_id,
                    right: left_id + 1,
                };
                splits[node as usize] = Some((f, c.threshold, c.default_left, left_id));
                next_frontier.push(left_id);
                next_frontier.push(left_id + 1);
            }
            if next_frontier.is_empty() {
                break;
            }
            let x = self.x;
            row_node.par_iter_mut().enumerate().for_each(|(r, node)| {
                if *node == NONE {
                    return;
                }
                if let Some(Some((f, thr, default_left, left))) = splits.get(*node as usize) {
                    let go_left = match x.get(r, *f) {
                        Some(v) => v < *thr,
                        None => *default_left,
                    };
                    *node = if go_left { *left } else { *left + 1 };
                }
            });
            frontier = next_frontier;
        }

        let lr = self.params.learning_rate;
        for (node, st) in nodes.iter_mut().zip(&stats) {
            if let TreeNode::Leaf { value } = node {
                *value = lr * st.sum / (st.count + self.params.lambda);
            }
        }
        Tree { nodes }
    }
}

fn rmse(pred: &[f64], y: &[f64]) -> f64 {
    let sse: f64 = pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum();
    (sse / y.len() as f64).sqrt()
}

/// Fits a boosted ensemble on `(x_train, y_train)`, monitoring RMSE on
/// `(x_val, y_val)` after every round.
///
/// Training stops once validation RMSE has not improved for
/// `early_stopping_rounds` rounds, at `max_rounds`, or when a round can no
/// longer split anything with full-row sampling. `best_round` is the tree
/// count with the lowest validation RMSE (0 means the base score alone).
pub fn train(
    x_train: &FeatureMatrix,
    y_train: &[f64],
    x_val: &FeatureMatrix,
    y_val: &[f64],
    params: &GbtParams,
    seed: u64,
) -> Result<TreeEnsemble> {
    params.validate()?;
    if x_train.n_rows() == 0 || x_val.n_rows() == 0 {
        return Err(Error::Data("training and validation sets must be non-empty".into()));
    }
    if x_train.n_rows() != y_train.len() || x_val.n_rows() != y_val.len() {
        return Err(Error::Data("feature rows and targets differ in length".into()));
    }
    if x_train.n_features() != x_val.n_features() {
        return Err(Error::Schema { expected: x_train.n_features(), got: x_val.n_features() });
    }
    if y_train.iter().chain(y_val).any(|y| !y.is_finite()) {
        return Err(Error::Numerical("non-finite training target".into()));
    }

    let n = y_train.len();
    let base = y_train.iter().sum::<f64>() / n as f64;
    let index = ColumnIndex::build(x_train, params.split_mode);
    let grower = Grower { x: x_train, index: &index, params };

    let mut pred_train = vec![base; n];
    let mut pred_val = vec![base; y_val.len()];
    let mut history = TrainingHistory {
        train_rmse: vec![rmse(&pred_train, y_train)],
        val_rmse: vec![rmse(&pred_val, y_val)],
    };
    let mut best_val = history.val_rmse[0];
    let mut best_round = 0usize;
    let mut trees = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample_size = ((n as f64 * params.subsample).round() as usize).clamp(1, n);
    let mut grads = vec![0.0; n];
    let mut in_sample = vec![true; n];

    for round in 1..=params.max_rounds {
        for ((g, y), p) in grads.iter_mut().zip(y_train).zip(&pred_train) {
            *g = y - p;
        }
        if sample_size < n {
            in_sample.iter_mut().for_each(|s| *s = false);
            for r in index::sample(&mut rng, n, sample_size) {
                in_sample[r] = true;
            }
        }
        let tree = grower.grow(&grads, &in_sample);
        if tree.is_leaf_only() && sample_size == n {
            break;
        }
        pred_train
            .par_iter_mut()
            .enumerate()
            .for_each(|(r, p)| *p += tree.predict(x_train.row(r), None));
        pred_val.par_iter_mut().enumerate().for_each(|(r, p)| *p += tree.predict(x_val.row(r), None));
        trees.push(tree);

        let train_rmse = rmse(&pred_train, y_train);
        let val_rmse = rmse(&pred_val, y_val);
        if !val_rmse.is_finite() {
            return Err(Error::Numerical(format!("validation RMSE diverged at round {round}")));
        }
        history.train_rmse.push(train_rmse);
        history.val_rmse.push(val_rmse);
        if val_rmse < best_val {
            best_val = val_rmse;
            best_round = round;
        } else if round - best_round >= params.early_stopping_rounds {
            break;
        }
    }

    Ok(TreeEnsemble {
        base_score: base,
        trees,
        params: *params,
        best_round,
        n_features: x_train.n_features(),
        history,
    })
}
