//! Random survival forest with log-rank splitting.
//!
//! Each tree is grown on a bootstrap resample (kept as case weights), splits
//! maximise the absolute standardized log-rank statistic over `mtry` sampled
//! features and all unique cutpoints, and terminal nodes carry a
//! Nelson–Aalen cumulative hazard. The ensemble survival is the average of
//! `exp(-H)` over trees.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::StepCurve;
use crate::data::{Dataset, Target};
use crate::error::{Error, Result};
use crate::rng;
use crate::survival::RiskTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features tried per split; `None` means `ceil(sqrt(p + 1))`.
    pub mtry: Option<usize>,
    pub min_node_size: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 250,
            mtry: None,
            min_node_size: 15,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Invalid("forest: n_trees must be >= 1".into()));
        }
        if self.min_node_size == 0 {
            return Err(Error::Invalid("forest: min_node_size must be >= 1".into()));
        }
        if self.mtry == Some(0) {
            return Err(Error::Invalid("forest: mtry must be >= 1".into()));
        }
        Ok(())
    }

    /// `mtry` resolved for `n_features = p + 1`.
    pub fn mtry_for(&self, n_features: usize) -> Result<usize> {
        let m = self
            .mtry
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize);
        if m == 0 || m > n_features {
            return Err(Error::Invalid(format!(
                "forest: mtry = {m} outside 1..={n_features}"
            )));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Split {
        feature: usize,
        cut: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        cumhaz: StepCurve,
    },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn leaf_of(&self, x: &[f64]) -> usize {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Split {
                    feature,
                    cut,
                    left,
                    right,
                } => k = if x[*feature] <= *cut { *left } else { *right },
                Node::Leaf { .. } => return k,
            }
        }
    }

    fn cumhaz(&self, leaf: usize) -> &StepCurve {
        match &self.nodes[leaf] {
            Node::Leaf { cumhaz } => cumhaz,
            Node::Split { .. } => unreachable!("leaf_of returns leaves"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SurvivalForest {
    trees: Vec<Tree>,
    n_features: usize,
}

/// Training view shared by all trees.
struct Training<'a> {
    features: Vec<Vec<f64>>,
    times: &'a [f64],
    events: &'a [bool],
}

impl SurvivalForest {
    pub fn fit(data: &Dataset, target: Target, params: &ForestParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let n_features = data.dim() + 1;
        let mtry = params.mtry_for(n_features)?;
        let times: Vec<f64> = data.iter().map(|o| o.time).collect();
        let events: Vec<bool> = (0..data.len())
            .map(|i| data.is_target_event(i, target))
            .collect();
        let training = Training {
            features: data.iter().map(|o| o.features()).collect(),
            times: &times,
            events: &events,
        };
        let base = rng::derive_seed(seed, &[rng::FOREST, params.seed]);
        let n = data.len();
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|b| {
                let mut r = rng::stream(base, &[b as u64]);
                let mut weights = vec![0.0; n];
                if params.bootstrap {
                    for _ in 0..n {
                        weights[r.random_range(0..n)] += 1.0;
                    }
                } else {
                    weights.fill(1.0);
                }
                grow_tree(&training, &weights, mtry, params.min_node_size, &mut r)
            })
            .collect();
        Ok(Self { trees, n_features })
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features - 1,
                found: x.len().saturating_sub(1),
            });
        }
        Ok(())
    }

    /// Ensemble survival left limit at `t` for features `x = (a, z)`.
    pub fn survival_left(&self, t: f64, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        let total: f64 = self
            .trees
            .iter()
            .map(|tree| (-tree.cumhaz(tree.leaf_of(x)).evaluate_left(t)).exp())
            .sum();
        Ok(total / self.trees.len() as f64)
    }

    /// Right-continuous ensemble survival on `grid` for each feature row.
    pub fn survival_on_grid(&self, rows: &[Vec<f64>], grid: &[f64]) -> Result<Vec<Vec<f64>>> {
        for x in rows {
            self.check(x)?;
        }
        // per tree and leaf: (grid index, survival decrement) pairs
        let steps: Vec<Vec<Vec<(usize, f64)>>> = self
            .trees
            .iter()
            .map(|tree| {
                tree.nodes
                    .iter()
                    .map(|node| match node {
                        Node::Leaf { cumhaz } => {
                            let mut prev = 1.0;
                            cumhaz
                                .jump_times()
                                .iter()
                                .zip(cumhaz.values_after())
                                .filter_map(|(&t, &h)| {
                                    let s = (-h).exp();
                                    let delta = s - prev;
                                    prev = s;
                                    let g = grid.partition_point(|&u| u < t);
                                    (g < grid.len()).then_some((g, delta))
                                })
                                .collect()
                        }
                        Node::Split { .. } => Vec::new(),
                    })
                    .collect()
            })
            .collect();
        let scale = 1.0 / self.trees.len() as f64;
        Ok(rows
            .iter()
            .map(|x| {
                let mut diff = vec![0.0; grid.len()];
                for (tree, leaf_steps) in self.trees.iter().zip(&steps) {
                    for &(g, delta) in &leaf_steps[tree.leaf_of(x)] {
                        diff[g] += delta;
                    }
                }
                let mut s = 1.0;
                diff.iter()
                    .map(|d| {
                        s += d * scale;
                        s
                    })
                    .collect()
            })
            .collect())
    }

    /// Union of terminal-node jump times.
    pub fn jump_times(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self
            .trees
            .iter()
            .flat_map(|t| t.nodes.iter())
            .filter_map(|n| match n {
                Node::Leaf { cumhaz } => Some(cumhaz.jump_times().iter().copied()),
                Node::Split { .. } => None,
            })
            .flatten()
            .collect();
        all.sort_by(f64::total_cmp);
        all.dedup();
        all
    }
}

fn grow_tree<R: Rng>(
    training: &Training<'_>,
    weights: &[f64],
    mtry: usize,
    min_node_size: usize,
    r: &mut R,
) -> Tree {
    let mut nodes = Vec::new();
    let root: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    let mut stack = vec![(root, 0usize)];
    nodes.push(Node::Leaf {
        cumhaz: StepCurve::constant(0.0),
    });
    while let Some((members, slot)) = stack.pop() {
        let n_features = training.features[0].len();
        let chosen = index::sample(r, n_features, mtry).into_vec();
        match best_split(training, weights, &members, &chosen, min_node_size) {
            Some(split) => {
                let (left, right): (Vec<usize>, Vec<usize>) = members
                    .iter()
                    .partition(|&&i| training.features[i][split.feature] <= split.cut);
                let l = nodes.len();
                nodes.push(Node::Leaf {
                    cumhaz: StepCurve::constant(0.0),
                });
                nodes.push(Node::Leaf {
                    cumhaz: StepCurve::constant(0.0),
                });
                nodes[slot] = Node::Split {
                    feature: split.feature,
                    cut: split.cut,
                    left: l,
                    right: l + 1,
                };
                stack.push((right, l + 1));
                stack.push((left, l));
            }
            None => {
                let times: Vec<f64> = members.iter().map(|&i| training.times[i]).collect();
                let events: Vec<bool> = members.iter().map(|&i| training.events[i]).collect();
                let w: Vec<f64> = members.iter().map(|&i| weights[i]).collect();
                nodes[slot] = Node::Leaf {
                    cumhaz: RiskTable::build(&times, &events, Some(&w)).nelson_aalen(),
                };
            }
        }
    }
    Tree { nodes }
}

#[derive(Debug, Clone, Copy)]
struct Split {
    feature: usize,
    cut: f64,
    statistic: f64,
}

/// Node-level event table: for each member its rank (number of node event
/// times `<= X`), plus prefix sums over event times.
struct NodeTable {
    rank: Vec<usize>,
    /// Nelson–Aalen `sum d/Y`
    hazard: Vec<f64>,
    /// `sum Y c`
    y_c: Vec<f64>,
    /// `sum c`, with `c = d (Y - d) / (Y^2 (Y - 1))`
    c: Vec<f64>,
}

impl NodeTable {
    fn build(training: &Training<'_>, weights: &[f64], members: &[usize]) -> Option<Self> {
        let mut order: Vec<usize> = (0..members.len()).collect();
        order.sort_by(|&a, &b| training.times[members[a]].total_cmp(&training.times[members[b]]));
        let mut remaining: f64 = members.iter().map(|&i| weights[i]).sum();
        let mut hazard = vec![0.0];
        let mut y_c = vec![0.0];
        let mut c = vec![0.0];
        let mut rank = vec![0; members.len()];
        let mut k = 0;
        while k < order.len() {
            let t = training.times[members[order[k]]];
            let start = k;
            let mut d = 0.0;
            let mut leaving = 0.0;
            while k < order.len() && training.times[members[order[k]]] == t {
                let i = members[order[k]];
                if training.events[i] {
                    d += weights[i];
                }
                leaving += weights[i];
                k += 1;
            }
            if d > 0.0 {
                let y = remaining;
                let ce = if y > 1.0 { d * (y - d) / (y * y * (y - 1.0)) } else { 0.0 };
                hazard.push(hazard.last().unwrap() + d / y);
                y_c.push(y_c.last().unwrap() + y * ce);
                c.push(c.last().unwrap() + ce);
            }
            let r = hazard.len() - 1;
            for &o in &order[start..k] {
                rank[o] = r;
            }
            remaining -= leaving;
        }
        (hazard.len() > 1).then_some(Self {
            rank,
            hazard,
            y_c,
            c,
        })
    }

    fn n_event_times(&self) -> usize {
        self.hazard.len() - 1
    }
}

/// Fenwick tree over positions `0..n`.
struct Fenwick {
    tree: Vec<f64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self {
            tree: vec![0.0; n + 1],
        }
    }

    fn add(&mut self, pos: usize, v: f64) {
        let mut i = pos + 1;
        while i < self.tree.len() {
            self.tree[i] += v;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over positions `0..=pos`.
    fn prefix(&self, pos: usize) -> f64 {
        let mut i = pos + 1;
        let mut s = 0.0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

fn best_split(
    training: &Training<'_>,
    weights: &[f64],
    members: &[usize],
    features: &[usize],
    min_node_size: usize,
) -> Option<Split> {
    let min_w = min_node_size as f64;
    let total_w: f64 = members.iter().map(|&i| weights[i]).sum();
    if total_w < 2.0 * min_w {
        return None;
    }
    let table = NodeTable::build(training, weights, members)?;
    let e = table.n_event_times();

    let mut best: Option<Split> = None;
    for &f in features {
        let mut order: Vec<usize> = (0..members.len()).collect();
        order.sort_by(|&a, &b| {
            training.features[members[a]][f].total_cmp(&training.features[members[b]][f])
        });
        let mut f1 = Fenwick::new(e + 1);
        let mut f2 = Fenwick::new(e + 1);
        let (mut w_left, mut numerator, mut v1, mut q) = (0.0, 0.0, 0.0, 0.0);
        let mut k = 0;
        while k < order.len() {
            let x = training.features[members[order[k]]][f];
            while k < order.len() && training.features[members[order[k]]][f] == x {
                let o = order[k];
                let i = members[o];
                let w = weights[i];
                let r = table.rank[o];
                let delta = if training.events[i] { 1.0 } else { 0.0 };
                let below = f1.prefix(r) + table.c[r] * (w_left - f2.prefix(r));
                q += 2.0 * w * below + w * w * table.c[r];
                numerator += w * (delta - table.hazard[r]);
                v1 += w * table.y_c[r];
                w_left += w;
                f1.add(r, w * table.c[r]);
                f2.add(r, w);
                k += 1;
            }
            if k == order.len() {
                break;
            }
            if w_left < min_w || total_w - w_left < min_w {
                continue;
            }
            let variance = v1 - q;
            if variance <= 1e-12 {
                continue;
            }
            let stat = numerator / variance.sqrt();
            if best.is_none_or(|b| stat.abs() > b.statistic.abs()) {
                best = Some(Split {
                    feature: f,
                    cut: x,
                    statistic: stat,
                });
            }
        }
    }
    best
}

/// Standardized two-sample log-rank statistic between the subjects of
/// `indices` with feature value `<= cutpoint` (left) and the rest, computed
/// directly over the merged event times. Feature 0 is the group, `j >= 1`
/// is `Z_j`.
pub fn logrank_split(
    data: &Dataset,
    indices: &[usize],
    feature: usize,
    cutpoint: f64,
    target: Target,
) -> Result<f64> {
    if feature > data.dim() {
        return Err(Error::Invalid(format!(
            "feature {feature} outside 0..={}",
            data.dim()
        )));
    }
    let value = |i: usize| data.get(i).features()[feature];
    let left: Vec<usize> = indices.iter().copied().filter(|&i| value(i) <= cutpoint).collect();
    let right: Vec<usize> = indices.iter().copied().filter(|&i| value(i) > cutpoint).collect();
    if left.is_empty() || right.is_empty() {
        return Err(Error::Invalid("log-rank split leaves an empty child".into()));
    }
    let mut event_times: Vec<f64> = indices
        .iter()
        .filter(|&&i| data.is_target_event(i, target))
        .map(|&i| data.get(i).time)
        .collect();
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();

    let count = |set: &[usize], pred: &dyn Fn(usize) -> bool| set.iter().filter(|&&i| pred(i)).count() as f64;
    let (mut num, mut var) = (0.0, 0.0);
    for &t in &event_times {
        let at_risk = |i: usize| data.get(i).time >= t;
        let dies = |i: usize| data.get(i).time == t && data.is_target_event(i, target);
        let (yl, yr) = (count(&left, &at_risk), count(&right, &at_risk));
        let (dl, dr) = (count(&left, &dies), count(&right, &dies));
        let (y, d) = (yl + yr, dl + dr);
        num += dl - yl * d / y;
        if y > 1.0 {
            var += yl * yr * d * (y - d) / (y * y * (y - 1.0));
        }
    }
    if var <= 0.0 {
        return Ok(0.0);
    }
    Ok(num / var.sqrt())
}
