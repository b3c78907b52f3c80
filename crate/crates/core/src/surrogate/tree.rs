//! CART-style decision trees grown by exhaustive search over observed
//! feature values.
//!
//! Split rule: among all `(feature, threshold)` candidates whose gain is
//! within [`GAIN_TOL`] of the best gain, pick the smallest feature index,
//! then the smallest threshold. A node splits only when that gain exceeds
//! the tolerance. Samples go left iff `x[feature] <= threshold`.

use std::fmt::Write as _;

use crate::config::{GainMode, TreeParams};
use crate::error::{Error, Result};

/// Relative tolerance used when comparing split gains.
pub const GAIN_TOL: f64 = 1e-9;

/// Whether `a` and `b` are the same gain up to [`GAIN_TOL`].
pub fn gains_tie(a: f64, b: f64) -> bool {
    (a - b).abs() <= GAIN_TOL * a.abs().max(b.abs()).max(1.0)
}

/// Mean squared deviation of `labels` from their mean.
pub fn mse(labels: &[f64]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyLabels);
    }
    let n = labels.len() as f64;
    let mean = labels.iter().sum::<f64>() / n;
    Ok(labels.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n)
}

fn check_children(parent: &[f64], c1: &[f64], c2: &[f64]) -> Result<()> {
    if c1.is_empty() || c2.is_empty() {
        return Err(Error::EmptyChild);
    }
    if c1.len() + c2.len() != parent.len() {
        return Err(Error::Input(format!(
            "children hold {} labels, parent {}",
            c1.len() + c2.len(),
            parent.len()
        )));
    }
    Ok(())
}

/// Error reduction of a split, `e_p - e_c1 - e_c2`.
pub fn delta_i(parent: &[f64], c1: &[f64], c2: &[f64]) -> Result<f64> {
    check_children(parent, c1, c2)?;
    Ok(mse(parent)? - mse(c1)? - mse(c2)?)
}

/// Size-weighted error reduction, `e_p - (n1/n) e_c1 - (n2/n) e_c2`.
pub fn delta_i_weighted(parent: &[f64], c1: &[f64], c2: &[f64]) -> Result<f64> {
    check_children(parent, c1, c2)?;
    let n = parent.len() as f64;
    Ok(mse(parent)? - c1.len() as f64 / n * mse(c1)? - c2.len() as f64 / n * mse(c2)?)
}

/// Gini impurity of class labels `0..classes`.
pub fn gini(labels: &[usize], classes: usize) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyLabels);
    }
    let mut counts = vec![0usize; classes];
    for &c in labels {
        *counts.get_mut(c).ok_or_else(|| Error::Input(format!("class {c} out of range")))? += 1;
    }
    Ok(gini_counts(&counts, labels.len()))
}

fn gini_counts(counts: &[usize], n: usize) -> f64 {
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn combine(gain: GainMode, ep: f64, el: f64, nl: usize, er: f64, nr: usize) -> f64 {
    match gain {
        GainMode::Unweighted => ep - el - er,
        GainMode::Weighted => {
            let n = (nl + nr) as f64;
            ep - nl as f64 / n * el - nr as f64 / n * er
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeKind {
    Regression,
    /// Labels are class indices `0..classes` stored as `f64`.
    Classification { classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64, count: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    kind: TreeKind,
    n_features: usize,
    params: TreeParams,
    /// Preorder; node 0 is the root.
    nodes: Vec<Node>,
}

/// Best split of the samples `idx`, or `None` when no candidate leaves at
/// least `min_samples_leaf` on both sides.
pub fn best_split(
    x: &[Vec<f64>],
    y: &[f64],
    idx: &[usize],
    kind: TreeKind,
    params: &TreeParams,
) -> Option<Split> {
    let n = idx.len();
    let min_leaf = params.min_samples_leaf.max(1);
    if n < 2 * min_leaf || n == 0 {
        return None;
    }
    let d = x[idx[0]].len();
    let mut cands: Vec<Split> = Vec::new();
    match kind {
        TreeKind::Regression => {
            let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / n as f64;
            let (s_all, ss_all) = idx.iter().fold((0.0, 0.0), |(s, ss), &i| {
                let c = y[i] - mean;
                (s + c, ss + c * c)
            });
            let var = |s: f64, ss: f64, m: usize| {
                let m = m as f64;
                (ss / m - (s / m).powi(2)).max(0.0)
            };
            let ep = var(s_all, ss_all, n);
            let mut order: Vec<(f64, f64)> = Vec::with_capacity(n);
            for f in 0..d {
                order.clear();
                order.extend(idx.iter().map(|&i| (x[i][f], y[i] - mean)));
                order.sort_by(|a, b| a.0.total_cmp(&b.0));
                let (mut s, mut ss) = (0.0, 0.0);
                for k in 0..n - 1 {
                    s += order[k].1;
                    ss += order[k].1 * order[k].1;
                    let nl = k + 1;
                    let nr = n - nl;
                    if order[k].0 == order[k + 1].0 || nl < min_leaf || nr < min_leaf {
                        continue;
                    }
                    let el = var(s, ss, nl);
                    let er = var(s_all - s, ss_all - ss, nr);
                    cands.push(Split { feature: f, threshold: order[k].0, gain: combine(params.gain, ep, el, nl, er, nr) });
                }
            }
        }
        TreeKind::Classification { classes } => {
            let mut total = vec![0usize; classes];
            for &i in idx {
                total[y[i] as usize] += 1;
            }
            let ep = gini_counts(&total, n);
            let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
            let mut left = vec![0usize; classes];
            let mut right = vec![0usize; classes];
            for f in 0..d {
                order.clear();
                order.extend(idx.iter().map(|&i| (x[i][f], y[i] as usize)));
                order.sort_by(|a, b| a.0.total_cmp(&b.0));
                left.iter_mut().for_each(|c| *c = 0);
                for k in 0..n - 1 {
                    left[order[k].1] += 1;
                    let nl = k + 1;
                    let nr = n - nl;
                    if order[k].0 == order[k + 1].0 || nl < min_leaf || nr < min_leaf {
                        continue;
                    }
                    for c in 0..classes {
                        right[c] = total[c] - left[c];
                    }
                    let gain = combine(params.gain, ep, gini_counts(&left, nl), nl, gini_counts(&right, nr), nr);
                    cands.push(Split { feature: f, threshold: order[k].0, gain });
                }
            }
        }
    }
    let best = cands.iter().map(|c| c.gain).fold(f64::NEG_INFINITY, f64::max);
    // Candidates are generated in (feature, threshold) ascending order.
    cands.into_iter().find(|c| c.gain >= best || gains_tie(c.gain, best))
}

impl DecisionTree {
    /// Grows a tree on rows `x` with labels `y`.
    pub fn fit(x: &[Vec<f64>], y: &[f64], kind: TreeKind, params: &TreeParams) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::EmptyLabels);
        }
        if x.len() != y.len() {
            return Err(Error::Input(format!("{} rows but {} labels", x.len(), y.len())));
        }
        let d = x[0].len();
        if let Some(bad) = x.iter().find(|r| r.len() != d) {
            return Err(Error::Dimension { expected: d, got: bad.len() });
        }
        if let TreeKind::Classification { classes } = kind {
            if y.iter().any(|&c| c < 0.0 || c.fract() != 0.0 || c as usize >= classes) {
                return Err(Error::Input("classification labels must be class indices".into()));
            }
        }
        let mut tree = DecisionTree { kind, n_features: d, params: params.clone(), nodes: Vec::new() };
        let idx: Vec<usize> = (0..x.len()).collect();
        tree.grow(x, y, idx, 0);
        Ok(tree)
    }

    fn leaf_value(&self, y: &[f64], idx: &[usize]) -> f64 {
        match self.kind {
            TreeKind::Regression => idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64,
            TreeKind::Classification { classes } => {
                let mut counts = vec![0usize; classes];
                for &i in idx {
                    counts[y[i] as usize] += 1;
                }
                // Majority vote; the lowest class wins a tie.
                let mut best = 0;
                for c in 1..classes {
                    if counts[c] > counts[best] {
                        best = c;
                    }
                }
                best as f64
            }
        }
    }

    fn grow(&mut self, x: &[Vec<f64>], y: &[f64], idx: Vec<usize>, depth: usize) -> usize {
        let at = self.nodes.len();
        let split = if depth < self.params.max_depth {
            best_split(x, y, &idx, self.kind, &self.params).filter(|s| s.gain > 0.0 && !gains_tie(s.gain, 0.0))
        } else {
            None
        };
        let Some(s) = split else {
            self.nodes.push(Node::Leaf { value: self.leaf_value(y, &idx), count: idx.len() });
            return at;
        };
        self.nodes.push(Node::Split { feature: s.feature, threshold: s.threshold, left: 0, right: 0 });
        let (li, ri): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| x[i][s.feature] <= s.threshold);
        let left = self.grow(x, y, li, depth + 1);
        let right = self.grow(x, y, ri, depth + 1);
        self.nodes[at] = Node::Split { feature: s.feature, threshold: s.threshold, left, right };
        at
    }

    /// Constant tree, mostly for tests and fallbacks.
    pub fn constant(value: f64, n_features: usize, kind: TreeKind) -> Self {
        DecisionTree {
            kind,
            n_features,
            params: TreeParams::default(),
            nodes: vec![Node::Leaf { value, count: 0 }],
        }
    }

    /// Builds a tree from preorder nodes, checking the links.
    pub fn from_nodes(kind: TreeKind, n_features: usize, params: TreeParams, nodes: Vec<Node>) -> Result<Self> {
        let tree = DecisionTree { kind, n_features, params, nodes };
        tree.check()?;
        Ok(tree)
    }

    fn check(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Input("tree has no nodes".into()));
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Input(format!("node {i} reached twice")));
            }
            if let Node::Split { feature, left, right, .. } = self.nodes[i] {
                if feature >= self.n_features {
                    return Err(Error::Dimension { expected: self.n_features, got: feature + 1 });
                }
                if left >= self.nodes.len() || right >= self.nodes.len() || left <= i || right <= i {
                    return Err(Error::Input(format!("node {i} has bad children")));
                }
                stack.push(right);
                stack.push(left);
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Input("unreachable nodes".into()));
        }
        Ok(())
    }

    pub fn kind(&self) -> TreeKind {
        self.kind
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn params(&self) -> &TreeParams {
        &self.params
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
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

    /// Index of the leaf `x` is routed to.
    pub fn leaf_index(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.n_features {
            return Err(Error::Dimension { expected: self.n_features, got: x.len() });
        }
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return Ok(i),
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        match self.nodes[self.leaf_index(x)?] {
            Node::Leaf { value, .. } => Ok(value),
            Node::Split { .. } => unreachable!("leaf_index stops at leaves"),
        }
    }

    /// Appends the text form: a header line then one preorder line per
    /// node, `N <feature> <threshold>` or `L <value> <count>`.
    pub fn write_text(&self, out: &mut String) {
        let kind = match self.kind {
            TreeKind::Regression => "regression".to_string(),
            TreeKind::Classification { classes } => format!("classification:{classes}"),
        };
        let gain = match self.params.gain {
            GainMode::Unweighted => "unweighted",
            GainMode::Weighted => "weighted",
        };
        let _ = writeln!(
            out,
            "tree {kind} {} {} {} {gain} {}",
            self.n_features,
            self.params.max_depth,
            self.params.min_samples_leaf,
            self.nodes.len()
        );
        self.write_node(0, out);
    }

    fn write_node(&self, i: usize, out: &mut String) {
        match self.nodes[i] {
            Node::Leaf { value, count } => {
                let _ = writeln!(out, "L {value:?} {count}");
            }
            Node::Split { feature, threshold, left, right } => {
                let _ = writeln!(out, "N {feature} {threshold:?}");
                self.write_node(left, out);
                self.write_node(right, out);
            }
        }
    }

    /// Parses the form produced by [`write_text`](Self::write_text).
    /// `lines` yields `(line number, text)`.
    pub fn read_text<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>) -> Result<Self> {
        let (ln, header) = lines.next().ok_or(Error::Parse { line: 0, msg: "missing tree header".into() })?;
        let perr = |line: usize, msg: &str| Error::Parse { line, msg: msg.to_string() };
        let f: Vec<&str> = header.split_ascii_whitespace().collect();
        if f.len() != 7 || f[0] != "tree" {
            return Err(perr(ln, "bad tree header"));
        }
        let kind = match f[1] {
            "regression" => TreeKind::Regression,
            k => match k.strip_prefix("classification:").and_then(|c| c.parse().ok()) {
                Some(classes) => TreeKind::Classification { classes },
                None => return Err(perr(ln, "bad tree kind")),
            },
        };
        let num = |s: &str| s.parse::<usize>().map_err(|_| perr(ln, "bad number in tree header"));
        let n_features = num(f[2])?;
        let max_depth = num(f[3])?;
        let min_samples_leaf = num(f[4])?;
        let gain = match f[5] {
            "unweighted" => GainMode::Unweighted,
            "weighted" => GainMode::Weighted,
            _ => return Err(perr(ln, "bad gain mode")),
        };
        let count = num(f[6])?;
        let mut nodes = Vec::with_capacity(count);
        let mut pending: Vec<usize> = Vec::new();
        for _ in 0..count {
            let (ln, text) = lines.next().ok_or(perr(ln, "tree ended early"))?;
            let f: Vec<&str> = text.split_ascii_whitespace().collect();
            let me = nodes.len();
            // Link into the parent waiting for a child.
            if let Some(&p) = pending.last() {
                match &mut nodes[p] {
                    Node::Split { left, right, .. } => {
                        if *left == 0 {
                            *left = me;
                        } else {
                            *right = me;
                            pending.pop();
                        }
                    }
                    Node::Leaf { .. } => unreachable!(),
                }
            } else if me != 0 {
                return Err(perr(ln, "node after complete tree"));
            }
            match f.as_slice() {
                ["N", feat, thr] => {
                    let feature = feat.parse().map_err(|_| perr(ln, "bad feature index"))?;
                    let threshold = thr.parse().map_err(|_| perr(ln, "bad threshold"))?;
                    nodes.push(Node::Split { feature, threshold, left: 0, right: 0 });
                    pending.push(me);
                }
                ["L", val, cnt] => {
                    let value = val.parse().map_err(|_| perr(ln, "bad leaf value"))?;
                    let count = cnt.parse().map_err(|_| perr(ln, "bad leaf count"))?;
                    nodes.push(Node::Leaf { value, count });
                }
                _ => return Err(perr(ln, "bad tree node line")),
            }
        }
        if !pending.is_empty() {
            return Err(perr(ln, "tree has dangling splits"));
        }
        DecisionTree::from_nodes(kind, n_features, TreeParams { max_depth, min_samples_leaf, gain }, nodes)
    }
}
