//! Decision-tree distillation of a discriminated group.
//!
//! A CART tree (Gini, exact threshold search) is grown on the encoded
//! columns of the key attributes to separate the group from its complement,
//! then pruned along the weakest-link sequence for as long as the predicted
//! group still satisfies the size constraint.

use serde::{Deserialize, Serialize};

use crate::dataset::{format_number, ColumnInfo, ColumnSource, Dataset, FeatureMatrix, Value};
use crate::error::{Error, Result};
use crate::objective::{dscore_hard, ObjectiveConfig};
use crate::par::{self, Exec};
use crate::solver::Evidence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStats {
    pub count: usize,
    pub member_count: usize,
    pub fav_count: usize,
}

impl NodeStats {
    /// Majority label; ties go to non-member.
    pub fn label(&self) -> bool {
        2 * self.member_count > self.count
    }

    /// Rows misclassified if this node were a leaf.
    pub fn errors(&self) -> usize {
        if self.label() {
            self.count - self.member_count
        } else {
            self.member_count
        }
    }

    pub fn fav_rate(&self) -> f64 {
        self.fav_count as f64 / self.count as f64
    }

    pub fn member_rate(&self) -> f64 {
        self.member_count as f64 / self.count as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NodeKind {
    Leaf,
    /// Rows with `x[column] <= threshold` go left.
    Split {
        column: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub stats: NodeStats,
    pub kind: NodeKind,
}

/// Arena-backed binary tree; node 0 is the root and children follow parents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn from_nodes(nodes: Vec<TreeNode>) -> Result<Tree> {
        if nodes.is_empty() {
            return Err(Error::Precondition("tree has no nodes".into()));
        }
        for (i, node) in nodes.iter().enumerate() {
            if let NodeKind::Split { left, right, .. } = node.kind {
                if left <= i || right <= i || left >= nodes.len() || right >= nodes.len() {
                    return Err(Error::Precondition(format!("bad children at node {i}")));
                }
                let (l, r) = (nodes[left].stats, nodes[right].stats);
                if l.count + r.count != node.stats.count
                    || l.member_count + r.member_count != node.stats.member_count
                    || l.fav_count + r.fav_count != node.stats.fav_count
                {
                    return Err(Error::Precondition(format!(
                        "child counts do not sum at node {i}"
                    )));
                }
            }
        }
        Ok(Tree { nodes })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &TreeNode {
        &self.nodes[i]
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        matches!(self.nodes[i].kind, NodeKind::Leaf)
    }

    /// Leaf ids in left-to-right order.
    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![0];
        while let Some(i) = stack.pop() {
            match self.nodes[i].kind {
                NodeKind::Leaf => out.push(i),
                NodeKind::Split { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i].kind {
                NodeKind::Leaf => 0,
                NodeKind::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    pub fn leaf_of(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i].kind {
                NodeKind::Leaf => return i,
                NodeKind::Split {
                    column,
                    threshold,
                    left,
                    right,
                } => i = if x[column] <= threshold { left } else { right },
            }
        }
    }

    /// Predicted labels for every row of `fm`.
    pub fn predict(&self, fm: &FeatureMatrix) -> Vec<bool> {
        (0..fm.n())
            .map(|i| self.nodes[self.leaf_of(fm.row(i))].stats.label())
            .collect()
    }

    /// Copy of the tree with every node in `collapse` turned into a leaf,
    /// renumbered so that only reachable nodes remain.
    fn collapsed(&self, collapse: &[bool]) -> Tree {
        let mut nodes = Vec::new();
        fn copy(t: &Tree, i: usize, collapse: &[bool], out: &mut Vec<TreeNode>) -> usize {
            let id = out.len();
            out.push(TreeNode {
                stats: t.nodes[i].stats,
                kind: NodeKind::Leaf,
            });
            if let NodeKind::Split {
                column,
                threshold,
                left,
                right,
            } = t.nodes[i].kind
            {
                if !collapse[i] {
                    let l = copy(t, left, collapse, out);
                    let r = copy(t, right, collapse, out);
                    out[id].kind = NodeKind::Split {
                        column,
                        threshold,
                        left: l,
                        right: r,
                    };
                }
            }
            id
        }
        copy(self, 0, collapse, &mut nodes);
        Tree { nodes }
    }
}

fn gini_weighted(count: usize, members: usize) -> f64 {
    // count * gini impurity
    if count == 0 {
        return 0.0;
    }
    let p = members as f64 / count as f64;
    count as f64 * 2.0 * p * (1.0 - p)
}

#[derive(Debug, Clone, Copy)]
struct SplitChoice {
    column: usize,
    threshold: f64,
    impurity: f64,
}

fn best_split_on_column(
    fm: &FeatureMatrix,
    rows: &[usize],
    members: &[bool],
    column: usize,
    min_leaf: usize,
) -> Option<SplitChoice> {
    let mut sorted: Vec<(f64, bool)> = rows
        .iter()
        .map(|&i| (fm.get(i, column), members[i]))
        .collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total = sorted.len();
    let total_members = sorted.iter().filter(|r| r.1).count();
    let mut best: Option<SplitChoice> = None;
    let mut left_members = 0;
    for cut in 1..total {
        if sorted[cut - 1].1 {
            left_members += 1;
        }
        if sorted[cut - 1].0 == sorted[cut].0 || cut < min_leaf || total - cut < min_leaf {
            continue;
        }
        let impurity = gini_weighted(cut, left_members)
            + gini_weighted(total - cut, total_members - left_members);
        if best.is_none_or(|b| impurity < b.impurity) {
            best = Some(SplitChoice {
                column,
                threshold: 0.5 * (sorted[cut - 1].0 + sorted[cut].0),
                impurity,
            });
        }
    }
    best
}

/// Grow a Gini CART tree separating `members` from the rest over all
/// columns of `fm`. Growth stops at pure nodes, or when no threshold leaves
/// at least `min_leaf` rows on each side.
pub fn fit_tree(
    fm: &FeatureMatrix,
    members: &[bool],
    fav: &[bool],
    min_leaf: usize,
) -> Result<Tree> {
    fit_tree_with(fm, members, fav, min_leaf, Exec::default())
}

pub fn fit_tree_with(
    fm: &FeatureMatrix,
    members: &[bool],
    fav: &[bool],
    min_leaf: usize,
    exec: Exec,
) -> Result<Tree> {
    if fm.d() == 0 {
        return Err(Error::NoKeyAttributes);
    }
    if members.len() != fm.n() || fav.len() != fm.n() {
        return Err(Error::Dimension(
            "membership and feature rows differ".into(),
        ));
    }
    let min_leaf = min_leaf.max(1);
    let mut nodes: Vec<TreeNode> = Vec::new();
    // (node id, rows) awaiting a split decision
    let mut pending: Vec<(usize, Vec<usize>)> = Vec::new();
    let stats_of = |rows: &[usize]| NodeStats {
        count: rows.len(),
        member_count: rows.iter().filter(|&&i| members[i]).count(),
        fav_count: rows.iter().filter(|&&i| fav[i]).count(),
    };
    let all: Vec<usize> = (0..fm.n()).collect();
    nodes.push(TreeNode {
        stats: stats_of(&all),
        kind: NodeKind::Leaf,
    });
    pending.push((0, all));

    // depth-first, left before right, so children always follow their parent
    while let Some((id, rows)) = pending.pop() {
        let stats = nodes[id].stats;
        if stats.member_count == 0 || stats.member_count == stats.count {
            continue;
        }
        if stats.count < 2 * min_leaf {
            continue;
        }
        let candidates = par::map_indices(exec, fm.d(), |c| {
            best_split_on_column(fm, &rows, members, c, min_leaf)
        });
        // lowest impurity, ties to the lower column (candidates are in column order)
        let best = candidates
            .into_iter()
            .flatten()
            .fold(None::<SplitChoice>, |acc, c| match acc {
                Some(a) if a.impurity <= c.impurity => Some(a),
                _ => Some(c),
            });
        // Weighted Gini never increases under a split, so zero-gain splits
        // are kept (needed for XOR-like groups); pruning removes them later.
        let Some(split) = best else { continue };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| fm.get(i, split.column) <= split.threshold);
        let left = nodes.len();
        nodes.push(TreeNode {
            stats: stats_of(&left_rows),
            kind: NodeKind::Leaf,
        });
        let right = nodes.len();
        nodes.push(TreeNode {
            stats: stats_of(&right_rows),
            kind: NodeKind::Leaf,
        });
        nodes[id].kind = NodeKind::Split {
            column: split.column,
            threshold: split.threshold,
            left,
            right,
        };
        pending.push((right, right_rows));
        pending.push((left, left_rows));
    }
    Tree::from_nodes(nodes)
}

/// `(R(t) - R(T_t), leaves(T_t) - 1)` in misclassified-row counts, per
/// internal node of `tree`.
fn link_strengths(tree: &Tree) -> Vec<Option<(usize, usize)>> {
    let mut subtree = vec![(0usize, 0usize); tree.nodes.len()]; // (leaf errors, leaves)
    for i in (0..tree.nodes.len()).rev() {
        subtree[i] = match tree.nodes[i].kind {
            NodeKind::Leaf => (tree.nodes[i].stats.errors(), 1),
            NodeKind::Split { left, right, .. } => (
                subtree[left].0 + subtree[right].0,
                subtree[left].1 + subtree[right].1,
            ),
        };
    }
    (0..tree.nodes.len())
        .map(|i| match tree.nodes[i].kind {
            NodeKind::Leaf => None,
            NodeKind::Split { .. } => {
                let own = tree.nodes[i].stats.errors();
                Some((own.saturating_sub(subtree[i].0), subtree[i].1 - 1))
            }
        })
        .collect()
}

/// Weakest-link score g(t) = (R(t) - R(T_t)) / (leaves(T_t) - 1) for every
/// internal node, with R the misclassified fraction of the root's rows.
pub fn weakest_link_scores(tree: &Tree) -> Vec<(usize, f64)> {
    let n = tree.root().stats.count as f64;
    link_strengths(tree)
        .into_iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|(num, den)| (i, num as f64 / (n * den as f64))))
        .collect()
}

/// Minimal cost-complexity pruning sequence with strictly increasing alpha,
/// from the smallest subtree with the full tree's error (alpha 0) down to
/// the root alone. All nodes tied at the minimal g are collapsed in one step;
/// ties are compared exactly on integer counts.
pub fn ccp_sequence(root: &Tree) -> Vec<(f64, Tree)> {
    let n = root.root().stats.count as f64;
    let mut seq = vec![(0.0, root.clone())];
    let mut current = root.clone();
    while !current.is_leaf(0) {
        let strengths = link_strengths(&current);
        let (num, den) = strengths
            .iter()
            .flatten()
            .copied()
            .min_by(|a, b| (a.0 as u128 * b.1 as u128).cmp(&(b.0 as u128 * a.1 as u128)))
            .expect("internal node exists");
        let collapse: Vec<bool> = strengths
            .iter()
            .map(|s| matches!(s, Some((a, b)) if *a as u128 * den as u128 == num as u128 * *b as u128))
            .collect();
        current = current.collapsed(&collapse);
        if num == 0 {
            seq[0].1 = current.clone();
        } else {
            seq.push((num as f64 / (n * den as f64), current.clone()));
        }
    }
    seq
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
}

impl RuleOp {
    pub fn symbol(self) -> &'static str {
        match self {
            RuleOp::Eq => "=",
            RuleOp::Ne => "!=",
            RuleOp::Le => "<=",
            RuleOp::Gt => ">",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulePredicate {
    pub attribute: String,
    pub op: RuleOp,
    /// Category label, or the threshold rendered in original units.
    pub value: String,
    /// Threshold in original units for continuous predicates.
    pub threshold: Option<f64>,
}

impl std::fmt::Display for RulePredicate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {} {}", self.attribute, self.op.symbol(), self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub predicates: Vec<RulePredicate>,
    /// `true` for the discriminated group.
    pub member: bool,
    pub support: usize,
    pub fav_rate: f64,
    pub member_rate: f64,
}

impl Rule {
    /// Evaluate the conjunction on row `i` of `data`, in original units.
    pub fn matches(&self, data: &Dataset, i: usize) -> bool {
        self.predicates.iter().all(|p| {
            let Some(a) = data.attribute_index(&p.attribute) else {
                return false;
            };
            let v = data.rows()[i][a];
            match (p.op, v) {
                (RuleOp::Eq, Value::Cat(_)) => data.display_value(a, v) == p.value,
                (RuleOp::Ne, Value::Cat(_)) => data.display_value(a, v) != p.value,
                (RuleOp::Le, Value::Num(x)) => x <= p.threshold.unwrap_or(f64::NAN),
                (RuleOp::Gt, Value::Num(x)) => x > p.threshold.unwrap_or(f64::NAN),
                _ => false,
            }
        })
    }
}

impl std::fmt::Display for Rule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let cond = if self.predicates.is_empty() {
            "(all rows)".to_string()
        } else {
            self.predicates
                .iter()
                .map(|p| p.to_string())
                .collect::<Vec<_>>()
                .join(" AND ")
        };
        write!(
            f,
            "IF {cond} THEN {} [support {}, favorable rate {:.4}]",
            if self.member {
                "discriminated"
            } else {
                "not discriminated"
            },
            self.support,
            self.fav_rate
        )
    }
}

/// Render the test at a split node, for the `<=` (left) or `>` (right) branch.
pub fn branch_predicate(info: &ColumnInfo, threshold: f64, right: bool) -> RulePredicate {
    match &info.source {
        ColumnSource::OneHot { label, .. } => RulePredicate {
            attribute: info.attribute_name.clone(),
            op: if right { RuleOp::Eq } else { RuleOp::Ne },
            value: label.clone(),
            threshold: None,
        },
        ColumnSource::Continuous { mean, std } => {
            let t = threshold * std + mean;
            RulePredicate {
                attribute: info.attribute_name.clone(),
                op: if right { RuleOp::Gt } else { RuleOp::Le },
                value: format_number(t),
                threshold: Some(t),
            }
        }
        ColumnSource::Intercept => RulePredicate {
            attribute: info.attribute_name.clone(),
            op: if right { RuleOp::Gt } else { RuleOp::Le },
            value: format_number(threshold),
            threshold: Some(threshold),
        },
    }
}

/// Drop predicates implied by others on the same path: `!=` after an `=` on
/// the same attribute, and all but the tightest bound per direction.
fn simplify(preds: Vec<RulePredicate>) -> Vec<RulePredicate> {
    let mut out: Vec<RulePredicate> = Vec::new();
    for p in preds {
        let has_eq = |out: &[RulePredicate], a: &str| {
            out.iter().any(|q| q.attribute == a && q.op == RuleOp::Eq)
        };
        match p.op {
            RuleOp::Eq => {
                out.retain(|q| !(q.attribute == p.attribute && q.op == RuleOp::Ne));
                out.push(p);
            }
            RuleOp::Ne => {
                if !has_eq(&out, &p.attribute) {
                    out.push(p);
                }
            }
            RuleOp::Le | RuleOp::Gt => {
                let t = p.threshold.unwrap_or(f64::NAN);
                if let Some(q) = out
                    .iter_mut()
                    .find(|q| q.attribute == p.attribute && q.op == p.op)
                {
                    let qt = q.threshold.unwrap_or(f64::NAN);
                    let tighter = if p.op == RuleOp::Le { t < qt } else { t > qt };
                    if tighter {
                        *q = p;
                    }
                } else {
                    out.push(p);
                }
            }
        }
    }
    out
}

/// One rule per leaf, in left-to-right leaf order.
pub fn extract_rules(tree: &Tree, colmap: &[ColumnInfo]) -> Vec<Rule> {
    let mut rules = Vec::new();
    fn walk(
        tree: &Tree,
        i: usize,
        colmap: &[ColumnInfo],
        path: &mut Vec<RulePredicate>,
        out: &mut Vec<Rule>,
    ) {
        let node = tree.node(i);
        match node.kind {
            NodeKind::Leaf => out.push(Rule {
                predicates: simplify(path.clone()),
                member: node.stats.label(),
                support: node.stats.count,
                fav_rate: node.stats.fav_rate(),
                member_rate: node.stats.member_rate(),
            }),
            NodeKind::Split {
                column,
                threshold,
                left,
                right,
            } => {
                path.push(branch_predicate(&colmap[column], threshold, false));
                walk(tree, left, colmap, path, out);
                path.pop();
                path.push(branch_predicate(&colmap[column], threshold, true));
                walk(tree, right, colmap, path, out);
                path.pop();
            }
        }
    }
    walk(tree, 0, colmap, &mut Vec::new(), &mut rules);
    rules
}

/// Distilled evidence: the pruned tree and the group it predicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedTree {
    pub tree: Tree,
    /// Encoded columns the tree splits on (key-attribute columns only).
    pub colmap: Vec<ColumnInfo>,
    /// Cost-complexity level at which this tree appears in the sequence.
    pub psi: f64,
    pub members_prime: Vec<bool>,
    pub dscore_prime: Option<f64>,
    pub size_ratio: f64,
    pub constraint_ok: bool,
    pub rules: Vec<Rule>,
}

impl PrunedTree {
    pub fn depth(&self) -> usize {
        self.tree.depth()
    }
}

pub fn default_min_leaf(n: usize) -> usize {
    (n / 200).max(5)
}

/// Fit, prune until just before the size constraint breaks, extract rules.
pub fn translate(
    fav: &[bool],
    fm: &FeatureMatrix,
    evidence: &Evidence,
    obj: &ObjectiveConfig,
    min_leaf: usize,
) -> Result<PrunedTree> {
    if evidence.key_attribute_indices.is_empty() {
        return Err(Error::NoKeyAttributes);
    }
    if evidence.dscore.is_none() {
        return Err(Error::Precondition(
            "evidence group or its complement is empty".into(),
        ));
    }
    let fm_q = fm.restrict(&evidence.key_attribute_indices);
    let full = fit_tree_with(&fm_q, &evidence.members, fav, min_leaf, obj.exec)?;
    let n = fm.n();
    let check = |tree: &Tree| {
        let members = tree.predict(&fm_q);
        let size = members.iter().filter(|&&m| m).count();
        let ratio = size as f64 / n as f64;
        let ok = size > 0 && size < n && obj.size_ok(ratio);
        (members, ratio, ok)
    };

    let seq = ccp_sequence(&full);
    let mut chosen: Option<(f64, Tree, Vec<bool>, f64)> = None;
    for (psi, tree) in seq.iter().cloned() {
        let (members, ratio, ok) = check(&tree);
        if !ok {
            break;
        }
        chosen = Some((psi, tree, members, ratio));
    }
    let (psi, tree, members, ratio, ok) = match chosen {
        Some((psi, tree, members, ratio)) => (psi, tree, members, ratio, true),
        None => {
            let (psi, first) = seq.into_iter().next().expect("sequence is never empty");
            let (members, ratio, _) = check(&first);
            (psi, first, members, ratio, false)
        }
    };
    let rules = extract_rules(&tree, fm_q.colmap());
    Ok(PrunedTree {
        dscore_prime: dscore_hard(fav, &members).ok(),
        tree,
        colmap: fm_q.colmap().to_vec(),
        psi,
        members_prime: members,
        size_ratio: ratio,
        constraint_ok: ok,
        rules,
    })
}
