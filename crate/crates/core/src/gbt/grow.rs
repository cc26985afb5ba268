//! Single-tree growth: best-first leaf expansion with exact categorical splits.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::{CategoricalDataset, GbtConfig, Node, Tree};
use crate::catset::CategorySet;

/// Splits must reduce the node's centered sum of squares by at least this
/// fraction; anything smaller is floating-point noise. Nodes whose centered
/// sum of squares is itself at rounding level are not split at all.
const MIN_RELATIVE_GAIN: f64 = 1e-12;

/// Column-major copy of the feature matrix.
pub(super) struct Columns {
    cols: Vec<Vec<u32>>,
    domain_sizes: Vec<usize>,
}

impl Columns {
    pub(super) fn new(data: &CategoricalDataset) -> Self {
        let cols = (0..data.num_features())
            .map(|j| data.rows().iter().map(|r| r[j] as u32).collect())
            .collect();
        Columns {
            cols,
            domain_sizes: data.domain_sizes().to_vec(),
        }
    }
}

struct SplitChoice {
    feature: usize,
    left: CategorySet,
    gain: f64,
}

enum GrowNode {
    Leaf {
        rows: Vec<usize>,
        depth: usize,
        best: Option<SplitChoice>,
    },
    Split {
        feature: usize,
        left_set: CategorySet,
        gain: f64,
        left: usize,
        right: usize,
    },
}

/// Grows one tree on `residuals` and returns it in pre-order together with the
/// training rows routed to each leaf (keyed by pre-order node index).
pub(super) fn grow_tree(
    columns: &Columns,
    residuals: &[f64],
    cfg: &GbtConfig,
) -> (Tree, Vec<(usize, Vec<usize>)>) {
    let all_rows: Vec<usize> = (0..residuals.len()).collect();
    let root_best = if cfg.interaction_depth > 0 {
        best_split(columns, residuals, &all_rows, cfg)
    } else {
        None
    };
    let mut arena = vec![GrowNode::Leaf {
        rows: all_rows,
        depth: 0,
        best: root_best,
    }];
    let mut leaves = 1;

    while leaves < cfg.max_leaves {
        let mut pick: Option<(usize, f64)> = None;
        for (i, node) in arena.iter().enumerate() {
            if let GrowNode::Leaf { best: Some(b), .. } = node {
                if pick.is_none_or(|(_, g)| b.gain > g) {
                    pick = Some((i, b.gain));
                }
            }
        }
        let Some((i, _)) = pick else { break };
        let placeholder = GrowNode::Split {
            feature: 0,
            left_set: CategorySet::empty(0),
            gain: 0.0,
            left: 0,
            right: 0,
        };
        let GrowNode::Leaf { rows, depth, best } = core::mem::replace(&mut arena[i], placeholder) else {
            unreachable!()
        };
        let choice = best.expect("picked leaf has a split");
        let col = &columns.cols[choice.feature];
        let (lrows, rrows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| choice.left.contains(col[r] as usize));
        debug_assert!(lrows.len() >= cfg.min_samples_leaf && rrows.len() >= cfg.min_samples_leaf);
        let child_depth = depth + 1;
        let make_child = |rows: Vec<usize>| {
            let best = if child_depth < cfg.interaction_depth {
                best_split(columns, residuals, &rows, cfg)
            } else {
                None
            };
            GrowNode::Leaf {
                rows,
                depth: child_depth,
                best,
            }
        };
        let left_node = make_child(lrows);
        let right_node = make_child(rrows);
        let left = arena.len();
        arena.push(left_node);
        arena.push(right_node);
        arena[i] = GrowNode::Split {
            feature: choice.feature,
            left_set: choice.left,
            gain: choice.gain,
            left,
            right: left + 1,
        };
        leaves += 1;
    }

    let has_splits = arena.len() > 1;
    let mut nodes = Vec::with_capacity(arena.len());
    let mut assignments = Vec::with_capacity(leaves);
    emit_preorder(&arena, 0, residuals, cfg.shrinkage, has_splits, &mut nodes, &mut assignments);
    let tree = Tree::from_nodes_unchecked(nodes);
    debug_assert!(tree.num_leaves() <= cfg.max_leaves);
    debug_assert!(tree.depth() <= cfg.interaction_depth);
    (tree, assignments)
}

fn emit_preorder(
    arena: &[GrowNode],
    i: usize,
    residuals: &[f64],
    shrinkage: f64,
    has_splits: bool,
    out: &mut Vec<Node>,
    assignments: &mut Vec<(usize, Vec<usize>)>,
) -> usize {
    let at = out.len();
    match &arena[i] {
        GrowNode::Leaf { rows, .. } => {
            let value = if has_splits {
                let sum: f64 = rows.iter().map(|&r| residuals[r]).sum();
                shrinkage * (sum / rows.len() as f64)
            } else {
                0.0
            };
            out.push(Node::Leaf {
                value,
                samples: rows.len(),
            });
            assignments.push((at, rows.clone()));
        }
        GrowNode::Split {
            feature,
            left_set,
            gain,
            left,
            right,
        } => {
            out.push(Node::Split {
                feature: *feature,
                left_categories: left_set.clone(),
                gain: *gain,
                left: 0,
                right: 0,
            });
            let l = emit_preorder(arena, *left, residuals, shrinkage, has_splits, out, assignments);
            let r = emit_preorder(arena, *right, residuals, shrinkage, has_splits, out, assignments);
            if let Node::Split { left, right, .. } = &mut out[at] {
                *left = l;
                *right = r;
            }
        }
    }
    at
}

/// Exact best binary partition for squared error. For each feature the
/// categories present at the node are ordered by mean residual (ties by
/// category index) and every proper prefix is tried as the left set; absent
/// categories always fall on the right.
///
/// Ties in gain go to the lowest feature, then to the lexicographically
/// smallest left set.
fn best_split(columns: &Columns, residuals: &[f64], rows: &[usize], cfg: &GbtConfig) -> Option<SplitChoice> {
    let n = rows.len();
    let msl = cfg.min_samples_leaf;
    if n < 2 * msl {
        return None;
    }
    let total: f64 = rows.iter().map(|&r| residuals[r]).sum();
    let sumsq: f64 = rows.iter().map(|&r| residuals[r] * residuals[r]).sum();
    let parent = total * total / n as f64;
    let centered = sumsq - parent;
    if centered <= 1e-10 * sumsq {
        return None;
    }
    let min_gain = MIN_RELATIVE_GAIN * centered;

    let mut best: Option<(SplitChoice, Vec<usize>)> = None;
    let mut sums = Vec::new();
    let mut counts = Vec::new();
    for (feature, col) in columns.cols.iter().enumerate() {
        let k = columns.domain_sizes[feature];
        sums.clear();
        sums.resize(k, 0.0);
        counts.clear();
        counts.resize(k, 0usize);
        for &r in rows {
            let c = col[r] as usize;
            sums[c] += residuals[r];
            counts[c] += 1;
        }
        let mut present: Vec<usize> = (0..k).filter(|&c| counts[c] > 0).collect();
        if present.len() < 2 {
            continue;
        }
        present.sort_by(|&a, &b| {
            let ma = sums[a] / counts[a] as f64;
            let mb = sums[b] / counts[b] as f64;
            ma.total_cmp(&mb).then(a.cmp(&b))
        });

        let mut left_sum = 0.0;
        let mut left_n = 0usize;
        for j in 0..present.len() - 1 {
            let c = present[j];
            left_sum += sums[c];
            left_n += counts[c];
            let right_n = n - left_n;
            if left_n < msl || right_n < msl {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / left_n as f64 + right_sum * right_sum / right_n as f64 - parent;
            if gain.is_nan() || gain <= min_gain {
                continue;
            }
            let better = match &best {
                None => true,
                Some((b, blist)) => match gain.partial_cmp(&b.gain) {
                    Some(Ordering::Greater) => true,
                    Some(Ordering::Equal) if b.feature == feature => {
                        let mut cand: Vec<usize> = present[..=j].to_vec();
                        cand.sort_unstable();
                        cand < *blist
                    }
                    _ => false,
                },
            };
            if better {
                let mut list: Vec<usize> = present[..=j].to_vec();
                list.sort_unstable();
                let left = CategorySet::from_indices(k, list.iter().copied());
                best = Some((SplitChoice { feature, left, gain }, list));
            }
        }
    }
    best.map(|(b, _)| b)
}
