//! Exact maximization of a tree ensemble over a box of categorical variables.
//!
//! The search is a depth-first branch-and-bound that fixes the free variables
//! in index order (see `search`). A first pass visits the most promising
//! category first and finds the optimal value; a second pass walks the box in
//! lexicographic order and stops at the first point reaching it.
//!
//! Results are exact and deterministic: among all maximizers the
//! lexicographically smallest assignment is returned, and its value is
//! computed with [`TreeEnsemble::predict`] so it is bit-identical to
//! [`brute_force_maximize`].

mod mio;
mod search;

pub use mio::{encode_mio, LinearConstraint, MioProgram, MioVar, Sense};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::catset::CategorySet;
use crate::error::{invalid, Error, Result};
use crate::gbt::{Node, Tree, TreeEnsemble};

/// Default limit on the number of points [`brute_force_maximize`] visits.
pub const ENUMERATION_CAP: u128 = 10_000_000;

/// One allowed category set per feature. Singleton sets are fixed variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableDomain {
    allowed: Vec<CategorySet>,
}

impl VariableDomain {
    pub fn new(domain_sizes: &[usize], allowed: Vec<CategorySet>) -> Result<Self> {
        if allowed.len() != domain_sizes.len() {
            return Err(invalid(format!(
                "domain covers {} variables, expected {}",
                allowed.len(),
                domain_sizes.len()
            )));
        }
        for (j, (set, &k)) in allowed.iter().zip(domain_sizes).enumerate() {
            if set.universe() != k {
                return Err(invalid(format!("variable {j}: allowed set has universe {}, expected {k}", set.universe())));
            }
            if set.is_empty() {
                return Err(invalid(format!("variable {j} has an empty allowed set")));
            }
        }
        Ok(VariableDomain { allowed })
    }

    /// Every variable ranges over its full domain.
    pub fn full(domain_sizes: &[usize]) -> Self {
        VariableDomain {
            allowed: domain_sizes.iter().map(|&k| CategorySet::full(k)).collect(),
        }
    }

    /// All variables fixed to `point`.
    pub fn point(domain_sizes: &[usize], point: &[usize]) -> Result<Self> {
        crate::gbt::check_features(domain_sizes, point)?;
        Ok(VariableDomain {
            allowed: point
                .iter()
                .zip(domain_sizes)
                .map(|(&c, &k)| CategorySet::singleton(k, c))
                .collect(),
        })
    }

    /// Variables listed in `free` range over their full domain; all others
    /// are fixed to the corresponding entry of `anchor`.
    pub fn trust_region(domain_sizes: &[usize], anchor: &[usize], free: &[usize]) -> Result<Self> {
        let mut dom = Self::point(domain_sizes, anchor)?;
        for &j in free {
            if j >= domain_sizes.len() {
                return Err(invalid(format!("free variable {j} out of range")));
            }
            dom.allowed[j] = CategorySet::full(domain_sizes[j]);
        }
        Ok(dom)
    }

    pub fn allowed(&self) -> &[CategorySet] {
        &self.allowed
    }

    pub fn num_variables(&self) -> usize {
        self.allowed.len()
    }

    /// Indices of variables with more than one allowed category.
    pub fn free_variables(&self) -> Vec<usize> {
        (0..self.allowed.len()).filter(|&j| self.allowed[j].len() > 1).collect()
    }

    /// Number of points in the box.
    pub fn size(&self) -> u128 {
        self.allowed
            .iter()
            .fold(1u128, |acc, s| acc.saturating_mul(s.len() as u128))
    }

    pub fn contains(&self, x: &[usize]) -> bool {
        x.len() == self.allowed.len() && x.iter().zip(&self.allowed).all(|(&c, s)| s.contains(c))
    }

    /// The lexicographically smallest point of the box.
    pub fn lex_min(&self) -> Vec<usize> {
        self.allowed.iter().map(|s| s.first().expect("non-empty")).collect()
    }
}

fn check_domain(m: &TreeEnsemble, dom: &VariableDomain) -> Result<()> {
    let ks = m.domain_sizes();
    if dom.allowed.len() != ks.len() || dom.allowed.iter().zip(ks).any(|(s, &k)| s.universe() != k) {
        return Err(invalid("variable domain does not match the ensemble's features"));
    }
    Ok(())
}

/// A leaf together with the per-feature category sets its path requires.
#[derive(Debug, Clone)]
pub(crate) struct LeafPath {
    pub ordinal: usize,
    pub value: f64,
    /// Sorted by feature, one entry per feature tested on the path.
    pub constraints: Vec<(usize, CategorySet)>,
}

pub(crate) fn leaf_paths(tree: &Tree) -> Vec<LeafPath> {
    fn go(
        nodes: &[Node],
        i: usize,
        path: &mut Vec<(usize, CategorySet)>,
        out: &mut Vec<LeafPath>,
    ) {
        match &nodes[i] {
            Node::Leaf { value, .. } => {
                let mut constraints: Vec<(usize, CategorySet)> = Vec::new();
                for (f, set) in path.iter() {
                    match constraints.iter_mut().find(|(g, _)| g == f) {
                        Some((_, acc)) => *acc = acc.intersection(set),
                        None => constraints.push((*f, set.clone())),
                    }
                }
                constraints.sort_by_key(|(f, _)| *f);
                out.push(LeafPath {
                    ordinal: out.len(),
                    value: *value,
                    constraints,
                });
            }
            Node::Split {
                feature,
                left_categories,
                left,
                right,
                ..
            } => {
                path.push((*feature, left_categories.clone()));
                go(nodes, *left, path, out);
                path.pop();
                path.push((*feature, left_categories.complement()));
                go(nodes, *right, path, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(tree.nodes(), 0, &mut Vec::new(), &mut out);
    out
}

fn path_reachable(path: &LeafPath, dom: &VariableDomain) -> bool {
    path.constraints.iter().all(|(f, set)| dom.allowed[*f].intersects(set))
}

/// Pre-order node indices of the leaves of `tree` that some point of `dom`
/// is routed to.
pub fn reachable_leaves(tree: &Tree, dom: &VariableDomain) -> Vec<usize> {
    fn go(nodes: &[Node], i: usize, dom: &VariableDomain, out: &mut Vec<usize>) {
        match &nodes[i] {
            Node::Leaf { .. } => out.push(i),
            Node::Split {
                feature,
                left_categories,
                left,
                right,
                ..
            } => {
                let allowed = &dom.allowed[*feature];
                if allowed.intersects(left_categories) {
                    go(nodes, *left, dom, out);
                }
                if !allowed.is_subset(left_categories) {
                    go(nodes, *right, dom, out);
                }
            }
        }
    }
    let mut out = Vec::new();
    go(tree.nodes(), 0, dom, &mut out);
    out
}

/// Base score plus the best reachable leaf of every tree, summed in tree
/// order. Never below the ensemble's maximum over `dom`, and equal to
/// `predict` when every variable is fixed.
pub fn upper_bound(m: &TreeEnsemble, dom: &VariableDomain) -> Result<f64> {
    check_domain(m, dom)?;
    let mut acc = m.base_score();
    for tree in m.trees() {
        let best = reachable_leaves(tree, dom)
            .into_iter()
            .map(|i| match tree.nodes()[i] {
                Node::Leaf { value, .. } => value,
                Node::Split { .. } => unreachable!(),
            })
            .fold(f64::NEG_INFINITY, f64::max);
        acc += best;
    }
    Ok(acc)
}

/// A maximizing assignment and its predicted value.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub assignment: Vec<usize>,
    pub value: f64,
    /// Search nodes visited.
    pub nodes_explored: usize,
}

/// Exhaustive scan in lexicographic order; the first maximizer wins.
pub fn brute_force_maximize(m: &TreeEnsemble, dom: &VariableDomain) -> Result<Solution> {
    brute_force_maximize_capped(m, dom, ENUMERATION_CAP)
}

pub fn brute_force_maximize_capped(m: &TreeEnsemble, dom: &VariableDomain, cap: u128) -> Result<Solution> {
    check_domain(m, dom)?;
    let size = dom.size();
    if size > cap {
        return Err(Error::EnumerationCap { size, cap });
    }
    let lists: Vec<Vec<usize>> = dom.allowed.iter().map(|s| s.to_vec()).collect();
    let mut idx = vec![0usize; lists.len()];
    let mut x: Vec<usize> = lists.iter().map(|l| l[0]).collect();
    let mut best_x = x.clone();
    let mut best = m.predict_unchecked(&x);
    let mut visited = 1usize;
    'outer: loop {
        // odometer, last variable fastest
        let mut j = lists.len();
        loop {
            if j == 0 {
                break 'outer;
            }
            j -= 1;
            idx[j] += 1;
            if idx[j] < lists[j].len() {
                x[j] = lists[j][idx[j]];
                break;
            }
            idx[j] = 0;
            x[j] = lists[j][0];
        }
        visited += 1;
        let v = m.predict_unchecked(&x);
        if v > best {
            best = v;
            best_x.copy_from_slice(&x);
        }
    }
    Ok(Solution {
        assignment: best_x,
        value: best,
        nodes_explored: visited,
    })
}

/// Exact global maximum of the ensemble's prediction over `dom`.
pub fn maximize(m: &TreeEnsemble, dom: &VariableDomain) -> Result<Solution> {
    check_domain(m, dom)?;
    Ok(search::Search::new(m, dom).run())
}
