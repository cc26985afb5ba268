//! Depth-first branch and bound that fixes the free variables one at a time,
//! in index order.
//!
//! Trees are grouped by the free variables they read into dense tables over
//! the allowed categories. For every table we keep its max-marginals over each
//! prefix of its scope; because variables are fixed in scope order, the bound
//! of a partial assignment is one lookup per table. Trees whose scope is too
//! large for a table keep their reachable leaves instead.

use alloc::vec;
use alloc::vec::Vec;

use super::{leaf_paths, path_reachable, Solution, VariableDomain};
use crate::catset::CategorySet;
use crate::gbt::TreeEnsemble;

/// Largest dense table, in cells.
const TABLE_LIMIT: usize = 1 << 16;

struct Table {
    /// Free positions, ascending.
    scope: Vec<usize>,
    dims: Vec<usize>,
    /// `levels[k]` holds the max over scope variables `k..` for each setting
    /// of the first `k`; the last level is the table itself.
    levels: Vec<Vec<f64>>,
}

type Leaf = (f64, Vec<(usize, CategorySet)>);

enum Factor {
    Table(Table),
    /// Reachable leaves, constraints keyed by free position.
    Leaves(Vec<Leaf>),
}

/// Calls `f(offset, local indices)` for every cell of the product of `lists`,
/// with `offset` computed against `dims` (row-major, last fastest).
fn for_each_cell(lists: &[Vec<usize>], dims: &[usize], mut f: impl FnMut(usize, &[usize])) {
    if lists.iter().any(|l| l.is_empty()) {
        return;
    }
    let mut idx = vec![0usize; lists.len()];
    let mut cell = vec![0usize; lists.len()];
    loop {
        let mut off = 0;
        for (i, l) in lists.iter().enumerate() {
            cell[i] = l[idx[i]];
            off = off * dims[i] + cell[i];
        }
        f(off, &cell);
        let mut i = lists.len();
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            idx[i] += 1;
            if idx[i] < lists[i].len() {
                break;
            }
            idx[i] = 0;
        }
    }
}

pub(super) struct Search<'a> {
    ensemble: &'a TreeEnsemble,
    free: Vec<usize>,
    /// Allowed categories per free position.
    cats: Vec<Vec<usize>>,
    template: Vec<usize>,
    constant: f64,
    factors: Vec<Factor>,
    /// `(factor, index in its scope)` for every factor reading a position.
    touching: Vec<Vec<(usize, usize)>>,
    slack: f64,
    // search state
    assign: Vec<usize>,
    offset: Vec<usize>,
    current: Vec<f64>,
    undo: Vec<(usize, usize, f64)>,
    deltas: Vec<Vec<f64>>,
    explored: usize,
}

impl<'a> Search<'a> {
    pub(super) fn new(m: &'a TreeEnsemble, dom: &VariableDomain) -> Self {
        let free = dom.free_variables();
        let mut position = vec![usize::MAX; dom.num_variables()];
        for (p, &j) in free.iter().enumerate() {
            position[j] = p;
        }
        let cats: Vec<Vec<usize>> = free.iter().map(|&j| dom.allowed()[j].to_vec()).collect();
        let mut constant = m.base_score();
        let mut magnitude = m.base_score().abs();
        let mut tables: Vec<(Vec<usize>, Vec<f64>)> = Vec::new();
        let mut lists: Vec<Vec<Leaf>> = Vec::new();
        for tree in m.trees() {
            let reachable: Vec<Leaf> = leaf_paths(tree)
                .into_iter()
                .filter(|p| path_reachable(p, dom))
                .map(|p| {
                    let cons = p
                        .constraints
                        .into_iter()
                        .filter(|(f, _)| position[*f] != usize::MAX)
                        .map(|(f, set)| (position[f], set))
                        .collect();
                    (p.value, cons)
                })
                .collect();
            magnitude += reachable.iter().map(|l| l.0.abs()).fold(0.0, f64::max);
            if reachable.len() == 1 {
                constant += reachable[0].0;
                continue;
            }
            let mut scope: Vec<usize> = reachable.iter().flat_map(|l| l.1.iter().map(|c| c.0)).collect();
            scope.sort_unstable();
            scope.dedup();
            let dims: Vec<usize> = scope.iter().map(|&p| cats[p].len()).collect();
            match dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)) {
                Some(size) if size <= TABLE_LIMIT => {
                    let slot = match tables.iter().position(|t| t.0 == scope) {
                        Some(s) => s,
                        None => {
                            tables.push((scope.clone(), vec![0.0; size]));
                            tables.len() - 1
                        }
                    };
                    let values = &mut tables[slot].1;
                    for (value, cons) in &reachable {
                        let allowed: Vec<Vec<usize>> = scope
                            .iter()
                            .map(|&p| match cons.iter().find(|c| c.0 == p) {
                                Some((_, set)) => (0..cats[p].len()).filter(|&i| set.contains(cats[p][i])).collect(),
                                None => (0..cats[p].len()).collect(),
                            })
                            .collect();
                        for_each_cell(&allowed, &dims, |off, _| values[off] += *value);
                    }
                }
                _ => lists.push(reachable),
            }
        }

        // Fold every table into a larger one covering its scope: fewer,
        // wider factors give a tighter bound.
        tables.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        let mut merged: Vec<(Vec<usize>, Vec<f64>)> = Vec::new();
        for (scope, values) in tables {
            let host = merged
                .iter_mut()
                .find(|(s, _)| scope.iter().all(|p| s.binary_search(p).is_ok()));
            match host {
                Some((s, v)) => {
                    let dims: Vec<usize> = s.iter().map(|&p| cats[p].len()).collect();
                    let full: Vec<Vec<usize>> = dims.iter().map(|&d| (0..d).collect()).collect();
                    let at: Vec<usize> = scope.iter().map(|p| s.binary_search(p).expect("subset")).collect();
                    for_each_cell(&full, &dims, |off, cell| {
                        let small = at.iter().fold(0, |acc, &k| acc * dims[k] + cell[k]);
                        v[off] += values[small];
                    });
                }
                None => merged.push((scope, values)),
            }
        }

        let mut factors: Vec<Factor> = merged
            .into_iter()
            .map(|(scope, values)| {
                let dims: Vec<usize> = scope.iter().map(|&p| cats[p].len()).collect();
                let mut levels = vec![values];
                for &d in dims.iter().rev() {
                    let next: Vec<f64> = levels
                        .last()
                        .expect("non-empty")
                        .chunks(d)
                        .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                        .collect();
                    levels.push(next);
                }
                levels.reverse();
                Factor::Table(Table { scope, dims, levels })
            })
            .collect();
        factors.extend(lists.into_iter().map(Factor::Leaves));

        let mut touching = vec![Vec::new(); free.len()];
        for (f, factor) in factors.iter().enumerate() {
            match factor {
                Factor::Table(t) => {
                    for (k, &p) in t.scope.iter().enumerate() {
                        touching[p].push((f, k));
                    }
                }
                Factor::Leaves(leaves) => {
                    let mut scope: Vec<usize> = leaves.iter().flat_map(|l| l.1.iter().map(|c| c.0)).collect();
                    scope.sort_unstable();
                    scope.dedup();
                    for p in scope {
                        touching[p].push((f, 0));
                    }
                }
            }
        }
        let current: Vec<f64> = factors
            .iter()
            .map(|f| match f {
                Factor::Table(t) => t.levels[0][0],
                Factor::Leaves(l) => l.iter().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max),
            })
            .collect();

        // Bounds are accumulated in a different order than `predict`, partly
        // through running differences; this covers the rounding gap.
        let terms = m.trees().len() + factors.len() * (free.len() + 1) + 2;
        let slack = 4.0 * terms as f64 * f64::EPSILON * magnitude;
        let n = free.len();
        Search {
            ensemble: m,
            template: dom.lex_min(),
            deltas: cats.iter().map(|c| vec![0.0; c.len()]).collect(),
            free,
            cats,
            constant,
            offset: vec![0; factors.len()],
            current,
            factors,
            touching,
            slack,
            assign: vec![0; n],
            undo: Vec::new(),
            explored: 0,
        }
    }

    fn leaves_max(&self, leaves: &[Leaf], p: usize, i: usize) -> f64 {
        leaves
            .iter()
            .filter(|(_, cons)| {
                cons.iter().all(|(q, set)| match (*q).cmp(&p) {
                    core::cmp::Ordering::Less => set.contains(self.cats[*q][self.assign[*q]]),
                    core::cmp::Ordering::Equal => set.contains(self.cats[p][i]),
                    core::cmp::Ordering::Greater => true,
                })
            })
            .map(|l| l.0)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Contribution of factor `f` once position `p` (its `k`-th scope
    /// variable) takes local index `i`.
    fn after(&self, f: usize, k: usize, p: usize, i: usize) -> (usize, f64) {
        match &self.factors[f] {
            Factor::Table(t) => {
                let off = self.offset[f] * t.dims[k] + i;
                (off, t.levels[k + 1][off])
            }
            Factor::Leaves(leaves) => (0, self.leaves_max(leaves, p, i)),
        }
    }

    /// Fills `deltas[p]` with the change of the bound for each category.
    fn compute_deltas(&mut self, p: usize) {
        let mut d = core::mem::take(&mut self.deltas[p]);
        for (i, slot) in d.iter_mut().enumerate() {
            *slot = self.touching[p]
                .iter()
                .map(|&(f, k)| self.after(f, k, p, i).1 - self.current[f])
                .sum();
        }
        self.deltas[p] = d;
    }

    fn fix(&mut self, p: usize, i: usize) {
        self.assign[p] = i;
        for t in 0..self.touching[p].len() {
            let (f, k) = self.touching[p][t];
            let (off, v) = self.after(f, k, p, i);
            self.undo.push((f, self.offset[f], self.current[f]));
            self.offset[f] = off;
            self.current[f] = v;
        }
    }

    fn unfix(&mut self, p: usize) {
        for _ in 0..self.touching[p].len() {
            let (f, off, v) = self.undo.pop().expect("balanced");
            self.offset[f] = off;
            self.current[f] = v;
        }
    }

    fn point(&self) -> Vec<usize> {
        let mut x = self.template.clone();
        for (p, &j) in self.free.iter().enumerate() {
            x[j] = self.cats[p][self.assign[p]];
        }
        x
    }

    /// Best-child-first descent for the optimal value. Boxes that cannot beat
    /// the incumbent by more than rounding are dropped.
    fn best(&mut self, depth: usize, bound: f64, inc: &mut Option<(Vec<usize>, f64)>) {
        self.explored += 1;
        if depth == self.free.len() {
            let x = self.point();
            let v = self.ensemble.predict_unchecked(&x);
            if inc.as_ref().is_none_or(|(_, w)| v > *w) {
                *inc = Some((x, v));
            }
            return;
        }
        self.compute_deltas(depth);
        let mut order: Vec<(f64, usize)> = self.deltas[depth].iter().enumerate().map(|(i, d)| (bound + d, i)).collect();
        order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (b, i) in order {
            if let Some((_, w)) = inc {
                if b <= *w + self.slack {
                    break;
                }
            }
            self.fix(depth, i);
            self.best(depth + 1, b, inc);
            self.unfix(depth);
        }
    }

    /// Lexicographic descent for the first point reaching `target`.
    fn first_reaching(&mut self, depth: usize, bound: f64, target: f64) -> Option<(Vec<usize>, f64)> {
        self.explored += 1;
        if depth == self.free.len() {
            let x = self.point();
            let v = self.ensemble.predict_unchecked(&x);
            return (v >= target).then_some((x, v));
        }
        self.compute_deltas(depth);
        for i in 0..self.cats[depth].len() {
            let b = bound + self.deltas[depth][i];
            if b + self.slack < target {
                continue;
            }
            self.fix(depth, i);
            let found = self.first_reaching(depth + 1, b, target);
            self.unfix(depth);
            if found.is_some() {
                return found;
            }
        }
        None
    }

    pub(super) fn run(mut self) -> Solution {
        let root = self.constant + self.current.iter().sum::<f64>();
        let mut inc = None;
        self.best(0, root, &mut inc);
        let (x, v) = inc.expect("the first descent reaches a point");
        let (assignment, value) = self.first_reaching(0, root, v).unwrap_or((x, v));
        Solution {
            assignment,
            value,
            nodes_explored: self.explored,
        }
    }
}
