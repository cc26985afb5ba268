//! Mixed-integer encoding of the ensemble maximization and its LP-format text.
//!
//! Binary `x_j_c` selects category `c` for free variable `j`; binary `y_t_l`
//! selects leaf `l` (pre-order leaf ordinal) of tree `t`. Each free variable
//! takes exactly one category, each tree selects exactly one leaf, and a leaf
//! may only be selected if, for every free variable its path tests, the chosen
//! category lies in the path's allowed set. Fixed variables are substituted
//! out, so trees that route a fixed box to a single leaf become constants.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::{self, Write};

use super::{check_domain, leaf_paths, path_reachable, VariableDomain};
use crate::error::Result;
use crate::gbt::TreeEnsemble;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MioVar {
    /// Free variable `feature` takes `category`.
    Assign { feature: usize, category: usize },
    /// Tree `tree` routes to its `leaf`-th leaf.
    Leaf { tree: usize, leaf: usize },
}

impl fmt::Display for MioVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MioVar::Assign { feature, category } => write!(f, "x_{feature}_{category}"),
            MioVar::Leaf { tree, leaf } => write!(f, "y_{tree}_{leaf}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Eq,
    Le,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub name: String,
    pub terms: Vec<(MioVar, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// Maximize `objective_constant + sum(coef * var)` over binary variables.
#[derive(Debug, Clone, PartialEq)]
pub struct MioProgram {
    pub objective_constant: f64,
    pub objective: Vec<(MioVar, f64)>,
    pub constraints: Vec<LinearConstraint>,
    pub binaries: Vec<MioVar>,
}

impl MioProgram {
    pub fn build(m: &TreeEnsemble, dom: &VariableDomain) -> Result<Self> {
        check_domain(m, dom)?;
        let free = dom.free_variables();
        let is_free = |j: usize| dom.allowed()[j].len() > 1;

        let mut binaries = Vec::new();
        let mut constraints = Vec::new();
        for &j in &free {
            let terms: Vec<(MioVar, f64)> = dom.allowed()[j]
                .iter()
                .map(|c| (MioVar::Assign { feature: j, category: c }, 1.0))
                .collect();
            binaries.extend(terms.iter().map(|(v, _)| *v));
            constraints.push(LinearConstraint {
                name: format!("assign_{j}"),
                terms,
                sense: Sense::Eq,
                rhs: 1.0,
            });
        }

        let mut constant = m.base_score();
        let mut objective = Vec::new();
        for (t, tree) in m.trees().iter().enumerate() {
            let reachable: Vec<_> = leaf_paths(tree)
                .into_iter()
                .filter(|p| path_reachable(p, dom))
                .collect();
            if reachable.len() == 1 {
                constant += reachable[0].value;
                continue;
            }
            let mut pick = Vec::with_capacity(reachable.len());
            for path in &reachable {
                let y = MioVar::Leaf { tree: t, leaf: path.ordinal };
                binaries.push(y);
                objective.push((y, path.value));
                pick.push((y, 1.0));
                for (j, set) in &path.constraints {
                    if !is_free(*j) {
                        continue;
                    }
                    let mut terms = Vec::new();
                    terms.push((y, 1.0));
                    for c in dom.allowed()[*j].intersection(set).iter() {
                        terms.push((MioVar::Assign { feature: *j, category: c }, -1.0));
                    }
                    constraints.push(LinearConstraint {
                        name: format!("link_{t}_{}_{j}", path.ordinal),
                        terms,
                        sense: Sense::Le,
                        rhs: 0.0,
                    });
                }
            }
            constraints.push(LinearConstraint {
                name: format!("leaf_{t}"),
                terms: pick,
                sense: Sense::Eq,
                rhs: 1.0,
            });
        }
        Ok(MioProgram {
            objective_constant: constant,
            objective,
            constraints,
            binaries,
        })
    }

    /// Objective value at a binary solution given as the set of variables
    /// that are one.
    pub fn objective_at(&self, ones: &[MioVar]) -> f64 {
        let mut acc = self.objective_constant;
        for (v, c) in &self.objective {
            if ones.contains(v) {
                acc += c;
            }
        }
        acc
    }

    /// Renders the program in LP file format. Numbers use the shortest
    /// representation that parses back to the same `f64`.
    pub fn to_lp(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "\\ tree ensemble maximization: {} binaries, {} constraints",
            self.binaries.len(),
            self.constraints.len()
        );
        out.push_str("Maximize\n obj: ");
        out.push_str(&format!("{}", LpNum(self.objective_constant)));
        write_terms(&mut out, &self.objective, false);
        out.push_str("\nSubject To\n");
        for c in &self.constraints {
            let _ = write!(out, " {}:", c.name);
            write_terms(&mut out, &c.terms, true);
            let op = match c.sense {
                Sense::Eq => "=",
                Sense::Le => "<=",
            };
            let _ = writeln!(out, " {op} {}", LpNum(c.rhs));
        }
        out.push_str("Binary\n");
        for v in &self.binaries {
            let _ = writeln!(out, " {v}");
        }
        out.push_str("End\n");
        out
    }
}

/// Encodes the maximization of `m` over `dom` as LP-format text.
pub fn encode_mio(m: &TreeEnsemble, dom: &VariableDomain) -> Result<String> {
    Ok(MioProgram::build(m, dom)?.to_lp())
}

struct LpNum(f64);

impl fmt::Display for LpNum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // `{:e}` is exact round-trip and stays short for tiny or huge values.
        let v = self.0;
        if v == 0.0 {
            f.write_str("0")
        } else if (1e-4..1e15).contains(&v.abs()) {
            write!(f, "{v}")
        } else {
            write!(f, "{v:e}")
        }
    }
}

const TERMS_PER_LINE: usize = 8;

fn write_terms(out: &mut String, terms: &[(MioVar, f64)], leading: bool) {
    for (i, (v, c)) in terms.iter().enumerate() {
        if i > 0 && i % TERMS_PER_LINE == 0 {
            out.push_str("\n   ");
        }
        let sign = if c.is_sign_negative() { '-' } else { '+' };
        let mag = c.abs();
        if leading && i == 0 {
            if sign == '-' {
                out.push_str(" -");
            }
        } else {
            let _ = write!(out, " {sign}");
        }
        if mag == 1.0 {
            let _ = write!(out, " {v}");
        } else {
            let _ = write!(out, " {} {v}", LpNum(mag));
        }
    }
}
