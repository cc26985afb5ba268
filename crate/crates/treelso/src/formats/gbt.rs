//! `TREELSO-GBT v1` text model format.
//!
//! ```text
//! TREELSO-GBT v1
//! n_features <p>
//! domain_sizes <k_0> ... <k_{p-1}>
//! base_score <value>
//! config <n_trees> <interaction_depth> <min_samples_leaf> <max_leaves> <shrinkage> <seed>
//! trees <count>
//! tree <node count>
//! split <feature> <gain> <left> <right> <comma-separated left categories>
//! leaf <value> <samples>
//! ...
//! ```
//!
//! Nodes follow each `tree` line in pre-order. Reals are written in Rust's
//! shortest round-trip form, so predictions survive a round trip bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use treelso_core::gbt::{Node, Tree};
use treelso_core::{CategorySet, GbtConfig, TreeEnsemble};

use super::{read_file, write_file};
use crate::error::{CliError, Result};

pub const MAGIC: &str = "TREELSO-GBT v1";

pub fn encode(m: &TreeEnsemble) -> String {
    let mut s = String::new();
    let ks = m.domain_sizes();
    let c = m.config();
    let join = |v: &mut dyn Iterator<Item = usize>, sep: &str| v.map(|x| x.to_string()).collect::<Vec<_>>().join(sep);
    writeln!(s, "{MAGIC}").unwrap();
    writeln!(s, "n_features {}", ks.len()).unwrap();
    writeln!(s, "domain_sizes {}", join(&mut ks.iter().copied(), " ")).unwrap();
    writeln!(s, "base_score {:?}", m.base_score()).unwrap();
    writeln!(
        s,
        "config {} {} {} {} {:?} {}",
        c.n_trees, c.interaction_depth, c.min_samples_leaf, c.max_leaves, c.shrinkage, c.seed
    )
    .unwrap();
    writeln!(s, "trees {}", m.trees().len()).unwrap();
    for tree in m.trees() {
        writeln!(s, "tree {}", tree.nodes().len()).unwrap();
        for node in tree.nodes() {
            match node {
                Node::Split {
                    feature,
                    left_categories,
                    gain,
                    left,
                    right,
                } => writeln!(
                    s,
                    "split {feature} {gain:?} {left} {right} {}",
                    join(&mut left_categories.iter(), ",")
                )
                .unwrap(),
                Node::Leaf { value, samples } => writeln!(s, "leaf {value:?} {samples}").unwrap(),
            }
        }
    }
    s
}

fn num<T: std::str::FromStr>(tok: Option<&str>, what: &str, line: usize) -> Result<T, String> {
    let tok = tok.ok_or_else(|| format!("line {line}: missing {what}"))?;
    tok.parse().map_err(|_| format!("line {line}: bad {what} `{tok}`"))
}

fn keyed<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>, key: &str) -> Result<(usize, Vec<&'a str>), String> {
    let (n, l) = lines.next().ok_or_else(|| format!("unexpected end of file, wanted `{key}`"))?;
    let mut parts = l.split_whitespace();
    if parts.next() != Some(key) {
        return Err(format!("line {n}: expected `{key}`"));
    }
    Ok((n, parts.collect()))
}

pub fn decode(text: &str) -> Result<TreeEnsemble, String> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim_end() == MAGIC => {}
        _ => return Err(format!("expected header `{MAGIC}`")),
    }
    let (n, v) = keyed(&mut lines, "n_features")?;
    let p: usize = num(v.first().copied(), "feature count", n)?;
    let (n, v) = keyed(&mut lines, "domain_sizes")?;
    let ks: Vec<usize> = v.iter().map(|t| num(Some(t), "domain size", n)).collect::<Result<_, _>>()?;
    if ks.len() != p {
        return Err(format!("line {n}: {} domain sizes for {p} features", ks.len()));
    }
    let (n, v) = keyed(&mut lines, "base_score")?;
    let base: f64 = num(v.first().copied(), "base score", n)?;
    let (n, v) = keyed(&mut lines, "config")?;
    if v.len() != 6 {
        return Err(format!("line {n}: config takes six values"));
    }
    let config = GbtConfig {
        n_trees: num(Some(v[0]), "n_trees", n)?,
        interaction_depth: num(Some(v[1]), "interaction_depth", n)?,
        min_samples_leaf: num(Some(v[2]), "min_samples_leaf", n)?,
        max_leaves: num(Some(v[3]), "max_leaves", n)?,
        shrinkage: num(Some(v[4]), "shrinkage", n)?,
        seed: num(Some(v[5]), "seed", n)?,
    };
    let (n, v) = keyed(&mut lines, "trees")?;
    let count: usize = num(v.first().copied(), "tree count", n)?;
    let mut trees = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, v) = keyed(&mut lines, "tree")?;
        let size: usize = num(v.first().copied(), "node count", n)?;
        let mut nodes = Vec::with_capacity(size);
        for _ in 0..size {
            let (n, l) = lines.next().ok_or("unexpected end of file inside a tree")?;
            let mut parts = l.split_whitespace();
            let node = match parts.next() {
                Some("leaf") => Node::Leaf {
                    value: num(parts.next(), "leaf value", n)?,
                    samples: num(parts.next(), "sample count", n)?,
                },
                Some("split") => {
                    let feature: usize = num(parts.next(), "feature", n)?;
                    let gain = num(parts.next(), "gain", n)?;
                    let left = num(parts.next(), "left child", n)?;
                    let right = num(parts.next(), "right child", n)?;
                    let k = *ks.get(feature).ok_or_else(|| format!("line {n}: unknown feature {feature}"))?;
                    let cats: Vec<usize> = parts
                        .next()
                        .ok_or_else(|| format!("line {n}: missing categories"))?
                        .split(',')
                        .map(|t| num(Some(t), "category", n))
                        .collect::<Result<_, _>>()?;
                    if cats.iter().any(|&c| c >= k) {
                        return Err(format!("line {n}: category outside the domain"));
                    }
                    Node::Split {
                        feature,
                        left_categories: CategorySet::from_indices(k, cats),
                        gain,
                        left,
                        right,
                    }
                }
                _ => return Err(format!("line {n}: expected `split` or `leaf`")),
            };
            if parts.next().is_some() {
                return Err(format!("line {n}: trailing fields"));
            }
            nodes.push(node);
        }
        trees.push(Tree::new(nodes, &ks).map_err(|e| e.to_string())?);
    }
    if let Some((n, _)) = lines.next() {
        return Err(format!("line {n}: trailing content"));
    }
    TreeEnsemble::from_parts(ks, base, trees, config).map_err(|e| e.to_string())
}

pub fn save(path: &Path, m: &TreeEnsemble) -> Result<()> {
    write_file(path, encode(m).as_bytes())
}

pub fn load(path: &Path) -> Result<TreeEnsemble> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| CliError::parse(path, "not UTF-8"))?;
    decode(&text).map_err(|m| CliError::parse(path, m))
}
