//! Fixed-universe bit sets of category indices.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// A subset of `{0, .., universe-1}` stored as a bit vector.
///
/// Iteration is always in ascending order, and the derived ordering of two
/// sets over the same universe is not meaningful; use [`CategorySet::lex_cmp`]
/// to compare sorted element lists.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct CategorySet {
    universe: usize,
    words: Vec<u64>,
}

impl CategorySet {
    pub fn empty(universe: usize) -> Self {
        CategorySet {
            universe,
            words: vec![0; universe.div_ceil(64)],
        }
    }

    pub fn full(universe: usize) -> Self {
        let mut s = Self::empty(universe);
        for c in 0..universe {
            s.insert(c);
        }
        s
    }

    pub fn singleton(universe: usize, c: usize) -> Self {
        let mut s = Self::empty(universe);
        s.insert(c);
        s
    }

    /// Builds a set from category indices. Indices `>= universe` are ignored.
    pub fn from_indices<I: IntoIterator<Item = usize>>(universe: usize, items: I) -> Self {
        let mut s = Self::empty(universe);
        for c in items {
            if c < universe {
                s.insert(c);
            }
        }
        s
    }

    #[inline]
    pub fn universe(&self) -> usize {
        self.universe
    }

    #[inline]
    pub fn insert(&mut self, c: usize) {
        debug_assert!(c < self.universe);
        self.words[c / 64] |= 1u64 << (c % 64);
    }

    #[inline]
    pub fn contains(&self, c: usize) -> bool {
        c < self.universe && self.words[c / 64] & (1u64 << (c % 64)) != 0
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Smallest element, if any.
    pub fn first(&self) -> Option<usize> {
        self.words
            .iter()
            .enumerate()
            .find(|(_, &w)| w != 0)
            .map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
    }

    pub fn intersection(&self, other: &Self) -> Self {
        debug_assert_eq!(self.universe, other.universe);
        CategorySet {
            universe: self.universe,
            words: self.words.iter().zip(&other.words).map(|(a, b)| a & b).collect(),
        }
    }

    pub fn difference(&self, other: &Self) -> Self {
        debug_assert_eq!(self.universe, other.universe);
        CategorySet {
            universe: self.universe,
            words: self.words.iter().zip(&other.words).map(|(a, b)| a & !b).collect(),
        }
    }

    pub fn complement(&self) -> Self {
        Self::full(self.universe).difference(self)
    }

    pub fn intersects(&self, other: &Self) -> bool {
        self.words.iter().zip(&other.words).any(|(a, b)| a & b != 0)
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.universe).filter(move |&c| self.contains(c))
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.iter().collect()
    }

    /// Lexicographic comparison of the ascending element lists.
    pub fn lex_cmp(&self, other: &Self) -> core::cmp::Ordering {
        self.iter().cmp(other.iter())
    }
}

impl fmt::Debug for CategorySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_set_algebra() {
        let a = CategorySet::from_indices(70, [0, 3, 65]);
        let b = CategorySet::from_indices(70, [3, 4]);
        assert_eq!(a.len(), 3);
        assert_eq!(a.intersection(&b).to_vec(), [3]);
        assert_eq!(a.difference(&b).to_vec(), [0, 65]);
        assert_eq!(a.complement().len(), 67);
        assert!(a.intersects(&b));
        assert!(CategorySet::singleton(70, 3).is_subset(&a));
        assert_eq!(b.first(), Some(3));
        assert_eq!(CategorySet::empty(5).first(), None);
    }

    #[test]
    fn lexicographic_order() {
        use core::cmp::Ordering::*;
        let a = CategorySet::from_indices(8, [0, 5]);
        let b = CategorySet::from_indices(8, [1]);
        let c = CategorySet::from_indices(8, [0]);
        assert_eq!(a.lex_cmp(&b), Less);
        assert_eq!(c.lex_cmp(&a), Less);
    }
}
