//! Total-degree truncated multivariate Hermite basis.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

/// Hermite degrees (n_1, ..., n_S), one per retained noise mode.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(entries: Vec<u32>) -> Self {
        Self(entries)
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    /// |n|_1
    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }

    /// E[Phi_n^2] = prod_j n_j! for probabilists' Hermite polynomials.
    pub fn norm_sq(&self) -> f64 {
        self.0
            .iter()
            .map(|&n| (1..=n).map(f64::from).product::<f64>())
            .product()
    }

    /// Copy with coordinate `j` shifted by `delta`, or `None` below zero.
    pub fn shifted(&self, j: usize, delta: i32) -> Option<Self> {
        let v = self.0[j] as i64 + delta as i64;
        if v < 0 {
            return None;
        }
        let mut out = self.0.clone();
        out[j] = v as u32;
        Some(Self(out))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, n) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{n}")?;
        }
        write!(f, ")")
    }
}

/// All multi-indices with |n|_1 <= P, in graded lexicographic order.
#[derive(Debug, Clone)]
pub struct MultiIndexSet {
    stochastic_dim: usize,
    order: usize,
    indices: Vec<MultiIndex>,
    lookup: HashMap<MultiIndex, usize>,
}

impl MultiIndexSet {
    pub fn stochastic_dim(&self) -> usize {
        self.stochastic_dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn get(&self, pos: usize) -> &MultiIndex {
        &self.indices[pos]
    }

    pub fn position(&self, index: &MultiIndex) -> Option<usize> {
        self.lookup.get(index).copied()
    }
}

impl PartialEq for MultiIndexSet {
    fn eq(&self, other: &Self) -> bool {
        self.stochastic_dim == other.stochastic_dim && self.order == other.order
    }
}

/// (S + P)! / (S! P!), or `None` on overflow.
pub fn hierarchy_size(stochastic_dim: usize, order: usize) -> Option<usize> {
    // C(S+P, k) built incrementally stays integral at every step
    let mut acc: u128 = 1;
    for k in 1..=order as u128 {
        acc = acc.checked_mul(stochastic_dim as u128 + k)? / k;
    }
    usize::try_from(acc).ok()
}

pub fn enumerate_indices(stochastic_dim: usize, order: usize) -> Result<MultiIndexSet> {
    if stochastic_dim == 0 {
        return Err(Error::InvalidInput("stochastic dimension must be at least 1".into()));
    }
    let capacity = Error::Capacity { stochastic_dim, order };
    let size = hierarchy_size(stochastic_dim, order).ok_or(capacity)?;
    // refuse sets whose index storage alone would not fit in memory
    if size.checked_mul(stochastic_dim * 4).is_none_or(|b| b > isize::MAX as usize) {
        return Err(Error::Capacity { stochastic_dim, order });
    }
    if u32::try_from(order).is_err() {
        return Err(Error::Capacity { stochastic_dim, order });
    }
    let mut indices = Vec::with_capacity(size);
    let mut scratch = vec![0u32; stochastic_dim];
    for grade in 0..=order as u32 {
        compositions(grade, 0, &mut scratch, &mut indices);
    }
    debug_assert_eq!(indices.len(), size);
    let lookup = indices.iter().enumerate().map(|(k, m)| (m.clone(), k)).collect();
    Ok(MultiIndexSet { stochastic_dim, order, indices, lookup })
}

/// Push every way of writing `remaining` as a sum over scratch[slot..], lexicographically.
fn compositions(remaining: u32, slot: usize, scratch: &mut [u32], out: &mut Vec<MultiIndex>) {
    if slot == scratch.len() - 1 {
        scratch[slot] = remaining;
        out.push(MultiIndex(scratch.to_vec()));
        return;
    }
    for first in 0..=remaining {
        scratch[slot] = first;
        compositions(remaining - first, slot + 1, scratch, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn as_tuples(set: &MultiIndexSet) -> Vec<Vec<u32>> {
        set.indices().iter().map(|m| m.entries().to_vec()).collect()
    }

    #[test]
    fn single_mode_order_zero() {
        let set = enumerate_indices(1, 0).unwrap();
        assert_eq!(as_tuples(&set), vec![vec![0]]);
    }

    #[test]
    fn two_modes_order_two_layout() {
        let set = enumerate_indices(2, 2).unwrap();
        assert_eq!(
            as_tuples(&set),
            vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![0, 2], vec![1, 1], vec![2, 0]]
        );
        for (k, m) in set.indices().iter().enumerate() {
            assert_eq!(set.position(m), Some(k));
        }
    }

    #[test]
    fn three_modes_order_nine_has_220_terms() {
        assert_eq!(enumerate_indices(3, 9).unwrap().len(), 220);
    }

    #[test]
    fn size_overflow_is_a_capacity_error() {
        assert!(hierarchy_size(200, 200).is_none());
        assert!(matches!(enumerate_indices(200, 200), Err(Error::Capacity { .. })));
        assert!(enumerate_indices(0, 3).is_err());
    }

    #[test]
    fn norm_is_product_of_factorials() {
        assert_eq!(MultiIndex::new(vec![3, 0, 2]).norm_sq(), 12.0);
        assert_eq!(MultiIndex::new(vec![0]).norm_sq(), 1.0);
    }
}
