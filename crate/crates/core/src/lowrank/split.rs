use crate::error::{Error, Result};
use crate::filters::FilterBank;

use super::LowRankFactorization;

/// A convolution replaced by an `M`-filter basis convolution followed by a
/// 1x1 convolution over the `M` basis feature maps.
#[derive(Debug, Clone)]
pub struct DecomposedLayer {
    /// `M x C x H x W` (`g·M` filters for a grouped layer).
    pub basis_layer: FilterBank,
    /// `N x M x 1 x 1`.
    pub combine_layer: FilterBank,
}

impl DecomposedLayer {
    pub fn rank(&self) -> usize {
        self.combine_layer.channels()
    }
}

/// Splits an ungrouped layer using one factorization of its filter matrix.
pub fn split_layer(bank: &FilterBank, fact: &LowRankFactorization) -> Result<DecomposedLayer> {
    if bank.groups() != 1 {
        return Err(Error::InvalidArgument(
            "grouped layers need one factorization per group (split_grouped_layer)".into(),
        ));
    }
    split_grouped_layer(bank, std::slice::from_ref(fact))
}

/// Splits a (possibly grouped) layer; `facts[g]` factorizes group `g` and all
/// groups must share the same rank.
pub fn split_grouped_layer(
    bank: &FilterBank,
    facts: &[LowRankFactorization],
) -> Result<DecomposedLayer> {
    let groups = bank.groups();
    if facts.len() != groups {
        return Err(Error::Shape(format!(
            "{} factorizations for {groups} groups",
            facts.len()
        )));
    }
    let rank = facts[0].rank;
    let per = bank.filters_per_group();
    let d = bank.filter_shape().len();
    let mut basis = Vec::with_capacity(groups * rank * d);
    let mut combine = Vec::with_capacity(bank.n_filters() * rank);
    for f in facts {
        if f.rank != rank {
            return Err(Error::Shape(format!(
                "grouped split needs equal ranks, got {} and {rank}",
                f.rank
            )));
        }
        if f.basis.shape() != (rank, d) || f.combination.shape() != (per, rank) {
            return Err(Error::Shape(format!(
                "factorization {}x{} · {}x{} does not match {per} filters of length {d}",
                f.combination.rows(),
                f.combination.cols(),
                f.basis.rows(),
                f.basis.cols()
            )));
        }
        basis.extend_from_slice(f.basis.as_slice());
        combine.extend_from_slice(f.combination.as_slice());
    }
    Ok(DecomposedLayer {
        basis_layer: FilterBank::new(
            basis,
            groups * rank,
            bank.channels(),
            bank.height(),
            bank.width(),
            groups,
        )?,
        combine_layer: FilterBank::new(combine, bank.n_filters(), rank, 1, 1, groups)?,
    })
}
