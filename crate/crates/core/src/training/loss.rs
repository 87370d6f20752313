//! Loss routing by target kind and the supervised / consistency objectives.

use serde::{Deserialize, Serialize};

use crate::autograd::{catalog_cross_entropy, CeTarget, Matrix};
use crate::corpus::PAD;
use crate::error::{Error, Result};
use crate::network::argmax_item;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetKind {
    /// The successor is padding; trained only through pseudo-labels.
    Pad,
    /// The successor is a real item.
    Next(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetLayout {
    pub targets: Vec<TargetKind>,
}

impl TargetLayout {
    pub fn next_positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.targets.iter().enumerate().filter_map(|(t, k)| match k {
            TargetKind::Next(item) => Some((t, *item)),
            TargetKind::Pad => None,
        })
    }

    pub fn pad_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.targets
            .iter()
            .enumerate()
            .filter_map(|(t, k)| (*k == TargetKind::Pad).then_some(t))
    }

    pub fn num_next(&self) -> usize {
        self.next_positions().count()
    }

    pub fn num_pad(&self) -> usize {
        self.pad_positions().count()
    }
}

/// Position `t` targets `positions[t + 1]`; the last position targets `next_item`.
pub fn build_targets(positions: &[usize], next_item: usize) -> Result<TargetLayout> {
    if next_item == PAD {
        return Err(Error::invalid("next item must be a real item"));
    }
    if positions.is_empty() {
        return Err(Error::invalid("empty sequence"));
    }
    let targets = (0..positions.len())
        .map(|t| match positions.get(t + 1).copied().unwrap_or(next_item) {
            PAD => TargetKind::Pad,
            v => TargetKind::Next(v),
        })
        .collect();
    Ok(TargetLayout { targets })
}

/// CE targets for the real successors, each weighted `1 / #next`.
pub fn supervised_targets(layout: &TargetLayout) -> Result<Vec<CeTarget>> {
    let count = layout.num_next();
    if count == 0 {
        return Err(Error::invalid("sequence has no next-item targets"));
    }
    let w = 1.0 / count as f64;
    Ok(layout
        .next_positions()
        .map(|(row, class)| CeTarget { row, class, weight: w })
        .collect())
}

/// Hard argmax labels of `source` at padding-target positions, weighted `1 / #pad`.
pub fn pseudo_label_targets(source: &Matrix, layout: &TargetLayout) -> Vec<CeTarget> {
    let count = layout.num_pad();
    if count == 0 {
        return Vec::new();
    }
    let w = 1.0 / count as f64;
    layout
        .pad_positions()
        .map(|row| {
            let scores = source.row(row);
            CeTarget {
                row,
                class: argmax_item(scores.as_slice().expect("standard layout")),
                weight: w,
            }
        })
        .collect()
}

fn weighted_ce(scores: &Matrix, targets: &[CeTarget]) -> f64 {
    targets
        .iter()
        .map(|t| t.weight * catalog_cross_entropy(scores.row(t.row).as_slice().expect("standard layout"), t.class))
        .sum()
}

/// Mean CE over next-item positions, summed over both networks.
pub fn supervised_loss(scores_1: &Matrix, scores_2: &Matrix, layout: &TargetLayout) -> Result<f64> {
    let targets = supervised_targets(layout)?;
    Ok(weighted_ce(scores_1, &targets) + weighted_ce(scores_2, &targets))
}

/// Each network's CE against the other's argmax at padding-target positions,
/// averaged over those positions. Zero when there are none.
pub fn consistency_loss(scores_1: &Matrix, scores_2: &Matrix, layout: &TargetLayout) -> f64 {
    weighted_ce(scores_1, &pseudo_label_targets(scores_2, layout))
        + weighted_ce(scores_2, &pseudo_label_targets(scores_1, layout))
}

pub fn total_loss(sup: f64, cons: f64, lambda: f64) -> f64 {
    sup + lambda * cons
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_enumeration() {
        let l = build_targets(&[0, 0, 1, 2, 3], 4).unwrap();
        use TargetKind::*;
        assert_eq!(l.targets, vec![Pad, Next(1), Next(2), Next(3), Next(4)]);
        let full = build_targets(&[1, 2, 3], 4).unwrap();
        assert_eq!(full.num_pad(), 0);
        let one = build_targets(&[0, 0, 0, 0], 6).unwrap();
        assert_eq!(one.num_next(), 1);
        assert_eq!(one.targets[3], Next(6));
        let two = build_targets(&[0, 0, 0, 5], 6).unwrap();
        assert_eq!(two.targets, vec![Pad, Pad, Next(5), Next(6)]);
        assert!(build_targets(&[0, 1], 0).is_err());
    }

    #[test]
    fn uniform_logits_give_log_catalog_size() {
        let layout = build_targets(&[0, 1, 2], 3).unwrap();
        let s = Matrix::zeros((3, 8));
        let per_network = supervised_loss(&s, &s, &layout).unwrap() / 2.0;
        assert!((per_network - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn disagreement_costs_more_than_log_two() {
        let layout = build_targets(&[0, 0, 1], 2).unwrap();
        let mut a = Matrix::zeros((3, 4));
        let mut b = Matrix::zeros((3, 4));
        for t in 0..2 {
            a[[t, 1]] = 20.0;
            b[[t, 2]] = 20.0;
        }
        assert!(consistency_loss(&a, &b, &layout) > 2f64.ln());
        assert!(consistency_loss(&a, &a, &layout) < 1e-6);
        assert_eq!(total_loss(0.5, 0.25, 1.0), 0.75);
    }
}
