//! Per-example selection losses and the batch training objectives.
//!
//! The selection losses split a prediction into its candidate and
//! non-candidate parts. Binary CE items `-log f_j` are either averaged over
//! a part (decoupled CE) or reduced with a minimum (wooden CE). The minimum
//! of a part is `-log` of its largest probability, which makes it
//! insensitive to how many labels the part holds.

use crate::datagen::CandidateMask;
use crate::error::{Error, Result};
use crate::model::LOG_FLOOR;

/// Tolerance on `sum(probs) == 1` for the selection losses.
pub const NORMALIZATION_TOL: f64 = 1e-6;

pub(crate) fn neg_log(p: f64) -> f64 {
    -p.max(LOG_FLOOR).ln()
}

fn check_probs(probs: &[f64], mask: &CandidateMask) -> Result<()> {
    if probs.len() != mask.classes() {
        return Err(Error::DimensionMismatch {
            expected: mask.classes(),
            actual: probs.len(),
        });
    }
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("probabilities"));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::NotNormalized { sum });
    }
    Ok(())
}

/// A (candidate, non-candidate) loss pair. The non-candidate part is
/// `+inf` when the candidate set covers every class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartLosses {
    pub candidate: f64,
    pub non_candidate: f64,
}

fn mean(items: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = items.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::INFINITY
    } else {
        sum / n as f64
    }
}

/// Mean binary CE item over candidates and over non-candidates, the
/// latter treating non-candidates as positives.
pub fn decoupled_ce(probs: &[f64], mask: &CandidateMask) -> Result<PartLosses> {
    check_probs(probs, mask)?;
    Ok(PartLosses {
        candidate: mean(mask.candidates().map(|j| neg_log(probs[j]))),
        non_candidate: mean(mask.non_candidates().map(|j| neg_log(probs[j]))),
    })
}

/// Minimum binary CE item over candidates and over non-candidates.
pub fn wooden_ce(probs: &[f64], mask: &CandidateMask) -> Result<PartLosses> {
    check_probs(probs, mask)?;
    let min_item = |it: &mut dyn Iterator<Item = usize>| {
        it.map(|j| neg_log(probs[j])).fold(f64::INFINITY, f64::min)
    };
    Ok(PartLosses {
        candidate: min_item(&mut mask.candidates()),
        non_candidate: min_item(&mut mask.non_candidates()),
    })
}

fn restricted_entropy(probs: &[f64], labels: impl Iterator<Item = usize>) -> f64 {
    let mass: Vec<f64> = labels.map(|j| probs[j]).collect();
    let total: f64 = mass.iter().sum();
    if mass.is_empty() || total <= 0.0 {
        return f64::INFINITY;
    }
    mass.iter()
        .map(|&m| m / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum()
}

/// Shannon entropy of the prediction restricted to, and renormalized over,
/// each part. Kept as a diagnostic: its range grows with the part size.
pub fn confidence_entropy(probs: &[f64], mask: &CandidateMask) -> Result<PartLosses> {
    check_probs(probs, mask)?;
    Ok(PartLosses {
        candidate: restricted_entropy(probs, mask.candidates()),
        non_candidate: restricted_entropy(probs, mask.non_candidates()),
    })
}

/// Divisor used by the batch objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossNorm {
    /// Number of mini-batch examples in the partition; an empty partition
    /// contributes zero.
    #[default]
    Partition,
    /// Full mini-batch size.
    Batch,
}

impl LossNorm {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "partition" => Some(Self::Partition),
            "batch" => Some(Self::Batch),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Partition => "partition",
            Self::Batch => "batch",
        }
    }

    /// Divisor for a partition holding `members` of `batch` examples, or
    /// `None` when the partition contributes nothing.
    pub fn divisor(self, members: usize, batch: usize) -> Option<f64> {
        match self {
            _ if members == 0 => None,
            Self::Partition => Some(members as f64),
            Self::Batch => Some(batch as f64),
        }
    }
}

/// Soft-target cross-entropy `-sum_j t_j log f_j` for one example.
pub fn soft_ce(probs: &[f64], target: &[f64]) -> Result<f64> {
    if probs.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: probs.len(),
            actual: target.len(),
        });
    }
    Ok(probs
        .iter()
        .zip(target)
        .map(|(&f, &t)| if t == 0.0 { 0.0 } else { t * neg_log(f) })
        .sum())
}

fn batch_soft_ce(outputs: &[Vec<f64>], targets: &[Vec<f64>], divisor: f64) -> Result<f64> {
    if outputs.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} outputs, {} targets",
            outputs.len(),
            targets.len()
        )));
    }
    if outputs.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (f, t) in outputs.iter().zip(targets) {
        sum += soft_ce(f, t)?;
    }
    Ok(sum / divisor)
}

/// Normal-partition loss against label confidences `p`. The divisor is
/// the number of rows given.
pub fn loss_normal(outputs: &[Vec<f64>], confidences: &[Vec<f64>]) -> Result<f64> {
    batch_soft_ce(outputs, confidences, outputs.len() as f64)
}

/// Closed-set loss against reversed confidences `p̄`; same form as
/// [`loss_normal`].
pub fn loss_closed(outputs: &[Vec<f64>], reversed: &[Vec<f64>]) -> Result<f64> {
    batch_soft_ce(outputs, reversed, outputs.len() as f64)
}

/// Open-set loss: summed CE over the bits of each random candidate set,
/// averaged over rows.
pub fn loss_open(outputs: &[Vec<f64>], random_masks: &[CandidateMask]) -> Result<f64> {
    let targets = random_masks.iter().map(mask_target).collect::<Vec<_>>();
    batch_soft_ce(outputs, &targets, outputs.len() as f64)
}

/// Indicator vector of a candidate set.
pub fn mask_target(mask: &CandidateMask) -> Vec<f64> {
    mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

/// `L_N + alpha * L_C + beta * L_O`.
pub fn total_loss(normal: f64, closed: f64, open: f64, alpha: f64, beta: f64) -> f64 {
    normal + alpha * closed + beta * open
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(c: usize, cands: &[usize]) -> CandidateMask {
        CandidateMask::from_indices(c, cands).unwrap()
    }

    #[test]
    fn decoupled_hand_values() {
        let l = decoupled_ce(&[0.7, 0.2, 0.1], &mask(3, &[0, 1])).unwrap();
        let lc = (-(0.7f64.ln()) - 0.2f64.ln()) / 2.0;
        assert!((l.candidate - lc).abs() < 1e-12);
        assert!((l.candidate - 0.9831).abs() < 1e-4);
        assert!((l.non_candidate - std::f64::consts::LN_10).abs() < 1e-12);
    }

    #[test]
    fn uniform_prediction_gives_log_c() {
        let u = [1.0 / 3.0; 3];
        let m = mask(3, &[2]);
        let d = decoupled_ce(&u, &m).unwrap();
        let w = wooden_ce(&u, &m).unwrap();
        for v in [d.candidate, d.non_candidate, w.candidate, w.non_candidate] {
            assert!((v - 3f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn full_candidate_set_has_infinite_non_candidate_part() {
        let m = mask(3, &[0, 1, 2]);
        let p = [0.7, 0.2, 0.1];
        assert_eq!(decoupled_ce(&p, &m).unwrap().non_candidate, f64::INFINITY);
        assert_eq!(wooden_ce(&p, &m).unwrap().non_candidate, f64::INFINITY);
        assert_eq!(confidence_entropy(&p, &m).unwrap().non_candidate, f64::INFINITY);
    }

    #[test]
    fn unnormalized_probs_are_rejected() {
        assert!(matches!(
            wooden_ce(&[0.5, 0.4, 0.05], &mask(3, &[0])),
            Err(Error::NotNormalized { .. })
        ));
    }

    #[test]
    fn wooden_hand_values() {
        let w = wooden_ce(&[0.7, 0.2, 0.1], &mask(3, &[0, 1])).unwrap();
        assert!((w.candidate - 0.356675).abs() < 1e-6);
        assert!((w.non_candidate - std::f64::consts::LN_10).abs() < 1e-12);
    }

    #[test]
    fn wooden_never_increases_on_superset() {
        let p = [0.05, 0.3, 0.15, 0.5];
        let small = wooden_ce(&p, &mask(4, &[0, 2])).unwrap().candidate;
        let big = wooden_ce(&p, &mask(4, &[0, 2, 3])).unwrap().candidate;
        assert!(big <= small);
    }

    #[test]
    fn entropy_values() {
        let p = [0.7, 0.2, 0.1];
        assert_eq!(confidence_entropy(&p, &mask(3, &[1])).unwrap().candidate, 0.0);
        let h = confidence_entropy(&[0.25; 4], &mask(4, &[0, 1, 2, 3])).unwrap();
        assert!((h.candidate - 4f64.ln()).abs() < 1e-12);
        let h = confidence_entropy(&p, &mask(3, &[0, 1])).unwrap().candidate;
        let (a, b) = (7.0 / 9.0f64, 2.0 / 9.0f64);
        assert!((h - (-a * a.ln() - b * b.ln())).abs() < 1e-12);
        assert!((h - 0.5297).abs() < 1e-4);
    }

    #[test]
    fn partition_losses_hand_values() {
        assert_eq!(loss_normal(&[vec![0.0, 1.0]], &[vec![0.0, 1.0]]).unwrap(), 0.0);
        let f = vec![0.5, 0.3, 0.2];
        let l = loss_normal(std::slice::from_ref(&f), &[vec![0.7143, 0.0, 0.2857]]).unwrap();
        assert!((l - 0.9550).abs() < 1e-4, "{l}");
        let two = loss_normal(
            &[f.clone(), f.clone()],
            &[vec![0.7143, 0.0, 0.2857], vec![0.7143, 0.0, 0.2857]],
        )
        .unwrap();
        assert!((two - l).abs() < 1e-15);

        let l = loss_closed(std::slice::from_ref(&f), &[vec![0.0, 1.0, 0.0]]).unwrap();
        assert!((l - 1.2040).abs() < 1e-4);
        assert_eq!(loss_closed(std::slice::from_ref(&f), &[vec![0.0; 3]]).unwrap(), 0.0);

        let l = loss_open(std::slice::from_ref(&f), &[mask(3, &[0, 2])]).unwrap();
        assert!((l - (-(0.5f64.ln()) - 0.2f64.ln())).abs() < 1e-12);
        assert!((l - std::f64::consts::LN_10).abs() < 1e-4);
        let l = loss_open(&[vec![0.25; 4]], &[mask(4, &[0, 1, 2, 3])]).unwrap();
        assert!((l - 4.0 * 4f64.ln()).abs() < 1e-12);
        assert_eq!(loss_open(&[vec![0.0, 1.0]], &[mask(2, &[1])]).unwrap(), 0.0);
    }

    #[test]
    fn row_length_mismatch_is_rejected() {
        assert!(loss_normal(&[vec![0.5, 0.5]], &[vec![1.0, 0.0, 0.0]]).is_err());
        assert!(loss_normal(&[vec![0.5, 0.5]], &[]).is_err());
    }

    #[test]
    fn total_combination() {
        assert!((total_loss(1.0, 2.0, 3.0, 1.0, 0.1) - 3.3).abs() < 1e-15);
        assert_eq!(total_loss(1.5, 2.0, 3.0, 0.0, 0.0), 1.5);
        assert_eq!(total_loss(1.5, 0.0, 0.0, 4.0, 9.0), 1.5);
    }

    #[test]
    fn norm_divisors() {
        assert_eq!(LossNorm::Partition.divisor(0, 128), None);
        assert_eq!(LossNorm::Partition.divisor(3, 128), Some(3.0));
        assert_eq!(LossNorm::Batch.divisor(3, 128), Some(128.0));
    }
}
