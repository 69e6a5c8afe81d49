//! Label confidences: ordinary disambiguation over candidates, reversed
//! disambiguation over non-candidates, and random candidate sets for
//! open-set examples.

use rand::Rng;

use crate::datagen::CandidateMask;
use crate::error::{check_probability, Error, Result};

/// Denominator used when turning predictions into confidences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LdNorm {
    /// Renormalize over the masked labels so every row is a distribution.
    #[default]
    Masked,
    /// Divide by the mass over all `c` outputs, which for softmax outputs
    /// leaves the raw probabilities of the masked labels.
    Literal,
}

impl LdNorm {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "masked" => Some(Self::Masked),
            "literal" => Some(Self::Literal),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Masked => "masked",
            Self::Literal => "literal",
        }
    }
}

fn masked_confidence(probs: &[f64], keep: &[bool], norm: LdNorm) -> Result<Vec<f64>> {
    if probs.len() != keep.len() {
        return Err(Error::DimensionMismatch {
            expected: keep.len(),
            actual: probs.len(),
        });
    }
    let denom: f64 = match norm {
        LdNorm::Masked => probs.iter().zip(keep).filter(|(_, &k)| k).map(|(p, _)| p).sum(),
        LdNorm::Literal => probs.iter().sum(),
    };
    if !(denom > 0.0 && denom.is_finite()) {
        return Err(Error::NonFinite("masked probability mass"));
    }
    Ok(probs
        .iter()
        .zip(keep)
        .map(|(&p, &k)| if k { p / denom } else { 0.0 })
        .collect())
}

/// `p_j ∝ f_j` on candidates, zero elsewhere.
pub fn update_conf_normal(probs: &[f64], mask: &CandidateMask, norm: LdNorm) -> Result<Vec<f64>> {
    masked_confidence(probs, mask.bits(), norm)
}

/// `p̄_j ∝ f_j` on non-candidates, zero on candidates.
pub fn update_conf_reversed(
    probs: &[f64],
    mask: &CandidateMask,
    norm: LdNorm,
) -> Result<Vec<f64>> {
    if mask.non_candidate_count() == 0 {
        return Err(Error::EmptySet("non-candidate set"));
    }
    let keep: Vec<bool> = mask.bits().iter().map(|b| !b).collect();
    masked_confidence(probs, &keep, norm)
}

/// Uniform distribution over the set bits of `keep`.
fn uniform_over(keep: impl Iterator<Item = bool> + Clone) -> Vec<f64> {
    let k = keep.clone().filter(|&b| b).count();
    keep.map(|b| if b && k > 0 { 1.0 / k as f64 } else { 0.0 }).collect()
}

/// Normal-path confidences `p` and reversed-path confidences `p̄`, one row
/// per example. Both start uniform over their masked sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceTable {
    normal: Vec<Vec<f64>>,
    reversed: Vec<Vec<f64>>,
}

impl ConfidenceTable {
    pub fn new(masks: &[CandidateMask]) -> Self {
        Self {
            normal: masks.iter().map(|m| uniform_over(m.bits().iter().copied())).collect(),
            reversed: masks
                .iter()
                .map(|m| uniform_over(m.bits().iter().map(|b| !b)))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.normal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normal.is_empty()
    }

    pub fn normal(&self, i: usize) -> &[f64] {
        &self.normal[i]
    }

    pub fn reversed(&self, i: usize) -> &[f64] {
        &self.reversed[i]
    }

    pub fn normal_rows(&self) -> &[Vec<f64>] {
        &self.normal
    }

    pub fn reversed_rows(&self) -> &[Vec<f64>] {
        &self.reversed
    }

    pub fn set_normal(&mut self, i: usize, row: Vec<f64>) {
        self.normal[i] = row;
    }

    pub fn set_reversed(&mut self, i: usize, row: Vec<f64>) {
        self.reversed[i] = row;
    }
}

/// Draws a random candidate set: each label independently with probability
/// `rho`; an empty draw is replaced by one uniformly chosen label.
pub fn gen_random_candidates<R: Rng + ?Sized>(
    classes: usize,
    rho: f64,
    rng: &mut R,
) -> Result<CandidateMask> {
    check_probability("rho", rho)?;
    let mut bits: Vec<bool> = (0..classes).map(|_| rng.random::<f64>() < rho).collect();
    if !bits.iter().any(|&b| b) && classes > 0 {
        bits[rng.random_range(0..classes)] = true;
    }
    CandidateMask::from_bits(bits)
}

/// Current random candidate sets of the examples in the open-set pool.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenSetAssignment {
    masks: Vec<Option<CandidateMask>>,
    pub rho: f64,
}

impl OpenSetAssignment {
    pub fn new(n: usize, rho: f64) -> Result<Self> {
        check_probability("rho", rho)?;
        Ok(Self {
            masks: vec![None; n],
            rho,
        })
    }

    /// Draws fresh sets for `open_idx` and clears everyone else.
    pub fn regenerate<R: Rng + ?Sized>(
        &mut self,
        open_idx: &[usize],
        classes: usize,
        rng: &mut R,
    ) -> Result<()> {
        self.masks.iter_mut().for_each(|m| *m = None);
        for &i in open_idx {
            self.masks[i] = Some(gen_random_candidates(classes, self.rho, rng)?);
        }
        Ok(())
    }

    pub fn redraw<R: Rng + ?Sized>(&mut self, i: usize, classes: usize, rng: &mut R) -> Result<()> {
        self.masks[i] = Some(gen_random_candidates(classes, self.rho, rng)?);
        Ok(())
    }

    pub fn get(&self, i: usize) -> Option<&CandidateMask> {
        self.masks[i].as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mask(c: usize, cands: &[usize]) -> CandidateMask {
        CandidateMask::from_indices(c, cands).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn ordinary_update_renormalizes_over_candidates() {
        let f = [0.5, 0.3, 0.2];
        let p = update_conf_normal(&f, &mask(3, &[0, 2]), LdNorm::Masked).unwrap();
        assert!(close(&p, &[5.0 / 7.0, 0.0, 2.0 / 7.0], 1e-15));
        assert!(close(&p, &[0.7143, 0.0, 0.2857], 1e-4));
        let one = update_conf_normal(&f, &mask(3, &[1]), LdNorm::Masked).unwrap();
        assert_eq!(one, vec![0.0, 1.0, 0.0]);
        let full = update_conf_normal(&f, &mask(3, &[0, 1, 2]), LdNorm::Masked).unwrap();
        assert!(close(&full, &f, 1e-15));
    }

    #[test]
    fn reversed_update() {
        let f = [0.5, 0.3, 0.2];
        let p = update_conf_reversed(&f, &mask(3, &[0, 2]), LdNorm::Masked).unwrap();
        assert_eq!(p, vec![0.0, 1.0, 0.0]);
        let p = update_conf_reversed(&f, &mask(3, &[0]), LdNorm::Masked).unwrap();
        assert!(close(&p, &[0.0, 0.6, 0.4], 1e-15));
        assert!(update_conf_reversed(&f, &mask(3, &[0, 1, 2]), LdNorm::Masked).is_err());
    }

    #[test]
    fn literal_mode_keeps_raw_probabilities() {
        let f = [0.5, 0.3, 0.2];
        let p = update_conf_normal(&f, &mask(3, &[0, 2]), LdNorm::Literal).unwrap();
        assert!(close(&p, &[0.5, 0.0, 0.2], 1e-15));
    }

    #[test]
    fn table_starts_uniform() {
        let t = ConfidenceTable::new(&[mask(4, &[0, 3]), mask(4, &[1])]);
        assert_eq!(t.normal(0), &[0.5, 0.0, 0.0, 0.5]);
        assert_eq!(t.reversed(0), &[0.0, 0.5, 0.5, 0.0]);
        let third = 1.0 / 3.0;
        assert_eq!(t.reversed(1), &[third, 0.0, third, third]);
    }

    #[test]
    fn random_candidates_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(gen_random_candidates(6, 1.0, &mut rng).unwrap().candidate_count(), 6);
        let mut seen = [false; 6];
        for _ in 0..200 {
            let m = gen_random_candidates(6, 0.0, &mut rng).unwrap();
            assert_eq!(m.candidate_count(), 1);
            seen[m.candidates().next().unwrap()] = true;
        }
        assert!(seen.iter().all(|&s| s));
        assert!(gen_random_candidates(6, 1.2, &mut rng).is_err());
    }

    #[test]
    fn random_candidates_mean_cardinality() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let total: usize = (0..10_000)
            .map(|_| gen_random_candidates(10, 0.5, &mut rng).unwrap().candidate_count())
            .sum();
        let mean = total as f64 / 10_000.0;
        assert!((mean - 5.0).abs() < 0.1, "{mean}");
    }

    #[test]
    fn open_assignment_regenerates_only_open_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = OpenSetAssignment::new(4, 0.5).unwrap();
        a.regenerate(&[1, 3], 10, &mut rng).unwrap();
        assert!(a.get(0).is_none() && a.get(2).is_none());
        assert!(a.get(1).is_some() && a.get(3).is_some());
        a.regenerate(&[0], 10, &mut rng).unwrap();
        assert!(a.get(1).is_none() && a.get(0).is_some());
    }
}
