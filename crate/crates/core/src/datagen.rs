//! Partially-labeled datasets with controlled ambiguity and injected
//! out-of-candidate corruption.
//!
//! Candidate sets are produced by uniform label flipping: the true label is
//! always a candidate and every other label joins independently with
//! probability `q`. Closed-set corruption then swaps the true label out of
//! the candidate set, and open-set corruption appends auxiliary examples
//! whose true label lies outside the label space altogether.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_probability, Error, Result};

/// Integer encoding of [`Label::OutOfSpace`] in CSV files.
pub const OUT_OF_SPACE: i64 = -1;

/// Ground-truth label of an example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Class(usize),
    /// The example belongs to none of the `c` known classes.
    OutOfSpace,
}

impl Label {
    pub fn from_code(code: i64) -> Option<Label> {
        match code {
            OUT_OF_SPACE => Some(Label::OutOfSpace),
            c if c >= 0 => Some(Label::Class(c as usize)),
            _ => None,
        }
    }

    pub fn code(self) -> i64 {
        match self {
            Label::Class(c) => c as i64,
            Label::OutOfSpace => OUT_OF_SPACE,
        }
    }

    pub fn class(self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(c),
            Label::OutOfSpace => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    InDistribution,
    Auxiliary,
}

/// A feature vector with its hidden ground truth.
///
/// The source is implied by the label: auxiliary examples are exactly the
/// ones whose label is [`Label::OutOfSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: Label,
}

impl LabeledExample {
    pub fn new(features: Vec<f64>, label: Label) -> Self {
        Self { features, label }
    }

    pub fn source(&self) -> Source {
        match self.label {
            Label::Class(_) => Source::InDistribution,
            Label::OutOfSpace => Source::Auxiliary,
        }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

/// Candidate label set over `c` classes; `false` bits form the
/// non-candidate set.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CandidateMask {
    bits: Vec<bool>,
}

impl CandidateMask {
    pub fn from_bits(bits: Vec<bool>) -> Result<Self> {
        if bits.len() < 2 {
            return Err(Error::InvalidParameter {
                name: "c",
                reason: format!("need at least 2 classes, got {}", bits.len()),
            });
        }
        if !bits.iter().any(|&b| b) {
            return Err(Error::EmptySet("candidate set"));
        }
        Ok(Self { bits })
    }

    pub fn from_indices(classes: usize, candidates: &[usize]) -> Result<Self> {
        let mut bits = vec![false; classes];
        for &j in candidates {
            if j >= classes {
                return Err(Error::LabelOutOfRange {
                    label: j as i64,
                    classes,
                });
            }
            bits[j] = true;
        }
        Self::from_bits(bits)
    }

    /// Parses a string of `0`/`1` characters, one per class.
    pub fn from_bit_string(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|ch| match ch {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::ShapeMismatch(format!(
                    "candidate bit `{other}` is not 0 or 1"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_bits(bits)
    }

    pub fn to_bit_string(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn classes(&self) -> usize {
        self.bits.len()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.bits[j]
    }

    /// Number of candidate labels `k`.
    pub fn candidate_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Number of non-candidate labels `z = c - k`.
    pub fn non_candidate_count(&self) -> usize {
        self.classes() - self.candidate_count()
    }

    pub fn candidates(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j)
    }

    pub fn non_candidates(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| !b).map(|(j, _)| j)
    }

    /// The mask with candidates and non-candidates exchanged. Fails when
    /// the candidate set is the full label space.
    pub fn complement(&self) -> Result<Self> {
        Self::from_bits(self.bits.iter().map(|b| !b).collect())
    }

    pub(crate) fn set(&mut self, j: usize, value: bool) {
        self.bits[j] = value;
    }
}

impl fmt::Display for CandidateMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bit_string())
    }
}

/// Hidden corruption type of an example; evaluation only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TruthType {
    Normal,
    ClosedSet,
    OpenSet,
}

impl TruthType {
    pub const ALL: [TruthType; 3] = [TruthType::Normal, TruthType::ClosedSet, TruthType::OpenSet];

    pub fn as_str(self) -> &'static str {
        match self {
            TruthType::Normal => "normal",
            TruthType::ClosedSet => "closed_set",
            TruthType::OpenSet => "open_set",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "normal" => Some(TruthType::Normal),
            "closed_set" => Some(TruthType::ClosedSet),
            "open_set" => Some(TruthType::OpenSet),
            _ => None,
        }
    }
}

impl fmt::Display for TruthType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Examples, candidate masks and hidden corruption tags, all of length `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialDataset {
    examples: Vec<LabeledExample>,
    masks: Vec<CandidateMask>,
    truth: Vec<TruthType>,
    classes: usize,
    dim: usize,
}

impl PartialDataset {
    /// Assembles a dataset, checking every cross-field invariant.
    pub fn new(
        examples: Vec<LabeledExample>,
        masks: Vec<CandidateMask>,
        truth: Vec<TruthType>,
        classes: usize,
        dim: usize,
    ) -> Result<Self> {
        if examples.len() != masks.len() || examples.len() != truth.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} examples, {} masks, {} truth tags",
                examples.len(),
                masks.len(),
                truth.len()
            )));
        }
        for (i, ((ex, mask), &tt)) in examples.iter().zip(&masks).zip(&truth).enumerate() {
            if ex.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: ex.dim(),
                });
            }
            if mask.classes() != classes {
                return Err(Error::ShapeMismatch(format!(
                    "example {i}: mask over {} classes, dataset has {classes}",
                    mask.classes()
                )));
            }
            let consistent = match (ex.label, tt) {
                (Label::OutOfSpace, TruthType::OpenSet) => true,
                (Label::Class(y), TruthType::Normal) => y < classes && mask.contains(y),
                (Label::Class(y), TruthType::ClosedSet) => y < classes && !mask.contains(y),
                _ => false,
            };
            if !consistent {
                return Err(Error::ShapeMismatch(format!(
                    "example {i}: truth type {tt} inconsistent with label {:?} and mask {mask}",
                    ex.label
                )));
            }
        }
        Ok(Self {
            examples,
            masks,
            truth,
            classes,
            dim,
        })
    }

    /// Builds an uncorrupted dataset of in-distribution examples by drawing
    /// a candidate set for each with flipping probability `q`.
    pub fn from_clean<R: Rng + ?Sized>(
        examples: Vec<LabeledExample>,
        classes: usize,
        q: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let dim = examples.first().map_or(0, LabeledExample::dim);
        let mut masks = Vec::with_capacity(examples.len());
        for ex in &examples {
            let y = ex.label.class().ok_or(Error::InvalidParameter {
                name: "examples",
                reason: "clean dataset cannot contain out-of-space examples".into(),
            })?;
            masks.push(generate_candidates(y, q, classes, rng)?);
        }
        let truth = vec![TruthType::Normal; examples.len()];
        Self::new(examples, masks, truth, classes, dim)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn masks(&self) -> &[CandidateMask] {
        &self.masks
    }

    pub fn truth(&self) -> &[TruthType] {
        &self.truth
    }

    pub fn count(&self, tt: TruthType) -> usize {
        self.truth.iter().filter(|&&t| t == tt).count()
    }
}

/// `floor(p * n)`, tolerant of the representation error in products such
/// as `0.2 / 1.4 * 7000`.
pub fn proportion_count(p: f64, n: usize) -> usize {
    (p * n as f64 + 1e-9).floor() as usize
}

/// Draws a candidate set by uniform label flipping.
pub fn generate_candidates<R: Rng + ?Sized>(
    true_label: usize,
    q: f64,
    classes: usize,
    rng: &mut R,
) -> Result<CandidateMask> {
    check_probability("q", q)?;
    if classes < 2 {
        return Err(Error::InvalidParameter {
            name: "c",
            reason: format!("need at least 2 classes, got {classes}"),
        });
    }
    if true_label >= classes {
        return Err(Error::LabelOutOfRange {
            label: true_label as i64,
            classes,
        });
    }
    // One uniform draw per class, including the true label, so the stream
    // consumption does not depend on the label.
    let bits = (0..classes)
        .map(|j| {
            let flip = rng.random::<f64>() < q;
            j == true_label || flip
        })
        .collect();
    CandidateMask::from_bits(bits)
}

/// Moves the true label out of the candidate set, replacing it with one
/// uniformly drawn former non-candidate so `|Y|` is unchanged.
pub fn swap_out_true_label<R: Rng + ?Sized>(
    mask: &CandidateMask,
    true_label: usize,
    rng: &mut R,
) -> Result<CandidateMask> {
    if !mask.contains(true_label) {
        return Err(Error::InvalidParameter {
            name: "true_label",
            reason: "true label is already a non-candidate".into(),
        });
    }
    let pool: Vec<usize> = mask.non_candidates().collect();
    let Some(&swap_in) = pool.get(rng.random_range(0..pool.len().max(1))) else {
        return Err(Error::EmptySet("non-candidate set"));
    };
    let mut out = mask.clone();
    out.set(true_label, false);
    out.set(swap_in, true);
    Ok(out)
}

/// Turns `floor(tau1 * n)` uniformly chosen normal examples into closed-set
/// out-of-candidate examples. Examples whose candidate set already covers
/// every class cannot be swapped and are never chosen.
pub fn inject_closedset<R: Rng + ?Sized>(
    dataset: &PartialDataset,
    tau1: f64,
    rng: &mut R,
) -> Result<PartialDataset> {
    check_probability("tau1", tau1)?;
    let required = proportion_count(tau1, dataset.len());
    let mut eligible: Vec<usize> = (0..dataset.len())
        .filter(|&i| {
            dataset.truth[i] == TruthType::Normal && dataset.masks[i].non_candidate_count() > 0
        })
        .collect();
    if eligible.len() < required {
        return Err(Error::InsufficientExamples {
            required,
            available: eligible.len(),
        });
    }
    eligible.shuffle(rng);
    let mut chosen = eligible[..required].to_vec();
    chosen.sort_unstable();

    let mut out = dataset.clone();
    for i in chosen {
        let y = out.examples[i].label.class().expect("normal examples carry a class");
        out.masks[i] = swap_out_true_label(&out.masks[i], y, rng)?;
        out.truth[i] = TruthType::ClosedSet;
    }
    Ok(out)
}

/// Appends `floor(tau2 * n)` auxiliary examples drawn without replacement.
/// Each receives a uniform pseudo-label and a candidate set from
/// [`generate_candidates`] with the same `q`.
pub fn inject_openset<R: Rng + ?Sized>(
    base: &PartialDataset,
    aux: &[LabeledExample],
    tau2: f64,
    q: f64,
    rng: &mut R,
) -> Result<PartialDataset> {
    check_probability("tau2", tau2)?;
    check_probability("q", q)?;
    let required = proportion_count(tau2, base.len());
    if aux.len() < required {
        return Err(Error::InsufficientExamples {
            required,
            available: aux.len(),
        });
    }
    if let Some(bad) = aux.iter().find(|ex| ex.dim() != base.dim) {
        return Err(Error::DimensionMismatch {
            expected: base.dim,
            actual: bad.dim(),
        });
    }
    let picks = rand::seq::index::sample(rng, aux.len(), required).into_vec();

    let mut out = base.clone();
    out.examples.reserve(required);
    for idx in picks {
        let pseudo = rng.random_range(0..base.classes);
        let mask = generate_candidates(pseudo, q, base.classes, rng)?;
        out.examples.push(LabeledExample::new(
            aux[idx].features.clone(),
            Label::OutOfSpace,
        ));
        out.masks.push(mask);
        out.truth.push(TruthType::OpenSet);
    }
    Ok(out)
}

/// Geometry of the synthetic Gaussian-blob benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobLayout {
    pub classes: usize,
    pub dim: usize,
    pub separation: f64,
    pub open_classes: usize,
}

impl BlobLayout {
    pub fn new(classes: usize, dim: usize, separation: f64, open_classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidParameter {
                name: "c",
                reason: format!("need at least 2 classes, got {classes}"),
            });
        }
        if dim < 2 {
            return Err(Error::InvalidParameter {
                name: "d",
                reason: format!("need at least 2 dimensions, got {dim}"),
            });
        }
        if !(separation > 0.0 && separation.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "separation",
                reason: format!("{separation} is not a positive finite distance"),
            });
        }
        Ok(Self {
            classes,
            dim,
            separation,
            open_classes,
        })
    }

    /// Radius of the circle carrying the in-distribution centers; adjacent
    /// centers are exactly `separation` apart.
    pub fn radius(&self) -> f64 {
        self.separation / (2.0 * (std::f64::consts::PI / self.classes as f64).sin())
    }

    /// Centers lie on a circle in the first two coordinates.
    pub fn class_centers(&self) -> Vec<Vec<f64>> {
        self.ring(self.classes, self.radius(), 0.0)
    }

    /// Open-set centers sit on a ring of twice the in-distribution radius,
    /// rotated half a class step so that (when `open_classes` divides
    /// `classes`) they fall between class directions.
    pub fn open_centers(&self) -> Vec<Vec<f64>> {
        let offset = std::f64::consts::PI / self.classes as f64;
        self.ring(self.open_classes, 2.0 * self.radius(), offset)
    }

    fn ring(&self, count: usize, radius: f64, offset: f64) -> Vec<Vec<f64>> {
        (0..count)
            .map(|k| {
                let angle = offset + 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                let mut c = vec![0.0; self.dim];
                c[0] = radius * angle.cos();
                c[1] = radius * angle.sin();
                c
            })
            .collect()
    }

    /// Draws `n_per_class` unit-variance points around every in-distribution
    /// and every open-set center.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        n_per_class: usize,
        rng: &mut R,
    ) -> (Vec<LabeledExample>, Vec<LabeledExample>) {
        let in_dist = self.sample_classes(n_per_class, rng);
        let aux = self.sample_open(n_per_class, rng);
        (in_dist, aux)
    }

    pub fn sample_classes<R: Rng + ?Sized>(
        &self,
        n_per_class: usize,
        rng: &mut R,
    ) -> Vec<LabeledExample> {
        let mut out = Vec::with_capacity(self.classes * n_per_class);
        for (y, center) in self.class_centers().iter().enumerate() {
            for _ in 0..n_per_class {
                out.push(LabeledExample::new(gaussian_around(center, rng), Label::Class(y)));
            }
        }
        out
    }

    pub fn sample_open<R: Rng + ?Sized>(
        &self,
        n_per_cluster: usize,
        rng: &mut R,
    ) -> Vec<LabeledExample> {
        let mut out = Vec::with_capacity(self.open_classes * n_per_cluster);
        for center in &self.open_centers() {
            for _ in 0..n_per_cluster {
                out.push(LabeledExample::new(gaussian_around(center, rng), Label::OutOfSpace));
            }
        }
        out
    }
}

fn gaussian_around<R: Rng + ?Sized>(center: &[f64], rng: &mut R) -> Vec<f64> {
    center
        .iter()
        .map(|&m| m + rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Convenience wrapper over [`BlobLayout::sample`].
pub fn synth_blobs<R: Rng + ?Sized>(
    classes: usize,
    n_per_class: usize,
    dim: usize,
    separation: f64,
    open_classes: usize,
    rng: &mut R,
) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>)> {
    let layout = BlobLayout::new(classes, dim, separation, open_classes)?;
    Ok(layout.sample(n_per_class, rng))
}
