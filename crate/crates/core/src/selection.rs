//! Moving-average ensemble outputs and out-of-candidate selection.
//!
//! Every example is scored from its ensemble prediction by a candidate loss
//! `l` and a non-candidate loss `l̄`. Large `l + l̄` marks an open-set
//! example, large `l - l̄` a closed-set one. Selection is rank based with
//! fixed proportions; ties go to the lower index.

use std::cmp::Ordering;

use crate::datagen::{proportion_count, CandidateMask};
use crate::error::{check_probability, Error, Result};
use crate::losses::{decoupled_ce, wooden_ce, PartLosses, NORMALIZATION_TOL};

/// Per-example moving-average predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    mean: Vec<Vec<f64>>,
    eta: f64,
    phi: usize,
}

impl EnsembleState {
    pub fn outputs(&self) -> &[Vec<f64>] {
        &self.mean
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn phi(&self) -> usize {
        self.phi
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// `f̄ <- eta * f̄ + (1 - eta) * f`.
    pub fn moving_update(&mut self, current: &[Vec<f64>]) -> Result<()> {
        check_shape(&self.mean, current)?;
        let eta = self.eta;
        for (m, f) in self.mean.iter_mut().zip(current) {
            for (a, b) in m.iter_mut().zip(f) {
                *a = eta * *a + (1.0 - eta) * b;
            }
        }
        Ok(())
    }
}

fn check_shape(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<()> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(Error::ShapeMismatch("ensemble and output tables differ".into()));
    }
    Ok(())
}

/// Arithmetic mean of `phi = history.len()` recorded epoch outputs.
pub fn warmup_ensemble(history: &[Vec<Vec<f64>>], eta: f64) -> Result<EnsembleState> {
    check_probability("eta", eta)?;
    let Some(first) = history.first() else {
        return Err(Error::EmptySet("warm-up history"));
    };
    let mut mean = first.clone();
    for epoch in &history[1..] {
        check_shape(&mean, epoch)?;
        for (m, f) in mean.iter_mut().zip(epoch) {
            for (a, b) in m.iter_mut().zip(f) {
                *a += b;
            }
        }
    }
    let phi = history.len();
    for v in mean.iter_mut().flatten() {
        *v /= phi as f64;
    }
    Ok(EnsembleState { mean, eta, phi })
}

/// Which per-example loss pair drives selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionLoss {
    #[default]
    Wooden,
    /// Mean CE items; the ablation baseline.
    Decoupled,
}

/// Which out-of-candidate pool claims contested examples first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionOrder {
    #[default]
    OpenFirst,
    ClosedFirst,
}

impl SelectionOrder {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "open_first" => Some(Self::OpenFirst),
            "closed_first" => Some(Self::ClosedFirst),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::OpenFirst => "open_first",
            Self::ClosedFirst => "closed_first",
        }
    }
}

/// Scores every example from its prediction row.
pub fn score_examples(
    outputs: &[Vec<f64>],
    masks: &[CandidateMask],
    loss: SelectionLoss,
) -> Result<Vec<PartLosses>> {
    if outputs.len() != masks.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} outputs for {} masks",
            outputs.len(),
            masks.len()
        )));
    }
    outputs
        .iter()
        .zip(masks)
        .map(|(f, m)| match loss {
            SelectionLoss::Wooden => wooden_ce(f, m),
            SelectionLoss::Decoupled => decoupled_ce(f, m),
        })
        .collect()
}

/// Pool an example is assigned to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Assigned {
    Normal,
    Closed,
    Open,
}

impl Assigned {
    pub fn as_str(self) -> &'static str {
        match self {
            Assigned::Normal => "normal",
            Assigned::Closed => "closed",
            Assigned::Open => "open",
        }
    }
}

/// Disjoint, exhaustive split into normal, closed-set and open-set pools.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    assignment: Vec<Assigned>,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl Partition {
    /// Every example normal.
    pub fn all_normal(n: usize) -> Self {
        Self {
            assignment: vec![Assigned::Normal; n],
            gamma1: 0.0,
            gamma2: 0.0,
        }
    }

    pub fn from_assignment(assignment: Vec<Assigned>, gamma1: f64, gamma2: f64) -> Self {
        Self {
            assignment,
            gamma1,
            gamma2,
        }
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn assignment(&self) -> &[Assigned] {
        &self.assignment
    }

    pub fn get(&self, i: usize) -> Assigned {
        self.assignment[i]
    }

    pub fn indices(&self, which: Assigned) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignment[i] == which).collect()
    }

    pub fn normal_idx(&self) -> Vec<usize> {
        self.indices(Assigned::Normal)
    }

    pub fn closed_idx(&self) -> Vec<usize> {
        self.indices(Assigned::Closed)
    }

    pub fn open_idx(&self) -> Vec<usize> {
        self.indices(Assigned::Open)
    }
}

fn open_score(s: &PartLosses) -> f64 {
    // An empty non-candidate set carries no evidence for either OOC type;
    // such examples rank last instead of first.
    if s.non_candidate.is_infinite() {
        f64::NEG_INFINITY
    } else {
        s.candidate + s.non_candidate
    }
}

fn closed_score(s: &PartLosses) -> f64 {
    s.candidate - s.non_candidate
}

fn normal_score(s: &PartLosses) -> f64 {
    s.non_candidate - s.candidate
}

/// Indices of the `count` largest scores among `pool`, larger first, ties
/// to the lower index.
fn top_by(pool: &[usize], count: usize, score: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut ranked: Vec<(f64, usize)> = pool.iter().map(|&i| (score(i), i)).collect();
    ranked.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
    });
    ranked.into_iter().take(count).map(|(_, i)| i).collect()
}

fn check_gammas(gamma1: f64, gamma2: f64) -> Result<()> {
    check_probability("gamma1", gamma1)?;
    check_probability("gamma2", gamma2)?;
    if gamma1 + gamma2 >= 1.0 {
        return Err(Error::InvalidParameter {
            name: "gamma1 + gamma2",
            reason: format!("{} must be below 1", gamma1 + gamma2),
        });
    }
    Ok(())
}

/// Fixed-proportion partition from precomputed loss pairs: the top
/// `floor(gamma2 * n)` by `l + l̄` become open-set, then the top
/// `floor(gamma1 * n)` of the remainder by `l - l̄` become closed-set
/// (the other way round under [`SelectionOrder::ClosedFirst`]).
pub fn partition_scores(
    scores: &[PartLosses],
    gamma1: f64,
    gamma2: f64,
    order: SelectionOrder,
) -> Result<Partition> {
    check_gammas(gamma1, gamma2)?;
    let n = scores.len();
    let n_closed = proportion_count(gamma1, n);
    let n_open = proportion_count(gamma2, n);
    let mut assignment = vec![Assigned::Normal; n];

    let steps = match order {
        SelectionOrder::OpenFirst => [(Assigned::Open, n_open), (Assigned::Closed, n_closed)],
        SelectionOrder::ClosedFirst => [(Assigned::Closed, n_closed), (Assigned::Open, n_open)],
    };
    for (pool_kind, count) in steps {
        let remaining: Vec<usize> = (0..n).filter(|&i| assignment[i] == Assigned::Normal).collect();
        let picked = match pool_kind {
            Assigned::Open => top_by(&remaining, count, |i| open_score(&scores[i])),
            _ => top_by(&remaining, count, |i| closed_score(&scores[i])),
        };
        for i in picked {
            assignment[i] = pool_kind;
        }
    }
    Ok(Partition {
        assignment,
        gamma1,
        gamma2,
    })
}

/// Wooden-loss partition of the ensemble predictions.
pub fn partition_ooc(
    ensemble: &EnsembleState,
    masks: &[CandidateMask],
    gamma1: f64,
    gamma2: f64,
) -> Result<Partition> {
    for row in ensemble.outputs() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::NotNormalized { sum });
        }
    }
    let scores = score_examples(ensemble.outputs(), masks, SelectionLoss::Wooden)?;
    partition_scores(&scores, gamma1, gamma2, SelectionOrder::OpenFirst)
}

/// Proportions requested by one step of the estimation ramp. Examples not
/// covered by any pool are left out of training for that epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RampPlan {
    pub normal: f64,
    pub closed: f64,
    pub open: f64,
}

/// Selection for a [`RampPlan`]: normals first by `l̄ - l`, then closed-set
/// by `l - l̄`, then open-set by `l + l̄`, each from what is left.
pub fn staged_selection(scores: &[PartLosses], plan: &RampPlan) -> Vec<Option<Assigned>> {
    let n = scores.len();
    let mut out = vec![None; n];
    let stages = [
        (Assigned::Normal, plan.normal),
        (Assigned::Closed, plan.closed),
        (Assigned::Open, plan.open),
    ];
    for (kind, share) in stages {
        let remaining: Vec<usize> = (0..n).filter(|&i| out[i].is_none()).collect();
        let count = proportion_count(share, n).min(remaining.len());
        let picked = match kind {
            Assigned::Normal => top_by(&remaining, count, |i| normal_score(&scores[i])),
            Assigned::Closed => top_by(&remaining, count, |i| closed_score(&scores[i])),
            Assigned::Open => top_by(&remaining, count, |i| open_score(&scores[i])),
        };
        for i in picked {
            out[i] = Some(kind);
        }
    }
    out
}

/// A training procedure driven one epoch at a time by the estimation ramp.
pub trait ProportionProbe {
    /// Trains one epoch under `plan` and returns validation accuracy in
    /// `[0, 1]`.
    fn epoch(&mut self, plan: &RampPlan) -> Result<f64>;
}

/// Linear ramp `share = i / steps` advanced once per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct RampSchedule {
    /// Initial normal share held while the model stabilizes.
    pub normal_start: f64,
    /// Denominator of the ramp; one step of `1 / steps` per epoch.
    pub steps: usize,
    /// Minimum number of epochs at the initial share.
    pub warmup_epochs: usize,
    /// Give up if accuracy has not stabilized after this many epochs.
    pub max_warmup_epochs: usize,
    /// Accuracy is stable once the last `stable_window` values span at
    /// most `stable_tol`.
    pub stable_window: usize,
    pub stable_tol: f64,
}

impl Default for RampSchedule {
    fn default() -> Self {
        Self {
            normal_start: 0.5,
            steps: 50,
            warmup_epochs: 10,
            max_warmup_epochs: 60,
            stable_window: 5,
            stable_tol: 0.02,
        }
    }
}

/// Result of the proportion estimation ramp.
#[derive(Debug, Clone, PartialEq)]
pub struct ProportionEstimate {
    pub normal: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Validation accuracy after every probe epoch.
    pub trace: Vec<f64>,
}

/// Three-stage ramp: grow the normal share until validation accuracy falls
/// more than `epsilon` below its best, then the closed-set share, then the
/// open-set share. Each stage keeps the last share before the drop.
pub fn estimate_proportions<P: ProportionProbe>(
    probe: &mut P,
    epsilon: f64,
    schedule: &RampSchedule,
) -> Result<ProportionEstimate> {
    if schedule.steps == 0 {
        return Err(Error::InvalidParameter {
            name: "steps",
            reason: "ramp needs at least one step".into(),
        });
    }
    check_probability("normal_start", schedule.normal_start)?;
    let steps = schedule.steps as f64;
    let mut trace = Vec::new();
    let mut plan = RampPlan {
        normal: schedule.normal_start,
        closed: 0.0,
        open: 0.0,
    };

    loop {
        trace.push(probe.epoch(&plan)?);
        let epochs = trace.len();
        if epochs >= schedule.warmup_epochs.max(schedule.stable_window) {
            let window = &trace[epochs - schedule.stable_window.max(1)..];
            let hi = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = window.iter().copied().fold(f64::INFINITY, f64::min);
            if hi - lo <= schedule.stable_tol {
                break;
            }
        }
        if epochs >= schedule.max_warmup_epochs {
            return Err(Error::NotStabilized { epochs });
        }
    }

    let start_step = (schedule.normal_start * steps).round() as usize;
    plan.normal = ramp_stage(probe, &mut trace, epsilon, start_step, schedule.steps, Stage::Normal, 1.0, plan)?;
    let closed_cap = 1.0 - plan.normal;
    plan.closed = ramp_stage(probe, &mut trace, epsilon, 0, schedule.steps, Stage::Closed, closed_cap, plan)?;
    let open_cap = (1.0 - plan.normal - plan.closed).max(0.0);
    plan.open = ramp_stage(probe, &mut trace, epsilon, 0, schedule.steps, Stage::Open, open_cap, plan)?;

    Ok(ProportionEstimate {
        normal: plan.normal,
        gamma1: plan.closed,
        gamma2: plan.open,
        trace,
    })
}

#[derive(Debug, Clone, Copy)]
enum Stage {
    Normal,
    Closed,
    Open,
}

impl Stage {
    fn set(self, plan: &mut RampPlan, share: f64) {
        match self {
            Stage::Normal => plan.normal = share,
            Stage::Closed => plan.closed = share,
            Stage::Open => plan.open = share,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn ramp_stage<P: ProportionProbe>(
    probe: &mut P,
    trace: &mut Vec<f64>,
    epsilon: f64,
    start_step: usize,
    steps: usize,
    stage: Stage,
    cap: f64,
    mut plan: RampPlan,
) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    let mut last_ok = (start_step as f64 / steps as f64).min(cap);
    let mut previous = None;
    for i in start_step..=steps {
        let share = (i as f64 / steps as f64).min(cap);
        if previous == Some(share) {
            // The share hit its cap; further steps change nothing.
            break;
        }
        previous = Some(share);
        stage.set(&mut plan, share);
        let acc = probe.epoch(&plan)?;
        trace.push(acc);
        if best - acc > epsilon {
            return Ok(last_ok);
        }
        best = best.max(acc);
        last_ok = share;
    }
    Ok(last_ok)
}
