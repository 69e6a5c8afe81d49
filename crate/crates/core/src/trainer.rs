//! End-to-end training: warm-up with ordinary disambiguation, ensemble
//! maintenance, per-epoch pool selection, per-batch treatment of each
//! pool, and metric collection.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::config::{AblationSwitch, RcgCadence, TrainConfig};
use crate::datagen::{CandidateMask, LabeledExample, PartialDataset, TruthType};
use crate::disambiguation::{update_conf_normal, update_conf_reversed, ConfidenceTable, OpenSetAssignment};
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::losses::{mask_target, total_loss, PartLosses};
use crate::model::{argmax, check_target, sgd_step, Gradients, Mlp, OptimizerState};
use crate::selection::{
    partition_scores, score_examples, staged_selection, warmup_ensemble, Assigned, EnsembleState,
    Partition, ProportionProbe, RampPlan, SelectionLoss,
};
use crate::seeding::{stream_rng, Stream};

/// Examples per gradient chunk. Chunk gradients are summed in order, so
/// results do not depend on the thread count.
const CHUNK: usize = 16;

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss_normal: f64,
    pub loss_closed: f64,
    pub loss_open: f64,
    pub loss_total: f64,
    pub test_accuracy: f64,
    /// `None` while no partition exists or when the pool is empty.
    pub precision_normal: Option<f64>,
    pub precision_closed: Option<f64>,
    pub precision_open: Option<f64>,
    /// Share of normal and closed-set examples whose active confidence row
    /// peaks at the hidden true label.
    pub disambiguation_rate: f64,
    /// Frobenius norm of the confidence-table change over the epoch.
    pub confidence_delta: f64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,loss_normal,loss_closed,loss_open,loss_total,\
test_accuracy,precision_normal,precision_closed,precision_open,disambiguation_rate,confidence_delta";

    pub fn to_csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            fmt_f64(self.loss_normal),
            fmt_f64(self.loss_closed),
            fmt_f64(self.loss_open),
            fmt_f64(self.loss_total),
            fmt_f64(self.test_accuracy),
            opt(self.precision_normal),
            opt(self.precision_closed),
            opt(self.precision_open),
            fmt_f64(self.disambiguation_rate),
            fmt_f64(self.confidence_delta),
        )
    }
}

/// The metrics file: header plus one row per epoch.
pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut s = String::from(EpochMetrics::CSV_HEADER);
    s.push('\n');
    for m in metrics {
        s.push_str(&m.to_csv_row());
        s.push('\n');
    }
    s
}

/// Mean batch losses of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub normal: f64,
    pub closed: f64,
    pub open: f64,
}

impl LossBreakdown {
    pub fn total(&self, alpha: f64, beta: f64) -> f64 {
        total_loss(self.normal, self.closed, self.open, alpha, beta)
    }
}

/// Frobenius norm of the difference between two confidence tables, over
/// both the ordinary and the reversed rows.
pub fn confidence_delta(current: &ConfidenceTable, previous: &ConfidenceTable) -> Result<f64> {
    let pairs = [
        (current.normal_rows(), previous.normal_rows()),
        (current.reversed_rows(), previous.reversed_rows()),
    ];
    let mut sq = 0.0;
    for (a, b) in pairs {
        if a.len() != b.len() {
            return Err(Error::ShapeMismatch("confidence tables differ in rows".into()));
        }
        for (ra, rb) in a.iter().zip(b) {
            if ra.len() != rb.len() {
                return Err(Error::ShapeMismatch("confidence rows differ in length".into()));
            }
            sq += ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
    }
    Ok(sq.sqrt())
}

/// `|assigned ∩ truth| / |assigned|` per pool; `None` for an empty pool.
pub fn selection_precision(partition: &Partition, truth: &[TruthType]) -> [Option<f64>; 3] {
    let pools = [
        (Assigned::Normal, TruthType::Normal),
        (Assigned::Closed, TruthType::ClosedSet),
        (Assigned::Open, TruthType::OpenSet),
    ];
    pools.map(|(pool, tt)| {
        let members = partition.indices(pool);
        if members.is_empty() {
            None
        } else {
            let hits = members.iter().filter(|&&i| truth[i] == tt).count();
            Some(hits as f64 / members.len() as f64)
        }
    })
}

/// Classification accuracy on labeled in-distribution examples.
pub fn accuracy(model: &Mlp, examples: &[LabeledExample]) -> Result<f64> {
    let labeled: Vec<&LabeledExample> = examples.iter().filter(|e| e.label.class().is_some()).collect();
    if labeled.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for ex in &labeled {
        if Some(model.predict(&ex.features)?) == ex.label.class() {
            hits += 1;
        }
    }
    Ok(hits as f64 / labeled.len() as f64)
}

fn disambiguation_rate(
    table: &ConfidenceTable,
    partition: Option<&Partition>,
    dataset: &PartialDataset,
) -> f64 {
    let mut total = 0usize;
    let mut hits = 0usize;
    for (i, ex) in dataset.examples().iter().enumerate() {
        let Some(y) = ex.label.class() else {
            continue;
        };
        total += 1;
        let row = match partition.map(|p| p.get(i)) {
            Some(Assigned::Closed) => table.reversed(i),
            _ => table.normal(i),
        };
        if argmax(row) == y {
            hits += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Assembles the metrics of one finished epoch.
#[allow(clippy::too_many_arguments)]
pub fn eval_metrics(
    epoch: usize,
    model: &Mlp,
    partition: Option<&Partition>,
    table: &ConfidenceTable,
    dataset: &PartialDataset,
    test: &[LabeledExample],
    losses: LossBreakdown,
    config: &TrainConfig,
    confidence_delta: f64,
) -> Result<EpochMetrics> {
    let [precision_normal, precision_closed, precision_open] =
        partition.map_or([None; 3], |p| selection_precision(p, dataset.truth()));
    Ok(EpochMetrics {
        epoch,
        loss_normal: losses.normal,
        loss_closed: losses.closed,
        loss_open: losses.open,
        loss_total: losses.total(config.alpha, config.beta),
        test_accuracy: accuracy(model, test)?,
        precision_normal,
        precision_closed,
        precision_open,
        disambiguation_rate: disambiguation_rate(table, partition, dataset),
        confidence_delta,
    })
}

/// Intra-run worker count from `OOC_PLL_THREADS`, default 1.
pub fn threads_from_env() -> usize {
    std::env::var("OOC_PLL_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&t: &usize| t > 0)
        .unwrap_or(1)
}

struct Workers {
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl Workers {
    fn new(threads: usize) -> Self {
        #[cfg(feature = "parallel")]
        {
            let pool = (threads > 1)
                .then(|| rayon::ThreadPoolBuilder::new().num_threads(threads).build().ok())
                .flatten();
            Self { pool }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = threads;
            Self {}
        }
    }

    fn map<T: Send, U: Send + Sync>(&self, items: &[U], f: impl Fn(&U) -> T + Sync + Send) -> Vec<T> {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| items.par_iter().map(&f).collect());
        }
        items.iter().map(f).collect()
    }
}

fn predict_all(model: &Mlp, examples: &[LabeledExample], workers: &Workers) -> Vec<Vec<f64>> {
    let chunks: Vec<&[LabeledExample]> = examples.chunks(256).collect();
    workers
        .map(&chunks, |chunk| {
            chunk
                .iter()
                .map(|e| model.forward_unchecked(&e.features))
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect()
}

/// One weighted soft-target term of a batch objective.
struct Term<'a> {
    index: usize,
    features: &'a [f64],
    target: Vec<f64>,
    scale: f64,
    pool: Assigned,
}

/// Sum of `scale * grad` over all terms, and each term's loss and
/// prediction.
fn batch_gradients(model: &Mlp, terms: &[Term<'_>], workers: &Workers) -> (Gradients, Vec<(f64, Vec<f64>)>) {
    let chunks: Vec<&[Term<'_>]> = terms.chunks(CHUNK).collect();
    let parts = workers.map(&chunks, |chunk| {
        let mut g = model.zeros_like();
        let out: Vec<(f64, Vec<f64>)> = chunk
            .iter()
            .map(|t| model.accumulate_unchecked(t.features, &t.target, t.scale, &mut g))
            .collect();
        (g, out)
    });
    let mut grads = model.zeros_like();
    let mut outputs = Vec::with_capacity(terms.len());
    for (g, out) in parts {
        grads.add_scaled(&g, 1.0);
        outputs.extend(out);
    }
    (grads, outputs)
}

/// Mutable state shared by full training and the proportion probe.
struct Learner<'a> {
    config: &'a TrainConfig,
    dataset: &'a PartialDataset,
    model: Mlp,
    opt: OptimizerState,
    table: ConfidenceTable,
    open: OpenSetAssignment,
    shuffle_rng: ChaCha8Rng,
    candidate_rng: ChaCha8Rng,
    workers: Workers,
}

impl<'a> Learner<'a> {
    fn new(config: &'a TrainConfig, dataset: &'a PartialDataset, threads: usize) -> Result<Self> {
        let sizes = config.layer_sizes(dataset.dim(), dataset.classes());
        let model = Mlp::new(&sizes, &mut stream_rng(config.seed, Stream::Init))?;
        let opt = OptimizerState::new(
            &model,
            config.base_lr,
            config.momentum,
            config.weight_decay,
            config.t_max,
        )?;
        Ok(Self {
            config,
            dataset,
            table: ConfidenceTable::new(dataset.masks()),
            open: OpenSetAssignment::new(dataset.len(), config.rho)?,
            model,
            opt,
            shuffle_rng: stream_rng(config.seed, Stream::Shuffle),
            candidate_rng: stream_rng(config.seed, Stream::Candidates),
            workers: Workers::new(threads),
        })
    }

    fn predict_train(&self) -> Vec<Vec<f64>> {
        predict_all(&self.model, self.dataset.examples(), &self.workers)
    }

    fn regenerate_open(&mut self, assignment: &[Option<Assigned>]) -> Result<()> {
        if self.config.rcg_cadence == RcgCadence::Epoch {
            let open: Vec<usize> = (0..assignment.len())
                .filter(|&i| assignment[i] == Some(Assigned::Open))
                .collect();
            self.open
                .regenerate(&open, self.dataset.classes(), &mut self.candidate_rng)?;
        }
        Ok(())
    }

    /// One pass over the examples with a pool assigned; `None` entries are
    /// skipped.
    fn train_epoch(&mut self, epoch: usize, assignment: &[Option<Assigned>]) -> Result<LossBreakdown> {
        let cfg = self.config;
        let masks = self.dataset.masks();
        let examples = self.dataset.examples();
        let classes = self.dataset.classes();

        let mut order: Vec<usize> = (0..self.dataset.len()).filter(|&i| assignment[i].is_some()).collect();
        order.shuffle(&mut self.shuffle_rng);

        let mut sums = LossBreakdown::default();
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let count = |pool| batch.iter().filter(|&&i| assignment[i] == Some(pool)).count();
            let div = |pool| cfg.loss_norm.divisor(count(pool), batch.len());
            let (div_n, div_c, div_o) = (div(Assigned::Normal), div(Assigned::Closed), div(Assigned::Open));

            let mut terms = Vec::with_capacity(batch.len());
            for &i in batch {
                let pool = assignment[i].expect("filtered above");
                let (target, scale) = match pool {
                    Assigned::Normal => (self.table.normal(i).to_vec(), 1.0 / div_n.unwrap_or(1.0)),
                    Assigned::Closed => {
                        let row = if cfg.ablations.disable_rld || masks[i].non_candidate_count() == 0 {
                            self.table.normal(i)
                        } else {
                            self.table.reversed(i)
                        };
                        (row.to_vec(), cfg.alpha / div_c.unwrap_or(1.0))
                    }
                    Assigned::Open => {
                        let target = if cfg.ablations.disable_rcg {
                            mask_target(&masks[i])
                        } else {
                            if cfg.rcg_cadence == RcgCadence::Batch || self.open.get(i).is_none() {
                                self.open.redraw(i, classes, &mut self.candidate_rng)?;
                            }
                            mask_target(self.open.get(i).expect("drawn above"))
                        };
                        (target, cfg.beta / div_o.unwrap_or(1.0))
                    }
                };
                terms.push(Term {
                    index: i,
                    features: &examples[i].features,
                    target,
                    scale,
                    pool,
                });
            }

            let (grads, outputs) = batch_gradients(&self.model, &terms, &self.workers);

            let mut batch_loss = LossBreakdown::default();
            for (term, (loss, _)) in terms.iter().zip(&outputs) {
                match term.pool {
                    Assigned::Normal => batch_loss.normal += loss / div_n.unwrap_or(1.0),
                    Assigned::Closed => batch_loss.closed += loss / div_c.unwrap_or(1.0),
                    Assigned::Open => batch_loss.open += loss / div_o.unwrap_or(1.0),
                }
            }
            for (value, pool) in [
                (batch_loss.normal, Assigned::Normal),
                (batch_loss.closed, Assigned::Closed),
                (batch_loss.open, Assigned::Open),
            ] {
                let partition = pool_name(pool);
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, partition });
                }
            }

            sgd_step(&mut self.model, &grads, &mut self.opt)?;
            if self.model.params().any(|p| !p.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, partition: "parameters" });
            }

            if !cfg.ablations.disable_ld {
                for (term, (_, probs)) in terms.iter().zip(&outputs) {
                    // Outputs that put no mass on a row's support mean training diverged.
                    self.update_confidence(term.index, term.pool, probs, &masks[term.index])
                        .map_err(|e| match e {
                            Error::NonFinite(_) => Error::NonFiniteLoss {
                                epoch,
                                partition: pool_name(term.pool),
                            },
                            other => other,
                        })?;
                }
            }

            sums.normal += batch_loss.normal;
            sums.closed += batch_loss.closed;
            sums.open += batch_loss.open;
            batches += 1;
        }
        let b = batches.max(1) as f64;
        Ok(LossBreakdown {
            normal: sums.normal / b,
            closed: sums.closed / b,
            open: sums.open / b,
        })
    }

    fn update_confidence(
        &mut self,
        i: usize,
        pool: Assigned,
        probs: &[f64],
        mask: &CandidateMask,
    ) -> Result<()> {
        let norm = self.config.ld_norm;
        match pool {
            Assigned::Normal => self.table.set_normal(i, update_conf_normal(probs, mask, norm)?),
            Assigned::Closed if self.config.ablations.disable_rld || mask.non_candidate_count() == 0 => {
                self.table.set_normal(i, update_conf_normal(probs, mask, norm)?)
            }
            Assigned::Closed => self.table.set_reversed(i, update_conf_reversed(probs, mask, norm)?),
            Assigned::Open => {}
        }
        Ok(())
    }
}

fn pool_name(pool: Assigned) -> &'static str {
    match pool {
        Assigned::Normal => "normal",
        Assigned::Closed => "closed-set",
        Assigned::Open => "open-set",
    }
}

/// What an observer sees after every epoch.
pub struct EpochView<'a> {
    pub metrics: &'a EpochMetrics,
    /// Selection losses behind the epoch's partition.
    pub scores: Option<&'a [PartLosses]>,
    pub partition: Option<&'a Partition>,
    pub table: &'a ConfidenceTable,
    pub dataset: &'a PartialDataset,
}

/// Final state of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub model: Mlp,
    pub table: ConfidenceTable,
    pub partition: Option<Partition>,
}

impl TrainOutcome {
    pub fn final_metrics(&self) -> &EpochMetrics {
        self.metrics.last().expect("at least one epoch")
    }
}

fn check_inputs(config: &TrainConfig, dataset: &PartialDataset, test: &[LabeledExample]) -> Result<()> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptySet("training dataset"));
    }
    if let Some(bad) = test.iter().find(|e| e.dim() != dataset.dim()) {
        return Err(Error::DimensionMismatch {
            expected: dataset.dim(),
            actual: bad.dim(),
        });
    }
    if let Some(y) = test
        .iter()
        .filter_map(|e| e.label.class())
        .find(|&y| y >= dataset.classes())
    {
        return Err(Error::LabelOutOfRange {
            label: y as i64,
            classes: dataset.classes(),
        });
    }
    for mask in dataset.masks() {
        check_target(&mask_target(mask), dataset.classes())?;
    }
    Ok(())
}

pub fn run_training(
    config: &TrainConfig,
    dataset: &PartialDataset,
    test: &[LabeledExample],
) -> Result<TrainOutcome> {
    run_training_observed(config, dataset, test, threads_from_env(), &mut |_| Ok(()))
}

/// [`run_training`] with an explicit worker count and a per-epoch observer.
pub fn run_training_observed(
    config: &TrainConfig,
    dataset: &PartialDataset,
    test: &[LabeledExample],
    threads: usize,
    observer: &mut dyn FnMut(&EpochView<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    check_inputs(config, dataset, test)?;
    let mut learner = Learner::new(config, dataset, threads)?;
    let n = dataset.len();
    // With both proportions at zero there is nothing to select.
    let selects = config.gamma1() > 0.0 || config.gamma2() > 0.0;
    let start = if selects { config.selection_start() } else { config.t_max };
    let selection_loss = if config.ablations.disable_wce {
        SelectionLoss::Decoupled
    } else {
        SelectionLoss::Wooden
    };
    let history_len = if start == 0 { 1 } else { config.phi };

    let mut history: VecDeque<Vec<Vec<f64>>> = VecDeque::with_capacity(history_len);
    if start == 0 {
        history.push_back(learner.predict_train());
    }
    let mut ensemble: Option<EnsembleState> = None;
    let mut last_outputs: Option<Vec<Vec<f64>>> = None;
    let mut metrics = Vec::with_capacity(config.t_max);
    let mut partition: Option<Partition> = None;

    for epoch in 0..config.t_max {
        learner.opt.epoch = epoch;
        let mut scores = None;
        if epoch >= start {
            let ens = match (ensemble.as_mut(), last_outputs.as_ref()) {
                (Some(ens), Some(out)) => {
                    ens.moving_update(out)?;
                    ens
                }
                _ => ensemble.insert(warmup_ensemble(history.make_contiguous(), config.eta)?),
            };
            let s = score_examples(ens.outputs(), dataset.masks(), selection_loss)?;
            partition = Some(partition_scores(
                &s,
                config.gamma1(),
                config.gamma2(),
                config.selection_order,
            )?);
            scores = Some(s);
        }
        let assignment: Vec<Option<Assigned>> = match &partition {
            Some(p) => p.assignment().iter().copied().map(Some).collect(),
            None => vec![Some(Assigned::Normal); n],
        };
        if partition.is_some() {
            learner.regenerate_open(&assignment)?;
        }

        let before = learner.table.clone();
        let losses = learner.train_epoch(epoch, &assignment)?;

        let outputs = learner.predict_train();
        if epoch < start && epoch + config.phi >= start {
            history.push_back(outputs.clone());
        }
        last_outputs = Some(outputs);

        let delta = confidence_delta(&learner.table, &before)?;
        let m = eval_metrics(
            epoch,
            &learner.model,
            partition.as_ref(),
            &learner.table,
            dataset,
            test,
            losses,
            config,
            delta,
        )?;
        observer(&EpochView {
            metrics: &m,
            scores: scores.as_deref(),
            partition: partition.as_ref(),
            table: &learner.table,
            dataset,
        })?;
        metrics.push(m);
    }

    Ok(TrainOutcome {
        metrics,
        model: learner.model,
        table: learner.table,
        partition,
    })
}

/// A full-method run and its single-switch ablation under identical seeds.
#[derive(Debug, Clone)]
pub struct AblationRun {
    pub switch: AblationSwitch,
    pub full: TrainOutcome,
    pub ablated: TrainOutcome,
}

/// Config with exactly `switch` toggled on; fails if `config` already has
/// a switch set.
pub fn ablated_config(config: &TrainConfig, switch: AblationSwitch) -> Result<TrainConfig> {
    let active = config.ablations.active();
    if !active.is_empty() {
        return Err(Error::InvalidParameter {
            name: "ablations",
            reason: format!(
                "base config already disables {}; one switch at a time",
                active.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            ),
        });
    }
    let mut out = config.clone();
    out.ablations.set(switch, true);
    Ok(out)
}

pub fn run_ablation(
    config: &TrainConfig,
    dataset: &PartialDataset,
    test: &[LabeledExample],
    switch: AblationSwitch,
) -> Result<AblationRun> {
    let ablated_cfg = ablated_config(config, switch)?;
    Ok(AblationRun {
        switch,
        full: run_training(config, dataset, test)?,
        ablated: run_training(&ablated_cfg, dataset, test)?,
    })
}

/// Training procedure handle for [`crate::selection::estimate_proportions`].
///
/// Construction runs the ordinary warm-up; every probe epoch then updates
/// the ensemble, selects pools for the requested plan, trains on the
/// selected examples only and reports accuracy on the clean validation set.
pub struct RampProbe<'a> {
    learner: Learner<'a>,
    ensemble: EnsembleState,
    last_outputs: Vec<Vec<f64>>,
    validation: &'a [LabeledExample],
    epoch: usize,
}

impl<'a> RampProbe<'a> {
    pub fn new(
        config: &'a TrainConfig,
        dataset: &'a PartialDataset,
        validation: &'a [LabeledExample],
    ) -> Result<Self> {
        check_inputs(config, dataset, validation)?;
        let mut learner = Learner::new(config, dataset, threads_from_env())?;
        // Constant learning rate: the ramp length is not known up front.
        learner.opt.total_epochs = 0;
        let all = vec![Some(Assigned::Normal); dataset.len()];
        let mut history = Vec::with_capacity(config.phi);
        let warmup = config.t_warmup.max(1);
        for epoch in 0..warmup {
            learner.train_epoch(epoch, &all)?;
            if epoch + config.phi >= warmup {
                history.push(learner.predict_train());
            }
        }
        let ensemble = warmup_ensemble(&history, config.eta)?;
        let last_outputs = history.pop().expect("phi >= 1");
        Ok(Self {
            learner,
            ensemble,
            last_outputs,
            validation,
            epoch: warmup,
        })
    }
}

impl ProportionProbe for RampProbe<'_> {
    fn epoch(&mut self, plan: &RampPlan) -> Result<f64> {
        self.ensemble.moving_update(&self.last_outputs)?;
        let scores = score_examples(
            self.ensemble.outputs(),
            self.learner.dataset.masks(),
            SelectionLoss::Wooden,
        )?;
        let assignment = staged_selection(&scores, plan);
        self.learner.regenerate_open(&assignment)?;
        self.learner.train_epoch(self.epoch, &assignment)?;
        self.epoch += 1;
        self.last_outputs = self.learner.predict_train();
        accuracy(&self.learner.model, self.validation)
    }
}
