//! Browser bindings for the interactive page in `www/`.
//!
//! The plain functions hold the logic and run natively in tests; the
//! `#[wasm_bindgen]` items only convert errors.

use ooc_pll::datagen::{CandidateMask, TruthType};
use ooc_pll::disambiguation::{update_conf_normal, update_conf_reversed, LdNorm};
use ooc_pll::losses::{decoupled_ce, wooden_ce};
use ooc_pll::model::softmax;
use ooc_pll::selection::Assigned;
use ooc_pll::synth::build_benchmark;
use ooc_pll::trainer::run_training_observed;
use ooc_pll::TrainConfig;
use wasm_bindgen::prelude::*;

/// Code used for examples not placed in any pool (before selection starts).
pub const UNASSIGNED: u8 = 3;

fn parse_mask(mask: &str, classes: usize) -> Result<CandidateMask, String> {
    let m = CandidateMask::from_bit_string(mask.trim()).map_err(|e| e.to_string())?;
    if m.classes() != classes {
        return Err(format!("mask has {} bits for {classes} classes", m.classes()));
    }
    Ok(m)
}

/// `[p..., wooden l, wooden l̄, decoupled l, decoupled l̄]` for the
/// softmax of `logits`. An empty non-candidate set gives infinite `l̄`.
pub fn loss_table(logits: &[f64], mask: &str) -> Result<Vec<f64>, String> {
    let m = parse_mask(mask, logits.len())?;
    let probs = softmax(logits);
    let w = wooden_ce(&probs, &m).map_err(|e| e.to_string())?;
    let d = decoupled_ce(&probs, &m).map_err(|e| e.to_string())?;
    let mut out = probs;
    out.extend([w.candidate, w.non_candidate, d.candidate, d.non_candidate]);
    Ok(out)
}

/// One disambiguation step on the candidate set, or on its complement when
/// `reversed` is set.
pub fn disambiguation_row(logits: &[f64], mask: &str, reversed: bool) -> Result<Vec<f64>, String> {
    let m = parse_mask(mask, logits.len())?;
    let probs = softmax(logits);
    let row = if reversed {
        update_conf_reversed(&probs, &m, LdNorm::Masked)
    } else {
        update_conf_normal(&probs, &m, LdNorm::Masked)
    };
    row.map_err(|e| e.to_string())
}

fn truth_code(t: TruthType) -> u8 {
    match t {
        TruthType::Normal => 0,
        TruthType::ClosedSet => 1,
        TruthType::OpenSet => 2,
    }
}

fn pool_code(a: Assigned) -> u8 {
    match a {
        Assigned::Normal => 0,
        Assigned::Closed => 1,
        Assigned::Open => 2,
    }
}

/// A finished small training run with every epoch's partition kept for
/// scrubbing.
#[wasm_bindgen]
pub struct Run {
    coords: Vec<f64>,
    truth: Vec<u8>,
    assigned: Vec<Vec<u8>>,
    accuracy: Vec<f64>,
    precision: Vec<[f64; 3]>,
    warmup: usize,
}

impl Run {
    pub fn train(seed: u32, tau1: f64, tau2: f64, epochs: usize) -> Result<Run, String> {
        let cfg = TrainConfig {
            n_per_class: 200,
            test_per_class: 100,
            tau1,
            tau2,
            beta: 0.5,
            t_max: epochs,
            // Selection needs a converged warm-up; a poor first partition
            // hands many normal rows random-candidate targets.
            t_warmup: (epochs * 5 / 12).max(1),
            phi: 3,
            seed: seed as u64,
            ..TrainConfig::default()
        };
        cfg.validate().map_err(|e| e.to_string())?;
        let b = build_benchmark(&cfg).map_err(|e| e.to_string())?;
        let n = b.train.len();
        let mut assigned = Vec::with_capacity(epochs);
        let mut precision = Vec::with_capacity(epochs);
        let outcome = run_training_observed(&cfg, &b.train, &b.test, 1, &mut |view| {
            let codes = match view.partition {
                Some(p) => p.assignment().iter().map(|&a| pool_code(a)).collect(),
                None => vec![UNASSIGNED; n],
            };
            assigned.push(codes);
            let m = view.metrics;
            precision.push([m.precision_normal, m.precision_closed, m.precision_open].map(|p| p.unwrap_or(f64::NAN)));
            Ok(())
        })
        .map_err(|e| e.to_string())?;
        Ok(Run {
            coords: b.train.examples().iter().flat_map(|e| e.features.iter().copied()).collect(),
            truth: b.train.truth().iter().map(|&t| truth_code(t)).collect(),
            assigned,
            accuracy: outcome.metrics.iter().map(|m| m.test_accuracy).collect(),
            precision,
            warmup: cfg.t_warmup,
        })
    }
}

#[wasm_bindgen]
impl Run {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, tau1: f64, tau2: f64, epochs: usize) -> Result<Run, JsError> {
        Run::train(seed, tau1, tau2, epochs).map_err(|e| JsError::new(&e))
    }

    /// Interleaved `x, y` of every training example.
    pub fn coords(&self) -> Vec<f64> {
        self.coords.clone()
    }

    /// Hidden type per example: 0 normal, 1 closed-set, 2 open-set.
    pub fn truth(&self) -> Vec<u8> {
        self.truth.clone()
    }

    pub fn epochs(&self) -> usize {
        self.accuracy.len()
    }

    pub fn warmup(&self) -> usize {
        self.warmup
    }

    /// Pool per example after `epoch`'s selection, same codes as
    /// [`Run::truth`] plus [`UNASSIGNED`].
    pub fn assigned(&self, epoch: usize) -> Vec<u8> {
        self.assigned.get(epoch).cloned().unwrap_or_default()
    }

    pub fn accuracy(&self, epoch: usize) -> f64 {
        self.accuracy.get(epoch).copied().unwrap_or(f64::NAN)
    }

    /// Normal, closed and open precision; NaN before selection.
    pub fn precision(&self, epoch: usize) -> Vec<f64> {
        self.precision.get(epoch).map(|p| p.to_vec()).unwrap_or_default()
    }
}

#[wasm_bindgen(js_name = lossTable)]
pub fn loss_table_js(logits: &[f64], mask: &str) -> Result<Vec<f64>, JsError> {
    loss_table(logits, mask).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = disambiguate)]
pub fn disambiguation_row_js(logits: &[f64], mask: &str, reversed: bool) -> Result<Vec<f64>, JsError> {
    disambiguation_row(logits, mask, reversed).map_err(|e| JsError::new(&e))
}
