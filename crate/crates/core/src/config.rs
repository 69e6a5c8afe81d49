//! Run configuration and its flat `key = value` text format.
//!
//! Lines hold one `key = value` pair; `#` starts a comment. Unknown or
//! repeated keys are errors, and every error names the offending key.

use std::fmt::Write as _;

use crate::datagen::proportion_count;
use crate::disambiguation::LdNorm;
use crate::error::{Error, Result};
use crate::losses::LossNorm;
use crate::selection::SelectionOrder;

/// When open-set examples receive fresh random candidate sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RcgCadence {
    #[default]
    Epoch,
    Batch,
}

impl RcgCadence {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "epoch" => Some(Self::Epoch),
            "batch" => Some(Self::Batch),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Epoch => "epoch",
            Self::Batch => "batch",
        }
    }
}

/// Component removed in an ablation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AblationSwitch {
    /// Confidences stay at their uniform initialization.
    Ld,
    /// Closed-set pool is disambiguated over candidates, like normals.
    Rld,
    /// Open-set pool keeps its original candidate sets.
    Rcg,
    /// Selection uses mean CE items instead of the minimum.
    Wce,
    /// Selection starts at epoch 0.
    Warmup,
}

impl AblationSwitch {
    pub const ALL: [AblationSwitch; 5] = [
        AblationSwitch::Ld,
        AblationSwitch::Rld,
        AblationSwitch::Rcg,
        AblationSwitch::Wce,
        AblationSwitch::Warmup,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AblationSwitch::Ld => "ld",
            AblationSwitch::Rld => "rld",
            AblationSwitch::Rcg => "rcg",
            AblationSwitch::Wce => "wce",
            AblationSwitch::Warmup => "warmup",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            AblationSwitch::Ld => "disable_ld",
            AblationSwitch::Rld => "disable_rld",
            AblationSwitch::Rcg => "disable_rcg",
            AblationSwitch::Wce => "disable_wce",
            AblationSwitch::Warmup => "disable_warmup",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ablations {
    pub disable_ld: bool,
    pub disable_rld: bool,
    pub disable_rcg: bool,
    pub disable_wce: bool,
    pub disable_warmup: bool,
}

impl Ablations {
    pub fn get(&self, s: AblationSwitch) -> bool {
        match s {
            AblationSwitch::Ld => self.disable_ld,
            AblationSwitch::Rld => self.disable_rld,
            AblationSwitch::Rcg => self.disable_rcg,
            AblationSwitch::Wce => self.disable_wce,
            AblationSwitch::Warmup => self.disable_warmup,
        }
    }

    pub fn set(&mut self, s: AblationSwitch, on: bool) {
        let slot = match s {
            AblationSwitch::Ld => &mut self.disable_ld,
            AblationSwitch::Rld => &mut self.disable_rld,
            AblationSwitch::Rcg => &mut self.disable_rcg,
            AblationSwitch::Wce => &mut self.disable_wce,
            AblationSwitch::Warmup => &mut self.disable_warmup,
        };
        *slot = on;
    }

    pub fn active(&self) -> Vec<AblationSwitch> {
        AblationSwitch::ALL.into_iter().filter(|&s| self.get(s)).collect()
    }
}

/// Every tunable of data synthesis and training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub q: f64,
    pub tau1: f64,
    pub tau2: f64,
    /// Selection proportions; `None` means the true corruption shares of
    /// the final dataset, `tau1 / (1 + tau2)` and `tau2 / (1 + tau2)`.
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    pub phi: usize,
    pub t_warmup: usize,
    pub t_max: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub rho: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub loss_norm: LossNorm,
    pub ld_norm: LdNorm,
    pub selection_order: SelectionOrder,
    pub rcg_cadence: RcgCadence,
    pub ablations: Ablations,
    pub dump_selection: bool,
    // Synthetic benchmark.
    pub classes: usize,
    pub n_per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub open_classes: usize,
    pub test_per_class: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            q: 0.3,
            tau1: 0.2,
            tau2: 0.4,
            gamma1: None,
            gamma2: None,
            alpha: 1.0,
            beta: 0.1,
            eta: 0.9,
            phi: 5,
            t_warmup: 30,
            t_max: 100,
            batch_size: 128,
            base_lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.001,
            rho: 0.5,
            seed: 0,
            hidden: vec![64, 64],
            loss_norm: LossNorm::Partition,
            ld_norm: LdNorm::Masked,
            selection_order: SelectionOrder::OpenFirst,
            rcg_cadence: RcgCadence::Epoch,
            ablations: Ablations::default(),
            dump_selection: false,
            classes: 10,
            n_per_class: 500,
            dim: 2,
            separation: 6.0,
            open_classes: 5,
            test_per_class: 200,
        }
    }
}

fn invalid(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| invalid(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(invalid(key, format!("`{value}` is not a boolean"))),
    }
}

fn parse_enum<T>(key: &str, value: &str, f: impl Fn(&str) -> Option<T>) -> Result<T> {
    f(value).ok_or_else(|| invalid(key, format!("unknown value `{value}`")))
}

impl TrainConfig {
    /// Names accepted by [`TrainConfig::set`].
    pub const KEYS: &'static [&'static str] = &[
        "q",
        "tau1",
        "tau2",
        "gamma1",
        "gamma2",
        "alpha",
        "beta",
        "eta",
        "phi",
        "T_warmup",
        "T_max",
        "batch_size",
        "base_lr",
        "momentum",
        "weight_decay",
        "rho",
        "seed",
        "hidden",
        "loss_norm",
        "ld_norm",
        "selection_order",
        "rcg_cadence",
        "disable_ld",
        "disable_rld",
        "disable_rcg",
        "disable_wce",
        "disable_warmup",
        "dump_selection",
        "classes",
        "n_per_class",
        "dim",
        "separation",
        "open_classes",
        "test_per_class",
    ];

    /// Parses a config file body on top of the defaults and validates it.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(invalid(line, format!("line {} has no `=`", n + 1)));
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(invalid(key, "given more than once"));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key from its text form without validating the whole config.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "q" => self.q = parse_num(key, value)?,
            "tau1" => self.tau1 = parse_num(key, value)?,
            "tau2" => self.tau2 = parse_num(key, value)?,
            "gamma1" => self.gamma1 = Some(parse_num(key, value)?),
            "gamma2" => self.gamma2 = Some(parse_num(key, value)?),
            "alpha" => self.alpha = parse_num(key, value)?,
            "beta" => self.beta = parse_num(key, value)?,
            "eta" => self.eta = parse_num(key, value)?,
            "phi" => self.phi = parse_num(key, value)?,
            "T_warmup" => self.t_warmup = parse_num(key, value)?,
            "T_max" => self.t_max = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "base_lr" => self.base_lr = parse_num(key, value)?,
            "momentum" => self.momentum = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "rho" => self.rho = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "hidden" => {
                self.hidden = value
                    .split(',')
                    .map(|v| parse_num::<usize>(key, v.trim()))
                    .collect::<Result<_>>()?
            }
            "loss_norm" => self.loss_norm = parse_enum(key, value, LossNorm::parse)?,
            "ld_norm" => self.ld_norm = parse_enum(key, value, LdNorm::parse)?,
            "selection_order" => {
                self.selection_order = parse_enum(key, value, SelectionOrder::parse)?
            }
            "rcg_cadence" => self.rcg_cadence = parse_enum(key, value, RcgCadence::parse)?,
            "dump_selection" => self.dump_selection = parse_bool(key, value)?,
            "classes" => self.classes = parse_num(key, value)?,
            "n_per_class" => self.n_per_class = parse_num(key, value)?,
            "dim" => self.dim = parse_num(key, value)?,
            "separation" => self.separation = parse_num(key, value)?,
            "open_classes" => self.open_classes = parse_num(key, value)?,
            "test_per_class" => self.test_per_class = parse_num(key, value)?,
            _ => match AblationSwitch::ALL.into_iter().find(|s| s.key() == key) {
                Some(s) => self.ablations.set(s, parse_bool(key, value)?),
                None => return Err(invalid(key, "unknown key")),
            },
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let probabilities = [
            ("q", self.q),
            ("tau1", self.tau1),
            ("tau2", self.tau2),
            ("eta", self.eta),
            ("rho", self.rho),
            ("gamma1", self.gamma1()),
            ("gamma2", self.gamma2()),
        ];
        for (key, v) in probabilities {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(key, format!("{v} is not in [0, 1]")));
            }
        }
        if self.gamma1() + self.gamma2() >= 1.0 {
            return Err(invalid("gamma2", "gamma1 + gamma2 must be below 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid("momentum", format!("{} is not in [0, 1)", self.momentum)));
        }
        for (key, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("base_lr", self.base_lr),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(key, format!("{v} must be finite and non-negative")));
            }
        }
        if self.t_max == 0 {
            return Err(invalid("T_max", "need at least one epoch"));
        }
        if self.t_warmup > self.t_max {
            return Err(invalid("T_warmup", "cannot exceed T_max"));
        }
        if self.phi == 0 || (self.phi > self.t_warmup && !self.ablations.disable_warmup) {
            return Err(invalid("phi", "need 1 <= phi <= T_warmup"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(invalid("hidden", "layer widths must be positive"));
        }
        if self.classes < 2 {
            return Err(invalid("classes", "need at least 2 classes"));
        }
        if self.dim < 2 {
            return Err(invalid("dim", "need at least 2 dimensions"));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(invalid("separation", "must be a positive distance"));
        }
        if self.tau2 > 0.0 && self.open_classes == 0 {
            return Err(invalid("open_classes", "tau2 > 0 needs at least one open cluster"));
        }
        Ok(())
    }

    pub fn gamma1(&self) -> f64 {
        self.gamma1.unwrap_or(self.tau1 / (1.0 + self.tau2))
    }

    pub fn gamma2(&self) -> f64 {
        self.gamma2.unwrap_or(self.tau2 / (1.0 + self.tau2))
    }

    /// Epoch at which selection starts.
    pub fn selection_start(&self) -> usize {
        if self.ablations.disable_warmup {
            0
        } else {
            self.t_warmup
        }
    }

    /// Number of in-distribution and open-set training examples.
    pub fn dataset_sizes(&self) -> (usize, usize) {
        let n = self.classes * self.n_per_class;
        (n, proportion_count(self.tau2, n))
    }

    /// Layer sizes `d, hidden..., c`.
    pub fn layer_sizes(&self, dim: usize, classes: usize) -> Vec<usize> {
        std::iter::once(dim)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(classes))
            .collect()
    }

    /// Fully resolved key-value form, parseable by [`TrainConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Resolved `(key, value)` pairs in [`TrainConfig::KEYS`] order, with
    /// the selection proportions made explicit.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let hidden: Vec<String> = self.hidden.iter().map(usize::to_string).collect();
        let mut out = vec![
            ("q", self.q.to_string()),
            ("tau1", self.tau1.to_string()),
            ("tau2", self.tau2.to_string()),
            ("gamma1", self.gamma1().to_string()),
            ("gamma2", self.gamma2().to_string()),
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("eta", self.eta.to_string()),
            ("phi", self.phi.to_string()),
            ("T_warmup", self.t_warmup.to_string()),
            ("T_max", self.t_max.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("base_lr", self.base_lr.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("rho", self.rho.to_string()),
            ("seed", self.seed.to_string()),
            ("hidden", hidden.join(",")),
            ("loss_norm", self.loss_norm.as_str().to_string()),
            ("ld_norm", self.ld_norm.as_str().to_string()),
            ("selection_order", self.selection_order.as_str().to_string()),
            ("rcg_cadence", self.rcg_cadence.as_str().to_string()),
        ];
        for s in AblationSwitch::ALL {
            out.push((s.key(), self.ablations.get(s).to_string()));
        }
        out.extend([
            ("dump_selection", self.dump_selection.to_string()),
            ("classes", self.classes.to_string()),
            ("n_per_class", self.n_per_class.to_string()),
            ("dim", self.dim.to_string()),
            ("separation", self.separation.to_string()),
            ("open_classes", self.open_classes.to_string()),
            ("test_per_class", self.test_per_class.to_string()),
        ]);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn parse_comments_and_values() {
        let cfg = TrainConfig::parse(
            "# header\nalpha = 3  # trailing\nT_warmup=10\nhidden = 32, 16\ndisable_rld = true\n\n",
        )
        .unwrap();
        assert_eq!(cfg.alpha, 3.0);
        assert_eq!(cfg.t_warmup, 10);
        assert_eq!(cfg.hidden, vec![32, 16]);
        assert!(cfg.ablations.disable_rld);
    }

    #[test]
    fn errors_name_the_key() {
        for (text, key) in [
            ("tau1 = 1.5", "tau1"),
            ("bogus = 1", "bogus"),
            ("alpha = x", "alpha"),
            ("alpha = 1\nalpha = 2", "alpha"),
            ("T_warmup = 200", "T_warmup"),
            ("loss_norm = whatever", "loss_norm"),
        ] {
            match TrainConfig::parse(text) {
                Err(Error::Config { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn text_form_round_trips() {
        let mut cfg = TrainConfig {
            alpha: 0.5,
            seed: 42,
            ..TrainConfig::default()
        };
        cfg.ablations.disable_wce = true;
        let back = TrainConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back.to_text(), cfg.to_text());
        assert_eq!(back.gamma1(), cfg.gamma1());
    }

    #[test]
    fn default_gammas_are_true_shares() {
        let cfg = TrainConfig::default();
        let (n, open) = cfg.dataset_sizes();
        assert_eq!((n, open), (5000, 2000));
        assert_eq!(proportion_count(cfg.gamma1(), n + open), 1000);
        assert_eq!(proportion_count(cfg.gamma2(), n + open), 2000);
    }
}
