//! Tabular dumps for offline analysis.

use std::fmt::Write as _;

use crate::datagen::{PartialDataset, TruthType};
use crate::disambiguation::ConfidenceTable;
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::losses::PartLosses;
use crate::model::argmax;
use crate::selection::{Assigned, Partition};

fn check_rows(what: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {actual} rows for {expected} examples"
        )));
    }
    Ok(())
}

/// `index,l_w,lbar_w,assigned,truth`, one row per example.
pub fn selection_csv(scores: &[PartLosses], partition: &Partition, truth: &[TruthType]) -> Result<String> {
    check_rows("scores", truth.len(), scores.len())?;
    check_rows("partition", truth.len(), partition.len())?;
    let mut s = String::from("index,l_w,lbar_w,assigned,truth\n");
    for (i, (sc, tt)) in scores.iter().zip(truth).enumerate() {
        let _ = writeln!(
            s,
            "{i},{},{},{},{}",
            fmt_f64(sc.candidate),
            fmt_f64(sc.non_candidate),
            partition.get(i).as_str(),
            tt.as_str()
        );
    }
    Ok(s)
}

/// `index,truth_type,top_label,top_confidence,p_0..p_{c-1}`. Closed-set
/// assignees report their reversed row.
pub fn confidence_csv(
    table: &ConfidenceTable,
    partition: Option<&Partition>,
    dataset: &PartialDataset,
) -> Result<String> {
    check_rows("confidence table", dataset.len(), table.len())?;
    let mut s = String::from("index,truth_type,top_label,top_confidence");
    for j in 0..dataset.classes() {
        let _ = write!(s, ",p_{j}");
    }
    s.push('\n');
    for i in 0..dataset.len() {
        let row = match partition.map(|p| p.get(i)) {
            Some(Assigned::Closed) => table.reversed(i),
            _ => table.normal(i),
        };
        let top = argmax(row);
        let _ = write!(
            s,
            "{i},{},{top},{}",
            dataset.truth()[i].as_str(),
            fmt_f64(row[top])
        );
        for v in row {
            let _ = write!(s, ",{}", fmt_f64(*v));
        }
        s.push('\n');
    }
    Ok(s)
}

/// Per-type histograms of both selection losses over `bins` equal-width
/// bins spanning `[0, largest finite loss]`. Infinite losses are left out.
pub fn loss_histogram_csv(scores: &[PartLosses], truth: &[TruthType], bins: usize) -> Result<String> {
    check_rows("scores", truth.len(), scores.len())?;
    if bins == 0 {
        return Err(Error::InvalidParameter {
            name: "bins",
            reason: "need at least one bin".into(),
        });
    }
    let hi = scores
        .iter()
        .flat_map(|s| [s.candidate, s.non_candidate])
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let width = if hi > 0.0 { hi / bins as f64 } else { 1.0 };
    let bin_of = |v: f64| ((v / width) as usize).min(bins - 1);

    let mut s = String::from("truth_type,bin_lo,bin_hi,count_l_w,count_lbar_w\n");
    for tt in TruthType::ALL {
        let mut cand = vec![0usize; bins];
        let mut non = vec![0usize; bins];
        for (sc, _) in scores.iter().zip(truth).filter(|(_, t)| **t == tt) {
            if sc.candidate.is_finite() {
                cand[bin_of(sc.candidate)] += 1;
            }
            if sc.non_candidate.is_finite() {
                non[bin_of(sc.non_candidate)] += 1;
            }
        }
        for b in 0..bins {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                tt.as_str(),
                fmt_f64(b as f64 * width),
                fmt_f64((b + 1) as f64 * width),
                cand[b],
                non[b]
            );
        }
    }
    Ok(s)
}
