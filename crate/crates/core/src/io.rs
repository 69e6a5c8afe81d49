//! Plain-text file formats.
//!
//! * Dataset CSV: header `f0,...,f{d-1},label`, one example per row. The
//!   label is a class index or `-1` for out-of-space examples. Features are
//!   written with 17 significant digits so they round-trip exactly.
//! * Corruption sidecar: header `index,truth_type,candidate_bits`, where
//!   `candidate_bits` is a string of `c` characters `0`/`1`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::datagen::{CandidateMask, Label, LabeledExample, PartialDataset, TruthType};
use crate::error::{Error, Result};

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    match fs::File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(Error::MissingFile(path.to_path_buf()))
        }
        Err(e) => Err(e.into()),
    }
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_dataset_csv(path: &Path, examples: &[LabeledExample]) -> Result<()> {
    let dim = examples.first().map_or(0, LabeledExample::dim);
    let mut w = BufWriter::new(fs::File::create(path)?);
    let mut header: Vec<String> = (0..dim).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    writeln!(w, "{}", header.join(","))?;
    for ex in examples {
        if ex.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: ex.dim(),
            });
        }
        for x in &ex.features {
            write!(w, "{},", fmt_f64(*x))?;
        }
        writeln!(w, "{}", ex.label.code())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset CSV. When `classes` is given, class labels at or above
/// it are rejected.
pub fn load_dataset_csv(path: &Path, classes: Option<usize>) -> Result<Vec<LabeledExample>> {
    let name = path.display().to_string();
    let mut lines = open(path)?.lines();
    let Some(header) = lines.next().transpose()? else {
        return Ok(Vec::new());
    };
    let columns: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
    let dim = columns.len().saturating_sub(1);
    let expected_header = (0..dim).map(|j| format!("f{j}")).chain(["label".to_string()]);
    if columns.len() < 2 || !columns.iter().copied().eq(expected_header) {
        return Err(Error::MalformedRow {
            path: name,
            line: 1,
            reason: format!("header `{header}` is not f0,...,f{{d-1}},label"),
        });
    }

    let mut out = Vec::new();
    for (offset, line) in lines.enumerate() {
        let line_no = offset + 2;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::InconsistentDimension {
                path: name,
                line: line_no,
                expected: dim,
                actual: fields.len().saturating_sub(1),
            });
        }
        let features = fields[..dim]
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::MalformedRow {
                path: name.clone(),
                line: line_no,
                reason: format!("bad feature: {e}"),
            })?;
        let code: i64 = fields[dim].trim().parse().map_err(|e| Error::MalformedRow {
            path: name.clone(),
            line: line_no,
            reason: format!("bad label `{}`: {e}", fields[dim]),
        })?;
        let label = match Label::from_code(code) {
            Some(Label::Class(c)) if classes.is_some_and(|k| c >= k) => None,
            other => other,
        }
        .ok_or(Error::RowLabelOutOfRange {
            path: name.clone(),
            line: line_no,
            label: code,
        })?;
        out.push(LabeledExample::new(features, label));
    }
    Ok(out)
}

pub fn write_sidecar(path: &Path, dataset: &PartialDataset) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "index,truth_type,candidate_bits")?;
    for (i, (tt, mask)) in dataset.truth().iter().zip(dataset.masks()).enumerate() {
        writeln!(w, "{i},{tt},{mask}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_sidecar(path: &Path) -> Result<Vec<(TruthType, CandidateMask)>> {
    let name = path.display().to_string();
    let mut lines = open(path)?.lines();
    match lines.next().transpose()? {
        Some(h) if h.trim_end_matches('\r') == "index,truth_type,candidate_bits" => {}
        Some(h) => {
            return Err(Error::MalformedRow {
                path: name,
                line: 1,
                reason: format!("unexpected sidecar header `{h}`"),
            })
        }
        None => return Ok(Vec::new()),
    }
    let mut out = Vec::new();
    for (offset, line) in lines.enumerate() {
        let line_no = offset + 2;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let bad = |reason: String| Error::MalformedRow {
            path: name.clone(),
            line: line_no,
            reason,
        };
        let fields: Vec<&str> = line.split(',').collect();
        let [index, tt, bits] = fields[..] else {
            return Err(bad(format!("expected 3 fields, found {}", fields.len())));
        };
        if index.parse::<usize>().ok() != Some(out.len()) {
            return Err(bad(format!("index `{index}` out of sequence")));
        }
        let tt = TruthType::parse(tt).ok_or_else(|| bad(format!("unknown truth type `{tt}`")))?;
        let mask = CandidateMask::from_bit_string(bits).map_err(|e| bad(e.to_string()))?;
        out.push((tt, mask));
    }
    Ok(out)
}

/// Loads a dataset CSV together with its corruption sidecar.
pub fn load_partial_dataset(data: &Path, sidecar: &Path) -> Result<PartialDataset> {
    let rows = load_sidecar(sidecar)?;
    let classes = rows.first().map_or(0, |(_, m)| m.classes());
    let examples = load_dataset_csv(data, Some(classes))?;
    let dim = examples.first().map_or(0, LabeledExample::dim);
    if rows.len() != examples.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} has {} rows, {} has {}",
            data.display(),
            examples.len(),
            sidecar.display(),
            rows.len()
        )));
    }
    let (truth, masks) = rows.into_iter().unzip();
    PartialDataset::new(examples, masks, truth, classes, dim)
}
