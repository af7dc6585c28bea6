//! File formats.
//!
//! * Datasets: CSV with header `f0,..,f{d-1},clean,noisy`, one instance per row.
//! * Transition matrices: `C` rows of `C` comma-separated values, no header;
//!   row `j`, column `k` holds `p(noisy = j | clean = k)`.
//! * Checkpoints: a header line `rent-checkpoint <arch> <hidden> <d> <C> <count>`
//!   followed by one parameter per line.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rent_core::analysis::WeightHistogramReport;
use rent_core::classifier::{Architecture, Classifier};
use rent_core::data::{Instance, NoisyDataset};
use rent_core::linalg::SquareMatrix;
use rent_core::TransitionMatrix;

use crate::train::EpochMetrics;
use crate::HarnessError;

pub fn write_dataset(path: &Path, ds: &NoisyDataset) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..ds.dim()).map(|i| format!("f{i}")).collect();
    header.push("clean".into());
    header.push("noisy".into());
    w.write_record(&header)?;
    for inst in ds.instances() {
        let mut row: Vec<String> = inst.features.iter().map(|v| v.to_string()).collect();
        row.push(inst.clean_label.to_string());
        row.push(inst.noisy_label.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

/// Read a dataset; the class count is `num_classes` when given, otherwise one
/// more than the largest label present.
pub fn read_dataset(path: &Path, num_classes: Option<usize>) -> Result<NoisyDataset, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let dim = header.len().saturating_sub(2);
    let expected: Vec<String> = (0..dim)
        .map(|i| format!("f{i}"))
        .chain(["clean".to_string(), "noisy".to_string()])
        .collect();
    if header.len() < 2 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(HarnessError::Format(format!(
            "{}: expected header f0..f{{d-1}},clean,noisy",
            path.display()
        )));
    }
    let mut instances = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let parse_err = |what: &str| {
            HarnessError::Format(format!("{}: bad {what} on data row {}", path.display(), line + 1))
        };
        let features = record
            .iter()
            .take(dim)
            .map(|v| v.trim().parse::<f64>().map_err(|_| parse_err("feature")))
            .collect::<Result<Vec<_>, _>>()?;
        let clean = record[dim].trim().parse().map_err(|_| parse_err("clean label"))?;
        let noisy = record[dim + 1].trim().parse().map_err(|_| parse_err("noisy label"))?;
        instances.push(Instance {
            features,
            clean_label: clean,
            noisy_label: noisy,
        });
    }
    let classes = num_classes.unwrap_or_else(|| {
        instances
            .iter()
            .map(|i| i.clean_label.max(i.noisy_label) + 1)
            .max()
            .unwrap_or(0)
    });
    Ok(NoisyDataset::new(instances, classes, dim)?)
}

pub fn write_transition(path: &Path, t: &TransitionMatrix) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in t.matrix().rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

pub fn read_transition(path: &Path) -> Result<TransitionMatrix, HarnessError> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record?;
        let row = record
            .iter()
            .map(|v| {
                v.trim().parse::<f64>().map_err(|_| {
                    HarnessError::Format(format!("{}: bad entry {v:?}", path.display()))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    let m = SquareMatrix::from_rows(&rows).map_err(rent_core::TransitionError::from)?;
    Ok(TransitionMatrix::new(m)?)
}

pub fn write_checkpoint(path: &Path, model: &Classifier) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let (arch, hidden) = match model.architecture() {
        Architecture::Linear => ("linear", 0),
        Architecture::Mlp { hidden } => ("mlp", hidden),
    };
    let io = |e| HarnessError::io(path, e);
    writeln!(
        w,
        "rent-checkpoint {arch} {hidden} {} {} {}",
        model.input_dim(),
        rent_core::Predictor::num_classes(model),
        model.params().len()
    )
    .map_err(io)?;
    for p in model.params() {
        writeln!(w, "{p}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_checkpoint(path: &Path) -> Result<Classifier, HarnessError> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let bad = |msg: &str| HarnessError::Format(format!("{}: {msg}", path.display()));
    let header = lines
        .next()
        .ok_or_else(|| bad("empty checkpoint"))?
        .map_err(|e| HarnessError::io(path, e))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 6 || fields[0] != "rent-checkpoint" {
        return Err(bad("missing checkpoint header"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let architecture = match fields[1] {
        "linear" => Architecture::Linear,
        "mlp" => Architecture::Mlp {
            hidden: num(fields[2])?,
        },
        _ => return Err(bad("unknown architecture")),
    };
    let (dim, classes, count) = (num(fields[3])?, num(fields[4])?, num(fields[5])?);
    let mut params = Vec::with_capacity(count);
    for line in lines {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        params.push(line.trim().parse::<f64>().map_err(|_| bad("bad parameter"))?);
    }
    if params.len() != count {
        return Err(bad("parameter count does not match header"));
    }
    Ok(Classifier::with_params(architecture, dim, classes, params)?)
}

pub fn write_metrics(path: &Path, metrics: &[EpochMetrics]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for m in metrics {
        w.serialize(m)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn write_histogram(path: &Path, h: &WeightHistogramReport) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lower", "upper", "clean", "noisy"])?;
    for i in 0..h.clean_counts.len() {
        w.write_record([
            h.edges[i].to_string(),
            h.edges[i + 1].to_string(),
            h.clean_counts[i].to_string(),
            h.noisy_counts[i].to_string(),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
}
