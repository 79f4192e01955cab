//! CSV artifacts: per-epoch trace, per-epoch timing and the long-format
//! architecture trajectory.
//!
//! Floats are written with 17 significant digits so every value round-trips.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::search::{EpochRecord, PhaseTimes, SearchTrace};

pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn create(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(mut w: csv::Writer<impl Write>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Wide per-epoch trace: metrics, selected operations, `A` and the discrete
/// matrix. Wall-clock times are kept out so the file is reproducible.
pub fn write_trace_csv(trace: &SearchTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let Some(first) = trace.records.first() else {
        w.write_record(["epoch"])?;
        return finish(w, path);
    };
    let (edges, ops) = first.arch.dim();
    let mut header: Vec<String> = [
        "epoch",
        "train_loss",
        "train_accuracy",
        "val_loss",
        "val_accuracy",
        "objective",
        "discretization_gap",
        "arch_op_calls",
        "weight_op_calls",
        "degenerate_rows",
    ]
    .map(String::from)
    .to_vec();
    header.extend((0..edges).map(|e| format!("sel_{e}")));
    for prefix in ["a", "abar"] {
        for e in 0..edges {
            header.extend((0..ops).map(|k| format!("{prefix}_{e}_{k}")));
        }
    }
    w.write_record(&header)?;
    for r in &trace.records {
        let mut row = vec![
            r.epoch.to_string(),
            fmt_f64(r.train_loss),
            fmt_f64(r.train_accuracy),
            fmt_f64(r.val_loss),
            fmt_f64(r.val_accuracy),
            fmt_f64(r.objective),
            r.discretization_gap.map(fmt_f64).unwrap_or_default(),
            r.arch_op_calls.to_string(),
            r.weight_op_calls.to_string(),
            r.degenerate_rows.to_string(),
        ];
        row.extend(r.selected.iter().map(|k| k.to_string()));
        row.extend(r.arch.iter().map(|&x| fmt_f64(x)));
        row.extend(r.discrete.iter().map(|&x| fmt_f64(x)));
        w.write_record(&row)?;
    }
    finish(w, path)
}

/// Reads a trace written by [`write_trace_csv`]; times come back as zero.
pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<SearchTrace> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let bad = |line: usize, detail: String| Error::Data(format!("{}: line {line}: {detail}", path.display()));
    let edges = header.iter().filter(|h| h.starts_with("sel_")).count();
    let cells = header.iter().filter(|h| h.starts_with("a_")).count();
    if header.len() == 1 {
        return Ok(SearchTrace::default());
    }
    if edges == 0 || cells % edges != 0 || header.len() != 10 + edges + 2 * cells {
        return Err(bad(1, "header is not a search trace".into()));
    }
    let ops = cells / edges;
    let mut trace = SearchTrace::default();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let num = |c: usize| -> Result<f64> {
            record[c]
                .parse()
                .map_err(|_| bad(line, format!("column {:?}: {:?} is not a number", &header[c], &record[c])))
        };
        let int = |c: usize| -> Result<usize> {
            record[c]
                .parse()
                .map_err(|_| bad(line, format!("column {:?}: {:?} is not a count", &header[c], &record[c])))
        };
        let matrix = |start: usize| -> Result<Matrix> {
            let data = (start..start + cells).map(num).collect::<Result<Vec<_>>>()?;
            Ok(Matrix::from_shape_vec((edges, ops), data).expect("length matches shape"))
        };
        let arch = matrix(10 + edges)?;
        if trace.first_box_violation.is_none() && arch.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            trace.first_box_violation = Some(int(0)?);
        }
        trace.records.push(EpochRecord {
            epoch: int(0)?,
            train_loss: num(1)?,
            train_accuracy: num(2)?,
            val_loss: num(3)?,
            val_accuracy: num(4)?,
            objective: num(5)?,
            discretization_gap: if record[6].is_empty() { None } else { Some(num(6)?) },
            arch_op_calls: int(7)?,
            weight_op_calls: int(8)?,
            degenerate_rows: int(9)?,
            selected: (10..10 + edges).map(int).collect::<Result<Vec<_>>>()?,
            discrete: matrix(10 + edges + cells)?,
            arch,
            times: PhaseTimes::default(),
        });
    }
    Ok(trace)
}

/// Per-epoch phase times. Epochs restored from a checkpoint were not timed
/// by this process and are left out.
pub fn write_timing_csv(trace: &SearchTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    w.write_record([
        "epoch",
        "arch_forward",
        "arch_backward",
        "weight_forward",
        "weight_backward",
        "total",
    ])?;
    for r in trace.records.iter().filter(|r| r.times != PhaseTimes::default()) {
        let t = &r.times;
        w.write_record([
            r.epoch.to_string(),
            fmt_f64(t.arch_forward),
            fmt_f64(t.arch_backward),
            fmt_f64(t.weight_forward),
            fmt_f64(t.weight_backward),
            fmt_f64(t.total),
        ])?;
    }
    finish(w, path)
}

/// One `(epoch, edge, operation)` cell of the architecture trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub epoch: usize,
    pub edge: usize,
    pub op: usize,
    /// Continuous parameter `A[edge, op]`.
    pub value: f64,
    /// Discrete matrix entry.
    pub discrete: f64,
    /// 1 when `op` is the selected operation of `edge`.
    pub selected: u8,
}

pub fn trajectory_rows(trace: &SearchTrace) -> Vec<TrajectoryRow> {
    let mut rows = Vec::new();
    for r in &trace.records {
        for ((edge, op), &value) in r.arch.indexed_iter() {
            rows.push(TrajectoryRow {
                epoch: r.epoch,
                edge,
                op,
                value,
                discrete: r.discrete[[edge, op]],
                selected: u8::from(r.selected[edge] == op),
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryExport {
    pub rows: usize,
    pub switch_counts: Vec<usize>,
    pub total_switches: usize,
    pub switches_path: PathBuf,
}

/// Sibling file holding the per-edge switch summary of a trajectory export.
pub fn switches_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("trajectory");
    out.with_file_name(format!("{stem}-switches.csv"))
}

/// Writes the long-format trajectory to `out` (all cells numeric, so the file
/// loads back through the CSV task reader) and the per-edge switch counts to
/// [`switches_path`].
pub fn export_trajectory(trace: &SearchTrace, out: impl AsRef<Path>) -> Result<TrajectoryExport> {
    let out = out.as_ref();
    if trace.is_empty() {
        return Err(Error::Data("cannot export an empty trace".into()));
    }
    let rows = trajectory_rows(trace);
    let mut w = create(out)?;
    w.write_record(["epoch", "edge", "op", "value", "discrete", "selected"])?;
    for r in &rows {
        w.write_record([
            r.epoch.to_string(),
            r.edge.to_string(),
            r.op.to_string(),
            fmt_f64(r.value),
            fmt_f64(r.discrete),
            r.selected.to_string(),
        ])?;
    }
    finish(w, out)?;

    let switch_counts = trace.switch_counts();
    let summary = switches_path(out);
    let mut w = create(&summary)?;
    w.write_record(["edge", "switches"])?;
    for (e, n) in switch_counts.iter().enumerate() {
        w.write_record([e.to_string(), n.to_string()])?;
    }
    finish(w, &summary)?;
    Ok(TrajectoryExport {
        rows: rows.len(),
        total_switches: switch_counts.iter().sum(),
        switch_counts,
        switches_path: summary,
    })
}
