//! Delimited-text inputs and outputs. Every float is written with 17
//! significant digits, which parses back to the same `f64`.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use cdsmooth::model::ObservationSchedule;
use cdsmooth::simulate::SimulatedPath;
use cdsmooth::smoother::{AcceptanceRecord, TraceSeries};

use crate::error::{CliError, CliResult};

/// Half-width of the pointwise band in standard deviations.
pub const BAND_Z: f64 = 1.96;

pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn numbered(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |j| format!("{prefix}{j}"))
}

fn writer(path: &Path) -> CliResult<csv::Writer<std::fs::File>> {
    csv::WriterBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::parse(path, format!("{other:?}")),
    }
}

fn finish(path: &Path, mut w: csv::Writer<std::fs::File>) -> CliResult<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

/// `t,v1,…,vm`; rows of shorter observations are padded with empty cells.
pub fn write_observations(path: &Path, schedule: &ObservationSchedule) -> CliResult<()> {
    let width = schedule.observations().iter().map(|o| o.obs_dim()).max().unwrap_or(0);
    let mut w = writer(path)?;
    let header: Vec<String> = std::iter::once("t".to_string()).chain(numbered("v", width)).collect();
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for o in schedule.observations() {
        let mut row = vec![fmt(o.t)];
        row.extend(o.v.iter().map(|&v| fmt(v)));
        row.resize(width + 1, String::new());
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    finish(path, w)
}

/// `(row number, values)` pairs.
type Rows = Vec<(u64, Vec<f64>)>;

/// Rows of numbers, skipping the header; trailing empty cells are dropped.
/// Row numbers in errors count the header as row 1.
fn read_rows(path: &Path) -> CliResult<(Vec<String>, Rows)> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i as u64 + 2;
        let record = record.map_err(|e| CliError::parse(path, format!("row {row}: {e}")))?;
        let mut cells: Vec<&str> = record.iter().collect();
        while cells.last() == Some(&"") {
            cells.pop();
        }
        let values = cells
            .iter()
            .enumerate()
            .map(|(j, c)| {
                c.parse::<f64>()
                    .map_err(|_| CliError::parse(path, format!("row {row}, column {}: `{c}` is not a number", j + 1)))
            })
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push((row, values));
    }
    Ok((header, rows))
}

/// `(t, v)` pairs from an observation file.
pub fn read_observations(path: &Path) -> CliResult<Vec<(f64, Vec<f64>)>> {
    let (header, rows) = read_rows(path)?;
    if header.first().map(String::as_str) != Some("t") || header.len() < 2 {
        return Err(CliError::parse(path, "row 1: header must be `t,v1,…,vm`"));
    }
    let mut out: Vec<(f64, Vec<f64>)> = Vec::with_capacity(rows.len());
    for (row, values) in rows {
        if values.len() < 2 || values.len() > header.len() {
            return Err(CliError::parse(
                path,
                format!(
                    "row {row}: expected between 2 and {} columns, got {}",
                    header.len(),
                    values.len()
                ),
            ));
        }
        let t = values[0];
        if !t.is_finite() || out.last().is_some_and(|(prev, _)| t <= *prev) {
            return Err(CliError::parse(
                path,
                format!("row {row}: times must be finite and strictly increasing"),
            ));
        }
        out.push((t, values[1..].to_vec()));
    }
    if out.is_empty() {
        return Err(CliError::parse(path, "no observations"));
    }
    Ok(out)
}

/// `t,x1,…,xd`, one row per mesh point.
pub fn write_path(path: &Path, p: &SimulatedPath) -> CliResult<()> {
    let mut w = writer(path)?;
    let header: Vec<String> = std::iter::once("t".to_string()).chain(numbered("x", p.dim)).collect();
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (k, &t) in p.times.iter().enumerate() {
        let row = std::iter::once(fmt(t)).chain(p.states[k * p.dim..(k + 1) * p.dim].iter().map(|&x| fmt(x)));
        w.write_record(row).map_err(|e| csv_error(path, e))?;
    }
    finish(path, w)
}

/// `iteration,t,x1,…,xd` for every saved path; `states` are knot-major.
pub fn write_samples(path: &Path, knots: &[f64], dim: usize, saved: &[(usize, Vec<f64>)]) -> CliResult<()> {
    let mut w = writer(path)?;
    let header: Vec<String> = ["iteration".to_string(), "t".to_string()]
        .into_iter()
        .chain(numbered("x", dim))
        .collect();
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (iteration, states) in saved {
        for (k, &t) in knots.iter().enumerate() {
            let row = [iteration.to_string(), fmt(t)]
                .into_iter()
                .chain(states[k * dim..(k + 1) * dim].iter().map(|&x| fmt(x)));
            w.write_record(row).map_err(|e| csv_error(path, e))?;
        }
    }
    finish(path, w)
}

/// Per-knot summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub times: Vec<f64>,
    pub dim: usize,
    /// Knot-major.
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// `t,mean_j…,sd_j…,lower_j…,upper_j…` with bands `mean ± 1.96 sd`.
pub fn write_summary(path: &Path, s: &Summary) -> CliResult<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    write_summary_to(file, s).map_err(|e| csv_error(path, e))
}

pub fn write_summary_to<W: Write>(out: W, s: &Summary) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let d = s.dim;
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(numbered("mean_", d))
        .chain(numbered("sd_", d))
        .chain(numbered("lower_", d))
        .chain(numbered("upper_", d))
        .collect();
    w.write_record(&header)?;
    for (k, &t) in s.times.iter().enumerate() {
        let mean = &s.mean[k * d..(k + 1) * d];
        let sd = &s.sd[k * d..(k + 1) * d];
        let mut row = vec![fmt(t)];
        row.extend(mean.iter().map(|&m| fmt(m)));
        row.extend(sd.iter().map(|&v| fmt(v)));
        row.extend(mean.iter().zip(sd).map(|(m, v)| fmt(m - BAND_Z * v)));
        row.extend(mean.iter().zip(sd).map(|(m, v)| fmt(m + BAND_Z * v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `iteration,t,x1,…,xd` for every monitored time.
pub fn write_traces(path: &Path, dim: usize, traces: &[TraceSeries]) -> CliResult<()> {
    let mut w = writer(path)?;
    let header: Vec<String> = ["iteration".to_string(), "t".to_string()]
        .into_iter()
        .chain(numbered("x", dim))
        .collect();
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for tr in traces {
        for (i, &iteration) in tr.iterations.iter().enumerate() {
            let row = [iteration.to_string(), fmt(tr.t)]
                .into_iter()
                .chain(tr.values[i * dim..(i + 1) * dim].iter().map(|&x| fmt(x)));
            w.write_record(row).map_err(|e| csv_error(path, e))?;
        }
    }
    finish(path, w)
}

/// `iteration,lambda,log_psi,accepted`.
pub fn write_acceptance(path: &Path, records: &[AcceptanceRecord]) -> CliResult<()> {
    let mut w = writer(path)?;
    w.write_record(["iteration", "lambda", "log_psi", "accepted"])
        .map_err(|e| csv_error(path, e))?;
    for r in records {
        w.write_record([
            r.iteration.to_string(),
            fmt(r.lambda),
            fmt(r.log_psi),
            u8::from(r.accepted).to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    finish(path, w)
}

/// Mean and sd (n − 1 normalisation, 0 for a single path) per knot of a
/// samples file, optionally ignoring iterations below `min_iteration`.
pub fn summarize_samples(path: &Path, min_iteration: usize) -> CliResult<Summary> {
    let (header, rows) = read_rows(path)?;
    if header.len() < 3 || header[0] != "iteration" || header[1] != "t" {
        return Err(CliError::parse(path, "row 1: header must be `iteration,t,x1,…,xd`"));
    }
    let dim = header.len() - 2;
    let mut index: HashMap<u64, usize> = HashMap::new();
    let mut times = Vec::new();
    let mut count: Vec<usize> = Vec::new();
    let mut mean: Vec<f64> = Vec::new();
    let mut m2: Vec<f64> = Vec::new();
    for (row, values) in rows {
        if values.len() != dim + 2 {
            return Err(CliError::parse(
                path,
                format!("row {row}: expected {} columns, got {}", dim + 2, values.len()),
            ));
        }
        let iteration = values[0];
        if !(iteration >= 0.0 && iteration.fract() == 0.0) {
            return Err(CliError::parse(
                path,
                format!("row {row}: iteration must be a non-negative integer"),
            ));
        }
        if (iteration as usize) < min_iteration {
            continue;
        }
        let t = values[1];
        let k = *index.entry(t.to_bits()).or_insert_with(|| {
            times.push(t);
            count.push(0);
            mean.extend(std::iter::repeat_n(0.0, dim));
            m2.extend(std::iter::repeat_n(0.0, dim));
            times.len() - 1
        });
        count[k] += 1;
        let n = count[k] as f64;
        for j in 0..dim {
            let x = values[2 + j];
            let delta = x - mean[k * dim + j];
            mean[k * dim + j] += delta / n;
            m2[k * dim + j] += delta * (x - mean[k * dim + j]);
        }
    }
    if times.is_empty() {
        return Err(CliError::parse(path, "no sample rows"));
    }
    if let Some(k) = count.iter().position(|&c| c != count[0]) {
        return Err(CliError::parse(
            path,
            format!(
                "time {} has {} samples, time {} has {}",
                times[0], count[0], times[k], count[k]
            ),
        ));
    }
    let sd = m2
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let c = count[i / dim];
            if c > 1 {
                (s / (c - 1) as f64).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let pick = |v: &Vec<f64>| order.iter().flat_map(|&k| v[k * dim..(k + 1) * dim].to_vec()).collect();
    Ok(Summary {
        times: order.iter().map(|&k| times[k]).collect(),
        dim,
        mean: pick(&mean),
        sd: pick(&sd),
    })
}

/// Writes `text` to `path`.
pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatted_floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 1.508870] {
            assert_eq!(fmt(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn summarize_reports_row_of_bad_cell() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        std::fs::write(&p, "iteration,t,x1\n0,0.0,1.0\n0,0.5,oops\n").unwrap();
        let err = summarize_samples(&p, 0).unwrap_err().to_string();
        assert!(err.contains("row 3"), "{err}");
    }

    #[test]
    fn observations_must_increase() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("o.csv");
        std::fs::write(&p, "t,v1\n0.0,1.0\n0.0,2.0\n").unwrap();
        let err = read_observations(&p).unwrap_err().to_string();
        assert!(err.contains("row 3"), "{err}");
    }
}
