//! CSV traces and sampled series.

use std::fs::File;
use std::path::Path;

use anyhow::{bail, Context, Result};
use seqpred::SimulationTrace;

/// Writes `t` plus one column per channel component. `f64`'s `Debug`
/// is the shortest string that parses back to the same value.
pub fn write_trace(path: &Path, trace: &SimulationTrace) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(trace.header())?;
    let mut record = Vec::new();
    for (r, t) in trace.times.iter().enumerate() {
        record.clear();
        record.push(format!("{t:?}"));
        for c in &trace.channels {
            record.extend(c.row(r).iter().map(|v| format!("{v:?}")));
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the first two columns of a CSV file as `(t, w)`. A non-numeric
/// first row is taken as a header.
pub fn read_series(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let (mut ts, mut ws) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() < 2 {
            bail!("{}: line {} has fewer than two columns", path.display(), i + 1);
        }
        let parsed = (rec[0].parse::<f64>(), rec[1].parse::<f64>());
        match parsed {
            (Ok(t), Ok(w)) => {
                ts.push(t);
                ws.push(w);
            }
            _ if i == 0 => continue,
            _ => bail!("{}: line {} is not numeric", path.display(), i + 1),
        }
    }
    Ok((ts, ws))
}
