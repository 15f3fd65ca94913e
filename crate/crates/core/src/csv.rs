//! CSV export of paths, lifts, integrands, diagnostics and reports.
//!
//! All floats are written with 17 significant digits so round-tripping and
//! byte-identical reproduction under a fixed seed both hold.

use std::io::Write;
use std::path::Path;

use crate::controlled::ControlledPath;
use crate::error::Result;
use crate::gauss::{Grid, SampledPath};
use crate::integrate::IntegralResult;
use crate::rde::RdeSolution;
use crate::roughpath::{LevelAccessor, RenormTerms};

/// 17-significant-digit decimal rendering.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_lines(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "{header}")?;
    for row in rows {
        writeln!(file, "{row}")?;
    }
    file.flush()?;
    Ok(())
}

/// `t,x1..xd`, one row per grid point.
pub fn write_path(path: &Path, sampled: &SampledPath) -> Result<()> {
    let header = std::iter::once("t".to_string())
        .chain((1..=sampled.dim()).map(|i| format!("x{i}")))
        .collect::<Vec<_>>()
        .join(",");
    write_lines(
        path,
        &header,
        (0..sampled.grid().len()).map(|i| {
            let mut cells = vec![format_float(sampled.grid().time(i))];
            for c in 0..sampled.dim() {
                cells.push(format_float(sampled.value(i, c)));
            }
            cells.join(",")
        }),
    )
}

/// Reads a path written by [`write_path`].
pub fn read_path(path: &Path) -> Result<SampledPath> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| crate::Error::InvalidInput("empty path csv".into()))?;
    let dim = header.split(',').count() - 1;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut cells = line.split(',');
        let t: f64 = cells
            .next()
            .ok_or_else(|| crate::Error::InvalidInput("missing time cell".into()))?
            .parse()
            .map_err(|e| crate::Error::InvalidInput(format!("bad time cell: {e}")))?;
        times.push(t);
        for cell in cells {
            let v: f64 = cell
                .parse()
                .map_err(|e| crate::Error::InvalidInput(format!("bad value cell: {e}")))?;
            values.push(v);
        }
    }
    if times.len() < 2 {
        return Err(crate::Error::InvalidInput("path csv needs two rows".into()));
    }
    let grid = Grid::new(*times.last().unwrap(), times.len() - 1)?;
    SampledPath::new(grid, dim, values)
}

/// `t,G2..Gk`.
pub fn write_renorm(path: &Path, renorm: &RenormTerms) -> Result<()> {
    let k = renorm.count() + 1;
    let header = std::iter::once("t".to_string())
        .chain((2..=k).map(|i| format!("G{i}")))
        .collect::<Vec<_>>()
        .join(",");
    write_lines(
        path,
        &header,
        (0..renorm.grid().len()).map(|i| {
            let mut cells = vec![format_float(renorm.grid().time(i))];
            for level in 2..=k {
                cells.push(format_float(renorm.value(level, i)));
            }
            cells.join(",")
        }),
    )
}

/// `i,s,t,value` over the requested index pairs, all levels up to `k`.
pub fn write_levels(
    path: &Path,
    levels: &dyn LevelAccessor,
    pairs: &[(usize, usize)],
) -> Result<()> {
    write_lines(
        path,
        "i,s,t,value",
        pairs.iter().flat_map(|&(s, t)| {
            (1..=levels.level_count()).map(move |i| {
                format!(
                    "{i},{},{},{}",
                    format_float(levels.grid().time(s)),
                    format_float(levels.grid().time(t)),
                    format_float(levels.level(i, s, t))
                )
            })
        }),
    )
}

/// `t,Y1..Yk`.
pub fn write_controlled(path: &Path, cp: &ControlledPath) -> Result<()> {
    let header = std::iter::once("t".to_string())
        .chain((1..=cp.order()).map(|i| format!("Y{i}")))
        .collect::<Vec<_>>()
        .join(",");
    write_lines(
        path,
        &header,
        (0..cp.grid().len()).map(|i| {
            let mut cells = vec![format_float(cp.grid().time(i))];
            for level in 1..=cp.order() {
                cells.push(format_float(cp.component(level, i)));
            }
            cells.join(",")
        }),
    )
}

/// `mesh,value,diff` refinement diagnostics.
pub fn write_refinement(path: &Path, result: &IntegralResult) -> Result<()> {
    write_lines(
        path,
        "mesh,value,diff",
        result.refinements.iter().enumerate().map(|(i, (mesh, value))| {
            let diff = if i == 0 {
                f64::NAN
            } else {
                value - result.refinements[i - 1].1
            };
            format!(
                "{},{},{}",
                format_float(*mesh),
                format_float(*value),
                format_float(diff)
            )
        }),
    )
}

/// `t,Y,Yprime` (first state coordinate and its first derivative slot).
pub fn write_rde(path: &Path, sol: &RdeSolution) -> Result<()> {
    let grid = sol.y.grid();
    let m = sol.y.dim();
    let d = sol.yprime.len() / grid.len() / m;
    write_lines(
        path,
        "t,Y,Yprime",
        (0..grid.len()).map(|i| {
            format!(
                "{},{},{}",
                format_float(grid.time(i)),
                format_float(sol.y.value(i, 0)),
                format_float(sol.yprime[i * m * d])
            )
        }),
    )
}

/// One row of an unbiasedness report.
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub noise: String,
    pub lift: String,
    pub integrand: String,
    pub stopping: String,
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub pass: bool,
}

/// `noise,lift,integrand,stopping,mean,se,n,pass`.
pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    write_lines(
        path,
        "noise,lift,integrand,stopping,mean,se,n,pass",
        rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{},{},{}",
                r.noise,
                r.lift,
                r.integrand,
                r.stopping,
                format_float(r.mean),
                format_float(r.std_error),
                r.n_samples,
                r.pass
            )
        }),
    )
}

/// `t,S0..Sd,V,G` price/value/gain table for one market path.
pub fn write_market(
    path: &Path,
    prices: &SampledPath,
    value: &[f64],
    gain: &[f64],
) -> Result<()> {
    let header = std::iter::once("t".to_string())
        .chain((0..prices.dim()).map(|i| format!("S{i}")))
        .chain(["V".to_string(), "G".to_string()])
        .collect::<Vec<_>>()
        .join(",");
    write_lines(
        path,
        &header,
        (0..prices.grid().len()).map(|i| {
            let mut cells = vec![format_float(prices.grid().time(i))];
            for c in 0..prices.dim() {
                cells.push(format_float(prices.value(i, c)));
            }
            cells.push(format_float(value[i]));
            cells.push(format_float(gain[i]));
            cells.join(",")
        }),
    )
}
