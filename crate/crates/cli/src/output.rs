//! CSV and gnuplot emission.
//!
//! Every CSV starts with a header row naming its columns; numeric cells
//! are written in scientific notation with 17 significant digits (so a
//! round trip through the file is lossless for f64) and counts as plain
//! integers.  Formatting is deterministic, which the parallel-determinism
//! guarantee relies on: identical runs must produce identical bytes.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use anyhow::{Context, Result};

use efforder::ergodic::ConvergenceReport;

/// One CSV cell: a float rendered as `d.dddddddddddddddde±x` or a count.
#[derive(Clone, Copy, Debug)]
pub enum Cell {
    Float(f64),
    Count(usize),
}

impl Cell {
    fn render(&self, out: &mut String) {
        match self {
            Cell::Float(v) => {
                let _ = write!(out, "{v:.16e}");
            }
            Cell::Count(n) => {
                let _ = write!(out, "{n}");
            }
        }
    }
}

pub fn render_csv(header: &[&str], rows: &[Vec<Cell>]) -> String {
    let mut text = header.join(",");
    text.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                text.push(',');
            }
            cell.render(&mut text);
        }
        text.push('\n');
    }
    text
}

pub const CONVERGENCE_HEADER: [&str; 7] = [
    "h",
    "estimate",
    "reference",
    "abs_error",
    "spread",
    "rejected",
    "newton_failures",
];

pub fn convergence_rows(report: &ConvergenceReport) -> Vec<Vec<Cell>> {
    report
        .rows
        .iter()
        .map(|row| {
            vec![
                Cell::Float(row.h),
                Cell::Float(row.estimate),
                Cell::Float(row.reference),
                Cell::Float(row.abs_error),
                Cell::Float(row.spread),
                Cell::Count(row.rejected),
                Cell::Count(row.newton_failures),
            ]
        })
        .collect()
}

/// Writes text to the path, or to stdout when the path is `None`.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)
                        .with_context(|| format!("creating {}", parent.display()))?;
                }
            }
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            std::io::stdout()
                .write_all(text.as_bytes())
                .context("writing to stdout")
        }
    }
}

/// A gnuplot script for a log-log error-versus-stepsize figure with
/// Monte-Carlo error bars, one curve per emitted CSV, plus reference
/// slope guides anchored at the first curve's largest step.
pub fn convergence_script(
    title: &str,
    output_stem: &str,
    curves: &[(String, String)],
    guide_slopes: &[f64],
    anchor: Option<(f64, f64)>,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "set terminal pngcairo size 900,700");
    let _ = writeln!(s, "set output \"{output_stem}.png\"");
    let _ = writeln!(s, "set title \"{title}\"");
    let _ = writeln!(s, "set datafile separator \",\"");
    let _ = writeln!(s, "set logscale xy");
    let _ = writeln!(s, "set xlabel \"stepsize h\"");
    let _ = writeln!(s, "set ylabel \"error for the invariant measure\"");
    let _ = writeln!(s, "set key bottom right");
    let mut terms: Vec<String> = curves
        .iter()
        .map(|(file, label)| {
            format!("\"{file}\" skip 1 using 1:4:5 with yerrorlines title \"{label}\"")
        })
        .collect();
    if let Some((h0, e0)) = anchor {
        for slope in guide_slopes {
            terms.push(format!(
                "{e0:.6e} * (x / {h0:.6e})**{slope} with lines dashtype 2 title \"slope {slope}\""
            ));
        }
    }
    let _ = writeln!(s, "plot {}", terms.join(", \\\n     "));
    s
}

/// A gnuplot script drawing a density grid as a filled contour map with
/// an overlaid trajectory scatter.
pub fn density_script(
    title: &str,
    output_stem: &str,
    density_file: &str,
    trajectory_file: &str,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "set terminal pngcairo size 800,700");
    let _ = writeln!(s, "set output \"{output_stem}.png\"");
    let _ = writeln!(s, "set title \"{title}\"");
    let _ = writeln!(s, "set datafile separator \",\"");
    let _ = writeln!(s, "set view map");
    let _ = writeln!(s, "set contour base");
    let _ = writeln!(s, "set cntrparam levels incremental 0.15, 0.2, 0.95");
    let _ = writeln!(s, "unset surface");
    let _ = writeln!(s, "set style data lines");
    let _ = writeln!(s, "set xlabel \"x1\"");
    let _ = writeln!(s, "set ylabel \"x2\"");
    let _ = writeln!(
        s,
        "splot \"{density_file}\" skip 1 using 1:2:3 with lines title \"Gibbs density\", \\"
    );
    let _ = writeln!(
        s,
        "      \"{trajectory_file}\" skip 1 using 1:2:(0) with points pt 7 ps 0.2 title \"trajectory\""
    );
    s
}

// ══════════════════════════════════════════════════════════════════════
