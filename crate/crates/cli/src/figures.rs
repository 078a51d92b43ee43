//! Bundled figure data: CSV tables and gnuplot scripts regenerated from
//! scratch on demand.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};

use efforder::ergodic::{convergence_study, ConvergenceReport, RunConfig};
use efforder::model::{
    build_problem, BrownianDynamics, NoiseStream, Potential, ProblemParams, DEFAULT_SIGMA,
};
use efforder::newton::NewtonConfig;
use efforder::reference::gibbs_reference;
use efforder::schemes::{preset, step_theta_modified, ChainState, PostKind, SchemeSpec};
use efforder::weak_taylor::observables::build_observable;

use crate::commands::with_pool;
use crate::output::{self, Cell};
use crate::refs;

/// Coupling strength of the stiff three-dimensional problem.
const KAPPA: f64 = 1e6;

#[derive(Args, Debug)]
pub struct FigureArgs {
    /// Which figure to regenerate.
    #[arg(value_enum, default_value_t = Which::All)]
    pub which: Which,
    /// Directory receiving the CSV tables and gnuplot scripts.
    #[arg(long, default_value = "figures")]
    pub output_dir: PathBuf,
    /// Conditioning of the linear problem in the first figure.
    #[arg(long, default_value_t = 1.0)]
    pub epsilon: f64,
    /// Long horizons (T = 1e5) instead of the quick desk defaults.
    #[arg(long)]
    pub full: bool,
    /// Worker threads for the sampling loops.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Which {
    Fig1,
    Fig2,
    Fig3,
    Fig4,
    All,
}

pub fn run(args: &FigureArgs) -> Result<()> {
    fs::create_dir_all(&args.output_dir)
        .with_context(|| format!("creating {}", args.output_dir.display()))?;
    with_pool(args.workers, || {
        if matches!(args.which, Which::Fig1 | Which::All) {
            fig1(args)?;
        }
        if matches!(args.which, Which::Fig2 | Which::All) {
            fig2(args)?;
        }
        if matches!(args.which, Which::Fig3 | Which::All) {
            fig3(args)?;
        }
        if matches!(args.which, Which::Fig4 | Which::All) {
            fig4(args)?;
        }
        Ok(())
    })
}

// ══════════════════════════════════════════════════════════════════════
// Shared pieces
// ══════════════════════════════════════════════════════════════════════

fn horizon(args: &FigureArgs) -> f64 {
    if args.full {
        1e5
    } else {
        1e4
    }
}

/// Step list `h0 * 2^{-k/2}` for `k = 0, ..., count-1`.
fn half_power_steps(h0: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|k| h0 * 2f64.powf(-(k as f64) / 2.0))
        .collect()
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_report(dir: &Path, name: &str, report: &ConvergenceReport) -> Result<()> {
    let csv = output::render_csv(
        &output::CONVERGENCE_HEADER,
        &output::convergence_rows(report),
    );
    write_text(dir, name, &csv)
}

fn report_status(file: &str, report: &ConvergenceReport) {
    let used = report.used.iter().filter(|&&u| u).count();
    let rejected: usize = report.rows.iter().map(|r| r.rejected).sum();
    let slope = match report.slope {
        Some(v) => format!("{v:.2}"),
        None => "undefined".to_string(),
    };
    println!(
        "{file}: slope {slope} over {used}/{} rows, {rejected} rejected trajectories",
        report.rows.len()
    );
}

/// Largest-step row with a positive finite error, as a guide anchor.
fn anchor_from(report: &ConvergenceReport) -> Option<(f64, f64)> {
    report
        .rows
        .iter()
        .find(|r| r.abs_error.is_finite() && r.abs_error > 0.0)
        .map(|r| (r.h, r.abs_error))
}

/// One convergence curve of a figure: preset run over the step list,
/// CSV written, status line printed.
#[allow(clippy::too_many_arguments)]
fn run_curve(
    dir: &Path,
    file: &str,
    problem: &BrownianDynamics,
    preset_name: &str,
    template: &RunConfig,
    observable: &dyn efforder::weak_taylor::Observable,
    h_list: &[f64],
    reference: f64,
) -> Result<ConvergenceReport> {
    let spec = preset(preset_name)?;
    let report = convergence_study(problem, &spec, template, observable, h_list, reference)?;
    write_report(dir, file, &report)?;
    report_status(file, &report);
    Ok(report)
}

// ══════════════════════════════════════════════════════════════════════
// Figure 1: linear test problem, transient plus bias for five schemes
// ══════════════════════════════════════════════════════════════════════

const FIG1_SCHEMES: [(&str, &str); 5] = [
    ("theta_std(1.0)", "implicit Euler"),
    ("theta_half", "theta = 1/2"),
    ("theta1_stab", "theta = 1, stabilized noise"),
    ("theta1_plain", "theta = 1, plain noise"),
    ("theta1_det", "theta = 1, deterministic post"),
];

fn fig1(args: &FigureArgs) -> Result<()> {
    let dir = &args.output_dir;
    let params = ProblemParams {
        epsilon: args.epsilon,
        ..Default::default()
    };
    let problem = build_problem("linear2d", &params, DEFAULT_SIGMA)?;
    let observable = build_observable("sum_squares", 2)?;
    let reference =
        refs::compute_reference("linear2d", &params, &problem, "sum_squares", observable.as_ref())?;
    let h_list = half_power_steps(0.4, 7);
    let mut template = RunConfig::new(h_list[0], horizon(args), 10, vec![-3.0, -3.0]);
    // No burn-in: the slow decay of the far-field start under barely
    // damped schemes is part of what this figure measures.
    template.burn_in = 0.0;
    template.base_seed = 101;

    let eps_tag = sanitize(&format!("{:e}", args.epsilon));
    let mut curves = Vec::new();
    let mut anchor = None;
    for (name, label) in FIG1_SCHEMES {
        let file = format!("fig1_eps{eps_tag}_{}.csv", sanitize(name));
        let report = run_curve(
            dir,
            &file,
            &problem,
            name,
            &template,
            observable.as_ref(),
            &h_list,
            reference.value,
        )?;
        if name == "theta1_stab" {
            anchor = anchor_from(&report);
        }
        curves.push((file, label.to_string()));
    }
    let script = output::convergence_script(
        &format!("linear test problem, epsilon = {}", args.epsilon),
        &format!("fig1_eps{eps_tag}"),
        &curves,
        &[1.0, 2.0],
        anchor,
    );
    write_text(dir, &format!("fig1_eps{eps_tag}.gp"), &script)
}

// ══════════════════════════════════════════════════════════════════════
// Figure 2: Gibbs density contours with an overlaid kernel trajectory
// ══════════════════════════════════════════════════════════════════════

/// The stiff problem's `(x1, x2)` marginal.  Conditionally on the rest,
/// `x3` is Gaussian about `x1`, so it integrates out in closed form and
/// leaves the planar potential below; the last term is the exact
/// `cos^2(x2) / (2 kappa)` completion-of-squares correction.
struct StiffMarginal2d {
    kappa: f64,
}

impl Potential for StiffMarginal2d {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, x: &[f64]) -> f64 {
        let (x1, x2) = (x[0], x[1]);
        let w = 1.0 - x1 * x1;
        let s = x2 + x1 * x1;
        let c = x2.cos();
        w * w + x2.powi(4) - x1 + x1 * c + 100.0 * s * s - c * c / (2.0 * self.kappa)
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let (x1, x2) = (x[0], x[1]);
        let s = x2 + x1 * x1;
        out[0] = 4.0 * x1 * (x1 * x1 - 1.0) - 1.0 + x2.cos() + 400.0 * x1 * s;
        out[1] =
            4.0 * x2.powi(3) - x1 * x2.sin() + 200.0 * s + (2.0 * x2).sin() / (2.0 * self.kappa);
    }

    fn hessian_into(&self, x: &[f64], out: &mut [f64]) {
        let (x1, x2) = (x[0], x[1]);
        let s = x2 + x1 * x1;
        out[0] = 12.0 * x1 * x1 - 4.0 + 400.0 * s + 800.0 * x1 * x1;
        out[1] = -x2.sin() + 400.0 * x1;
        out[2] = out[1];
        out[3] = 12.0 * x2 * x2 - x1 * x2.cos() + 200.0 + (2.0 * x2).cos() / self.kappa;
    }
}

/// Density grid normalized to peak 1, in gnuplot's blank-line separated
/// block layout.
fn density_grid_csv(
    x1_range: (f64, f64),
    x2_range: (f64, f64),
    points: usize,
    log_density: impl Fn(f64, f64) -> f64,
) -> String {
    let coords = |range: (f64, f64), k: usize| {
        range.0 + (range.1 - range.0) * k as f64 / (points - 1) as f64
    };
    let mut values = vec![0.0; points * points];
    let mut max = f64::NEG_INFINITY;
    for i in 0..points {
        for j in 0..points {
            let v = log_density(coords(x1_range, i), coords(x2_range, j));
            values[i * points + j] = v;
            max = max.max(v);
        }
    }
    let mut s = String::from("x1,x2,density\n");
    for i in 0..points {
        for j in 0..points {
            let _ = writeln!(
                s,
                "{:.6e},{:.6e},{:.6e}",
                coords(x1_range, i),
                coords(x2_range, j),
                (values[i * points + j] - max).exp()
            );
        }
        s.push('\n');
    }
    s
}

/// Runs the bare theta = 1 kernel (no postprocessing) and records every
/// fourth visited state's first two coordinates.
fn kernel_trajectory(problem: &BrownianDynamics, h: f64, steps: usize, x0: &[f64]) -> Result<String> {
    let implicit = preset("theta1_stab")?;
    let kernel = SchemeSpec::new(implicit.theta, implicit.a, 0.0, 0.0, PostKind::None, "kernel")?;
    let newton = NewtonConfig::default();
    let mut stream = NoiseStream::new(102, 0, problem.dim());
    let mut xi = vec![0.0; problem.dim()];
    let mut state = ChainState::initial(x0);
    let mut rows = Vec::with_capacity(steps / 4 + 1);
    for n in 0..steps {
        stream.next_into(&mut xi);
        let out = step_theta_modified(problem, &kernel, h, &state, &xi, &newton)?;
        state = out.next;
        if n % 4 == 0 {
            rows.push(vec![Cell::Float(state.x[0]), Cell::Float(state.x[1])]);
        }
    }
    Ok(output::render_csv(&["x1", "x2"], &rows))
}

fn fig2(args: &FigureArgs) -> Result<()> {
    let dir = &args.output_dir;
    let grid = 81;
    let h = 0.05;
    let steps = 20_000;

    let planar = build_problem("nonstiff2d", &ProblemParams::default(), DEFAULT_SIGMA)?;
    let density = density_grid_csv((-2.2, 2.2), (-3.2, 1.8), grid, |x1, x2| {
        planar.gibbs_log_density(&[x1, x2])
    });
    write_text(dir, "fig2_nonstiff2d_density.csv", &density)?;
    let trajectory = kernel_trajectory(&planar, h, steps, &[1.0, -1.0])?;
    write_text(dir, "fig2_nonstiff2d_trajectory.csv", &trajectory)?;
    let script = output::density_script(
        "planar multi-well problem",
        "fig2_nonstiff2d",
        "fig2_nonstiff2d_density.csv",
        "fig2_nonstiff2d_trajectory.csv",
    );
    write_text(dir, "fig2_nonstiff2d.gp", &script)?;
    println!("fig2_nonstiff2d: {grid}x{grid} density grid, {} recorded states", steps / 4);

    let stiff = build_problem("stiff3d", &ProblemParams::default(), DEFAULT_SIGMA)?;
    let marginal = BrownianDynamics::new(Arc::new(StiffMarginal2d { kappa: KAPPA }), DEFAULT_SIGMA);
    let density = density_grid_csv((-1.8, 1.8), (-2.8, 1.0), grid, |x1, x2| {
        marginal.gibbs_log_density(&[x1, x2])
    });
    write_text(dir, "fig2_stiff3d_density.csv", &density)?;
    let trajectory = kernel_trajectory(&stiff, h, steps, &[1.0, -1.0, 1.0])?;
    write_text(dir, "fig2_stiff3d_trajectory.csv", &trajectory)?;
    let script = output::density_script(
        "stiff variant, x3 integrated out",
        "fig2_stiff3d",
        "fig2_stiff3d_density.csv",
        "fig2_stiff3d_trajectory.csv",
    );
    write_text(dir, "fig2_stiff3d.gp", &script)?;
    println!("fig2_stiff3d: {grid}x{grid} marginal grid, {} recorded states", steps / 4);
    Ok(())
}

// ══════════════════════════════════════════════════════════════════════
// Figure 3: convergence on the planar multi-well and its stiff variant
// ══════════════════════════════════════════════════════════════════════

const FIG3_NONSTIFF_SCHEMES: [(&str, &str); 4] = [
    ("theta_std(1.0)", "implicit Euler"),
    ("theta_half", "theta = 1/2"),
    ("theta1_stab", "theta = 1, stabilized noise"),
    ("theta1_det", "theta = 1, deterministic post"),
];

/// The theta = 1/2 kernel drops out of the stiff panel: its Newton
/// iteration has no damping to offer the fast mode at these step sizes.
const FIG3_STIFF_SCHEMES: [(&str, &str); 3] = [
    ("theta_std(1.0)", "implicit Euler"),
    ("theta1_stab", "theta = 1, stabilized noise"),
    ("theta1_det", "theta = 1, deterministic post"),
];

fn fig3(args: &FigureArgs) -> Result<()> {
    let dir = &args.output_dir;
    let h_list = half_power_steps(0.18, 5);

    let planar = build_problem("nonstiff2d", &ProblemParams::default(), DEFAULT_SIGMA)?;
    let observable = build_observable("curved", 2)?;
    let reference = refs::compute_reference(
        "nonstiff2d",
        &ProblemParams::default(),
        &planar,
        "curved",
        observable.as_ref(),
    )?;
    let mut template = RunConfig::new(h_list[0], horizon(args), 10, vec![1.0, 2.0]);
    template.base_seed = 103;
    let mut curves = Vec::new();
    let mut anchor = None;
    for (name, label) in FIG3_NONSTIFF_SCHEMES {
        let file = format!("fig3_nonstiff2d_{}.csv", sanitize(name));
        let report = run_curve(
            dir,
            &file,
            &planar,
            name,
            &template,
            observable.as_ref(),
            &h_list,
            reference.value,
        )?;
        if name == "theta1_stab" {
            anchor = anchor_from(&report);
        }
        curves.push((file, label.to_string()));
    }
    let script = output::convergence_script(
        "planar multi-well problem, curved-valley observable",
        "fig3_nonstiff2d",
        &curves,
        &[1.0, 2.0],
        anchor,
    );
    write_text(dir, "fig3_nonstiff2d.gp", &script)?;

    let stiff = build_problem("stiff3d", &ProblemParams::default(), DEFAULT_SIGMA)?;
    let observable3 = build_observable("curved", 3)?;
    let marginal = BrownianDynamics::new(Arc::new(StiffMarginal2d { kappa: KAPPA }), DEFAULT_SIGMA);
    let phi = |x: &[f64]| {
        let s = x[1] + x[0] * x[0];
        s * s
    };
    let reference = gibbs_reference(&marginal, &phi)?;
    let mut template = RunConfig::new(h_list[0], horizon(args), 10, vec![1.0, 2.0, 3.0]);
    template.base_seed = 103;
    let mut curves = Vec::new();
    let mut anchor = None;
    for (name, label) in FIG3_STIFF_SCHEMES {
        let file = format!("fig3_stiff3d_{}.csv", sanitize(name));
        let report = run_curve(
            dir,
            &file,
            &stiff,
            name,
            &template,
            observable3.as_ref(),
            &h_list,
            reference.value,
        )?;
        if name == "theta1_stab" {
            anchor = anchor_from(&report);
        }
        curves.push((file, label.to_string()));
    }
    let script = output::convergence_script(
        "stiff variant, curved-valley observable",
        "fig3_stiff3d",
        &curves,
        &[1.0, 2.0],
        anchor,
    );
    write_text(dir, "fig3_stiff3d.gp", &script)
}

// ══════════════════════════════════════════════════════════════════════
// Figure 4: spring shell in ten dimensions
// ══════════════════════════════════════════════════════════════════════

fn fig4(args: &FigureArgs) -> Result<()> {
    let dir = &args.output_dir;
    let params = ProblemParams {
        dim: 10,
        ..Default::default()
    };
    let problem = build_problem("spring", &params, DEFAULT_SIGMA)?;
    let observable = build_observable("radial_gap", 10)?;
    let reference =
        refs::compute_reference("spring", &params, &problem, "radial_gap", observable.as_ref())?;
    let h_list = half_power_steps(0.125, 4);
    // Start on the unit shell so no scheme pays an off-manifold transient.
    let mut x0 = vec![0.0; 10];
    x0[0] = 1.0;
    let mut template = RunConfig::new(h_list[0], horizon(args), 10, x0);
    template.base_seed = 104;
    let mut curves = Vec::new();
    let mut anchor = None;
    for (name, label) in FIG3_NONSTIFF_SCHEMES {
        let file = format!("fig4_{}.csv", sanitize(name));
        let report = run_curve(
            dir,
            &file,
            &problem,
            name,
            &template,
            observable.as_ref(),
            &h_list,
            reference.value,
        )?;
        if name == "theta1_stab" {
            anchor = anchor_from(&report);
        }
        curves.push((file, label.to_string()));
    }
    let script = output::convergence_script(
        "radial spring in dimension 10, shell-distance observable",
        "fig4",
        &curves,
        &[1.0, 2.0],
        anchor,
    );
    write_text(dir, "fig4.gp", &script)
}
