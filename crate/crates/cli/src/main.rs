//! Command-line driver for the postprocessed sampling library.

mod commands;
mod config;
mod figures;
mod output;
mod refs;

use anyhow::Result;
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "efforder",
    version,
    about = "Postprocessed stochastic integrators for invariant-measure sampling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form linear response, defect order and stability of a scheme.
    AnalyzeLinear(commands::AnalyzeArgs),
    /// Order-2 residuals for the presets and random family members.
    CheckOrders(commands::CheckOrdersArgs),
    /// One-step weak Taylor defect tables for a kernel.
    WeakTaylor(commands::WeakTaylorArgs),
    /// Quadrature or closed-form invariant-measure average.
    Reference(commands::ReferenceArgs),
    /// Long-run sampling estimate of an observable.
    Sample(commands::SampleArgs),
    /// Error against stepsize for one scheme, as CSV.
    Converge(commands::ConvergeArgs),
    /// Regenerates the bundled figure data and gnuplot scripts.
    Figures(figures::FigureArgs),
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::AnalyzeLinear(args) => commands::analyze_linear(args),
        Command::CheckOrders(args) => commands::check_orders(args),
        Command::WeakTaylor(args) => commands::weak_taylor(args),
        Command::Reference(args) => commands::reference(args),
        Command::Sample(args) => commands::sample(args),
        Command::Converge(args) => commands::converge(args),
        Command::Figures(args) => figures::run(args),
    }
}
