//! Experiment configuration: a TOML file, command-line overrides on top,
//! and builders that turn the merged result into library objects.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use efforder::ergodic::RunConfig;
use efforder::model::{build_problem, BrownianDynamics, ProblemParams, DEFAULT_SIGMA};
use efforder::schemes::{preset, PostKind, SchemeSpec};
use efforder::weak_taylor::observables::build_observable;
use efforder::weak_taylor::Observable;

/// A full experiment description.  Every field is optional so that a file
/// may specify a subset and the command line the rest; [`merge`] resolves
/// the precedence (flags over file) and the accessors apply defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheme: Option<SchemeConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observable: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_list: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explosion_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

/// Either a preset name or explicit kernel/postprocessor coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemeConfig {
    Preset(String),
    Explicit(ExplicitScheme),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitScheme {
    pub theta: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// One of `none`, `noise_shift`, `stochastic_plain`,
    /// `stochastic_stabilized`, `deterministic_implicit`.
    pub post: String,
}

/// Command-line overrides shared by the experiment subcommands.
#[derive(Args, Clone, Debug, Default)]
pub struct ExperimentArgs {
    /// TOML experiment file; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Problem name: ou, linear2d, doublewell1d, nonstiff2d, stiff3d, spring.
    #[arg(long)]
    pub problem: Option<String>,
    /// Conditioning parameter of linear2d.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// OU well stiffness.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Ambient dimension of spring.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Noise amplitude; defaults to sqrt(2).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Scheme preset name (explicit coefficients go in the config file).
    #[arg(long)]
    pub scheme: Option<String>,
    /// Observable name, e.g. x2, sum_squares, curved, radial_gap.
    #[arg(long)]
    pub observable: Option<String>,
    /// Step size.
    #[arg(long)]
    pub h: Option<f64>,
    /// Comma-separated step sizes for convergence studies.
    // Fully qualified Vec keeps clap from treating this as multi-value.
    #[arg(long, value_parser = parse_f64_list)]
    pub h_list: Option<std::vec::Vec<f64>>,
    /// Time horizon per trajectory.
    #[arg(long)]
    pub t_final: Option<f64>,
    /// Number of independent trajectories.
    #[arg(long, short = 'M')]
    pub trajectories: Option<usize>,
    /// Fraction of each trajectory discarded before averaging.
    #[arg(long)]
    pub burn_in: Option<f64>,
    /// Trajectories whose max norm exceeds this are rejected.
    #[arg(long)]
    pub explosion_threshold: Option<f64>,
    /// Base RNG seed; trajectory i uses stream i.
    #[arg(long)]
    pub base_seed: Option<u64>,
    /// Comma-separated initial state.
    #[arg(long, value_parser = parse_f64_list, allow_hyphen_values = true)]
    pub x0: Option<std::vec::Vec<f64>>,
    /// Reference value override; computed by quadrature when absent.
    #[arg(long, allow_hyphen_values = true)]
    pub reference: Option<f64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Worker thread count; defaults to the rayon global pool.
    #[arg(long)]
    pub workers: Option<usize>,
}

fn parse_f64_list(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|part| part.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect()
}

pub fn load_file(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Loads the optional file and lays the flags on top.
pub fn merge(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => load_file(path)?,
        None => ExperimentConfig::default(),
    };
    let a = args.clone();
    config.problem = a.problem.or(config.problem);
    config.epsilon = a.epsilon.or(config.epsilon);
    config.gamma = a.gamma.or(config.gamma);
    config.dim = a.dim.or(config.dim);
    config.sigma = a.sigma.or(config.sigma);
    config.scheme = a.scheme.map(SchemeConfig::Preset).or(config.scheme);
    config.observable = a.observable.or(config.observable);
    config.h = a.h.or(config.h);
    config.h_list = a.h_list.or(config.h_list);
    config.t_final = a.t_final.or(config.t_final);
    config.trajectories = a.trajectories.or(config.trajectories);
    config.burn_in = a.burn_in.or(config.burn_in);
    config.explosion_threshold = a.explosion_threshold.or(config.explosion_threshold);
    config.base_seed = a.base_seed.or(config.base_seed);
    config.x0 = a.x0.or(config.x0);
    config.reference = a.reference.or(config.reference);
    config.output = a.output.or(config.output);
    config.workers = a.workers.or(config.workers);
    Ok(config)
}

impl ExperimentConfig {
    pub fn problem_name(&self) -> Result<&str> {
        self.problem
            .as_deref()
            .ok_or_else(|| anyhow!("no problem selected (set --problem or the config file)"))
    }

    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or(DEFAULT_SIGMA)
    }

    pub fn problem_params(&self) -> ProblemParams {
        let defaults = ProblemParams::default();
        ProblemParams {
            gamma: self.gamma.unwrap_or(defaults.gamma),
            epsilon: self.epsilon.unwrap_or(defaults.epsilon),
            dim: self.dim.unwrap_or(defaults.dim),
        }
    }

    pub fn build_problem(&self) -> Result<BrownianDynamics> {
        let name = self.problem_name()?;
        build_problem(name, &self.problem_params(), self.sigma())
            .with_context(|| format!("building problem {name}"))
    }

    pub fn build_scheme(&self) -> Result<SchemeSpec> {
        match self
            .scheme
            .as_ref()
            .ok_or_else(|| anyhow!("no scheme selected (set --scheme or the config file)"))?
        {
            SchemeConfig::Preset(name) => {
                preset(name).with_context(|| format!("building scheme {name}"))
            }
            SchemeConfig::Explicit(e) => {
                let post = parse_post_kind(&e.post)?;
                SchemeSpec::new(e.theta, e.a, e.b, e.c, post, "custom")
                    .context("building explicit scheme")
            }
        }
    }

    pub fn build_observable(&self, dim: usize) -> Result<Box<dyn Observable>> {
        let name = self
            .observable
            .as_deref()
            .ok_or_else(|| anyhow!("no observable selected"))?;
        build_observable(name, dim).with_context(|| format!("building observable {name}"))
    }

    /// Assembles the sampling run parameters for the given problem
    /// dimension, applying the engine defaults for unset fields.
    pub fn run_config(&self, dim: usize, h: f64) -> Result<RunConfig> {
        let t_final = self
            .t_final
            .ok_or_else(|| anyhow!("no time horizon (set --t-final)"))?;
        let x0 = match &self.x0 {
            Some(x0) => {
                if x0.len() != dim {
                    bail!("x0 has {} components, problem has dimension {dim}", x0.len());
                }
                x0.clone()
            }
            None => vec![0.0; dim],
        };
        let mut run = RunConfig::new(h, t_final, self.trajectories.unwrap_or(10), x0);
        if let Some(burn_in) = self.burn_in {
            run.burn_in = burn_in;
        }
        if let Some(threshold) = self.explosion_threshold {
            run.explosion_threshold = threshold;
        }
        run.base_seed = self.base_seed.unwrap_or(0);
        Ok(run)
    }
}

fn parse_post_kind(name: &str) -> Result<PostKind> {
    Ok(match name {
        "none" => PostKind::None,
        "noise_shift" => PostKind::NoiseShift,
        "stochastic_plain" => PostKind::StochasticPlain,
        "stochastic_stabilized" => PostKind::StochasticStabilized,
        "deterministic_implicit" => PostKind::DeterministicImplicit,
        other => bail!(
            "unknown postprocessor {other}; expected none, noise_shift, \
             stochastic_plain, stochastic_stabilized or deterministic_implicit"
        ),
    })
}

// ══════════════════════════════════════════════════════════════════════

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml_losslessly() {
        let config = ExperimentConfig {
            problem: Some("linear2d".into()),
            epsilon: Some(1e-4),
            sigma: Some(std::f64::consts::SQRT_2),
            scheme: Some(SchemeConfig::Preset("theta1_stab".into())),
            observable: Some("sum_squares".into()),
            h_list: Some(vec![0.4, 0.2, 0.1]),
            t_final: Some(1e4),
            trajectories: Some(10),
            base_seed: Some(42),
            x0: Some(vec![-3.0, -3.0]),
            output: Some(PathBuf::from("out.csv")),
            ..Default::default()
        };
        let text = toml::to_string(&config).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, config);

        let explicit = ExperimentConfig {
            scheme: Some(SchemeConfig::Explicit(ExplicitScheme {
                theta: 1.0,
                a: -0.25,
                b: 0.0,
                c: 0.5,
                post: "stochastic_plain".into(),
            })),
            ..Default::default()
        };
        let text = toml::to_string(&explicit).unwrap();
        assert_eq!(toml::from_str::<ExperimentConfig>(&text).unwrap(), explicit);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<ExperimentConfig>("stepsize = 0.1").unwrap_err();
        assert!(err.to_string().contains("stepsize"), "{err}");
    }

    #[test]
    fn flags_override_file_values() {
        let args = ExperimentArgs {
            problem: Some("ou".into()),
            h: Some(0.25),
            ..Default::default()
        };
        let mut config = merge(&args).unwrap();
        assert_eq!(config.problem.as_deref(), Some("ou"));
        assert_eq!(config.h, Some(0.25));
        // Simulate a file value that a flag then overrides.
        config.trajectories = Some(5);
        let merged = {
            let mut base = config.clone();
            let a = ExperimentArgs {
                trajectories: Some(20),
                ..Default::default()
            };
            base.trajectories = a.trajectories.or(base.trajectories);
            base
        };
        assert_eq!(merged.trajectories, Some(20));
    }

    #[test]
    fn builders_produce_library_objects() {
        let config = ExperimentConfig {
            problem: Some("ou".into()),
            scheme: Some(SchemeConfig::Preset("em_shift".into())),
            observable: Some("x2".into()),
            t_final: Some(100.0),
            ..Default::default()
        };
        let problem = config.build_problem().unwrap();
        assert_eq!(problem.dim(), 1);
        let spec = config.build_scheme().unwrap();
        assert_eq!(spec.theta, 0.0);
        let observable = config.build_observable(1).unwrap();
        assert_eq!(observable.value(&[2.0]), 4.0);
        let run = config.run_config(1, 0.1).unwrap();
        assert_eq!(run.steps(), 1000);
        assert_eq!(run.x0, vec![0.0]);

        let explicit = ExperimentConfig {
            scheme: Some(SchemeConfig::Explicit(ExplicitScheme {
                theta: 0.0,
                a: 0.5,
                b: 0.0,
                c: 0.5,
                post: "noise_shift".into(),
            })),
            ..Default::default()
        };
        assert_eq!(explicit.build_scheme().unwrap().post_kind, PostKind::NoiseShift);
        let bad = ExperimentConfig {
            scheme: Some(SchemeConfig::Explicit(ExplicitScheme {
                theta: 0.0,
                a: 0.5,
                b: 0.0,
                c: 0.5,
                post: "hamiltonian".into(),
            })),
            ..Default::default()
        };
        assert!(bad.build_scheme().is_err());
    }
}
