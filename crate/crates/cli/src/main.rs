mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use mendkit::fixtures::ToyShape;
use mendkit::gradcheck::{run_gradcheck, GradcheckConfig};
use mendkit::inference::PenaltyMode;
use mendkit::mesh::save_mesh;
use mendkit::selftest::{run_selftest, SelftestOptions};

use config::RunConfig;
use pipeline::{Outcome, Overrides, Pipeline};

#[derive(Parser)]
#[command(name = "mendkit", version, about = "Restoration shapes for fractured meshes")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the logical core count.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Directory of input meshes, flat or one subdirectory per class.
    #[arg(long, global = true)]
    mesh_dir: Option<PathBuf>,
    /// Voxel-remesh inputs that are not watertight.
    #[arg(long, global = true)]
    remesh: bool,
    /// Marching Cubes resolution for reconstruction.
    #[arg(long, global = true)]
    resolution: Option<usize>,
    /// Comma-separated penalty modes, e.g. `none,ner,prox,ner+prox`.
    #[arg(long, global = true, default_value = "ner+prox")]
    penalty_mode: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fracture every input mesh.
    Fracture,
    /// Draw labeled occupancy samples for every fracture.
    Sample,
    /// Train the autodecoder on the sampled corpus.
    Train,
    /// Infer latent codes; with several modes, also reconstruct, evaluate
    /// and tabulate each.
    Infer,
    /// Extract restoration meshes from inferred codes.
    Reconstruct,
    /// Score reconstructions against the ground truth.
    Eval,
    /// Every stage in order.
    Run,
    /// Finite-difference audit of the loss gradients.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        models: usize,
    },
    /// Invariant suites; exits nonzero on failure.
    Selftest {
        #[arg(long, default_value_t = 20)]
        gradcheck_models: usize,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Write the built-in toy shapes as PLY meshes.
    Fixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 48)]
        toy_resolution: usize,
    },
}

enum Failure {
    Usage(anyhow::Error),
    Run(anyhow::Error),
}

fn modes(list: &str) -> Result<Vec<PenaltyMode>> {
    Ok(PenaltyMode::parse_list(list)?)
}

fn run(cli: Cli) -> Result<Outcome, Failure> {
    let usage = Failure::Usage;
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(usage)?,
        None => RunConfig::default(),
    };
    let modes = modes(&cli.penalty_mode).map_err(Failure::Usage)?;
    let ov = Overrides {
        seed: cli.seed,
        mesh_dir: cli.mesh_dir.clone(),
        remesh: cli.remesh,
        resolution: cli.resolution,
    };
    let pipe = Pipeline::new(cfg, &ov);
    let single = || -> Result<PenaltyMode> {
        match modes.as_slice() {
            [m] => Ok(*m),
            _ => anyhow::bail!("this command takes exactly one penalty mode"),
        }
    };
    let result = match cli.command {
        Command::Fracture => pipe.cmd_fracture(),
        Command::Sample => pipe.cmd_sample(),
        Command::Train => pipe.cmd_train(),
        Command::Infer if modes.len() > 1 => pipe.ablation(&modes).map(|(o, table)| {
            print!("{table}");
            o
        }),
        Command::Infer => single().map_err(Failure::Usage)?.pipe(|m| pipe.cmd_infer(m)),
        Command::Reconstruct => single().map_err(Failure::Usage)?.pipe(|m| pipe.cmd_reconstruct(m)),
        Command::Eval => single().map_err(Failure::Usage)?.pipe(|m| {
            pipe.cmd_eval(m).map(|(o, report)| {
                print!("{}", report.to_table());
                o
            })
        }),
        Command::Run => (|| {
            let mut out = pipe.cmd_fracture()?;
            out += pipe.cmd_sample()?;
            out += pipe.cmd_train()?;
            if let [m] = modes.as_slice() {
                let (o, report) = pipe.evaluate_mode(*m)?;
                print!("{}", report.to_table());
                out += o;
            } else {
                let (o, table) = pipe.ablation(&modes)?;
                print!("{table}");
                out += o;
            }
            Ok(out)
        })(),
        Command::Gradcheck { models } => (|| {
            let report = run_gradcheck(&GradcheckConfig {
                models,
                seed: pipe.cfg.seed,
                ..Default::default()
            })?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            println!("gradcheck {}", if report.passed() { "PASS" } else { "FAIL" });
            Ok(Outcome {
                failures: usize::from(!report.passed()),
            })
        })(),
        Command::Selftest {
            gradcheck_models,
            inject_fault,
        } => (|| {
            let opts = SelftestOptions {
                seed: pipe.cfg.seed,
                inject_fault,
                gradcheck: GradcheckConfig {
                    models: gradcheck_models,
                    ..Default::default()
                },
                ..Default::default()
            };
            let suites = run_selftest(&opts)?;
            for s in &suites {
                println!("{}", s.line());
            }
            Ok(Outcome {
                failures: suites.iter().filter(|s| !s.passed()).count(),
            })
        })(),
        Command::Fixtures { out, toy_resolution } => (|| {
            std::fs::create_dir_all(&out)?;
            for shape in ToyShape::ALL {
                let path = out.join(format!("{}.ply", shape.name()));
                save_mesh(&shape.mesh(toy_resolution)?, &path).with_context(|| path.display().to_string())?;
                println!("{}", path.display());
            }
            Ok(Outcome::default())
        })(),
    };
    result.map_err(Failure::Run)
}

trait Pipe: Sized {
    fn pipe<R>(self, f: impl FnOnce(Self) -> R) -> R {
        f(self)
    }
}

impl<T> Pipe for T {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(o) if o.failures == 0 => ExitCode::SUCCESS,
        Ok(o) => {
            log::error!("{} failure(s)", o.failures);
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
