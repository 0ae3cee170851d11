use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fever_sem::imputation::ImputationMethod;
use fever_sem::pipeline::{self, stages, InputSource, RunConfig, VariantSelection};
use fever_sem::simulation::SimulationConfig;
use fever_sem::{Error, Result};

#[derive(Parser)]
#[command(name = "fever-sem", version, about = "Latent-factor SEM for wearable match panels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of imputations.
    #[arg(long, global = true)]
    m: Option<usize>,
    #[arg(long, global = true)]
    method: Option<ImputationMethod>,
    #[arg(long, global = true)]
    variant: Option<VariantSelection>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Bin raw records into a wide panel.
    Ingest {
        /// Raw CSV; overrides the configured input.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Simulate a panel and write it as raw records.
    Simulate {
        /// Simulation config (JSON); defaults to the configured simulate input.
        #[arg(long)]
        sim: Option<PathBuf>,
        #[arg(long)]
        fans: Option<usize>,
    },
    /// Multiply impute a panel.
    Impute {
        #[arg(long)]
        panel: PathBuf,
    },
    /// Fit the selected models to every imputation.
    Fit {
        #[arg(long)]
        imputations: PathBuf,
    },
    /// Pool estimates across imputations.
    Pool {
        #[arg(long)]
        fits: PathBuf,
    },
    /// Pooled fit indices and residuals.
    Assess {
        #[arg(long)]
        fits: PathBuf,
        #[arg(long)]
        imputations: PathBuf,
    },
    /// Full pipeline.
    Run,
}

fn config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.imputation.seed = seed;
        if let Some(InputSource::Simulate(sim)) = &mut cfg.input {
            sim.seed = seed;
        }
    }
    if let Some(m) = common.m {
        cfg.imputation.m = m;
    }
    if let Some(method) = common.method {
        cfg.imputation.method = method;
    }
    if let Some(v) = common.variant {
        cfg.variant = v;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = config(&cli.common)?;
    let out = cfg.output_dir.clone();
    match cli.command {
        Command::Ingest { input } => {
            if let Some(path) = input {
                cfg.input = Some(InputSource::Raw {
                    path: std::env::current_dir()?.join(path),
                });
            }
            let (panel, summary) = stages::ingest_to(&cfg, &out)?;
            eprintln!("ingested {} fans", panel.n_fans());
            if let Some(s) = summary {
                eprintln!("{}", serde_json::to_string_pretty(&s)?);
            }
        }
        Command::Simulate { sim, fans } => {
            let mut sim = match sim {
                Some(p) => serde_json::from_str::<SimulationConfig>(&std::fs::read_to_string(p)?)?,
                None => match cfg.input.clone() {
                    Some(InputSource::Simulate(s)) => s,
                    _ => return Err(Error::Config("simulate needs --sim or a simulate input in --config".into())),
                },
            };
            if let Some(n) = fans {
                sim.n_fans = n;
            }
            if let Some(seed) = cli.common.seed {
                sim.seed = seed;
            }
            let panel = stages::simulate_to(&sim, &cfg.clock, &out)?;
            eprintln!("simulated {} fans ({:.1}% stress missing)", panel.n_fans(), 100.0 * panel.missing_fraction());
        }
        Command::Impute { panel } => {
            let set = stages::impute_to(&panel, &cfg.imputation, &out)?;
            for w in &set.warnings {
                eprintln!("warning: {w}");
            }
            eprintln!("wrote {} imputations", set.m());
        }
        Command::Fit { imputations } => {
            let fits = stages::fit_to(&imputations, &cfg, &out)?;
            let bad = fits.nonconverged();
            if !bad.is_empty() {
                return Err(Error::Config(format!("fits did not converge: {}", bad.join(", "))).at_stage("fit"));
            }
        }
        Command::Pool { fits } => {
            let est = stages::pool_to(&fits, cfg.alpha, &out)?;
            for model in &est.models {
                print_table(model);
            }
        }
        Command::Assess { fits, imputations } => {
            let (summary, _) = stages::assess_to(&fits, &imputations, cfg.pooling, &out)?;
            print_fit(&summary);
        }
        Command::Run => {
            let outcome = pipeline::run_pipeline(&cfg)?;
            for model in &outcome.estimates.models {
                print_table(model);
            }
            print_fit(&outcome.fit);
            for w in &outcome.manifest.warnings {
                eprintln!("warning: {w}");
            }
        }
    }
    Ok(())
}

fn print_table(model: &fever_sem::pooling::PooledResult) {
    println!("{:?} (n = {}, m = {})", model.variant, model.n, model.m);
    println!("{:<14} {:>10} {:>9} {:>9}", "parameter", "estimate", "se", "p");
    for p in &model.parameters {
        let fmt = |v: Option<f64>, d: usize| v.map(|x| format!("{x:.d$}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<14} {:>10.3} {:>9} {:>9} {}",
            p.name,
            p.estimate,
            fmt(p.se, 3),
            fmt(p.p, 4),
            p.significance
        );
    }
}

fn print_fit(summary: &pipeline::FitSummary) {
    if let Some(r) = &summary.report {
        println!("{:<10} {:>6} {:>10} {:>8} {:>8} {:>8}", "model", "df", "AIC", "SRMR", "RMSEA", "CFI");
        for m in [&r.full, &r.baseline] {
            println!(
                "{:<10} {:>6} {:>10.1} {:>8.3} {:>8.3} {:>8.3}",
                if m.variant == fever_sem::model::Variant::TimeDependent { "full" } else { "baseline" },
                m.df,
                m.aic,
                m.srmr,
                m.rmsea_corrected,
                m.cfi_corrected
            );
        }
        println!("delta AIC {:.1}", r.delta_aic);
        for f in &r.flags {
            eprintln!("flag: {f}");
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
