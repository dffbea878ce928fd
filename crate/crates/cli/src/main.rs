use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mdlsel_cli::runner::{CompareInput, GenKind, CURVES_FILE};
use mdlsel_cli::store::{default_out_dir, OUT_ENV};
use mdlsel_cli::{
    run_compare, run_envelope, run_gen, run_learning_sweep, run_oracle, run_prequential, ExperimentPlan, Preset,
};
use mdlsel_core::TaskConfig;

#[derive(Parser)]
#[command(name = "mdlsel", version, about = "Feature selection as two-part compression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    A,
    B,
}

#[derive(Args)]
struct PlanArgs {
    /// Plan JSON; overrides the preset.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    preset: PresetArg,
    /// Task used with a preset when no plan is given.
    #[arg(long, value_enum, default_value = "a")]
    scenario: ScenarioArg,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// IDX image file; requires --labels.
    #[arg(long, requires = "labels")]
    images: Option<PathBuf>,
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
}

impl PlanArgs {
    fn resolve(&self) -> anyhow::Result<(ExperimentPlan, PathBuf)> {
        let mut plan = match &self.plan {
            Some(path) => ExperimentPlan::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => {
                let (name, task) = match self.scenario {
                    ScenarioArg::A => ("scenario-a", TaskConfig::scenario_a(0.25)),
                    ScenarioArg::B => ("scenario-b", TaskConfig::scenario_b(0.15, 50)),
                };
                let preset = match self.preset {
                    PresetArg::Desk => Preset::Desk,
                    PresetArg::Full => Preset::Full,
                };
                ExperimentPlan::preset(preset, name, task)
            }
        };
        if let Some(seed) = self.seed {
            plan.seed = seed;
        }
        if let Some(jobs) = self.jobs {
            plan.jobs = Some(jobs);
        }
        if let (Some(images), Some(labels)) = (&self.images, &self.labels) {
            plan = plan.with_idx(images.clone(), labels.clone());
        }
        plan.validate()?;
        let out = self
            .out
            .clone()
            .or_else(|| plan.out_dir.clone())
            .unwrap_or_else(default_out_dir);
        Ok((plan, out))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated dataset as a container file.
    Gen {
        #[command(flatten)]
        plan: PlanArgs,
        /// original, isolated:<feature> or ood:<feature>
        #[arg(long, default_value = "original")]
        kind: GenKind,
        #[arg(long, default_value_t = 1024)]
        n: usize,
    },
    /// Prequential curves of every candidate feature.
    Preq {
        #[command(flatten)]
        plan: PlanArgs,
    },
    /// Lower envelope of the compression lines in curve files.
    Envelope {
        #[command(flatten)]
        plan: PlanArgs,
        /// Curve CSVs; defaults to the one in the output directory.
        curves: Vec<PathBuf>,
    },
    /// Train on the mixed task across sizes and record feature reliance.
    Sweep {
        #[command(flatten)]
        plan: PlanArgs,
    },
    /// Pair theoretical and empirical transitions across run directories.
    Compare {
        /// Directories holding envelope.json and reliance.csv.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, env = OUT_ENV)]
        out: Option<PathBuf>,
    },
    /// Closed-form archetype codelengths of the plan's task.
    Oracle {
        #[command(flatten)]
        plan: PlanArgs,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Gen { plan, kind, n } => {
            let (plan, out) = plan.resolve()?;
            let path = run_gen(&plan, kind, n, &out)?;
            println!("wrote {}", path.display());
        }
        Command::Preq { plan } => {
            let (plan, out) = plan.resolve()?;
            let result = run_prequential(&plan, &out)?;
            for c in &result.candidates {
                let d = c.decomposition()?;
                println!(
                    "{:<10} total {:>10.1} bits  model cost {:>9.1}  asymptotic {:>10.1}",
                    c.feature, d.total_bits, d.model_cost_bits, d.asymptotic_bits
                );
            }
            println!("wrote {}", result.curves_path.display());
        }
        Command::Envelope { plan, curves } => {
            let (plan, out) = plan.resolve()?;
            let curves = if curves.is_empty() { vec![out.join(CURVES_FILE)] } else { curves };
            let env = run_envelope(&curves, &plan.sizes, &out, &plan.name)?;
            for t in &env.report.transitions {
                println!("{} -> {} at N = {:.1}", t.from, t.to, t.n);
            }
            match env.report.n_theory {
                Some(n) => println!("N_theory = {n:.1} (grid {:?})", env.report.n_theory_grid),
                None => println!("no transition"),
            }
        }
        Command::Sweep { plan } => {
            let (plan, out) = plan.resolve()?;
            let series = run_learning_sweep(&plan, &out)?;
            for f in plan.task.present_features() {
                let gaps: Vec<String> = series
                    .gap_summary(f)
                    .iter()
                    .map(|g| format!("{}:{:.3}", g.n, g.mean))
                    .collect();
                println!("{f:<10} {}", gaps.join(" "));
            }
        }
        Command::Compare { runs, out } => {
            let inputs: Vec<CompareInput> = runs.iter().map(|d| CompareInput::from_dir(d)).collect();
            let report = run_compare(&inputs, &out.unwrap_or_else(default_out_dir))?;
            for p in &report.pairs {
                println!("{:<20} theory {:>9.1}  empirical {:>9.1}", p.label, p.n_theory, p.n_empirical);
            }
            for a in &report.absent {
                println!("{:<20} absent: {}", a.label, a.reason);
            }
            match &report.correlation {
                Some(c) => println!("pearson(log N) = {:.3}, spearman = {:.3}", c.pearson_log10, c.spearman),
                None => bail!("fewer than three paired transitions"),
            }
        }
        Command::Oracle { plan } => {
            let (plan, _) = plan.resolve()?;
            let report = run_oracle(&plan.task)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}
