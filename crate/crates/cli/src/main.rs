use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use mga_opf::mga::Criterion;
use mga_opf::pipeline::{
    emit_report, run_pipeline_file, PipelineConfig, PipelineError, PipelineStatus, Problem, ReportFormat,
};

#[derive(Parser)]
#[command(name = "mga-opf", version, about = "Near-optimal switching and commitment alternatives with AC recovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the base problem, run MGA, recover every alternative in AC and write the report.
    Solve(SolveArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ProblemArg {
    Ots,
    Uc,
}

#[derive(Clone, Copy, ValueEnum)]
enum CriterionArg {
    Hsj,
    HsjNeg,
    Hsj0,
    Random,
    All,
}

#[derive(clap::Args)]
struct SolveArgs {
    /// MATPOWER `.m` file or native JSON case.
    #[arg(long)]
    case: PathBuf,
    #[arg(long, value_enum)]
    problem: ProblemArg,
    #[arg(long, value_enum, default_value = "all")]
    criterion: CriterionArg,
    /// Allowed objective increase over the base optimum (cost units).
    #[arg(long, default_value_t = 0.0)]
    delta_f: f64,
    #[arg(long, default_value_t = mga_opf::mga::DEFAULT_MAX_ITER)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for report.json and the CSV tables.
    #[arg(long)]
    out: PathBuf,
    /// Also run the greedy single-switch search (OTS only).
    #[arg(long)]
    greedy_baseline: bool,
    /// Number of periods (UC only).
    #[arg(long, default_value_t = 1)]
    horizon: usize,
}

impl SolveArgs {
    fn config(&self) -> PipelineConfig {
        let mut cfg = PipelineConfig::new(match self.problem {
            ProblemArg::Ots => Problem::Ots,
            ProblemArg::Uc => Problem::Uc,
        });
        cfg.criteria = match self.criterion {
            CriterionArg::Hsj => vec![Criterion::Hsj],
            CriterionArg::HsjNeg => vec![Criterion::HsjNegative],
            CriterionArg::Hsj0 => vec![Criterion::HsjZeroBias],
            CriterionArg::Random => vec![Criterion::RandomVector],
            CriterionArg::All => Criterion::ALL.to_vec(),
        };
        cfg.delta_f = self.delta_f;
        cfg.max_iter = self.max_iter;
        cfg.seed = self.seed;
        cfg.greedy_baseline = self.greedy_baseline;
        cfg.formulation.horizon = self.horizon;
        cfg
    }
}

const EXIT_INPUT: u8 = 1;
const EXIT_BASE_INFEASIBLE: u8 = 2;

fn solve(args: &SolveArgs) -> Result<ExitCode, anyhow::Error> {
    let report = match run_pipeline_file(&args.case, &args.config()) {
        Ok(r) => r,
        Err(
            e @ (PipelineError::Read { .. }
            | PipelineError::Network(_)
            | PipelineError::Invalid(_)
            | PipelineError::Formulation(_)
            | PipelineError::Mga(_)
            | PipelineError::NoCriteria),
        ) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(EXIT_INPUT));
        }
        Err(e) => return Err(e.into()),
    };
    let written = emit_report(&report, &args.out, &[ReportFormat::Json, ReportFormat::CsvBundle])
        .with_context(|| format!("writing report to {}", args.out.display()))?;

    println!("case {} ({:?}): {:?}", report.case.name, report.config.problem, report.status);
    if let Some(base) = &report.base.solution {
        println!("base objective {:.6}", base.objective);
    }
    for c in &report.criteria {
        println!(
            "{:<8} {:?}: {} alternatives, {} AC-feasible",
            c.criterion.tag(),
            c.status,
            c.alternatives.len(),
            c.n_feasible
        );
    }
    if let Some(g) = &report.greedy {
        match (&g.trajectory, &g.error) {
            (Some(t), _) => println!(
                "greedy: {} steps, {} recoveries, final cost {:.6}",
                t.steps.len() - 1,
                t.total_recoveries(),
                t.steps.last().map_or(f64::NAN, |s| s.ac_cost)
            ),
            (None, Some(e)) => println!("greedy: {e}"),
            _ => {}
        }
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(match report.status {
        PipelineStatus::Completed => ExitCode::SUCCESS,
        PipelineStatus::BaseInfeasible | PipelineStatus::BaseUnsolved => ExitCode::from(EXIT_BASE_INFEASIBLE),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Solve(args) => solve(&args).unwrap_or_else(|e| {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }),
    }
}
