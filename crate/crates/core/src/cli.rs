//! Command-line front end: subcommand parsing, file plumbing, and plot-ready
//! output tables. All numeric output goes through the 17-significant-digit
//! formatter so written files round-trip exactly.

use crate::error::{Error, Result};
use crate::estimator::{estimate_spectrum, EstimationOptions};
use crate::io::{
    format_f64, read_design_json, read_matrix_csv, read_spectrum_csv, write_matrix_csv,
    write_report_csv, write_report_json, write_spectrum_csv,
};
use crate::pca::{components_to_retain, explained_fraction_curve, CurveBasis};
use crate::quest::{build_sample_spectral_model, quantiles_from_model};
use crate::shrinkage::{nonlinear_shrinkage, Eigensystem};
use crate::sim::{
    run_eigenvalue_experiment, run_pca_experiment, run_shrinkage_experiment, EigenEstimator,
};
use crate::spectral::{ConcentrationContext, SpectrumVector};
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use std::io::Write;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "quest",
    about = "Population covariance eigenvalue estimation, nonlinear shrinkage, and PCA in large dimensions",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate the quantile map of a population spectrum: limiting sample
    /// density/CDF grid and smoothed quantiles.
    Eval(EvalArgs),
    /// Estimate the population spectrum from sample eigenvalues.
    Estimate(EstimateArgs),
    /// Nonlinear shrinkage of the sample covariance of a data matrix.
    Shrink(ShrinkArgs),
    /// Explained-variation curves and retention counts for a data matrix.
    Pca(PcaArgs),
    /// Run a simulation design and write the aggregate report.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Single-column CSV of population eigenvalues.
    #[arg(long)]
    spectrum: PathBuf,
    /// Sample size n defining the concentration p/n.
    #[arg(long)]
    n: usize,
    /// Skip one header line when reading.
    #[arg(long)]
    header: bool,
    /// Output CSV of the model grid (x, density, cdf).
    #[arg(long, default_value = "quest_grid.csv")]
    output_grid: PathBuf,
    /// Output CSV of the p smoothed quantiles.
    #[arg(long, default_value = "quest_quantiles.csv")]
    output_quantiles: PathBuf,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Single-column CSV of sample eigenvalues.
    #[arg(long)]
    eigenvalues: PathBuf,
    /// Sample size n.
    #[arg(long)]
    n: usize,
    #[arg(long)]
    header: bool,
    /// Output CSV of the estimated population eigenvalues.
    #[arg(long, default_value = "tau_hat.csv")]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct ShrinkArgs {
    /// Data matrix CSV, one observation per row, assumed centered.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    header: bool,
    /// Output CSV of the shrunk eigenvalues.
    #[arg(long, default_value = "d_hat.csv")]
    output_d: PathBuf,
    /// Output CSV of the shrunk covariance matrix.
    #[arg(long, default_value = "shrunk_covariance.csv")]
    output_matrix: PathBuf,
}

#[derive(Debug, Args)]
struct PcaArgs {
    /// Data matrix CSV, one observation per row, assumed centered.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    header: bool,
    /// Comma-separated target fractions in (0,1), e.g. 0.7,0.8,0.9.
    #[arg(long, value_delimiter = ',')]
    targets: Vec<f64>,
    /// Output CSV of the curve table (k, f_sample, f_shrinkage).
    #[arg(long, default_value = "pca_curve.csv")]
    output_curve: PathBuf,
    /// Output CSV of retention counts per basis and target.
    #[arg(long, default_value = "pca_retention.csv")]
    output_retention: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Simulation design JSON.
    #[arg(long)]
    design: PathBuf,
    /// Which experiment to run.
    #[arg(long, value_parser = ["eigenvalues", "shrinkage", "pca"], default_value = "eigenvalues")]
    experiment: String,
    /// Estimators for the eigenvalue experiment.
    #[arg(long, value_delimiter = ',', default_value = "sample,lawley,quest")]
    estimators: Vec<String>,
    /// Target fractions for the PCA experiment.
    #[arg(long, value_delimiter = ',', default_value = "0.7,0.8,0.9")]
    targets: Vec<f64>,
    /// Master seed; overrides the design file. Generated and printed when
    /// neither is present.
    #[arg(long)]
    seed: Option<u64>,
    /// Output JSON report.
    #[arg(long, default_value = "report.json")]
    output: PathBuf,
    /// Optional long-format CSV companion of the report.
    #[arg(long)]
    output_csv: Option<PathBuf>,
}

/// Entry point shared by the binary and the integration tests. Writes files,
/// prints summaries to `out`.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            write!(out, "{}", e.render())?;
            return Ok(());
        }
        Err(e) => return Err(Error::validation(e.render().to_string())),
    };
    match cli.command {
        Command::Eval(a) => cmd_eval(a, out),
        Command::Estimate(a) => cmd_estimate(a, out),
        Command::Shrink(a) => cmd_shrink(a, out),
        Command::Pca(a) => cmd_pca(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
    }
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let t = read_spectrum_csv(&a.spectrum, a.header)?;
    let ctx = ConcentrationContext::new(a.n, t.len())?;
    let model = build_sample_spectral_model(&t, &ctx)?;
    let mut grid = std::io::BufWriter::new(std::fs::File::create(&a.output_grid)?);
    writeln!(grid, "x,density,cdf")?;
    for ((xs, ds), cs) in model.grid.iter().zip(&model.density).zip(&model.cdf) {
        for ((&x, &d), &c) in xs.iter().zip(ds).zip(cs) {
            writeln!(grid, "{},{},{}", format_f64(x), format_f64(d), format_f64(c))?;
        }
    }
    drop(grid);
    let q = quantiles_from_model(&model);
    write_spectrum_csv(&q, &a.output_quantiles)?;
    writeln!(
        out,
        "p = {}, n = {}, support intervals = {}, mass at zero = {}",
        ctx.p,
        ctx.n,
        model.support.intervals.len(),
        model.support.mass_at_zero
    )?;
    Ok(())
}

fn cmd_estimate(a: EstimateArgs, out: &mut dyn Write) -> Result<()> {
    let lambda = read_spectrum_csv(&a.eigenvalues, a.header)?;
    let ctx = ConcentrationContext::new(a.n, lambda.len())?;
    let est = estimate_spectrum(&lambda, &ctx, &EstimationOptions::default())?;
    write_spectrum_csv(est.spectrum.values(), &a.output)?;
    writeln!(
        out,
        "objective = {}, iterations = {}, converged = {}",
        format_f64(est.objective),
        est.iterations,
        est.converged
    )?;
    Ok(())
}

/// Ascending eigensystem of the sample covariance `(1/n) Y'Y`.
fn sample_eigensystem(data: &DMatrix<f64>) -> Result<Eigensystem> {
    let (n, p) = (data.nrows(), data.ncols());
    let ctx = ConcentrationContext::new(n, p)?;
    let s = data.transpose() * data / n as f64;
    let se = s.symmetric_eigen();
    let mut idx: Vec<usize> = (0..p).collect();
    idx.sort_by(|&a, &b| se.eigenvalues[a].partial_cmp(&se.eigenvalues[b]).unwrap());
    let lambda = SpectrumVector::new(idx.iter().map(|&i| se.eigenvalues[i].max(0.0)).collect())?;
    let mut u = DMatrix::zeros(p, p);
    for (col, &i) in idx.iter().enumerate() {
        u.set_column(col, &se.eigenvectors.column(i));
    }
    Eigensystem::new(lambda, u, ctx)
}

fn cmd_shrink(a: ShrinkArgs, out: &mut dyn Write) -> Result<()> {
    let data = read_matrix_csv(&a.data, a.header)?;
    let eig = sample_eigensystem(&data)?;
    let est = estimate_spectrum(&eig.eigenvalues, &eig.ctx, &EstimationOptions::default())?;
    let result = nonlinear_shrinkage(&eig, &est.spectrum)?;
    write_spectrum_csv(&result.d, &a.output_d)?;
    write_matrix_csv(&result.matrix, &a.output_matrix)?;
    writeln!(
        out,
        "p = {}, n = {}, estimation objective = {}",
        eig.ctx.p,
        eig.ctx.n,
        format_f64(est.objective)
    )?;
    Ok(())
}

fn cmd_pca(a: PcaArgs, out: &mut dyn Write) -> Result<()> {
    if a.targets.is_empty() {
        return Err(Error::validation("at least one --targets value required"));
    }
    let data = read_matrix_csv(&a.data, a.header)?;
    let eig = sample_eigensystem(&data)?;
    let est = estimate_spectrum(&eig.eigenvalues, &eig.ctx, &EstimationOptions::default())?;
    let d_hat = nonlinear_shrinkage(&eig, &est.spectrum)?.d;
    let positive: Vec<f64> = eig
        .eigenvalues
        .values()
        .iter()
        .copied()
        .filter(|&l| l > 0.0)
        .collect();
    let sample_curve = explained_fraction_curve(&positive, CurveBasis::Sample)?;
    let shrink_curve = explained_fraction_curve(&d_hat, CurveBasis::Shrinkage)?;

    let mut curve = std::io::BufWriter::new(std::fs::File::create(&a.output_curve)?);
    writeln!(curve, "k,f_sample,f_shrinkage")?;
    for k in 0..eig.ctx.p {
        // The sample curve reaches 1 at its last positive eigenvalue; beyond
        // that it stays at 1.
        let fs = sample_curve
            .fractions()
            .get(k)
            .copied()
            .unwrap_or(1.0);
        writeln!(
            curve,
            "{},{},{}",
            k + 1,
            format_f64(fs),
            format_f64(shrink_curve.fractions()[k])
        )?;
    }
    drop(curve);

    let mut retention = std::io::BufWriter::new(std::fs::File::create(&a.output_retention)?);
    writeln!(retention, "basis,q,k")?;
    for &q in &a.targets {
        let ks = components_to_retain(&sample_curve, q)?;
        let kh = components_to_retain(&shrink_curve, q)?;
        writeln!(retention, "sample,{q},{ks}")?;
        writeln!(retention, "shrinkage,{q},{kh}")?;
        writeln!(out, "q = {q}: retain {ks} (sample), {kh} (shrinkage)")?;
    }
    Ok(())
}

fn cmd_simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let mut design = read_design_json(&a.design)?;
    if let Some(seed) = a.seed {
        design.master_seed = Some(seed);
    }
    if design.master_seed.is_none() {
        // No seed anywhere: generate one and print it for reproducibility.
        design.master_seed = Some(rand::random());
    }
    writeln!(out, "seed = {}", design.master_seed.unwrap())?;

    if let Ok(workers) = std::env::var("WORKERS") {
        let workers: usize = workers
            .parse()
            .map_err(|_| Error::validation(format!("WORKERS = '{workers}' is not a number")))?;
        // Ignore the error if a global pool already exists (tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }

    let report = match a.experiment.as_str() {
        "eigenvalues" => {
            let estimators: Vec<EigenEstimator> = a
                .estimators
                .iter()
                .map(|s| EigenEstimator::from_name(s))
                .collect::<Result<_>>()?;
            run_eigenvalue_experiment(&design, &estimators)?
        }
        "shrinkage" => run_shrinkage_experiment(&design)?,
        "pca" => run_pca_experiment(&design, &a.targets)?,
        other => return Err(Error::validation(format!("unknown experiment '{other}'"))),
    };
    write_report_json(&report, &a.output)?;
    if let Some(csv) = &a.output_csv {
        write_report_csv(&report, csv)?;
    }
    writeln!(
        out,
        "{} replications in {:.1}s -> {}",
        report.replication_count,
        report.elapsed_seconds,
        a.output.display()
    )?;
    Ok(())
}
