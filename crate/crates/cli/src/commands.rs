use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Array3, ArrayD, Axis, Ix2, Ix3};
use serde::Serialize;
use serde_json::Value;

use mvcsc::bench::{bench_convergence as run_convergence, bench_scaling_channels, convergence_instance, first_signal};
use mvcsc::csct;
use mvcsc::learner::{fit as run_fit, FitResult, IterationRecord, IterationTiming, RegPolicy};
use mvcsc::linalg::leading_singular_pair;
use mvcsc::plot::render_svg;
use mvcsc::simulate::{make_truth, recovery_loss, run_recovery_experiment, ExperimentGrid, ExperimentRow, SimConfig};
use mvcsc::{CscError, Dictionary, SignalSet};

use crate::config::{
    parse_reg, resolve, ConvergenceSettings, EvalSettings, ExperimentSettings, FitSettings, Resolved, ScalingSettings, Settings,
    SimulateSettings,
};
use crate::error::{usage, CliError, CliResult};
use crate::manifest::{fresh_dir, write_json, FileHash, RunManifest};
use crate::{plots, Common};

/// Sizes the global pool and returns the thread count in effect.
pub fn setup_threads(common: &Common) -> CliResult<usize> {
    if let Some(n) = common.threads {
        if n == 0 {
            return usage("--threads: must be >= 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    Ok(rayon::current_num_threads())
}

fn settings<T: Settings>(common: &Common, flags: Value) -> CliResult<Resolved<T>> {
    resolve(common.preset.as_deref(), common.config.as_deref(), flags)
}

fn save<D: ndarray::Dimension>(dir: &Path, name: &str, a: ndarray::ArrayView<'_, f64, D>, m: &mut RunManifest) -> CliResult<PathBuf> {
    let path = dir.join(name);
    csct::save(&path, a)?;
    m.output(&path)?;
    Ok(path)
}

fn load_input(path: &Path) -> CliResult<ArrayD<f64>> {
    if !path.is_file() {
        return usage(format!("{}: no such file", path.display()));
    }
    csct::load(path).map_err(|e| match e {
        CscError::Io(io) => CliError::Usage(format!("{}: {io}", path.display())),
        e => CliError::Usage(format!("{}: {e}", path.display())),
    })
}

fn make_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Other(format!("cannot create {}: {e}", dir.display())))
}

pub fn simulate(common: &Common, threads: usize, flags: Value) -> CliResult<()> {
    let r: Resolved<SimulateSettings> = settings(common, flags)?;
    let s = &r.settings;
    let cfg = SimConfig {
        n_signals: s.n_signals,
        n_channels: s.channels,
        n_atoms: s.n_atoms,
        atom_len: s.atom_len,
        n_valid: s.n_valid,
        density: s.density,
        noise_sigma: s.sigma,
        seed: s.seed,
        ..SimConfig::default()
    };
    let truth = make_truth(&cfg)?;
    let mut m = RunManifest::start("simulate", common.preset.as_deref(), r.config_file.as_deref(), r.as_value(), s.seed, threads)?;
    m.origins = r.origin_strings();
    let dir = &common.out;
    make_dir(dir)?;
    save(dir, "X.csct", truth.signals.data().view(), &mut m)?;
    save(dir, "truth_dict.csct", truth.dictionary.materialize().view(), &mut m)?;
    if let Dictionary::Rank1 { u, v } = &truth.dictionary {
        save(dir, "truth_u.csct", u.view(), &mut m)?;
        save(dir, "truth_v.csct", v.view(), &mut m)?;
    }
    save(dir, "truth_z.csct", truth.activations.data().view(), &mut m)?;
    m.finish(dir)?;
    println!(
        "wrote {} signals, P={}, T={} to {}",
        s.n_signals,
        s.channels,
        truth.signals.n_times(),
        dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct Trace<'a> {
    model: &'static str,
    n_atoms: usize,
    atom_len: usize,
    reg: RegPolicy,
    seed: u64,
    n_signals: usize,
    n_channels: usize,
    n_times: usize,
    converged: bool,
    final_objective: f64,
    final_lambda: f64,
    objective_trace: &'a [f64],
    /// `lambda_max` at the start of each iteration.
    lambda_trace: &'a [f64],
    iterations: &'a [IterationRecord],
}

#[derive(Serialize)]
struct Timings<'a> {
    total_seconds: f64,
    iterations: &'a [IterationTiming],
}

fn signals_from(a: ArrayD<f64>, path: &Path) -> CliResult<SignalSet> {
    let data: Array3<f64> = match a.ndim() {
        3 => a.into_dimensionality::<Ix3>().expect("3-d"),
        2 => a.into_dimensionality::<Ix2>().expect("2-d").insert_axis(Axis(0)),
        n => return usage(format!("{}: signals must be N x P x T or P x T, got {n} dims", path.display())),
    };
    Ok(SignalSet::new(data)?)
}

pub fn fit(common: &Common, threads: usize, flags: Value) -> CliResult<()> {
    let r: Resolved<FitSettings> = settings(common, flags)?;
    let s = &r.settings;
    let input = PathBuf::from(s.input.as_deref().expect("checked"));
    let x = signals_from(load_input(&input)?, &input)?;
    let cfg = s.fit_config(threads > 1);
    cfg.validate()?;
    cfg.check_data(&x)?;
    if let RegPolicy::FractionOfLambdaMax(f) = parse_reg(&s.reg).expect("checked") {
        if f >= 1.0 {
            eprintln!("warning: reg {} puts lambda at or above lambda_max; every activation will be zero", s.reg);
        }
    }

    let mut m = RunManifest::start("fit", common.preset.as_deref(), r.config_file.as_deref(), r.as_value(), s.seed, threads)?;
    m.origins = r.origin_strings();
    m.input(&input)?;
    let dir = &common.out;
    make_dir(dir)?;
    let start = Instant::now();
    let res: FitResult = match run_fit(&x, &cfg) {
        Ok(res) => res,
        Err(e @ (CscError::NonFinite(_) | CscError::DegenerateAtom(_))) => {
            let path = dir.join("diagnostics.json");
            let diag = serde_json::json!({
                "error": e.to_string(),
                "command": "fit",
                "input": FileHash { path: input.display().to_string(), sha256: crate::manifest::sha256_file(&input)? },
                "config": r.as_value(),
            });
            write_json(&path, &diag)?;
            return Err(CliError::Numerical {
                message: e.to_string(),
                diagnostics: Some(path),
            });
        }
        Err(e) => return Err(e.into()),
    };
    let total = start.elapsed().as_secs_f64();

    save(dir, "dict.csct", res.dictionary.materialize().view(), &mut m)?;
    if let Dictionary::Rank1 { u, v } = &res.dictionary {
        save(dir, "u.csct", u.view(), &mut m)?;
        save(dir, "v.csct", v.view(), &mut m)?;
    }
    save(dir, "z.csct", res.activations.data().view(), &mut m)?;
    let trace = Trace {
        model: cfg.model.name(),
        n_atoms: cfg.n_atoms,
        atom_len: cfg.atom_len,
        reg: cfg.reg,
        seed: cfg.seed,
        n_signals: x.n_signals(),
        n_channels: x.n_channels(),
        n_times: x.n_times(),
        converged: res.converged,
        final_objective: res.final_objective(),
        final_lambda: res.final_lambda(),
        objective_trace: &res.objective_trace,
        lambda_trace: &res.lambda_trace,
        iterations: &res.iterations,
    };
    let trace_path = dir.join("trace.json");
    write_json(&trace_path, &trace)?;
    m.output(&trace_path)?;
    write_json(
        &dir.join("timings.json"),
        &Timings {
            total_seconds: total,
            iterations: &res.timings,
        },
    )?;
    m.finish(dir)?;
    println!("final objective: {:e}", res.final_objective());
    println!("lambda: {:e}", res.final_lambda());
    Ok(())
}

/// `K x L` patterns as stored, or the leading right singular vector of each `P x L` atom.
fn patterns(path: &Path) -> CliResult<Array2<f64>> {
    let a = load_input(path)?;
    match a.ndim() {
        2 => Ok(a.into_dimensionality::<Ix2>().expect("2-d")),
        3 => {
            let atoms = a.into_dimensionality::<Ix3>().expect("3-d");
            let (k, _, l) = atoms.dim();
            let mut out = Array2::zeros((k, l));
            for (i, atom) in atoms.outer_iter().enumerate() {
                out.row_mut(i).assign(&leading_singular_pair(atom).2);
            }
            Ok(out)
        }
        n => usage(format!("{}: expected K x L or K x P x L, got {n} dims", path.display())),
    }
}

pub fn eval(common: &Common, threads: usize, flags: Value) -> CliResult<()> {
    let r: Resolved<EvalSettings> = settings(common, flags)?;
    let est_path = PathBuf::from(r.settings.estimated.as_deref().expect("checked"));
    let truth_path = PathBuf::from(r.settings.truth.as_deref().expect("checked"));
    let est = patterns(&est_path)?;
    let truth = patterns(&truth_path)?;
    if est.dim() != truth.dim() {
        return usage(format!(
            "shape mismatch: estimated is {} x {}, truth is {} x {}",
            est.nrows(),
            est.ncols(),
            truth.nrows(),
            truth.ncols()
        ));
    }
    let matched = recovery_loss(est.view(), truth.view())?;
    let mut m = RunManifest::start("eval", common.preset.as_deref(), r.config_file.as_deref(), r.as_value(), 0, threads)?;
    m.origins = r.origin_strings();
    m.input(&est_path)?;
    m.input(&truth_path)?;
    make_dir(&common.out)?;
    let path = common.out.join("eval.json");
    write_json(
        &path,
        &serde_json::json!({
            "loss": matched.loss,
            "permutation": matched.permutation,
            "signs": matched.signs,
            "n_atoms": est.nrows(),
            "atom_len": est.ncols(),
        }),
    )?;
    m.output(&path)?;
    m.finish(&common.out)?;
    println!("{:e}", matched.loss);
    Ok(())
}

fn write_svg(path: &Path, chart: &mvcsc::plot::Chart, m: &mut RunManifest) -> CliResult<()> {
    fs::write(path, render_svg(chart))?;
    m.output(path)
}

pub fn bench_scaling(common: &Common, threads: usize, flags: Value) -> CliResult<()> {
    let r: Resolved<ScalingSettings> = settings(common, flags)?;
    let report = bench_scaling_channels(&r.settings)?;
    let dir = fresh_dir(&common.out, "scaling-p")?;
    let mut m = RunManifest::start("scaling-p", common.preset.as_deref(), r.config_file.as_deref(), r.as_value(), r.settings.seed, threads)?;
    m.origins = r.origin_strings();
    let json = dir.join("report.json");
    write_json(&json, &report)?;
    m.output(&json)?;
    let csv_path = dir.join("report.csv");
    report.write_csv(fs::File::create(&csv_path)?)?;
    m.output(&csv_path)?;
    write_svg(&dir.join("scaling.svg"), &plots::scaling(&report), &mut m)?;
    m.finish(&dir)?;
    println!("{:<18} {:>5} {:>12} {:>10}", "step", "P", "median_s", "normalized");
    for x in &report.measurements {
        println!("{:<18} {:>5} {:>12.3e} {:>10.3}", x.step, x.p, x.median_s, x.normalized);
    }
    println!("report: {}", dir.display());
    Ok(())
}

pub fn bench_convergence(common: &Common, threads: usize, flags: Value) -> CliResult<()> {
    let r: Resolved<ConvergenceSettings> = settings(common, flags)?;
    let s = &r.settings;
    let (x, d) = convergence_instance(s.channels, s.n_atoms, s.atom_len, s.n_valid, s.seed)?;
    let report = run_convergence(first_signal(&x), &d, &s.config())?;
    let dir = fresh_dir(&common.out, "convergence")?;
    let mut m = RunManifest::start("convergence", common.preset.as_deref(), r.config_file.as_deref(), r.as_value(), s.seed, threads)?;
    m.origins = r.origin_strings();
    let json = dir.join("report.json");
    write_json(&json, &report)?;
    m.output(&json)?;
    let csv_path = dir.join("report.csv");
    report.write_csv(fs::File::create(&csv_path)?)?;
    m.output(&csv_path)?;
    for (frac, chart) in plots::convergence(&report) {
        write_svg(&dir.join(format!("convergence_{frac}.svg")), &chart, &mut m)?;
    }
    m.finish(&dir)?;
    println!(
        "{:<11} {:>8} {:>8} {:>16} {:>14}",
        "solver", "lambda", "reached", "median_ttp_s", "median_gap"
    );
    for x in &report.summary {
        println!(
            "{:<11} {:>8} {:>5}/{:<2} {:>16.3e} {:>14.3e}",
            x.solver.name(),
            x.lambda_fraction,
            x.reached,
            x.runs,
            x.median_time_to_precision_s,
            x.median_final_gap
        );
    }
    println!("report: {}", dir.display());
    Ok(())
}

pub fn experiment(common: &Common, threads: usize, flags: Value) -> CliResult<()> {
    let r: Resolved<ExperimentSettings> = settings(common, flags)?;
    let s = &r.settings;
    let grid = ExperimentGrid {
        channels: s.channels.clone(),
        sigmas: s.sigmas.clone(),
        lambda_fractions: s.lambdas.clone(),
    };
    let base = SimConfig {
        n_signals: s.n_signals,
        atom_len: s.atom_len,
        n_valid: s.n_valid,
        density: s.density,
        seed: s.seed,
        ..SimConfig::default()
    };
    let mut fc = mvcsc::learner::FitConfig::new(s.model, 2, s.atom_len, RegPolicy::FractionOfLambdaMax(s.lambdas[0]));
    fc.n_iter = s.n_iter;
    fc.z_config.tol = s.z_tol;
    fc.seed = s.seed;
    let (rows, runs) = run_recovery_experiment(&grid, &base, &fc, s.n_seeds, threads > 1)?;

    let mut m = RunManifest::start("experiment", common.preset.as_deref(), r.config_file.as_deref(), r.as_value(), s.seed, threads)?;
    m.origins = r.origin_strings();
    let dir = &common.out;
    make_dir(dir)?;
    let table = dir.join("experiment.csv");
    mvcsc::simulate::write_experiment_csv(&rows, fs::File::create(&table)?)?;
    m.output(&table)?;
    let runs_path = dir.join("runs.csv");
    {
        let mut w = csv::Writer::from_path(&runs_path).map_err(|e| CliError::Other(e.to_string()))?;
        for run in &runs {
            w.serialize(run).map_err(|e| CliError::Other(e.to_string()))?;
        }
        w.flush()?;
    }
    m.output(&runs_path)?;
    write_svg(&dir.join("loss_vs_sigma.svg"), &plots::loss_vs_sigma(&rows), &mut m)?;
    m.finish(dir)?;
    println!("{:>4} {:>10} {:>12} {:>10} {:>10}", "P", "sigma", "lambda_best", "loss_mean", "loss_med");
    for x in &rows {
        println!(
            "{:>4} {:>10.3e} {:>12.4} {:>10.4} {:>10.4}",
            x.p, x.sigma, x.lambda_best, x.loss_mean, x.loss_median
        );
    }
    Ok(())
}

pub fn plot(common: &Common, input: &Path) -> CliResult<()> {
    if !input.is_file() {
        return usage(format!("{}: no such file", input.display()));
    }
    let mut reader = csv::Reader::from_path(input).map_err(|e| CliError::Usage(format!("{}: {e}", input.display())))?;
    let rows = reader
        .deserialize::<ExperimentRow>()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(format!("{}: {e}", input.display())))?;
    if rows.is_empty() {
        return usage(format!("{}: no rows", input.display()));
    }
    let mut m = RunManifest::start("plot", None, None, serde_json::json!({ "input": input.display().to_string() }), 0, 1)?;
    m.input(input)?;
    make_dir(&common.out)?;
    let path = common.out.join("loss_vs_sigma.svg");
    write_svg(&path, &plots::loss_vs_sigma(&rows), &mut m)?;
    m.finish(&common.out)?;
    println!("{}", path.display());
    Ok(())
}
