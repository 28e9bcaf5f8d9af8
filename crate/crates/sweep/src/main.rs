use std::path::PathBuf;
use std::process::ExitCode;

use btc_core::scaling::{fit_power_law, ObservableKind, PowerLawModel};
use btc_sweep::analysis::{self, NamedFit};
use btc_sweep::config::{OmegaGrid, SweepConfig, Task};
use btc_sweep::figures::Figure;
use btc_sweep::record::{format_number, read_columns, read_sweep_csv};
use btc_sweep::{run_sweep, SweepError, SweepOutcome};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "btc", version, about = "Collective-spin sweeps: steady states, Fisher information, scaling fits")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON config; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Drop sizes above this N.
    #[arg(long, global = true)]
    nmax: Option<usize>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Recompute cached results.
    #[arg(long, global = true)]
    force: bool,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Finite-difference step in ω/κ.
    #[arg(long, global = true)]
    delta_omega: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct Points {
    /// Comma-separated sizes.
    #[arg(long = "n", value_delimiter = ',')]
    n: Vec<usize>,
    /// Comma-separated values of ω/κ.
    #[arg(long, value_delimiter = ',')]
    omega: Vec<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// ⟨Ŝz⟩(t)/N from the all-down state.
    Trajectory {
        #[command(flatten)]
        points: Points,
        #[arg(long)]
        t_max: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Slowest Liouvillian eigenvalues.
    Spectrum {
        #[command(flatten)]
        points: Points,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Steady-state magnetization.
    Magnetization {
        #[command(flatten)]
        points: Points,
    },
    /// Steady-state QFI over the grid, with peak refinement.
    QfiSweep {
        #[command(flatten)]
        points: Points,
    },
    /// Optimized classical Fisher information, at the QFI peaks unless
    /// `--all-points` is given.
    CfiSweep {
        #[command(flatten)]
        points: Points,
        #[arg(long)]
        all_points: bool,
    },
    /// Data collapse of a sweep CSV.
    Collapse {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
    },
    /// Power-law fit of one column of a CSV against N.
    Fit {
        #[arg(long, value_enum)]
        model: Model,
        #[arg(long)]
        input: PathBuf,
        /// Column fitted; defaults to the one matching the model in peaks.csv.
        #[arg(long)]
        column: Option<String>,
    },
    /// Trajectory QFI rate against N/(2κ).
    BoundCheck {
        #[arg(long = "n", value_delimiter = ',')]
        n: Vec<usize>,
        /// Fixed ω/κ; defaults to each size's QFI peak.
        #[arg(long)]
        omega: Option<f64>,
    },
    /// Full pipeline behind one figure.
    Reproduce {
        #[arg(value_enum)]
        figure: Figure,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Magnetization,
    Qfi,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Model {
    Powerlaw,
    Saturating,
    OffsetPower,
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<SweepError> for Failure {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Config(c) => Failure::Config(c.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

fn base_config(g: &Global) -> Result<SweepConfig, Failure> {
    let mut c = match &g.config {
        Some(p) => SweepConfig::load(p).map_err(|e| Failure::Config(e.to_string()))?,
        None => SweepConfig::default(),
    };
    if let Some(w) = g.workers {
        c.workers = w;
    }
    if let Some(o) = &g.out {
        c.out_dir = o.clone();
    }
    if let Some(d) = g.delta_omega {
        c.delta_omega = d;
    }
    Ok(c)
}

fn apply_points(c: &mut SweepConfig, p: &Points) {
    if !p.n.is_empty() {
        c.n_list = p.n.clone();
    }
    if !p.omega.is_empty() {
        c.omega_grid = OmegaGrid::List(p.omega.clone());
    }
}

fn sweep(mut c: SweepConfig, g: &Global) -> Result<SweepOutcome, Failure> {
    if let Some(n) = g.nmax {
        c.cap_sizes(n);
    }
    Ok(run_sweep(&c, g.force)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into())
}

fn print_fit(f: &NamedFit) {
    let params: Vec<String> =
        f.fit.parameters.iter().map(|p| format!("{} = {:.4} ± {:.4}", p.name, p.value, p.stderr)).collect();
    println!("fit {} ({}): {}  R² = {:.5}", f.observable, f.fit.model.name(), params.join(", "), f.fit.r_squared);
}

fn summarize(o: &SweepOutcome) {
    println!(
        "{} rows; {} jobs computed, {} cached, {} failures",
        o.records.len(),
        o.jobs_computed,
        o.jobs_cached,
        o.failures.len()
    );
    if !o.records.is_empty() && o.records.len() <= 40 {
        println!("{:>5} {:>9} {:>12} {:>12} {:>12} {:>9} {:>9} {:>12}", "N", "ω/κ", "Sz/N", "F_Q", "F_C", "θ", "φ", "|Re E2|");
        for r in &o.records {
            println!(
                "{:>5} {:>9.5} {:>12} {:>12} {:>12} {:>9} {:>9} {:>12}",
                r.n_spins,
                r.omega_over_kappa,
                opt(r.sz_ss_per_n),
                opt(r.qfi),
                opt(r.cfi_max),
                opt(r.theta_opt),
                opt(r.phi_opt),
                opt(r.e2_abs)
            );
        }
    }
    if !o.peaks.is_empty() {
        println!("{:>5} {:>10} {:>12} {:>12} {:>9} {:>9} {:>12}", "N", "ω_max/κ", "F_Q max", "F_C max", "θ", "φ", "|Re E2|");
        for p in &o.peaks {
            println!(
                "{:>5} {:>10.6} {:>12.4} {:>12} {:>9} {:>9} {:>12}",
                p.n_spins,
                p.omega_max,
                p.qfi_max,
                opt(p.cfi_max),
                opt(p.theta_opt),
                opt(p.phi_opt),
                opt(p.e2_abs)
            );
        }
    }
    for t in &o.trajectories {
        let rate = t.envelope_rate.map(|r| format!("{r:.5}")).unwrap_or_else(|| "-".into());
        println!(
            "trajectory N = {} ω/κ = {}: final Sz/N = {:.6}, steady {:.6}, envelope rate {rate}",
            t.n_spins,
            format_number(t.omega_over_kappa),
            t.sz_per_n.last().copied().unwrap_or(f64::NAN),
            t.sz_steady_per_n
        );
    }
    for c in &o.collapses {
        let u = c.uncertainties;
        println!(
            "collapse {}: ω_c/κ = {:.4} ± {:.4}, ν = {:.4} ± {:.4}, exponent = {:.4} ± {:.4}, quality {:.3}",
            c.kind.name(),
            c.omega_c,
            u.omega_c,
            c.nu,
            u.nu,
            c.shape_exponent,
            u.shape_exponent,
            c.quality
        );
    }
    o.fits.iter().for_each(print_fit);
    if let Some(r) = &o.consistency {
        println!(
            "consistency: b = {:.4}, η/ν = {:.4}, |Δ| = {:.4} vs {:.4}: {}",
            r.b,
            r.eta_over_nu,
            r.difference,
            r.combined_error,
            if r.passed { "pass" } else { "fail" }
        );
    }
    if !o.bound_rows.is_empty() {
        println!(
            "{:>5} {:>9} {:>10} {:>8} {:>12} {:>12} {:>10} {:>12} {:>6}",
            "N", "ω/κ", "T", "T·|E2|", "F_Q(T)", "F_Q(T)/T", "N/(2κ)", "F_Q steady", "ok"
        );
        for b in &o.bound_rows {
            println!(
                "{:>5} {:>9.5} {:>10.4} {:>8.3} {:>12.4} {:>12.5} {:>10.3} {:>12.4} {:>6}",
                b.n_spins,
                b.omega_over_kappa,
                b.time,
                b.time_over_tau,
                b.qfi_t,
                b.rate,
                b.bound,
                b.qfi_steady,
                if b.satisfied { "pass" } else { "FAIL" }
            );
        }
        let ok = o.bound_rows.iter().all(|b| b.satisfied);
        println!("bound F_Q(T)/T <= N/(2κ): {}", if ok { "pass" } else { "FAIL" });
    }
    for f in &o.failures {
        eprintln!(
            "failed {} at N = {}, ω/κ = {}: {}",
            f.task.name(),
            f.n_spins.map(|n| n.to_string()).unwrap_or_else(|| "-".into()),
            f.omega_over_kappa.map(format_number).unwrap_or_else(|| "-".into()),
            f.message
        );
    }
}

fn run(cli: Cli) -> Result<i32, Failure> {
    let g = &cli.global;
    let mut c = base_config(g)?;
    let outcome = match cli.command {
        Command::Trajectory { points, t_max, dt } => {
            c.tasks = vec![Task::Trajectory];
            apply_points(&mut c, &points);
            if let Some(t) = t_max {
                c.trajectory.t_max = t;
            }
            if let Some(d) = dt {
                c.trajectory.dt = d;
            }
            sweep(c, g)?
        }
        Command::Spectrum { points, k } => {
            c.tasks = vec![Task::Spectrum];
            apply_points(&mut c, &points);
            if let Some(k) = k {
                c.spectrum.k = k;
            }
            sweep(c, g)?
        }
        Command::Magnetization { points } => {
            c.tasks = vec![Task::Magnetization];
            apply_points(&mut c, &points);
            sweep(c, g)?
        }
        Command::QfiSweep { points } => {
            c.tasks = vec![Task::Qfi];
            apply_points(&mut c, &points);
            sweep(c, g)?
        }
        Command::CfiSweep { points, all_points } => {
            c.tasks = vec![Task::Qfi, Task::Cfi];
            c.cfi.at_peak_only = !all_points;
            apply_points(&mut c, &points);
            sweep(c, g)?
        }
        Command::BoundCheck { n, omega } => {
            c.tasks = vec![Task::Bound];
            if !n.is_empty() {
                c.n_list = n;
                c.bound.n_max = c.bound.n_max.max(c.n_list.iter().copied().max().unwrap_or(0));
            }
            if omega.is_some() {
                c.bound.omega = omega;
            }
            sweep(c, g)?
        }
        Command::Reproduce { figure } => sweep(figure.configure(&c), g)?,
        Command::Collapse { input, kind } => return collapse_command(&c, &input, kind),
        Command::Fit { model, input, column } => return fit_command(&c, &input, model, column),
    };
    summarize(&outcome);
    Ok(outcome.exit_code())
}

fn prepare(c: &SweepConfig) -> Result<(), Failure> {
    c.prepare_out_dir().map_err(|e| Failure::Config(e.to_string()))
}

fn collapse_command(c: &SweepConfig, input: &PathBuf, kind: Kind) -> Result<i32, Failure> {
    prepare(c)?;
    let rows = read_sweep_csv(input).map_err(|e| Failure::Config(format!("{}: {e}", input.display())))?;
    let (kind, spec) = match kind {
        Kind::Magnetization => (ObservableKind::Magnetization, &c.collapse.magnetization),
        Kind::Qfi => (ObservableKind::Qfi, &c.collapse.qfi),
    };
    let fit = analysis::collapse(&rows, kind, spec).map_err(|e| Failure::Run(e.to_string()))?;
    let path = c.out_dir.join(format!("collapse_{}.json", kind.name()));
    analysis::write_json(&path, &fit).map_err(|e| Failure::Run(e.to_string()))?;
    let o = SweepOutcome {
        collapses: vec![fit],
        ..SweepOutcome::default()
    };
    summarize(&o);
    Ok(0)
}

fn fit_command(c: &SweepConfig, input: &PathBuf, model: Model, column: Option<String>) -> Result<i32, Failure> {
    prepare(c)?;
    let (model, default_column) = match model {
        Model::Powerlaw => (PowerLawModel::Power, "qfi_max"),
        Model::Saturating => (PowerLawModel::Saturating { kappa: 1.0 }, "omega_max"),
        Model::OffsetPower => (PowerLawModel::OffsetPower, "e2_abs"),
    };
    let column = column.unwrap_or_else(|| default_column.to_string());
    let data = read_columns(input, "n", &column).map_err(|e| Failure::Config(e.to_string()))?;
    let points: Vec<(usize, f64)> = data.iter().map(|&(n, y)| (n.round() as usize, y)).collect();
    let (ns, ys): (Vec<usize>, Vec<f64>) = points.iter().copied().unzip();
    let fit = fit_power_law(&ns, &ys, model).map_err(|e| Failure::Run(e.to_string()))?;
    let named = NamedFit {
        observable: column,
        fit,
        points,
    };
    let path = c.out_dir.join(format!("fit_{}.json", named.file_stem()));
    analysis::write_json(&path, &named).map_err(|e| Failure::Run(e.to_string()))?;
    print_fit(&named);
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
