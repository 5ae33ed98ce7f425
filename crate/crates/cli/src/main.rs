use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cggd::experiment::{
    emit_report, materialize, prepare, run_experiment, synthetic_dataset, ExperimentConfig,
    ReportFormat, RunReport,
};
use cggd::gradcheck::audit;
use cggd::scalar_lab::{
    classify_attractors, curve_csv, default_cggd_schedule, default_fuzzy_schedule,
    estimate_lipschitz, linspace, polynomial_problem, probe_point, quadratic_problem,
    random_infeasible_starts, update_curve, update_sign_changes, verify_lemma1, verify_lemma2,
    verify_lemma2_box, BoxProblem, EtaPolicy, Lemma1Settings, ScalarMethod, ScalarSettings,
    Verdict, WORKING_INTERVAL,
};
use cggd::{init_mlp, train, Method};

#[derive(Parser)]
#[command(name = "cggd", version, about = "Constraint guided gradient descent toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutDir {
    /// Output directory.
    #[arg(long, env = "CGGD_OUTPUT_DIR", default_value = "cggd-out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Update-value curves and attractor report for the 1D polynomial example.
    ScalarDemo {
        /// Initial points for the attractor search.
        #[arg(long, default_value_t = 64)]
        grid: usize,
        /// Samples of each update-value curve.
        #[arg(long, default_value_t = 501)]
        curve_points: usize,
        #[command(flatten)]
        out: OutDir,
    },
    /// Step-size recurrence and distance-contraction suites.
    VerifyLemmas {
        /// Random infeasible starts for the recurrence suite.
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Sampled states for each contraction suite.
        #[arg(long, default_value_t = 1000)]
        states: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Finite-difference audit of tape gradients on random networks.
    CheckGradients {
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
    /// Write the synthetic dataset and its constraint file.
    GenSynthetic {
        #[arg(long, default_value_t = 700)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutDir,
    },
    /// Train one method with one seed.
    Train {
        /// Experiment config (JSON or TOML); the built-in synthetic setup if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "cggd")]
        method: Method,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutDir,
    },
    /// Every configured method under every configured seed.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "table")]
        format: ReportFormat,
        #[command(flatten)]
        out: OutDir,
    },
    /// Re-render a saved report.json.
    Report {
        input: PathBuf,
        #[arg(long, default_value = "table")]
        format: ReportFormat,
    },
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn scalar_demo(grid: usize, curve_points: usize, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let p = polynomial_problem();
    let settings = ScalarSettings::default();
    let starts = linspace(WORKING_INTERVAL.0, WORKING_INTERVAL.1, grid);
    let samples = linspace(WORKING_INTERVAL.0, WORKING_INTERVAL.1, curve_points);
    let mut reports = Vec::new();
    for (method, schedule) in [
        (ScalarMethod::Fuzzy, default_fuzzy_schedule()),
        (ScalarMethod::Cggd, default_cggd_schedule(&p, &settings)),
    ] {
        let curve = update_curve(method, &p, &settings, &samples);
        write(&out.join(format!("{method}_update.csv")), &curve_csv(&curve)?)?;
        let report = classify_attractors(method, &p, &starts, &schedule, &settings)?;
        let fixed_points = update_sign_changes(
            method,
            &p,
            &settings,
            WORKING_INTERVAL.0,
            WORKING_INTERVAL.1,
            10_000,
        );
        let probes = fixed_points
            .iter()
            .map(|&w| probe_point(method, &p, w, &schedule, &settings))
            .collect::<cggd::Result<Vec<_>>>()?;
        let fmt = |v: Vec<f64>| v.iter().map(|w| format!("{w:.4}")).collect::<Vec<_>>().join(", ");
        println!("{method}: stable attractors [{}]", fmt(report.stable_locations()));
        println!(
            "{method}: unstable fixed points [{}]",
            fmt(probes.iter().filter(|q| q.unstable).map(|q| q.point).collect())
        );
        if !report.non_fr_attractors.is_empty() {
            println!("{method}: attractors outside the region [{}]", fmt(report.non_fr_attractors.clone()));
        }
        reports.push(serde_json::json!({
            "method": method,
            "schedule": schedule,
            "report": report,
            "fixed_point_probes": probes,
        }));
    }
    write(&out.join("attractors.json"), &serde_json::to_string_pretty(&reports)?)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn show(name: &str, v: &Verdict, expect_pass: bool) -> bool {
    let ok = v.passed == expect_pass && v.checks > 0;
    println!(
        "{} {name}: {} checks, {} violations{}",
        if ok { "PASS" } else { "FAIL" },
        v.checks,
        v.violations,
        if expect_pass { "" } else { " (expected to fail)" }
    );
    if v.passed != expect_pass {
        for line in &v.log {
            println!("    {line}");
        }
    }
    ok
}

fn verify_lemmas(trials: usize, states: usize, seed: u64) -> Result<bool> {
    let quad = Lemma1Settings {
        eta0: 0.1,
        epsilon: 0.5,
        lipschitz: 2.0,
        rescale_factor: 1.5,
        policy: EtaPolicy::Lemma1,
        max_steps: 20_000,
    };
    let p = polynomial_problem();
    let poly = Lemma1Settings {
        eta0: 1e-3,
        lipschitz: estimate_lipschitz(&p, 0.0, 6.0, 100_000),
        ..quad.clone()
    };
    let control = Lemma1Settings {
        policy: EtaPolicy::Constant,
        ..poly.clone()
    };
    let starts = random_infeasible_starts(&p, trials, WORKING_INTERVAL.0, WORKING_INTERVAL.1, seed);
    let mut ok = true;
    ok &= show(
        "step-size recurrence, quadratic control",
        &verify_lemma1(&quadratic_problem(), &[5.0, -3.0, 2.5, 0.2], &quad)?,
        true,
    );
    ok &= show("step-size recurrence, polynomial", &verify_lemma1(&p, &starts, &poly)?, true);
    ok &= show("constant step size (negative control)", &verify_lemma1(&p, &starts, &control)?, false);
    ok &= show("distance contraction, 1D", &verify_lemma2(&p, states, 0.01, seed)?, true);
    ok &= show(
        "distance contraction, 2D box",
        &verify_lemma2_box(&BoxProblem::reference(), states, 0.01, seed)?,
        true,
    );
    Ok(ok)
}

fn check_gradients(count: usize, seed: u64, step: f64, tolerance: f64) -> Result<bool> {
    let reports = audit(count, seed, step)?;
    let mut ok = true;
    for (i, r) in reports.iter().enumerate() {
        let pass = r.max_rel_error() < tolerance;
        ok &= pass;
        println!(
            "{} case {i}: layers {:?}, {} entries, mse {:.2e}, fuzzy {:.2e}",
            if pass { "PASS" } else { "FAIL" },
            r.layer_sizes,
            r.entries,
            r.max_rel_error_mse,
            r.max_rel_error_fuzzy
        );
    }
    Ok(ok)
}

fn gen_synthetic(rows: usize, seed: u64, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let (data, cs) = synthetic_dataset(rows, seed)?;
    data.write_csv(&out.join("synthetic.csv"))?;
    cs.save(&out.join("constraints.json"))?;
    println!("wrote {rows} rows and {} constraints to {}", cs.len(), out.display());
    Ok(())
}

fn train_one(config: Option<&Path>, method: Method, seed: u64, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let (raw, cs) = materialize(&cfg.dataset)?;
    let prepared = prepare(&raw)?;
    let mut sizes = vec![prepared.data.input_dim()];
    sizes.extend(&cfg.hidden_layers);
    sizes.push(prepared.data.output_dim());
    let outcome = train(init_mlp(&sizes, seed)?, &prepared.data, &cs, method, &cfg.train, seed)?;

    fs::create_dir_all(out)?;
    let stem = format!("{method}_seed{seed}");
    outcome
        .history
        .write_csv(fs::File::create(out.join(format!("{stem}_history.csv")))?)?;
    outcome.final_model.save(&out.join(format!("{stem}_final.json")))?;
    outcome.selected_model.save(&out.join(format!("{stem}_selected.json")))?;
    if let Some(last) = outcome.history.last_train() {
        println!(
            "{method} seed {seed}: final train mse {:.6}, train SR {}",
            last.mse,
            last.satisfaction_ratio.map_or("n/a".into(), |s| format!("{:.2}%", 100.0 * s))
        );
    }
    println!("selected epoch {}", outcome.selected_epoch);
    if let Some(f) = &outcome.failure {
        println!("run diverged: {f}");
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn experiment(config: Option<&Path>, format: ReportFormat, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let run = run_experiment(&cfg)?;
    run.write_artifacts(out)?;
    print!("{}", emit_report(&run.report, format)?);
    Ok(())
}

fn report(input: &Path, format: ReportFormat) -> Result<()> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let report: RunReport = serde_json::from_str(&text)?;
    print!("{}", emit_report(&report, format)?);
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::ScalarDemo { grid, curve_points, out } => {
            if grid == 0 || curve_points < 2 {
                bail!("grid needs at least one point and curves at least two");
            }
            scalar_demo(grid, curve_points, &out.out)?;
        }
        Command::VerifyLemmas { trials, states, seed } => return verify_lemmas(trials, states, seed),
        Command::CheckGradients { count, seed, step, tolerance } => {
            return check_gradients(count, seed, step, tolerance)
        }
        Command::GenSynthetic { rows, seed, out } => gen_synthetic(rows, seed, &out.out)?,
        Command::Train { config, method, seed, out } => {
            train_one(config.as_deref(), method, seed, &out.out)?
        }
        Command::Experiment { config, format, out } => {
            experiment(config.as_deref(), format, &out.out)?
        }
        Command::Report { input, format } => report(&input, format)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
