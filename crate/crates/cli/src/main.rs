//! Command-line front end: train, render, verify, compare, eigen.
//!
//! Exit codes: 0 success, 1 runtime or verification failure, 2 usage error,
//! 3 malformed config, 4 missing file.

mod config;
mod svg;

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use nalgebra::{Matrix2, Matrix3};

use config::{atomic_write, fmt_float, load_experiment, LoadedExperiment};
use steepsplat::primitives::{CameraProjection, Scene};
use steepsplat::render::{render, RenderMode, RenderOptions};
use steepsplat::train::{init_scene, train_with_checkpoints, DensifyPolicy, TrainReport};
use steepsplat::verify::checks::run_checks;

#[derive(Parser)]
#[command(
    name = "steepsplat",
    version,
    about = "Gaussian-splatting trainer with curvature-guided density control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a scene to the configured target views and write metrics, the
    /// final scene, and a final render.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dotted-key config overrides, e.g. --set train.total_steps=500
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Render a scene file through a camera file to a PPM image.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// additive or composited
        #[arg(long, default_value = "composited")]
        mode: String,
    },
    /// Run the numerical property checks and print a pass/fail table.
    Verify {
        /// Only run checks whose name contains this substring.
        #[arg(long, default_value = "")]
        filter: String,
    },
    /// Train two densification policies from the same seed and emit a joint
    /// CSV plus a loss-curve SVG.
    Compare {
        policy_a: Option<String>,
        policy_b: Option<String>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Read a symmetric 2x2 (4 numbers) or 3x3 (9 numbers) matrix from
    /// stdin and print its eigenpairs in ascending order.
    Eigen,
}

/// Error wrapper that signals which distinct exit code to use.
enum CliFailure {
    Runtime(anyhow::Error),
    Config(anyhow::Error),
    MissingFile(anyhow::Error),
}

impl CliFailure {
    fn code(&self) -> u8 {
        match self {
            CliFailure::Runtime(_) => 1,
            CliFailure::Config(_) => 3,
            CliFailure::MissingFile(_) => 4,
        }
    }
    fn message(&self) -> String {
        match self {
            CliFailure::Runtime(e) | CliFailure::Config(e) | CliFailure::MissingFile(e) => {
                format!("{e:#}")
            }
        }
    }
}

fn classify(e: anyhow::Error) -> CliFailure {
    let chain = format!("{e:#}");
    if chain.contains("No such file") || chain.contains("missing target") {
        CliFailure::MissingFile(e)
    } else if chain.contains("parsing")
        || chain.contains("interpreting")
        || chain.contains("invalid train config")
        || chain.contains("config has no views")
        || chain.contains("key=value")
    {
        CliFailure::Config(e)
    } else {
        CliFailure::Runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, set } => cmd_train(&config, &set),
        Command::Render {
            scene,
            camera,
            out,
            mode,
        } => cmd_render(&scene, &camera, &out, &mode),
        Command::Verify { filter } => cmd_verify(&filter),
        Command::Compare {
            policy_a,
            policy_b,
            config,
            set,
        } => cmd_compare(policy_a.as_deref(), policy_b.as_deref(), &config, &set),
        Command::Eigen => cmd_eigen(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let failure = classify(e);
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}

fn metrics_csv(report: &TrainReport) -> String {
    let mut out = String::from("step,loss,psnr,n_points,policy_event\n");
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.step,
            fmt_float(row.loss),
            fmt_float(row.psnr),
            row.n_points,
            row.event
        ));
    }
    out
}

fn run_training(exp: &LoadedExperiment) -> Result<TrainReport> {
    let scene0 = init_scene(&exp.views, &exp.config.train);
    let checkpoint_dir = exp
        .config
        .checkpoint_dir
        .as_ref()
        .map(|d| exp.base_dir.join(d));
    let report = train_with_checkpoints(&scene0, &exp.views, &exp.config.train, |step, scene| {
        if let Some(dir) = &checkpoint_dir {
            let path = dir.join(format!("scene_{step:06}.json"));
            let text = scene.to_json()?;
            atomic_write(&path, text.as_bytes())
                .map_err(|e| steepsplat::Error::InvalidConfig(format!("checkpoint: {e}")))?;
        }
        Ok(())
    })?;
    Ok(report)
}

fn cmd_train(config_path: &Path, overrides: &[String]) -> Result<ExitCode> {
    let exp = load_experiment(config_path, overrides)?;
    let out_dir = exp.base_dir.join(&exp.config.out_dir);
    fs::create_dir_all(&out_dir)?;
    atomic_write(
        &out_dir.join("config.effective.json"),
        serde_json::to_string_pretty(&exp.config)?.as_bytes(),
    )?;

    let report = run_training(&exp)?;

    atomic_write(
        &out_dir.join("metrics.csv"),
        metrics_csv(&report).as_bytes(),
    )?;
    atomic_write(
        &out_dir.join("final_scene.json"),
        report.final_scene.to_json()?.as_bytes(),
    )?;
    let (cam, _) = &exp.views[0];
    let opts = RenderOptions {
        mode: exp.config.train.render_mode,
        sigma_cutoff: exp.config.train.sigma_cutoff,
    };
    let (image, _) = render(&report.final_scene, cam, opts)?;
    let mut ppm = Vec::new();
    image.write_ppm(&mut ppm)?;
    atomic_write(&out_dir.join("final_render.ppm"), &ppm)?;

    let last = report.rows.last().map(|r| (r.loss, r.n_points));
    if let Some((loss, n)) = last {
        println!(
            "trained {} steps: final loss {loss:.6e}, {n} primitives, outputs in {}",
            exp.config.train.total_steps,
            out_dir.display()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_render(scene_path: &Path, camera_path: &Path, out: &Path, mode: &str) -> Result<ExitCode> {
    let mode = match mode {
        "additive" => RenderMode::Additive,
        "composited" => RenderMode::Composited,
        other => bail!("unknown render mode `{other}` (additive|composited)"),
    };
    let scene_text = fs::read_to_string(scene_path)
        .with_context(|| format!("reading scene {}", scene_path.display()))?;
    let scene = Scene::from_json(&scene_text).map_err(|e| anyhow!("parsing scene: {e}"))?;
    let camera_text = fs::read_to_string(camera_path)
        .with_context(|| format!("reading camera {}", camera_path.display()))?;
    let camera: CameraProjection =
        serde_json::from_str(&camera_text).with_context(|| "parsing camera")?;
    camera.validate()?;
    let (image, _) = render(&scene, &camera, RenderOptions::new(mode))?;
    let mut ppm = Vec::new();
    image.write_ppm(&mut ppm)?;
    atomic_write(out, &ppm)?;
    println!(
        "rendered {}x{} to {}",
        camera.width,
        camera.height,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(filter: &str) -> Result<ExitCode> {
    let results = run_checks(filter)?;
    if results.is_empty() {
        bail!("no check matches filter `{filter}`");
    }
    let mut all_passed = true;
    for r in &results {
        println!(
            "{} {:28} {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
        all_passed &= r.passed;
    }
    Ok(if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn parse_policy(name: &str) -> Result<DensifyPolicy> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| anyhow!("unknown policy `{name}` (sdc|sdc-budgeted|compactest|adc|none)"))
}

fn cmd_compare(
    policy_a: Option<&str>,
    policy_b: Option<&str>,
    config_path: &Path,
    overrides: &[String],
) -> Result<ExitCode> {
    let exp = load_experiment(config_path, overrides)?;
    let (name_a, name_b) = match (policy_a, policy_b, &exp.config.compare) {
        (Some(a), Some(b), _) => (a.to_string(), b.to_string()),
        (None, None, Some([a, b])) => (a.clone(), b.clone()),
        _ => bail!("compare needs two policies (arguments or config.compare)"),
    };
    let out_dir = exp.base_dir.join(&exp.config.out_dir);
    fs::create_dir_all(&out_dir)?;
    atomic_write(
        &out_dir.join("config.effective.json"),
        serde_json::to_string_pretty(&exp.config)?.as_bytes(),
    )?;

    let mut reports = Vec::new();
    for name in [&name_a, &name_b] {
        let mut variant = LoadedExperiment {
            config: exp.config.clone(),
            views: exp.views.clone(),
            base_dir: exp.base_dir.clone(),
        };
        variant.config.train.policy = parse_policy(name)?;
        variant
            .config
            .train
            .validate()
            .map_err(|e| anyhow!("{e}"))?;
        reports.push(run_training(&variant)?);
    }
    let (report_a, report_b) = (&reports[0], &reports[1]);

    // Joint CSV over the shared periodic log steps.
    let interval = exp.config.train.log_interval;
    let periodic = |r: &TrainReport| -> Vec<_> {
        r.rows
            .iter()
            .filter(|x| x.step % interval == 0)
            .cloned()
            .collect()
    };
    let (rows_a, rows_b) = (periodic(report_a), periodic(report_b));
    if rows_a.len() != rows_b.len() {
        bail!("policies logged different step sets");
    }
    let mut csv = String::from("step,loss_a,loss_b,n_a,n_b\n");
    for (ra, rb) in rows_a.iter().zip(&rows_b) {
        if ra.step != rb.step {
            bail!("log steps diverged: {} vs {}", ra.step, rb.step);
        }
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            ra.step,
            fmt_float(ra.loss),
            fmt_float(rb.loss),
            ra.n_points,
            rb.n_points
        ));
    }
    let stem = format!("compare_{name_a}_{name_b}");
    atomic_write(&out_dir.join(format!("{stem}.csv")), csv.as_bytes())?;

    let curve = |rows: &[steepsplat::train::ReportRow]| {
        rows.iter()
            .map(|r| (r.step as f64, r.loss))
            .collect::<Vec<_>>()
    };
    let chart = svg::line_chart(
        &format!("loss: {name_a} vs {name_b}"),
        "step",
        "loss",
        &[
            svg::Series {
                label: &name_a,
                color: "#1f77b4",
                points: curve(&rows_a),
            },
            svg::Series {
                label: &name_b,
                color: "#d62728",
                points: curve(&rows_b),
            },
        ],
    );
    atomic_write(&out_dir.join(format!("{stem}.svg")), chart.as_bytes())?;

    // Per-policy artifacts for downstream inspection.
    for (name, report) in [(&name_a, report_a), (&name_b, report_b)] {
        atomic_write(
            &out_dir.join(format!("metrics_{name}.csv")),
            metrics_csv(report).as_bytes(),
        )?;
        atomic_write(
            &out_dir.join(format!("final_scene_{name}.json")),
            report.final_scene.to_json()?.as_bytes(),
        )?;
    }

    let (la, lb) = (rows_a.last().unwrap(), rows_b.last().unwrap());
    println!(
        "{name_a}: loss {:.6e}, {} points | {name_b}: loss {:.6e}, {} points",
        la.loss, la.n_points, lb.loss, lb.n_points
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eigen() -> Result<ExitCode> {
    let mut text = String::new();
    std::io::stdin().read_to_string(&mut text)?;
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| anyhow!("bad number `{t}`: {e}"))
        })
        .collect::<Result<_>>()?;
    match values.len() {
        4 => {
            let m = Matrix2::new(values[0], values[1], values[2], values[3]);
            for pair in steepsplat::eigsym::eig_sym2(&m) {
                println!(
                    "lambda = {}, v = ({}, {})",
                    fmt_float(pair.value),
                    fmt_float(pair.vector.x),
                    fmt_float(pair.vector.y)
                );
            }
        }
        9 => {
            #[rustfmt::skip]
            let m = Matrix3::new(
                values[0], values[1], values[2],
                values[3], values[4], values[5],
                values[6], values[7], values[8],
            );
            for pair in steepsplat::eigsym::eig_sym3(&m) {
                println!(
                    "lambda = {}, v = ({}, {}, {})",
                    fmt_float(pair.value),
                    fmt_float(pair.vector.x),
                    fmt_float(pair.vector.y),
                    fmt_float(pair.vector.z)
                );
            }
        }
        n => bail!("expected 4 or 9 numbers on stdin, got {n}"),
    }
    Ok(ExitCode::SUCCESS)
}
