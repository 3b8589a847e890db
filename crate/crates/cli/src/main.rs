use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use fieldloc::dataset::{load_frame, load_json, load_manifest_frames, save_manifest, write_json};
use fieldloc::eval::{evaluate, evaluate_baseline, save_overlay, NnMode};
use fieldloc::field_model::{standard_field, FieldModel};
use fieldloc::geometry::VanishingPoint;
use fieldloc::inference::InferenceResult;
use fieldloc::learning::{select_c, train, TrainConfig, TrainedModel, TrainingExample};
use fieldloc::oracle::oracle_check;
use fieldloc::pipeline::{localize, PipelineConfig};
use fieldloc::potentials::{Tying, WeightVector};
use fieldloc::synth::{synth_frames, SynthConfig};
use fieldloc::Error;

#[derive(Parser)]
#[command(
    name = "fieldloc",
    version,
    about = "Soccer field localization from a single frame"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Localize the field in one frame.
    Localize {
        #[arg(long)]
        frame: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Rays per fan.
        #[arg(long, default_value_t = 256)]
        grid: usize,
        #[arg(long)]
        max_iterations: Option<u64>,
        /// PNG with the projected model drawn over the frame.
        #[arg(long)]
        overlay: Option<PathBuf>,
    },
    /// Learn weights from a manifest of labeled frames.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Regularization; several comma-separated values need --validation.
        #[arg(long = "C", value_delimiter = ',', default_value = "10")]
        c: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Manifest used to pick C by mean IOU.
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long, default_value = "G+VerL+HorL+C")]
        tying: Tying,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        #[arg(long, default_value_t = 200)]
        max_rounds: usize,
        #[arg(long, default_value_t = 256)]
        grid: usize,
        /// Training report (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the pipeline on a manifest and score it against ground truth.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 256)]
        grid: usize,
        /// Training manifest for the nearest-neighbour baselines.
        #[arg(long)]
        baseline_train: Option<PathBuf>,
    },
    /// Write synthetic labeled frames and a manifest.
    Synth {
        /// SynthConfig JSON; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare branch and bound with exhaustive search on random instances.
    OracleCheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 8)]
        grid: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Exit codes: 2 input error, 3 vanishing point failure, 4 uncertified
/// result, 1 anything else.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Input(_) | Error::Io { .. } | Error::Json { .. } | Error::Image { .. } => 2,
        Error::BudgetExceeded(_) => 4,
        e if e.is_vp_failure() => 3,
        _ => 1,
    }
}

fn vp_json(vp: &VanishingPoint) -> serde_json::Value {
    let v = vp.homogeneous();
    json!([v.x, v.y, v.z])
}

fn result_json(id: &str, r: &InferenceResult) -> serde_json::Value {
    json!({
        "id": id,
        "hypothesis": r.y,
        "score": r.score,
        "iterations": r.iterations,
        "certified": r.certified,
        "homography": r.homography,
    })
}

fn print(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value"));
}

fn pipeline(grid: usize) -> PipelineConfig {
    PipelineConfig {
        grid,
        ..Default::default()
    }
}

fn cmd_localize(
    frame: &Path,
    weights: &Path,
    grid: usize,
    max_iterations: Option<u64>,
    overlay: Option<&Path>,
    model: &FieldModel,
) -> Result<(), Error> {
    let f = load_frame(frame)?;
    let w: WeightVector = load_json(weights)?;
    let mut cfg = pipeline(grid);
    if let Some(m) = max_iterations {
        cfg.max_iterations = m;
    }
    match localize(&f, &w, model, &cfg) {
        Ok(out) => {
            let mut v = result_json(&f.record.id, &out.result);
            v["vp_h"] = vp_json(&out.vps.vp_h);
            v["vp_v"] = vp_json(&out.vps.vp_v);
            v["fallback_used"] = json!(out.vps.fallback_used);
            print(&v);
            if let Some(p) = overlay {
                save_overlay(&f, &out.result.homography, model, p)?;
            }
            Ok(())
        }
        Err(Error::BudgetExceeded(r)) => {
            print(&result_json(&f.record.id, &r));
            if let Some(p) = overlay {
                save_overlay(&f, &r.homography, model, p)?;
            }
            Err(Error::BudgetExceeded(r))
        }
        Err(e) => Err(e),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    manifest: &Path,
    cs: &[f64],
    out: &Path,
    validation: Option<&Path>,
    tying: Tying,
    eps: f64,
    max_rounds: usize,
    grid: usize,
    report: Option<&Path>,
    model: &FieldModel,
) -> Result<(), Error> {
    let cfg = pipeline(grid);
    let frames = load_manifest_frames(manifest)?;
    let mut examples = Vec::new();
    for f in &frames {
        match TrainingExample::from_frame(f, model, &cfg) {
            Ok(e) => examples.push(e),
            Err(e) if e.is_vp_failure() => eprintln!("skipping {}: {e}", f.record.id),
            Err(e) => return Err(e),
        }
    }
    let base = TrainConfig {
        c: cs[0],
        eps,
        max_rounds,
        tying,
        band: cfg.band,
        ..Default::default()
    };
    let model_out = match (cs.len(), validation) {
        (1, _) => {
            let (w, rep) = train(&examples, model, &base)?;
            eprintln!(
                "{} rounds, converged {}, objective {:.6}",
                rep.rounds.len(),
                rep.converged,
                rep.final_objective
            );
            if let Some(p) = report {
                write_json(p, &rep)?;
            }
            TrainedModel::new(w, &base, &rep)
        }
        (_, Some(v)) => {
            let val = load_manifest_frames(v)?;
            let (m, eval, scores) = select_c(&examples, &val, model, &base, &cfg, cs)?;
            for s in &scores {
                eprintln!("C {}: validation mean IOU {:.4}", s.c, s.mean_iou);
            }
            if let Some(p) = report {
                write_json(p, &json!({ "candidates": scores, "validation": eval }))?;
            }
            m
        }
        (_, None) => return Err(Error::Input("several values of C need --validation".into())),
    };
    write_json(out, &model_out)
}

fn cmd_eval(
    manifest: &Path,
    weights: &Path,
    report: &Path,
    grid: usize,
    baseline_train: Option<&Path>,
    model: &FieldModel,
) -> Result<(), Error> {
    let frames = load_manifest_frames(manifest)?;
    let w: WeightVector = load_json(weights)?;
    let r = evaluate(&frames, &w, model, &pipeline(grid));
    let mut v = serde_json::to_value(&r).expect("report is serializable");
    if let Some(t) = baseline_train {
        let train = load_manifest_frames(t)?;
        for (name, mode) in [
            ("grass_iou", NnMode::GrassIou),
            ("edge_distance_transform", NnMode::EdgeDistanceTransform),
        ] {
            let (mean, median) = evaluate_baseline(&frames, &train, mode, model)?;
            v["baselines"][name] = json!({ "mean_iou": mean, "median_iou": median });
        }
    }
    write_json(report, &v)?;
    println!(
        "mean IOU {:.4}, median IOU {:.4}, median iterations {}, {} rows, {} excluded",
        r.mean_iou,
        r.median_iou,
        r.median_iterations,
        r.rows.len(),
        r.excluded.len()
    );
    Ok(())
}

fn cmd_synth(
    config: Option<&Path>,
    count: usize,
    out: &Path,
    model: &FieldModel,
) -> Result<(), Error> {
    let cfg: SynthConfig = match config {
        Some(p) => load_json(p)?,
        None => SynthConfig::default(),
    };
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.display().to_string(),
        source: e,
    })?;
    let frames = synth_frames(&cfg, model, count)?;
    let records = frames
        .iter()
        .map(|f| {
            let stem = f.record.id.clone();
            f.write(out, &stem)
        })
        .collect::<Result<Vec<_>, _>>()?;
    save_manifest(&out.join("manifest.json"), &records)?;
    println!("wrote {} frames to {}", records.len(), out.display());
    Ok(())
}

fn cmd_oracle(trials: usize, grid: usize, seed: u64, model: &FieldModel) -> Result<bool, Error> {
    let r = oracle_check(trials, grid, seed, model)?;
    print(&serde_json::to_value(&r).expect("report is serializable"));
    Ok(r.mismatches.is_empty())
}

fn run(cli: Cli) -> Result<bool, Error> {
    let model = standard_field();
    match cli.command {
        Command::Localize {
            frame,
            weights,
            grid,
            max_iterations,
            overlay,
        } => cmd_localize(
            &frame,
            &weights,
            grid,
            max_iterations,
            overlay.as_deref(),
            &model,
        )
        .map(|_| true),
        Command::Train {
            manifest,
            c,
            out,
            validation,
            tying,
            eps,
            max_rounds,
            grid,
            report,
        } => cmd_train(
            &manifest,
            &c,
            &out,
            validation.as_deref(),
            tying,
            eps,
            max_rounds,
            grid,
            report.as_deref(),
            &model,
        )
        .map(|_| true),
        Command::Eval {
            manifest,
            weights,
            report,
            grid,
            baseline_train,
        } => cmd_eval(
            &manifest,
            &weights,
            &report,
            grid,
            baseline_train.as_deref(),
            &model,
        )
        .map(|_| true),
        Command::Synth { config, count, out } => {
            cmd_synth(config.as_deref(), count, &out, &model).map(|_| true)
        }
        Command::OracleCheck { trials, grid, seed } => cmd_oracle(trials, grid, seed, &model),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
