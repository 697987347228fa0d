//! Command-line entry point wiring all stages together: phantom
//! generation, translator training, volume translation, segmentation
//! training, evaluation, experiment sweeps, and report plots.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::path::{Path, PathBuf};

use candle_core::Device;
use clap::{Parser, Subcommand};

use crate::dataio::{load_dataset, save_dataset, RunConfig, Volume};
use crate::diffusion::checkpoint::{load_checkpoint, save_checkpoint};
use crate::diffusion::train::train_translator;
use crate::error::{Error, Result};
use crate::phantom::{generate_phantom_dataset, load_phantom_dataset, save_phantom_dataset, PhantomSpec};
use crate::pipeline::{seg_transfer, translate_with_options, StageOptions};
use crate::scgd::TranslationOptions;
use crate::segharness::{evaluate_masks, run_experiment, ExperimentReport};

#[derive(Parser)]
#[command(name = "contourdiff", version, about = "Contour-guided diffusion translation pipeline")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-domain phantom dataset.
    PhantomGen {
        /// Phantom spec file (TOML); defaults to the built-in spec.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the contour-conditioned translator on output-domain volumes.
    Train {
        /// Run configuration file (TOML); defaults to the desk-scale config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory produced by `phantom-gen`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Translate input-domain volumes with a trained checkpoint.
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Manifest of the volumes to translate.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n_candidates: Option<usize>,
        #[arg(long)]
        ddim_steps: Option<usize>,
        /// Number of concurrent volume groups.
        #[arg(long, default_value_t = 1)]
        groups: usize,
        /// Disable adjacent-slice conditioning (ablation).
        #[arg(long)]
        no_scgd: bool,
        /// Mean-intensity rank of the initial candidate to keep.
        #[arg(long, default_value_t = 0)]
        candidate_rank: usize,
        /// Perturb inputs to this SNR (dB) before translation.
        #[arg(long)]
        snr_db: Option<f64>,
        /// Contrast factor applied to inputs before translation.
        #[arg(long)]
        contrast: Option<f32>,
        /// Requantize inputs to this bit depth before translation.
        #[arg(long)]
        bit_depth: Option<u8>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train and evaluate the downstream segmentation model.
    TrainSeg {
        /// Manifest of labeled training volumes (e.g. translated images).
        #[arg(long)]
        train_manifest: PathBuf,
        /// Manifest of labeled test volumes.
        #[arg(long)]
        test_manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare predicted masks against ground truth volumetrically.
    Evaluate {
        /// Directory with a manifest of predicted-mask volumes.
        #[arg(long)]
        pred: PathBuf,
        /// Directory with a manifest of ground-truth volumes.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an ablation/robustness sweep over one axis.
    Experiment {
        #[arg(long)]
        axis: String,
        /// Dataset directory produced by `phantom-gen`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Emit bar plots and a text table for an experiment report.
    Report {
        /// Experiment report JSON produced by `experiment`.
        #[arg(long)]
        experiment: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Resolve the run configuration with precedence: CLI flag > env var >
/// config file > built-in desk-scale default.
fn resolve_config(path: Option<&Path>, seed_flag: Option<u64>) -> Result<RunConfig> {
    let mut config = match path {
        Some(p) => RunConfig::load(p)?,
        None => {
            let mut c = RunConfig::desk_scale();
            c.apply_env();
            c
        }
    };
    if let Some(seed) = seed_flag {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Snapshot the resolved configuration so a finished run documents
/// exactly what it executed with.
fn write_run_lock(config: &RunConfig, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    config.save(&out.join("run.lock"))
}

fn execute(command: Command) -> Result<()> {
    let device = Device::Cpu;
    match command {
        Command::PhantomGen { spec, out, seed } => {
            let mut spec = match spec {
                Some(path) => PhantomSpec::load(&path)?,
                None => PhantomSpec::default(),
            };
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            ensure_dir(&out)?;
            spec.save(&out.join("phantom.lock"))?;
            let dataset = generate_phantom_dataset(&spec)?;
            save_phantom_dataset(&dataset, &out)?;
            println!(
                "stage=phantom-gen out={} volumes={}",
                out.display(),
                dataset.input_train.len()
                    + dataset.input_test.len()
                    + dataset.output_train.len()
                    + dataset.output_heldout.len()
                    + dataset.zeroshot.len()
            );
            Ok(())
        }
        Command::Train {
            config,
            data,
            out,
            seed,
        } => {
            let config = resolve_config(config.as_deref(), seed)?;
            write_run_lock(&config, &out)?;
            let volumes = load_dataset(&data.join("output_train").join("manifest.tsv"))?;
            let translator = train_translator(&volumes, &config, &device)?;
            let path = out.join("translator.ckpt");
            save_checkpoint(&path, &translator.varmap, &translator.meta)?;
            println!("stage=train checkpoint={}", path.display());
            Ok(())
        }
        Command::Translate {
            checkpoint,
            manifest,
            out,
            config,
            n_candidates,
            ddim_steps,
            groups,
            no_scgd,
            candidate_rank,
            snr_db,
            contrast,
            bit_depth,
            seed,
        } => {
            let loaded = load_checkpoint(&checkpoint, &device)?;
            let mut config = resolve_config(config.as_deref(), seed)?;
            // The checkpoint dictates the model-facing settings.
            config.resolution = loaded.meta.arch.resolution;
            config.width_factor = loaded.meta.arch.width_factor;
            config.t_steps = loaded.meta.schedule.t_steps;
            config.beta_min = loaded.meta.schedule.beta_min;
            config.beta_max = loaded.meta.schedule.beta_max;
            config.p_adj = loaded.meta.p_adj;
            if let Some(n) = n_candidates {
                config.n_candidates = n;
            }
            if let Some(n) = ddim_steps {
                config.ddim_steps = n;
            }
            config.validate()?;
            write_run_lock(&config, &out)?;
            let volumes = load_dataset(&manifest)?;
            let options = StageOptions {
                translation: TranslationOptions {
                    adjacent_conditioning: !no_scgd,
                    candidate_rank,
                },
                snr_db,
                contrast,
                bit_depth,
                n_groups: groups,
            };
            let translation = translate_with_options(
                &loaded.model,
                &loaded.schedule,
                &volumes,
                &config,
                &options,
                &device,
            )?;
            save_dataset(&translation.volumes, &out)?;
            println!(
                "stage=translate out={} translated={} failed={}",
                out.display(),
                translation.volumes.len(),
                translation.failures.len()
            );
            if !translation.failures.is_empty() {
                for (volume_id, error) in &translation.failures {
                    eprintln!("translation failed for {volume_id}: {error}");
                }
                let (volume_id, error) = &translation.failures[0];
                return Err(Error::Translation {
                    volume_id: volume_id.clone(),
                    slice: 0,
                    message: error.to_string(),
                });
            }
            Ok(())
        }
        Command::TrainSeg {
            train_manifest,
            test_manifest,
            out,
            config,
            seed,
        } => {
            let config = resolve_config(config.as_deref(), seed)?;
            write_run_lock(&config, &out)?;
            let train = load_dataset(&train_manifest)?;
            let test = load_dataset(&test_manifest)?;
            let (_, report) = seg_transfer(&train, &test, &config, "train-seg", &device)?;
            report.save_json(&out.join("report.json"))?;
            print!("{}", report.text_table());
            Ok(())
        }
        Command::Evaluate { pred, gt, out } => {
            let pred_volumes = load_dataset(&pred.join("manifest.tsv"))?;
            let gt_volumes = load_dataset(&gt.join("manifest.tsv"))?;
            let report = evaluate_prediction_dirs(&pred_volumes, &gt_volumes)?;
            if let Some(out) = out {
                ensure_dir(&out)?;
                report.save_json(&out.join("report.json"))?;
            }
            print!("{}", report.text_table());
            Ok(())
        }
        Command::Experiment {
            axis,
            data,
            out,
            config,
            seed,
        } => {
            let config = resolve_config(config.as_deref(), seed)?;
            write_run_lock(&config, &out)?;
            let dataset = load_phantom_dataset(&data)?;
            let report = run_experiment(&axis, &dataset, &config, &device)?;
            report.save_json(&out.join("experiment.json"))?;
            let table = report.text_table();
            std::fs::write(out.join("table.txt"), &table)
                .map_err(|e| Error::io(out.join("table.txt"), e))?;
            print!("{table}");
            Ok(())
        }
        Command::Report { experiment, out } => {
            let report = ExperimentReport::load_json(&experiment)?;
            let files = emit_report_plots(&report, &out)?;
            for file in files {
                println!("stage=report wrote={}", file.display());
            }
            Ok(())
        }
    }
}

/// Pair predicted-mask volumes with ground-truth volumes by volume id
/// and evaluate volumetrically.
pub fn evaluate_prediction_dirs(
    predictions: &[Volume],
    ground_truth: &[Volume],
) -> Result<crate::metrics::MetricReport> {
    let mut predicted_masks = Vec::with_capacity(ground_truth.len());
    for gt in ground_truth {
        let pred = predictions
            .iter()
            .find(|p| p.volume_id == gt.volume_id)
            .ok_or_else(|| {
                Error::MetricUndefined(format!("no prediction for volume {}", gt.volume_id))
            })?;
        let masks = pred.masks.as_ref().ok_or_else(|| {
            Error::MetricUndefined(format!("prediction {} carries no masks", pred.volume_id))
        })?;
        predicted_masks.push(masks.clone());
    }
    evaluate_masks(&predicted_masks, ground_truth, "evaluate")
}

const PLOT_BAR_WIDTH: usize = 48;
const PLOT_GAP: usize = 24;
const PLOT_MARGIN: usize = 32;
const PLOT_HEIGHT: usize = 240;

/// Draw a bar chart with SEM whiskers as an RGB PNG. Bars are scaled to
/// the largest `mean + sem`; labels live in the accompanying text table.
fn draw_bar_plot(entries: &[(String, f64, f64)], path: &Path) -> Result<()> {
    if entries.is_empty() {
        return Err(Error::Config("no data to plot".into()));
    }
    let width = PLOT_MARGIN * 2 + entries.len() * (PLOT_BAR_WIDTH + PLOT_GAP);
    let white = image::Rgb([255u8, 255, 255]);
    let black = image::Rgb([0u8, 0, 0]);
    let blue = image::Rgb([58u8, 108, 196]);
    let mut img = image::RgbImage::from_pixel(width as u32, PLOT_HEIGHT as u32, white);

    let baseline = PLOT_HEIGHT - PLOT_MARGIN;
    let plot_h = (PLOT_HEIGHT - 2 * PLOT_MARGIN) as f64;
    let max_value = entries
        .iter()
        .map(|&(_, mean, sem)| mean + sem)
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let to_y = |value: f64| baseline - ((value / max_value) * plot_h).round() as usize;

    for x in PLOT_MARGIN..width - PLOT_MARGIN {
        img.put_pixel(x as u32, baseline as u32, black);
    }
    for y in PLOT_MARGIN..=baseline {
        img.put_pixel(PLOT_MARGIN as u32, y as u32, black);
    }
    for (i, &(_, mean, sem)) in entries.iter().enumerate() {
        let x0 = PLOT_MARGIN + PLOT_GAP / 2 + i * (PLOT_BAR_WIDTH + PLOT_GAP);
        let top = to_y(mean.max(0.0));
        for x in x0..x0 + PLOT_BAR_WIDTH {
            for y in top..baseline {
                img.put_pixel(x as u32, y as u32, blue);
            }
        }
        // SEM whisker: vertical line with end caps.
        let cx = x0 + PLOT_BAR_WIDTH / 2;
        let y_hi = to_y(mean + sem);
        let y_lo = to_y((mean - sem).max(0.0));
        for y in y_hi..=y_lo {
            img.put_pixel(cx as u32, y as u32, black);
        }
        for dx in 0..=8 {
            img.put_pixel((cx - 4 + dx) as u32, y_hi as u32, black);
            img.put_pixel((cx - 4 + dx) as u32, y_lo as u32, black);
        }
    }
    img.save(path)?;
    Ok(())
}

/// Emit DSC and ASSD bar plots plus a text table that repeats the
/// plotted numbers exactly.
pub fn emit_report_plots(report: &ExperimentReport, out: &Path) -> Result<Vec<PathBuf>> {
    if report.settings.is_empty() {
        return Err(Error::Config("experiment report has no settings".into()));
    }
    ensure_dir(out)?;
    let mut files = Vec::new();

    let gather = |metric: fn(&crate::segharness::SettingReport) -> Option<crate::metrics::MetricSummary>| {
        report
            .settings
            .iter()
            .filter_map(|s| metric(s).map(|m| (s.name.clone(), m.mean, m.sem)))
            .collect::<Vec<_>>()
    };
    let dsc = gather(|s| s.report.dsc);
    if !dsc.is_empty() {
        let path = out.join("dsc.png");
        draw_bar_plot(&dsc, &path)?;
        files.push(path);
    }
    let assd = gather(|s| s.report.assd);
    if !assd.is_empty() {
        let path = out.join("assd.png");
        draw_bar_plot(&assd, &path)?;
        files.push(path);
    }

    let mut table = report.text_table();
    table.push('\n');
    for (name, mean, sem) in dsc.iter().chain(&assd) {
        table.push_str(&format!("{name}: {mean:.6} ± {sem:.6}\n"));
    }
    let table_path = out.join("table.txt");
    std::fs::write(&table_path, table).map_err(|e| Error::io(&table_path, e))?;
    files.push(table_path);
    Ok(files)
}

/// Parse and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
