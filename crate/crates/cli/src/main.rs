use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use candle_core::{DType, Device};
use clap::{Parser, Subcommand};
use unic_core::advisor::{fit_viewport, Advisor, Session};
use unic_core::dataset::{build_dataset, image_path, read_scenes, write_scenes, write_synthetic, Scene, SourceKind};
use unic_core::eval::{evaluate, EvalMode, ModelPredictor};
use unic_core::imaging::{load_rgb, Planar};
use unic_core::model::{load_checkpoint, UnicModel};
use unic_core::training::{load_samples, render_view, train, TrainConfig};
use unic_core::Orientation;
use unic_cli::{parse_box, server};

#[derive(Parser)]
#[command(name = "unic", version, about = "Camera-view and composition recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert an annotated crop dataset into scenes.
    BuildDataset {
        /// Directory holding `annotations.jsonl` and the images it names.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = ["gaicd", "cpc"])]
        kind: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render procedural scenes with known best crops.
    MakeSynthetic {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    Train {
        /// TOML training config; missing keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// JSONL log; defaults to the checkpoint path with `.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Scenes evaluated (crop mode) after every epoch.
        #[arg(long)]
        eval_data: Option<PathBuf>,
    },
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "view")]
        mode: EvalMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Multi-step recommendation for one image.
    Recommend {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Starting viewport `x,y,w,h`, world-normalized.
        #[arg(long)]
        viewport: Option<String>,
        #[arg(long)]
        orientation: Option<Orientation>,
        #[arg(long, default_value_t = 3)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    Serve {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

fn load_model(path: &Path) -> Result<UnicModel> {
    let (model, _) = load_checkpoint(path, DType::F32, &Device::Cpu)
        .with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(model)
}

fn scene_inputs(model: &UnicModel, data: &Path, scenes: &[Scene]) -> Result<Vec<Planar>> {
    scenes
        .iter()
        .map(|s| {
            let world = load_rgb(image_path(data, s))?;
            Ok(render_view(model.config(), &world, &s.init_view))
        })
        .collect()
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildDataset { input, kind, seed, out } => {
            let kind: SourceKind = kind.parse()?;
            let report = build_dataset(&input, kind, seed)?;
            for (image, why) in &report.skipped {
                log::warn!("skipped {image}: {why}");
            }
            write_scenes(&out, &report.scenes)?;
            println!("{} scenes, {} skipped", report.scenes.len(), report.skipped.len());
        }
        Command::MakeSynthetic { count, seed, out } => {
            let scenes = write_synthetic(&out, count, seed)?;
            println!("{} scenes in {}", scenes.len(), out.display());
        }
        Command::Train { config, data, seed, out, log, eval_data } => {
            let mut cfg = match config {
                Some(p) => TrainConfig::load(&p).with_context(|| format!("reading {}", p.display()))?,
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let scenes = read_scenes(&data)?;
            if scenes.is_empty() {
                bail!("{} holds no scenes", data.display());
            }
            let samples = load_samples(&cfg.model, &data, &scenes)?;
            let held_out = match &eval_data {
                Some(p) => {
                    let scenes = read_scenes(p)?;
                    let inputs = scenes
                        .iter()
                        .map(|s| Ok(render_view(&cfg.model, &load_rgb(image_path(p, s))?, &s.init_view)))
                        .collect::<Result<Vec<_>>>()?;
                    Some((scenes, inputs))
                }
                None => None,
            };
            let log = log.unwrap_or_else(|| out.with_extension("log.jsonl"));
            let (_, logs) = train(cfg, &samples, &out, Some(&log), |model, _| {
                let Some((scenes, inputs)) = &held_out else { return Ok(None) };
                let report = evaluate(&ModelPredictor { model, batch_size: 32 }, scenes, inputs, EvalMode::Crop)?;
                Ok(Some(report.summary()))
            })?;
            if let Some(last) = logs.last() {
                println!("epoch {} {}", last.epoch, serde_json::to_string(&last.losses)?);
            }
        }
        Command::Eval { ckpt, data, mode, out } => {
            let model = load_model(&ckpt)?;
            let scenes = read_scenes(&data)?;
            let inputs = scene_inputs(&model, &data, &scenes)?;
            let report = evaluate(&ModelPredictor { model: &model, batch_size: 32 }, &scenes, &inputs, mode)?;
            write_json(&out, &report)?;
            println!("{}", report.summary());
        }
        Command::Recommend { ckpt, image, viewport, orientation, steps, out } => {
            let world = load_rgb(&image)?;
            let (ww, wh) = (world.width(), world.height());
            let orientation = orientation.unwrap_or(Orientation::of_extent(ww as f64, wh as f64));
            let viewport = match viewport {
                Some(s) => parse_box(&s)?,
                None => fit_viewport(ww, wh, orientation)?,
            };
            let mut advisor = Advisor::new(load_model(&ckpt)?);
            advisor.max_steps = steps;
            let mut session = Session::new(image.display().to_string(), &world);
            advisor.run_multistep(&mut session, &world, &viewport, orientation)?;
            write_json(&out, &session)?;
            for s in &session.trajectory {
                println!("step {}: {:?} converged={}", s.index, s.recommendation.operations, s.recommendation.converged);
            }
        }
        Command::Serve { ckpt, port, host } => {
            let advisor = Advisor::new(load_model(&ckpt)?);
            let app = server::router(server::AppState::new(advisor));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
                log::info!("listening on {}", listener.local_addr()?);
                axum::serve(listener, app).await?;
                anyhow::Ok(())
            })?;
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    run(Cli::parse())
}
