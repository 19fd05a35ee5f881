use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smfnet::checkpoint::Checkpoint;
use smfnet::dataset::{self, gray_image, load_dataset, save_png, Split};
use smfnet::error::{Error, Result};
use smfnet::eval::{self, format_table, ModelPredictor, Predictor, TableFormat};
use smfnet::fixtures::{make_fixture, spec_from_kv};
use smfnet::kv::{parse_size, KvFile};
use smfnet::train::{self, IndexSource, Stage, StepRecord, TrainConfig};
use smfnet::viz::visualize_sw;
use smfnet_core::model::Smfnet;

#[derive(Parser)]
#[command(name = "smfnet", version, about = "RGB-D video salient object detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic fixture datasets from spec files.
    Fixtures {
        /// Fixture spec (key-value file); repeat for several sequences.
        #[arg(long, required = true)]
        spec: Vec<PathBuf>,
        /// Overrides any `seed` in the spec.
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset root [default: $SMFNET_OUT/fixtures].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pre-train one stream (encoder plus coarse head).
    Pretrain {
        #[arg(long, value_parser = parse_pretrain_stage)]
        stage: Stage,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Fine-tune the whole network from the three pre-trained streams.
    Train {
        /// Pre-trained checkpoints [default: pretrain_{depth,flow,rgb}.ckpt in the output root].
        #[arg(long)]
        pretrained: Vec<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Score a checkpoint on one or more datasets.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value = "md")]
        format: TableFormat,
        /// Also write the table here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write S_1 predictions as PNGs.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        input: InputArgs,
        /// [default: $SMFNET_OUT/predictions]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write weight-map and deepest-feature images for one frame.
    VisualizeSw {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[command(flatten)]
        input: InputArgs,
        /// [default: $SMFNET_OUT/sw]
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset root (training split).
    #[arg(long)]
    data: PathBuf,
    /// Key-value training config, applied over the profile defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Defaults to start from: `desk` (tiny model, 64x64) or `full` (448x448).
    #[arg(long, default_value = "desk")]
    profile: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Output root [default: $SMFNET_OUT].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InputArgs {
    #[arg(long, default_value = "test")]
    split: Split,
    /// Input size `HxW`.
    #[arg(long, default_value = "64x64", value_parser = parse_input_size)]
    size: (usize, usize),
}

fn parse_pretrain_stage(s: &str) -> std::result::Result<Stage, String> {
    match s.parse()? {
        Stage::Finetune => Err("use `train` for fine-tuning".into()),
        stage => Ok(stage),
    }
}

fn parse_input_size(s: &str) -> std::result::Result<(usize, usize), String> {
    parse_size(s).ok_or_else(|| format!("bad size `{s}`"))
}

fn out_root(out: &Option<PathBuf>, sub: &str) -> PathBuf {
    out.clone().unwrap_or_else(|| {
        let root = smfnet::output_root();
        if sub.is_empty() {
            root
        } else {
            root.join(sub)
        }
    })
}

fn checkpoint_path(root: &Path, stage: Stage) -> PathBuf {
    root.join(format!("{stage}.ckpt"))
}

fn train_config(args: &TrainArgs, stage: Stage) -> Result<TrainConfig> {
    let base = match args.profile.as_str() {
        "desk" => TrainConfig::desk(stage),
        "full" => TrainConfig {
            stage,
            ..TrainConfig::default()
        },
        other => return Err(Error::Config(format!("unknown profile `{other}`"))),
    };
    let mut cfg = match &args.config {
        Some(path) => TrainConfig::from_kv(&KvFile::read(path)?, base)?,
        None => base,
    };
    cfg.stage = stage;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Appends records to `<root>/<stage>.log.jsonl` and reports progress.
fn logger(root: &Path, stage: Stage, total: usize) -> Result<impl FnMut(&StepRecord) -> Result<()>> {
    std::fs::create_dir_all(root).map_err(|source| Error::Io {
        path: root.to_path_buf(),
        source,
    })?;
    let path = root.join(format!("{stage}.log.jsonl"));
    let file = File::create(&path).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    Ok(move |r: &StepRecord| {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w).and_then(|_| w.flush()).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        if r.step == 1 || r.step.is_multiple_of(50) || r.step as usize == total {
            eprintln!("{stage} step {}/{total}: loss {:.4}", r.step, r.report.l_total);
        }
        Ok(())
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fixtures { spec, seed, out } => {
            let root = out_root(&out, "fixtures");
            for path in spec {
                let (spec, spec_seed) = spec_from_kv(&KvFile::read(&path)?)?;
                let index = make_fixture(&spec, seed.or(spec_seed).unwrap_or(0), &root)?;
                eprintln!("{}: {} frames in {}", spec.sequence_id, spec.frames, root.display());
                drop(index);
            }
        }
        Command::Pretrain { stage, train: args } => {
            let cfg = train_config(&args, stage)?;
            let root = out_root(&args.out, "");
            let index = load_dataset(&args.data, Split::Train)?;
            let data = IndexSource {
                index: &index,
                size: cfg.input_size,
            };
            let log = logger(&root, stage, cfg.total_steps(index.len()))?;
            let ck = train::pretrain_stream(stage.modality().unwrap(), &cfg, &data, log)?;
            ck.save(&checkpoint_path(&root, stage))?;
        }
        Command::Train { pretrained, train: args } => {
            let cfg = train_config(&args, Stage::Finetune)?;
            let root = out_root(&args.out, "");
            let paths: Vec<PathBuf> = if pretrained.is_empty() {
                Stage::PRETRAIN
                    .iter()
                    .map(|&s| checkpoint_path(&root, s))
                    .filter(|p| p.exists() || !cfg.allow_missing_pretrain)
                    .collect()
            } else {
                pretrained
            };
            let cks: Vec<Checkpoint> = paths.iter().map(|p| Checkpoint::load(p)).collect::<Result<_>>()?;
            let index = load_dataset(&args.data, Split::Train)?;
            let data = IndexSource {
                index: &index,
                size: cfg.input_size,
            };
            let log = logger(&root, Stage::Finetune, cfg.total_steps(index.len()))?;
            let ck = train::finetune(&cfg, &cks, &data, log)?;
            ck.save(&checkpoint_path(&root, Stage::Finetune))?;
        }
        Command::Eval {
            checkpoint,
            data,
            input,
            format,
            output,
        } => {
            let predictor = ModelPredictor::from_checkpoint(&Checkpoint::load(&checkpoint)?)?;
            let mut rows = Vec::new();
            for root in &data {
                let index = load_dataset(root, input.split)?;
                let name = root.file_name().map_or_else(|| root.display().to_string(), |n| n.to_string_lossy().into());
                rows.push((name, eval::run_eval(&predictor, &index, input.size)?));
            }
            let table = format_table(&rows, format);
            print!("{table}");
            if let Some(path) = output {
                std::fs::write(&path, table).map_err(|source| Error::Io { path, source })?;
            }
        }
        Command::Infer {
            checkpoint,
            data,
            input,
            out,
        } => {
            let predictor = ModelPredictor::from_checkpoint(&Checkpoint::load(&checkpoint)?)?;
            let index = load_dataset(&data, input.split)?;
            let root = out_root(&out, "predictions");
            for (seq, frame) in index.frames() {
                let sample = dataset::load_frame(&seq.id, frame, input.size)?;
                let pred = predictor.predict(&sample)?;
                save_png(&root.join(&seq.id).join(format!("{}.png", frame.name)), gray_image(pred.values()))?;
            }
        }
        Command::VisualizeSw {
            checkpoint,
            data,
            frame,
            input,
            out,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let net = Smfnet::attach(ck.model.clone(), &ck.store)?;
            let index = load_dataset(&data, input.split)?;
            let sample = dataset::load_sample(&index, frame, input.size)?;
            let dir = out_root(&out, "sw");
            visualize_sw(&net, &ck.store, &sample, &dir)?;
            let (s, ns) = eval::sw_region_means(&net, &ck.store, std::slice::from_ref(&sample))?;
            println!("mean SW: salient {s:.4}, non-salient {ns:.4}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
