use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use groundcap::captioner::Variant;
use groundcap::decoder::{BeamConfig, StopList};
use groundcap::harness::io::Split;
use groundcap::harness::pipeline::{self, GenerateRequest, TrainRequest, DEFAULT_DET_WINDOW};
use groundcap::harness::{gradcheck, ConfigFile, SyntheticCorpusSpec};
use groundcap::proposals::FilterConfig;
use groundcap::semantics::SemanticSubset;

#[derive(Parser)]
#[command(
    name = "groundcap",
    version,
    about = "Grounded video captioning over proposal pools"
)]
struct Cli {
    /// Flat key = value file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArg {
    /// Corpus directory.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus with planted grounding.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_val: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Build the caption vocabulary and mine concept vocabularies.
    MineVocab(DataArg),
    /// Train concept classifiers and write their responses per video.
    SvoTrain {
        #[command(flatten)]
        data: DataArg,
        /// Add a bias term to each classifier.
        #[arg(long)]
        bias: bool,
    },
    /// Score, filter and select proposal pools.
    ScoreProposals {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        m: Option<usize>,
    },
    /// Train a caption model.
    Train {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        out: PathBuf,
        /// meanpool, att, att-sem or stacked.
        #[arg(long)]
        variant: String,
        /// Semantic blocks, e.g. svo,cls,det.
        #[arg(long, default_value = "")]
        sem: String,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        dropout: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Decode captions with beam search and ground their words.
    Generate {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        min_len: Option<usize>,
        #[arg(long)]
        max_len: Option<usize>,
        /// Replacement stop-list, one word per line.
        #[arg(long)]
        stoplist: Option<PathBuf>,
    },
    /// Show grounding of generated captions.
    Ground {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        captions: PathBuf,
        /// Score against the planted alignment sidecar.
        #[arg(long)]
        alignment: bool,
    },
    /// BLEU@1-4 of captions against references, as CSV.
    Eval {
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        references: PathBuf,
    },
    /// Compare analytic and numeric gradients on tiny 64-bit models.
    GradCheck {
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 5)]
        steps: usize,
    },
}

fn overlay(cfg: &mut ConfigFile, key: &str, value: Option<impl ToString>) {
    if let Some(v) = value {
        cfg.set(key, v);
    }
}

fn run(cli: Cli) -> anyhow::Result<String> {
    let mut cfg = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let det_window = cfg.get("det_window")?.unwrap_or(DEFAULT_DET_WINDOW);
    let out = match cli.command {
        Command::Synth {
            out,
            seed,
            n_train,
            n_val,
            n_test,
            m,
            dim,
            noise,
        } => {
            overlay(&mut cfg, "seed", seed);
            overlay(&mut cfg, "n_train", n_train);
            overlay(&mut cfg, "n_val", n_val);
            overlay(&mut cfg, "n_test", n_test);
            overlay(&mut cfg, "m", m);
            overlay(&mut cfg, "dim", dim);
            overlay(&mut cfg, "noise", noise);
            let mut spec = SyntheticCorpusSpec::default();
            cfg.apply_synth(&mut spec)?;
            let videos = groundcap::harness::write_corpus(&spec, &out)?;
            format!("wrote {} videos to {}", videos.len(), out.display())
        }
        Command::MineVocab(d) => pipeline::mine_vocab(&d.data)?,
        Command::SvoTrain { data, bias } => {
            let with_bias = bias || cfg.get("lssvm_bias")?.unwrap_or(false);
            pipeline::svo_train(&data.data, cfg.lambda_grid()?, with_bias)?
        }
        Command::ScoreProposals { data, m } => {
            overlay(&mut cfg, "m", m);
            let mut filter = FilterConfig::default();
            cfg.apply_filter(&mut filter)?;
            pipeline::score_proposals(&data.data, cfg.get("m")?.unwrap_or(8), &filter)?
        }
        Command::Train {
            data,
            out,
            variant,
            sem,
            epochs,
            seed,
            hidden,
            learning_rate,
            dropout,
            batch_size,
        } => {
            overlay(&mut cfg, "epochs", epochs);
            overlay(&mut cfg, "seed", seed);
            overlay(&mut cfg, "hidden", hidden);
            overlay(&mut cfg, "learning_rate", learning_rate);
            overlay(&mut cfg, "dropout", dropout);
            overlay(&mut cfg, "batch_size", batch_size);
            let mut req = TrainRequest::new(
                &data.data,
                &out,
                Variant::parse(&variant)?,
                SemanticSubset::parse(&sem)?,
            );
            cfg.apply_model(&mut req.model)?;
            cfg.apply_train(&mut req.train)?;
            req.det_window = det_window;
            pipeline::train(&req)?
        }
        Command::Generate {
            data,
            model,
            out,
            split,
            beam,
            min_len,
            max_len,
            stoplist,
        } => {
            overlay(&mut cfg, "beam", beam);
            overlay(&mut cfg, "min_len", min_len);
            overlay(&mut cfg, "max_len", max_len);
            let mut beam = BeamConfig::default();
            cfg.apply_beam(&mut beam)?;
            let stoplist = match stoplist {
                Some(p) => StopList::parse(
                    &std::fs::read_to_string(&p)
                        .with_context(|| format!("reading {}", p.display()))?,
                ),
                None => StopList::default(),
            };
            pipeline::generate(&GenerateRequest {
                data: data.data,
                model,
                split: Split::parse(&split)?,
                beam,
                out,
                stoplist,
                det_window,
            })?
        }
        Command::Ground {
            data,
            captions,
            alignment,
        } => pipeline::ground_report(&data.data, &captions, alignment)?,
        Command::Eval {
            captions,
            references,
        } => {
            let report = pipeline::evaluate(&captions, &references)?;
            report.csv().trim_end().to_string()
        }
        Command::GradCheck { seeds, steps } => {
            let mut lines = Vec::new();
            let mut worst = 0.0f64;
            for variant in Variant::ALL {
                let mut v_worst = 0.0f64;
                for seed in 0..seeds {
                    let (model, example) = gradcheck::tiny_problem(variant, seed, steps)?;
                    v_worst = v_worst.max(gradcheck::max_relative_error(&model, &example)?);
                }
                worst = worst.max(v_worst);
                lines.push(format!("{variant:?}: max relative error {v_worst:.3e}"));
            }
            if worst >= 1e-6 {
                return Err(groundcap::Error::Numerical(format!(
                    "gradient check failed (max relative error {worst:.3e})\n{}",
                    lines.join("\n")
                ))
                .into());
            }
            lines.join("\n")
        }
    };
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .downcast_ref::<groundcap::Error>()
                .map_or(2, groundcap::Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
