use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use convtts::audio::PhonemeVocabulary;
use convtts::nn::kernels::set_math_threads;
use convtts::pipeline::{self, BenchmarkSpec, PipelineConfig, SynthInput, TrainOptions};
use convtts::{Error, Result};

#[derive(Parser)]
#[command(name = "convtts", version, about = "Convolutional teacher-student text-to-speech")]
struct Cli {
    /// Worker threads for matrix kernels.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the attention teacher.
    TrainTeacher(TrainArgs),
    /// Align every corpus utterance with a trained teacher and write phoneme durations.
    ExtractDurations {
        #[arg(long)]
        config: PathBuf,
        /// Teacher checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Durations file to write.
        #[arg(long)]
        out: PathBuf,
        /// Directory for per-utterance attention images and matrices.
        #[arg(long)]
        dump_attention: Option<PathBuf>,
    },
    /// Train the duration-predicting student.
    TrainStudent {
        #[command(flatten)]
        train: TrainArgs,
        /// Durations file written by extract-durations.
        #[arg(long)]
        durations: PathBuf,
    },
    /// Synthesize a WAV file with a trained student.
    Synthesize {
        /// Student checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Optional configuration; must match the checkpoint's architecture.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "phonemes", required_unless_present = "phonemes")]
        text: Option<String>,
        /// Space-separated phoneme symbols.
        #[arg(long)]
        phonemes: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Also store the raw log spectrogram in a tensor container.
        #[arg(long)]
        mel_out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time spectrogram and vocoder stages across batch sizes.
    Benchmark {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
        batch_sizes: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        /// Spectrogram length per utterance; predicted durations are rescaled to it.
        #[arg(long, default_value_t = 838)]
        frames: usize,
        /// Write the table here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a small synthetic corpus and a matching configuration.
    MakeToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Resume from this checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

impl TrainArgs {
    fn options(&self) -> Result<TrainOptions> {
        let mut config = PipelineConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.optim.seed = seed;
        }
        Ok(TrainOptions {
            config,
            out: self.out.clone(),
            resume: self.checkpoint.clone(),
            log: !self.quiet,
        })
    }
}

fn optional_config(path: Option<&Path>) -> Result<Option<PipelineConfig>> {
    path.map(PipelineConfig::load).transpose()
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be at least 1".into()));
        }
        set_math_threads(n);
    }
    match cli.command {
        Command::TrainTeacher(args) => {
            let opts = args.options()?;
            let r = pipeline::train_teacher(&opts)?;
            println!("checkpoint: {}", opts.out.display());
            println!("steps: {}", r.steps);
            println!("epochs: {}", r.epochs);
            println!("train_diagonality: {:.4}", r.train_diagonality);
            if let Some(d) = r.eval_diagonality {
                println!("eval_diagonality: {d:.4}");
            }
        }
        Command::ExtractDurations {
            config,
            checkpoint,
            out,
            dump_attention,
        } => {
            let cfg = PipelineConfig::load(&config)?;
            let r = pipeline::extract(&cfg, &checkpoint, &out, dump_attention.as_deref())?;
            println!("durations: {}", out.display());
            println!("utterances: {}", r.utterances);
            println!("mean_diagonality: {:.4}", r.mean_diagonality);
            println!("monotone: {}", r.monotone);
        }
        Command::TrainStudent { train, durations } => {
            let opts = train.options()?;
            let r = pipeline::train_student(&opts, &durations)?;
            println!("checkpoint: {}", opts.out.display());
            println!("steps: {}", r.steps);
            println!("epochs: {}", r.epochs);
            println!("learning_rate: {:.6e}", r.final_lr);
            println!("train_mae: {:.4}", r.train.mae);
            println!("train_ssim: {:.4}", r.train.ssim);
            println!("train_duration: {:.4}", r.train.duration);
            if let Some(e) = r.eval {
                println!("eval_mae: {:.4}", e.mae);
                println!("eval_ssim: {:.4}", e.ssim);
                println!("eval_duration: {:.4}", e.duration);
            }
        }
        Command::Synthesize {
            checkpoint,
            config,
            text,
            phonemes,
            out,
            mel_out,
            seed,
        } => {
            let student = pipeline::load_student(&checkpoint, optional_config(config.as_deref())?.as_ref())?;
            let input = match (&text, &phonemes) {
                (Some(t), _) => SynthInput::Text(t),
                (None, Some(p)) => SynthInput::Phonemes(p),
                (None, None) => return Err(Error::InvalidArgument("pass --text or --phonemes".into())),
            };
            let r = pipeline::synthesize_to_wav(&student, &input, &out, mel_out.as_deref(), seed)?;
            println!("wav: {}", out.display());
            println!("frames: {}", r.frames);
            println!("seconds: {:.3}", r.seconds);
            println!(
                "durations: {}",
                r.durations.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
            );
        }
        Command::Benchmark {
            checkpoint,
            config,
            batch_sizes,
            repeats,
            frames,
            out,
            seed,
        } => {
            let student = pipeline::load_student(&checkpoint, optional_config(config.as_deref())?.as_ref())?;
            let phonemes = PhonemeVocabulary::standard().encode_text(pipeline::BENCHMARK_TEXT)?;
            let spec = BenchmarkSpec {
                phonemes: &phonemes,
                frames,
                batch_sizes: &batch_sizes,
                repeats,
                griffin_lim_iterations: student.config.synthesis.griffin_lim_iterations,
                seed,
            };
            let rows = pipeline::benchmark(&student, &spec)?;
            let table = pipeline::benchmark_table(&rows);
            print!("{table}");
            eprintln!("reference CPU, batch 1: sgram 0.105 s, total 1.808 s for 9.72 s of audio");
            if let Some(path) = out {
                std::fs::write(&path, &table).map_err(|e| Error::io(&path, e))?;
            }
        }
        Command::MakeToy { out, seed } => {
            let cfg = pipeline::make_toy(&out, seed)?;
            println!("config: {}", cfg.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: {}", first.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
