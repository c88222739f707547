mod cmd;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

/// Virtual-to-real driving: data generation, translation training, agent
/// training, and evaluation.
#[derive(Parser, Debug)]
#[command(name = "vrdrive", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// `key = value` config file applied over the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key (`key=value`); repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Root seed; every subsystem derives its stream from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render paired frames for both translation stages.
    GenData {
        /// Track: A, B, or seed:<n>.
        #[arg(long, default_value = "A")]
        track: String,
        /// Pairs per stage (at least 64); defaults to gan.pairs.
        #[arg(long)]
        n: Option<usize>,
        /// Drive policy for state sampling: random or center.
        #[arg(long)]
        policy: Option<String>,
        /// Output directory; receives stage1/ and stage2/.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train the virtual-to-parsing generator.
    TrainG1(TrainGan),
    /// Train the parsing-to-realistic generator.
    TrainG2(TrainGan),
    /// Train an actor-critic agent.
    TrainAgent {
        /// Observation mode: raw, translated, randomized, or real.
        #[arg(long, default_value = "raw")]
        mode: String,
        /// Randomized styles when --mode randomized.
        #[arg(long)]
        styles: Option<usize>,
        /// Directory holding g1.ckpt and g2.ckpt; required for translated mode.
        #[arg(long)]
        pipeline: Option<PathBuf>,
        /// Global environment steps; defaults to a3c.budget.
        #[arg(long)]
        budget: Option<u64>,
        /// Worker threads; defaults to a3c.workers.
        #[arg(long)]
        workers: Option<usize>,
        /// Track: A, B, or seed:<n>.
        #[arg(long, default_value = "A")]
        track: String,
        /// Continue from a saved agent checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Record a labeled drive log with steering angles.
    GenLog {
        /// Track: A, B, or seed:<n>.
        #[arg(long, default_value = "B")]
        track: String,
        /// Frames to record; defaults to eval.log_frames.
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train the supervised steering baseline on a drive log.
    TrainSupervised {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score a policy on a drive log, or run the transfer comparison.
    Evaluate {
        /// Policy checkpoint to score against --log.
        #[arg(long, requires = "log", conflicts_with = "transfer")]
        policy: Option<PathBuf>,
        /// Labeled drive log directory.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Method name reported for --policy.
        #[arg(long, default_value = "Ours")]
        method: String,
        /// Train and score Oracle, Ours, DR, and B-RL end to end.
        #[arg(long, requires = "pipeline")]
        transfer: bool,
        /// Translation pipeline directory for --transfer.
        #[arg(long)]
        pipeline: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Translate virtual frames (a .vrt file or a directory of them).
    Translate {
        #[arg(long)]
        pipeline: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference gradient checks of every layer and network.
    Gradcheck {
        /// Maximum relative error.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Drive a policy greedily and write the frames it saw as PPM files.
    RenderRollout {
        #[arg(long)]
        policy: PathBuf,
        /// virtual, parsing, real, or randomized:<seed>.
        #[arg(long, default_value = "virtual")]
        style: String,
        /// Track: A, B, or seed:<n>.
        #[arg(long, default_value = "A")]
        track: String,
        #[arg(long, default_value_t = 200)]
        steps: u32,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug)]
pub struct TrainGan {
    /// Stage directory written by gen-data (stage1/ or stage2/).
    #[arg(long)]
    pub data: PathBuf,
    /// Epochs; defaults to gan.epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

fn main() -> anyhow::Result<()> {
    use vrdrive::gan::Stage;
    match Cli::parse().command {
        Command::GenData { track, n, policy, out, common } => cmd::gen_data(&common, &track, n, policy, &out),
        Command::TrainG1(a) => cmd::train_gan(Stage::VirtualToParsing, &a),
        Command::TrainG2(a) => cmd::train_gan(Stage::ParsingToReal, &a),
        Command::TrainAgent {
            mode,
            styles,
            pipeline,
            budget,
            workers,
            track,
            resume,
            out,
            common,
        } => cmd::train_agent(
            &common,
            cmd::AgentArgs {
                mode,
                styles,
                pipeline,
                budget,
                workers,
                track,
                resume,
            },
            &out,
        ),
        Command::GenLog { track, frames, out, common } => cmd::gen_log(&common, &track, frames, &out),
        Command::TrainSupervised { log, out, common } => cmd::train_supervised(&common, &log, &out),
        Command::Evaluate {
            policy,
            log,
            method,
            transfer,
            pipeline,
            out,
            common,
        } => {
            if transfer {
                cmd::evaluate_transfer(&common, pipeline.as_deref().expect("clap requires --pipeline"), &out)
            } else {
                let (Some(policy), Some(log)) = (policy, log) else {
                    anyhow::bail!("evaluate needs --policy with --log, or --transfer");
                };
                cmd::evaluate_log(&common, &policy, &log, &method, &out)
            }
        }
        Command::Translate { pipeline, input, out, common } => cmd::translate(&common, &pipeline, &input, &out),
        Command::Gradcheck { tolerance, common } => cmd::gradcheck(&common, tolerance),
        Command::RenderRollout {
            policy,
            style,
            track,
            steps,
            out,
            common,
        } => cmd::render_rollout(&common, &policy, &style, &track, steps, &out),
    }
}
