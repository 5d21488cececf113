use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use redimnet2::cost::{ablate_time_strides_frames, count_frames};
use redimnet2::eval::{evaluate, load_trials, render_trials, EvalReport, UtteranceSource, WavDir};
use redimnet2::frontend::frames_for_seconds;
use redimnet2::model::checkpoint;
use redimnet2::plan::{padded_len, render_symbolic, symbolic_rows};
use redimnet2::train::{epoch_losses, metrics_csv, SyntheticSpeakerSet, TrainConfig, Trainer};
use redimnet2::{Error, ModelConfig, ShapePlan};

const EXIT_CONFIG: u8 = 2;
const EXIT_CONTRACT: u8 = 3;
const EXIT_NUMERIC: u8 = 4;
const EXIT_IO: u8 = 5;

#[derive(Parser)]
#[command(name = "redimnet2", version, about = "Plan, cost, train and evaluate speaker embedding models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the stage shape table, symbolically and for a concrete input.
    Plan {
        model: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        input_seconds: f64,
    },
    /// Per-layer parameter and MAC counts as CSV.
    Cost {
        model: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        input_seconds: f64,
        /// Also report compute with every time stride removed.
        #[arg(long)]
        ablate_time: bool,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Two-stage training on synthetic speakers, then evaluation.
    Train {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `seed` from the train config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `data_seed` from the train config.
        #[arg(long)]
        data_seed: Option<u64>,
    },
    /// Score a trial list with a checkpoint.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        /// Directory of `<id>.wav` files.
        #[arg(long, conflicts_with = "synthetic")]
        wav_dir: Option<PathBuf>,
        /// Regenerate the synthetic set described by this train config.
        #[arg(long)]
        synthetic: Option<PathBuf>,
        /// Write eval.csv, scores.csv and eval.txt here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Collect (gmacs, params, eer) from run directories, sorted by gmacs.
    Pareto {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the synthetic trial utterances as WAV files plus a trial list.
    Synth {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the training utterances.
        #[arg(long)]
        with_train: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                _ if err.is_config() => EXIT_CONFIG,
                _ if err.is_numeric() => EXIT_NUMERIC,
                Error::Io { .. } => EXIT_IO,
                _ => EXIT_CONTRACT,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_CONTRACT
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Plan { model, input_seconds } => {
            let cfg = ModelConfig::load(&model)?;
            print!("{}", plan_text(&cfg, input_seconds)?);
            Ok(())
        }
        Command::Cost {
            model,
            input_seconds,
            ablate_time,
            out,
        } => cmd_cost(&model, input_seconds, ablate_time, out.as_deref()),
        Command::Train {
            model,
            train,
            out,
            seed,
            data_seed,
        } => cmd_train(&model, &train, &out, seed, data_seed),
        Command::Eval {
            model,
            checkpoint,
            trials,
            wav_dir,
            synthetic,
            out,
        } => cmd_eval(&model, &checkpoint, &trials, wav_dir, synthetic, out.as_deref()),
        Command::Pareto { runs, out } => {
            let csv = pareto_csv(&runs)?;
            match out {
                Some(path) => write(&path, &csv),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Command::Synth { train, out, with_train } => cmd_synth(&train, &out, with_train),
    }
}

fn input_frames(seconds: f64) -> Result<usize> {
    if !(seconds > 0.0 && seconds.is_finite()) {
        return Err(Error::Config(format!("input seconds must be positive, got {seconds}")).into());
    }
    match frames_for_seconds(seconds) {
        0 => Err(Error::Config(format!("{seconds} s is shorter than one analysis window")).into()),
        n => Ok(n),
    }
}

fn plan_text(cfg: &ModelConfig, seconds: f64) -> Result<String> {
    let rows = symbolic_rows(&cfg.stages)?;
    let frames = input_frames(seconds)?;
    let t = padded_len(frames, cfg.time_divisor());
    let plan = ShapePlan::new(cfg, t)?;
    Ok(format!(
        "{}\n{}\n{} at {seconds} s ({frames} frames, padded to {t}), 1D width {}\n{}",
        cfg.name,
        render_symbolic(&rows),
        cfg.name,
        plan.width(),
        plan.render()
    ))
}

fn cmd_cost(model: &Path, seconds: f64, ablate: bool, out: Option<&Path>) -> Result<()> {
    let cfg = ModelConfig::load(model)?;
    let frames = input_frames(seconds)?;
    let report = count_frames(&cfg, frames)?;
    match out {
        Some(path) => write(path, &report.to_csv())?,
        None => print!("{}", report.to_csv()),
    }
    eprintln!("{}: {}", cfg.name, report.summary());
    if ablate {
        let a = ablate_time_strides_frames(&cfg, frames)?;
        eprintln!(
            "without time strides: {:.4} GMACs vs {:.4} GMACs, ratio {:.3}",
            a.gmacs_without, a.gmacs_with, a.ratio
        );
    }
    Ok(())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, e: std::io::Error) -> anyhow::Error {
    anyhow::Error::new(e).context(path.display().to_string())
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

fn write_eval(dir: &Path, report: &EvalReport) -> Result<()> {
    write(&dir.join("eval.csv"), report.summary_csv())?;
    write(&dir.join("scores.csv"), report.scores_csv())?;
    write(&dir.join("eval.txt"), format!("{}\n", report.summary()))
}

fn cmd_train(model: &Path, train: &Path, out: &Path, seed: Option<u64>, data_seed: Option<u64>) -> Result<()> {
    let cfg = ModelConfig::load(model)?;
    let mut tc = TrainConfig::load(train)?;
    if let Some(s) = seed {
        tc.seed = s;
    }
    if let Some(s) = data_seed {
        tc.data_seed = s;
    }
    tc.validate()?;
    create_dir(out)?;

    let manifest = format!(
        "model_config = {}\ntrain_config = {}\nseed = {}\ndata_seed = {}\nout = {}\nversion = {} {}\n",
        model.display(),
        train.display(),
        tc.seed,
        tc.data_seed,
        out.display(),
        env!("CARGO_PKG_NAME"),
        env!("CARGO_PKG_VERSION"),
    );
    write(&out.join("manifest.txt"), manifest)?;
    write(&out.join("model.cfg"), cfg.to_kv().render())?;
    write(&out.join("train.cfg"), tc.to_kv().render())?;
    write(&out.join("plan.txt"), plan_text(&cfg, 2.0)?)?;
    let cost = redimnet2::cost::count(&cfg)?;
    write(&out.join("cost.csv"), cost.to_csv())?;
    eprintln!("{}: {}", cfg.name, cost.summary());

    let data = SyntheticSpeakerSet::from_config(&tc)?;
    let trainer = Trainer::new(&cfg, &tc, &data.train)?;
    let steps = tc.steps_per_epoch;
    let outcome = trainer.run(&mut |stage, row| {
        if row.step % steps == 0 {
            eprintln!(
                "{stage:?} epoch {} step {} loss {:.4} lr {:.2e} margin {:.3}",
                row.epoch, row.step, row.loss, row.lr, row.margin
            );
        }
    })?;
    write(&out.join("metrics_pretrain.csv"), metrics_csv(&outcome.pretrain_metrics))?;
    write(&out.join("metrics_lm.csv"), metrics_csv(&outcome.lm_metrics))?;
    checkpoint::save(&outcome.pretrained, out.join("pretrain.ckpt"))?;
    checkpoint::save(&outcome.finetuned, out.join("final.ckpt"))?;

    let trials = data.trials();
    write(&out.join("trials.txt"), render_trials(&trials))?;
    let report = evaluate(&outcome.finetuned, &cfg, &trials, &data)?;
    write_eval(out, &report)?;
    if let Some(last) = epoch_losses(&outcome.pretrain_metrics).last() {
        eprintln!("final pretrain epoch loss {last:.4}");
    }
    println!("{}", report.summary());
    Ok(())
}

fn cmd_eval(
    model: &Path,
    ckpt: &Path,
    trials: &Path,
    wav_dir: Option<PathBuf>,
    synthetic: Option<PathBuf>,
    out: Option<&Path>,
) -> Result<()> {
    let cfg = ModelConfig::load(model)?;
    let store = checkpoint::load(ckpt)?;
    let trials = load_trials(trials)?;
    let source: Box<dyn UtteranceSource> = match (wav_dir, synthetic) {
        (Some(root), None) => Box::new(WavDir { root }),
        (None, Some(path)) => Box::new(SyntheticSpeakerSet::from_config(&TrainConfig::load(path)?)?),
        _ => bail!(Error::Config("pass exactly one of --wav-dir or --synthetic".into())),
    };
    let report = evaluate(&store, &cfg, &trials, source.as_ref())?;
    if let Some(dir) = out {
        create_dir(dir)?;
        write_eval(dir, &report)?;
    }
    println!("{}", report.summary());
    Ok(())
}

struct ParetoRow {
    run: String,
    gmacs: f64,
    params: u64,
    eer: f64,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

/// `params` and `macs` from the `total` row of a cost CSV.
fn cost_totals(path: &Path) -> Result<(u64, u64)> {
    let text = read_to_string(path)?;
    let line = text
        .lines()
        .find(|l| l.starts_with("total,"))
        .with_context(|| format!("{}: no total row", path.display()))?;
    let fields: Vec<&str> = line.split(',').collect();
    let [_, params, macs] = fields[..] else {
        bail!("{}: malformed total row {line:?}", path.display());
    };
    Ok((params.parse()?, macs.parse()?))
}

fn eval_eer(path: &Path) -> Result<f64> {
    let text = read_to_string(path)?;
    let row = text
        .lines()
        .nth(1)
        .with_context(|| format!("{}: no data row", path.display()))?;
    let eer = row.split(',').next().unwrap_or("");
    eer.parse()
        .with_context(|| format!("{}: bad eer {eer:?}", path.display()))
}

fn pareto_csv(runs: &[PathBuf]) -> Result<String> {
    let mut rows = Vec::new();
    for dir in runs {
        let eval = dir.join("eval.csv");
        if !eval.is_file() {
            eprintln!("warning: {} has no eval report, skipped", dir.display());
            continue;
        }
        let (params, macs) = cost_totals(&dir.join("cost.csv"))?;
        rows.push(ParetoRow {
            run: dir.display().to_string(),
            gmacs: macs as f64 / 1e9,
            params,
            eer: eval_eer(&eval)?,
        });
    }
    rows.sort_by(|a, b| a.gmacs.total_cmp(&b.gmacs).then_with(|| a.run.cmp(&b.run)));
    let mut out = String::from("run,gmacs,params,eer\n");
    for r in rows {
        out.push_str(&format!("{},{:.6},{},{:.6}\n", r.run, r.gmacs, r.params, r.eer));
    }
    Ok(out)
}

fn cmd_synth(train: &Path, out: &Path, with_train: bool) -> Result<()> {
    let tc = TrainConfig::load(train)?;
    let data = SyntheticSpeakerSet::from_config(&tc)?;
    let utts = data.trial.iter().chain(if with_train { &data.train[..] } else { &[] });
    let mut n = 0;
    for u in utts {
        let path = out.join(format!("{}.wav", u.id));
        if let Some(parent) = path.parent() {
            create_dir(parent)?;
        }
        u.wave.write_wav(&path)?;
        n += 1;
    }
    create_dir(out)?;
    write(&out.join("trials.txt"), render_trials(&data.trials()))?;
    eprintln!("wrote {n} utterances to {}", out.display());
    Ok(())
}
