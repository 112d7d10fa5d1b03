//! `oafa`: train, generate, evaluate and synthesize data from the command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use oafa_core::data::{load_image, save_image, AgeGroup, Dataset, Manifest, ManifestEntry, Role};
use oafa_core::eval::{evaluate, fit_texture_classifier};
use oafa_core::networks::{generate, reconstruct, Occupation};
use oafa_core::trainer::{
    load_checkpoint, load_dataset, resume, train_loop, DataSource, StepMetrics, TrainConfig, TrainState,
};
use oafa_core::{Error, Tensor};

#[derive(Parser)]
#[command(name = "oafa", version, about = "Occupation-conditioned face aging")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train G, F and D; writes a metrics log and checkpoints.
    Train(TrainArgs),
    /// Age input faces under every occupation of a checkpoint.
    Generate(GenerateArgs),
    /// Score a checkpoint: cycle identity, condition separation, texture fidelity.
    Eval(EvalArgs),
    /// Write the synthetic dataset as a PNG tree plus manifest.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file; omitted keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dot-path assignment applied after the file, e.g. `trainer.epochs=1`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self, extra: &[String]) -> Result<TrainConfig> {
        let text = match &self.config {
            Some(path) => fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?,
            None => String::new(),
        };
        let overrides: Vec<String> = self.overrides.iter().chain(extra).cloned().collect();
        Ok(TrainConfig::from_toml(&text, &overrides)?)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Shorthand for `--override trainer.seed=N`.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory for `metrics.ndjson`, checkpoints and `config.toml`.
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint, keeping its configuration.
    #[arg(long, conflicts_with_all = ["config", "overrides", "seed"])]
    resume: Option<PathBuf>,
    /// Print a progress line every this many steps (0 silences it).
    #[arg(long, default_value_t = 100)]
    log_every: u64,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input PNGs, each of the model's image size.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of evaluation PNGs; defaults to the synthetic held-out set
    /// when the checkpoint was trained on synthetic data.
    #[arg(long)]
    inputs: Option<PathBuf>,
    /// Directory for `report.json` and `summary.txt`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Shorthand for `--override data.synth.seed=N`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for bad configuration or input data, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    let input_error = e.chain().any(|cause| {
        matches!(
            cause.downcast_ref::<Error>(),
            Some(Error::Config(_) | Error::Usage(_) | Error::Manifest { .. } | Error::Io { .. } | Error::Format(_))
        )
    });
    if input_error {
        2
    } else {
        1
    }
}

fn progress(every: u64) -> impl FnMut(&StepMetrics) {
    move |m| {
        if every > 0 && m.step % every == 0 {
            eprintln!(
                "step {} epoch {}: L_PER {:.4} L_CGAN(G) {:.4} L_CGAN(D) {:.4} L_TRL {:.4}",
                m.step, m.epoch, m.l_per, m.l_cgan_g, m.l_cgan_d, m.l_trl
            );
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut report = progress(args.log_every);
    let state = match &args.resume {
        Some(path) => {
            let state = load_checkpoint(path)?;
            let data = load_dataset(&state.config)?;
            resume(state, &data, Some(&args.out), None, &mut report)?
        }
        None => {
            let seed: Vec<String> = args.seed.map(|s| format!("trainer.seed={s}")).into_iter().collect();
            let config = args.config.load(&seed)?;
            config.validate()?;
            let data = load_dataset(&config)?;
            fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
            let path = args.out.join("config.toml");
            fs::write(&path, config.to_toml()).with_context(|| format!("writing {}", path.display()))?;
            train_loop(&config, &data, Some(&args.out), &mut report)?
        }
    };
    println!("trained {} steps; outputs in {}", state.step, args.out.display());
    Ok(())
}

fn check_size(image: &Tensor, path: &Path, size: usize) -> Result<()> {
    let s = image.shape();
    if s.h != size || s.w != size {
        return Err(Error::Format(format!(
            "{} is {}x{}, the model expects {size}x{size}",
            path.display(),
            s.w,
            s.h
        ))
        .into());
    }
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let state = load_checkpoint(&args.checkpoint)?;
    let size = state.config.model.image_size;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut written = 0;
    for path in &args.input {
        let y = load_image(path)?;
        check_size(&y, path, size)?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "input".into());
        for p in Occupation::all(state.config.model.occupations) {
            let aged = generate(&state.params.generator, &y, p.index())?;
            let cycle = reconstruct(&state.params.decoder, &aged)?;
            if !aged.is_finite() || !cycle.is_finite() {
                bail!("non-finite output for {} under occupation {p}", path.display());
            }
            save_image(&args.out.join(format!("{stem}_occ{p}.png")), &aged)?;
            save_image(&args.out.join(format!("{stem}_cycle{p}.png")), &cycle)?;
            written += 2;
        }
    }
    println!("wrote {written} images to {}", args.out.display());
    Ok(())
}

fn pngs_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let state: TrainState = load_checkpoint(&args.checkpoint)?;
    let cfg = &state.config;
    let synthetic = cfg.data.source == DataSource::Synth;
    let inputs = match &args.inputs {
        Some(dir) => pngs_in(dir)?
            .iter()
            .map(|p| {
                let image = load_image(p)?;
                check_size(&image, p, cfg.model.image_size)?;
                Ok(image)
            })
            .collect::<Result<Vec<_>>>()?,
        None if synthetic => cfg.data.synth.held_out_samples()?.into_iter().map(|s| s.image).collect(),
        None => bail!(Error::Usage("--inputs is required for checkpoints trained on a manifest".into())),
    };
    if inputs.is_empty() {
        bail!(Error::Domain("evaluation set is empty".into()));
    }
    let classifier = if synthetic {
        Some(fit_texture_classifier(&Dataset::from_synth(&cfg.data.synth)?.aged)?)
    } else {
        None
    };
    let report = evaluate(
        &state.params.generator,
        &state.params.decoder,
        &inputs,
        classifier.as_ref(),
        state.step,
    )?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let summary = report.summary();
    for (name, text) in [("report.json", report.to_json()), ("summary.txt", summary.clone())] {
        let path = args.out.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{summary}");
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let seed: Vec<String> = args.seed.map(|s| format!("data.synth.seed={s}")).into_iter().collect();
    let config = args.config.load(&seed)?;
    let synth = &config.data.synth;
    let age: AgeGroup = config.trainer.age_group;
    let root = &args.out;
    let names = synth.occupation_names();
    let mut entries = Vec::new();

    let young_dir = root.join("young");
    fs::create_dir_all(&young_dir).with_context(|| format!("creating {}", young_dir.display()))?;
    for (i, sample) in synth.young_samples()?.into_iter().enumerate() {
        let rel = PathBuf::from("young").join(format!("y{i:04}.png"));
        save_image(&root.join(&rel), &sample.image)?;
        entries.push(ManifestEntry {
            path: rel,
            role: Role::Young,
            occupation: None,
            age: None,
        });
    }
    for (p, name) in Occupation::all(synth.occupations).zip(&names) {
        let dir = PathBuf::from(name).join(age.to_string());
        fs::create_dir_all(root.join(&dir)).with_context(|| format!("creating {}", root.join(&dir).display()))?;
        for (i, sample) in synth.aged_samples(p)?.into_iter().enumerate() {
            let rel = dir.join(format!("a{i:04}.png"));
            save_image(&root.join(&rel), &sample.image)?;
            entries.push(ManifestEntry {
                path: rel,
                role: Role::Occupational,
                occupation: Some(name.clone()),
                age: Some(age),
            });
        }
    }
    let manifest = Manifest {
        occupations: names,
        entries,
        base_dir: root.clone(),
    };
    let path = root.join("manifest.txt");
    manifest.save(&path)?;
    println!("wrote {} images and {}", manifest.entries.len(), path.display());
    Ok(())
}
