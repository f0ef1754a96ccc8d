//! Verb implementations and the argument parser shared by `main` and `replay`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use vdsr_core::format::{decode_dataset, decode_model, encode_dataset, encode_model, Dataset};
use vdsr_core::io::{read_rgb, write_atomic, write_gray_png, write_rgb_png};
use vdsr_core::net::init_model;
use vdsr_core::train::{build_dataset, train_with, DEFAULT_PATCHES_PER_IMAGE, DEFAULT_PATCH_SIZE};
use vdsr_core::{NetworkModel, Scale};

use crate::config::{parse_scales, scales_to_string, TrainSettings};
use crate::manifest::{sha256_hex, RunManifest};
use crate::protocol::{bicubic_baseline, luminance_score, stretch_residual, synthesize};
use crate::report::{render_csv, render_table, EvalRow, BICUBIC_LABEL};
use crate::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "vdsr",
    version,
    about = "Residual CNN single-image super-resolution"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cut luminance patch pairs from a directory of images into a dataset archive.
    Patchify(PatchifyArgs),
    /// Train a network on a dataset archive.
    Train(TrainArgs),
    /// Downsample an image, super-resolve it, and write SR, bicubic and residual images.
    Predict(PredictArgs),
    /// Score models against the bicubic baseline on a set of scenes.
    Evaluate(EvaluateArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct PatchifyArgs {
    /// Directory of RGB images.
    #[arg(long)]
    pub input: PathBuf,
    /// Dataset archive to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PATCH_SIZE)]
    pub patch_size: usize,
    /// Patches per image and scale.
    #[arg(long, default_value_t = DEFAULT_PATCHES_PER_IMAGE)]
    pub count: usize,
    /// Comma-separated downsampling factors.
    #[arg(long, default_value = "2,3,4")]
    pub scales: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// `key=value` settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `fresh` for He initialization, or a model file to continue from.
    #[arg(long, default_value = "fresh")]
    pub init: String,
    /// Epoch log path; defaults to the model path with `.log` appended.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// `mse` or `var-norm`.
    #[arg(long)]
    pub estimator: Option<String>,
    /// Var-norm stability constant.
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Element-wise gradient clamp; defaults to 0.01 / lr.
    #[arg(long)]
    pub clip_theta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub filters: Option<usize>,
    #[arg(long)]
    pub kernel: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// High-resolution image to degrade and restore.
    #[arg(long)]
    pub input: PathBuf,
    /// Downsampling factor: 2, 3 or 4.
    #[arg(long)]
    pub scale: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// `LABEL=PATH`; repeat for several models.
    #[arg(long = "model", value_name = "LABEL=PATH", required = true)]
    pub models: Vec<String>,
    /// Scene images or directories of them.
    #[arg(long = "scenes", required = true, num_args = 1..)]
    pub scenes: Vec<PathBuf>,
    #[arg(long)]
    pub scale: usize,
    /// Tab-delimited table; the CSV goes beside it with a `.csv` extension.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

/// Parses `argv` (program name first) and runs the verb.
pub fn run<I, T>(argv: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Input(e.to_string().trim_end().to_string())),
    };
    let verb_args: Vec<String> = argv
        .iter()
        .skip(2)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match cli.command {
        Command::Patchify(a) => cmd_patchify(&a, &verb_args),
        Command::Train(a) => cmd_train(&a, &verb_args),
        Command::Predict(a) => cmd_predict(&a, &verb_args),
        Command::Evaluate(a) => cmd_evaluate(&a, &verb_args),
        Command::Replay(a) => cmd_replay(&a),
    }
}

fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> CliResult<NetworkModel> {
    decode_model(&read_bytes(path)?).map_err(|e| CliError::from(e).context(path.display()))
}

fn scale_arg(factor: usize) -> CliResult<Scale> {
    Ok(Scale::try_from(factor)?)
}

/// Regular, non-hidden files in `dir`, sorted by name.
fn list_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry?;
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if entry.file_type()?.is_file() && !hidden {
            files.push(entry.path());
        }
    }
    files.sort();
    Ok(files)
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn warn_scale(model: &NetworkModel, label: &str, scale: Scale) {
    if !model.metadata.scales.contains(&scale) {
        eprintln!(
            "warning: model {label} was trained for scales {}, not {scale}",
            scales_to_string(&model.metadata.scales)
        );
    }
}

pub fn cmd_patchify(a: &PatchifyArgs, verb_args: &[String]) -> CliResult<()> {
    let mut manifest = RunManifest::new("patchify", verb_args);
    let scales = parse_scales(&a.scales)?;
    let files = list_files(&a.input)?;
    if files.is_empty() {
        return Err(CliError::Input(format!(
            "no input images in {}",
            a.input.display()
        )));
    }

    let mut pairs = Vec::new();
    let mut sources = Vec::new();
    let mut rejected = 0;
    for path in &files {
        let per_image = read_rgb(path).and_then(|img| {
            build_dataset(std::slice::from_ref(&img), &scales, a.patch_size, a.count)
        });
        match per_image {
            Ok(mut found) => {
                for p in &mut found {
                    p.source = sources.len();
                }
                pairs.extend(found);
                sources.push(file_label(path));
                manifest.add_input(path)?;
            }
            Err(e) => {
                rejected += 1;
                eprintln!("skipping {}: {e}", path.display());
            }
        }
    }
    if pairs.is_empty() {
        return Err(CliError::Input(format!(
            "no patch pairs produced: all {rejected} files in {} were rejected",
            a.input.display()
        )));
    }

    let ds = Dataset {
        patch_size: a.patch_size,
        sources,
        pairs,
    };
    write_atomic(&a.out, &encode_dataset(&ds)?)?;
    println!(
        "{} pairs from {} images ({rejected} skipped) -> {}",
        ds.pairs.len(),
        ds.sources.len(),
        a.out.display()
    );
    manifest
        .config
        .insert("patch-size".into(), a.patch_size.to_string());
    manifest.config.insert("count".into(), a.count.to_string());
    manifest
        .config
        .insert("scales".into(), scales_to_string(&scales));
    manifest.add_output(&a.out)?;
    manifest.finish(&a.out)?;
    Ok(())
}

fn default_log_path(model: &Path) -> PathBuf {
    let mut name = model
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".log");
    model.with_file_name(name)
}

pub fn cmd_train(a: &TrainArgs, verb_args: &[String]) -> CliResult<()> {
    let mut manifest = RunManifest::new("train", verb_args);
    let ds = decode_dataset(&read_bytes(&a.dataset)?)
        .map_err(|e| CliError::from(e).context(a.dataset.display()))?;
    manifest.add_input(&a.dataset)?;

    let file_settings = match &a.config {
        Some(path) => {
            let text = String::from_utf8(read_bytes(path)?)
                .map_err(|_| CliError::Input(format!("{}: not UTF-8", path.display())))?;
            manifest.add_input(path)?;
            TrainSettings::parse(&text).map_err(|e| e.context(path.display()))?
        }
        None => TrainSettings::default(),
    };
    let flag_settings = TrainSettings {
        estimator: a.estimator.clone(),
        r: a.r,
        epochs: a.epochs,
        batch: a.batch,
        lr: a.lr,
        clip_theta: a.clip_theta,
        seed: a.seed,
        depth: a.depth,
        filters: a.filters,
        kernel: a.kernel,
    };
    let mut scales: Vec<Scale> = Scale::ALL
        .into_iter()
        .filter(|s| ds.pairs.iter().any(|p| p.scale == *s))
        .collect();
    if scales.is_empty() {
        scales = Scale::ALL.to_vec();
    }
    let resolved = file_settings
        .overridden_by(&flag_settings)
        .resolve(scales, ds.patch_size)?;

    let model = if a.init == "fresh" {
        init_model(
            resolved.depth,
            resolved.filters,
            resolved.kernel,
            resolved.config.seed,
        )?
    } else {
        let path = Path::new(&a.init);
        let model = load_model(path)?;
        manifest.add_input(path)?;
        if (model.depth(), model.filters(), model.kernel())
            != (resolved.depth, resolved.filters, resolved.kernel)
            && (a.depth.is_some() || a.filters.is_some() || a.kernel.is_some())
        {
            eprintln!(
                "warning: architecture flags ignored; {} has depth {}, filters {}, kernel {}",
                path.display(),
                model.depth(),
                model.filters(),
                model.kernel()
            );
        }
        model
    };

    let mut log_text = String::new();
    let (trained, logs) = train_with(model, &ds.pairs, &resolved.config, |log| {
        eprintln!("{log}");
        log_text.push_str(&format!("{log}\n"));
    })?;
    let log_path = a.log.clone().unwrap_or_else(|| default_log_path(&a.out));
    write_atomic(&a.out, &encode_model(&trained))?;
    write_atomic(&log_path, log_text.as_bytes())?;
    if let Some(last) = logs.last() {
        println!(
            "trained {} epochs, final loss {:?}, rmse {:?} -> {}",
            logs.len(),
            last.loss,
            last.rmse,
            a.out.display()
        );
    }

    let mut config = resolved.to_map();
    config.insert("init".into(), a.init.clone());
    config.insert("log".into(), log_path.display().to_string());
    manifest.config = config;
    manifest.seed = Some(resolved.config.seed);
    manifest.add_output(&a.out)?;
    manifest.add_output(&log_path)?;
    manifest.finish(&a.out)?;
    Ok(())
}

pub fn cmd_predict(a: &PredictArgs, verb_args: &[String]) -> CliResult<()> {
    let mut manifest = RunManifest::new("predict", verb_args);
    let scale = scale_arg(a.scale)?;
    let model = load_model(&a.model)?;
    warn_scale(&model, &a.model.display().to_string(), scale);
    let hr = read_rgb(&a.input).map_err(|e| CliError::from(e).context(a.input.display()))?;
    manifest.add_input(&a.model)?;
    manifest.add_input(&a.input)?;

    let p = synthesize(&model, &hr, scale)?;
    let (stretched, max_abs) = stretch_residual(&p.residual);
    fs::create_dir_all(&a.out)?;
    let stem = a
        .input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let sr_path = a.out.join(format!("{stem}_sr.png"));
    let bicubic_path = a.out.join(format!("{stem}_bicubic.png"));
    let residual_path = a.out.join(format!("{stem}_residual.png"));
    write_rgb_png(&sr_path, &p.sr)?;
    write_rgb_png(&bicubic_path, &p.bicubic)?;
    write_gray_png(&residual_path, &stretched)?;
    println!(
        "wrote {}, {}, {}",
        sr_path.display(),
        bicubic_path.display(),
        residual_path.display()
    );

    manifest
        .config
        .insert("scale".into(), scale.factor().to_string());
    manifest
        .config
        .insert("residual-stretch".into(), "0.5 + v / (2 * max_abs)".into());
    manifest
        .config
        .insert("residual-max-abs".into(), format!("{max_abs:?}"));
    for path in [&sr_path, &bicubic_path, &residual_path] {
        manifest.add_output(path)?;
    }
    manifest.finish(&sr_path)?;
    Ok(())
}

fn parse_model_spec(spec: &str) -> CliResult<(String, PathBuf)> {
    match spec.split_once('=') {
        Some((label, path)) if !label.is_empty() && !path.is_empty() => {
            Ok((label.to_string(), PathBuf::from(path)))
        }
        _ => Err(CliError::Input(format!(
            "model '{spec}' must be given as LABEL=PATH"
        ))),
    }
}

/// Scores every model and the bicubic baseline on one scene.
fn evaluate_scene(
    path: &Path,
    models: &[(String, NetworkModel)],
    scale: Scale,
) -> CliResult<Vec<EvalRow>> {
    let hr = read_rgb(path)?;
    let scene = file_label(path);
    let mut rows = vec![EvalRow {
        scene: scene.clone(),
        method: BICUBIC_LABEL.into(),
        score: luminance_score(&hr, &bicubic_baseline(&hr, scale)?)?,
    }];
    for (label, model) in models {
        rows.push(EvalRow {
            scene: scene.clone(),
            method: label.clone(),
            score: luminance_score(&hr, &synthesize(model, &hr, scale)?.sr)?,
        });
    }
    Ok(rows)
}

pub fn csv_path(table: &Path) -> PathBuf {
    table.with_extension("csv")
}

pub fn cmd_evaluate(a: &EvaluateArgs, verb_args: &[String]) -> CliResult<()> {
    let mut manifest = RunManifest::new("evaluate", verb_args);
    let scale = scale_arg(a.scale)?;
    let csv_out = csv_path(&a.out);
    if csv_out == a.out {
        return Err(CliError::Input(
            "table path must not end in .csv; the CSV is written beside it".into(),
        ));
    }

    let mut models: Vec<(String, NetworkModel)> = Vec::new();
    for spec in &a.models {
        let (label, path) = parse_model_spec(spec)?;
        if label == BICUBIC_LABEL || models.iter().any(|(l, _)| *l == label) {
            return Err(CliError::Input(format!(
                "model label '{label}' is reserved or repeated"
            )));
        }
        let model = load_model(&path)?;
        warn_scale(&model, &label, scale);
        manifest.add_input(&path)?;
        manifest
            .config
            .insert(format!("model.{label}"), sha256_hex(&encode_model(&model)));
        models.push((label, model));
    }

    let mut scenes = Vec::new();
    for p in &a.scenes {
        if p.is_dir() {
            scenes.extend(list_files(p)?);
        } else {
            scenes.push(p.clone());
        }
    }
    let mut rows = Vec::new();
    for path in &scenes {
        match evaluate_scene(path, &models, scale) {
            Ok(r) => {
                rows.extend(r);
                manifest.add_input(path)?;
            }
            Err(e) => eprintln!("skipping scene {}: {e}", path.display()),
        }
    }
    if rows.is_empty() {
        return Err(CliError::Input(format!(
            "none of the {} scenes could be evaluated",
            scenes.len()
        )));
    }

    let table = render_table(&rows);
    write_atomic(&a.out, table.as_bytes())?;
    write_atomic(&csv_out, render_csv(&rows)?.as_bytes())?;
    print!("{table}");

    manifest
        .config
        .insert("scale".into(), scale.factor().to_string());
    manifest.add_output(&a.out)?;
    manifest.add_output(&csv_out)?;
    manifest.finish(&a.out)?;
    Ok(())
}

pub fn cmd_replay(a: &ReplayArgs) -> CliResult<()> {
    let m = RunManifest::load(&a.manifest)?;
    if m.command == "replay" {
        return Err(CliError::Input(
            "a replay manifest cannot be replayed".into(),
        ));
    }
    for path in m.changed_inputs() {
        eprintln!("warning: input {path} differs from the recorded digest");
    }
    let mut argv = vec!["vdsr".to_string(), m.command.clone()];
    argv.extend(m.args.iter().cloned());
    run(argv)
}
