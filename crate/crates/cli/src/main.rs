use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cardan::codec::{SecretMessage, StabilityIndex};
use cardan::dataset::{ingest, load_image, read_image, synthesize, Dataset};
use cardan::experiments::{eval_ber, run_zero_message, sweep_grille_size, BerConfig, SweepConfig};
use cardan::grille::{GrilleFile, Placement};
use cardan::image::{Image, ImageShape, Rect};
use cardan::inpainting::{LossWeights, Mode, OptimizeConfig};
use cardan::models::{load_model, make_oracle, save_model, train_adversarial, ModelPair, TrainingConfig};
use cardan::pipeline::{extract, hide, read_stego, write_provenance, write_stego, HideConfig};
use cardan::{plot, Error};

const EXIT_FAILURE: u8 = 1;
const EXIT_CAPACITY: u8 = 3;
const EXIT_FORMAT: u8 = 4;
const EXIT_MISMATCH: u8 = 5;

#[derive(Parser)]
#[command(name = "cardan", version, about = "Keyed-grille steganography through generative image completion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a convolutional generator/discriminator pair, or write an analytic oracle pair.
    Train(TrainArgs),
    /// Write a message under a grille and complete the cover around it.
    Hide(HideArgs),
    /// Read a message back out of a stego image. No model is needed.
    Extract(ExtractArgs),
    /// Bit error rate per stability index and iteration budget.
    EvalBer(EvalBerArgs),
    /// Hide with grilles of several sizes on one cover.
    SweepGrille(SweepArgs),
    /// Hide an all-zero message and save completion snapshots.
    ZeroMessage(ZeroArgs),
    /// Render a CSV written by this tool as an SVG line plot.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Conv,
    Oracle,
}

#[derive(Args)]
struct DataArgs {
    /// Directory of training or cover images.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Use this many procedural face-like images instead of a directory.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 7)]
    data_seed: u64,
}

impl DataArgs {
    fn load(&self, shape: ImageShape) -> anyhow::Result<Dataset> {
        if shape.height != shape.width {
            bail!("only square images are supported, got {shape}");
        }
        match (&self.data, self.synthetic) {
            (Some(dir), _) => Ok(ingest(dir, shape.height, shape.channels)?),
            (None, Some(n)) => Ok(synthesize(n, shape, self.data_seed)?),
            (None, None) => bail!("pass --data <dir> or --synthetic <count>"),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "conv")]
    family: FamilyArg,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 3)]
    channels: usize,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 2e-4)]
    lr_g: f64,
    #[arg(long, default_value_t = 2e-4)]
    lr_d: f64,
    #[arg(long, default_value_t = cardan::models::DEFAULT_LATENT_DIM)]
    latent_dim: usize,
    #[arg(long, default_value_t = cardan::models::DEFAULT_BASE_WIDTH)]
    base_width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Save a checkpoint every N epochs into --checkpoint-dir.
    #[arg(long, default_value_t = 0, requires = "checkpoint_dir")]
    checkpoint_every: usize,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Per-epoch loss log.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
}

/// Grille key material, either a grille file or an inline key.
#[derive(Args)]
struct GrilleArgs {
    /// Grille exchange file.
    #[arg(long, conflicts_with_all = ["key", "grille_size", "density", "offset"])]
    grille: Option<PathBuf>,
    /// Grille key as hex.
    #[arg(long)]
    key: Option<String>,
    /// Grille shape, `N` or `RxC`.
    #[arg(long)]
    grille_size: Option<String>,
    #[arg(long)]
    density: Option<f64>,
    /// Top-left grille position `row,col`; centered when absent.
    #[arg(long)]
    offset: Option<String>,
    /// Stability index; overrides the grille file when given.
    #[arg(long)]
    si: Option<u8>,
}

fn parse_pair(s: &str, sep: char) -> anyhow::Result<(usize, usize)> {
    let (a, b) = s.split_once(sep).ok_or_else(|| anyhow!("expected two numbers separated by {sep:?}: {s}"))?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

fn parse_shape(s: &str) -> anyhow::Result<(usize, usize)> {
    if s.contains('x') {
        parse_pair(s, 'x')
    } else {
        let n = s.parse()?;
        Ok((n, n))
    }
}

fn parse_list<T: std::str::FromStr>(s: &str) -> anyhow::Result<Vec<T>>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    s.split(',').map(|v| Ok(v.trim().parse()?)).collect()
}

fn parse_region(s: &str) -> anyhow::Result<Rect> {
    let v: Vec<usize> = parse_list(s)?;
    match v[..] {
        [row, col, height, width] => Ok(Rect::new(row, col, height, width)),
        _ => bail!("region must be row,col,height,width"),
    }
}

impl GrilleArgs {
    fn resolve(&self) -> anyhow::Result<GrilleFile> {
        let mut file = match (&self.grille, &self.key) {
            (Some(path), _) => GrilleFile::read(path)?,
            (None, Some(key)) => {
                let key = hex::decode(key).context("--key must be hex")?;
                let shape = parse_shape(self.grille_size.as_deref().unwrap_or("32"))?;
                let si = StabilityIndex::new(self.si.unwrap_or(7))?;
                let mut f = GrilleFile::keyed(&key, shape, self.density.unwrap_or(cardan::grille::DEFAULT_DENSITY), si);
                if let Some(off) = &self.offset {
                    let (r, c) = parse_pair(off, ',')?;
                    f.placement = Placement::At(r, c);
                }
                f
            }
            (None, None) => bail!("pass --grille <file> or --key <hex>"),
        };
        if let Some(si) = self.si {
            file.si = StabilityIndex::new(si)?;
        }
        file.grille()?;
        Ok(file)
    }
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long, default_value_t = cardan::inpainting::DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = cardan::inpainting::DEFAULT_BUDGET)]
    budget: usize,
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    #[arg(long, default_value_t = cardan::inpainting::DEFAULT_LEARNING_RATE)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SearchArgs {
    fn weights(&self) -> anyhow::Result<LossWeights> {
        Ok(LossWeights::new(self.lambda)?)
    }

    fn optimize(&self) -> OptimizeConfig {
        OptimizeConfig {
            budget: self.budget,
            restarts: self.restarts,
            learning_rate: self.lr,
            seed: self.seed,
            checkpoints: Vec::new(),
        }
    }
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct MessageArgs {
    #[arg(long)]
    message_hex: Option<String>,
    /// Message as a string of 0 and 1.
    #[arg(long)]
    message_bits: Option<String>,
    /// Raw bytes of this file.
    #[arg(long)]
    message_file: Option<PathBuf>,
    /// All-zero message of this many bits.
    #[arg(long)]
    zeros: Option<usize>,
}

impl MessageArgs {
    fn resolve(&self) -> anyhow::Result<SecretMessage> {
        Ok(match (&self.message_hex, &self.message_bits, &self.message_file, self.zeros) {
            (Some(h), ..) => SecretMessage::from_hex(h)?,
            (_, Some(b), ..) => SecretMessage::from_bit_str(b)?,
            (_, _, Some(p), _) => SecretMessage::from_bytes(&std::fs::read(p)?),
            (_, _, _, Some(n)) => SecretMessage::zeros(n),
            _ => unreachable!("clap enforces one message source"),
        })
    }
}

#[derive(Args)]
struct HideArgs {
    #[arg(long)]
    cover: PathBuf,
    /// Center-crop and resample the cover to the model's shape instead of
    /// requiring an exact match.
    #[arg(long)]
    resize: bool,
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    grille: GrilleArgs,
    #[command(flatten)]
    message: MessageArgs,
    #[arg(long, value_enum, default_value = "soft")]
    mode: ModeArg,
    #[command(flatten)]
    search: SearchArgs,
    /// Completion region `row,col,height,width`; the central half when absent.
    #[arg(long)]
    region: Option<String>,
    /// Stego output; must be a lossless raster (png, bmp, ppm, tiff).
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the grille exchange file, including the message length, here.
    #[arg(long)]
    grille_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Soft,
    Hard,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Soft => Mode::Soft,
            ModeArg::Hard => Mode::Hard,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Hex,
    Bits,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    stego: PathBuf,
    #[command(flatten)]
    grille: GrilleArgs,
    /// Message length in bits; read from the grille file when absent.
    #[arg(long)]
    length: Option<usize>,
    #[arg(long, value_enum, default_value = "hex")]
    format: OutputFormat,
    /// Write raw message bytes here instead of printing.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalBerArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "4,5,6,7")]
    si: String,
    #[arg(long, default_value = "60,200,600")]
    budgets: String,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, value_enum, default_value = "soft")]
    mode: ModeArg,
    #[arg(long, default_value = "32")]
    grille_size: String,
    #[arg(long, default_value_t = cardan::grille::DEFAULT_DENSITY)]
    density: f64,
    #[arg(long, default_value_t = cardan::inpainting::DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random message bits per trial; the full grille capacity when absent.
    #[arg(long)]
    message_len: Option<usize>,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, conflicts_with = "synthetic_seed")]
    cover: Option<PathBuf>,
    /// Use a procedural cover drawn with this seed.
    #[arg(long)]
    synthetic_seed: Option<u64>,
    #[arg(long, default_value = "8,16,32,48")]
    sizes: String,
    #[arg(long, default_value_t = cardan::grille::DEFAULT_DENSITY)]
    density: f64,
    #[arg(long, default_value_t = 7)]
    si: u8,
    #[arg(long)]
    region: Option<String>,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ZeroArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, conflicts_with = "synthetic_seed")]
    cover: Option<PathBuf>,
    #[arg(long)]
    synthetic_seed: Option<u64>,
    #[command(flatten)]
    grille: GrilleArgs,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
}

fn load_cover(path: Option<&Path>, synthetic_seed: Option<u64>, shape: ImageShape) -> anyhow::Result<Image> {
    match (path, synthetic_seed) {
        (Some(p), _) => Ok(load_image(p, shape.height, shape.channels)?),
        (None, Some(seed)) => Ok(synthesize(1, shape, seed)?.image(0).clone()),
        (None, None) => bail!("pass --cover <image> or --synthetic-seed <n>"),
    }
}

fn load_checked_cover(path: &Path, models: &ModelPair, resize: bool) -> anyhow::Result<Image> {
    let shape = models.shape();
    if resize {
        return Ok(load_image(path, shape.height, shape.channels)?);
    }
    let cover = read_image(path, shape.channels)?;
    models.check_shape(cover.shape())?;
    Ok(cover)
}

fn run_train(a: &TrainArgs) -> anyhow::Result<()> {
    let shape = ImageShape::new(a.size, a.size, a.channels);
    let pair = match a.family {
        FamilyArg::Oracle => make_oracle(a.latent_dim, shape, a.seed)?,
        FamilyArg::Conv => {
            let data = a.data.load(shape)?;
            let config = TrainingConfig {
                epochs: a.epochs,
                batch_size: a.batch_size,
                lr_generator: a.lr_g,
                lr_discriminator: a.lr_d,
                latent_dim: a.latent_dim,
                base_width: a.base_width,
                seed: a.seed,
                checkpoint_every: a.checkpoint_every,
                checkpoint_dir: a.checkpoint_dir.clone(),
                ..TrainingConfig::default()
            };
            let (pair, log) = train_adversarial(&data, &config)?;
            for e in &log.epochs {
                log::info!(
                    "epoch {}: d_loss {:.4} g_loss {:.4} d_acc {:.3}",
                    e.epoch,
                    e.discriminator_loss,
                    e.generator_loss,
                    e.discriminator_accuracy
                );
            }
            if let Some(path) = &a.log {
                std::fs::write(path, log.to_csv()?)?;
            }
            pair
        }
    };
    save_model(&pair, &a.out)?;
    println!("{} {}", pair.fingerprint(), a.out.display());
    Ok(())
}

fn run_hide(a: &HideArgs) -> anyhow::Result<()> {
    // refuse lossy output before spending any time optimizing
    cardan::pipeline::lossless_format(&a.out)?;
    let models = load_model(&a.model)?;
    let cover = load_checked_cover(&a.cover, &models, a.resize)?;
    let message = a.message.resolve()?;
    let mut grille = a.grille.resolve()?;
    let mut config = HideConfig::new(grille.clone(), a.mode.into());
    config.grille.length = None;
    config.weights = a.search.weights()?;
    config.optimize = a.search.optimize();
    config.region = a.region.as_deref().map(parse_region).transpose()?;

    let outcome = hide(&cover, &message, &config, &models)?;
    write_stego(&a.out, &outcome.stego.image)?;
    write_provenance(&a.out, &outcome.stego.provenance)?;
    if let Some(path) = &a.trace {
        outcome.trace.write_csv(std::fs::File::create(path)?)?;
    }
    if let Some(path) = &a.grille_out {
        grille.length = Some(message.len());
        grille.write(path)?;
    }
    if outcome.overlap.on_kept > 0 {
        log::warn!(
            "{} grille cells fall outside the completion region",
            outcome.overlap.on_kept
        );
    }
    log::info!(
        "best loss {:.6} at iteration {} (contextual {:.6}, perceptual {:.6}, message {:.6})",
        outcome.best.total,
        outcome.trace.best_iteration,
        outcome.best.contextual,
        outcome.best.perceptual,
        outcome.best.message
    );
    Ok(())
}

fn run_extract(a: &ExtractArgs) -> anyhow::Result<()> {
    let grille = a.grille.resolve()?;
    let stego = read_stego(&a.stego)?;
    let message = extract(&stego, &grille, a.length)?;
    match &a.out {
        Some(path) => std::fs::write(path, message.to_bytes())?,
        None => match a.format {
            OutputFormat::Hex => println!("{}", message.to_hex()),
            OutputFormat::Bits => println!("{}", message.to_bit_string()),
        },
    }
    Ok(())
}

fn run_eval_ber(a: &EvalBerArgs) -> anyhow::Result<()> {
    let models = load_model(&a.model)?;
    let data = a.data.load(models.shape())?;
    let config = BerConfig {
        mode: a.mode.into(),
        sis: parse_list::<u8>(&a.si)?
            .into_iter()
            .map(StabilityIndex::new)
            .collect::<cardan::Result<_>>()?,
        budgets: parse_list(&a.budgets)?,
        trials: a.trials,
        seed: a.seed,
        grille_shape: parse_shape(&a.grille_size)?,
        density: a.density,
        weights: LossWeights::new(a.lambda)?,
        restarts: a.restarts,
        message_len: a.message_len,
        ..BerConfig::default()
    };
    let covers: Vec<Image> = data.images().into_iter().cloned().collect();
    let result = eval_ber(&models, &covers, &config)?;
    let csv = result.to_csv()?;
    std::fs::write(&a.out, &csv)?;
    if let Some(path) = &a.plot {
        std::fs::write(path, plot::render_svg(&csv)?.1)?;
    }
    print!("{csv}");
    Ok(())
}

fn run_sweep(a: &SweepArgs) -> anyhow::Result<()> {
    let models = load_model(&a.model)?;
    let cover = load_cover(a.cover.as_deref(), a.synthetic_seed, models.shape())?;
    let config = SweepConfig {
        sizes: parse_list(&a.sizes)?,
        density: a.density,
        si: StabilityIndex::new(a.si)?,
        region: a.region.as_deref().map(parse_region).transpose()?,
        budget: a.search.budget,
        restarts: a.search.restarts,
        weights: a.search.weights()?,
        seed: a.search.seed,
    };
    let result = sweep_grille_size(&models, &cover, &config)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let csv = result.to_csv()?;
    std::fs::write(a.out_dir.join("sweep.csv"), &csv)?;
    for (size, stego) in &result.stegos {
        let path = a.out_dir.join(format!("stego_{size}.png"));
        write_stego(&path, &stego.image)?;
        write_provenance(&path, &stego.provenance)?;
    }
    std::fs::write(a.out_dir.join("sweep.svg"), plot::render_svg(&csv)?.1)?;
    print!("{csv}");
    Ok(())
}

fn run_zero(a: &ZeroArgs) -> anyhow::Result<()> {
    let models = load_model(&a.model)?;
    let cover = load_cover(a.cover.as_deref(), a.synthetic_seed, models.shape())?;
    let grille = a.grille.resolve()?;
    let result = run_zero_message(&models, &cover, &grille, a.search.budget, a.search.weights()?, a.search.seed)?;
    std::fs::create_dir_all(&a.out_dir)?;
    for snap in &result.snapshots {
        write_stego(&a.out_dir.join(format!("iter_{:05}.png", snap.iteration)), &snap.image)?;
    }
    let stego_path = a.out_dir.join("stego.png");
    write_stego(&stego_path, &result.stego.image)?;
    write_provenance(&stego_path, &result.stego.provenance)?;
    result.trace.write_csv(std::fs::File::create(a.out_dir.join("trace.csv"))?)?;
    println!("{} snapshots in {}", result.snapshots.len(), a.out_dir.display());
    Ok(())
}

fn run_plot(a: &PlotArgs) -> anyhow::Result<()> {
    let data = plot::render_file(&a.csv, &a.out)?;
    println!("{:?} plot with {} series -> {}", data.kind, data.series.len(), a.out.display());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::CapacityExceeded { .. }) => EXIT_CAPACITY,
        Some(
            Error::LossyFormat(_)
            | Error::GrilleFormat { .. }
            | Error::Integrity(_)
            | Error::Version(_)
            | Error::Image(_),
        ) => EXIT_FORMAT,
        Some(Error::ShapeMismatch { .. } | Error::WindowOutOfBounds { .. }) => EXIT_MISMATCH,
        _ => EXIT_FAILURE,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => run_train(a),
        Command::Hide(a) => run_hide(a),
        Command::Extract(a) => run_extract(a),
        Command::EvalBer(a) => run_eval_ber(a),
        Command::SweepGrille(a) => run_sweep(a),
        Command::ZeroMessage(a) => run_zero(a),
        Command::Plot(a) => run_plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
