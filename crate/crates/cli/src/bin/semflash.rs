use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use semflash_core::classify::{BitGrid, Polarity, DEFAULT_BINS};
use semflash_core::doc;
use semflash_core::grid::{refine_grid, render_overlay, GridSpec};
use semflash_core::hexio::{compare_with_threshold, emit_ihex, parse_ihex, DEFAULT_BER_THRESHOLD};
use semflash_core::imagery::{load_image, save_image, Depth, SynthParams};
use semflash_core::layout::{bits_to_bytes, test_pattern, LayoutConfig, PatternKind, FLAGSHIP_COLS, FLAGSHIP_ROWS};
use semflash_core::mosaic::TileLayout;

use semflash_cli::config::{ClassifyOptions, DecodeMode};
use semflash_cli::error::{EXIT_ACCEPTANCE, EXIT_OK, EXIT_STAGE, EXIT_VALIDATION};
use semflash_cli::pipeline::{decode_merged, write_decoded, ArtifactLog, RunOutcome};
use semflash_cli::server::serve;
use semflash_cli::synth::{random_truth, synth_dataset, DatasetSpec};
use semflash_cli::{run_decode, run_pipeline, run_stitch, PipelineConfig, PipelineError};

#[derive(Parser)]
#[command(name = "semflash", version, about = "Recover flash contents from SEM images of the memory array")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic tiled dataset with known truth.
    Synth(SynthArgs),
    /// Register, merge and normalize the configured frames.
    Stitch(ConfigArg),
    /// Draw or refine a cell grid.
    #[command(subcommand)]
    Grid(GridCommand),
    /// Sample, threshold and classify one image with one grid.
    Classify(ClassifyArgs),
    /// Decode from stitched artifacts with the current grid.
    Decode(ConfigArg),
    /// Turn a bit raster into Intel HEX.
    Emit(EmitArgs),
    /// Bitwise comparison of two HEX files.
    Compare(CompareArgs),
    /// Run the whole pipeline.
    Run(ConfigArg),
    /// Serve the alignment API on loopback.
    Serve(ServeArgs),
}

#[derive(Args)]
struct ConfigArg {
    #[arg(long, short)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum GridCommand {
    /// Overlay cell markers on an image.
    Render {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Nudge corners to maximize class separation.
    Refine {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value_t = 2)]
        radius: u32,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PolarityArg {
    BrightIsZero,
    BrightIsOne,
}

impl From<PolarityArg> for Polarity {
    fn from(p: PolarityArg) -> Self {
        match p {
            PolarityArg::BrightIsZero => Polarity::BrightIsZero,
            PolarityArg::BrightIsOne => Polarity::BrightIsOne,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Merged,
    PerFrameVote,
}

#[derive(Clone, Copy, ValueEnum)]
enum PatternArg {
    AddressInData,
    Checkerboard,
    AllErased,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    grid: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, value_enum, default_value_t = PolarityArg::BrightIsZero)]
    polarity: PolarityArg,
    /// Receives cells.csv, histogram.csv, threshold.json and bits.pbm.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EmitArgs {
    #[arg(long)]
    bits: PathBuf,
    /// `layout.v1` file; defaults to row-major, MSB first, base 0.
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    extracted: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BER_THRESHOLD)]
    threshold: f64,
    /// Write the `report.v1` document here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long, default_value_t = 8765)]
    port: u16,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = FLAGSHIP_ROWS)]
    rows: usize,
    #[arg(long, default_value_t = FLAGSHIP_COLS)]
    cols: usize,
    #[arg(long, default_value_t = 12)]
    tile_rows: usize,
    #[arg(long, default_value_t = 8)]
    tile_cols: usize,
    #[arg(long, default_value_t = 32)]
    overlap: usize,
    /// Expected frame count; rejected if the tile grid disagrees.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, default_value_t = 3)]
    jitter: u32,
    #[arg(long, default_value_t = 8)]
    search_radius: u32,
    #[arg(long, default_value_t = 6)]
    pitch: u32,
    #[arg(long, default_value_t = 2.0)]
    spot_radius: f64,
    #[arg(long, default_value_t = 200.0)]
    mu_bright: f64,
    #[arg(long, default_value_t = 90.0)]
    mu_dark: f64,
    #[arg(long, default_value_t = 30.0)]
    background: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 8)]
    depth: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    acquisitions: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Merged)]
    mode: ModeArg,
    /// Truth image as Intel HEX; random from the seed when omitted.
    #[arg(long, conflicts_with = "pattern")]
    truth: Option<PathBuf>,
    #[arg(long, value_enum)]
    pattern: Option<PatternArg>,
    #[arg(long)]
    layout: Option<PathBuf>,
}

type Failure = (i32, String);

fn invalid(e: impl Display) -> Failure {
    (EXIT_VALIDATION, e.to_string())
}

fn failed(e: impl Display) -> Failure {
    (EXIT_STAGE, e.to_string())
}

fn pipeline_failure(e: PipelineError) -> Failure {
    (e.exit_code(), e.to_string())
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn read_doc<T: doc::Schema>(path: &Path) -> Result<T, Failure> {
    doc::from_str(&read_text(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, data: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| failed(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, data).map_err(|e| failed(format!("{}: {e}", path.display())))
}

fn load_config(path: &Path) -> Result<PipelineConfig, Failure> {
    PipelineConfig::load(path).map_err(pipeline_failure)
}

fn print_outcome(o: &RunOutcome) -> i32 {
    println!("wrote {} bytes at 0x{:08X}", o.bytes, o.base_address);
    if let Some(n) = o.disagreements {
        println!("acquisitions disagreed on {n} cells");
    }
    if let Some(r) = &o.report {
        println!(
            "ber {:.3e} ({} of {} bits), threshold {:.1e}: {}",
            r.ber,
            r.mismatched_bits,
            r.total_bits,
            r.threshold,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    o.exit_code()
}

fn synth(a: SynthArgs) -> Result<i32, Failure> {
    let params = SynthParams {
        mu_bright: a.mu_bright,
        mu_dark: a.mu_dark,
        sigma: a.sigma,
        cell_pitch: a.pitch,
        spot_radius: a.spot_radius,
        background: a.background,
        depth: Depth::from_bits(a.depth).map_err(invalid)?,
    };
    let layout: LayoutConfig = match &a.layout {
        Some(p) => read_doc(p)?,
        None => LayoutConfig::default(),
    };
    let len = a.rows * a.cols / layout.word_bits.max(1);
    let truth = match (&a.truth, a.pattern) {
        (Some(p), _) => parse_ihex(&read_text(p)?).map_err(|e| invalid(format!("{}: {e}", p.display())))?,
        (None, Some(kind)) => {
            let kind = match kind {
                PatternArg::AddressInData => PatternKind::AddressInData,
                PatternArg::Checkerboard => PatternKind::Checkerboard,
                PatternArg::AllErased => PatternKind::AllErased,
            };
            test_pattern(kind, len, layout.base_address).map_err(invalid)?
        }
        (None, None) => random_truth(len, layout.base_address, a.seed),
    };
    let mut spec = DatasetSpec::new(a.rows, a.cols, params, a.seed);
    spec.tiles = TileLayout::new(a.tile_rows, a.tile_cols, a.overlap);
    spec.declared_frames = a.frames;
    spec.jitter = a.jitter;
    spec.search_radius = a.search_radius;
    spec.acquisitions = a.acquisitions;
    spec.layout = layout;
    spec.mode = match a.mode {
        ModeArg::Merged => DecodeMode::Merged,
        ModeArg::PerFrameVote => DecodeMode::PerFrameVote,
    };
    let ds = synth_dataset(&truth, &spec, &a.out).map_err(invalid)?;
    let frames: usize = ds.frames.iter().map(Vec::len).sum();
    println!("wrote {frames} frames and {}", ds.config.display());
    Ok(EXIT_OK)
}

fn grid_command(cmd: GridCommand) -> Result<i32, Failure> {
    match cmd {
        GridCommand::Render { image, grid, out } => {
            let frame = load_image(&image).map_err(invalid)?;
            let grid: GridSpec = read_doc(&grid)?;
            let overlay = render_overlay(&frame, &grid).map_err(invalid)?;
            save_image(&overlay, &out).map_err(failed)?;
        }
        GridCommand::Refine {
            image,
            grid,
            radius,
            out,
        } => {
            let frame = load_image(&image).map_err(invalid)?;
            let grid: GridSpec = read_doc(&grid)?;
            let refined = refine_grid(&frame, &grid, radius).map_err(failed)?;
            write_file(&out, doc::to_string(&refined))?;
        }
    }
    Ok(EXIT_OK)
}

fn classify(a: ClassifyArgs) -> Result<i32, Failure> {
    let frame = load_image(&a.image).map_err(invalid)?;
    let grid: GridSpec = read_doc(&a.grid)?;
    let opts = ClassifyOptions {
        bins: a.bins,
        polarity: a.polarity.into(),
        mode: DecodeMode::Merged,
    };
    let d = decode_merged(&frame, &grid, &opts).map_err(pipeline_failure)?;
    write_decoded(&mut ArtifactLog::default(), &a.out_dir, &d).map_err(pipeline_failure)?;
    println!(
        "threshold {:.3}, gap {} bins, separability {:.4}",
        d.threshold.threshold, d.threshold.gap, d.threshold.separability
    );
    Ok(EXIT_OK)
}

fn emit(a: EmitArgs) -> Result<i32, Failure> {
    let data = fs::read(&a.bits).map_err(|e| invalid(format!("{}: {e}", a.bits.display())))?;
    let bits = BitGrid::from_pbm(&data).map_err(|e| invalid(format!("{}: {e}", a.bits.display())))?;
    let layout: LayoutConfig = match &a.layout {
        Some(p) => read_doc(p)?,
        None => LayoutConfig::default(),
    };
    let mem = bits_to_bytes(&bits, &layout).map_err(invalid)?;
    write_file(&a.out, emit_ihex(&mem).map_err(failed)?)?;
    Ok(EXIT_OK)
}

fn compare(a: CompareArgs) -> Result<i32, Failure> {
    let load = |p: &Path| parse_ihex(&read_text(p)?).map_err(|e| invalid(format!("{}: {e}", p.display())));
    let (extracted, truth) = (load(&a.extracted)?, load(&a.truth)?);
    let report = compare_with_threshold(&extracted, &truth, a.threshold).map_err(invalid)?;
    let text = doc::to_string(&report);
    match &a.out {
        Some(p) => write_file(p, text)?,
        None => print!("{text}"),
    }
    Ok(if report.pass { EXIT_OK } else { EXIT_ACCEPTANCE })
}

fn dispatch(cli: Cli) -> Result<i32, Failure> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Stitch(c) => {
            let cfg = load_config(&c.config)?;
            let st = run_stitch(&cfg).map_err(pipeline_failure)?;
            for (a, s) in st.iter().enumerate() {
                println!(
                    "acquisition {a}: {}x{} mosaic, origin {:?}",
                    s.mosaic.frame.width(),
                    s.mosaic.frame.height(),
                    s.placements.origin
                );
            }
            Ok(EXIT_OK)
        }
        Command::Grid(g) => grid_command(g),
        Command::Classify(a) => classify(a),
        Command::Decode(c) => {
            let cfg = load_config(&c.config)?;
            Ok(print_outcome(&run_decode(&cfg).map_err(pipeline_failure)?))
        }
        Command::Emit(a) => emit(a),
        Command::Compare(a) => compare(a),
        Command::Run(c) => {
            let cfg = load_config(&c.config)?;
            Ok(print_outcome(&run_pipeline(&cfg).map_err(pipeline_failure)?))
        }
        Command::Serve(a) => {
            let cfg = load_config(&a.config)?;
            serve(&cfg, a.port, |addr| println!("listening on http://{addr}")).map_err(pipeline_failure)?;
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code as u8)
        }
    }
}
