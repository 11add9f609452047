use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use ctm_core::bench::{bench_attention, bench_csv, default_grid, BenchPoint};
use ctm_core::forward::{capture, Dims, MaskKind, MaskSet, VideoCube};
use ctm_core::gap::{gap_tv_reconstruct, GapTvConfig};
use ctm_core::io::{
    read_any_cube, read_checkpoint, sct_write, write_checkpoint, Dataset, RunConfig, SctTensor,
};
use ctm_core::metrics::EvalReport;
use ctm_core::model::UnfoldingModel;
use ctm_core::scene::{self, SceneKind};
use ctm_core::train::{curve_csv, train_schedule};
use ctm_core::{Error, Result};

#[derive(Parser)]
#[command(name = "ctm", version, about = "Video snapshot compressive imaging toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a capture and write truth, masks and measurement.
    GenData(GenData),
    /// Reconstruct with the GAP-TV baseline.
    ReconstructGaptv(ReconstructGaptv),
    /// Run the staged training schedule.
    Train(Train),
    /// Reconstruct with a trained model.
    Reconstruct(Reconstruct),
    /// Write the log-variance, variance and binarized uncertainty maps.
    UncertaintyMap(UncertaintyMapArgs),
    /// Count and time attention for a grid of shapes.
    BenchAttn(BenchAttn),
    /// Compare a reconstruction with ground truth.
    Eval(Eval),
}

#[derive(Args)]
struct GenData {
    #[arg(long, default_value_t = 32)]
    w: usize,
    #[arg(long, default_value_t = 32)]
    h: usize,
    #[arg(long, default_value_t = 4)]
    t: usize,
    #[arg(long, default_value = "moving-square")]
    scene: String,
    /// Flat cube of this value instead of a scene.
    #[arg(long, conflicts_with_all = ["scene", "import_raw"])]
    constant: Option<f64>,
    /// Take the cube from the first [T, H, W] record of an SCT file.
    #[arg(long)]
    import_raw: Option<PathBuf>,
    #[arg(long, default_value = "bernoulli")]
    masks: String,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReconstructGaptv {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    outer: Option<usize>,
    #[arg(long)]
    tv_iters: Option<usize>,
    /// `gaptv.*` keys are read from this file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Report CSV; defaults to the output path with a `.csv` extension.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training capture; repeat for more samples.
    #[arg(long, required = true)]
    data: Vec<PathBuf>,
    #[arg(long)]
    out_ckpt: PathBuf,
    /// Training curve CSV; defaults to the checkpoint path with a `.csv`
    /// extension.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args)]
struct Reconstruct {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    /// Use only the first N phases.
    #[arg(long)]
    phases: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct UncertaintyMapArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchAttn {
    /// File with one `W,H,T,C,P,M,S,B[,heads]` point per line, or `default`.
    #[arg(long, default_value = "default")]
    grid: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    recon: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Report CSV; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_cube(path: &Path, cube: &VideoCube) -> Result<()> {
    sct_write(path, &[SctTensor::f64("recon", &cube.dims.shape(), cube.data.clone())])
}

fn report_path(explicit: Option<PathBuf>, out: &Path) -> PathBuf {
    explicit.unwrap_or_else(|| out.with_extension("csv"))
}

/// Writes a report when ground truth is available.
fn write_report(name: &str, recon: &VideoCube, truth: Option<&VideoCube>, runtime: f64, path: &Path) -> Result<()> {
    match truth {
        Some(truth) => {
            let report = EvalReport::evaluate(name, recon, truth, runtime)?;
            println!("{name}: psnr {:.3} dB, ssim {:.4}", report.psnr_mean, report.ssim_mean);
            write_text(path, &EvalReport::to_csv(&[report]))
        }
        None => {
            eprintln!("no ground truth in input; report skipped");
            Ok(())
        }
    }
}

fn gen_data(a: GenData) -> Result<()> {
    let truth = if let Some(path) = &a.import_raw {
        read_any_cube(path)?
    } else {
        let dims = Dims::new(a.w, a.h, a.t)?;
        match a.constant {
            Some(v) => scene::constant(dims, v)?,
            None => scene::generate(a.scene.parse::<SceneKind>()?, dims, a.seed)?,
        }
    };
    let kind: MaskKind = a.masks.parse()?;
    let masks = MaskSet::generate(truth.dims, kind, a.seed.wrapping_add(1))?;
    let y = capture(&truth, &masks, a.noise, a.seed.wrapping_add(2))?;
    Dataset {
        truth: Some(truth),
        masks,
        y,
    }
    .write(&a.out)
}

fn reconstruct_gaptv(a: ReconstructGaptv) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => RunConfig::parse(&read_text(path)?)?.gaptv,
        None => GapTvConfig::default(),
    };
    if let Some(l) = a.lambda {
        cfg.tv_weight = l;
    }
    if let Some(n) = a.outer {
        cfg.outer_iters = n;
    }
    if let Some(n) = a.tv_iters {
        cfg.tv_iters = n;
    }
    let ds = Dataset::read(&a.input)?;
    let start = Instant::now();
    let recon = gap_tv_reconstruct(&ds.y, &ds.masks, &cfg)?;
    let runtime = start.elapsed().as_secs_f64();
    write_cube(&a.out, &recon)?;
    write_report("gaptv", &recon, ds.truth.as_ref(), runtime, &report_path(a.report, &a.out))
}

fn train(a: Train) -> Result<()> {
    let cfg = match &a.config {
        Some(path) => RunConfig::parse(&read_text(path)?)?,
        None => RunConfig::default(),
    };
    let samples = a
        .data
        .iter()
        .map(|p| Dataset::read(p)?.sample())
        .collect::<Result<Vec<_>>>()?;
    let mut model = UnfoldingModel::new(cfg.model.clone())?;
    let report = train_schedule(&mut model, &samples, &cfg.train, |p| {
        println!("{} step {} loss {:.6e} psnr {:.3}", p.stage.name(), p.step, p.loss, p.psnr);
    })?;
    write_checkpoint(&a.out_ckpt, &model, &cfg)?;
    write_text(&report_path(a.curve, &a.out_ckpt), &curve_csv(&report.curve))
}

fn reconstruct(a: Reconstruct) -> Result<()> {
    let (model, _) = read_checkpoint(&a.ckpt)?;
    let ds = Dataset::read(&a.input)?;
    let start = Instant::now();
    let recon = model.reconstruct(&ds.y, &ds.masks, a.phases)?;
    let runtime = start.elapsed().as_secs_f64();
    write_cube(&a.out, &recon)?;
    let name = format!("ctm_{}phase", a.phases.unwrap_or(model.cfg.phases));
    write_report(&name, &recon, ds.truth.as_ref(), runtime, &report_path(a.report, &a.out))
}

fn uncertainty_map(a: UncertaintyMapArgs) -> Result<()> {
    let (model, _) = read_checkpoint(&a.ckpt)?;
    let ds = Dataset::read(&a.input)?;
    let um = model.uncertainty_map(&ds.y, &ds.masks)?;
    let shape = um.dims.shape();
    let binarized = um
        .binarized
        .as_ref()
        .map(|b| b.iter().map(|&v| v as u8).collect())
        .unwrap_or_default();
    sct_write(
        &a.out,
        &[
            SctTensor::f64("beta", &shape, um.beta.clone()),
            SctTensor::f64("sigma2", &shape, um.sigma2.clone()),
            SctTensor::u8("binarized", &shape, binarized),
        ],
    )
}

fn bench_attn(a: BenchAttn) -> Result<()> {
    let grid = if a.grid == "default" {
        default_grid()
    } else {
        read_text(Path::new(&a.grid))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(BenchPoint::parse)
            .collect::<Result<_>>()?
    };
    let out = bench_attention(&grid);
    for notice in &out.skipped {
        eprintln!("skipped {notice}");
    }
    let mismatched = out.rows.iter().filter(|r| r.analytic != r.measured).count();
    write_text(&a.out, &bench_csv(&out.rows))?;
    if mismatched > 0 {
        return Err(Error::Contract(format!("{mismatched} rows where analytic != measured")));
    }
    Ok(())
}

fn eval(a: Eval) -> Result<()> {
    let recon = read_any_cube(&a.recon)?;
    let truth = match Dataset::read(&a.truth) {
        Ok(Dataset { truth: Some(t), .. }) => t,
        _ => read_any_cube(&a.truth)?,
    };
    let report = EvalReport::evaluate("eval", &recon, &truth, 0.0)?;
    let csv = EvalReport::to_csv(std::slice::from_ref(&report));
    match &a.out {
        Some(path) => write_text(path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::ReconstructGaptv(a) => reconstruct_gaptv(a),
        Command::Train(a) => train(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::UncertaintyMap(a) => uncertainty_map(a),
        Command::BenchAttn(a) => bench_attn(a),
        Command::Eval(a) => eval(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
