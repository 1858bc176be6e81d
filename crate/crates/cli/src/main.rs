use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use distfield::config::RunConfig;
use distfield::eval::{emit_report, evaluate_sample, pooled_bins, EvalSettings, SampleReport};
use distfield::io;
use distfield::nn::loss::loss_smo;
use distfield::nn::network::forward_any_size;
use distfield::nn::train::{print_epoch, train_with_progress, write_log};
use distfield::nn::NetworkParams;
use distfield::pca::{pca_fit, PcaModel};
use distfield::raster::{segment, SegmentParams};
use distfield::synth::dataset::{read_dataset, read_manifest};
use distfield::synth::{generate_samples, write_dataset};
use distfield::{rectify, Error};

const EXIT_FAILURE: u8 = 1;
const EXIT_EMPTY: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "distfield", version, about = "Dense fingerprint distortion-field estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset archive.
    Synth(SynthArgs),
    /// Train the field regressor.
    Train(TrainArgs),
    /// Estimate the field of one image and rectify it.
    Rectify(RectifyArgs),
    /// Evaluate a model (and optionally the PCA oracle) on a dataset.
    Eval(EvalArgs),
    /// Fit a PCA basis to the ground-truth fields of a dataset.
    Pca(PcaArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    count: u64,
    #[arg(long, default_value_t = 128)]
    size: usize,
    /// First seed; samples use consecutive seeds.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RectifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Foreground mask; segmented from the image when absent.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Output image path; the field is written next to it with a `.dfld`
    /// extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    pca: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PcaArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: Option<&Path>) -> distfield::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn cmd_synth(a: SynthArgs) -> distfield::Result<u8> {
    let mut cfg = load_config(a.config.as_deref())?;
    cfg.network.input_size = a.size;
    let seeds: Vec<u64> = (a.seed..a.seed + a.count).collect();
    let samples = generate_samples(&seeds, a.size, cfg.network.block_size, &cfg.sampler)?;
    write_dataset(&a.out, &samples)?;
    cfg.echo(&a.out)?;
    println!("wrote {} samples to {}", samples.len(), a.out.display());
    Ok(0)
}

fn cmd_train(a: TrainArgs) -> distfield::Result<u8> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let data: Vec<_> = read_dataset(&a.data)?.into_iter().map(|(_, s)| s).collect();
    let n_val = if data.len() >= 2 {
        ((data.len() as f64 * cfg.validation_fraction).round() as usize).min(data.len() - 1)
    } else {
        0
    };
    let (train_set, val_set) = data.split_at(data.len() - n_val);
    let out_dir = parent_dir(&a.out);
    cfg.echo(&out_dir)?;
    println!("training on {} samples, validating on {}", train_set.len(), val_set.len());
    let outcome = train_with_progress(&cfg.network, train_set, val_set, &cfg.train, |e| {
        let _ = print_epoch(&mut std::io::stdout(), e);
    })?;
    outcome.params.save(&a.out)?;
    write_log(&out_dir.join("train_log.csv"), &outcome.log)?;
    match outcome.best_epoch {
        Some(e) => println!("saved epoch {e} parameters to {}", a.out.display()),
        None => println!("saved initial parameters to {}", a.out.display()),
    }
    Ok(0)
}

fn cmd_rectify(a: RectifyArgs) -> distfield::Result<u8> {
    let params = NetworkParams::load(&a.model)?;
    let image = io::read_gray(&a.image)?;
    let mask = match &a.mask {
        Some(p) => io::read_mask(p)?,
        None => segment(&image, SegmentParams::default())?,
    };
    let field = forward_any_size(&params, &image, &mask)?;
    let (out, _) = rectify(&image, &mask, &field)?;
    io::write_gray(&a.out, &out)?;
    io::write_dfld(&a.out.with_extension("dfld"), &field)?;
    match loss_smo(&field) {
        Ok(s) => println!("smoothness {s:.6}"),
        Err(_) => println!("smoothness n/a"),
    }
    Ok(0)
}

fn cmd_eval(a: EvalArgs) -> distfield::Result<u8> {
    let cfg = load_config(a.config.as_deref())?;
    let params = NetworkParams::load(&a.model)?;
    let pca = match &a.pca {
        Some(p) => {
            let m = PcaModel::load(p)?;
            Some(m.truncated(a.k.unwrap_or(cfg.pca_k)))
        }
        None => None,
    };
    let settings = EvalSettings {
        edges: cfg.bin_edges.clone(),
        ncc_erosion: cfg.ncc_erosion,
        wrong_min_norm: cfg.wrong_min_norm,
    };
    let seeds: Vec<u64> = read_manifest(&a.data)?.into_iter().map(|e| e.seed).collect();
    let results: Vec<(u64, distfield::Result<SampleReport>)> = seeds
        .par_iter()
        .map(|&seed| {
            let r = distfield::synth::dataset::read_sample(&a.data, seed)
                .and_then(|s| evaluate_sample(&params, &s, seed, pca.as_ref(), &settings));
            (seed, r)
        })
        .collect();
    let mut reports = Vec::new();
    let mut flagged = false;
    for (seed, r) in results {
        match r {
            Ok(rep) => {
                if rep.empty_overlap {
                    eprintln!("sample {seed}: empty overlap");
                    flagged = true;
                }
                reports.push(rep);
            }
            Err(Error::EmptyMask) => {
                eprintln!("sample {seed}: empty mask");
                flagged = true;
            }
            Err(e) => return Err(e),
        }
    }
    emit_report(&reports, &a.out)?;
    cfg.echo(&a.out)?;
    if !reports.is_empty() {
        let mean = reports.iter().map(|r| r.reg_root).sum::<f64>() / reports.len() as f64;
        println!("mean root error {mean:.4} px over {} samples", reports.len());
        if let (Some(reg), Some(p)) = pooled_bins(&reports)? {
            for (k, (a, b)) in reg.per_bin_mean().iter().zip(p.per_bin_mean()).enumerate() {
                let f = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
                println!("bin {}  regressor {}  pca {}", k + 1, f(*a), f(b));
            }
        }
    }
    Ok(if flagged { EXIT_EMPTY } else { 0 })
}

fn cmd_pca(a: PcaArgs) -> distfield::Result<u8> {
    let cfg = load_config(a.config.as_deref())?;
    let fields: Vec<_> = read_dataset(&a.data)?.into_iter().map(|(_, s)| s.gt).collect();
    let model = pca_fit(&fields, a.k.unwrap_or(cfg.pca_k))?;
    model.save(&a.out)?;
    println!("fitted {} components on {} fields", model.k(), fields.len());
    Ok(0)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::EmptyMask => EXIT_EMPTY,
        _ => EXIT_FAILURE,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    if let Some(n) = std::env::var("DISTFIELD_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Rectify(a) => cmd_rectify(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Pca(a) => cmd_pca(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
