use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nc_core::checkpoint::{Checkpoint, DatasetFile, GaussianSpec, RunConfigFile};
use nc_core::evaluation::{
    ablation_suite, grid_protocol, joint_report, joint_sampling_eval, reconstruction_check, reconstruction_report,
    table1_protocol, ConditionalGenerator, EvalOptions, EvalReport,
};
use nc_core::gaussian::{sample_conditional, sample_joint, GaussianParams};
use nc_core::masking::{enumerate_mask_pairs, MaskPair};
use nc_core::numeric::DenseMatrix;
use nc_core::rng::{substream, Stream};
use nc_core::training::{train_with_sink, TrainMode};
use nc_core::{NcError, Result};

#[derive(Debug, Parser)]
#[command(name = "nc-workbench", version, about = "Train and evaluate mask-conditioned generators")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a training set from a multivariate Gaussian.
    GenData(GenDataArgs),
    /// Train a generator and write a checkpoint.
    Train(TrainArgs),
    /// Run an evaluation protocol and write a report.
    Eval(EvalArgs),
    /// Print conditional samples of the requested coordinates.
    Sample(SampleArgs),
    /// Write encoder embeddings for every dataset row.
    Embed(EmbedArgs),
}

#[derive(Debug, Args)]
struct GaussianArgs {
    /// Comma-separated mean vector.
    #[arg(long)]
    mean: Option<String>,
    /// Comma-separated row-major covariance.
    #[arg(long, conflicts_with = "rho")]
    cov: Option<String>,
    /// Correlation of the (1, ρ, ρ²; ρ, 1, 0; ρ², 0, 1) family.
    #[arg(long)]
    rho: Option<f64>,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    gaussian: GaussianArgs,
    /// Run file supplying the Gaussian when no flags are given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset file written by gen-data.
    #[arg(long)]
    data: Option<PathBuf>,
    /// adversarial or moment-matching.
    #[arg(long)]
    mode: Option<String>,
    /// Checkpoint output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON-lines trace output path.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Gradient-penalty coefficient.
    #[arg(long)]
    gp: Option<f64>,
    /// Disable the spectral-norm projection.
    #[arg(long)]
    no_sn: bool,
    /// Score unmasked generator outputs.
    #[arg(long)]
    no_mask_fake_output: bool,
    #[arg(long)]
    d_steps: Option<usize>,
    #[arg(long)]
    log_every: Option<usize>,
    #[command(flatten)]
    gaussian: GaussianArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// table1, ablation, grid, joint or bound.
    #[arg(long)]
    protocol: Option<String>,
    /// Comma-separated evaluation seeds (training seeds for ablation).
    #[arg(long)]
    seeds: Option<String>,
    /// Generator draws per conditioning point.
    #[arg(long)]
    n: Option<usize>,
    /// Draws per side for MMD and energy statistics.
    #[arg(long)]
    stat_n: Option<usize>,
    #[arg(long)]
    points_per_dim: Option<usize>,
    /// Dataset for ablation training and the reconstruction bound.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Training steps per ablation model.
    #[arg(long)]
    steps: Option<usize>,
    /// Noise draws per data row for the reconstruction bound.
    #[arg(long, default_value_t = 10)]
    z_draws: usize,
    /// CSV report path; a JSON copy is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    gaussian: GaussianArgs,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Observed values as `index=value` pairs, 1-based, comma-separated.
    #[arg(long, default_value = "")]
    available: String,
    /// Requested coordinates, 1-based, comma-separated.
    #[arg(long)]
    request: String,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Draw from the exact Gaussian conditional instead of the checkpoint.
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    gaussian: GaussianArgs,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Available mask bits, e.g. 100.
    #[arg(long, requires = "r")]
    a: Option<String>,
    /// Requested mask bits, e.g. 011.
    #[arg(long, requires = "a")]
    r: Option<String>,
    /// Use every valid mask pair instead of one.
    #[arg(long, conflicts_with_all = ["a", "r"])]
    all_masks: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Embed(a) => cmd_embed(a),
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| NcError::Config(format!("cannot parse {t:?} in {what}")))
        })
        .collect()
}

fn load_run_file(path: &Option<PathBuf>) -> Result<RunConfigFile> {
    match path {
        Some(p) => RunConfigFile::load(p),
        None => Ok(RunConfigFile::default()),
    }
}

impl GaussianArgs {
    fn given(&self) -> bool {
        self.mean.is_some() || self.cov.is_some() || self.rho.is_some()
    }

    /// Explicit flags first, then `fallback`.
    fn resolve(&self, fallback: GaussianSpec) -> Result<GaussianSpec> {
        if !self.given() {
            return Ok(fallback);
        }
        let mean = match &self.mean {
            Some(m) => parse_list(m, "--mean")?,
            None => fallback.mean.clone(),
        };
        let spec = match (&self.cov, self.rho) {
            (Some(c), None) => GaussianSpec {
                mean,
                cov: Some(parse_list(c, "--cov")?),
                rho: None,
            },
            (None, Some(rho)) => GaussianSpec {
                mean,
                cov: None,
                rho: Some(rho),
            },
            _ => GaussianSpec { mean, ..fallback },
        };
        spec.to_params()?;
        Ok(spec)
    }
}

fn load_dataset(path: &Path) -> Result<DenseMatrix> {
    DatasetFile::from_json(&std::fs::read_to_string(path)?)?.to_matrix()
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(text.as_bytes())?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let run = load_run_file(&args.config)?;
    let g = args.gaussian.resolve(run.gaussian)?.to_params()?;
    let x = sample_joint(&g, args.n, args.seed)?;
    std::fs::write(&args.out, DatasetFile::from_matrix(&x, args.seed).to_json()?)?;
    eprintln!("wrote {} rows of dimension {} to {}", x.rows(), x.cols(), args.out.display());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let run = load_run_file(&args.config)?;
    let mut cfg = run.train.clone();
    if let Some(m) = &args.mode {
        cfg.mode = m.parse::<TrainMode>()?;
    }
    if let Some(v) = args.steps {
        cfg.steps = v;
    }
    if let Some(v) = args.batch {
        cfg.batch = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.gp {
        cfg.gp_coeff = v;
    }
    if let Some(v) = args.d_steps {
        cfg.d_steps_per_g = v;
    }
    if let Some(v) = args.log_every {
        cfg.log_every = v;
    }
    if args.no_sn {
        cfg.sn_enabled = false;
    }
    if args.no_mask_fake_output {
        cfg.mask_fake_output = false;
    }
    let data_path = args
        .data
        .or(run.io.data_path.clone())
        .ok_or_else(|| NcError::Config("no dataset given (--data or io.data_path)".into()))?;
    let out = args
        .out
        .or(run.io.ckpt_path.clone())
        .ok_or_else(|| NcError::Config("no checkpoint path given (--out or io.ckpt_path)".into()))?;
    let trace_path = args.trace.or(run.io.trace_path.clone());
    let gaussian = if args.gaussian.given() || args.config.is_some() {
        let spec = args.gaussian.resolve(run.gaussian.clone())?;
        Some(spec)
    } else {
        None
    };
    let data = load_dataset(&data_path)?;
    if let Some(spec) = &gaussian {
        if spec.mean.len() != data.cols() {
            return Err(NcError::Config(format!(
                "gaussian has dimension {}, dataset rows have {}",
                spec.mean.len(),
                data.cols()
            )));
        }
    }

    let mut sink = match &trace_path {
        Some(p) => Some(BufWriter::new(File::create(p)?)),
        None => None,
    };
    let outcome = train_with_sink(cfg, &data, sink.as_mut().map(|w| w as &mut dyn Write))?;
    if let Some(mut w) = sink {
        w.flush()?;
    }
    let mut ck = Checkpoint::from_outcome(&outcome);
    ck.gaussian = gaussian;
    ck.save(&out)?;
    match outcome.trace.last() {
        Some(r) => {
            let d = r.d_loss.map(|v| format!("{v:.6}")).unwrap_or_else(|| "n/a".into());
            println!("step {} d_loss {d} g_loss {:.6}", r.step, r.g_loss);
        }
        None => println!("no training steps run"),
    }
    eprintln!("wrote checkpoint to {}", out.display());
    Ok(())
}

fn json_sibling(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let run = load_run_file(&args.config)?;
    let ckpt = match &args.ckpt {
        Some(p) => Some(Checkpoint::load(p)?),
        None => None,
    };
    let protocol = args.protocol.clone().unwrap_or_else(|| run.eval.protocol.clone());
    let seeds: Vec<u64> = match &args.seeds {
        Some(s) => parse_list(s, "--seeds")?,
        None => run.eval.seeds.clone(),
    };
    if seeds.is_empty() {
        return Err(NcError::Config("at least one seed is required".into()));
    }
    let mut opts: EvalOptions = run.eval.options();
    if let Some(n) = args.n {
        opts.n = n;
    }
    if let Some(n) = args.stat_n {
        opts.stat_n = n;
    }
    if let Some(p) = args.points_per_dim {
        opts.grid.points_per_dim = p;
    }
    let snapshot = ckpt
        .as_ref()
        .and_then(|c| c.gaussian.clone())
        .unwrap_or_else(|| run.gaussian.clone());
    let g = args.gaussian.resolve(snapshot)?.to_params()?;
    let need_ckpt = || {
        ckpt.as_ref()
            .map(|c| &c.generator)
            .ok_or_else(|| NcError::Config(format!("protocol {protocol} needs --ckpt")))
    };
    let data_path = args.data.clone().or(run.io.data_path.clone());

    let report = match protocol.as_str() {
        "table1" => {
            let gen = need_ckpt()?;
            let gens: Vec<(u64, &dyn ConditionalGenerator)> =
                seeds.iter().map(|&s| (s, gen as &dyn ConditionalGenerator)).collect();
            table1_protocol(&gens, &g, &opts)?
        }
        "ablation" => {
            let mut base = ckpt.as_ref().map(|c| c.config.clone()).unwrap_or_else(|| run.train.clone());
            base.mode = TrainMode::Adversarial;
            if let Some(s) = args.steps {
                base.steps = s;
            }
            let data = match &data_path {
                Some(p) => load_dataset(p)?,
                None => sample_joint(&g, 10_000, seeds[0])?,
            };
            ablation_suite(&base, &data, &seeds, &g, &opts)?.0
        }
        "grid" => {
            let gen = need_ckpt()?;
            let mut rep = EvalReport::default();
            for &s in &seeds {
                rep.extend(grid_protocol(gen, &g, &opts, s)?.0);
            }
            rep
        }
        "joint" => {
            let gen = need_ckpt()?;
            let mut rep = EvalReport::default();
            for &s in &seeds {
                let e = joint_sampling_eval(gen, &g, opts.n, s)?;
                rep.extend(joint_report(&e, g.dim(), opts.n, s)?);
            }
            rep
        }
        "bound" => {
            let gen = need_ckpt()?;
            let mut rep = EvalReport::default();
            for &s in &seeds {
                let data = match &data_path {
                    Some(p) => load_dataset(p)?,
                    None => sample_joint(&g, opts.n, s)?,
                };
                let rows = reconstruction_check(gen, &g, &data, args.z_draws, s)?;
                rep.extend(reconstruction_report(&rows, data.rows() * args.z_draws, s)?);
            }
            rep
        }
        other => {
            return Err(NcError::Config(format!(
                "unknown protocol {other:?} (expected table1, ablation, grid, joint or bound)"
            )))
        }
    };

    let out = args.out.clone().or(run.io.report_path.clone());
    match &out {
        Some(p) => {
            std::fs::write(p, report.to_csv())?;
            std::fs::write(json_sibling(p), report.to_json()?)?;
            eprintln!("wrote {} report rows to {}", report.rows.len(), p.display());
        }
        None => write_output(None, &report.to_csv())?,
    }
    Ok(())
}

/// Parses `1=2.0,3=1.5` (1-based) and `2,3` into a mask pair and the
/// full-length conditioning vector.
fn parse_query(available: &str, request: &str, d: usize) -> Result<(MaskPair, Vec<f64>)> {
    let mut a = vec![false; d];
    let mut x = vec![0.0; d];
    for item in available.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (idx, val) = item
            .split_once('=')
            .ok_or_else(|| NcError::Config(format!("--available entry {item:?} is not index=value")))?;
        let i: usize = idx
            .trim()
            .parse()
            .map_err(|_| NcError::Config(format!("bad coordinate index {idx:?}")))?;
        if i < 1 || i > d {
            return Err(NcError::Config(format!("coordinate {i} outside 1..={d}")));
        }
        let v: f64 = val
            .trim()
            .parse()
            .map_err(|_| NcError::Config(format!("bad value {val:?}")))?;
        a[i - 1] = true;
        x[i - 1] = v;
    }
    let mut r = vec![false; d];
    for i in parse_list::<usize>(request, "--request")? {
        if i < 1 || i > d {
            return Err(NcError::Config(format!("coordinate {i} outside 1..={d}")));
        }
        if a[i - 1] {
            return Err(NcError::Mask(format!("coordinate {i} is both available and requested")));
        }
        r[i - 1] = true;
    }
    if !r.contains(&true) {
        return Err(NcError::Mask("request at least one coordinate".into()));
    }
    Ok((MaskPair::new(a, r)?, x))
}

fn format_rows(m: &DenseMatrix) -> String {
    let mut s = String::new();
    for row in m.iter_rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", line.join(","));
    }
    s
}

fn cmd_sample(args: SampleArgs) -> Result<()> {
    let run = load_run_file(&args.config)?;
    let ckpt = match &args.ckpt {
        Some(p) => Some(Checkpoint::load(p)?),
        None if args.oracle => None,
        None => return Err(NcError::Config("--ckpt is required unless --oracle is given".into())),
    };
    let snapshot = ckpt
        .as_ref()
        .and_then(|c| c.gaussian.clone())
        .unwrap_or_else(|| run.gaussian.clone());
    let d = match &ckpt {
        Some(c) if !args.oracle => c.generator.d,
        _ => args.gaussian.resolve(snapshot.clone())?.mean.len(),
    };
    let (mask, x) = parse_query(&args.available, &args.request, d)?;
    let samples = if args.n == 0 {
        DenseMatrix::zeros(0, mask.requested_idx().len())
    } else if args.oracle {
        let g: GaussianParams = args.gaussian.resolve(snapshot)?.to_params()?;
        let xa: Vec<f64> = mask.available_idx().iter().map(|&i| x[i]).collect();
        sample_conditional(&g, &mask, &xa, args.n, args.seed)?
    } else {
        let gen = &ckpt.as_ref().expect("checked above").generator;
        let full = gen.sample(&x, &mask, args.n, &mut substream(args.seed, Stream::Eval, 0))?;
        let rows: Vec<usize> = (0..full.rows()).collect();
        full.select(&rows, &mask.requested_idx())
    };
    write_output(args.out.as_deref(), &format_rows(&samples))
}

fn cmd_embed(args: EmbedArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.ckpt)?;
    let gen = &ck.generator;
    let data = load_dataset(&args.data)?;
    if data.rows() > 0 && data.cols() != gen.d {
        return Err(NcError::Config(format!(
            "dataset rows have {} coordinates, checkpoint expects {}",
            data.cols(),
            gen.d
        )));
    }
    let masks = if args.all_masks {
        enumerate_mask_pairs(gen.d)?
    } else {
        match (&args.a, &args.r) {
            (Some(a), Some(r)) => vec![MaskPair::from_bits(a, r)?],
            _ => return Err(NcError::Config("give --a and --r, or --all-masks".into())),
        }
    };
    if let Some(m) = masks.iter().find(|m| m.dim() != gen.d) {
        return Err(NcError::Config(format!("mask {m} does not match dimension {}", gen.d)));
    }
    let width = gen.embedding_dim();
    let mut out = String::from("a,r");
    for k in 0..width {
        let _ = write!(out, ",e{k}");
    }
    out.push('\n');
    for row in data.iter_rows() {
        for m in &masks {
            let e = gen.embed(row, m)?;
            let vals: Vec<String> = e.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{},{},{}", m.a_bits(), m.r_bits(), vals.join(","));
        }
    }
    write_output(args.out.as_deref(), &out)
}
