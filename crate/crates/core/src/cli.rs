//! Command-line front end. The binary only parses arguments and maps errors
//! to exit codes; every command lives here so it can be driven from tests.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::cluster_eval::evaluate;
use crate::data::{
    generate_mask, generate_paired_mask, load_dataset, read_labels, read_mask, read_matrix_csv, save_dataset,
    synth_dataset, write_mask, write_matrix_csv, MaskMatrix, Scaler, SynthConfig,
};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::rng::{derive_seed, streams};
use crate::training::{run_pipeline, EffectiveConfig, RunFiles, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "recformer", version, about = "Incomplete multi-view clustering with a cross-view transformer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a missing-view mask for a dataset directory.
    Simulate(SimulateArgs),
    /// Train both stages, cluster, and write a run directory.
    Train(TrainArgs),
    /// Score predictions against labels.
    Eval(EvalArgs),
    /// Export one artifact of a run directory as CSV.
    Export(ExportArgs),
    /// Grid over graph weight and neighbor count.
    Sweep(SweepArgs),
    /// Generate a planted-cluster dataset directory.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Fraction of rows removed from every view.
    #[arg(long, conflicts_with = "paired_rate", required_unless_present = "paired_rate")]
    pub rate: Option<f64>,
    /// Fraction of samples that keep both views (two-view data only).
    #[arg(long, alias = "paired_rate")]
    pub paired_rate: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Hyperparameter overrides. Names match the flat keys of the config file.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, alias = "k_neighbors")]
    pub k_neighbors: Option<usize>,
    #[arg(long)]
    pub e1: Option<usize>,
    #[arg(long)]
    pub e2: Option<usize>,
    #[arg(long, alias = "batch_size")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, alias = "kmeans_restarts")]
    pub kmeans_restarts: Option<usize>,
    #[arg(long, alias = "reinit_stage2")]
    pub reinit_stage2: Option<bool>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long, alias = "d_e")]
    pub d_e: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long, alias = "mlp_hidden")]
    pub mlp_hidden: Option<usize>,
    #[arg(long)]
    pub residual: Option<bool>,
    #[arg(long, alias = "ln_eps")]
    pub ln_eps: Option<f64>,
    /// Only checked against the data; widths always come from the dataset.
    #[arg(skip)]
    pub dims: Option<Vec<usize>>,
}

impl Overrides {
    fn or(self, base: Overrides) -> Overrides {
        Overrides {
            lr: self.lr.or(base.lr),
            beta: self.beta.or(base.beta),
            k_neighbors: self.k_neighbors.or(base.k_neighbors),
            e1: self.e1.or(base.e1),
            e2: self.e2.or(base.e2),
            batch_size: self.batch_size.or(base.batch_size),
            seed: self.seed.or(base.seed),
            kmeans_restarts: self.kmeans_restarts.or(base.kmeans_restarts),
            reinit_stage2: self.reinit_stage2.or(base.reinit_stage2),
            clusters: self.clusters.or(base.clusters),
            d_e: self.d_e.or(base.d_e),
            heads: self.heads.or(base.heads),
            layers: self.layers.or(base.layers),
            mlp_hidden: self.mlp_hidden.or(base.mlp_hidden),
            residual: self.residual.or(base.residual),
            ln_eps: self.ln_eps.or(base.ln_eps),
            dims: self.dims.or(base.dims),
        }
    }

    /// Defaults, then `self`, for a dataset with view widths `dims`.
    pub fn resolve(&self, dims: Vec<usize>) -> Result<EffectiveConfig> {
        if let Some(d) = &self.dims {
            if *d != dims {
                return Err(Error::Config(format!("config dims {d:?} do not match dataset dims {dims:?}")));
            }
        }
        let mut model = ModelConfig::new(dims);
        let mut train = TrainConfig::default();
        macro_rules! set {
            ($dst:ident . $f:ident) => {
                if let Some(v) = self.$f.clone() {
                    $dst.$f = v;
                }
            };
        }
        set!(train.lr);
        set!(train.beta);
        set!(train.k_neighbors);
        set!(train.e1);
        set!(train.e2);
        set!(train.batch_size);
        set!(train.seed);
        set!(train.kmeans_restarts);
        set!(train.reinit_stage2);
        set!(model.d_e);
        set!(model.heads);
        set!(model.layers);
        set!(model.mlp_hidden);
        set!(model.residual);
        set!(model.ln_eps);
        if self.clusters.is_some() {
            train.clusters = self.clusters;
        }
        train.validate()?;
        model.validate()?;
        Ok(EffectiveConfig { model, train })
    }
}

/// Reads a flat JSON config. A `null` value leaves the default in place.
pub fn read_config_file(path: &Path) -> Result<Overrides> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Artifact {
    Recovered,
    Embeddings,
    Graph,
    Losses,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, value_enum)]
    pub what: Artifact,
    /// Output directory; defaults to `<run>/export`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "beta", value_delimiter = ',', required = true)]
    pub betas: Vec<f64>,
    #[arg(long = "k", value_delimiter = ',', required = true)]
    pub ks: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: SweepOverrides,
}

/// [`Overrides`] minus the two grid axes, which sweep takes as lists.
#[derive(Debug, Clone, Default, Args)]
pub struct SweepOverrides {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub e1: Option<usize>,
    #[arg(long)]
    pub e2: Option<usize>,
    #[arg(long, alias = "batch_size")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, alias = "kmeans_restarts")]
    pub kmeans_restarts: Option<usize>,
    #[arg(long, alias = "reinit_stage2")]
    pub reinit_stage2: Option<bool>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long, alias = "d_e")]
    pub d_e: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long, alias = "mlp_hidden")]
    pub mlp_hidden: Option<usize>,
    #[arg(long)]
    pub residual: Option<bool>,
    #[arg(long, alias = "ln_eps")]
    pub ln_eps: Option<f64>,
}

impl From<SweepOverrides> for Overrides {
    fn from(o: SweepOverrides) -> Self {
        Overrides {
            lr: o.lr,
            e1: o.e1,
            e2: o.e2,
            batch_size: o.batch_size,
            seed: o.seed,
            kmeans_restarts: o.kmeans_restarts,
            reinit_stage2: o.reinit_stage2,
            clusters: o.clusters,
            d_e: o.d_e,
            heads: o.heads,
            layers: o.layers,
            mlp_hidden: o.mlp_hidden,
            residual: o.residual,
            ln_eps: o.ln_eps,
            ..Overrides::default()
        }
    }
}

/// Drops `beta` and `k_neighbors`.
impl From<Overrides> for SweepOverrides {
    fn from(o: Overrides) -> Self {
        SweepOverrides {
            lr: o.lr,
            e1: o.e1,
            e2: o.e2,
            batch_size: o.batch_size,
            seed: o.seed,
            kmeans_restarts: o.kmeans_restarts,
            reinit_stage2: o.reinit_stage2,
            clusters: o.clusters,
            d_e: o.d_e,
            heads: o.heads,
            layers: o.layers,
            mlp_hidden: o.mlp_hidden,
            residual: o.residual,
            ln_eps: o.ln_eps,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 90)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, value_delimiter = ',', default_value = "20,30")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a).map(|s| print!("{s}")),
        Command::Train(a) => cmd_train(&a).map(|s| print!("{s}")),
        Command::Eval(a) => cmd_eval(&a).map(|s| println!("{s}")),
        Command::Export(a) => cmd_export(&a).map(|paths| {
            for p in paths {
                println!("wrote {}", p.display());
            }
        }),
        Command::Sweep(a) => cmd_sweep(&a).map(|s| print!("{s}")),
        Command::Synth(a) => cmd_synth(&a).map(|s| print!("{s}")),
    }
}

/// Writes the mask and returns the per-view summary.
pub fn cmd_simulate(a: &SimulateArgs) -> Result<String> {
    let ds = load_dataset(&a.data)?;
    let mask = match (a.rate, a.paired_rate) {
        (Some(r), None) => generate_mask(ds.n(), ds.m(), r, a.seed)?,
        (None, Some(p)) => generate_paired_mask(ds.n(), ds.m(), p, a.seed)?,
        _ => return Err(Error::Config("give exactly one of --rate and --paired-rate".into())),
    };
    write_mask(&a.out, &mask)?;
    let mut s = format!("mask {} x {} -> {}\n", mask.n(), mask.m(), a.out.display());
    for v in 0..mask.m() {
        writeln!(s, "view {}: {} missing", v + 1, mask.missing_in_view(v)).unwrap();
    }
    Ok(s)
}

fn effective(config: Option<&Path>, overrides: &Overrides, dims: Vec<usize>) -> Result<EffectiveConfig> {
    let file = config.map(read_config_file).transpose()?.unwrap_or_default();
    overrides.clone().or(file).resolve(dims)
}

fn train_into(data: &Path, mask: &MaskMatrix, cfg: &EffectiveConfig, out: &Path) -> Result<String> {
    let ds = load_dataset(data)?;
    let run = run_pipeline(&ds, mask, &cfg.model, &cfg.train)?;
    run.write(out)?;
    let mut s = format!("run written to {}\n", out.display());
    match run.metrics {
        Some(m) => writeln!(s, "acc {:.4}  nmi {:.4}  purity {:.4}", m.acc, m.nmi, m.purity).unwrap(),
        None => writeln!(s, "no labels: metrics omitted").unwrap(),
    }
    Ok(s)
}

pub fn cmd_train(a: &TrainArgs) -> Result<String> {
    let ds = load_dataset(&a.data)?;
    let mask = read_mask(&a.mask)?;
    let cfg = effective(a.config.as_deref(), &a.overrides, ds.dims())?;
    log::info!("effective config: {}", serde_json::to_string(&cfg).unwrap_or_default());
    train_into(&a.data, &mask, &cfg, &a.out)
}

/// Metrics as a JSON object.
pub fn cmd_eval(a: &EvalArgs) -> Result<String> {
    let pred = read_labels(&a.pred)?;
    let truth = read_labels(&a.labels)?;
    let m = evaluate(&pred, &truth)?;
    Ok(serde_json::to_string(&m).expect("metrics serialize"))
}

pub fn cmd_export(a: &ExportArgs) -> Result<Vec<PathBuf>> {
    let files = RunFiles::new(&a.run);
    let out = a.out.clone().unwrap_or_else(|| a.run.join("export"));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let copy = |src: PathBuf| -> Result<Vec<PathBuf>> {
        let dst = out.join(src.file_name().expect("run file name"));
        std::fs::copy(&src, &dst).map_err(|e| Error::io(&src, e))?;
        Ok(vec![dst])
    };
    match a.what {
        Artifact::Embeddings => copy(files.embeddings()),
        Artifact::Graph => copy(files.graph()),
        Artifact::Losses => copy(files.losses()),
        Artifact::Recovered => {
            let scaler_path = files.scaler();
            let text = std::fs::read_to_string(&scaler_path).map_err(|e| Error::io(&scaler_path, e))?;
            let scaler: Scaler = serde_json::from_str(&text).map_err(|e| Error::Json {
                path: scaler_path.clone(),
                source: e,
            })?;
            let mut written = Vec::new();
            for (v, range) in scaler.views.iter().enumerate() {
                let x = read_matrix_csv(&files.recovered(v), Some(range.min.len()))?;
                let dst = out.join(format!("recovered_view_{}.csv", v + 1));
                write_matrix_csv(&dst, &range.inverse(&x))?;
                written.push(dst);
            }
            Ok(written)
        }
    }
}

/// Runs every (beta, k) cell in order. A failing cell is recorded in the
/// summary and the sweep moves on.
pub fn cmd_sweep(a: &SweepArgs) -> Result<String> {
    let ds = load_dataset(&a.data)?;
    let mask = read_mask(&a.mask)?;
    let base = effective(a.config.as_deref(), &a.overrides.clone().into(), ds.dims())?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut summary = String::from("beta,k,seed,acc,nmi,purity,status\n");
    let mut cell = 0u64;
    for &beta in &a.betas {
        for &k in &a.ks {
            let seed = sweep_cell_seed(base.train.seed, cell);
            cell += 1;
            let mut cfg = base.clone();
            cfg.train.beta = beta;
            cfg.train.k_neighbors = k;
            cfg.train.seed = seed;
            let dir = a.out.join(format!("beta_{beta}_k_{k}"));
            let result = cfg
                .train
                .validate()
                .and_then(|_| run_pipeline(&ds, &mask, &cfg.model, &cfg.train))
                .and_then(|run| run.write(&dir).map(|_| run));
            match result {
                Ok(run) => match run.metrics {
                    Some(m) => writeln!(summary, "{beta},{k},{seed},{},{},{},ok", m.acc, m.nmi, m.purity),
                    None => writeln!(summary, "{beta},{k},{seed},,,,ok"),
                },
                Err(e) => {
                    log::error!("cell beta={beta} k={k}: {e}");
                    writeln!(summary, "{beta},{k},{seed},,,,\"{}\"", e.to_string().replace('"', "'"))
                }
            }
            .unwrap();
        }
    }
    let path = a.out.join("summary.csv");
    std::fs::write(&path, &summary).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

/// Seed of the `cell`-th grid cell (row-major over beta, then k).
pub fn sweep_cell_seed(master: u64, cell: u64) -> u64 {
    derive_seed(master, streams::SWEEP_BASE + cell)
}

pub fn cmd_synth(a: &SynthArgs) -> Result<String> {
    let ds = synth_dataset(&SynthConfig {
        n: a.n,
        classes: a.classes,
        dims: a.dims.clone(),
        noise: a.noise,
        seed: a.seed,
    })?;
    save_dataset(&ds, &a.out)?;
    Ok(format!(
        "dataset n = {}, views {:?}, {} classes -> {}\n",
        ds.n(),
        ds.dims(),
        a.classes,
        a.out.display()
    ))
}
