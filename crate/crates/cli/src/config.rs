//! Command-line flags and the fully resolved run configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Parser;
use glstyle_core::{AggregationScheme, InitMode, LossWeights, OptimConfig, SemanticAttach};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug, Default)]
#[command(name = "glstyle", version, about = "Style transfer with fused multi-layer feature pyramids")]
pub struct Args {
    /// Content photograph (PNG or JPEG).
    #[arg(long)]
    pub content: Option<PathBuf>,
    /// Style photograph (PNG or JPEG).
    #[arg(long)]
    pub style: Option<PathBuf>,
    /// Region map for the content image; colours name regions.
    #[arg(long, requires = "style_sem")]
    pub content_sem: Option<PathBuf>,
    /// Region map for the style image, same palette as the content map.
    #[arg(long, requires = "content_sem")]
    pub style_sem: Option<PathBuf>,
    /// Result PNG; the loss trace, config echo and snapshots are written next
    /// to it. With --benchmark, the CSV report (stdout if omitted).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Converted VGG19 weights (safetensors).
    #[arg(long, env = "GLSTYLE_WEIGHTS")]
    pub weights_archive: Option<PathBuf>,
    /// Start from a config echo written by an earlier run; other flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Content weight [default: 10]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Local (patch) style weight [default: 100]
    #[arg(long)]
    pub beta: Option<f64>,
    /// Scale of the semantic channels [default: 10]
    #[arg(long)]
    pub beta1: Option<f64>,
    /// Global (Gram) style weight [default: 0.1]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Total-variation weight [default: 1]
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Aggregation scheme: a-h, or layer lists such as "1,2,3" or "3+4" [default: g]
    #[arg(long)]
    pub scheme: Option<String>,
    /// content | style | noise [default: content]
    #[arg(long)]
    pub init: Option<InitMode>,
    /// Maximum L-BFGS iterations [default: 500]
    #[arg(long)]
    pub iters: Option<usize>,
    /// Seed for noise initialisation [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write an intermediate image every N iterations, 0 disables [default: 0]
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    /// per-layer | once [default: per-layer]
    #[arg(long)]
    pub sem_attach: Option<SemanticAttach>,
    /// Recompute patch matches every K evaluations [default: 1]
    #[arg(long)]
    pub match_every: Option<usize>,

    /// Time one objective evaluation per scheme instead of running a transfer.
    #[arg(long)]
    pub benchmark: bool,
    #[arg(long, default_value_t = 512, requires = "benchmark")]
    pub bench_height: usize,
    #[arg(long, default_value_t = 352, requires = "benchmark")]
    pub bench_width: usize,
    /// Semantic channels of the synthetic region maps.
    #[arg(long, default_value_t = 5, requires = "benchmark")]
    pub bench_sem: usize,
    /// Timed evaluations per scheme.
    #[arg(long, default_value_t = 20, requires = "benchmark")]
    pub bench_iters: usize,
    /// Scheme to time; repeat for several [default: a through h]
    #[arg(long = "bench-scheme", requires = "benchmark")]
    pub bench_schemes: Vec<String>,
}

/// Everything a transfer run depends on, with all defaults expanded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub content: PathBuf,
    pub style: PathBuf,
    pub content_sem: Option<PathBuf>,
    pub style_sem: Option<PathBuf>,
    pub output: PathBuf,
    pub weights_archive: PathBuf,
    pub weights: LossWeights,
    pub scheme: String,
    pub sem_attach: SemanticAttach,
    pub match_every: usize,
    pub optimizer: OptimConfig,
}

impl RunConfig {
    pub fn resolve(args: &Args) -> Result<Self> {
        let base = match &args.config {
            Some(p) => Some(Self::load(p)?),
            None => None,
        };
        let pick = |flag: &Option<PathBuf>, from: Option<&PathBuf>, what: &str| -> Result<PathBuf> {
            flag.clone().or_else(|| from.cloned()).with_context(|| format!("missing --{what}"))
        };
        let content = pick(&args.content, base.as_ref().map(|b| &b.content), "content")?;
        let style = pick(&args.style, base.as_ref().map(|b| &b.style), "style")?;
        let output = pick(&args.output, base.as_ref().map(|b| &b.output), "output")?;
        let weights_archive = args
            .weights_archive
            .clone()
            .or_else(|| base.as_ref().map(|b| b.weights_archive.clone()))
            .context("no weights archive: pass --weights-archive or set GLSTYLE_WEIGHTS")?;
        let (content_sem, style_sem) = match (&args.content_sem, &args.style_sem) {
            (Some(c), Some(s)) => (Some(c.clone()), Some(s.clone())),
            _ => base.as_ref().map(|b| (b.content_sem.clone(), b.style_sem.clone())).unwrap_or_default(),
        };

        let mut weights = base.as_ref().map(|b| b.weights).unwrap_or_default();
        for (slot, flag) in [
            (&mut weights.alpha, args.alpha),
            (&mut weights.beta, args.beta),
            (&mut weights.beta1, args.beta1),
            (&mut weights.gamma, args.gamma),
            (&mut weights.sigma, args.sigma),
        ] {
            if let Some(v) = flag {
                *slot = v;
            }
        }
        let mut optimizer = base.as_ref().map(|b| b.optimizer.clone()).unwrap_or_default();
        optimizer.max_iters = args.iters.unwrap_or(optimizer.max_iters);
        optimizer.seed = args.seed.unwrap_or(optimizer.seed);
        optimizer.init = args.init.unwrap_or(optimizer.init);
        optimizer.snapshot_every = args.snapshot_every.unwrap_or(optimizer.snapshot_every);

        let cfg = Self {
            content,
            style,
            content_sem,
            style_sem,
            output,
            weights_archive,
            weights,
            scheme: args
                .scheme
                .clone()
                .or_else(|| base.as_ref().map(|b| b.scheme.clone()))
                .unwrap_or_else(|| "g".into()),
            sem_attach: args.sem_attach.or(base.as_ref().map(|b| b.sem_attach)).unwrap_or_default(),
            match_every: args.match_every.or(base.as_ref().map(|b| b.match_every)).unwrap_or(1),
            optimizer,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let inputs = [Some(&self.content), Some(&self.style), self.content_sem.as_ref(), self.style_sem.as_ref()];
        for p in inputs.into_iter().flatten().chain([&self.weights_archive]) {
            if !p.exists() {
                bail!("{} does not exist", p.display());
            }
        }
        if self.content_sem.is_some() != self.style_sem.is_some() {
            bail!("--content-sem and --style-sem must be given together");
        }
        if self.match_every == 0 {
            bail!("--match-every must be at least 1");
        }
        self.weights.validate()?;
        self.optimizer.validate()?;
        self.scheme()?;
        Ok(())
    }

    pub fn scheme(&self) -> Result<AggregationScheme> {
        Ok(AggregationScheme::parse(&self.scheme)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// `<output stem>.<suffix>` in the output's directory.
    pub fn sibling(&self, suffix: &str) -> PathBuf {
        let stem = self.output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
        self.output.with_file_name(format!("{stem}.{suffix}"))
    }

    pub fn loss_csv_path(&self) -> PathBuf {
        self.sibling("loss.csv")
    }

    pub fn config_echo_path(&self) -> PathBuf {
        self.sibling("config.json")
    }

    pub fn snapshot_path(&self, iteration: usize) -> PathBuf {
        self.sibling(&format!("iter{iteration:05}.png"))
    }
}
