//! The transfer run and the scheme benchmark.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use glstyle_core::benchmark::{run_benchmark, to_csv};
use glstyle_core::transfer::{run, TransferInputs};
use glstyle_core::{load_weights, scheme_catalog, AggregationScheme, BackboneWeights, FeatureMap, LossReport, TransferSettings};
use log::{info, warn};

use crate::config::{Args, RunConfig};
use crate::ingest::{load_image, load_semantic_pair, pad_photo, save_png};

pub const LOSS_CSV_HEADER: &str = "iter,L,L_C,L_L,L_G,L_TV,seconds";

#[derive(Debug)]
pub struct RunSummary {
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub snapshots: usize,
}

/// Loads everything named by `cfg`, optimises, and writes the result image,
/// the loss trace, the config echo and any snapshots.
pub fn run_transfer(cfg: &RunConfig) -> Result<RunSummary> {
    std::fs::write(cfg.config_echo_path(), cfg.to_json()).with_context(|| format!("writing {}", cfg.config_echo_path().display()))?;
    let net = load_weights(&cfg.weights_archive)?;

    let raw_content = load_image(&cfg.content)?;
    let content = pad_photo(&raw_content)?;
    let style = pad_photo(&load_image(&cfg.style)?)?;
    if content.shape() != raw_content.shape() {
        info!(
            "content resized {}x{} -> {}x{}",
            raw_content.height(),
            raw_content.width(),
            content.height(),
            content.width()
        );
    }
    let sems = match (&cfg.content_sem, &cfg.style_sem) {
        (Some(c), Some(s)) => {
            let (cs, ss, palette) = load_semantic_pair(c, s, &content, &style)?;
            info!("{} semantic regions", palette.len());
            Some((cs, ss))
        }
        _ => None,
    };
    let inputs = TransferInputs {
        content: &content,
        style: &style,
        content_sem: sems.as_ref().map(|s| &s.0),
        style_sem: sems.as_ref().map(|s| &s.1),
    };
    let settings = TransferSettings {
        scheme: cfg.scheme()?,
        weights: cfg.weights,
        attach: cfg.sem_attach,
        match_every: cfg.match_every,
    };

    let csv_path = cfg.loss_csv_path();
    let mut csv = BufWriter::new(File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?);
    writeln!(csv, "{LOSS_CSV_HEADER}")?;
    let (h, w, _) = content.shape();
    let every = cfg.optimizer.snapshot_every;
    let mut snapshots = 0;
    let outcome = run(&net, &inputs, &settings, &cfg.optimizer, |it, report: &LossReport| {
        let row = format!("{},{}", report.csv_row(it.iteration), it.seconds);
        writeln!(csv, "{row}").and_then(|_| csv.flush()).map_err(io_err)?;
        info!("iter {:>4}  L {:.6e}  ({:.2}s)", it.iteration, it.loss, it.seconds);
        if every > 0 && it.iteration > 0 && it.iteration % every == 0 {
            let img = FeatureMap::from_vec(h, w, 3, it.x.to_vec())?;
            save_png(&img, &cfg.snapshot_path(it.iteration)).map_err(|e| glstyle_core::Error::Config(format!("{e:#}")))?;
            snapshots += 1;
        }
        Ok(())
    })?;
    save_png(&outcome.state.x, &cfg.output)?;
    let trace = &outcome.state.trace;
    let summary = RunSummary {
        iterations: outcome.state.iterations,
        initial_loss: trace[0],
        final_loss: *trace.last().expect("trace holds the start"),
        snapshots,
    };
    info!(
        "{} iterations ({:?}), L {:.6e} -> {:.6e}",
        summary.iterations, outcome.state.termination, summary.initial_loss, summary.final_loss
    );
    Ok(summary)
}

fn io_err(e: std::io::Error) -> glstyle_core::Error {
    glstyle_core::Error::Config(format!("writing loss trace: {e}"))
}

/// Times each requested scheme and writes the CSV report to `--output` or stdout.
pub fn run_benchmark_cli(args: &Args) -> Result<()> {
    let net = match &args.weights_archive {
        Some(p) => load_weights(p)?,
        None => {
            warn!("no weights archive; timing seeded VGG19-shaped weights");
            BackboneWeights::random_vgg19(0)
        }
    };
    let catalog = scheme_catalog();
    let names: Vec<String> = if args.bench_schemes.is_empty() {
        catalog.keys().cloned().collect()
    } else {
        args.bench_schemes.clone()
    };
    let schemes = names.iter().map(|n| AggregationScheme::parse(n)).collect::<glstyle_core::Result<Vec<_>>>()?;
    if args.bench_iters == 0 {
        bail!("--bench-iters must be at least 1");
    }
    let rows = run_benchmark(&net, args.bench_height, args.bench_width, args.bench_sem, &schemes, args.bench_iters)?;
    let csv = to_csv(&rows);
    match &args.output {
        Some(p) => write_file(p, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
