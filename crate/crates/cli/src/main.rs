use anyhow::Result;
use clap::Parser;
use glstyle_cli::{run_benchmark_cli, run_transfer, Args, RunConfig};

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    if args.benchmark {
        return run_benchmark_cli(&args);
    }
    let cfg = RunConfig::resolve(&args)?;
    let summary = run_transfer(&cfg)?;
    println!(
        "wrote {} ({} iterations, loss {:.6e} -> {:.6e})",
        cfg.output.display(),
        summary.iterations,
        summary.initial_loss,
        summary.final_loss
    );
    Ok(())
}
