use std::path::PathBuf;

use clap::Parser;

/// Run a two-species McKean–Vlasov experiment described by a JSON spec.
#[derive(Debug, Parser)]
#[command(name = "twomv", version)]
struct Args {
    /// Experiment spec (JSON).
    config: PathBuf,
    /// Output directory; overrides `out` in the config file.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Print the resolved plan and exit without computing or writing.
    #[arg(long)]
    dry_run: bool,
    /// Progress messages on stderr (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

fn main() {
    let args = Args::parse();
    let code = twomv_cli::main_with(&args.config, args.out.as_deref(), args.dry_run, args.verbose);
    std::process::exit(code);
}
