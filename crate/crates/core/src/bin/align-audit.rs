use std::path::PathBuf;
use std::process::ExitCode;

use align_audit::report::{run_audit, AuditConfig, ModelSelector, SmdScope};
use align_audit::AuditError;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "align-audit", version, about = "Audit how well model feature rankings align with data-level effect sizes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full audit on a CSV file.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Binary outcome column.
    #[arg(long)]
    target: String,
    /// Comma-separated feature columns (default: bundled list for known datasets, else all).
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
    /// tree, mlp or both.
    #[arg(long, default_value = "both")]
    model: String,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Rows used for effect sizes: full or train.
    #[arg(long, default_value = "full")]
    smd_scope: String,
    /// Directory for the output files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated cell values read as missing.
    #[arg(long, value_delimiter = ',', default_value = ",NA", allow_hyphen_values = true)]
    na_tokens: Vec<String>,
    /// Background rows for SHAP.
    #[arg(long)]
    shap_background: Option<usize>,
    /// Feature count up to which SHAP enumerates every coalition.
    #[arg(long)]
    shap_max_exact: Option<usize>,
    /// Coalitions sampled per row beyond that.
    #[arg(long)]
    shap_samples: Option<usize>,
}

fn config(args: RunArgs) -> Result<AuditConfig, AuditError> {
    let mut cfg = AuditConfig::new(args.data, args.target).with_seed(args.seed);
    cfg.features = args.features;
    cfg.model = args.model.parse::<ModelSelector>()?;
    cfg.smd_scope = args.smd_scope.parse::<SmdScope>()?;
    cfg.test_fraction = args.test_fraction;
    cfg.out_dir = args.out;
    cfg.missing_tokens = args.na_tokens;
    if let Some(v) = args.shap_background {
        cfg.shap.background_size = v;
    }
    if let Some(v) = args.shap_max_exact {
        cfg.shap.max_exact_features = v;
    }
    if let Some(v) = args.shap_samples {
        cfg.shap.sample_budget = v;
    }
    Ok(cfg)
}

fn configure_threads() -> Result<(), AuditError> {
    let Ok(raw) = std::env::var("ALIGN_AUDIT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| AuditError::Config(format!("ALIGN_AUDIT_THREADS must be a positive integer, got `{raw}`")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| AuditError::Config(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn run(args: RunArgs) -> Result<(), AuditError> {
    configure_threads()?;
    let cfg = config(args)?;
    let outcome = run_audit(&cfg)?;
    let r = &outcome.report;
    let fmt = |rho: Option<Option<f64>>| match rho {
        Some(Some(v)) => format!("{v:.3}"),
        Some(None) => "undefined".to_string(),
        None => "-".to_string(),
    };
    println!("dataset: {}", r.dataset);
    if let Some(a) = r.accuracies.tree {
        println!("tree accuracy: train {:.3}, test {:.3}", a.train, a.test);
    }
    if let Some(a) = r.accuracies.mlp {
        println!("mlp accuracy: train {:.3}, test {:.3}", a.train, a.test);
    }
    println!("rho(smd, tree): {}", fmt(r.rho.smd_tree));
    println!("rho(smd, shap): {}", fmt(r.rho.smd_shap));
    for p in &outcome.written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Run(args) => match run(args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("align-audit: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
    }
}
