use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use coalfed::bounds::{
    effective_union, precision_bound, recall_bound, sharing_benefit, CouponCollectorParams, PartnerDataStats,
};
use coalfed::policy::{generate_policies, serialize_policy, Context, GuidancePackage, PolicySet};
use coalfed::scenario::{self, Scenario};
use coalfed::{Error, Result};

#[derive(Parser)]
#[command(name = "coalfed", version, about = "Coalition federated-learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the scenario's `out_dir`, then `./out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Precision/recall bounds for one training set, or a partner stats table.
    Bounds {
        #[arg(long, required_unless_present = "stats")]
        q: Option<u64>,
        #[arg(long, required_unless_present = "stats")]
        nu: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        c0: f64,
        #[arg(long, default_value_t = 1.0)]
        c1: f64,
        /// TOML file with `[[partners]]` entries (partner_id, q, nu) and an
        /// optional `dedup_count`.
        #[arg(long, conflicts_with_all = ["q", "nu"])]
        stats: Option<PathBuf>,
    },
    /// Generate or check policies for a context.
    Policies {
        #[command(subcommand)]
        action: PoliciesCommand,
    },
}

#[derive(Subcommand)]
enum PoliciesCommand {
    /// Instantiate the guidance templates for a context.
    Generate {
        #[arg(long)]
        context: PathBuf,
        #[arg(long)]
        guidance: Option<PathBuf>,
        /// Write here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse a policy file and, given a context, compare it with the
    /// generated set.
    Check {
        #[arg(long)]
        policies: PathBuf,
        #[arg(long)]
        context: Option<PathBuf>,
        #[arg(long, requires = "context")]
        guidance: Option<PathBuf>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StatsFile {
    #[serde(default)]
    c0: Option<f64>,
    #[serde(default)]
    c1: Option<f64>,
    #[serde(default)]
    dedup_count: Option<u64>,
    partners: Vec<PartnerDataStats>,
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn cmd_run(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let scenario = Scenario::load(path)?.resolved(seed)?;
    let dir = out
        .or_else(|| scenario.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let summary = scenario::run(&scenario, &dir)?;
    let mut stdout = std::io::stdout().lock();
    for m in &summary.metrics {
        writeln!(stdout, "{:<12} {:<8} {}", m.model, m.metric, m.value)?;
    }
    writeln!(stdout, "artifacts written to {}", dir.display())?;
    Ok(())
}

fn cmd_bounds(q: Option<u64>, nu: Option<f64>, c0: f64, c1: f64, stats: Option<PathBuf>) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    let Some(path) = stats else {
        let (q, nu) = (q.expect("clap enforces --q"), nu.expect("clap enforces --nu"));
        let params = CouponCollectorParams::new(c0, c1, 1, 1)?;
        writeln!(stdout, "q\tnu\tprecision\trecall")?;
        writeln!(
            stdout,
            "{q}\t{nu}\t{}\t{}",
            precision_bound(&params, q, nu)?,
            recall_bound(&params, q, nu)?
        )?;
        return Ok(());
    };
    let file: StatsFile = read_toml(&path)?;
    let params = CouponCollectorParams::new(file.c0.unwrap_or(c0), file.c1.unwrap_or(c1), 1, 1)?;
    writeln!(stdout, "partner\tq\tnu\tprecision\trecall")?;
    for p in &file.partners {
        writeln!(
            stdout,
            "{}\t{}\t{}\t{}\t{}",
            p.partner_id,
            p.q,
            p.nu,
            precision_bound(&params, p.q, p.nu)?,
            recall_bound(&params, p.q, p.nu)?
        )?;
    }
    if let Some(dedup) = file.dedup_count {
        writeln!(stdout)?;
        writeln!(stdout, "reference\tk\tnu_agg\tsharing_beneficial\tmargin")?;
        for p in &file.partners {
            let u = effective_union(&file.partners, dedup, &p.partner_id)?;
            let b = sharing_benefit(&u, p);
            writeln!(stdout, "{}\t{}\t{}\t{}\t{}", p.partner_id, u.k, u.nu_agg, b.beneficial, b.margin)?;
        }
    }
    Ok(())
}

fn guidance_from(path: Option<&Path>) -> Result<GuidancePackage> {
    path.map_or_else(|| Ok(GuidancePackage::default()), read_toml)
}

fn cmd_policies_generate(context: &Path, guidance: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let ctx: Context = read_toml(context)?;
    let set = generate_policies(&guidance_from(guidance)?, &ctx)?;
    match out {
        Some(p) => fs::write(p, set.to_text())?,
        None => std::io::stdout().lock().write_all(set.to_text().as_bytes())?,
    }
    Ok(())
}

/// `Ok(false)` when the file parses but does not match the context.
fn cmd_policies_check(policies: &Path, context: Option<&Path>, guidance: Option<&Path>) -> Result<bool> {
    let text = fs::read_to_string(policies)?;
    let set = PolicySet::parse(&text)?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "parsed {} policies", set.len())?;
    let mut ok = true;
    for (i, p) in set.policies.iter().enumerate() {
        if let Err(e) = p.validate() {
            writeln!(stdout, "policy {}: {e}", i + 1)?;
            ok = false;
        }
    }
    if PolicySet::parse(&set.to_text())? != set {
        writeln!(stdout, "serialization does not round-trip")?;
        ok = false;
    }
    if let Some(ctx_path) = context {
        let ctx: Context = read_toml(ctx_path)?;
        let expected = generate_policies(&guidance_from(guidance)?, &ctx)?;
        let have: BTreeSet<String> = set.policies.iter().map(serialize_policy).collect();
        let want: BTreeSet<String> = expected.policies.iter().map(serialize_policy).collect();
        for missing in want.difference(&have) {
            writeln!(stdout, "missing: {missing}")?;
            ok = false;
        }
        for extra in have.difference(&want) {
            writeln!(stdout, "unexpected: {extra}")?;
            ok = false;
        }
    }
    writeln!(stdout, "{}", if ok { "ok" } else { "mismatch" })?;
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { scenario, seed, out } => cmd_run(&scenario, seed, out).map(|()| true),
        Command::Bounds { q, nu, c0, c1, stats } => cmd_bounds(q, nu, c0, c1, stats).map(|()| true),
        Command::Policies { action } => match action {
            PoliciesCommand::Generate { context, guidance, out } => {
                cmd_policies_generate(&context, guidance.as_deref(), out.as_deref()).map(|()| true)
            }
            PoliciesCommand::Check {
                policies,
                context,
                guidance,
            } => cmd_policies_check(&policies, context.as_deref(), guidance.as_deref()),
        },
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("coalfed: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
