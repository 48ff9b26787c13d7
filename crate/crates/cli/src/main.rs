//! `rave`: verifiable-claim detection from the command line.
//!
//! Every subcommand reads the layered configuration (`--set` flags over
//! `RAVE_*` environment variables over `--config` file over defaults),
//! writes its outputs under `output_dir`, and leaves a
//! `<command>.manifest.json` next to them.
//!
//! Exit status: 0 clean, 1 when some claims ended without a decision,
//! 2 on configuration or other aborting errors.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use rave_core::config::{env_overrides, load_config, RunConfig};
use rave_core::decision::decision_template_digest;
use rave_core::digest::sha256_hex;
use rave_core::evaluation::{
    corpus_stats, export_errors, read_corpus, to_csv, to_svg, write_export, EvalError, EvalReport,
};
use rave_core::gateway::GatewayMode;
use rave_core::model::{serialize_record, Claim, Outcome, Strategy};
use rave_core::pipeline::{
    exit_code, gold_labels, now, outcome_lines, run_sweep, run_tune, Engine, RunManifest, Variant,
};

#[derive(Parser)]
#[command(name = "rave", version, about = "Verifiable-claim detection with retrieved, scored web evidence")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one configuration key. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_key_value)]
    set: Vec<(String, String)>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Input {
    /// Corpus file. Defaults to the configured `corpus`.
    #[arg(long, short, value_name = "FILE")]
    input: Option<PathBuf>,

    /// Classify this text instead of a corpus. Repeatable.
    #[arg(long, value_name = "TEXT", conflicts_with = "input")]
    claim: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Extract entities; one extraction record per claim.
    Extract {
        #[command(flatten)]
        input: Input,
        /// Write here instead of standard output.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Build the deduplicated snippet pool; one pool record per claim.
    Retrieve {
        #[command(flatten)]
        input: Input,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Score every pooled snippet; CSV of claim_id,url,relevance,credibility,combined.
    Score {
        #[command(flatten)]
        input: Input,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Decide each claim under the configured strategy; one decision per line.
    Detect {
        #[command(flatten)]
        input: Input,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Run all six strategies and report accuracy, precision, recall and F1.
    Evaluate {
        #[command(flatten)]
        input: Input,
        /// Also run the score ablations of RAVE.
        #[arg(long)]
        ablations: bool,
        /// Score the decisions files in this directory instead of running the pipeline.
        #[arg(long, value_name = "DIR")]
        decisions: Option<PathBuf>,
    },
    /// Choose alpha on a dev set with bootstrap standard errors.
    TuneAlpha {
        #[command(flatten)]
        input: Input,
    },
    /// Evaluate the configured strategy at each K; CSV plus SVG chart.
    SweepK {
        #[command(flatten)]
        input: Input,
    },
    /// Share of claims per gold label with no extracted entities.
    Stats {
        #[command(flatten)]
        input: Input,
    },
    /// Write the misclassified claims of one variant, FP and FN tagged.
    ExportErrors {
        #[command(flatten)]
        input: Input,
        /// Variant name. Defaults to the configured strategy.
        #[arg(long)]
        variant: Option<String>,
        /// Read this decisions file instead of running the pipeline.
        #[arg(long, value_name = "FILE")]
        decisions: Option<PathBuf>,
    },
    /// Run every strategy, K, alpha and ablation in RECORD mode to fill the fixture cache.
    RecordFixtures {
        #[command(flatten)]
        input: Input,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Extract { .. } => "extract",
            Command::Retrieve { .. } => "retrieve",
            Command::Score { .. } => "score",
            Command::Detect { .. } => "detect",
            Command::Evaluate { .. } => "evaluate",
            Command::TuneAlpha { .. } => "tune-alpha",
            Command::SweepK { .. } => "sweep-k",
            Command::Stats { .. } => "stats",
            Command::ExportErrors { .. } => "export-errors",
            Command::RecordFixtures { .. } => "record-fixtures",
        }
    }

    fn input(&self) -> &Input {
        match self {
            Command::Extract { input, .. }
            | Command::Retrieve { input, .. }
            | Command::Score { input, .. }
            | Command::Detect { input, .. }
            | Command::Evaluate { input, .. }
            | Command::TuneAlpha { input }
            | Command::SweepK { input }
            | Command::Stats { input }
            | Command::ExportErrors { input, .. }
            | Command::RecordFixtures { input } => input,
        }
    }
}

fn parse_key_value(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))?;
    Ok((k.trim().to_string(), v.to_string()))
}

/// File-system friendly form of a variant name: `RAVE[no-scores]` becomes
/// `rave-no-scores`.
fn file_stem(name: &str) -> String {
    let lowered: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c.to_ascii_lowercase() } else { '-' })
        .collect();
    lowered.split('-').filter(|p| !p.is_empty()).collect::<Vec<_>>().join("-")
}

struct Session {
    command: &'static str,
    config: RunConfig,
    engine: Engine,
    manifest: RunManifest,
    /// Claims that failed outside the decision stage.
    extra_failures: u64,
}

impl Session {
    fn output_path(&self, name: &str) -> PathBuf {
        self.config.output_dir.join(name)
    }

    /// Write `contents` under the output directory and record its digest.
    fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.output_path(name);
        write_file(&path, contents)?;
        self.manifest.outputs.push((name.to_string(), sha256_hex(contents)));
        Ok(path)
    }

    /// Write to `path` if given, else to standard output.
    fn emit(&mut self, path: Option<&Path>, contents: &str) -> Result<()> {
        match path {
            Some(p) => {
                write_file(p, contents)?;
                self.manifest.outputs.push((p.display().to_string(), sha256_hex(contents)));
            }
            None => print!("{contents}"),
        }
        Ok(())
    }

    fn finish(mut self, variants: &[Variant]) -> Result<u8> {
        self.manifest.variants = variants.to_vec();
        self.manifest.finish(&self.engine);
        let json = self.manifest.to_json();
        write_file(&self.output_path(&format!("{}.manifest.json", self.command)), &json)?;
        let code = exit_code(&self.manifest.counters).max(i32::from(self.extra_failures > 0));
        Ok(code as u8)
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_claims(input: &Input, config: &RunConfig) -> Result<Vec<Claim>> {
    if !input.claim.is_empty() {
        return input
            .claim
            .iter()
            .enumerate()
            .map(|(i, text)| Claim::new(format!("claim-{}", i + 1), text.as_str()).map_err(|e| anyhow!("--claim: {e}")))
            .collect();
    }
    let path = input
        .input
        .as_ref()
        .or(config.corpus.as_ref())
        .ok_or_else(|| anyhow!("no claims: pass --input, --claim, or set `corpus`"))?;
    let claims = read_corpus(path, config.corpus_format()).with_context(|| format!("reading {}", path.display()))?;
    if claims.is_empty() {
        bail!("{} contains no claims", path.display());
    }
    Ok(claims)
}

fn read_outcomes(path: &Path) -> Result<Vec<Outcome>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| Outcome::from_line(l).map_err(|e| anyhow!("{}:{}: {e}", path.display(), i + 1)))
        .collect()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let env = env_overrides(std::env::vars())?;
    let mut config = load_config(cli.config.as_deref(), &env, &cli.set)?;
    if matches!(cli.command, Command::RecordFixtures { .. }) {
        config.mode = GatewayMode::Record;
    }
    let engine = Engine::from_config(&config, |name| std::env::var(name).ok())?;
    let claims = load_claims(cli.command.input(), &config)?;
    let command = cli.command.name();
    let manifest = RunManifest::new(command, &engine, &config, &[], now());
    let session = Session { command, config, engine, manifest, extra_failures: 0 };
    log::info!("{command}: {} claims, mode {:?}", claims.len(), session.config.mode);

    match cli.command {
        Command::Extract { output, .. } => extract(session, &claims, output.as_deref()),
        Command::Retrieve { output, .. } => retrieve(session, &claims, output.as_deref()),
        Command::Score { output, .. } => score(session, &claims, output.as_deref()),
        Command::Detect { output, .. } => detect(session, &claims, output.as_deref()),
        Command::Evaluate { ablations, decisions, .. } => evaluate(session, &claims, ablations, decisions.as_deref()),
        Command::TuneAlpha { .. } => tune(session, &claims),
        Command::SweepK { .. } => sweep(session, &claims),
        Command::Stats { .. } => stats(session, &claims),
        Command::ExportErrors { variant, decisions, .. } => {
            export(session, &claims, variant.as_deref(), decisions.as_deref())
        }
        Command::RecordFixtures { .. } => record(session, &claims),
    }
}

fn extract(mut s: Session, claims: &[Claim], output: Option<&Path>) -> Result<u8> {
    let results = s.engine.map_claims(claims, |c| s.engine.extract(c));
    let mut out = String::new();
    for (claim, result) in claims.iter().zip(results) {
        match result {
            Ok(Some(r)) => out.push_str(&(serialize_record(&r) + "\n")),
            Ok(None) => {}
            Err(e) => {
                log::error!("claim {}: {e}", claim.id());
                s.extra_failures += 1;
            }
        }
    }
    s.emit(output, &out)?;
    s.finish(&[])
}

fn retrieve(mut s: Session, claims: &[Claim], output: Option<&Path>) -> Result<u8> {
    let results = s.engine.map_claims(claims, |c| s.engine.retrieve(c));
    let mut out = String::new();
    for (claim, result) in claims.iter().zip(results) {
        match result {
            Ok((_, _, pool)) => out.push_str(&(serialize_record(&pool) + "\n")),
            Err(e) => {
                log::error!("claim {}: {e}", claim.id());
                s.extra_failures += 1;
            }
        }
    }
    s.emit(output, &out)?;
    s.finish(&[])
}

fn score(mut s: Session, claims: &[Claim], output: Option<&Path>) -> Result<u8> {
    let alpha = s.config.alpha;
    let results = s.engine.map_claims(claims, |c| s.engine.prepare(c, alpha));
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["claim_id", "url", "relevance", "credibility", "combined"])?;
    for (claim, result) in claims.iter().zip(results) {
        let scored = match result.map_err(|e| e.to_string()).and_then(|ctx| ctx.scored) {
            Ok(p) => p.scored,
            Err(e) => {
                log::error!("claim {}: {e}", claim.id());
                s.extra_failures += 1;
                continue;
            }
        };
        for sn in &scored {
            writer.write_record([
                claim.id(),
                sn.snippet().url(),
                &format!("{:.6}", sn.relevance()),
                &format!("{:.2}", sn.credibility().score()),
                &format!("{:.6}", sn.combined()),
            ])?;
        }
    }
    let text = String::from_utf8(writer.into_inner()?)?;
    s.emit(output, &text)?;
    s.finish(&[])
}

fn configured_variant(config: &RunConfig) -> Variant {
    Variant::new(config.strategy, config.alpha, config.k)
}

fn detect(mut s: Session, claims: &[Claim], output: Option<&Path>) -> Result<u8> {
    let variant = configured_variant(&s.config);
    let outcomes = s.engine.run(claims, std::slice::from_ref(&variant)).remove(0);
    s.emit(output, &outcome_lines(&outcomes))?;
    s.finish(&[variant])
}

const METRICS_HEADER: &str = "variant,strategy,accuracy,precision,recall,f1,scored,unparseable,failed";

fn metrics_row(r: &EvalReport) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    format!(
        "{},{},{:.4},{},{},{:.4},{},{},{}\n",
        r.variant,
        r.strategy,
        r.accuracy,
        opt(r.precision),
        opt(r.recall),
        r.f1,
        r.counts.total(),
        r.unparseable_count,
        r.failed_count
    )
}

fn evaluate(mut s: Session, claims: &[Claim], ablations: bool, from: Option<&Path>) -> Result<u8> {
    let mut variants = Variant::all(s.config.alpha, s.config.k);
    if ablations {
        variants.extend(Variant::ablations(s.config.k));
    }
    let outcomes: Vec<Vec<Outcome>> = match from {
        Some(dir) => variants
            .iter()
            .map(|v| read_outcomes(&dir.join(format!("{}.jsonl", file_stem(&v.name)))))
            .collect::<Result<_>>()?,
        None => {
            let outcomes = s.engine.run(claims, &variants);
            for (v, o) in variants.iter().zip(&outcomes) {
                s.write(&format!("decisions/{}.jsonl", file_stem(&v.name)), &outcome_lines(o))?;
            }
            outcomes
        }
    };
    if from.is_some() {
        let failed = outcomes.iter().flatten().filter(|o| o.decision().is_none()).count();
        s.extra_failures += failed as u64;
    }
    let mut reports = String::new();
    let mut table = format!("{METRICS_HEADER}\n");
    for (v, result) in variants.iter().zip(s.engine.evaluate(claims, &variants, &outcomes, &s.config)) {
        match result {
            Ok(r) => {
                reports.push_str(&(serialize_record(&r) + "\n"));
                table.push_str(&metrics_row(&r));
            }
            Err(e @ EvalError::NothingScored { .. }) => log::error!("{}: {e}", v.name),
            Err(e) => return Err(e.into()),
        }
    }
    s.write("reports.jsonl", &reports)?;
    s.write("metrics.csv", &table)?;
    print!("{table}");
    s.finish(&variants)
}

fn tune(mut s: Session, claims: &[Claim]) -> Result<u8> {
    let result = run_tune(&s.engine, claims, &s.config)?;
    let mut csv = String::from("alpha,point_f1,mean_f1,std_error\n");
    for i in 0..result.grid.len() {
        csv.push_str(&format!(
            "{},{:.4},{:.4},{:.4}\n",
            result.grid[i], result.point_f1[i], result.mean_f1[i], result.std_error[i]
        ));
    }
    s.write("tune_alpha.json", &(serde_json::to_string_pretty(&result)? + "\n"))?;
    s.write("tune_alpha.csv", &csv)?;
    print!("{csv}");
    println!("best alpha {}, chosen alpha {}", result.best_alpha, result.chosen_alpha);
    let variants: Vec<Variant> = result.grid.iter().map(|&a| Variant::new(Strategy::Rave, a, s.config.k)).collect();
    s.finish(&variants)
}

fn sweep(mut s: Session, claims: &[Claim]) -> Result<u8> {
    let strategy = s.config.strategy;
    let result = run_sweep(&s.engine, claims, strategy, &s.config);
    for (k, message) in &result.errors {
        log::error!("k = {k}: {message}");
    }
    if result.rows.is_empty() {
        bail!("no K produced a report");
    }
    let csv = to_csv(&result.rows);
    s.write("sweep_k.csv", &csv)?;
    s.write("sweep_k.svg", &to_svg(&result.rows, &format!("{strategy}: metrics by K")))?;
    print!("{csv}");
    let variants: Vec<Variant> = s.config.k_values.iter().map(|&k| Variant::new(strategy, s.config.alpha, k)).collect();
    s.finish(&variants)
}

fn stats(mut s: Session, claims: &[Claim]) -> Result<u8> {
    let results = s.engine.map_claims(claims, |c| s.engine.extract(c));
    let mut counts = HashMap::new();
    for (claim, result) in claims.iter().zip(results) {
        match result {
            Ok(r) => {
                counts.insert(claim.id().to_string(), r.map_or(0, |r| r.entities.len()));
            }
            Err(e) => {
                log::error!("claim {}: {e}", claim.id());
                s.extra_failures += 1;
            }
        }
    }
    let table = corpus_stats(claims, &counts);
    let json = serde_json::json!({
        "dataset": s.config.dataset,
        "table": table,
        "verifiable_without_entities_fraction": table.verifiable_fraction(),
        "non_verifiable_without_entities_fraction": table.non_verifiable_fraction(),
    });
    s.write("stats.json", &(serde_json::to_string_pretty(&json)? + "\n"))?;
    println!("label,claims,without_entities,fraction");
    println!(
        "VERIFIABLE,{},{},{:.4}",
        table.verifiable,
        table.verifiable_without_entities,
        table.verifiable_fraction()
    );
    println!(
        "NON-VERIFIABLE,{},{},{:.4}",
        table.non_verifiable,
        table.non_verifiable_without_entities,
        table.non_verifiable_fraction()
    );
    s.finish(&[])
}

fn export(mut s: Session, claims: &[Claim], name: Option<&str>, from: Option<&Path>) -> Result<u8> {
    let mut known = Variant::all(s.config.alpha, s.config.k);
    known.extend(Variant::ablations(s.config.k));
    let name = name.unwrap_or(s.config.strategy.as_str());
    let variant = known
        .into_iter()
        .find(|v| v.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| anyhow!("unknown variant {name:?}"))?;
    let outcomes = match from {
        Some(path) => read_outcomes(path)?,
        None => s.engine.run(claims, std::slice::from_ref(&variant)).remove(0),
    };
    let golds = gold_labels(claims);
    if let Some(o) = outcomes.iter().find(|o| !golds.contains_key(o.claim_id())) {
        bail!("no gold label for claim {}", o.claim_id());
    }
    let by_id: HashMap<String, Claim> = claims.iter().map(|c| (c.id().to_string(), c.clone())).collect();
    let (header, records) = export_errors(
        &variant.name,
        variant.strategy,
        &s.config.dataset,
        &outcomes,
        &by_id,
        &decision_template_digest(),
    );
    s.write(&format!("errors_{}.jsonl", file_stem(&variant.name)), &write_export(&header, &records))?;
    println!(
        "{}: {} false positives, {} false negatives",
        variant.name, header.false_positives, header.false_negatives
    );
    s.finish(&[variant])
}

fn record(s: Session, claims: &[Claim]) -> Result<u8> {
    let (alpha, k) = (s.config.alpha, s.config.k);
    let mut variants = Variant::all(alpha, k);
    variants.extend(Variant::ablations(k));
    for &kk in &s.config.k_values {
        variants
            .extend(Variant::all(alpha, kk).into_iter().map(|v| v.clone().with_name(format!("{}[k={kk}]", v.name))));
    }
    for &a in &s.config.alpha_grid {
        variants.push(Variant::new(Strategy::Rave, a, k).with_name(format!("RAVE[alpha={a}]")));
    }
    let mut seen = std::collections::HashSet::new();
    variants.retain(|v| seen.insert((v.strategy, v.alpha.to_bits(), v.k, v.hide_scores)));
    s.engine.run(claims, &variants);
    let entries = s.engine.gateway().cache().map_or(0, |c| c.len());
    println!("{} variants over {} claims; cache holds {entries} responses", variants.len(), claims.len());
    s.finish(&variants)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems() {
        assert_eq!(file_stem("RAVE[no-scores]"), "rave-no-scores");
        assert_eq!(file_stem("TEXT_ONLY"), "text-only");
        assert_eq!(file_stem("RAVE[alpha=0.3]"), "rave-alpha-0.3");
    }

    #[test]
    fn key_values() {
        assert_eq!(parse_key_value("alpha=0.5").unwrap(), ("alpha".into(), "0.5".into()));
        assert_eq!(parse_key_value("k_values=1,3").unwrap(), ("k_values".into(), "1,3".into()));
        assert!(parse_key_value("alpha").is_err());
    }
}
