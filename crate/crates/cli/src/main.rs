//! `bear`: command-line front end for snapshot building, change analysis,
//! explanation, synthetic corpora and collector-subsetting sweeps.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bear_core::{analyze_changes, build_triple, render_facts_text, ElemSource, EventSpec, SnapshotTriple};
use bear_llm::{Gateway, ProviderConfig};
use bear_pipeline::feed::{generate_feed, FeedConfig};
use bear_pipeline::harness::{self, Selection};
use bear_pipeline::synth::{self, SynthConfig, TRUTH_FILE};
use bear_pipeline::{
    explain, explain_partial, generate_corpus, render_report, run_sweep, LabeledEvent, RunConfig,
    SyntheticEvent,
};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "bear", version, about = "BGP event analysis and explanation toolkit")]
struct Cli {
    /// JSON configuration file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build history, before and after snapshots for one event.
    Build {
        /// Event spec JSON: {"prefix", "start", "end"?, "name"?}.
        #[arg(long)]
        event: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        elems: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute path-change facts for a snapshot directory.
    Analyze {
        #[arg(long)]
        snapshots: PathBuf,
        /// Facts JSON destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also print the rendered change description.
        #[arg(long)]
        text: bool,
    },
    /// Produce an anomaly report (JSON plus markdown) for one event.
    Explain {
        #[arg(long)]
        snapshots: PathBuf,
        /// Comma-separated collectors visible to the reasoner.
        #[arg(long, value_delimiter = ',')]
        collectors: Option<Vec<String>>,
        /// Self-consistency runs.
        #[arg(long)]
        n: Option<usize>,
        #[command(flatten)]
        provider: ProviderArg,
        #[arg(long)]
        token_limit: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Report JSON path; `report.md` is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a labeled synthetic corpus from elem files.
    Synth {
        #[arg(long, default_value_t = 34)]
        count: usize,
        /// Cycle event types evenly.
        #[arg(long)]
        balance: bool,
        #[arg(long, num_args = 1.., required = true)]
        elems: Vec<PathBuf>,
        #[command(flatten)]
        provider: ProviderArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relabel ASNs and shift timestamps of an event directory.
    Anonymize {
        #[arg(long)]
        event: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the collector-subsetting experiment over a corpus.
    Sweep {
        /// Directory of synthetic event directories.
        #[arg(long)]
        events: PathBuf,
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        /// Number of seeds, 0..N.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        n: Option<usize>,
        #[command(flatten)]
        provider: ProviderArg,
        #[arg(long)]
        workers: Option<usize>,
        /// Aggregated CSV destination.
        #[arg(long)]
        out: PathBuf,
        /// Per-event JSON rows; defaults to `<out>` with a `.jsonl` extension.
        #[arg(long)]
        rows: Option<PathBuf>,
    },
    /// Per-event size statistics for a corpus.
    Stats {
        #[arg(long)]
        events: PathBuf,
        #[arg(long, default_value_t = 128_000)]
        token_limit: u64,
    },
    /// Write a synthetic elem feed.
    Feed {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        collectors: Option<usize>,
        #[arg(long)]
        prefixes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ProviderArg {
    /// `perfect-mock`, `noisy-mock:<rate>[:<seed>]`, `remote-http`,
    /// `cassette:<path>` or `record:<path>`.
    #[arg(long)]
    provider: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct Config {
    #[serde(flatten)]
    run: RunConfig,
    synth: SynthConfig,
    feed: FeedConfig,
}

impl Config {
    fn load(path: Option<&Path>) -> Result<Config> {
        let Some(path) = path else { return Ok(Config::default()) };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    fn gateway(&mut self, arg: &ProviderArg) -> Result<Gateway> {
        if let Some(short) = &arg.provider {
            self.run.provider = ProviderConfig::parse_short(short)?;
        }
        Ok(Gateway::from_config(&self.run.provider)?)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Event directories under `dir` that carry ground truth, in name order.
fn read_corpus(dir: &Path) -> Result<Vec<SyntheticEvent>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(TRUTH_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no event directories with {TRUTH_FILE} under {}", dir.display());
    }
    dirs.iter()
        .map(|d| SyntheticEvent::read_dir(d).with_context(|| format!("reading {}", d.display())))
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Build { event, elems, out } => {
            let text = fs::read_to_string(&event).with_context(|| format!("reading {}", event.display()))?;
            let spec: EventSpec = serde_json::from_str(&text).context("parsing event spec")?;
            let (source, ingest) = ElemSource::from_files(&elems)?;
            let (triple, replay) = build_triple(&source, &spec)?;
            triple.write_dir(&out)?;
            log::info!(
                "{} records read ({} AS_SET, {} peer mismatch rejected); {} announcements, {} withdrawals replayed",
                ingest.records,
                ingest.rejected_as_set,
                ingest.rejected_peer_mismatch,
                replay.announcements,
                replay.withdrawals
            );
        }
        Command::Analyze { snapshots, out, text } => {
            let triple = SnapshotTriple::read_dir(&snapshots)?;
            let facts = analyze_changes(&triple)?;
            let stdout = io::stdout();
            let mut stdout = stdout.lock();
            match out {
                Some(path) => write_json(&path, &facts)?,
                None => writeln!(stdout, "{}", serde_json::to_string_pretty(&facts)?)?,
            }
            if text {
                write!(stdout, "{}", render_facts_text(&facts))?;
            }
        }
        Command::Explain { snapshots, collectors, n, provider, token_limit, seed, out } => {
            let gw = cfg.gateway(&provider)?;
            let mut ec = cfg.run.explain.clone();
            if let Some(n) = n {
                ec.consistency.n_runs = n;
            }
            if token_limit.is_some() {
                ec.token_limit = token_limit;
            }
            if let Some(seed) = seed {
                ec.seed = seed;
            }
            let triple = SnapshotTriple::read_dir(&snapshots)?;
            let outcome = match collectors {
                Some(names) => {
                    let wanted = Selection::Explicit(names.into_iter().collect());
                    let selected = harness::select_collectors(&triple, &wanted, 0)?;
                    let subset = harness::subset_collectors(&triple, &selected);
                    explain_partial(&subset, &selected, &gw, &ec)?
                }
                None => explain(&triple, &gw, &ec)?,
            };
            write_json(&out, &outcome.report)?;
            let md = out.with_file_name("report.md");
            fs::write(&md, render_report(&outcome.report))
                .with_context(|| format!("writing {}", md.display()))?;
            let u = outcome.usage;
            log::info!("{} calls, {} input tokens, {} output tokens", u.calls, u.input_tokens, u.output_tokens);
        }
        Command::Synth { count, balance, elems, provider, seed, out } => {
            let gw = cfg.gateway(&provider)?;
            let (source, _) = ElemSource::from_files(&elems)?;
            let mut failed = 0;
            for (i, result) in generate_corpus(&source, &gw, count, balance, seed, &cfg.synth).into_iter().enumerate() {
                match result {
                    Ok(event) => event.write_dir(&out.join(&event.id))?,
                    Err(e) => {
                        failed += 1;
                        log::error!("event {}: {e}", i + 1);
                    }
                }
            }
            if failed > 0 {
                bail!("{failed} of {count} events failed to generate");
            }
        }
        Command::Anonymize { event, seed, out } => {
            if event.join(TRUTH_FILE).is_file() {
                let (anon, _) = synth::anonymize(&SyntheticEvent::read_dir(&event)?, seed);
                anon.write_dir(&out)?;
            } else {
                let (anon, _) = synth::anonymize_triple(&SnapshotTriple::read_dir(&event)?, seed);
                anon.write_dir(&out)?;
            }
        }
        Command::Sweep { events, fractions, seeds, n, provider, workers, out, rows } => {
            let gw = cfg.gateway(&provider)?;
            let mut rc = cfg.run.clone();
            if let Some(f) = fractions {
                rc.fractions = f;
            }
            if let Some(s) = seeds {
                rc.seeds = (0..s).collect();
            }
            if let Some(n) = n {
                rc.explain.consistency.n_runs = n;
            }
            if let Some(w) = workers {
                rc.workers = w;
            }
            let corpus: Vec<LabeledEvent> = read_corpus(&events)?.iter().map(LabeledEvent::from).collect();
            let results = run_sweep(&corpus, &gw, &rc)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            let csv = fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            harness::write_csv(&harness::aggregate_by_fraction(&results), csv)?;
            let rows = rows.unwrap_or_else(|| out.with_extension("jsonl"));
            let file = fs::File::create(&rows).with_context(|| format!("creating {}", rows.display()))?;
            let mut writer = BufWriter::new(file);
            harness::write_rows(&results, &mut writer)?;
            writer.flush()?;
        }
        Command::Stats { events, token_limit } => {
            let corpus = read_corpus(&events)?;
            let named: Vec<(String, &SnapshotTriple)> = corpus.iter().map(|e| (e.id.clone(), &e.triple)).collect();
            let stdout = io::stdout();
            let mut stdout = stdout.lock();
            for s in harness::corpus_stats(&named, token_limit, &cfg.run.explain.estimator) {
                writeln!(stdout, "{}", serde_json::to_string(&s)?)?;
            }
        }
        Command::Feed { seed, collectors, prefixes, out } => {
            let mut fc = cfg.feed.clone();
            fc.seed = seed.unwrap_or(fc.seed);
            fc.collectors = collectors.unwrap_or(fc.collectors);
            fc.prefixes = prefixes.unwrap_or(fc.prefixes);
            let source = generate_feed(&fc);
            let file = fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut writer = BufWriter::new(file);
            bear_core::elem::write_elems(&mut writer, source.elems())?;
            writer.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
