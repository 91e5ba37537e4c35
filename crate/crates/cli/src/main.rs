//! `wificue`: ingest scans, assess access points, run the API service,
//! probe a connected network, and manage the vendor table and feedback.

use std::fs;
use std::io::{self, BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, NaiveDateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use wificue_core::assessment::{assess_scan, render_assessment, AssessmentInputs, AssessmentItem};
use wificue_core::canonical::parse_timestamp;
use wificue_core::db::{load_deny_list_file, load_registry_file, Database};
use wificue_core::ingest::{parse_airodump_csv, parse_canonical, ParseMode, ParseOutcome, ScanBatch};
use wificue_core::model::Bssid;
use wificue_core::oui::{DenyList, OuiRegistry};
use wificue_core::probe::{
    probe_flags, run_probe, PortalExpectation, ProbeTransports, DEFAULT_PORTAL_URL, PROBE_WARNING,
};
use wificue_core::recommender::{
    Decision, FeedbackCategory, FeedbackReport, RiskPosture, ScoringConfig,
};
use wificue_core::wigle::{wigle_report, WigleClient, WigleSource, DEFAULT_BASE_URL};
use wificue_net::{post_json, NoRedirectFetcher, SystemResolver, TlsSpkiConnector, UreqTransport};
use wificue_service::{load_baselines, AppState, Baselines, Clock, ServiceOptions};

const TIME_HELP: &str = "Timestamps without a UTC offset (airodump CSV, --now, --observed-at) are read as UTC.";

#[derive(Debug, Parser)]
#[command(name = "wificue", version, about = "Assess public Wi-Fi access points before connecting.", after_help = TIME_HELP)]
struct Cli {
    /// Database directory (history, scans, feedback, probes, vendor table).
    #[arg(long, env = "WIFICUE_DB", default_value = "wificue-db", global = true)]
    db: PathBuf,

    /// manuf vendor table; defaults to the one installed by `oui update`.
    #[arg(long, global = true)]
    oui: Option<PathBuf>,

    /// Deny-listed OUI prefixes, one per line; defaults to `<db>/deny-list`.
    #[arg(long, global = true)]
    deny_list: Option<PathBuf>,

    /// Scoring configuration (TOML); defaults to the built-in table.
    #[arg(long, global = true)]
    scoring: Option<PathBuf>,

    /// Pin the clock for reproducible runs.
    #[arg(long, global = true, hide = true, value_parser = parse_when)]
    now: Option<DateTime<Utc>>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a scan file and append it to the history store.
    Ingest {
        #[arg(long, value_enum, default_value_t = Format::Canonical)]
        format: Format,
        /// Scanner id recorded for airodump rows.
        #[arg(long, default_value = "airodump")]
        scanner_id: String,
        file: PathBuf,
    },
    /// Assess a scan file locally, without writing to the store.
    Assess {
        scan_file: PathBuf,
        #[arg(long, default_value = "balanced")]
        posture: RiskPosture,
        #[arg(long, value_enum, default_value_t = Output::Table)]
        output: Output,
        #[arg(long, value_enum, default_value_t = Format::Canonical)]
        format: Format,
        #[arg(long, default_value = "airodump")]
        scanner_id: String,
        #[command(flatten)]
        wigle: WigleArgs,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        /// Directory holding dns.json and tls.json.
        #[arg(long)]
        baselines: Option<PathBuf>,
        #[command(flatten)]
        wigle: WigleArgs,
    },
    /// Check DNS, TLS pins and captive-portal behaviour of the network you are connected to.
    Probe {
        #[arg(long)]
        bssid: Bssid,
        #[arg(long)]
        baselines: PathBuf,
        #[arg(long, value_enum, default_value_t = Output::Table)]
        output: Output,
        #[arg(long, default_value = DEFAULT_PORTAL_URL)]
        portal_url: String,
        /// Per-check timeout in seconds.
        #[arg(long, default_value_t = 10)]
        timeout: u64,
        /// Also submit the result to a running service at this base URL.
        #[arg(long)]
        server: Option<String>,
        #[arg(long, env = "WIFICUE_API_TOKEN", hide_env_values = true)]
        api_token: Option<String>,
        /// Required: acknowledge that probing means connecting first.
        #[arg(long)]
        i_understand_the_risk: bool,
    },
    /// Manage the vendor (OUI) table.
    Oui {
        #[command(subcommand)]
        command: OuiCommand,
    },
    /// Record community feedback.
    Feedback {
        #[command(subcommand)]
        command: FeedbackCommand,
    },
    /// Query WIGLE for a BSSID.
    Wigle {
        #[command(subcommand)]
        command: WigleCommand,
    },
}

#[derive(Debug, Subcommand)]
enum OuiCommand {
    /// Validate a manuf file and install it into the database directory.
    Update {
        #[arg(long)]
        file: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum FeedbackCommand {
    Add {
        #[arg(long)]
        bssid: Bssid,
        #[arg(long)]
        category: FeedbackCategory,
        #[arg(long, default_value = "")]
        ssid: String,
        #[arg(long, default_value = "cli")]
        reporter_id: String,
        /// Defaults to now.
        #[arg(long, value_parser = parse_when)]
        observed_at: Option<DateTime<Utc>>,
    },
}

#[derive(Debug, Subcommand)]
enum WigleCommand {
    Lookup {
        #[arg(long)]
        bssid: Bssid,
        /// Serve lookups from `<bssid-with-dashes>.json` files instead of the API.
        #[arg(long)]
        offline_fixtures: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct WigleArgs {
    /// Serve WIGLE lookups from `<bssid-with-dashes>.json` files instead of the API.
    #[arg(long)]
    wigle_fixtures: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Canonical,
    Airodump,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Output {
    Table,
    Json,
}

/// A problem with how the command was invoked; exits with status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    Usage(message.into()).into()
}

fn parse_when(text: &str) -> Result<DateTime<Utc>, String> {
    parse_timestamp(text)
        .or_else(|| {
            NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S")
                .ok()
                .map(|t| t.and_utc())
        })
        .ok_or_else(|| format!("invalid timestamp {text:?}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

struct Setup {
    now: DateTime<Utc>,
    registry: Option<OuiRegistry>,
    deny_list: DenyList,
    scoring: ScoringConfig,
}

fn load_context(cli: &Cli) -> Result<Setup> {
    let now = cli.now.unwrap_or_else(Utc::now);
    let installed = cli.db.join(wificue_core::db::MANUF_FILE);
    let registry = match &cli.oui {
        Some(path) => Some(load_registry_file(path, now).with_context(|| format!("loading {}", path.display()))?),
        None if installed.is_file() => Some(
            load_registry_file(&installed, now).with_context(|| format!("loading {}", installed.display()))?,
        ),
        None => None,
    };
    let default_deny = cli.db.join(wificue_core::db::DENY_LIST_FILE);
    let deny_list = match &cli.deny_list {
        Some(path) => load_deny_list_file(path).with_context(|| format!("loading {}", path.display()))?,
        None if default_deny.is_file() => load_deny_list_file(&default_deny)
            .with_context(|| format!("loading {}", default_deny.display()))?,
        None => DenyList::default(),
    };
    let scoring = match &cli.scoring {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ScoringConfig::from_toml(&text).with_context(|| format!("loading {}", path.display()))?
        }
        None => ScoringConfig::default(),
    };
    Ok(Setup {
        now,
        registry,
        deny_list,
        scoring,
    })
}

/// Fixture directory if given, else the live API when credentials are in
/// the environment, else none.
fn wigle_client(fixtures: Option<&Path>, db: &Database) -> Result<Option<WigleClient>> {
    let http = Arc::new(UreqTransport::default());
    if let Some(dir) = fixtures {
        if !dir.is_dir() {
            bail!(usage(format!("WIGLE fixture directory {} does not exist", dir.display())));
        }
        let source = WigleSource::Fixture { dir: dir.to_path_buf() };
        return Ok(Some(WigleClient::new(source, http)));
    }
    let name = std::env::var("WIFICUE_WIGLE_API_NAME").unwrap_or_default();
    let token = std::env::var("WIFICUE_WIGLE_API_TOKEN").unwrap_or_default();
    if name.is_empty() || token.is_empty() {
        return Ok(None);
    }
    let base_url = std::env::var("WIFICUE_WIGLE_BASE_URL").unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
    let source = WigleSource::Live {
        api_name: name,
        api_token: token,
        base_url,
    };
    let client = WigleClient::new(source, http).with_cache_file(db.wigle_cache_path())?;
    Ok(Some(client))
}

fn read_scan(path: &Path, format: Format, scanner_id: &str, now: DateTime<Utc>, mode: ParseMode) -> Result<ParseOutcome> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let reader = BufReader::new(file);
    let outcome = match format {
        Format::Canonical => parse_canonical(reader, mode, now),
        Format::Airodump => parse_airodump_csv(reader, mode, scanner_id),
    }
    .with_context(|| format!("parsing {}", path.display()))?;
    Ok(outcome)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let ctx = load_context(&cli)?;
    match &cli.command {
        Command::Ingest {
            format,
            scanner_id,
            file,
        } => ingest(&cli, &ctx, file, *format, scanner_id),
        Command::Assess {
            scan_file,
            posture,
            output,
            format,
            scanner_id,
            wigle,
        } => assess(&cli, ctx, scan_file, *format, scanner_id, *posture, *output, wigle),
        Command::Serve {
            listen,
            baselines,
            wigle,
        } => serve(&cli, ctx, *listen, baselines.as_deref(), wigle),
        Command::Probe {
            bssid,
            baselines,
            output,
            portal_url,
            timeout,
            server,
            api_token,
            i_understand_the_risk,
        } => {
            eprintln!("{PROBE_WARNING}");
            if !i_understand_the_risk {
                bail!(usage("refusing to probe without --i-understand-the-risk"));
            }
            let opts = ProbeOpts {
                bssid: *bssid,
                baselines,
                output: *output,
                portal_url,
                timeout: Duration::from_secs(*timeout),
                server: server.as_deref(),
                api_token: api_token.as_deref(),
            };
            probe(&cli, &ctx, opts)
        }
        Command::Oui {
            command: OuiCommand::Update { file },
        } => oui_update(&cli, &ctx, file),
        Command::Feedback {
            command:
                FeedbackCommand::Add {
                    bssid,
                    category,
                    ssid,
                    reporter_id,
                    observed_at,
                },
        } => {
            let report = FeedbackReport {
                bssid: *bssid,
                ssid: ssid.clone(),
                category: *category,
                observed_at: observed_at.unwrap_or(ctx.now),
                reporter_id: reporter_id.clone(),
            };
            if report.observed_at > ctx.now {
                bail!(usage("FUTURE_TIMESTAMP: --observed-at is in the future"));
            }
            let mut db = Database::open(&cli.db)?;
            db.add_feedback(report)?;
            println!("recorded {category} for {bssid}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Wigle {
            command: WigleCommand::Lookup {
                bssid,
                offline_fixtures,
            },
        } => {
            let db = Database::open(&cli.db)?;
            let Some(client) = wigle_client(offline_fixtures.as_deref(), &db)? else {
                bail!(usage(
                    "no WIGLE source: pass --offline-fixtures or set WIFICUE_WIGLE_API_NAME and WIFICUE_WIGLE_API_TOKEN"
                ));
            };
            let report = wigle_report(&client, bssid, db.history().latest_observation(bssid), ctx.now);
            println!("{}", serde_json::to_string_pretty(&report)?);
            if report.status == "WIGLE_UNAVAILABLE" {
                return Ok(ExitCode::from(1));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn ingest(cli: &Cli, ctx: &Setup, file: &Path, format: Format, scanner_id: &str) -> Result<ExitCode> {
    let outcome = read_scan(file, format, scanner_id, ctx.now, ParseMode::Lenient)?;
    for skip in &outcome.skipped {
        eprintln!("skipped: {skip}");
    }
    if outcome.observations.is_empty() && outcome.skipped.is_empty() {
        bail!(usage(format!("{} contains no observations", file.display())));
    }
    let submitted = outcome.observations.len();
    let batch = ScanBatch::from_observations(outcome.observations, ctx.now);
    let mut db = Database::open(&cli.db)?;
    let accepted = db.ingest(&batch)?;
    let skipped = outcome.skipped.len() + (submitted - accepted);
    println!("accepted {accepted} skipped {skipped}");
    if !batch.is_empty() {
        println!("scan_id {}", batch.scan_id);
    }
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn assess(
    cli: &Cli,
    ctx: Setup,
    scan_file: &Path,
    format: Format,
    scanner_id: &str,
    posture: RiskPosture,
    output: Output,
    wigle: &WigleArgs,
) -> Result<ExitCode> {
    let outcome = read_scan(scan_file, format, scanner_id, ctx.now, ParseMode::Strict)?;
    if outcome.observations.is_empty() {
        bail!(usage(format!("{} contains no observations", scan_file.display())));
    }
    let batch = ScanBatch::from_observations(outcome.observations, ctx.now);
    let db = Database::open(&cli.db)?;
    let wigle = wigle_client(wigle.wigle_fixtures.as_deref(), &db)?;
    let probes = db.latest_probes();
    let items = assess_scan(&AssessmentInputs {
        batch: &batch,
        history: db.history(),
        registry: ctx.registry.as_ref(),
        deny_list: &ctx.deny_list,
        wigle: wigle.as_ref(),
        probes: &probes,
        feedback: db.feedback(),
        posture,
        scoring: &ctx.scoring,
        now: ctx.now,
    });
    let mut stdout = io::stdout().lock();
    match output {
        Output::Json => stdout.write_all(render_assessment(&items).as_bytes())?,
        Output::Table => stdout.write_all(render_table(&items).as_bytes())?,
    }
    stdout.flush()?;
    if items.iter().any(|i| i.verdict.decision == Decision::Avoid) {
        Ok(ExitCode::from(3))
    } else {
        Ok(ExitCode::SUCCESS)
    }
}

const TABLE_FLAG_CODES: usize = 3;

fn render_table(items: &[AssessmentItem]) -> String {
    let mut out = format!("{:<10} {:>6}  {:<32}  {:<17}  {}\n", "VERDICT", "SCORE", "SSID", "BSSID", "FLAGS");
    for item in items {
        let codes: Vec<&str> = item
            .flags
            .iter()
            .take(TABLE_FLAG_CODES)
            .map(|f| f.code.as_str())
            .collect();
        let mut codes = codes.join(",");
        if item.flags.len() > TABLE_FLAG_CODES {
            codes.push_str(",...");
        }
        let ssid = if item.observation.ssid.is_empty() {
            "<hidden>".to_string()
        } else {
            item.observation.ssid.clone()
        };
        out.push_str(&format!(
            "{:<10} {:>6.2}  {:<32}  {:<17}  {}\n",
            item.verdict.decision.as_str(),
            item.verdict.score,
            ssid,
            item.observation.bssid,
            codes
        ));
    }
    out
}

fn serve(cli: &Cli, ctx: Setup, listen: SocketAddr, baselines: Option<&Path>, wigle: &WigleArgs) -> Result<ExitCode> {
    let baselines = match baselines {
        Some(dir) => load_baselines(dir)?,
        None => Baselines::default(),
    };
    let wigle = {
        let db = Database::open(&cli.db)?;
        wigle_client(wigle.wigle_fixtures.as_deref(), &db)?
    };
    let state = AppState::new(ServiceOptions {
        db_dir: cli.db.clone(),
        baselines,
        registry: ctx.registry,
        deny_list: ctx.deny_list,
        wigle,
        scoring: ctx.scoring,
        api_token: std::env::var("WIFICUE_API_TOKEN").ok(),
        clock: cli.now.map(Clock::Fixed).unwrap_or(Clock::System),
    })?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(wificue_service::serve(listen, state, |addr| {
        println!("listening on http://{addr}");
        let _ = io::stdout().flush();
    }))?;
    Ok(ExitCode::SUCCESS)
}

struct ProbeOpts<'a> {
    bssid: Bssid,
    baselines: &'a Path,
    output: Output,
    portal_url: &'a str,
    timeout: Duration,
    server: Option<&'a str>,
    api_token: Option<&'a str>,
}

fn probe(cli: &Cli, ctx: &Setup, opts: ProbeOpts<'_>) -> Result<ExitCode> {
    let baselines = load_baselines(opts.baselines)?;
    if baselines.dns.is_none() && baselines.tls.is_none() {
        log::warn!("no baselines in {}; only the captive-portal check will run", opts.baselines.display());
    }
    let connector = TlsSpkiConnector::new(opts.timeout);
    let fetcher = NoRedirectFetcher::new(opts.timeout);
    let transports = ProbeTransports {
        resolver: &SystemResolver,
        connector: &connector,
        fetcher: &fetcher,
    };
    let portal = PortalExpectation {
        url: opts.portal_url.to_string(),
        ..PortalExpectation::default()
    };
    let result = run_probe(
        opts.bssid,
        ctx.now,
        &transports,
        baselines.dns.as_ref().map(|b| &b.0),
        baselines.tls.as_ref().map(|b| &b.0),
        &portal,
    );
    let flags = probe_flags(&result);

    let mut db = Database::open(&cli.db)?;
    db.record_probe(result.clone())?;
    if let Some(server) = opts.server {
        let url = format!("{}/v1/probes", server.trim_end_matches('/'));
        let body = serde_json::to_string(&result)?;
        let resp = post_json(&url, &body, opts.api_token, opts.timeout)
            .with_context(|| format!("submitting to {url}"))?;
        if !(200..300).contains(&resp.status) {
            bail!("{url} answered HTTP {}: {}", resp.status, resp.body);
        }
    }

    match opts.output {
        Output::Json => {
            let doc = serde_json::json!({"result": result, "flags": flags});
            println!("{}", serde_json::to_string_pretty(&doc)?);
        }
        Output::Table => {
            for check in &result.dns {
                println!("dns    {:<40} {:?}", check.domain, check.verdict);
            }
            for check in &result.tls {
                println!("tls    {:<40} {:?}", format!("{}:{}", check.host, check.port), check.verdict);
            }
            println!("portal {:<40} {:?}", portal.url, result.portal.verdict);
            for flag in &flags {
                println!("flag   {} {}: {}", flag.level.as_str(), flag.code.as_str(), flag.message);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn oui_update(cli: &Cli, ctx: &Setup, file: &Path) -> Result<ExitCode> {
    let registry = load_registry_file(file, ctx.now).with_context(|| format!("loading {}", file.display()))?;
    if registry.is_empty() {
        bail!("{} contains no usable entries", file.display());
    }
    let db = Database::open(&cli.db)?;
    let target = db.manuf_path();
    let staging = target.with_extension("tmp");
    fs::copy(file, &staging).with_context(|| format!("writing {}", staging.display()))?;
    fs::rename(&staging, &target).with_context(|| format!("installing {}", target.display()))?;
    println!(
        "loaded {} entries, source_version {}",
        registry.len(),
        registry.source_version
    );
    Ok(ExitCode::SUCCESS)
}
