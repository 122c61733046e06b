//! `castprov` command-line driver.
//!
//! Exit status: 0 when `validate` reports a success outcome (and for every
//! other command that completes), 2 when `validate` reports an exception
//! outcome, 1 on operational errors, 64 on usage errors.

mod config;

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use castprov_core::bmff::{parse_media, serialize_media, MediaObject};
use castprov_core::manifest::{
    generate_seed, parse_hex32, read_key_file, write_key_file, Signer, TrustList,
};
use castprov_core::pipeline::{
    capture_broadcast, flatten_to_monolithic, perturb_audio, produce_canonical_clip, produce_replica, publish_dhs,
    BroadcastConfig, EssenceSource, MediaSource, SyntheticSource,
};
use castprov_core::recovery::{
    build_recovery_url, spawn_server, AssetFetcher, DhsRegistry, HttpRecoveryClient, LocalRecoveryClient,
    RecoveryClient,
};
use castprov_core::validator::{validate_media_object, CanonicalDecision, PlatformPolicy, PolicyAction, ValidationContext};
use castprov_core::watermark::{extract_segments, Vp1Payload};
use config::{parse_resolve, FileConfig, OutputFormat};

const EXIT_EXCEPTION: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "castprov", version, about = "Provenance for watermarked broadcast media")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Optional key = value configuration file.
    #[arg(long, global = true, env = "CASTPROV_CONFIG")]
    config: Option<PathBuf>,
    /// DHS registry directory (records and replicas).
    #[arg(long, global = true, env = "CASTPROV_REGISTRY")]
    registry: Option<PathBuf>,
    /// Trust list file (canonical CBOR).
    #[arg(long, global = true, env = "CASTPROV_TRUST")]
    trust: Option<PathBuf>,
    /// Parent domain of recovery authority hosts.
    #[arg(long, global = true, env = "CASTPROV_BASE_DOMAIN")]
    base_domain: Option<String>,
    /// Send requests for DOMAIN and its subdomains to ADDR over plain HTTP.
    /// Repeatable; any override makes recovery go over HTTP.
    #[arg(long, global = true, value_name = "DOMAIN=ADDR", value_parser = parse_resolve)]
    resolve: Vec<(String, SocketAddr)>,
    /// Structured output format.
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the broadcaster pipeline and publish every DHS to the registry.
    Produce(ProduceArgs),
    /// Serve recovery requests and replicas from the registry.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
    },
    /// Cut a stripped clip out of the published broadcast.
    Capture(CaptureArgs),
    /// List the watermark segments of a media file.
    Extract { file: PathBuf },
    /// Validate an uploaded media file and print the outcome report.
    Validate(ValidateArgs),
    /// Build the canonical clip for an interval-code range.
    ClipCanonical(ClipArgs),
    /// Write a new Ed25519 signing seed and print its public key.
    Keygen {
        #[arg(long)]
        out: PathBuf,
        /// Overwrite an existing key file.
        #[arg(long)]
        force: bool,
    },
    /// Edit the trust list.
    #[command(subcommand)]
    Trust(TrustCommand),
}

#[derive(Args, Debug)]
struct ProduceArgs {
    /// Signing seed file written by `keygen`.
    #[arg(long)]
    key: PathBuf,
    /// Distributor id placed in every manifest.
    #[arg(long)]
    id: String,
    /// Source media file; a synthetic broadcast is generated when absent.
    #[arg(long, conflicts_with = "seed")]
    source: Option<PathBuf>,
    /// Seed of the synthetic broadcast.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Length of the synthetic broadcast in seconds.
    #[arg(long, default_value_t = 90)]
    duration: u64,
    #[arg(long, default_value_t = 1)]
    server_code: u32,
    /// Interval code of the first cell.
    #[arg(long, default_value_t = 1000)]
    start_code: u32,
    /// Cells per DHS.
    #[arg(long, default_value_t = 20)]
    dhs_cells: u32,
    #[arg(long, default_value_t = 1000)]
    fragment_ms: u32,
    #[arg(long, default_value = "broadcast")]
    title: String,
    /// Unix time of media time zero.
    #[arg(long, default_value_t = 1_700_000_000)]
    epoch: i64,
    /// Media time in seconds up to which DHS may be published.
    #[arg(long)]
    live_edge: Option<f64>,
}

#[derive(Args, Debug)]
struct CaptureArgs {
    #[arg(long, default_value_t = 1)]
    server_code: u32,
    /// Broadcast media time in seconds.
    #[arg(long)]
    start: f64,
    #[arg(long)]
    end: f64,
    #[arg(long)]
    out: PathBuf,
    /// Alter this many audio samples (watermark preserved, essence changed).
    #[arg(long, default_value_t = 0)]
    perturb: usize,
    #[arg(long, default_value_t = 11)]
    perturb_seed: u64,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    file: PathBuf,
    /// Action taken once canonical content exists for a failed upload.
    #[arg(long, value_enum, default_value = "attach-side-by-side")]
    policy: PolicyArg,
    /// Whether canonical processing waits for an approval hook.
    #[arg(long, value_enum, default_value = "automatic")]
    decision: DecisionArg,
    /// Answer of the approval hook when re-running after a pending record.
    /// A bare `--approve` means yes.
    #[arg(long, value_name = "yes|no", value_parser = parse_yes_no, num_args = 0..=1, require_equals = true, default_missing_value = "yes")]
    approve: Option<bool>,
    /// Directory to write canonical clips into.
    #[arg(long)]
    canonical_dir: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ClipArgs {
    #[arg(long, default_value_t = 1)]
    server_code: u32,
    #[arg(long)]
    binx: u32,
    #[arg(long)]
    einx: u32,
    /// Clip window in broadcast seconds; whole fragments otherwise.
    #[arg(long, requires = "window_end")]
    window_start: Option<f64>,
    #[arg(long, requires = "window_start")]
    window_end: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Write a proof-free monolithic file instead of the validatable clip.
    #[arg(long)]
    monolithic: bool,
}

#[derive(Subcommand, Debug)]
enum TrustCommand {
    /// Register a distributor (unapproved) with its authority domains.
    Add {
        id: String,
        /// Hex public key.
        #[arg(long, required_unless_present = "key", conflicts_with = "key")]
        public_key: Option<String>,
        /// Signing seed file to take the public key from.
        #[arg(long)]
        key: Option<PathBuf>,
        /// Authority host or parent domain; repeatable.
        #[arg(long = "domain")]
        domains: Vec<String>,
    },
    /// Approve a registered distributor, or withdraw approval.
    Approve {
        id: String,
        #[arg(long)]
        revoke: bool,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum PolicyArg {
    AttachSideBySide,
    OfferChoice,
    AutoCompare,
    Replace,
    ForwardToModeration,
}

impl From<PolicyArg> for PolicyAction {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::AttachSideBySide => PolicyAction::AttachSideBySide,
            PolicyArg::OfferChoice => PolicyAction::OfferChoice,
            PolicyArg::AutoCompare => PolicyAction::AutoCompare,
            PolicyArg::Replace => PolicyAction::Replace,
            PolicyArg::ForwardToModeration => PolicyAction::ForwardToModeration,
        }
    }
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum DecisionArg {
    Automatic,
    RequireApproval,
}

impl From<DecisionArg> for CanonicalDecision {
    fn from(d: DecisionArg) -> Self {
        match d {
            DecisionArg::Automatic => CanonicalDecision::Automatic,
            DecisionArg::RequireApproval => CanonicalDecision::RequireApprovalHook,
        }
    }
}

fn parse_yes_no(s: &str) -> Result<bool, String> {
    match s {
        "yes" | "true" => Ok(true),
        "no" | "false" => Ok(false),
        _ => Err(format!("expected yes or no, got '{s}'")),
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

/// Global settings after merging flags, environment and config file.
struct Settings {
    registry: Option<PathBuf>,
    trust: Option<PathBuf>,
    base_domain: String,
    resolve: Vec<(String, SocketAddr)>,
    format: OutputFormat,
}

impl Settings {
    fn resolve(g: GlobalArgs) -> Result<Self> {
        let file = match &g.config {
            Some(p) => FileConfig::load(p).map_err(|e| UsageError(e.to_string()))?,
            None => FileConfig::default(),
        };
        let mut resolve = g.resolve;
        if resolve.is_empty() {
            resolve = file.resolve;
        }
        Ok(Settings {
            registry: g.registry.or(file.registry),
            trust: g.trust.or(file.trust),
            base_domain: g.base_domain.or(file.base_domain).unwrap_or_else(|| "wm.test".into()).to_ascii_lowercase(),
            resolve,
            format: g.format.or(file.format).unwrap_or_default(),
        })
    }

    fn registry_dir(&self) -> Result<&Path> {
        self.registry.as_deref().ok_or_else(|| UsageError("--registry is required for this command".into()).into())
    }

    fn open_registry(&self) -> Result<DhsRegistry> {
        let dir = self.registry_dir()?;
        DhsRegistry::open(dir).with_context(|| format!("opening registry {}", dir.display()))
    }

    fn trust_path(&self) -> Result<&Path> {
        self.trust.as_deref().ok_or_else(|| UsageError("--trust is required for this command".into()).into())
    }

    fn load_trust(&self) -> Result<TrustList> {
        let p = self.trust_path()?;
        TrustList::load(p).with_context(|| format!("loading trust list {}", p.display()))
    }

    /// HTTP when any resolver override is set or no registry is configured;
    /// otherwise straight from the registry directory.
    fn client(&self) -> Result<Box<dyn Client>> {
        if self.resolve.is_empty() && self.registry.is_some() {
            let reg = self.open_registry()?;
            return Ok(Box::new(LocalRecoveryClient::new(reg.shared(), Some(&self.base_domain))));
        }
        let mut http = HttpRecoveryClient::new()?;
        for (domain, addr) in &self.resolve {
            http = http.with_resolve(domain, *addr);
        }
        Ok(Box::new(http))
    }

    fn emit(&self, value: &impl serde::Serialize, out: Option<&Path>) -> Result<()> {
        let bytes = match self.format {
            OutputFormat::Json => {
                let mut b = serde_json::to_vec_pretty(value)?;
                b.push(b'\n');
                b
            }
            OutputFormat::Cbor => castprov_core::cbor::to_canonical(value)?,
        };
        match out {
            Some(p) => std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display()))?,
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout.write_all(&bytes)?;
                stdout.flush()?;
            }
        }
        Ok(())
    }
}

trait Client: RecoveryClient + AssetFetcher {
    fn recovery(&self) -> &dyn RecoveryClient;
    fn assets(&self) -> &dyn AssetFetcher;
}

impl<T: RecoveryClient + AssetFetcher> Client for T {
    fn recovery(&self) -> &dyn RecoveryClient {
        self
    }
    fn assets(&self) -> &dyn AssetFetcher {
        self
    }
}

fn read_media(path: &Path) -> Result<MediaObject> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_media(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn write_media(path: &Path, obj: &MediaObject) -> Result<()> {
    std::fs::write(path, serialize_media(obj)?).with_context(|| format!("writing {}", path.display()))
}

fn produce(s: &Settings, a: ProduceArgs) -> Result<u8> {
    let seed = read_key_file(&a.key)?;
    let signer = Signer::from_seed(&a.id, &seed);
    let cfg = BroadcastConfig {
        server_code: a.server_code,
        start_interval_code: a.start_code,
        dhs_cell_count: a.dhs_cells,
        fragment_duration_ms: a.fragment_ms,
        distributor_id: a.id.clone(),
        base_domain: s.base_domain.clone(),
        title: a.title,
        epoch: a.epoch,
        ..Default::default()
    };
    let source: Box<dyn EssenceSource> = match &a.source {
        Some(p) => Box::new(MediaSource::from_media(&read_media(p)?)?),
        None => Box::new(SyntheticSource::new(a.seed, a.duration * 1000)),
    };
    let live_edge_ms = a.live_edge.map_or(u64::MAX, |t| (t * 1000.0) as u64);
    let mut registry = s.open_registry()?;
    let mut published = Vec::new();
    let mut pending = Vec::new();
    for dhs in produce_replica(source.as_ref(), &cfg, &signer)? {
        let dhs = dhs?;
        let entry = json!({
            "dhsId": dhs.dhs_id,
            "binx": dhs.binx,
            "einx": dhs.einx,
            "mediaStartMs": dhs.media_start_ms,
            "mediaEndMs": dhs.media_end_ms,
            "replicaLocator": dhs.replica_locator,
        });
        if dhs.media_end_ms > live_edge_ms {
            pending.push(entry);
            continue;
        }
        publish_dhs(&mut registry, &dhs, live_edge_ms)?;
        published.push(entry);
    }
    s.emit(&json!({ "serverCode": cfg.server_code, "published": published, "notYetLive": pending }), None)?;
    Ok(0)
}

fn serve(s: &Settings, listen: SocketAddr) -> Result<u8> {
    let registry = s.open_registry()?;
    let server = spawn_server(registry.shared(), Some(s.base_domain.clone()), listen)?;
    // Scripts read the bound address from this line.
    println!("listening on {}", server.addr());
    std::io::stdout().flush()?;
    server.wait();
    Ok(0)
}

/// The published broadcast of `server_code` as one fragmented object.
fn load_broadcast(registry: &DhsRegistry, server_code: u32) -> Result<MediaObject> {
    let records: Vec<_> = registry.records().filter(|r| r.server_code == server_code).collect();
    let mut whole: Option<MediaObject> = None;
    for (i, r) in records.iter().enumerate() {
        if i > 0 && r.first_interval_code != records[i - 1].last_interval_code + 1 {
            bail!("published DHS for server code {server_code} are not contiguous at {}", r.dhs_id);
        }
        let bytes = registry.asset(&r.dhs_id).ok_or_else(|| anyhow!("replica {} is missing", r.dhs_id))?;
        let replica = parse_media(&bytes).with_context(|| format!("parsing replica {}", r.dhs_id))?;
        match &mut whole {
            Some(w) => w.fragments.extend(replica.fragments),
            None => whole = Some(replica),
        }
    }
    whole.ok_or_else(|| anyhow!("nothing published for server code {server_code}"))
}

fn capture(s: &Settings, a: CaptureArgs) -> Result<u8> {
    if a.end <= a.start {
        return Err(UsageError(format!("--end {} must exceed --start {}", a.end, a.start)).into());
    }
    let broadcast = load_broadcast(&s.open_registry()?, a.server_code)?;
    let mut clip = capture_broadcast(&broadcast, a.start, a.end)?;
    if a.perturb > 0 {
        clip = perturb_audio(&clip, a.perturb, a.perturb_seed);
    }
    write_media(&a.out, &clip)?;
    s.emit(&json!({ "out": a.out, "start": a.start, "end": a.end, "duration": clip.duration(), "perturbed": a.perturb }), None)?;
    Ok(0)
}

fn extract(s: &Settings, file: &Path) -> Result<u8> {
    let obj = read_media(file)?;
    let (_, pcm) = castprov_core::pipeline::audio_pcm(&obj).ok_or_else(|| anyhow!("{} has no audio track", file.display()))?;
    let segments: Vec<Value> = extract_segments(&pcm)
        .iter()
        .map(|seg| {
            let url = Vp1Payload::new(seg.server_code, seg.binx)
                .map(|p| build_recovery_url(p, &s.base_domain, Some(seg.einx)))
                .unwrap_or_default();
            json!({
                "serverCode": seg.server_code,
                "binx": seg.binx,
                "einx": seg.einx,
                "firstCellSample": seg.first_cell_sample,
                "firstCellOffset": seg.first_cell_offset(),
                "recoveryUrl": url,
            })
        })
        .collect();
    s.emit(&json!({ "file": file, "segments": segments }), None)?;
    Ok(0)
}

fn validate(s: &Settings, a: ValidateArgs) -> Result<u8> {
    let obj = read_media(&a.file)?;
    let trust = s.load_trust()?;
    let client = s.client()?;
    let ctx = ValidationContext {
        trust: &trust,
        recovery: client.recovery(),
        assets: client.assets(),
        base_domain: s.base_domain.clone(),
    };
    let mut policy = PlatformPolicy::new(a.policy.into(), a.decision.into());
    if let Some(answer) = a.approve {
        policy = policy.with_approval(answer);
    }
    let v = validate_media_object(&obj, &ctx, &policy);
    if let Some(dir) = &a.canonical_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for clip in &v.canonical {
            write_media(&dir.join(format!("canonical-{}-{}.pmf4", clip.binx, clip.einx)), &clip.media)?;
        }
    }
    s.emit(&v.outcome, a.out.as_deref())?;
    Ok(if v.outcome.is_success() { 0 } else { EXIT_EXCEPTION })
}

fn clip_canonical(s: &Settings, a: ClipArgs) -> Result<u8> {
    if a.einx < a.binx {
        return Err(UsageError(format!("--einx {} precedes --binx {}", a.einx, a.binx)).into());
    }
    let trust = s.load_trust()?;
    let client = s.client()?;
    let url = build_recovery_url(Vp1Payload::new(a.server_code, a.binx)?, &s.base_domain, Some(a.einx));
    let response = client.recovery().recover(&url).with_context(|| format!("recovering {url}"))?;
    let window = a.window_start.zip(a.window_end);
    let clip = produce_canonical_clip(&response, a.binx, a.einx, window, client.assets(), &trust)?;
    let media = if a.monolithic { flatten_to_monolithic(&clip.media)? } else { clip.media.clone() };
    write_media(&a.out, &media)?;
    s.emit(
        &json!({
            "out": a.out,
            "binx": clip.binx,
            "einx": clip.einx,
            "startTime": clip.start_time,
            "endTime": clip.end_time,
            "distributorId": clip.distributor_id,
            "fragments": clip.checks.len(),
            "monolithic": a.monolithic,
        }),
        None,
    )?;
    Ok(0)
}

fn keygen(s: &Settings, out: &Path, force: bool) -> Result<u8> {
    if out.exists() && !force {
        bail!("{} exists; pass --force to overwrite it", out.display());
    }
    let seed = generate_seed();
    write_key_file(out, &seed)?;
    let public = Signer::from_seed("", &seed).public_key();
    s.emit(&json!({ "keyFile": out, "publicKey": hex_string(&public) }), None)?;
    Ok(0)
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn trust(s: &Settings, cmd: TrustCommand) -> Result<u8> {
    let path = s.trust_path()?;
    let mut list = if path.exists() { s.load_trust()? } else { TrustList::new() };
    let id = match cmd {
        TrustCommand::Add { id, public_key, key, domains } => {
            let public = match (public_key, key) {
                (Some(hex), _) => parse_hex32(&hex)?,
                (None, Some(file)) => Signer::from_seed(&id, &read_key_file(&file)?).public_key(),
                (None, None) => unreachable!("clap requires one of --public-key and --key"),
            };
            list.add(&id, public, &domains)?;
            id
        }
        TrustCommand::Approve { id, revoke } => {
            list.set_approved(&id, !revoke)?;
            id
        }
    };
    list.save(path)?;
    let entry = list.get(&id).expect("entry was just written");
    s.emit(
        &json!({
            "distributorId": id,
            "publicKey": hex_string(&entry.public_key),
            "authorityDomains": entry.authority_domains,
            "approved": entry.approved,
        }),
        None,
    )?;
    Ok(0)
}

fn run(cli: Cli) -> Result<u8> {
    let settings = Settings::resolve(cli.global)?;
    match cli.command {
        Command::Produce(a) => produce(&settings, a),
        Command::Serve { listen } => serve(&settings, listen),
        Command::Capture(a) => capture(&settings, a),
        Command::Extract { file } => extract(&settings, &file),
        Command::Validate(a) => validate(&settings, a),
        Command::ClipCanonical(a) => clip_canonical(&settings, a),
        Command::Keygen { out, force } => keygen(&settings, &out, force),
        Command::Trust(cmd) => trust(&settings, cmd),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "castprov_core=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.is::<UsageError>() { EXIT_USAGE } else { 1 })
        }
    }
}
