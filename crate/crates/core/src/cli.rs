//! The `evdn` command line.
//!
//! Every command resolves its settings from an optional `--config` file,
//! command-specific config files and `--set key=value` overrides, in that
//! order. Outputs are written atomically and each run leaves a
//! `<output>.manifest.json` next to its main output.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::baselines::{classical_filter, FilterParams, Method};
use crate::denoise::{
    model_keep, model_logits, model_scores, DEFAULT_SEGMENT_LEN, MODEL_KEEP_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::events::{
    normalize_segment, read_events, segment_stream, write_events, EventStream, Format,
};
use crate::fsio;
use crate::kv::KvMap;
use crate::metrics::{mesr, roc_auc, MetricsReport, DEFAULT_ESR_WINDOW};
use crate::net::{load_checkpoint, macs_per_event, param_count, save_checkpoint, ModelConfig};
use crate::sampling::splitmix64;
use crate::serialize::{order_of, point_code, Curve, PoolMap};
use crate::synth::{make_dataset, stream_to_clouds, DatasetOptions, NoiseConfig, SceneConfig};
use crate::train::{history_csv, train, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "evdn",
    version,
    about = "Event-camera denoising with serialized state-space scans"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Seed for every random choice; overrides `seed` from config files.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for segment-level parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// key=value settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a single setting, e.g. `--set lr=1e-3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a labeled moving-bar stream with background activity.
    Generate {
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        noise: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Voxel-sample every segment of a stream and keep the chosen events.
    Sample {
        #[arg(long)]
        events: PathBuf,
        /// Voxel size along normalized time.
        #[arg(long)]
        voxel: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write one segment's serialization order and pooling groups as CSV.
    SerializeDebug {
        #[arg(long)]
        events: PathBuf,
        #[arg(long, default_value = "hilbert")]
        curve: String,
        /// Segment to inspect.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on labeled streams or on freshly synthesized scenes.
    Train {
        /// Labeled event files; when absent, `--scenes` scenes are generated.
        #[arg(long)]
        data: Vec<PathBuf>,
        #[arg(long, default_value_t = 8)]
        scenes: usize,
        #[arg(long, value_enum, default_value_t = Preset::Desk)]
        preset: Preset,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score every event with a classical filter or a trained model.
    Denoise {
        #[arg(long)]
        events: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Checkpoint, required for `--method model`.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Scores CSV (`src_index,score`).
        #[arg(long)]
        out: PathBuf,
        /// Also write the kept events.
        #[arg(long)]
        kept: Option<PathBuf>,
        /// Also write a PGM count image of the kept events.
        #[arg(long)]
        render: Option<PathBuf>,
    },
    /// AUC and MESR of a scores file against a labeled stream.
    Eval {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        /// Metrics JSON.
        #[arg(long)]
        out: PathBuf,
        /// ROC curve CSV.
        #[arg(long)]
        roc: Option<PathBuf>,
        /// Keep events whose score exceeds this.
        #[arg(long, default_value_t = MODEL_KEEP_THRESHOLD)]
        threshold: f64,
        /// Keep scores equal to the threshold too.
        #[arg(long)]
        inclusive: bool,
        #[arg(long, default_value_t = DEFAULT_ESR_WINDOW)]
        window: usize,
    },
    /// Time model inference and write the logits.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        events: PathBuf,
        /// Logits CSV (`src_index,logit_noise,logit_signal`).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        repeat: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Tiny,
    Full,
    Desk,
}

impl Preset {
    fn model(self) -> ModelConfig {
        match self {
            Preset::Tiny => ModelConfig::tiny(),
            Preset::Full => ModelConfig::full(),
            Preset::Desk => crate::benchmark::DeskBenchmark::desk().model,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Baf,
    Dwf,
    Ts,
    Model,
}

/// What went wrong, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit 2: bad flags, missing inputs, unreadable config.
    Usage(String),
    /// Exit 1.
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => CliError::Usage(format!("config error: {m}")),
            other => CliError::Runtime(other),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Record of one command invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub threads: usize,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub timings_s: BTreeMap<String, f64>,
    pub events: Option<usize>,
    pub events_per_sec: Option<f64>,
    pub results: Value,
}

impl RunManifest {
    fn new(command: &str, seed: u64, threads: usize) -> Self {
        RunManifest {
            command: command.to_string(),
            config: BTreeMap::new(),
            seed,
            threads,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings_s: BTreeMap::new(),
            events: None,
            events_per_sec: None,
            results: Value::Null,
        }
    }

    fn record_config(&mut self, kv: &KvMap) {
        for k in kv.keys() {
            if let Some(v) = kv.get(k) {
                self.config.insert(k.to_string(), v.to_string());
            }
        }
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            eprintln!("evdn: {m}");
            2
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("evdn: {e}");
            1
        }
    }
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    if cli.common.threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.common.threads)
        .build()
        .map_err(|e| {
            CliError::Usage(format!("cannot start {} threads: {e}", cli.common.threads))
        })?;
    pool.install(|| dispatch(cli))
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    let c = &cli.common;
    match &cli.command {
        Command::Generate { scene, noise, out } => {
            generate(c, scene.as_deref(), noise.as_deref(), out)
        }
        Command::Sample { events, voxel, out } => sample(c, events, *voxel, out),
        Command::SerializeDebug {
            events,
            curve,
            index,
            out,
        } => serialize_debug(c, events, curve, *index, out),
        Command::Train {
            data,
            scenes,
            preset,
            out,
        } => train_cmd(c, data, *scenes, *preset, out),
        Command::Denoise {
            events,
            method,
            model,
            out,
            kept,
            render,
        } => denoise(
            c,
            events,
            *method,
            model.as_deref(),
            out,
            kept.as_deref(),
            render.as_deref(),
        ),
        Command::Eval {
            events,
            scores,
            out,
            roc,
            threshold,
            inclusive,
            window,
        } => eval(
            c,
            events,
            scores,
            out,
            roc.as_deref(),
            *threshold,
            *inclusive,
            *window,
        ),
        Command::Bench {
            model,
            events,
            out,
            repeat,
        } => bench(c, model, events, out, *repeat),
    }
}

const SHARED_KEYS: &[&str] = &["seed", "segment_len", "voxel"];

/// Merges `--config`, then `extra` files, then `--set` pairs, and rejects
/// keys outside `allowed`.
fn resolve(common: &Common, extra: &[&Path], allowed: &[&[&str]]) -> CliResult<KvMap> {
    let mut kv = KvMap::new();
    let files = common
        .config
        .iter()
        .map(PathBuf::as_path)
        .chain(extra.iter().copied());
    for f in files {
        require_input(f)?;
        kv.merge(&KvMap::load(f)?);
    }
    for pair in &common.set {
        let one =
            KvMap::parse(pair).map_err(|e| CliError::Usage(format!("--set {pair:?}: {e}")))?;
        if one.keys().count() != 1 {
            return Err(CliError::Usage(format!(
                "--set expects one key=value, got {pair:?}"
            )));
        }
        kv.merge(&one);
    }
    let known: HashSet<&str> = allowed
        .iter()
        .flat_map(|s| s.iter().copied())
        .chain(SHARED_KEYS.iter().copied())
        .collect();
    if let Some(bad) = kv.keys().find(|k| !known.contains(k)) {
        return Err(CliError::Usage(format!(
            "unknown setting {bad:?} for this command"
        )));
    }
    Ok(kv)
}

fn seed_of(common: &Common, kv: &KvMap) -> CliResult<u64> {
    match common.seed {
        Some(s) => Ok(s),
        None => Ok(kv.value::<u64>("seed")?.unwrap_or(0)),
    }
}

fn segment_len(kv: &KvMap) -> CliResult<usize> {
    let n = kv
        .value::<usize>("segment_len")?
        .unwrap_or(DEFAULT_SEGMENT_LEN);
    if n < 2 {
        return Err(CliError::Usage(format!(
            "segment_len must be at least 2, got {n}"
        )));
    }
    Ok(n)
}

fn require_input(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "missing input: {}",
            path.display()
        )))
    }
}

fn load_stream(path: &Path) -> CliResult<EventStream> {
    require_input(path)?;
    let mut s = read_events(path, Format::from_path(path))?;
    s.sort_stable();
    Ok(s)
}

fn save_manifest(out: &Path, m: &RunManifest) -> CliResult<()> {
    let text = serde_json::to_string_pretty(m)
        .map_err(|e| CliError::Runtime(Error::InvalidArgument(e.to_string())))?;
    fsio::write_atomic(&manifest_path(out), text.as_bytes())?;
    Ok(())
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

fn generate(
    common: &Common,
    scene_f: Option<&Path>,
    noise_f: Option<&Path>,
    out: &Path,
) -> CliResult<()> {
    let start = Instant::now();
    let extra: Vec<&Path> = scene_f.into_iter().chain(noise_f).collect();
    let kv = resolve(common, &extra, &[SceneConfig::KEYS, NoiseConfig::KEYS])?;
    let seed = seed_of(common, &kv)?;
    let mut scene = SceneConfig::default();
    scene.apply_kv(&kv)?;
    let mut noise = NoiseConfig::default();
    noise.apply_kv(&kv)?;
    let data = crate::synth::generate_scene(&scene, &noise, seed)?;
    write_events(&data.stream, out, Format::from_path(out))?;

    let mut m = RunManifest::new("generate", seed, common.threads);
    m.record_config(&scene.to_kv());
    m.record_config(&noise.to_kv());
    m.inputs.extend(extra.iter().map(|p| show(p)));
    m.outputs.push(show(out));
    m.events = Some(data.stream.len());
    m.results = json!({
        "signal_events": data.signal_count,
        "noise_events": data.noise_count,
        "bars": scene.bars_for_seed(seed).iter().map(|b| b.to_string()).collect::<Vec<_>>(),
    });
    m.timings_s
        .insert("total".into(), start.elapsed().as_secs_f64());
    save_manifest(out, &m)
}

fn sample(common: &Common, events: &Path, voxel: f64, out: &Path) -> CliResult<()> {
    let start = Instant::now();
    let kv = resolve(common, &[], &[])?;
    let seed = seed_of(common, &kv)?;
    let stream = load_stream(events)?;
    let opts = DatasetOptions {
        segment_len: segment_len(&kv)?,
        voxel: Some(voxel),
    };
    let clouds = stream_to_clouds(&stream, &opts, seed)?;
    let mut keep = vec![false; stream.len()];
    for c in &clouds {
        for &i in &c.src_index {
            keep[i] = true;
        }
    }
    let kept = stream.filter(&keep);
    write_events(&kept, out, Format::from_path(out))?;

    let mut m = RunManifest::new("sample", seed, common.threads);
    m.config.insert("voxel".into(), voxel.to_string());
    m.config
        .insert("segment_len".into(), opts.segment_len.to_string());
    m.inputs.push(show(events));
    m.outputs.push(show(out));
    m.events = Some(stream.len());
    m.results = json!({ "kept": kept.len(), "segments": clouds.len() });
    m.timings_s
        .insert("total".into(), start.elapsed().as_secs_f64());
    save_manifest(out, &m)
}

fn serialize_debug(
    common: &Common,
    events: &Path,
    curve: &str,
    index: usize,
    out: &Path,
) -> CliResult<()> {
    let start = Instant::now();
    let kv = resolve(common, &[], &[&["grid_bits", "pool_scale"]])?;
    let seed = seed_of(common, &kv)?;
    let curve: Curve = curve
        .parse()
        .map_err(|e: Error| CliError::Usage(e.to_string()))?;
    let bits = kv
        .value::<u32>("grid_bits")?
        .unwrap_or(crate::serialize::DEFAULT_GRID_BITS);
    let scale = kv.value::<usize>("pool_scale")?.unwrap_or(2);
    let stream = load_stream(events)?;
    let segs = segment_stream(&stream, segment_len(&kv)?)?;
    let window = segs.windows.get(index).ok_or_else(|| {
        CliError::Usage(format!(
            "segment {index} requested, stream has {}",
            segs.windows.len()
        ))
    })?;
    let cloud = normalize_segment(window)?.shift_src(segs.offsets[index]);
    let order = order_of(&cloud, curve, bits)?;
    let pool = PoolMap::from_order(&order, scale)?;
    let mut text = String::from("rank,src_index,x,y,z,p,code,group\n");
    for (rank, &i) in order.perm.iter().enumerate() {
        let pt = &cloud.points[i];
        let code = point_code(pt, cloud.width, cloud.height, curve, bits);
        let _ = writeln!(
            text,
            "{rank},{},{},{},{},{},{code},{}",
            cloud.src_index[i],
            pt.x,
            pt.y,
            pt.z,
            pt.p,
            rank / scale
        );
    }
    fsio::write_atomic(out, text.as_bytes())?;

    let mut m = RunManifest::new("serialize-debug", seed, common.threads);
    m.config.insert("curve".into(), curve.to_string());
    m.config.insert("grid_bits".into(), bits.to_string());
    m.config.insert("pool_scale".into(), scale.to_string());
    m.inputs.push(show(events));
    m.outputs.push(show(out));
    m.events = Some(cloud.len());
    m.results = json!({ "segment": index, "points": cloud.len(), "parents": pool.parents() });
    m.timings_s
        .insert("total".into(), start.elapsed().as_secs_f64());
    save_manifest(out, &m)
}

fn train_cmd(
    common: &Common,
    data: &[PathBuf],
    scenes: usize,
    preset: Preset,
    out: &Path,
) -> CliResult<()> {
    let start = Instant::now();
    let kv = resolve(
        common,
        &[],
        &[
            ModelConfig::KEYS,
            TrainConfig::KEYS,
            SceneConfig::KEYS,
            NoiseConfig::KEYS,
        ],
    )?;
    let seed = seed_of(common, &kv)?;
    let mut mcfg = preset.model();
    mcfg.apply_kv(&kv)?;
    let mut tcfg = crate::benchmark::DeskBenchmark::desk().train;
    tcfg.apply_kv(&kv)?;
    tcfg.seed = seed;
    let opts = DatasetOptions {
        segment_len: segment_len(&kv)?,
        voxel: kv.value::<f64>("voxel")?,
    };
    let mut clouds = Vec::new();
    let mut inputs = Vec::new();
    if data.is_empty() {
        let mut scene = crate::benchmark::DeskBenchmark::desk().scene;
        scene.apply_kv(&kv)?;
        let mut noise = NoiseConfig::default();
        noise.apply_kv(&kv)?;
        clouds = make_dataset(&scene, &noise, scenes, seed, &opts)?.clouds;
    } else {
        for (i, path) in data.iter().enumerate() {
            let s = load_stream(path)?;
            if s.labels.is_none() {
                return Err(CliError::Usage(format!("{} has no labels", path.display())));
            }
            clouds.extend(stream_to_clouds(
                &s,
                &opts,
                splitmix64(seed.wrapping_add(i as u64)),
            )?);
            inputs.push(show(path));
        }
    }
    let load_time = start.elapsed().as_secs_f64();
    let mut log = |e: &crate::train::EpochStats| {
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |a| format!("{a:.4}"));
        eprintln!(
            "epoch {:>3}  loss {:.5}  train auc {}  val auc {}",
            e.epoch,
            e.loss,
            fmt(e.train_auc),
            fmt(e.val_auc)
        );
    };
    let result = train(&clouds, &mcfg, &tcfg, Some(&mut log))?;
    save_checkpoint(out, &result.weights, &mcfg)?;
    let mut hist = out.as_os_str().to_owned();
    hist.push(".history.csv");
    let hist = PathBuf::from(hist);
    fsio::write_atomic(&hist, history_csv(&result.history).as_bytes())?;

    let mut m = RunManifest::new("train", seed, common.threads);
    m.record_config(&mcfg.to_kv());
    m.record_config(&tcfg.to_kv());
    m.config
        .insert("segment_len".into(), opts.segment_len.to_string());
    m.inputs = inputs;
    m.outputs = vec![
        show(out),
        show(&crate::net::checkpoint::config_path(out)),
        show(&hist),
    ];
    let n_events: usize = clouds.iter().map(|c| c.len()).sum();
    m.events = Some(n_events);
    let train_time = start.elapsed().as_secs_f64() - load_time;
    m.events_per_sec = Some(n_events as f64 * tcfg.epochs as f64 / train_time.max(1e-9));
    m.results = json!({
        "clouds": clouds.len(),
        "validation_clouds": result.val_indices.len(),
        "params": param_count(&mcfg),
        "final": result.history.last().map(|h| json!({"loss": h.loss, "train_auc": h.train_auc, "val_auc": h.val_auc})),
    });
    m.timings_s.insert("data".into(), load_time);
    m.timings_s.insert("train".into(), train_time);
    save_manifest(out, &m)
}

#[allow(clippy::too_many_arguments)]
fn denoise(
    common: &Common,
    events: &Path,
    method: MethodArg,
    model: Option<&Path>,
    out: &Path,
    kept_out: Option<&Path>,
    render: Option<&Path>,
) -> CliResult<()> {
    let start = Instant::now();
    let kv = resolve(common, &[], &[FilterParams::KEYS])?;
    let seed = seed_of(common, &kv)?;
    let stream = load_stream(events)?;
    let mut m = RunManifest::new("denoise", seed, common.threads);
    m.inputs.push(show(events));
    let (scores, keep) = match method {
        MethodArg::Model => {
            let path =
                model.ok_or_else(|| CliError::Usage("--method model needs --model".into()))?;
            require_input(path)?;
            let (w, cfg) = load_checkpoint(path)?;
            m.inputs.push(show(path));
            m.record_config(&cfg.to_kv());
            let n = segment_len(&kv)?;
            m.config.insert("segment_len".into(), n.to_string());
            let s = model_scores(&stream, &w, &cfg, n)?;
            let k = model_keep(&s);
            (s, k)
        }
        classical => {
            let method = match classical {
                MethodArg::Baf => Method::Baf,
                MethodArg::Dwf => Method::Dwf,
                _ => Method::Ts,
            };
            let mut params = FilterParams::new(method);
            params.apply_kv(&kv)?;
            m.config.insert("method".into(), method.to_string());
            classical_filter(&stream, &params)?
        }
    };
    fsio::write_atomic(out, scores_csv(&scores).as_bytes())?;
    m.outputs.push(show(out));
    let kept = stream.filter(&keep);
    if let Some(p) = kept_out {
        write_events(&kept, p, Format::from_path(p))?;
        m.outputs.push(show(p));
    }
    if let Some(p) = render {
        fsio::write_atomic(p, render_pgm(&kept).as_bytes())?;
        m.outputs.push(show(p));
    }
    let elapsed = start.elapsed().as_secs_f64();
    m.events = Some(stream.len());
    m.events_per_sec = Some(stream.len() as f64 / elapsed.max(1e-9));
    m.results = json!({ "kept": kept.len() });
    m.timings_s.insert("total".into(), elapsed);
    save_manifest(out, &m)
}

#[allow(clippy::too_many_arguments)]
fn eval(
    common: &Common,
    events: &Path,
    scores_path: &Path,
    out: &Path,
    roc_out: Option<&Path>,
    threshold: f64,
    inclusive: bool,
    window: usize,
) -> CliResult<()> {
    let start = Instant::now();
    let kv = resolve(common, &[], &[])?;
    let seed = seed_of(common, &kv)?;
    let stream = load_stream(events)?;
    require_input(scores_path)?;
    let scores = parse_scores(&fsio::read_text(scores_path)?, stream.len())?;
    let keep: Vec<bool> = scores
        .iter()
        .map(|&s| {
            if inclusive {
                s >= threshold
            } else {
                s > threshold
            }
        })
        .collect();
    let mut m = RunManifest::new("eval", seed, common.threads);
    m.inputs = vec![show(events), show(scores_path)];
    m.config.insert("threshold".into(), threshold.to_string());
    m.config.insert("inclusive".into(), inclusive.to_string());
    m.config.insert("window".into(), window.to_string());

    let roc = match &stream.labels {
        Some(labels) => match roc_auc(&scores, labels) {
            Ok(r) => Some(r),
            Err(Error::SingleClass { .. }) => None,
            Err(e) => return Err(e.into()),
        },
        None => None,
    };
    let mesr_res = mesr(&stream, &keep, window)?;
    let report = MetricsReport {
        auc: roc.as_ref().map(|r| r.auc),
        mesr: Some(mesr_res.mesr),
        per_window: mesr_res.per_window.clone(),
        events: stream.len(),
        kept: keep.iter().filter(|&&k| k).count(),
    };
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Runtime(Error::InvalidArgument(e.to_string())))?;
    fsio::write_atomic(out, text.as_bytes())?;
    m.outputs.push(show(out));
    if let Some(p) = roc_out {
        let r = roc
            .as_ref()
            .ok_or_else(|| CliError::Usage("a ROC curve needs labels of both classes".into()))?;
        fsio::write_atomic(p, r.to_csv().as_bytes())?;
        m.outputs.push(show(p));
    }
    m.events = Some(stream.len());
    m.results = serde_json::to_value(&report).unwrap_or(Value::Null);
    m.timings_s
        .insert("total".into(), start.elapsed().as_secs_f64());
    save_manifest(out, &m)
}

fn bench(common: &Common, model: &Path, events: &Path, out: &Path, repeat: usize) -> CliResult<()> {
    if repeat == 0 {
        return Err(CliError::Usage("--repeat must be at least 1".into()));
    }
    let kv = resolve(common, &[], &[])?;
    let seed = seed_of(common, &kv)?;
    require_input(model)?;
    let (w, cfg) = load_checkpoint(model)?;
    let stream = load_stream(events)?;
    let n = segment_len(&kv)?;
    let mut times = Vec::with_capacity(repeat);
    let mut logits = Vec::new();
    for _ in 0..repeat {
        let t = Instant::now();
        logits = model_logits(&stream, &w, &cfg, n)?;
        times.push(t.elapsed().as_secs_f64());
    }
    fsio::write_atomic(out, logits_csv(&logits).as_bytes())?;

    let best = times.iter().copied().fold(f64::INFINITY, f64::min);
    let macs = macs_per_event(&cfg);
    let mut m = RunManifest::new("bench", seed, common.threads);
    m.record_config(&cfg.to_kv());
    m.config.insert("segment_len".into(), n.to_string());
    m.config.insert("repeat".into(), repeat.to_string());
    m.inputs = vec![show(model), show(events)];
    m.outputs.push(show(out));
    m.events = Some(stream.len());
    m.events_per_sec = Some(stream.len() as f64 / best.max(1e-9));
    m.results = json!({
        "params": param_count(&cfg),
        "macs_per_event": macs,
        "macs_total": macs * stream.len() as f64,
    });
    m.timings_s.insert("best".into(), best);
    m.timings_s.insert("total".into(), times.iter().sum());
    save_manifest(out, &m)
}

pub fn scores_csv(scores: &[f64]) -> String {
    let mut s = String::from("src_index,score\n");
    for (i, v) in scores.iter().enumerate() {
        let _ = writeln!(s, "{i},{v}");
    }
    s
}

/// Reads a `src_index,score` file that must cover each of `n` events once.
pub fn parse_scores(text: &str, n: usize) -> Result<Vec<f64>> {
    let mut out: Vec<Option<f64>> = vec![None; n];
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (ln == 0 && line.starts_with("src_index")) {
            continue;
        }
        let bad = |reason: String| Error::Malformed {
            location: format!("scores line {}", ln + 1),
            reason,
        };
        let (i, v) = line
            .split_once(',')
            .ok_or_else(|| bad("expected src_index,score".into()))?;
        let i: usize = i
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad index {i:?}")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad score {v:?}")))?;
        if !v.is_finite() {
            return Err(bad("score is not finite".into()));
        }
        let slot = out
            .get_mut(i)
            .ok_or_else(|| bad(format!("index {i} beyond {n} events")))?;
        if slot.replace(v).is_some() {
            return Err(bad(format!("index {i} repeated")));
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(i, v)| {
            v.ok_or_else(|| Error::Malformed {
                location: "scores".into(),
                reason: format!("no score for event {i}"),
            })
        })
        .collect()
}

pub fn logits_csv(logits: &[[f64; 2]]) -> String {
    let mut s = String::from("src_index,logit_noise,logit_signal\n");
    for (i, l) in logits.iter().enumerate() {
        let _ = writeln!(s, "{i},{},{}", l[0], l[1]);
    }
    s
}

/// Plain-text PGM of the per-pixel event counts, scaled so the busiest pixel
/// is white.
pub fn render_pgm(stream: &EventStream) -> String {
    let (w, h) = (usize::from(stream.width), usize::from(stream.height));
    let mut counts = vec![0u64; w * h];
    for e in &stream.events {
        counts[usize::from(e.y) * w + usize::from(e.x)] += 1;
    }
    let max = counts.iter().copied().max().unwrap_or(0).max(1);
    let mut s = format!("P2\n{w} {h}\n255\n");
    for row in counts.chunks(w.max(1)) {
        let line: Vec<String> = row
            .iter()
            .map(|&c| ((c * 255 + max / 2) / max).to_string())
            .collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Event;

    #[test]
    fn scores_roundtrip() {
        let v = vec![0.25, 1.0 / 3.0, 7.0];
        assert_eq!(parse_scores(&scores_csv(&v), 3).unwrap(), v);
    }

    #[test]
    fn scores_need_full_coverage() {
        assert!(parse_scores("src_index,score\n0,1\n", 2).is_err());
        assert!(parse_scores("0,1\n0,2\n", 1).is_err());
        assert!(parse_scores("3,1\n", 2).is_err());
        assert!(parse_scores("0,nan\n", 1).is_err());
        assert_eq!(parse_scores("1,0.5\n0,0.25\n", 2).unwrap(), vec![0.25, 0.5]);
    }

    #[test]
    fn pgm_scales_to_busiest_pixel() {
        let s = EventStream::new(
            3,
            2,
            vec![
                Event::new(0, 0, 0, 1),
                Event::new(1, 0, 0, 1),
                Event::new(2, 2, 1, -1),
            ],
        );
        assert_eq!(render_pgm(&s), "P2\n3 2\n255\n255 0 0\n0 0 128\n");
    }

    #[test]
    fn manifest_sits_next_to_output() {
        assert_eq!(
            manifest_path(Path::new("a/b.csv")),
            PathBuf::from("a/b.csv.manifest.json")
        );
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["evdn", "frobnicate"]), 2);
        assert_eq!(run(["evdn", "eval", "--events"]), 2);
        assert_eq!(run(["evdn", "--help"]), 0);
    }
}
