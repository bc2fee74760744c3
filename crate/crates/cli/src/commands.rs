use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use semg::bench::{bench_inference, stream_infer};
use semg::config::ExperimentConfig;
use semg::data::{load_windows, split_dataset, synth_dataset, SplitMode, WindowConfig, MANIFEST_FILE};
use semg::eval::{evaluate, pareto_front, read_points_csv, write_points_csv, ParetoPoint};
use semg::model::{
    arch_grid, build_model, canonical_name, load_checkpoint, save_checkpoint, ArchConfig, Checkpoint, Provenance,
};
use semg::train::{self, TrainData, TrainMode, TrainOutcome};
use semg::{Error, Mat, Result};

use crate::ConfigArg;

fn load_config(arg: &ConfigArg, sets: &[(String, String)]) -> Result<ExperimentConfig> {
    ExperimentConfig::load(&arg.config, sets)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })
}

/// Writes command output to stdout; a closed pipe (`| head`) is not an error.
fn emit(bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(bytes).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
            Err(Error::Io { path: PathBuf::from("<stdout>"), source: e })
        }
        _ => Ok(()),
    }
}

fn emit_json<T: Serialize>(value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit(text.as_bytes())
}

fn emit_points(points: &[ParetoPoint]) -> Result<()> {
    let mut buf = Vec::new();
    write_points_csv(&mut buf, points)?;
    emit(&buf)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io { path: path.into(), source: e }
}

/// `<output_dir>/<experiment_id>/{checkpoints, reports, logs}`, created fresh.
struct RunDir {
    root: PathBuf,
}

impl RunDir {
    fn create(cfg: &ExperimentConfig) -> Result<RunDir> {
        let root = cfg.output_dir.join(&cfg.experiment_id);
        if root.exists() {
            return Err(Error::InvalidConfig(format!(
                "experiment_id {:?} already exists in {}",
                cfg.experiment_id,
                cfg.output_dir.display()
            )));
        }
        for sub in ["checkpoints", "reports", "logs"] {
            let p = root.join(sub);
            fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        Ok(RunDir { root })
    }

    fn path(&self, sub: &str, file: &str) -> PathBuf {
        self.root.join(sub).join(file)
    }

    fn provenance(&self, cfg: &ExperimentConfig, command: &str, sets: &[(String, String)]) -> Result<()> {
        let p = serde_json::json!({
            "experiment_id": cfg.experiment_id,
            "command": command,
            "config_hash": cfg.hash(),
            "seed": cfg.train.seed,
            "code_version": concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")),
            "overrides": sets,
            "config": cfg,
        });
        write_json(&self.root.join("provenance.json"), &p)?;
        let toml_path = self.root.join("config.toml");
        fs::write(&toml_path, cfg.to_toml_string()?).map_err(io_err(&toml_path))
    }

    fn save_run(&self, name: &str, out: &TrainOutcome) -> Result<PathBuf> {
        let ckpt = self.path("checkpoints", &format!("{name}.ckpt"));
        save_checkpoint(&out.checkpoint, &ckpt)?;
        write_json(&self.path("reports", &format!("{name}_record.json")), &out.record)?;
        let curve = self.path("reports", &format!("{name}_curve.csv"));
        let f = fs::File::create(&curve).map_err(io_err(&curve))?;
        out.record.write_curve_csv(f).map_err(io_err(&curve))?;
        let steps = self.path("logs", &format!("{name}_steps.jsonl"));
        let mut lines = String::new();
        for s in &out.record.steps {
            lines.push_str(&serde_json::to_string(s)?);
            lines.push('\n');
        }
        fs::write(&steps, lines).map_err(io_err(&steps))?;
        Ok(ckpt)
    }
}

pub fn synth(arg: &ConfigArg, sets: &[(String, String)]) -> Result<()> {
    let cfg = load_config(arg, sets)?;
    let dir = &cfg.data.dataset_dir;
    if dir.join(MANIFEST_FILE).exists() {
        return Err(Error::InvalidConfig(format!(
            "{} already holds a dataset; refusing to overwrite it",
            dir.display()
        )));
    }
    let run = RunDir::create(&cfg)?;
    run.provenance(&cfg, "synth", sets)?;
    let summary = synth_dataset(&cfg.data.synth, dir)?;
    let total: usize = summary.event_counts.values().sum();
    write_json(&run.path("reports", "synth_summary.json"), &serde_json::json!({
        "dataset_dir": dir,
        "manifest": summary.manifest,
        "event_counts": summary.event_counts,
        "total_events": total,
    }))?;
    info!("wrote {} sessions ({total} key events) to {}", summary.event_counts.len(), dir.display());
    Ok(())
}

fn load_data(cfg: &ExperimentConfig, mode: SplitMode) -> Result<TrainData> {
    let manifest = cfg.data.dataset_dir.join(MANIFEST_FILE);
    let splits = split_dataset(&manifest, mode, cfg.data.user.as_deref())?;
    let w = &cfg.data.window;
    Ok(TrainData {
        train: load_windows(&splits.train, w)?,
        val: load_windows(&splits.val, w)?,
        test: load_windows(&splits.test, w)?,
    })
}

#[derive(Clone, Copy, Debug)]
pub enum Flavor {
    Train,
    Distill,
    Personalize,
}

pub fn train_cmd(arg: &ConfigArg, sets: &[(String, String)], flavor: Flavor) -> Result<()> {
    let mut cfg = load_config(arg, sets)?;
    let (mode, name) = match flavor {
        Flavor::Train => (TrainMode::Supervised, "train"),
        Flavor::Distill => (TrainMode::Distill, "distill"),
        Flavor::Personalize => (TrainMode::Personalize, "personalize"),
    };
    if cfg.train.mode != mode {
        if sets.iter().any(|(k, _)| k == "train.mode") || !matches!(cfg.train.mode, TrainMode::Supervised) {
            return Err(Error::InvalidConfig(format!(
                "train.mode = {:?} conflicts with the `{name}` command",
                cfg.train.mode
            )));
        }
        cfg.train.mode = mode;
    }
    let preset = match flavor {
        Flavor::Train => train::TrainConfig::supervised(),
        Flavor::Distill => train::TrainConfig::distill(),
        Flavor::Personalize => train::TrainConfig::personalize(),
    };
    if cfg.train.weight_decay != preset.weight_decay {
        log::warn!(
            "{name}: train.weight_decay = {} differs from the {name} recipe ({})",
            cfg.train.weight_decay,
            preset.weight_decay
        );
    }
    let teacher = match flavor {
        Flavor::Distill => Some(load_checkpoint(required(&cfg.train.teacher_checkpoint, "train.teacher_checkpoint")?)?),
        _ => None,
    };
    let init = match flavor {
        Flavor::Personalize => Some(load_checkpoint(required(&cfg.train.init_checkpoint, "train.init_checkpoint")?)?),
        _ => None,
    };
    let split_mode = match flavor {
        Flavor::Personalize => SplitMode::Personalization,
        _ => SplitMode::Generic,
    };
    let data = load_data(&cfg, split_mode)?;
    let run = RunDir::create(&cfg)?;
    run.provenance(&cfg, name, sets)?;
    let out = match flavor {
        Flavor::Train => train::train(&cfg.model, &cfg.train, &cfg.augment, &cfg.loss, &data)?,
        Flavor::Distill => train::distill_train(
            &cfg.model,
            &cfg.train,
            &cfg.augment,
            &cfg.loss,
            teacher.as_ref().expect("loaded above"),
            &data,
        )?,
        Flavor::Personalize => {
            train::personalize(&cfg.train, &cfg.augment, &cfg.loss, init.as_ref().expect("loaded above"), &data)?
        }
    };
    let ckpt = run.save_run("model", &out)?;
    info!(
        "{name}: selected epoch {} val_cer {:.3} test_cer {:?} -> {}",
        out.record.selected_epoch,
        out.record.val_cer,
        out.record.test_cer,
        ckpt.display()
    );
    Ok(())
}

fn required<'a>(v: &'a Option<String>, key: &str) -> Result<&'a str> {
    v.as_deref().ok_or_else(|| Error::InvalidConfig(format!("{key} must be set for this command")))
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Evaluate one held-out user's sessions (personalization splits).
    #[arg(long)]
    pub user: Option<String>,
    #[arg(long, default_value_t = 8000)]
    pub window_len: usize,
    #[arg(long, default_value_t = 1800)]
    pub pad_past: usize,
    #[arg(long, default_value_t = 200)]
    pub pad_future: usize,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn eval(a: &EvalArgs, sets: &[(String, String)]) -> Result<()> {
    if let Some((k, _)) = sets.first() {
        return Err(Error::InvalidConfig(format!("eval takes no config overrides (got --{k})")));
    }
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let mode = if a.user.is_some() { SplitMode::Personalization } else { SplitMode::Generic };
    let splits = split_dataset(&a.manifest, mode, a.user.as_deref())?;
    let files = match a.split.as_str() {
        "train" => &splits.train,
        "val" => &splits.val,
        "test" => &splits.test,
        other => return Err(Error::InvalidConfig(format!("split must be train, val or test (got {other:?})"))),
    };
    let window = WindowConfig { window_len: a.window_len, pad_past: a.pad_past, pad_future: a.pad_future, hop: None };
    let sessions = load_windows(files, &window)?;
    let report = evaluate(&ckpt.model, &sessions, ckpt.id(), &a.split)?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    if let Some(out) = &a.out {
        fs::write(out, &text).map_err(io_err(out))?;
    }
    emit(text.as_bytes())?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct GridArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated grid points (`d128-l10`, `Tiny`, ...) or `all`.
    #[arg(long, default_value = "all")]
    pub select: String,
    /// Print exact parameter counts as JSON without training.
    #[arg(long)]
    pub count_only: bool,
}

fn grid_tag(a: &ArchConfig) -> String {
    format!("d{}-l{}", a.hidden_size, a.num_layers)
}

fn select_grid(base: &ArchConfig, select: &str) -> Result<Vec<ArchConfig>> {
    let grid: Vec<ArchConfig> = arch_grid()
        .into_iter()
        .map(|g| ArchConfig {
            name: canonical_name(g.hidden_size, g.num_layers).map(str::to_string),
            hidden_size: g.hidden_size,
            num_layers: g.num_layers,
            ..base.clone()
        })
        .collect();
    if select == "all" {
        return Ok(grid);
    }
    select
        .split(',')
        .map(|s| {
            let s = s.trim();
            grid.iter()
                .find(|g| grid_tag(g) == s || g.name.as_deref().is_some_and(|n| n.eq_ignore_ascii_case(s)))
                .cloned()
                .ok_or_else(|| Error::InvalidConfig(format!("unknown grid point {s:?}")))
        })
        .collect()
}

pub fn grid(a: &GridArgs, sets: &[(String, String)]) -> Result<()> {
    let cfg = ExperimentConfig::load(&a.config, sets)?;
    let archs = select_grid(&cfg.model, &a.select)?;
    if a.count_only {
        let rows: Vec<_> = archs
            .iter()
            .map(|arch| {
                build_model(arch, 0).map(|m| {
                    serde_json::json!({
                        "tag": grid_tag(arch),
                        "name": arch.name,
                        "hidden_size": arch.hidden_size,
                        "num_layers": arch.num_layers,
                        "params": m.params.num_scalars(),
                    })
                })
            })
            .collect::<Result<_>>()?;
        emit_json(&rows)?;
        return Ok(());
    }
    let data = load_data(&cfg, SplitMode::Generic)?;
    let run = RunDir::create(&cfg)?;
    run.provenance(&cfg, "grid", sets)?;
    let mut points = Vec::with_capacity(archs.len());
    let tcfg = train::TrainConfig { mode: TrainMode::Supervised, ..cfg.train.clone() };
    for arch in &archs {
        let tag = grid_tag(arch);
        let out = train::train(arch, &tcfg, &cfg.augment, &cfg.loss, &data)?;
        run.save_run(&tag, &out)?;
        let cer = out.record.test_cer.ok_or_else(|| Error::EmptyManifest("generic split has no test sessions".into()))?;
        info!("grid {tag}: params {} test_cer {cer:.3}", out.checkpoint.model.params.num_scalars());
        points.push(ParetoPoint { params: out.checkpoint.model.params.num_scalars() as u64, cer, tag });
    }
    let csv = run.path("reports", "grid.csv");
    write_points_csv(fs::File::create(&csv).map_err(io_err(&csv))?, &points)?;
    emit_points(&points)
}

#[derive(Args, Debug)]
pub struct ParetoArgs {
    /// CSV with header params,cer,tag.
    #[arg(long)]
    pub input: PathBuf,
    /// Also write the front here.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn pareto(a: &ParetoArgs) -> Result<()> {
    let f = fs::File::open(&a.input).map_err(io_err(&a.input))?;
    let points = read_points_csv(f)?;
    if points.is_empty() {
        return Err(Error::EmptyManifest(format!("{} has no rows", a.input.display())));
    }
    let mut front = pareto_front(&points);
    front.sort_by(|p, q| p.params.cmp(&q.params).then(p.cer.total_cmp(&q.cer)));
    if let Some(out) = &a.output {
        write_points_csv(fs::File::create(out).map_err(io_err(out))?, &front)?;
    }
    emit_points(&front)
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Checkpoint to time; alternatively --arch for a freshly initialized model.
    #[arg(long, conflicts_with = "arch")]
    pub checkpoint: Option<PathBuf>,
    /// Tiny, Small, Large, or a grid tag such as d512-l4.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long, default_value_t = 1000)]
    pub runs: usize,
    #[arg(long, default_value_t = 3)]
    pub trials: usize,
    /// Window length in samples (5 s at 2 kHz including pads).
    #[arg(long, default_value_t = 10_000)]
    pub window_samples: usize,
    /// Also run naive streaming inference keeping the last n frames per forward.
    #[arg(long)]
    pub emit_last_n: Option<usize>,
    /// Length of the streaming test signal in seconds.
    #[arg(long, default_value_t = 10.0)]
    pub stream_seconds: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Serialize)]
struct StreamSummary {
    emit_last_n: usize,
    samples: usize,
    forward_passes: usize,
    emissions: usize,
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    let ckpt = match (&a.checkpoint, &a.arch) {
        (Some(p), _) => load_checkpoint(p)?,
        (None, Some(name)) => {
            let arch = select_grid(&ArchConfig::default(), name)?.remove(0);
            Checkpoint::new(build_model(&arch, a.seed)?, Provenance::Init, None, None)
        }
        (None, None) => return Err(Error::InvalidConfig("bench needs --checkpoint or --arch".into())),
    };
    let channels = ckpt.model.cfg.featurizer.in_channels;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut signal = |rows: usize| {
        Mat::from_vec(rows, channels, (0..rows * channels).map(|_| rng.random_range(-1.0f32..1.0)).collect())
    };
    let window = signal(a.window_samples);
    let timing = bench_inference(&ckpt, &window, a.runs, a.trials)?;
    let streaming = match a.emit_last_n {
        Some(n) => {
            let samples = (a.stream_seconds * 2000.0).round() as usize;
            let out = stream_infer(&ckpt.model, &signal(samples), a.window_samples, n)?;
            Some(StreamSummary { emit_last_n: n, samples, forward_passes: out.forward_passes, emissions: out.emissions.len() })
        }
        None => None,
    };
    let out = serde_json::json!({ "timing": timing, "streaming": streaming });
    emit_json(&out)?;
    Ok(())
}
