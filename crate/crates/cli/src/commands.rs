use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use diffgan_api::{
    CanvasSpec, CompletionRequest, GenerateRequest, GenerateTask, LayoutSpec, RequestElement, MAX_SAMPLES,
};
use diffgan_client::Client;
use diffgan_core::corpus::{load_corpus, load_corpus_with, CanvasRecord, ElementRecord, LayoutRecord};
use diffgan_core::diffusion::{sample_batch, SampleOptions};
use diffgan_core::features::{FeatureConfig, FeatureExtractor};
use diffgan_core::layout::{LabelMap, Layout};
use diffgan_core::mask::{locked_mask, make_mask, ConditionMask, Task};
use diffgan_core::metrics::MetricReport;
use diffgan_core::nets::checkpoint::{self, current_git_hash};
use diffgan_core::render::{render_svg, RenderStyle};
use diffgan_core::report::{bench_csv, bench_sampling, evaluate, EvalReport, FileRef, Provenance, FID_NOTICE};
use diffgan_core::synth::synth_corpus;
use diffgan_core::train::{RunOutput, TrainConfig, Trainer};
use diffgan_service::{router, serve, AppState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use tracing::info;

use crate::io::{self, is_stdio};
use crate::{Command, MetricArg};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train { config } => train(&config),
        Command::Sample { ckpt, task, cond, n, seed, out, server, deterministic } => {
            let task = Task::from(task);
            let cond = cond.as_deref();
            match server {
                Some(url) => sample_remote(&url, task, cond, n, seed, &out),
                None => {
                    let ckpt = ckpt.as_deref().context("--ckpt is required")?;
                    sample_local(ckpt, task, cond, n, seed, SampleOptions { deterministic }, &out)
                }
            }
        }
        Command::Eval { metrics, gen, reference, fe, labels, out } => {
            eval(&metrics, &gen, reference.as_deref(), fe.as_deref(), labels.as_deref(), out.as_deref())
        }
        Command::Bench { ckpt, t_list, batch, reps, seed, out } => {
            let (nets, _) = checkpoint::load(&ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
            let rows = bench_sampling(&nets, &t_list, batch, reps, seed).context("benchmarking")?;
            io::write_output(&out, bench_csv(&rows).as_bytes())
        }
        Command::Render { corpus, labels, out_dir, limit } => render(&corpus, labels.as_deref(), &out_dir, limit),
        Command::Synth { profile, n, seed, out } => {
            let layouts = synth_corpus(n, profile.into(), &mut ChaCha8Rng::seed_from_u64(seed));
            io::write_layouts(&out, &layouts, &diffgan_core::synth::label_map())
        }
        Command::TrainFe { corpus, out, rows, steps, seed } => train_fe(&corpus, out, rows, steps, seed),
        Command::Serve { ckpt, port, host, cors_origin } => serve_cmd(&ckpt, &host, port, cors_origin.as_deref()),
    }
}

/// TOML run file: paths, a task, and optional overrides of the single-CPU
/// training preset under `[train]`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    corpus: PathBuf,
    out_dir: PathBuf,
    task: Task,
    #[serde(default)]
    dataset: Option<String>,
    #[serde(default)]
    train: Option<toml::Table>,
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn train_config(run: &RunConfig, num_labels: usize) -> Result<TrainConfig> {
    let mut table = toml::Table::try_from(TrainConfig::desk(run.task, num_labels))?;
    if let Some(over) = run.train.clone() {
        merge(&mut table, over);
    }
    let mut cfg: TrainConfig = table.try_into().context("invalid [train] section")?;
    cfg.task = run.task;
    cfg.model.num_labels = num_labels;
    Ok(cfg)
}

fn train(config: &Path) -> Result<()> {
    let text = fs::read_to_string(config).with_context(|| format!("reading config {}", config.display()))?;
    let run: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", config.display()))?;
    let (corpus, labels) =
        load_corpus(&run.corpus).with_context(|| format!("loading corpus {}", run.corpus.display()))?;
    let cfg = train_config(&run, labels.len())?;
    let dataset = run.dataset.clone().unwrap_or_else(|| {
        run.corpus.file_stem().map_or_else(|| "corpus".into(), |s| s.to_string_lossy().into_owned())
    });
    let out = RunOutput { dir: run.out_dir.clone(), labels, dataset, git_hash: current_git_hash() };
    let mut trainer = Trainer::new(corpus, cfg).context("setting up training")?;
    trainer
        .run(Some(&out), |l| {
            if l.step % 100 == 0 {
                info!(step = l.step, d = l.d_loss, g = l.g_loss, d_real = l.mean_d_real, d_fake = l.mean_d_fake);
            }
        })
        .context("training")?;
    eprintln!("wrote {}", out.dir.join(diffgan_core::train::CHECKPOINT_FILE).display());
    Ok(())
}

fn conditions(cond: Option<&Path>, task: Task, labels: &LabelMap) -> Result<Vec<Layout>> {
    match (task, cond) {
        (Task::Uncond, _) => Ok(Vec::new()),
        (_, None) => bail!("task {task} needs --cond"),
        (_, Some(p)) => {
            let layouts = if is_stdio(p) {
                io::load(p, labels)?.layouts
            } else {
                load_corpus_with(p, labels).with_context(|| format!("loading conditions {}", p.display()))?
            };
            ensure!(!layouts.is_empty(), "condition corpus {} is empty", p.display());
            Ok(layouts)
        }
    }
}

fn sample_local(
    ckpt: &Path,
    task: Task,
    cond: Option<&Path>,
    n: usize,
    seed: u64,
    opts: SampleOptions,
    out: &Path,
) -> Result<()> {
    let (nets, meta) = checkpoint::load(ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let labels = meta.label_map()?;
    let conds_src = conditions(cond, task, &labels)?;
    let shape = nets.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masks = (0..n)
        .map(|i| match conds_src.get(i % conds_src.len().max(1)) {
            None => Ok(ConditionMask::unconditional(shape)),
            Some(l) if task == Task::Completion => locked_mask(&l.elements, shape, l.canvas),
            Some(l) => make_mask(task, l, shape, &mut rng),
        })
        .collect::<diffgan_core::Result<Vec<_>>>()
        .context("building conditions")?;
    let mut layouts = Vec::with_capacity(n);
    for chunk in masks.chunks(256) {
        layouts.extend(
            sample_batch(&nets, &meta.schedule, chunk, opts, &mut rng).context("sampling")?,
        );
    }
    io::write_layouts(out, &layouts, &labels).context("writing samples")
}

fn spec_to_layout(spec: &LayoutSpec, labels: &LabelMap) -> Result<Layout> {
    let record = LayoutRecord {
        canvas: CanvasRecord { w: spec.canvas.w, h: spec.canvas.h },
        elements: spec
            .elements
            .iter()
            .map(|e| ElementRecord { label: e.label.clone(), center: e.center, size: e.size })
            .collect(),
    };
    record.to_layout(labels).map_err(anyhow::Error::msg)
}

fn sample_remote(url: &str, task: Task, cond: Option<&Path>, n: usize, seed: u64, out: &Path) -> Result<()> {
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    let client = Client::new(url);
    let meta = rt.block_on(client.meta()).with_context(|| format!("contacting server {url}"))?;
    let labels = LabelMap::new(meta.labels.clone())?;
    let conds_src = conditions(cond, task, &labels)?;
    let record = |l: &Layout| -> Result<LayoutRecord> { Ok(LayoutRecord::from_layout(l, &labels)?) };
    let mut specs = Vec::with_capacity(n);
    if task == Task::Uncond {
        for (c, start) in (0..n).step_by(MAX_SAMPLES).enumerate() {
            let req = GenerateRequest {
                task: GenerateTask::Uncond,
                labels: None,
                sizes: None,
                num_samples: MAX_SAMPLES.min(n - start),
                seed: Some(seed.wrapping_add(c as u64)),
                canvas: None,
            };
            specs.extend(rt.block_on(client.generate(&req)).context("sampling on server")?.samples);
        }
    } else {
        for i in 0..n {
            let src = record(&conds_src[i % conds_src.len()])?;
            let canvas = Some(CanvasSpec { w: src.canvas.w, h: src.canvas.h });
            let seed = Some(seed.wrapping_add(i as u64));
            let resp = if task == Task::Completion {
                let elements = src
                    .elements
                    .into_iter()
                    .map(|e| RequestElement { label: e.label, center: e.center, size: e.size, locked: true })
                    .collect();
                rt.block_on(client.complete(&CompletionRequest { elements, num_samples: 1, seed, canvas }))
            } else {
                let req = GenerateRequest {
                    task: if task == Task::CToSp { GenerateTask::CToSp } else { GenerateTask::CsToP },
                    labels: Some(src.elements.iter().map(|e| e.label.clone()).collect()),
                    sizes: (task == Task::CsToP).then(|| src.elements.iter().map(|e| e.size).collect()),
                    num_samples: 1,
                    seed,
                    canvas,
                };
                rt.block_on(client.generate(&req))
            };
            specs.extend(resp.context("sampling on server")?.samples);
        }
    }
    let layouts = specs.iter().map(|s| spec_to_layout(s, &labels)).collect::<Result<Vec<_>>>()?;
    io::write_layouts(out, &layouts, &labels).context("writing samples")
}

fn eval(
    metrics: &[MetricArg],
    gen: &Path,
    reference: Option<&Path>,
    fe: Option<&Path>,
    labels: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let labels = io::resolve_labels(gen, labels)?;
    let generated = io::load(gen, &labels)?;
    ensure!(!generated.layouts.is_empty(), "generated corpus {} is empty", gen.display());
    let needs_ref = metrics.iter().any(|m| matches!(m, MetricArg::Maxiou | MetricArg::Fid));
    let reference = match reference {
        Some(p) => Some(io::load(p, &labels)?),
        None if needs_ref => bail!("maxiou and fid need --ref"),
        None => None,
    };
    let fe_path = fe
        .map(Path::to_path_buf)
        .or_else(|| reference.as_ref().map(|r| io::cached_fe(&r.source.sha256)).filter(|p| p.exists()));
    if metrics.contains(&MetricArg::Fid) && fe_path.is_none() {
        bail!("fid needs --fe or a cached feature extractor (see train-fe)");
    }
    let extractor = fe_path
        .as_deref()
        .map(|p| FeatureExtractor::load(p).with_context(|| format!("loading feature extractor {}", p.display())))
        .transpose()?;
    let report = match &reference {
        Some(r) => evaluate(&generated.layouts, &r.layouts, extractor.as_ref()).context("computing metrics")?,
        None => {
            let only_gen = evaluate(&generated.layouts, &generated.layouts, None).context("computing metrics")?;
            MetricReport { maxiou: None, ..only_gen }
        }
    };
    if metrics.contains(&MetricArg::Maxiou) && report.maxiou.is_none() {
        bail!("maxiou needs generated and reference corpora of equal size");
    }
    let full = EvalReport {
        notice: FID_NOTICE.into(),
        metrics: report.clone(),
        provenance: Provenance {
            generated: generated.source,
            reference: reference.map(|r| r.source).unwrap_or_else(|| FileRef { path: String::new(), sha256: String::new() }),
            feature_extractor: fe_path.as_deref().map(FileRef::new).transpose()?,
            seed: None,
        },
    };
    if let Some(out) = out {
        io::write_output(out, (serde_json::to_string_pretty(&full)? + "\n").as_bytes())?;
    }
    if !metrics.is_empty() {
        let mut lines = String::new();
        for m in metrics {
            let (name, value) = match m {
                MetricArg::Overlap => ("overlap", Some(report.overlap)),
                MetricArg::Alignment => ("alignment", Some(report.alignment)),
                MetricArg::Maxiou => ("maxiou", report.maxiou),
                MetricArg::Fid => ("fid", report.fid),
            };
            lines.push_str(&format!("{name} {}\n", value.map_or_else(|| "n/a".into(), |v| format!("{v:.6}"))));
        }
        io::write_output(Path::new("-"), lines.as_bytes())?;
    } else if out.is_none() {
        io::write_output(Path::new("-"), (serde_json::to_string_pretty(&full)? + "\n").as_bytes())?;
    }
    Ok(())
}

fn render(corpus: &Path, labels: Option<&Path>, out_dir: &Path, limit: Option<usize>) -> Result<()> {
    let labels = io::resolve_labels(corpus, labels)?;
    let layouts = io::load(corpus, &labels)?.layouts;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let style = RenderStyle::default();
    for (i, l) in layouts.iter().take(limit.unwrap_or(usize::MAX)).enumerate() {
        let path = out_dir.join(format!("layout_{i:05}.svg"));
        fs::write(&path, render_svg(l, &labels, &style)).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn train_fe(corpus: &Path, out: Option<PathBuf>, rows: usize, steps: usize, seed: u64) -> Result<()> {
    let labels = io::resolve_labels(corpus, None)?;
    let loaded = io::load(corpus, &labels)?;
    let mut cfg = FeatureConfig::new(rows, labels.len());
    cfg.steps = steps;
    cfg.seed = seed;
    let mut fe = FeatureExtractor::new(cfg, labels)?;
    fe.fit(&loaded.layouts).context("training feature extractor")?;
    let out = out.unwrap_or_else(|| io::cached_fe(&loaded.source.sha256));
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fe.save(&out).with_context(|| format!("writing {}", out.display()))?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn serve_cmd(ckpt: &Path, host: &str, port: u16, cors: Option<&str>) -> Result<()> {
    let state = AppState::load(ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let app = router(state, cors)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .with_context(|| format!("binding {host}:{port}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        serve(listener, app).await.context("serving")
    })
}
