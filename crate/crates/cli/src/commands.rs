use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, Context};
use pearl::backend::{RecordingTransport, TransportEmbedder};
use pearl::dataset::{filter_evaluable_pairs, load_dataset, DatasetConfig};
use pearl::metrics::{
    stage1_metrics, stage2_metrics, stage3_metrics, Averaging, EmbeddingProvider, FixtureEmbeddings, MemoEmbedder,
    MetricsError, PairKey,
};
use pearl::pipeline::{batch_to_jsonl, run_batch, run_pipeline, BatchItem, PipelineConfig, PipelineError};
use pearl::placements::{self, baseline_placements};
use pearl::report::{build_report, RunManifest, Stage1Row, Stage2Row, Stage3Row};
use pearl::synthetic::{generate_benchmark, SyntheticParams};
use pearl::{DatasetIndex, Point2D, SceneImage};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backend::Backend;
use crate::error::{CliError, CliResult, ResultExt};
use crate::{
    BaselineArgs, DatasetChoice, EvalArgs, Format, PipelineChoice, PlaceArgs, RecordArgs, RunArgs, ShowConfigArgs,
    SynthArgs,
};

fn load_config(choice: &PipelineChoice) -> CliResult<PipelineConfig> {
    let cfg = match (&choice.preset, &choice.config) {
        (_, Some(path)) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).usage()?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display())).usage()?
        }
        (Some(name), None) => PipelineConfig::preset(name).ok_or_else(|| anyhow!("unknown preset {name:?}")).usage()?,
        (None, None) => PipelineConfig::octo_plus(),
    };
    cfg.validate().usage()?;
    Ok(cfg)
}

fn dataset_config(choice: &DatasetChoice) -> DatasetConfig {
    if choice.open_vocabulary {
        DatasetConfig::open_vocabulary()
    } else {
        DatasetConfig::default()
    }
}

fn load_optional(choice: &DatasetChoice) -> CliResult<Option<DatasetIndex>> {
    match &choice.dataset {
        None => Ok(None),
        Some(root) => load_dataset(root, &dataset_config(choice))
            .with_context(|| format!("loading dataset {}", root.display()))
            .usage()
            .map(Some),
    }
}

fn load_required(choice: &DatasetChoice) -> CliResult<DatasetIndex> {
    load_optional(choice)?.ok_or_else(|| CliError::usage(anyhow!("--dataset is required")))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display())).runtime()?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display())).runtime()
}

fn write_or_print(out: Option<&Path>, contents: &str) -> CliResult<()> {
    match out {
        Some(path) => write(path, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

/// `<file>.manifest.json` next to a line-oriented output.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn manifest_json(m: &RunManifest) -> String {
    serde_json::to_string_pretty(m).expect("manifests serialize") + "\n"
}

fn pipeline_failure(e: PipelineError) -> CliError {
    if e.is_usage_error() {
        CliError::usage(e)
    } else {
        CliError::runtime(e)
    }
}

fn config_value(cfg: &PipelineConfig) -> Value {
    serde_json::to_value(cfg).expect("configs serialize")
}

fn read_scene(path: &Path) -> CliResult<SceneImage> {
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| anyhow!("{}: cannot derive an image id from the file name", path.display()))
        .usage()?;
    let rgb = image::open(path).with_context(|| format!("reading {}", path.display())).usage()?.to_rgb8();
    SceneImage::new(id, rgb).usage()
}

/// Red cross with a dark outline at `p`.
fn annotate(image: &SceneImage, p: Point2D) -> image::RgbImage {
    let mut out = image.rgb().clone();
    let (w, h) = (out.width() as i64, out.height() as i64);
    let mut paint = |x: i64, y: i64, c: [u8; 3]| {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            out.put_pixel(x as u32, y as u32, image::Rgb(c));
        }
    };
    for d in -7i64..=7 {
        for t in -2i64..=2 {
            paint(p.x + d, p.y + t, [0, 0, 0]);
            paint(p.x + t, p.y + d, [0, 0, 0]);
        }
    }
    for d in -6i64..=6 {
        for t in -1i64..=1 {
            paint(p.x + d, p.y + t, [255, 0, 0]);
            paint(p.x + t, p.y + d, [255, 0, 0]);
        }
    }
    out
}

pub fn place(args: PlaceArgs) -> CliResult<()> {
    let cfg = load_config(&args.pipeline)?;
    let dataset = load_optional(&args.dataset)?;
    let mut scene = read_scene(&args.image)?;
    if let Some(known) = dataset.as_ref().and_then(|d| d.scene(scene.id())) {
        if known.image.content_digest() == scene.content_digest() {
            scene = known.image.clone();
        }
    }
    let backend = Backend::open(&args.backend, dataset.as_ref(), Duration::from_secs(args.timeout))?;
    let record = run_pipeline(&scene, &args.object, &cfg, &backend).map_err(pipeline_failure)?;

    let mut manifest = RunManifest::new(
        config_value(&cfg),
        dataset.as_ref().map(DatasetIndex::digest),
        backend.mode(),
        Some(cfg.seed),
    );
    manifest.backend_info = backend.info();
    let mut doc = serde_json::to_value(&record).expect("records serialize");
    doc["manifest"] = serde_json::to_value(&manifest).expect("manifests serialize");
    write_or_print(args.out.as_deref(), &(serde_json::to_string_pretty(&doc).unwrap() + "\n"))?;

    if let Some(path) = &args.annotate {
        let marked = annotate(&scene, record.point);
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).runtime()?;
        }
        marked
            .save_with_format(path, image::ImageFormat::Png)
            .with_context(|| format!("writing {}", path.display()))
            .runtime()?;
    }
    Ok(())
}

fn dataset_work(index: &DatasetIndex) -> Vec<(&SceneImage, &str)> {
    index
        .annotations
        .active_pairs()
        .map(|(img, obj, _)| (&index.scenes[img].image, obj))
        .collect()
}

/// First backend failure in a batch; model-level outcomes such as "no box
/// found" are results, not failures.
fn backend_failure(items: &[BatchItem]) -> Option<String> {
    items.iter().find_map(|item| {
        let e = item.result.as_ref().err()?;
        e.backend_error()?;
        Some(format!("{}/{}: {e}", item.image, item.object))
    })
}

#[derive(Serialize, Deserialize)]
struct SelectionLine {
    image: String,
    object: String,
    selection: String,
}

pub fn run(args: RunArgs) -> CliResult<()> {
    let cfg = load_config(&args.pipeline)?;
    let index = load_required(&args.dataset)?;
    let backend = Backend::open(&args.backend, Some(&index), Duration::from_secs(args.timeout))?;
    let work = dataset_work(&index);
    let items = run_batch(&work, &cfg, &backend, args.jobs).map_err(pipeline_failure)?;

    let mut tags: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut selections = String::new();
    let mut placements = BTreeMap::new();
    for record in items.iter().filter_map(|i| i.result.as_ref().ok()) {
        tags.entry(record.image.clone()).or_insert_with(|| record.tags_filtered.clone());
        if let Some(selection) = &record.selected {
            let line = SelectionLine {
                image: record.image.clone(),
                object: record.object.clone(),
                selection: selection.clone(),
            };
            selections += &(serde_json::to_string(&line).unwrap() + "\n");
        }
        placements.insert((record.image.clone(), record.object.clone()), record.point);
    }
    let dir = &args.out_dir;
    write(&dir.join("records.jsonl"), batch_to_jsonl(&items))?;
    write(&dir.join("tags.json"), serde_json::to_string_pretty(&tags).unwrap() + "\n")?;
    write(&dir.join("selections.jsonl"), selections)?;
    write(&dir.join("placements.jsonl"), placements::to_jsonl(&placements))?;
    let mut manifest = RunManifest::new(config_value(&cfg), Some(index.digest()), backend.mode(), Some(cfg.seed));
    manifest.backend_info = backend.info();
    write(&dir.join("manifest.json"), manifest_json(&manifest))?;

    let placed = placements.len();
    eprintln!("{placed}/{} pairs placed", items.len());
    if let Some(failure) = backend_failure(&items) {
        return Err(CliError::runtime(anyhow!("backend failure: {failure}")));
    }
    Ok(())
}

pub fn record_fixtures(args: RecordArgs) -> CliResult<()> {
    let cfg = load_config(&args.pipeline)?;
    let index = load_required(&args.dataset)?;
    let work = dataset_work(&index);
    let backend = Backend::open(&args.backend_url, Some(&index), Duration::from_secs(args.timeout))?;
    if let (Backend::Http(http), false) = (&backend, work.is_empty()) {
        http.get("health")
            .map_err(|e| anyhow!("backend {} is not reachable: {e}", http.base_url()))
            .runtime()?;
    }
    let mode = backend.mode();
    let info = backend.info();
    let recorder = RecordingTransport::new(backend);
    let items = run_batch(&work, &cfg, &recorder, args.jobs).map_err(pipeline_failure)?;
    if let Some(failure) = backend_failure(&items) {
        return Err(CliError::runtime(anyhow!("backend failure: {failure}")));
    }
    write(&args.out, recorder.to_jsonl())?;
    let mut manifest = RunManifest::new(config_value(&cfg), Some(index.digest()), mode, Some(cfg.seed));
    manifest.backend_info = info;
    write(&sidecar(&args.out, ".manifest.json"), manifest_json(&manifest))?;
    eprintln!("{} fixture lines from {} pairs", recorder.len(), items.len());
    Ok(())
}

pub fn baseline(args: BaselineArgs) -> CliResult<()> {
    let index = load_required(&args.dataset)?;
    let (pairs, _) = filter_evaluable_pairs(&index);
    let placements = baseline_placements(&index, &pairs, args.kind, args.seed).usage()?;
    write(&args.out, placements::to_jsonl(&placements))?;
    let config = json!({ "baseline": args.kind.name() });
    let manifest = RunManifest::new(config, Some(index.digest()), "none", Some(args.seed));
    write(&sidecar(&args.out, ".manifest.json"), manifest_json(&manifest))
}

pub fn synth(args: SynthArgs) -> CliResult<()> {
    let params = SyntheticParams {
        scenes: args.scenes,
        width: args.width,
        height: args.height,
        objects_per_scene: args.objects_per_scene,
        seed: args.seed,
        exclusion_rate: args.exclusion_rate,
        missing_rate: args.missing_rate,
        with_depth: args.depth,
    };
    if params.width < 16 || params.height < 16 {
        return Err(CliError::usage(anyhow!("synthetic scenes need at least 16x16 pixels")));
    }
    let index = generate_benchmark(&params);
    index.write_to_dir(&args.out).runtime()?;
    println!("{}", index.digest());
    Ok(())
}

pub fn show_config(args: ShowConfigArgs) -> CliResult<()> {
    let cfg = PipelineConfig::preset(&args.preset).expect("clap restricts preset names");
    print!("{}", toml::to_string_pretty(&cfg).runtime()?);
    Ok(())
}

/// `name=path` or `path`, named by its file stem.
fn parse_input(spec: &str) -> CliResult<(String, PathBuf)> {
    let (name, path) = match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(spec);
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| anyhow!("cannot name input {spec:?}; use name=path"))
                .usage()?;
            (stem.to_string(), path)
        }
    };
    if !path.exists() {
        return Err(CliError::usage(anyhow!("input {} does not exist", path.display())));
    }
    Ok((name, path))
}

fn read_input(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).usage()
}

fn metrics_failure(method: &str, e: MetricsError) -> CliError {
    let missing = matches!(
        e,
        MetricsError::MissingTags(_) | MetricsError::MissingSelection(_) | MetricsError::MissingPlacement(_)
    );
    let error = anyhow!("{method}: {}{e}", if missing { "missing inputs: " } else { "" });
    if missing {
        CliError::usage(error)
    } else {
        CliError::runtime(error)
    }
}

fn selections_from(text: &str, path: &Path) -> CliResult<BTreeMap<PairKey, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let s: SelectionLine = serde_json::from_str(line)
            .with_context(|| format!("{} line {}", path.display(), i + 1))
            .usage()?;
        out.insert((s.image, s.object), s.selection);
    }
    Ok(out)
}

fn text_stages<P: EmbeddingProvider>(
    args: &EvalArgs,
    index: &DatasetIndex,
    inputs: &[(String, PathBuf)],
    provider: &MemoEmbedder<P>,
) -> CliResult<(Vec<Stage1Row>, Vec<Stage2Row>)> {
    let (mut s1, mut s2) = (Vec::new(), Vec::new());
    for (name, path) in inputs {
        let text = read_input(path)?;
        if args.stage == 1 {
            let tags: BTreeMap<String, Vec<String>> = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))
                .usage()?;
            let r = stage1_metrics(&tags, &index.annotations, provider).map_err(|e| metrics_failure(name, e))?;
            s1.push(Stage1Row::new(name.clone(), &r));
        } else {
            let selections = selections_from(&text, path)?;
            let averaging = if args.flat { Averaging::Flat } else { Averaging::PerImage };
            let r = stage2_metrics(&selections, &index.annotations, provider, averaging)
                .map_err(|e| metrics_failure(name, e))?;
            s2.push(Stage2Row::new(name.clone(), &r));
        }
    }
    Ok((s1, s2))
}

pub fn eval(args: EvalArgs) -> CliResult<()> {
    let index = load_required(&args.dataset)?;
    let inputs: Vec<(String, PathBuf)> = args.inputs.iter().map(|s| parse_input(s)).collect::<CliResult<_>>()?;
    let order: Vec<String> = inputs.iter().map(|(n, _)| n.clone()).collect();
    let mut backend_mode = "none";
    let mut stage3 = Vec::new();
    let (stage1, stage2) = if args.stage == 3 {
        let (pairs, _) = filter_evaluable_pairs(&index);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(args.jobs.max(1)).build().runtime()?;
        for (name, path) in &inputs {
            let placements = placements::from_jsonl(&read_input(path)?)
                .with_context(|| path.display().to_string())
                .usage()?;
            let r = pool
                .install(|| stage3_metrics(&placements, &pairs))
                .map_err(|e| metrics_failure(name, e))?;
            let audit_path = match (&args.audit_dir, &args.out) {
                (Some(dir), _) => Some(dir.join(format!("{name}.audit.jsonl"))),
                (None, Some(out)) => Some(sidecar(out, &format!(".{name}.audit.jsonl"))),
                (None, None) => None,
            };
            if let Some(p) = audit_path {
                write(&p, r.audit_jsonl())?;
            }
            stage3.push(Stage3Row::new(name.clone(), &r));
        }
        (Vec::new(), Vec::new())
    } else if let Some(path) = &args.embeddings {
        let fixture = FixtureEmbeddings::from_json(&read_input(path)?)
            .with_context(|| path.display().to_string())
            .usage()?;
        backend_mode = "fixture";
        text_stages(&args, &index, &inputs, &MemoEmbedder::new(fixture))?
    } else if let Some(spec) = &args.backend {
        let backend = Backend::open(spec, Some(&index), Duration::from_secs(args.timeout))?;
        backend_mode = backend.mode();
        text_stages(&args, &index, &inputs, &MemoEmbedder::new(TransportEmbedder::new(backend)))?
    } else {
        return Err(CliError::usage(anyhow!("stages 1 and 2 need --embeddings or --backend")));
    };

    let report = build_report(stage1, stage2, stage3, &order).usage()?;
    let config = json!({
        "stage": args.stage,
        "inputs": inputs.iter().map(|(n, p)| json!({"name": n, "path": p})).collect::<Vec<_>>(),
        "averaging": if args.flat { "flat" } else { "per_image" },
    });
    let manifest = RunManifest::new(config, Some(index.digest()), backend_mode, None);
    let rendered = match args.format {
        Format::Csv => report.to_csv(),
        Format::Table => report.to_table(),
        Format::Json => report.clone().with_manifest(manifest.clone()).to_json(),
    };
    write_or_print(args.out.as_deref(), &rendered)?;
    if let (Some(out), Format::Csv | Format::Table) = (&args.out, args.format) {
        write(&sidecar(out, ".manifest.json"), manifest_json(&manifest))?;
    }
    Ok(())
}
