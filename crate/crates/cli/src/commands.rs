use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hyperseed::analysis::{ensemble_predict, saliency_map};
use hyperseed::features::{extract_with, save_feature_csv, FeatureMode, FeatureParams};
use hyperseed::hsdc::{load_manifest_cubes, Datacube, Manifest};
use hyperseed::metrics::{evaluate, repeat_protocol, MetricsReport, RepetitionSummary};
use hyperseed::svm::{default_grid, fit_and_evaluate, DEFAULT_CV_ITERATIONS, DEFAULT_TEST_FRACTION};
use hyperseed::synthgen::{benchmark_spec, generate_dataset, BenchmarkKind, CubeSize};
use hyperseed::tensornet::{load_checkpoint, save_checkpoint, ArchConfig, Family, Network};
use hyperseed::training::{split_dataset, train_and_evaluate, TrainConfig, DEFAULT_SPLIT};
use serde::{Deserialize, Serialize};

use crate::config::{pick, RunConfig};
use crate::{log, UsageError};

/// Metrics file written by every evaluating command and read back by `report`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ReportFile {
    pub name: String,
    pub seed: u64,
    pub test_samples: u64,
    pub metrics: MetricsReport,
}

pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub seed: u64,
}

impl Ctx {
    fn create_out(&self) -> Result<()> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
    }

    fn write_report(&self, stage: &str, name: &str, report: &MetricsReport, class_names: &[String]) -> Result<()> {
        let file = ReportFile {
            name: name.to_string(),
            seed: self.seed,
            test_samples: report.confusion.total(),
            metrics: report.clone(),
        };
        self.write(&format!("{name}_report.json"), serde_json::to_string_pretty(&file)?)?;
        self.write(&format!("{name}_confusion.txt"), report.confusion.render(Some(class_names)))?;
        log(
            stage,
            "evaluated on the test split",
            &[
                ("name", name.to_string()),
                ("top1", format!("{:.4}", report.top1)),
                ("top2", format!("{:.4}", report.top2)),
                ("macro_f", format!("{:.4}", report.macro_f)),
                ("test_samples", report.confusion.total().to_string()),
            ],
        );
        Ok(())
    }

    fn manifest_path(&self, flag: Option<PathBuf>) -> Result<PathBuf> {
        flag.or_else(|| self.cfg.dataset.manifest.clone())
            .ok_or_else(|| UsageError("a manifest is required (--manifest or dataset.manifest)".into()).into())
    }
}

pub struct Dataset {
    pub manifest: Manifest,
    pub cubes: Vec<Datacube>,
    pub labels: Vec<usize>,
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let manifest = Manifest::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let cubes = load_manifest_cubes(&manifest, base)?;
    let labels = manifest.labels();
    Ok(Dataset { manifest, cubes, labels })
}

fn parse<T: std::str::FromStr<Err = hyperseed::Error>>(what: &str, s: &str) -> Result<T> {
    s.parse().map_err(|e: hyperseed::Error| UsageError(format!("{what}: {e}")).into())
}

// ------------------------------------------------------------------ synth

pub struct SynthArgs {
    pub kind: Option<String>,
    pub per_class: Option<usize>,
    pub size: Option<String>,
}

pub fn synth(ctx: &Ctx, args: SynthArgs) -> Result<()> {
    let d = &ctx.cfg.dataset;
    let kind: BenchmarkKind = parse("kind", &pick(args.kind, d.kind.clone(), "mixed-4class".into()))?;
    let size = match pick(args.size, d.size.clone(), "desk".into()).as_str() {
        "desk" => CubeSize::Desk,
        "paper" => CubeSize::PaperSize,
        other => return Err(UsageError(format!("size: unknown cube size {other:?} (expected desk or paper)")).into()),
    };
    let mut spec = benchmark_spec(kind, size);
    spec.cubes_per_class = pick(args.per_class, d.per_class, spec.cubes_per_class);
    ctx.create_out()?;
    let manifest = generate_dataset(&spec, ctx.seed, &ctx.out)?;
    let (h, w, b) = spec.cube_dims;
    log(
        "synth",
        "dataset written",
        &[
            ("kind", kind.to_string()),
            ("cubes", manifest.len().to_string()),
            ("classes", manifest.num_classes().to_string()),
            ("dims", format!("{h}x{w}x{b}")),
            ("seed", ctx.seed.to_string()),
            ("dir", ctx.out.display().to_string()),
        ],
    );
    Ok(())
}

// ------------------------------------------------------------------ features and svm

fn feature_mode(ctx: &Ctx, flag: Option<String>) -> Result<FeatureMode> {
    parse("mode", &pick(flag, ctx.cfg.features.mode.clone(), "spatio-spectral".into()))
}

fn feature_params(ctx: &Ctx) -> FeatureParams {
    let f = &ctx.cfg.features;
    let mut p = FeatureParams::default();
    if let Some(g) = &f.glcm {
        p.glcm = g.clone();
    }
    if let Some(m) = &f.mask {
        p.mask = m.clone();
    }
    p
}

fn feature_rows(ctx: &Ctx, data: &Dataset, mode: FeatureMode) -> Result<Vec<hyperseed::features::FeatureVector>> {
    let params = feature_params(ctx);
    data.cubes
        .iter()
        .enumerate()
        .map(|(i, c)| {
            extract_with(c, mode, &params)
                .with_context(|| format!("feature extraction for {}", data.manifest.entries[i].cube_path))
        })
        .collect()
}

pub fn features(ctx: &Ctx, manifest: Option<PathBuf>, mode: Option<String>) -> Result<()> {
    let mode = feature_mode(ctx, mode)?;
    let data = load_dataset(&ctx.manifest_path(manifest)?)?;
    let rows = feature_rows(ctx, &data, mode)?;
    ctx.create_out()?;
    let name = format!("features_{mode}.csv");
    save_feature_csv(ctx.path(&name), &rows, &data.labels)?;
    log(
        "features",
        "feature table written",
        &[
            ("mode", mode.to_string()),
            ("rows", rows.len().to_string()),
            ("columns", rows.first().map_or(0, |r| r.values.len()).to_string()),
            ("file", name),
        ],
    );
    Ok(())
}

fn svm_settings(ctx: &Ctx, dim: usize) -> (Vec<hyperseed::svm::SvmHyper>, usize, f64) {
    let s = &ctx.cfg.svm;
    (
        s.grid.clone().unwrap_or_else(|| default_grid(dim)),
        s.cv_iterations.unwrap_or(DEFAULT_CV_ITERATIONS),
        s.test_fraction.unwrap_or(DEFAULT_TEST_FRACTION),
    )
}

pub fn train_svm(ctx: &Ctx, manifest: Option<PathBuf>, mode: Option<String>) -> Result<()> {
    let mode = feature_mode(ctx, mode)?;
    let data = load_dataset(&ctx.manifest_path(manifest)?)?;
    let x: Vec<Vec<f64>> = feature_rows(ctx, &data, mode)?.into_iter().map(|f| f.values).collect();
    let (grid, n_iter, test_frac) = svm_settings(ctx, x[0].len());
    let run = fit_and_evaluate(&x, &data.labels, &grid, n_iter, test_frac, ctx.seed)?;
    ctx.create_out()?;
    let name = format!("svm_{mode}");
    run.model.save(ctx.path(&format!("{name}.json")))?;
    log(
        "train-svm",
        "model selected by cross-validation",
        &[
            ("mode", mode.to_string()),
            ("c", run.cv.best.c.to_string()),
            ("gamma", format!("{:e}", run.cv.best.gamma)),
            ("train", run.train.len().to_string()),
            ("test", run.test.len().to_string()),
        ],
    );
    ctx.write_report("train-svm", &name, &run.report, &data.manifest.class_names())
}

// ------------------------------------------------------------------ cnn

pub struct CnnArgs {
    pub family: Option<String>,
    pub epochs: Option<usize>,
    pub preset: Option<String>,
}

fn split_fractions(ctx: &Ctx) -> (f64, f64, f64) {
    ctx.cfg.cnn.split.map_or(DEFAULT_SPLIT, |[a, b, c]| (a, b, c))
}

fn train_config(ctx: &Ctx, args: &CnnArgs, data: &Dataset) -> Result<TrainConfig> {
    let c = &ctx.cfg.cnn;
    let family: Family = parse("family", &pick(args.family.clone(), c.family.clone(), "resnet-b".into()))?;
    let first = data.cubes.first().ok_or_else(|| UsageError("manifest lists no cubes".into()))?;
    let (h, w, b) = first.dims();
    let classes = data.manifest.num_classes();
    let mut cfg = match pick(args.preset.clone(), c.preset.clone(), "desk".into()).as_str() {
        "desk" => TrainConfig::desk(family, [h, w, b], classes),
        "reference" => {
            let mut arch = ArchConfig::reference(family, classes);
            arch.input_dims = [h, w, b];
            TrainConfig::new(arch)
        }
        other => return Err(UsageError(format!("preset: unknown preset {other:?} (expected desk or reference)")).into()),
    };
    if let Some(arch) = &c.arch {
        cfg.arch = arch.clone();
    }
    if let Some(adam) = c.adam {
        cfg.adam = adam;
    }
    if let Some(e) = args.epochs.or(c.epochs) {
        cfg.adam.epochs = e;
    }
    if let Some(a) = c.augment {
        cfg.augment = a;
    }
    if let Some(f) = c.augment_factor {
        cfg.augment_factor = f;
    }
    if let Some(e) = c.early_stopping {
        cfg.early_stopping = e;
    }
    if let Some(f) = c.fit_on_train_and_val {
        cfg.fit_on_train_and_val = f;
    }
    cfg.seed = ctx.seed;
    cfg.validate().map_err(|e| UsageError(format!("cnn config: {e}")))?;
    Ok(cfg)
}

fn echo_architecture(stage: &str, cfg: &TrainConfig) {
    log(
        stage,
        "architecture",
        &[
            ("family", cfg.arch.family.name().to_string()),
            ("conv_layers", cfg.arch.conv_layer_count().to_string()),
            ("parameters", cfg.arch.parameter_count().to_string()),
            ("stages", format!("{:?}", cfg.arch.stage_widths)),
            ("blocks", format!("{:?}", cfg.arch.blocks_per_stage)),
            ("epochs", cfg.adam.epochs.to_string()),
            ("lr0", cfg.adam.lr0.to_string()),
        ],
    );
}

pub fn train_cnn(ctx: &Ctx, manifest: Option<PathBuf>, args: CnnArgs) -> Result<()> {
    let data = load_dataset(&ctx.manifest_path(manifest)?)?;
    let cfg = train_config(ctx, &args, &data)?;
    echo_architecture("train-cnn", &cfg);
    let run = train_and_evaluate(&data.cubes, &data.labels, &cfg, split_fractions(ctx), ctx.seed)?;
    for e in &run.history.epochs {
        let mut kv = vec![
            ("epoch", e.epoch.to_string()),
            ("train_loss", format!("{:.5}", e.train_loss)),
            ("train_acc", format!("{:.4}", e.train_acc)),
        ];
        if let (Some(l), Some(a)) = (e.val_loss, e.val_acc) {
            kv.push(("val_loss", format!("{l:.5}")));
            kv.push(("val_acc", format!("{a:.4}")));
        }
        log("train-cnn", "epoch", &kv);
    }
    ctx.create_out()?;
    let name = format!("cnn_{}", cfg.arch.family.name());
    save_checkpoint(&run.net, ctx.path(&format!("{name}.hsnc")))?;
    ctx.write(&format!("{name}_history.csv"), run.history.to_csv())?;
    ctx.write(&format!("{name}_split.json"), serde_json::to_string_pretty(&run.plan)?)?;
    ctx.write_report("train-cnn", &name, &run.report, &data.manifest.class_names())
}

// ------------------------------------------------------------------ eval

pub fn eval(
    ctx: &Ctx,
    manifest: Option<PathBuf>,
    model: Option<String>,
    repetitions: Option<usize>,
    cnn: CnnArgs,
    mode: Option<String>,
) -> Result<()> {
    let data = load_dataset(&ctx.manifest_path(manifest)?)?;
    let r = pick(repetitions, ctx.cfg.eval.repetitions, 10);
    let model = pick(model, ctx.cfg.eval.model.clone(), "cnn".into());
    let (name, summary): (String, RepetitionSummary) = match model.as_str() {
        "cnn" => {
            let cfg = train_config(ctx, &cnn, &data)?;
            echo_architecture("eval", &cfg);
            let fractions = split_fractions(ctx);
            let summary = repeat_protocol(
                |s| {
                    let mut c = cfg.clone();
                    c.seed = s;
                    Ok(train_and_evaluate(&data.cubes, &data.labels, &c, fractions, s)?.report)
                },
                r,
                ctx.seed,
            )?;
            (format!("eval_cnn_{}", cfg.arch.family.name()), summary)
        }
        "svm" => {
            let mode = feature_mode(ctx, mode)?;
            let x: Vec<Vec<f64>> = feature_rows(ctx, &data, mode)?.into_iter().map(|f| f.values).collect();
            let (grid, n_iter, test_frac) = svm_settings(ctx, x[0].len());
            let summary = repeat_protocol(
                |s| Ok(fit_and_evaluate(&x, &data.labels, &grid, n_iter, test_frac, s)?.report),
                r,
                ctx.seed,
            )?;
            (format!("eval_svm_{mode}"), summary)
        }
        other => return Err(UsageError(format!("model: unknown model {other:?} (expected cnn or svm)")).into()),
    };
    ctx.create_out()?;
    ctx.write(&format!("{name}_summary.csv"), summary.to_csv())?;
    ctx.write(&format!("{name}_table.txt"), summary.render_table())?;
    let top1 = summary.get("top1").expect("top1 aggregate");
    log(
        "eval",
        "repetitions aggregated",
        &[
            ("name", name),
            ("repetitions", r.to_string()),
            ("top1_mean", format!("{:.4}", top1.mean)),
            ("top1_std", format!("{:.4}", top1.std)),
        ],
    );
    Ok(())
}

// ------------------------------------------------------------------ ensemble and saliency

fn load_networks(paths: &[PathBuf]) -> Result<Vec<Network>> {
    paths
        .iter()
        .map(|p| load_checkpoint(p).with_context(|| format!("loading checkpoint {}", p.display())))
        .collect()
}

pub fn ensemble(ctx: &Ctx, manifest: Option<PathBuf>, checkpoints: Vec<PathBuf>) -> Result<()> {
    let paths = if checkpoints.is_empty() { ctx.cfg.ensemble.checkpoints.clone() } else { checkpoints };
    if paths.is_empty() {
        return Err(UsageError("at least one checkpoint is required (--checkpoint or ensemble.checkpoints)".into()).into());
    }
    let data = load_dataset(&ctx.manifest_path(manifest)?)?;
    let nets = load_networks(&paths)?;
    let plan = split_dataset(&data.labels, split_fractions(ctx), ctx.seed)?;
    let test: Vec<Datacube> = plan.test.iter().map(|&i| data.cubes[i].clone()).collect();
    let truth: Vec<usize> = plan.test.iter().map(|&i| data.labels[i]).collect();
    let refs: Vec<&Network> = nets.iter().collect();
    let probs = ensemble_predict(&refs, &test)?;
    let report = evaluate(&probs, &truth)?;
    ctx.create_out()?;
    log("ensemble", "members loaded", &[("members", nets.len().to_string()), ("test", test.len().to_string())]);
    ctx.write_report("ensemble", "ensemble", &report, &data.manifest.class_names())
}

pub fn saliency(
    ctx: &Ctx,
    manifest: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    cubes: Vec<usize>,
    target: Option<usize>,
) -> Result<()> {
    let s = &ctx.cfg.saliency;
    let path = checkpoint
        .or_else(|| s.checkpoint.clone())
        .ok_or_else(|| UsageError("a checkpoint is required (--checkpoint or saliency.checkpoint)".into()))?;
    let indices = if !cubes.is_empty() {
        cubes
    } else if !s.cubes.is_empty() {
        s.cubes.clone()
    } else {
        vec![0]
    };
    let target = target.or(s.target);
    let data = load_dataset(&ctx.manifest_path(manifest)?)?;
    let net = load_networks(&[path])?.remove(0);
    ctx.create_out()?;
    for i in indices {
        let cube = data
            .cubes
            .get(i)
            .ok_or_else(|| UsageError(format!("cube index {i} outside the manifest ({} cubes)", data.cubes.len())))?;
        let map = saliency_map(&net, cube, target)?;
        map.save_pgm(ctx.path(&format!("saliency_{i:05}.pgm")))?;
        map.save_csv(ctx.path(&format!("saliency_{i:05}.csv")))?;
        let max = map.values.iter().copied().fold(0.0, f64::max);
        log(
            "saliency",
            "map written",
            &[
                ("cube", i.to_string()),
                ("label", data.labels[i].to_string()),
                ("target", map.target.to_string()),
                ("height", map.height.to_string()),
                ("width", map.width.to_string()),
                ("max", format!("{max:.4e}")),
            ],
        );
    }
    Ok(())
}

// ------------------------------------------------------------------ report

pub fn report(ctx: &Ctx) -> Result<()> {
    let mut reports = Vec::new();
    let mut tables = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(&ctx.out)
        .with_context(|| format!("reading {}", ctx.out.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        if name.ends_with("_report.json") {
            let text = fs::read_to_string(&p)?;
            let r: ReportFile = serde_json::from_str(&text)
                .map_err(|e| hyperseed::Error::Format(format!("{name}: {e}")))?;
            reports.push(r);
        } else if name.ends_with("_table.txt") {
            tables.push((name.trim_end_matches("_table.txt").to_string(), fs::read_to_string(&p)?));
        }
    }
    let mut out = String::from("# Results\n\n");
    if !reports.is_empty() {
        out.push_str("| run | seed | test | top-1 % | top-2 % | macro P | macro R | macro F |\n");
        out.push_str("|---|---|---|---|---|---|---|---|\n");
        for r in &reports {
            let m = &r.metrics;
            out.push_str(&format!(
                "| {} | {} | {} | {:.2} | {:.2} | {:.4} | {:.4} | {:.4} |\n",
                r.name,
                r.seed,
                r.test_samples,
                100.0 * m.top1,
                100.0 * m.top2,
                m.macro_precision,
                m.macro_recall,
                m.macro_f
            ));
        }
    }
    for (name, table) in &tables {
        out.push_str(&format!("\n## {name}\n\n```\n{table}```\n"));
    }
    ctx.write("report.md", &out)?;
    log(
        "report",
        "summary written",
        &[("runs", reports.len().to_string()), ("repetition_tables", tables.len().to_string())],
    );
    Ok(())
}
