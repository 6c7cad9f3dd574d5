use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{ensure, Context, Result};
use csi2video::dataset::{emit_dataset, frame_file_name, Dataset};
use csi2video::image::Frame;
use csi2video::metrics::{generated_mask, write_report, IouConvention};
use csi2video::networks::{
    generator_forward_batch, mapper_forward_batch, train_generator, train_mapper, EpochLog,
    InputNormalization, TrainOutcome, TrainingConfig,
};
use csi2video::pipeline::{
    decode_skeletons, evaluate, generator_samples, mapper_samples, train_split_len, EvalOptions,
    InputCache, PredictionWriter,
};
use csi2video::pose::AssemblyParams;
use csi2video::preprocess::PreprocessConfig;
use csi2video::sim::{render_frame, RenderStyle, SceneConfig};
use csi2video_nn::checkpoint;

use crate::run::{load_kv, usage, write_atomic, OutputLock, RunManifest, MANIFEST_FILE};
use crate::{
    Command, ConfigArgs, Convention, EvalArgs, InferArgs, PreprocessArgs, RenderArgs, Split,
    SynthArgs, TrainGeneratorArgs, TrainMapperArgs,
};

pub const MAPPER_CHECKPOINT: &str = "mapper.ckpt";
pub const GENERATOR_CHECKPOINT: &str = "generator.ckpt";
pub const TRAINING_CONFIG: &str = "training.cfg";
pub const TRAINING_LOG: &str = "log.jsonl";

/// Person colours for `render`, reused cyclically.
const PALETTE: [[f64; 3]; 4] = [
    [0.85, 0.2, 0.15],
    [0.15, 0.45, 0.85],
    [0.2, 0.7, 0.3],
    [0.9, 0.7, 0.1],
];

/// Frames per forward pass during inference.
const INFER_BATCH: usize = 16;

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(&a),
        Command::Preprocess(a) => preprocess(&a),
        Command::TrainMapper(a) => train_mapper_cmd(&a),
        Command::TrainGenerator(a) => train_generator_cmd(&a),
        Command::Infer(a) => infer(&a),
        Command::Eval(a) => eval(&a),
        Command::Render(a) => render(&a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn check_fraction(f: f64) -> Result<()> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(usage(format!(
            "--train-fraction must be in (0, 1], got {f}"
        )));
    }
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut kv = load_kv(a.cfg.config.as_deref(), &a.cfg.set)?;
    if let Some(s) = a.cfg.seed {
        kv.set("seed", s);
    }
    let scene = SceneConfig::from_kv(&kv).context("scene configuration")?;
    let mut manifest = RunManifest::start("synth", a.cfg.config.as_deref(), Some(scene.seed));
    let _lock = OutputLock::directory(&a.out)?;
    let summary = emit_dataset(&scene, &a.out)?;
    write_text(&a.out.join("scene.cfg"), &scene.to_kv().to_text())?;
    manifest.output(&a.out);
    manifest.finish(&a.out.join(MANIFEST_FILE))?;
    println!(
        "synth: {} frames, {} CSI records -> {}",
        summary.n_frames,
        summary.n_csi_records,
        a.out.display()
    );
    Ok(())
}

fn preprocess(a: &PreprocessArgs) -> Result<()> {
    let kv = load_kv(a.cfg.config.as_deref(), &a.cfg.set)?;
    let cfg = PreprocessConfig::from_kv(&kv).context("preprocess configuration")?;
    let mut manifest = RunManifest::start("preprocess", a.cfg.config.as_deref(), a.cfg.seed);
    let dataset = Dataset::open(&a.input)?;
    let _lock = OutputLock::directory(&a.out)?;
    let cache = InputCache::create(&a.out, &dataset, &cfg)?;
    manifest.input(&a.input).output(&a.out);
    manifest.finish(&a.out.join(MANIFEST_FILE))?;
    println!(
        "preprocess: {} of {} frames cached -> {}",
        cache.frame_ids.len(),
        dataset.labels.len(),
        a.out.display()
    );
    Ok(())
}

fn training_config(c: &ConfigArgs, epochs: Option<u32>) -> Result<TrainingConfig> {
    let mut kv = load_kv(c.config.as_deref(), &c.set)?;
    if let Some(s) = c.seed {
        kv.set("seed", s);
    }
    if let Some(e) = epochs {
        kv.set("epochs", e);
    }
    TrainingConfig::from_kv(&kv).context("training configuration")
}

/// Streams epoch lines to `log.jsonl` and progress to stderr.
fn run_logged(
    out: &Path,
    what: &str,
    train: impl FnOnce(&mut dyn FnMut(&EpochLog)) -> csi2video::networks::Result<TrainOutcome>,
) -> Result<TrainOutcome> {
    let path = out.join(TRAINING_LOG);
    let mut log = BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    );
    let mut io_error = None;
    let outcome = train(&mut |e: &EpochLog| {
        eprintln!(
            "{what}: epoch {} lr {:.3e} loss {:.6}",
            e.epoch + 1,
            e.lr,
            e.loss
        );
        if let Err(err) = writeln!(log, "{}", e.to_json_line()).and_then(|_| log.flush()) {
            io_error.get_or_insert(err);
        }
    })
    .with_context(|| format!("training {what}"))?;
    if let Some(err) = io_error {
        return Err(err).with_context(|| format!("writing {}", path.display()));
    }
    Ok(outcome)
}

fn train_mapper_cmd(a: &TrainMapperArgs) -> Result<()> {
    check_fraction(a.train_fraction)?;
    let mut cfg = training_config(&a.cfg, a.epochs)?;
    let mut manifest = RunManifest::start("train-mapper", a.cfg.config.as_deref(), Some(cfg.seed));
    let cache = InputCache::open(&a.data)?;
    let inputs = cache.inputs()?;
    ensure!(
        !inputs.is_empty(),
        "{} holds no cached inputs",
        a.data.display()
    );
    let n_train = train_split_len(inputs.len(), a.train_fraction);
    ensure!(
        n_train > 0,
        "training split is empty ({} inputs)",
        inputs.len()
    );
    let shape = inputs[0].data.shape();
    (cfg.mapper.in_channels, cfg.mapper.in_h, cfg.mapper.in_w) = (shape[0], shape[1], shape[2]);
    let train = &inputs[..n_train];
    cfg.mapper.normalization = InputNormalization::fit(train.iter().map(|t| &t.data));
    let samples = mapper_samples(train, &cache.labels, &cache.meta, &cfg.maps)?;
    let params = cfg.mapper.init_params(cfg.seed)?;
    let _lock = OutputLock::directory(&a.out)?;
    let tc = cfg.mapper_train();
    let outcome = run_logged(&a.out, "mapper", |cb| {
        train_mapper(&cfg.mapper, params, &samples, &tc, cb)
    })?;
    checkpoint::save(
        &a.out.join(MAPPER_CHECKPOINT),
        &outcome.params,
        Some(&outcome.adam),
    )?;
    write_text(&a.out.join(TRAINING_CONFIG), &cfg.to_kv().to_text())?;
    write_text(
        &a.out.join("preprocess.cfg"),
        &cache.config.to_kv().to_text(),
    )?;
    manifest.input(&a.data).output(&a.out);
    manifest.finish(&a.out.join(MANIFEST_FILE))?;
    println!(
        "train-mapper: {} epochs on {} of {} frames, final loss {:.6} -> {}",
        outcome.log.len(),
        n_train,
        inputs.len(),
        outcome.log.last().map_or(f64::NAN, |e| e.loss),
        a.out.display()
    );
    Ok(())
}

/// `n` identity frames starting at `first` (or at the dataset's first frame).
fn identity_frames(dataset: &Dataset, first: Option<u64>, n: usize) -> Result<Vec<Frame>> {
    let start = match first {
        Some(id) => dataset
            .labels
            .iter()
            .position(|l| l.frame_id == id)
            .ok_or_else(|| {
                usage(format!(
                    "identity frame {id} is not in {}",
                    dataset.dir.display()
                ))
            })?,
        None => 0,
    };
    let ids: Vec<u64> = dataset
        .labels
        .iter()
        .skip(start)
        .take(n)
        .map(|l| l.frame_id)
        .collect();
    ensure!(
        ids.len() == n,
        "need {n} identity frames from {}",
        dataset.dir.display()
    );
    ids.iter().map(|&id| Ok(dataset.frame(id)?)).collect()
}

fn train_generator_cmd(a: &TrainGeneratorArgs) -> Result<()> {
    check_fraction(a.train_fraction)?;
    if a.stride == 0 {
        return Err(usage("--stride must be >= 1"));
    }
    let mut cfg = training_config(&a.cfg, a.epochs)?;
    let mut manifest =
        RunManifest::start("train-generator", a.cfg.config.as_deref(), Some(cfg.seed));
    let dataset = Dataset::open(&a.data)?;
    (cfg.generator.height, cfg.generator.width) = (dataset.meta.height, dataset.meta.width);
    let ids: Vec<u64> = dataset
        .labels
        .iter()
        .step_by(a.stride)
        .map(|l| l.frame_id)
        .collect();
    let n_train = train_split_len(ids.len(), a.train_fraction);
    ensure!(
        n_train > 0,
        "training split is empty ({} frames)",
        ids.len()
    );
    let identity = identity_frames(&dataset, a.identity_frame, cfg.generator.n_identity)?;
    let background = dataset.background()?;
    let samples = generator_samples(&dataset, &ids[..n_train], &cfg.maps)?;
    let params = cfg.generator.init_params(cfg.seed)?;
    let _lock = OutputLock::directory(&a.out)?;
    let tc = cfg.generator_train();
    let outcome = run_logged(&a.out, "generator", |cb| {
        train_generator(
            &cfg.generator,
            params,
            &samples,
            &identity,
            &background,
            &tc,
            cb,
        )
    })?;
    checkpoint::save(
        &a.out.join(GENERATOR_CHECKPOINT),
        &outcome.params,
        Some(&outcome.adam),
    )?;
    write_text(&a.out.join(TRAINING_CONFIG), &cfg.to_kv().to_text())?;
    manifest.input(&a.data).output(&a.out);
    manifest.finish(&a.out.join(MANIFEST_FILE))?;
    println!(
        "train-generator: {} epochs on {} of {} frames, final loss {:.6} -> {}",
        outcome.log.len(),
        n_train,
        ids.len(),
        outcome.log.last().map_or(f64::NAN, |e| e.loss),
        a.out.display()
    );
    Ok(())
}

fn load_model_config(dir: &Path) -> Result<TrainingConfig> {
    let path = dir.join(TRAINING_CONFIG);
    let kv = load_kv(Some(&path), &[])?;
    TrainingConfig::from_kv(&kv).with_context(|| format!("model configuration {}", path.display()))
}

fn infer(a: &InferArgs) -> Result<()> {
    check_fraction(a.train_fraction)?;
    let cache = InputCache::open(&a.cache)?;
    let mut mcfg = load_model_config(&a.mapper)?;
    let (mparams, _) = checkpoint::load(&a.mapper.join(MAPPER_CHECKPOINT))?;
    let n = cache.frame_ids.len();
    let n_train = train_split_len(n, a.train_fraction);
    let ids = match a.split {
        Split::All => &cache.frame_ids[..],
        Split::Train => &cache.frame_ids[..n_train],
        Split::Test => &cache.frame_ids[n_train..],
    };
    let generator = match (&a.generator, &a.data) {
        (Some(dir), Some(data)) => {
            let gcfg = load_model_config(dir)?.generator;
            let (gparams, _) = checkpoint::load(&dir.join(GENERATOR_CHECKPOINT))?;
            let dataset = Dataset::open(data)?;
            let identity = identity_frames(&dataset, a.identity_frame, gcfg.n_identity)?;
            Some((gcfg, gparams, identity, dataset.background()?))
        }
        _ => None,
    };
    let assembly = AssemblyParams {
        max_skeletons: a.max_persons,
        ..AssemblyParams::default()
    };
    let mut manifest = RunManifest::start("infer", None, a.seed);
    let _lock = OutputLock::directory(&a.out)?;
    let mut writer = PredictionWriter::create(&a.out, cache.meta)?;
    for chunk in ids.chunks(INFER_BATCH) {
        let inputs = chunk
            .iter()
            .map(|&id| cache.input(id))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(t) = inputs.first() {
            let s = t.data.shape();
            (mcfg.mapper.in_channels, mcfg.mapper.in_h, mcfg.mapper.in_w) = (s[0], s[1], s[2]);
        }
        let maps = mapper_forward_batch(
            &inputs.iter().map(|t| &t.data).collect::<Vec<_>>(),
            &mcfg.mapper,
            &mparams,
        )?;
        let frames = match &generator {
            Some((gcfg, gparams, identity, _)) => {
                let pairs: Vec<_> = maps.iter().map(|(j, p)| (j, p)).collect();
                Some(generator_forward_batch(&pairs, identity, gcfg, gparams)?)
            }
            None => None,
        };
        for (i, (&id, (jhm, paf))) in chunk.iter().zip(&maps).enumerate() {
            writer.write_maps(id, jhm, paf)?;
            let persons =
                decode_skeletons(jhm, paf, &assembly, cache.meta.width, cache.meta.height)?;
            let ts = cache
                .labels
                .iter()
                .find(|l| l.frame_id == id)
                .map_or(0, |l| l.timestamp_us);
            writer.add_skeletons(id, ts, persons);
            if let (Some(frames), Some((_, _, _, bg))) = (&frames, &generator) {
                let frame = frames[i].quantized();
                writer.write_frame(id, &frame, &generated_mask(&frame, bg, a.mask_tolerance)?)?;
            }
        }
    }
    let count = writer.finish()?;
    manifest.input(&a.cache).input(&a.mapper);
    if let (Some(g), Some(d)) = (&a.generator, &a.data) {
        manifest.input(g).input(d);
    }
    manifest.output(&a.out);
    manifest.finish(&a.out.join(MANIFEST_FILE))?;
    println!(
        "infer: {count} frames{} -> {}",
        if generator.is_some() {
            " with generated images"
        } else {
            ""
        },
        a.out.display()
    );
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let mut opts = EvalOptions {
        convention: match a.iou_convention {
            Convention::AtLeast => IouConvention::AtLeast,
            Convention::AtMost => IouConvention::AtMost,
        },
        ..EvalOptions::default()
    };
    if let Some(v) = &a.pck_alphas {
        opts.pck_alphas = v.clone();
    }
    if let Some(v) = &a.iou_alphas {
        opts.iou_alphas = v.clone();
    }
    let gt = Dataset::open(&a.data)?;
    let pred = Dataset::open(&a.pred)?;
    let report = evaluate(&gt, &pred, &opts)?;
    let mut manifest = RunManifest::start("eval", None, a.seed);
    let mut lock_path = a.out.as_os_str().to_owned();
    lock_path.push(".lock");
    let _lock = OutputLock::acquire(lock_path.into())?;
    write_report(&report, &a.out)?;
    manifest.input(&a.data).input(&a.pred).output(&a.out);
    let mut manifest_path = a.out.as_os_str().to_owned();
    manifest_path.push(".manifest.json");
    manifest.finish(Path::new(&manifest_path))?;
    let pck = report.pck.as_ref().and_then(|p| p.mean_at(0.2));
    let miou = report.iou.as_ref().map(|r| r.miou);
    let show = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "eval: PCK@0.2 {} mIoU {} -> {}",
        show(pck),
        show(miou),
        a.out.display()
    );
    Ok(())
}

fn render(a: &RenderArgs) -> Result<()> {
    let pred = Dataset::open(&a.pred)?;
    let style = RenderStyle {
        limb_px: a.limb_px,
        head_radius_px: a.head_radius_px,
    };
    let (h, w) = (pred.meta.height, pred.meta.width);
    let mut manifest = RunManifest::start("render", None, a.seed);
    let _lock = OutputLock::directory(&a.out)?;
    for l in &pred.labels {
        let colors: Vec<[f64; 3]> = (0..l.persons.len())
            .map(|i| PALETTE[i % PALETTE.len()])
            .collect();
        let (frame, _) = render_frame(&l.persons, &colors, h, w, &style);
        write_atomic(
            &a.out.join(frame_file_name(l.frame_id)),
            &frame.encode_png()?,
        )?;
    }
    manifest.input(&a.pred).output(&a.out);
    manifest.finish(&a.out.join(MANIFEST_FILE))?;
    println!(
        "render: {} frames -> {}",
        pred.labels.len(),
        a.out.display()
    );
    Ok(())
}
