use csi2video_nn::{
    adam_step, AdamConfig, AdamState, Graph, LrSchedule, NnError, ParamSet, Tensor, Var,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::generator::{generator_graph, GeneratorConfig};
use super::loss::{graph_sq_error, map_coefficients, mask_coefficients, LossWeights, WeightMode};
use super::mapper::{mapper_graph, DenseBottleneck, InputNormalization, MapperConfig};
use super::{NetworkError, Result};
use crate::config::{format_array, ConfigError, KeyValues};
use crate::dataset::MapSpec;
use crate::image::{Frame, MaskImage};
use crate::pose::{Jhm, Paf};

/// One optimisation run's knobs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
    pub weights: LossWeights,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapperSample {
    pub input: Tensor,
    pub jhm: Jhm,
    pub paf: Paf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSample {
    pub jhm: Jhm,
    pub paf: Paf,
    pub frame: Frame,
    pub mask: MaskImage,
}

/// Per-epoch record; losses are means per training sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u32,
    pub lr: f64,
    pub loss: f64,
    /// `(name, value)` of the two weighted terms making up `loss`.
    pub terms: Vec<(String, f64)>,
}

impl EpochLog {
    pub fn to_json_line(&self) -> String {
        let mut obj = serde_json::Map::new();
        obj.insert("epoch".into(), self.epoch.into());
        obj.insert("lr".into(), self.lr.into());
        obj.insert("loss".into(), self.loss.into());
        for (k, v) in &self.terms {
            obj.insert(k.clone(), (*v).into());
        }
        serde_json::Value::Object(obj).to_string()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamSet,
    pub adam: AdamState,
    pub log: Vec<EpochLog>,
}

/// Shared loop: seeded shuffle, mini-batches, Adam, step-decay schedule.
/// `batch_loss` builds the summed loss of one batch and returns the scalar
/// node plus the two unweighted terms.
fn run_training<F>(
    mut params: ParamSet,
    n_samples: usize,
    tc: &TrainConfig,
    term_names: [&str; 2],
    on_epoch: &mut dyn FnMut(&EpochLog),
    mut batch_loss: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&mut Graph, &ParamSet, &[usize]) -> Result<(Var, [f64; 2])>,
{
    if n_samples == 0 {
        return Err(NetworkError::EmptyTrainingSet);
    }
    let batch_size = tc.batch_size.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut adam = AdamState::new();
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..n_samples).collect();
    let mut batch_id = 0usize;
    for epoch in 0..tc.epochs {
        let lr = tc.schedule.lr_at(epoch);
        order.shuffle(&mut rng);
        let (mut total, mut terms) = (0.0, [0.0; 2]);
        for chunk in order.chunks(batch_size) {
            let mut g = Graph::new();
            let (loss, t) = batch_loss(&mut g, &params, chunk)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(NetworkError::NonFiniteLoss {
                    epoch,
                    batch: batch_id,
                });
            }
            g.backward(loss)?;
            let grads = g.param_grads()?;
            adam_step(&mut params, &grads, &mut adam, lr, &tc.adam).map_err(|e| match e {
                NnError::NonFiniteGradient(param) => NetworkError::NonFiniteGradient {
                    epoch,
                    batch: batch_id,
                    param,
                },
                other => other.into(),
            })?;
            total += value;
            terms[0] += t[0];
            terms[1] += t[1];
            batch_id += 1;
        }
        let n = n_samples as f64;
        let entry = EpochLog {
            epoch,
            lr,
            loss: total / n,
            terms: term_names
                .iter()
                .zip(terms)
                .map(|(k, v)| (k.to_string(), v / n))
                .collect(),
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { params, adam, log })
}

fn stack_items<'a>(items: impl Iterator<Item = &'a Tensor>) -> Result<Tensor> {
    Ok(Tensor::stack(&items.collect::<Vec<_>>())?)
}

/// Trains the mapper on `samples` (the training split) from `params`.
pub fn train_mapper(
    cfg: &MapperConfig,
    params: ParamSet,
    samples: &[MapperSample],
    tc: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    tc.weights.validate().map_err(ConfigError::Invalid)?;
    run_training(
        params,
        samples.len(),
        tc,
        ["loss_jhm", "loss_paf"],
        on_epoch,
        |g, p, idx| {
            let batch: Vec<&MapperSample> = idx.iter().map(|&i| &samples[i]).collect();
            mapper_batch_loss(g, cfg, p, &batch, &tc.weights)
        },
    )
}

/// Builds `λ_J·L_JHM + λ_P·L_PAF` summed over `batch` on `g`; also returns
/// the two unweighted terms.
pub fn mapper_batch_loss(
    g: &mut Graph,
    cfg: &MapperConfig,
    params: &ParamSet,
    batch: &[&MapperSample],
    w: &LossWeights,
) -> Result<(Var, [f64; 2])> {
    let input = stack_items(batch.iter().map(|s| &s.input))?;
    let tj = stack_items(batch.iter().map(|s| &s.jhm.0))?;
    let tp = stack_items(batch.iter().map(|s| &s.paf.0))?;
    let (j, pf) = mapper_graph(g, cfg, params, &input)?;
    let lj = graph_sq_error(
        g,
        j,
        &tj,
        &map_coefficients(&tj, w.alpha_j, w.beta_j, w.mode),
    )?;
    let lp = graph_sq_error(
        g,
        pf,
        &tp,
        &map_coefficients(&tp, w.alpha_p, w.beta_p, w.mode),
    )?;
    let total = g.lincomb(&[(lj, w.lambda_j), (lp, w.lambda_p)])?;
    let terms = [g.value(lj).data()[0], g.value(lp).data()[0]];
    Ok((total, terms))
}

/// Trains the generator against ground-truth frames, masks and the shared
/// background `b`; `identity` holds the `l` identity frames.
pub fn train_generator(
    cfg: &GeneratorConfig,
    params: ParamSet,
    samples: &[GeneratorSample],
    identity: &[Frame],
    background: &Frame,
    tc: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    tc.weights.validate().map_err(ConfigError::Invalid)?;
    for s in samples {
        if (s.frame.height(), s.frame.width()) != (cfg.height, cfg.width)
            || (s.mask.height(), s.mask.width()) != (cfg.height, cfg.width)
        {
            return Err(super::shape_err(format!(
                "training frame {}x{} / mask {}x{}, generator {}x{}",
                s.frame.height(),
                s.frame.width(),
                s.mask.height(),
                s.mask.width(),
                cfg.height,
                cfg.width
            )));
        }
    }
    if (background.height(), background.width()) != (cfg.height, cfg.width) {
        return Err(super::shape_err(
            "background size differs from generator output",
        ));
    }
    run_training(
        params,
        samples.len(),
        tc,
        ["loss_fg", "loss_bg"],
        on_epoch,
        |g, p, idx| {
            let batch: Vec<&GeneratorSample> = idx.iter().map(|&i| &samples[i]).collect();
            generator_batch_loss(g, cfg, p, &batch, identity, background, &tc.weights)
        },
    )
}

/// Builds `λ_f·L_f + λ_b·L_b` summed over `batch` on `g`; also returns the
/// two unweighted terms.
pub fn generator_batch_loss(
    g: &mut Graph,
    cfg: &GeneratorConfig,
    params: &ParamSet,
    batch: &[&GeneratorSample],
    identity: &[Frame],
    background: &Frame,
    w: &LossWeights,
) -> Result<(Var, [f64; 2])> {
    let jhm = stack_items(batch.iter().map(|s| &s.jhm.0))?;
    let paf = stack_items(batch.iter().map(|s| &s.paf.0))?;
    let frames = stack_items(batch.iter().map(|s| &s.frame.0))?;
    let fg_masks: Vec<Tensor> = batch
        .iter()
        .map(|s| mask_coefficients(&s.mask, true))
        .collect();
    let bg_masks: Vec<Tensor> = batch
        .iter()
        .map(|s| mask_coefficients(&s.mask, false))
        .collect();
    let fg = stack_items(fg_masks.iter())?;
    let bgm = stack_items(bg_masks.iter())?;
    let bgs = stack_items(std::iter::repeat_n(&background.0, batch.len()))?;
    let out = generator_graph(g, cfg, params, &jhm, &paf, identity)?;
    let lf = graph_sq_error(g, out, &frames, &fg)?;
    let lb = graph_sq_error(g, out, &bgs, &bgm)?;
    let total = g.lincomb(&[(lf, w.lambda_f), (lb, w.lambda_b)])?;
    let terms = [g.value(lf).data()[0], g.value(lb).data()[0]];
    Ok((total, terms))
}

/// Everything `train-mapper` / `train-generator` read from a training config file.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub seed: u64,
    pub epochs: u32,
    pub weights: LossWeights,
    pub maps: MapSpec,
    pub mapper: MapperConfig,
    pub mapper_batch_size: usize,
    pub mapper_schedule: LrSchedule,
    pub generator: GeneratorConfig,
    pub generator_batch_size: usize,
    pub generator_schedule: LrSchedule,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            seed: 0,
            epochs: 20,
            weights: LossWeights::default(),
            maps: MapSpec::default(),
            mapper: MapperConfig::default(),
            mapper_batch_size: 8,
            mapper_schedule: LrSchedule::tenfold_every_five(1e-4),
            generator: GeneratorConfig::default(),
            generator_batch_size: 4,
            generator_schedule: LrSchedule::tenfold_every_five(1e-3),
        }
    }
}

const KEYS: &[&str] = &[
    "seed",
    "epochs",
    "lambda_j",
    "lambda_p",
    "lambda_f",
    "lambda_b",
    "alpha_j",
    "beta_j",
    "alpha_p",
    "beta_p",
    "loss_weight_mode",
    "map_height",
    "map_width",
    "map_sigma",
    "paf_width",
    "mapper_lr",
    "mapper_drop_every",
    "mapper_drop_factor",
    "mapper_batch_size",
    "mapper_channels",
    "mapper_residual_blocks",
    "mapper_head_channels",
    "mapper_dense_hidden",
    "mapper_dense_channels",
    "mapper_dense_grid",
    "mapper_input_mean",
    "mapper_input_std",
    "generator_lr",
    "generator_drop_every",
    "generator_drop_factor",
    "generator_batch_size",
    "generator_height",
    "generator_width",
    "generator_identity_frames",
    "generator_channels",
    "generator_residual_blocks",
];

impl TrainingConfig {
    pub fn known_keys() -> &'static [&'static str] {
        KEYS
    }

    pub fn from_kv(kv: &KeyValues) -> std::result::Result<Self, ConfigError> {
        kv.reject_unknown(KEYS)?;
        let mut c = TrainingConfig::default();
        kv.read("seed", &mut c.seed)?;
        kv.read("epochs", &mut c.epochs)?;
        let w = &mut c.weights;
        kv.read("lambda_j", &mut w.lambda_j)?;
        kv.read("lambda_p", &mut w.lambda_p)?;
        kv.read("lambda_f", &mut w.lambda_f)?;
        kv.read("lambda_b", &mut w.lambda_b)?;
        kv.read("alpha_j", &mut w.alpha_j)?;
        kv.read("beta_j", &mut w.beta_j)?;
        kv.read("alpha_p", &mut w.alpha_p)?;
        kv.read("beta_p", &mut w.beta_p)?;
        if let Some(m) = kv.get_raw("loss_weight_mode") {
            w.mode = WeightMode::parse(m).ok_or_else(|| ConfigError::BadValue {
                key: "loss_weight_mode".into(),
                value: m.into(),
            })?;
        }
        w.validate().map_err(ConfigError::Invalid)?;
        kv.read("map_height", &mut c.maps.height)?;
        kv.read("map_width", &mut c.maps.width)?;
        kv.read("map_sigma", &mut c.maps.sigma)?;
        kv.read("paf_width", &mut c.maps.paf_width)?;
        let m = &mut c.mapper;
        (m.jhm_h, m.paf_h, m.jhm_w, m.paf_w) =
            (c.maps.height, c.maps.height, c.maps.width, c.maps.width);
        kv.read("mapper_lr", &mut c.mapper_schedule.base_lr)?;
        kv.read("mapper_drop_every", &mut c.mapper_schedule.drop_every)?;
        kv.read("mapper_drop_factor", &mut c.mapper_schedule.drop_factor)?;
        kv.read("mapper_batch_size", &mut c.mapper_batch_size)?;
        kv.read_array("mapper_channels", &mut m.encoder_channels)?;
        kv.read("mapper_residual_blocks", &mut m.n_residual_blocks)?;
        kv.read("mapper_head_channels", &mut m.head_channels)?;
        let mut hidden = 0usize;
        let mut dense_channels = 16usize;
        let mut grid = [8usize, 16];
        kv.read("mapper_dense_hidden", &mut hidden)?;
        kv.read("mapper_dense_channels", &mut dense_channels)?;
        kv.read_array("mapper_dense_grid", &mut grid)?;
        m.dense = (hidden > 0).then_some(DenseBottleneck {
            hidden,
            channels: dense_channels,
            grid_h: grid[0],
            grid_w: grid[1],
        });
        let mut norm = InputNormalization::default();
        kv.read("mapper_input_mean", &mut norm.mean)?;
        kv.read("mapper_input_std", &mut norm.std)?;
        m.normalization = norm;
        kv.read("generator_lr", &mut c.generator_schedule.base_lr)?;
        kv.read("generator_drop_every", &mut c.generator_schedule.drop_every)?;
        kv.read(
            "generator_drop_factor",
            &mut c.generator_schedule.drop_factor,
        )?;
        kv.read("generator_batch_size", &mut c.generator_batch_size)?;
        let gcfg = &mut c.generator;
        kv.read("generator_height", &mut gcfg.height)?;
        kv.read("generator_width", &mut gcfg.width)?;
        kv.read("generator_identity_frames", &mut gcfg.n_identity)?;
        kv.read_array("generator_channels", &mut gcfg.channels)?;
        kv.read("generator_residual_blocks", &mut gcfg.n_residual_blocks)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        let bad = |s: String| Err(ConfigError::Invalid(s));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.mapper_batch_size == 0 || self.generator_batch_size == 0 {
            return bad("batch sizes must be >= 1".into());
        }
        for (name, s) in [
            ("mapper", self.mapper_schedule),
            ("generator", self.generator_schedule),
        ] {
            if !(s.base_lr >= 0.0
                && s.base_lr.is_finite()
                && s.drop_factor > 0.0
                && s.drop_every > 0)
            {
                return bad(format!("{name} schedule {s:?}"));
            }
        }
        if self.maps.height < 2
            || self.maps.width < 2
            || !(self.maps.sigma > 0.0)
            || !(self.maps.paf_width > 0.0)
        {
            return bad(format!("map spec {:?}", self.maps));
        }
        self.mapper
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.generator
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        let w = &self.weights;
        kv.set("seed", self.seed);
        kv.set("epochs", self.epochs);
        kv.set("lambda_j", w.lambda_j);
        kv.set("lambda_p", w.lambda_p);
        kv.set("lambda_f", w.lambda_f);
        kv.set("lambda_b", w.lambda_b);
        kv.set("alpha_j", w.alpha_j);
        kv.set("beta_j", w.beta_j);
        kv.set("alpha_p", w.alpha_p);
        kv.set("beta_p", w.beta_p);
        kv.set("loss_weight_mode", w.mode.name());
        kv.set("map_height", self.maps.height);
        kv.set("map_width", self.maps.width);
        kv.set("map_sigma", self.maps.sigma);
        kv.set("paf_width", self.maps.paf_width);
        let m = &self.mapper;
        kv.set("mapper_lr", self.mapper_schedule.base_lr);
        kv.set("mapper_drop_every", self.mapper_schedule.drop_every);
        kv.set("mapper_drop_factor", self.mapper_schedule.drop_factor);
        kv.set("mapper_batch_size", self.mapper_batch_size);
        kv.set("mapper_channels", format_array(&m.encoder_channels));
        kv.set("mapper_residual_blocks", m.n_residual_blocks);
        kv.set("mapper_head_channels", m.head_channels);
        let d = m.dense.unwrap_or(DenseBottleneck {
            hidden: 0,
            channels: 16,
            grid_h: 8,
            grid_w: 16,
        });
        kv.set("mapper_dense_hidden", d.hidden);
        kv.set("mapper_dense_channels", d.channels);
        kv.set("mapper_dense_grid", format_array(&[d.grid_h, d.grid_w]));
        kv.set("mapper_input_mean", m.normalization.mean);
        kv.set("mapper_input_std", m.normalization.std);
        let g = &self.generator;
        kv.set("generator_lr", self.generator_schedule.base_lr);
        kv.set("generator_drop_every", self.generator_schedule.drop_every);
        kv.set("generator_drop_factor", self.generator_schedule.drop_factor);
        kv.set("generator_batch_size", self.generator_batch_size);
        kv.set("generator_height", g.height);
        kv.set("generator_width", g.width);
        kv.set("generator_identity_frames", g.n_identity);
        kv.set("generator_channels", format_array(&g.channels));
        kv.set("generator_residual_blocks", g.n_residual_blocks);
        kv
    }

    pub fn mapper_train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.mapper_batch_size,
            schedule: self.mapper_schedule,
            adam: AdamConfig::default(),
            seed: self.seed,
            weights: self.weights,
        }
    }

    pub fn generator_train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.generator_batch_size,
            schedule: self.generator_schedule,
            adam: AdamConfig::default(),
            seed: self.seed,
            weights: self.weights,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{N_KEYPOINTS, N_PAF_CHANNELS};

    fn tiny_mapper() -> MapperConfig {
        MapperConfig {
            in_h: 8,
            in_w: 8,
            encoder_channels: [4, 4, 4],
            n_residual_blocks: 1,
            head_channels: 4,
            jhm_h: 4,
            jhm_w: 8,
            paf_h: 4,
            paf_w: 8,
            ..MapperConfig::default()
        }
    }

    fn toy_samples() -> Vec<MapperSample> {
        (0..2)
            .map(|k| {
                let input = Tensor::from_vec(
                    &[9, 8, 8],
                    (0..9 * 64)
                        .map(|i| ((i * (k + 2)) as f64 * 0.1).sin())
                        .collect(),
                )
                .unwrap();
                let mut jhm = Jhm::zeros(N_KEYPOINTS, 4, 8);
                jhm.0.data_mut()[k * 9 + 3] = 1.0;
                let mut paf = Paf::zeros(N_PAF_CHANNELS, 4, 8);
                paf.0.data_mut()[k * 5 + 1] = 0.8;
                MapperSample { input, jhm, paf }
            })
            .collect()
    }

    fn tc(lr: f64, epochs: u32) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 2,
            schedule: LrSchedule {
                base_lr: lr,
                drop_every: 1000,
                drop_factor: 1.0,
            },
            adam: AdamConfig::default(),
            seed: 3,
            weights: LossWeights::default(),
        }
    }

    #[test]
    fn mapper_overfits_two_samples() {
        let cfg = tiny_mapper();
        let samples = toy_samples();
        let out = train_mapper(
            &cfg,
            cfg.init_params(1).unwrap(),
            &samples,
            &tc(1e-3, 200),
            &mut |_| {},
        )
        .unwrap();
        let first = out.log[0].loss;
        let last = out.log.last().unwrap().loss;
        assert!(last <= 0.5 * first, "{first} -> {last}");
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let cfg = tiny_mapper();
        let p0 = cfg.init_params(1).unwrap();
        let out = train_mapper(&cfg, p0.clone(), &toy_samples(), &tc(0.0, 3), &mut |_| {}).unwrap();
        assert_eq!(out.params, p0);
    }

    #[test]
    fn same_seed_same_log() {
        let cfg = tiny_mapper();
        let run = || {
            train_mapper(
                &cfg,
                cfg.init_params(4).unwrap(),
                &toy_samples(),
                &tc(1e-3, 4),
                &mut |_| {},
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.log, b.log);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn non_finite_target_reports_batch() {
        let cfg = tiny_mapper();
        let mut samples = toy_samples();
        samples[1].jhm.0.data_mut()[0] = f64::NAN;
        let t = TrainConfig {
            batch_size: 1,
            ..tc(1e-3, 2)
        };
        let err =
            train_mapper(&cfg, cfg.init_params(1).unwrap(), &samples, &t, &mut |_| {}).unwrap_err();
        assert!(
            matches!(
                err,
                NetworkError::NonFiniteLoss {
                    epoch: 0,
                    batch: 0 | 1
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn non_finite_input_reports_gradient() {
        let cfg = tiny_mapper();
        let mut samples = toy_samples();
        samples[0].input.data_mut()[0] = f64::NAN;
        let t = TrainConfig {
            batch_size: 1,
            ..tc(1e-3, 2)
        };
        let err =
            train_mapper(&cfg, cfg.init_params(1).unwrap(), &samples, &t, &mut |_| {}).unwrap_err();
        assert!(
            matches!(err, NetworkError::NonFiniteGradient { epoch: 0, .. }),
            "{err}"
        );
    }

    #[test]
    fn empty_training_set_rejected() {
        let cfg = tiny_mapper();
        let err = train_mapper(
            &cfg,
            cfg.init_params(1).unwrap(),
            &[],
            &tc(1e-3, 1),
            &mut |_| {},
        )
        .unwrap_err();
        assert!(matches!(err, NetworkError::EmptyTrainingSet));
    }

    #[test]
    fn epoch_log_json_line() {
        let e = EpochLog {
            epoch: 2,
            lr: 0.5,
            loss: 1.25,
            terms: vec![("loss_jhm".into(), 1.0), ("loss_paf".into(), 0.5)],
        };
        let v: serde_json::Value = serde_json::from_str(&e.to_json_line()).unwrap();
        assert_eq!(v["epoch"], 2);
        assert_eq!(v["loss_paf"], 0.5);
        assert_eq!(v["lr"], 0.5);
    }

    #[test]
    fn training_config_round_trip_and_overrides() {
        let kv = KeyValues::parse(
            "mapper_lr = 6e-4\nmapper_drop_factor = 0.5\nmapper_dense_hidden = 256\nmap_height = 16\nloss_weight_mode = outside\n",
        )
        .unwrap();
        let c = TrainingConfig::from_kv(&kv).unwrap();
        assert_eq!(c.mapper_schedule.base_lr, 6e-4);
        assert_eq!(c.mapper.jhm_h, 16);
        assert_eq!(c.mapper.dense.unwrap().hidden, 256);
        assert_eq!(c.weights.mode, WeightMode::Outside);
        let back = TrainingConfig::from_kv(&c.to_kv()).unwrap();
        assert_eq!(back, c);
        assert_eq!(
            TrainingConfig::from_kv(&TrainingConfig::default().to_kv()).unwrap(),
            TrainingConfig::default()
        );
    }

    #[test]
    fn training_config_rejects_bad_values() {
        for text in [
            "epochs = 0",
            "beta_j = -1",
            "loss_weight_mode = sideways",
            "bogus = 1",
        ] {
            assert!(
                TrainingConfig::from_kv(&KeyValues::parse(text).unwrap()).is_err(),
                "{text}"
            );
        }
    }
}
