//! End-to-end finite-difference checks of both networks at tiny sizes: the
//! full training loss against a random sample of every parameter tensor.

use csi2video_nn::gradcheck::{check_gradients_sampled, random_tensor};
use csi2video_nn::{ParamSet, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    generator_batch_loss, mapper_batch_loss, DenseBottleneck, GeneratorConfig, GeneratorSample,
    InputNormalization, LossWeights, MapperConfig, MapperSample, Result,
};
use crate::image::{Frame, MaskImage};
use crate::pose::{Jhm, Paf, N_KEYPOINTS, N_PAF_CHANNELS};

/// Elements probed per parameter tensor.
pub const PARAM_SAMPLES: usize = 12;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("sized")
}

/// Perturbs every parameter slightly so zero-initialised biases do not leave
/// units sitting exactly on a ReLU kink.
fn jitter(params: &mut ParamSet, rng: &mut ChaCha8Rng) {
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            *v += 0.05 * rng.random_range(-1.0..1.0);
        }
    }
}

pub fn tiny_mapper() -> MapperConfig {
    MapperConfig {
        in_channels: 9,
        in_h: 12,
        in_w: 20,
        encoder_channels: [3, 4, 4],
        n_residual_blocks: 1,
        head_channels: 3,
        dense: Some(DenseBottleneck {
            hidden: 6,
            channels: 2,
            grid_h: 4,
            grid_w: 8,
        }),
        jhm_h: 8,
        jhm_w: 16,
        paf_h: 8,
        paf_w: 16,
        normalization: InputNormalization {
            mean: 0.5,
            std: 2.0,
        },
    }
}

pub fn tiny_generator() -> GeneratorConfig {
    GeneratorConfig {
        height: 32,
        width: 64,
        n_identity: 1,
        channels: [3, 4, 4],
        n_residual_blocks: 1,
    }
}

/// Worst relative error of the mapper's total loss gradient on a random
/// two-sample batch at [`tiny_mapper`] size.
pub fn mapper_gradient_check(seed: u64) -> Result<f64> {
    let cfg = tiny_mapper();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = cfg.init_params(seed)?;
    jitter(&mut params, &mut rng);
    let samples: Vec<MapperSample> = (0..2)
        .map(|_| MapperSample {
            input: uniform(&mut rng, &[9, cfg.in_h, cfg.in_w], 0.0, 3.0),
            jhm: Jhm(uniform(
                &mut rng,
                &[N_KEYPOINTS, cfg.jhm_h, cfg.jhm_w],
                0.0,
                1.0,
            )),
            paf: Paf(uniform(
                &mut rng,
                &[N_PAF_CHANNELS, cfg.paf_h, cfg.paf_w],
                -1.0,
                1.0,
            )),
        })
        .collect();
    let batch: Vec<&MapperSample> = samples.iter().collect();
    let w = LossWeights::default();
    check_gradients_sampled(&[], &params, Some(PARAM_SAMPLES), &mut rng, |g, p, _| {
        Ok(mapper_batch_loss(g, &cfg, p, &batch, &w)?.0)
    })
}

/// Worst relative error of the generator's total loss gradient on a random
/// two-sample batch at [`tiny_generator`] size, with half-size maps and
/// identity frame so the input resizes are exercised.
pub fn generator_gradient_check(seed: u64) -> Result<f64> {
    let cfg = tiny_generator();
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = cfg.init_params(seed)?;
    jitter(&mut params, &mut rng);
    let frame = |rng: &mut ChaCha8Rng, fh, fw| Frame(uniform(rng, &[3, fh, fw], 0.0, 1.0));
    let identity = [frame(&mut rng, h / 2, w / 2)];
    let background = frame(&mut rng, h, w);
    let samples: Vec<GeneratorSample> = (0..2)
        .map(|_| {
            let mask = (0..h * w).map(|_| rng.random_bool(0.3)).collect();
            GeneratorSample {
                jhm: Jhm(uniform(&mut rng, &[N_KEYPOINTS, h / 4, w / 4], 0.0, 1.0)),
                paf: Paf(random_tensor(&mut rng, &[N_PAF_CHANNELS, h / 4, w / 4])),
                frame: frame(&mut rng, h, w),
                mask: MaskImage::from_vec(h, w, mask).expect("sized"),
            }
        })
        .collect();
    let batch: Vec<&GeneratorSample> = samples.iter().collect();
    let lw = LossWeights::default();
    check_gradients_sampled(&[], &params, Some(PARAM_SAMPLES), &mut rng, |g, p, _| {
        Ok(generator_batch_loss(g, &cfg, p, &batch, &identity, &background, &lw)?.0)
    })
}
