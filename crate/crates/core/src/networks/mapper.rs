use csi2video_nn::{Conv2d, Graph, ParamSet, ResidualBlock, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{shape_err, Result};
use crate::pose::{Jhm, Paf, N_KEYPOINTS, N_PAF_CHANNELS};

/// Fully connected bottleneck between encoder and heads:
/// flatten → `hidden` → `channels·grid_h·grid_w` → reshape to a feature grid.
///
/// A purely convolutional mapper has no route from a global CSI pattern to
/// an image position; the dense layers supply one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenseBottleneck {
    pub hidden: usize,
    pub channels: usize,
    pub grid_h: usize,
    pub grid_w: usize,
}

/// Affine input scaling `(x − mean) / std`, fitted on the training split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputNormalization {
    pub mean: f64,
    pub std: f64,
}

impl Default for InputNormalization {
    fn default() -> Self {
        InputNormalization {
            mean: 0.0,
            std: 1.0,
        }
    }
}

impl InputNormalization {
    /// Mean and population standard deviation over every element.
    pub fn fit<'a>(inputs: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for t in inputs {
            for &v in t.data() {
                n += 1;
                sum += v;
                sq += v * v;
            }
        }
        if n == 0 {
            return Self::default();
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        InputNormalization { mean, std }
    }

    pub fn apply(&self, t: &Tensor) -> Tensor {
        let data = t
            .data()
            .iter()
            .map(|v| (v - self.mean) / self.std)
            .collect();
        Tensor::from_vec(t.shape(), data).expect("same shape")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapperConfig {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    /// Output channels of the 7×7/s2, 7×7/s2 and 3×3/s1 encoder convolutions.
    pub encoder_channels: [usize; 3],
    pub n_residual_blocks: usize,
    pub head_channels: usize,
    pub dense: Option<DenseBottleneck>,
    pub jhm_h: usize,
    pub jhm_w: usize,
    pub paf_h: usize,
    pub paf_w: usize,
    pub normalization: InputNormalization,
}

impl Default for MapperConfig {
    fn default() -> Self {
        MapperConfig {
            in_channels: 9,
            in_h: 64,
            in_w: 128,
            encoder_channels: [32, 64, 128],
            n_residual_blocks: 4,
            head_channels: 32,
            dense: None,
            jhm_h: 32,
            jhm_w: 64,
            paf_h: 32,
            paf_w: 64,
            normalization: InputNormalization::default(),
        }
    }
}

pub(crate) fn strided_size(n: usize) -> usize {
    // 7×7 kernel, stride 2, padding 3
    (n - 1) / 2 + 1
}

struct Head {
    pre: Conv2d,
    post: Conv2d,
    out: Conv2d,
}

impl Head {
    fn new(name: &str, cin: usize, hidden: usize, cout: usize) -> Self {
        Head {
            pre: Conv2d::new(format!("{name}.pre"), cin, hidden, 3, 1),
            post: Conv2d::new(format!("{name}.post"), hidden, hidden, 3, 1),
            out: Conv2d::new(format!("{name}.out"), hidden, cout, 1, 1),
        }
    }

    fn convs(&self) -> [&Conv2d; 3] {
        [&self.pre, &self.post, &self.out]
    }

    /// conv3 → resize → conv3 → conv1, without the output activation.
    fn forward(&self, g: &mut Graph, p: &ParamSet, x: Var, h: usize, w: usize) -> Result<Var> {
        let z = self.pre.forward(g, p, x)?;
        let z = g.relu(z);
        let z = g.resize_bilinear(z, h, w)?;
        let z = self.post.forward(g, p, z)?;
        let z = g.relu(z);
        Ok(self.out.forward(g, p, z)?)
    }
}

struct Layers {
    encoder: [Conv2d; 3],
    blocks: Vec<ResidualBlock>,
    dense: Option<(Conv2d, Conv2d)>,
    jhm: Head,
    paf: Head,
}

impl MapperConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.in_channels,
            self.in_h,
            self.in_w,
            self.head_channels,
            self.jhm_h,
            self.jhm_w,
            self.paf_h,
            self.paf_w,
        ];
        if dims.contains(&0) || self.encoder_channels.contains(&0) {
            return Err(shape_err("mapper dimensions must be positive"));
        }
        if let Some(d) = self.dense {
            if [d.hidden, d.channels, d.grid_h, d.grid_w].contains(&0) {
                return Err(shape_err("dense bottleneck dimensions must be positive"));
            }
        }
        if !(self.normalization.std > 0.0
            && self.normalization.std.is_finite()
            && self.normalization.mean.is_finite())
        {
            return Err(shape_err("input normalization must be finite with std > 0"));
        }
        Ok(())
    }

    /// Spatial size after the two strided encoder stages.
    pub fn encoded_size(&self) -> (usize, usize) {
        (
            strided_size(strided_size(self.in_h)),
            strided_size(strided_size(self.in_w)),
        )
    }

    fn layers(&self) -> Layers {
        let [c1, c2, c3] = self.encoder_channels;
        let encoder = [
            Conv2d::new("mapper.enc1", self.in_channels, c1, 7, 2),
            Conv2d::new("mapper.enc2", c1, c2, 7, 2),
            Conv2d::new("mapper.enc3", c2, c3, 3, 1),
        ];
        let blocks = (0..self.n_residual_blocks)
            .map(|i| ResidualBlock::new(&format!("mapper.res{i}"), c3))
            .collect();
        let (dense, head_in) = match self.dense {
            Some(d) => {
                let (eh, ew) = self.encoded_size();
                let fc1 = Conv2d::new("mapper.fc1", c3 * eh * ew, d.hidden, 1, 1);
                let fc2 = Conv2d::new(
                    "mapper.fc2",
                    d.hidden,
                    d.channels * d.grid_h * d.grid_w,
                    1,
                    1,
                );
                (Some((fc1, fc2)), d.channels)
            }
            None => (None, c3),
        };
        Layers {
            encoder,
            blocks,
            dense,
            jhm: Head::new("mapper.jhm", head_in, self.head_channels, N_KEYPOINTS),
            paf: Head::new("mapper.paf", head_in, self.head_channels, N_PAF_CHANNELS),
        }
    }

    /// He-initialised parameters drawn from a seeded stream in a fixed layer order.
    pub fn init_params(&self, seed: u64) -> Result<ParamSet> {
        self.validate()?;
        let l = self.layers();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        for c in &l.encoder {
            c.init(&mut p, &mut rng)?;
        }
        for b in &l.blocks {
            b.init(&mut p, &mut rng)?;
        }
        if let Some((fc1, fc2)) = &l.dense {
            fc1.init(&mut p, &mut rng)?;
            fc2.init(&mut p, &mut rng)?;
        }
        for c in l.jhm.convs().into_iter().chain(l.paf.convs()) {
            c.init(&mut p, &mut rng)?;
        }
        Ok(p)
    }
}

/// Builds the mapper on `g` for a raw (unnormalised) `[N, C, H, W]` batch and
/// returns the activated `(jhm, paf)` nodes.
pub fn mapper_graph(
    g: &mut Graph,
    cfg: &MapperConfig,
    params: &ParamSet,
    batch: &Tensor,
) -> Result<(Var, Var)> {
    let (n, c, h, w) = batch.dims4("mapper")?;
    if (c, h, w) != (cfg.in_channels, cfg.in_h, cfg.in_w) {
        return Err(shape_err(format!(
            "mapper input {c}x{h}x{w}, configured {}x{}x{}",
            cfg.in_channels, cfg.in_h, cfg.in_w
        )));
    }
    let l = cfg.layers();
    let mut z = g.input(cfg.normalization.apply(batch));
    for conv in &l.encoder {
        z = conv.forward(g, params, z)?;
        z = g.relu(z);
    }
    for b in &l.blocks {
        z = b.forward(g, params, z)?;
    }
    if let (Some((fc1, fc2)), Some(d)) = (&l.dense, cfg.dense) {
        let features = g.value(z).len() / n;
        z = g.reshape(z, &[n, features, 1, 1])?;
        z = fc1.forward(g, params, z)?;
        z = g.relu(z);
        z = fc2.forward(g, params, z)?;
        z = g.relu(z);
        z = g.reshape(z, &[n, d.channels, d.grid_h, d.grid_w])?;
    }
    let j = l.jhm.forward(g, params, z, cfg.jhm_h, cfg.jhm_w)?;
    let p = l.paf.forward(g, params, z, cfg.paf_h, cfg.paf_w)?;
    Ok((g.sigmoid(j), g.tanh(p)))
}

/// Maps one `[C, H, W]` input tensor to its JHM and PAF.
pub fn mapper_forward(input: &Tensor, cfg: &MapperConfig, params: &ParamSet) -> Result<(Jhm, Paf)> {
    let mut out = mapper_forward_batch(&[input], cfg, params)?;
    Ok(out.pop().expect("one item"))
}

pub fn mapper_forward_batch(
    inputs: &[&Tensor],
    cfg: &MapperConfig,
    params: &ParamSet,
) -> Result<Vec<(Jhm, Paf)>> {
    let batch = Tensor::stack(inputs)?;
    let mut g = Graph::new();
    let (j, p) = mapper_graph(&mut g, cfg, params, &batch)?;
    Ok((0..inputs.len())
        .map(|i| (Jhm(g.value(j).batch_item(i)), Paf(g.value(p).batch_item(i))))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dense: bool) -> MapperConfig {
        MapperConfig {
            in_h: 8,
            in_w: 16,
            encoder_channels: [4, 4, 4],
            n_residual_blocks: 1,
            head_channels: 4,
            dense: dense.then_some(DenseBottleneck {
                hidden: 8,
                channels: 3,
                grid_h: 2,
                grid_w: 4,
            }),
            jhm_h: 8,
            jhm_w: 16,
            paf_h: 8,
            paf_w: 16,
            ..MapperConfig::default()
        }
    }

    #[test]
    fn default_output_shapes_and_ranges() {
        let cfg = MapperConfig {
            in_h: 16,
            in_w: 32,
            ..MapperConfig::default()
        };
        let p = cfg.init_params(1).unwrap();
        let x = Tensor::full(&[9, 16, 32], 3.0);
        let (j, pf) = mapper_forward(&x, &cfg, &p).unwrap();
        assert_eq!(j.0.shape(), &[14, 32, 64]);
        assert_eq!(pf.0.shape(), &[26, 32, 64]);
        assert!(j.0.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(pf.0.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn dense_variant_shapes_and_determinism() {
        let cfg = tiny(true);
        let x = Tensor::from_vec(
            &[9, 8, 16],
            (0..9 * 128).map(|i| (i as f64 * 0.37).sin()).collect(),
        )
        .unwrap();
        let a = mapper_forward(&x, &cfg, &cfg.init_params(5).unwrap()).unwrap();
        let b = mapper_forward(&x, &cfg, &cfg.init_params(5).unwrap()).unwrap();
        assert_eq!(a.0 .0.shape(), &[14, 8, 16]);
        assert_eq!(a, b);
        let c = mapper_forward(&x, &cfg, &cfg.init_params(6).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn batch_items_equal_single_passes() {
        let cfg = tiny(false);
        let p = cfg.init_params(2).unwrap();
        let x1 = Tensor::full(&[9, 8, 16], 0.5);
        let x2 =
            Tensor::from_vec(&[9, 8, 16], (0..9 * 128).map(|i| (i % 7) as f64).collect()).unwrap();
        let both = mapper_forward_batch(&[&x1, &x2], &cfg, &p).unwrap();
        let single = mapper_forward(&x2, &cfg, &p).unwrap();
        assert!(both[1].0 .0.max_abs_diff(&single.0 .0) < 1e-12);
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let cfg = tiny(false);
        let p = cfg.init_params(0).unwrap();
        assert!(mapper_forward(&Tensor::zeros(&[9, 8, 8]), &cfg, &p).is_err());
    }

    #[test]
    fn normalization_fit() {
        let t = Tensor::from_vec(&[4], vec![1.0, 3.0, 1.0, 3.0]).unwrap();
        let n = InputNormalization::fit([&t]);
        assert_eq!((n.mean, n.std), (2.0, 1.0));
        assert_eq!(n.apply(&t).data(), &[-1.0, 1.0, -1.0, 1.0]);
        let flat = InputNormalization::fit([&Tensor::full(&[3], 5.0)]);
        assert_eq!(flat.std, 1.0);
    }
}
