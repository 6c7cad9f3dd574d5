use csi2video_nn::{Conv2d, Graph, ParamSet, ResidualBlock, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mapper::strided_size;
use super::{shape_err, Result};
use crate::image::Frame;
use crate::pose::{Jhm, Paf, N_KEYPOINTS, N_PAF_CHANNELS};

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub height: usize,
    pub width: usize,
    /// Number of identity frames `l`.
    pub n_identity: usize,
    /// Encoder widths; the decoder mirrors them back down.
    pub channels: [usize; 3],
    pub n_residual_blocks: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            height: 128,
            width: 256,
            n_identity: 1,
            channels: [32, 64, 128],
            n_residual_blocks: 2,
        }
    }
}

struct Layers {
    encoder: [Conv2d; 3],
    blocks: Vec<ResidualBlock>,
    decoder: [Conv2d; 2],
    out: Conv2d,
}

impl GeneratorConfig {
    pub fn in_channels(&self) -> usize {
        N_KEYPOINTS + N_PAF_CHANNELS + 3 * self.n_identity
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 4 || self.width < 4 || self.n_identity == 0 || self.channels.contains(&0) {
            return Err(shape_err(format!("invalid generator config {self:?}")));
        }
        Ok(())
    }

    fn layers(&self) -> Layers {
        let [c1, c2, c3] = self.channels;
        Layers {
            encoder: [
                Conv2d::new("generator.enc1", self.in_channels(), c1, 7, 2),
                Conv2d::new("generator.enc2", c1, c2, 7, 2),
                Conv2d::new("generator.enc3", c2, c3, 3, 1),
            ],
            blocks: (0..self.n_residual_blocks)
                .map(|i| ResidualBlock::new(&format!("generator.res{i}"), c3))
                .collect(),
            decoder: [
                Conv2d::new("generator.dec1", c3, c2, 3, 1),
                Conv2d::new("generator.dec2", c2, c1, 3, 1),
            ],
            out: Conv2d::new("generator.out", c1, 3, 1, 1),
        }
    }

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
        for c in l.decoder.iter().chain([&l.out]) {
            c.init(&mut p, &mut rng)?;
        }
        Ok(p)
    }
}

/// Batched generator on `g`. `jhm`/`paf` are `[N, 14|26, h, w]` at any map size;
/// every input, identity frames included, is resized to `height × width`
/// before concatenation. The identity frames are shared across the batch.
pub fn generator_graph(
    g: &mut Graph,
    cfg: &GeneratorConfig,
    params: &ParamSet,
    jhm: &Tensor,
    paf: &Tensor,
    identity: &[Frame],
) -> Result<Var> {
    let (n, cj, _, _) = jhm.dims4("generator")?;
    let (np, cp, _, _) = paf.dims4("generator")?;
    if cj != N_KEYPOINTS || cp != N_PAF_CHANNELS || np != n {
        return Err(shape_err(format!(
            "maps {:?} / {:?}",
            jhm.shape(),
            paf.shape()
        )));
    }
    if identity.len() != cfg.n_identity {
        return Err(shape_err(format!(
            "{} identity frames, configured {}",
            identity.len(),
            cfg.n_identity
        )));
    }
    let (h, w) = (cfg.height, cfg.width);
    let vj = g.input(jhm.clone());
    let vp = g.input(paf.clone());
    let mut parts = vec![g.resize_bilinear(vj, h, w)?, g.resize_bilinear(vp, h, w)?];
    for f in identity {
        let one = f.0.clone().reshape(&[1, 3, f.height(), f.width()])?;
        let one = g.input(one);
        let one = g.resize_bilinear(one, h, w)?;
        let repeated: Vec<f64> = g.value(one).data().repeat(n);
        parts.push(g.input(Tensor::from_vec(&[n, 3, h, w], repeated)?));
    }
    let l = cfg.layers();
    let mut z = g.concat_channels(&parts)?;
    for conv in &l.encoder {
        z = conv.forward(g, params, z)?;
        z = g.relu(z);
    }
    for b in &l.blocks {
        z = b.forward(g, params, z)?;
    }
    let (eh, ew) = (strided_size(h), strided_size(w));
    for (conv, (th, tw)) in l.decoder.iter().zip([(eh, ew), (h, w)]) {
        z = g.resize_bilinear(z, th, tw)?;
        z = conv.forward(g, params, z)?;
        z = g.relu(z);
    }
    let z = l.out.forward(g, params, z)?;
    Ok(g.sigmoid(z))
}

pub fn generator_forward(
    jhm: &Jhm,
    paf: &Paf,
    identity: &[Frame],
    cfg: &GeneratorConfig,
    params: &ParamSet,
) -> Result<Frame> {
    let mut out = generator_forward_batch(&[(jhm, paf)], identity, cfg, params)?;
    Ok(out.pop().expect("one item"))
}

pub fn generator_forward_batch(
    maps: &[(&Jhm, &Paf)],
    identity: &[Frame],
    cfg: &GeneratorConfig,
    params: &ParamSet,
) -> Result<Vec<Frame>> {
    let jhm = Tensor::stack(&maps.iter().map(|m| &m.0 .0).collect::<Vec<_>>())?;
    let paf = Tensor::stack(&maps.iter().map(|m| &m.1 .0).collect::<Vec<_>>())?;
    let mut g = Graph::new();
    let out = generator_graph(&mut g, cfg, params, &jhm, &paf, identity)?;
    (0..maps.len())
        .map(|i| {
            Frame::from_tensor(g.value(out).batch_item(i)).map_err(|e| shape_err(e.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> GeneratorConfig {
        GeneratorConfig {
            height: 16,
            width: 32,
            n_identity: 1,
            channels: [4, 4, 4],
            n_residual_blocks: 1,
        }
    }

    fn maps(h: usize, w: usize, phase: f64) -> (Jhm, Paf) {
        let mut j = Jhm::zeros(N_KEYPOINTS, h, w);
        let mut p = Paf::zeros(N_PAF_CHANNELS, h, w);
        for (i, v) in j.0.data_mut().iter_mut().enumerate() {
            *v = ((i as f64 * 0.13 + phase).sin() + 1.0) / 2.0;
        }
        for (i, v) in p.0.data_mut().iter_mut().enumerate() {
            *v = (i as f64 * 0.07 + phase).cos();
        }
        (j, p)
    }

    #[test]
    fn default_shape_and_range() {
        let cfg = GeneratorConfig::default();
        assert_eq!(cfg.in_channels(), 43);
        let p = cfg.init_params(0).unwrap();
        let (j, pf) = maps(32, 64, 0.0);
        let id = Frame::filled(128, 256, [0.2, 0.4, 0.6]);
        let out = generator_forward(&j, &pf, &[id], &cfg, &p).unwrap();
        assert_eq!(out.0.shape(), &[3, 128, 256]);
        assert!(out.0.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn odd_sizes_and_resized_identity() {
        let cfg = GeneratorConfig {
            height: 18,
            width: 30,
            ..tiny()
        };
        let p = cfg.init_params(3).unwrap();
        let (j, pf) = maps(8, 16, 1.0);
        let out =
            generator_forward(&j, &pf, &[Frame::filled(64, 128, [0.5; 3])], &cfg, &p).unwrap();
        assert_eq!(out.0.shape(), &[3, 18, 30]);
    }

    #[test]
    fn deterministic_and_batch_consistent() {
        let cfg = tiny();
        let p = cfg.init_params(9).unwrap();
        let id = [Frame::filled(16, 32, [0.1, 0.9, 0.3])];
        let (j1, p1) = maps(8, 16, 0.0);
        let (j2, p2) = maps(8, 16, 2.0);
        let a = generator_forward(&j2, &p2, &id, &cfg, &p).unwrap();
        let b = generator_forward(&j2, &p2, &id, &cfg, &cfg.init_params(9).unwrap()).unwrap();
        assert_eq!(a, b);
        let both = generator_forward_batch(&[(&j1, &p1), (&j2, &p2)], &id, &cfg, &p).unwrap();
        assert!(both[1].0.max_abs_diff(&a.0) < 1e-12);
    }

    #[test]
    fn identity_count_checked() {
        let cfg = tiny();
        let p = cfg.init_params(0).unwrap();
        let (j, pf) = maps(8, 16, 0.0);
        assert!(generator_forward(&j, &pf, &[], &cfg, &p).is_err());
    }
}
