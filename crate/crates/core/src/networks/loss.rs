use csi2video_nn::{Graph, Tensor, Var};

use super::{shape_err, Result};
use crate::image::{Frame, MaskImage};
use crate::pose::{Jhm, Paf};

/// Where the target-dependent weight enters a map loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WeightMode {
    /// `Σ (w·(pred − target))²`, the weight squared along with the error.
    #[default]
    Inside,
    /// `Σ w·(pred − target)²`.
    Outside,
}

impl WeightMode {
    pub fn name(self) -> &'static str {
        match self {
            WeightMode::Inside => "inside",
            WeightMode::Outside => "outside",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "inside" => Some(WeightMode::Inside),
            "outside" => Some(WeightMode::Outside),
            _ => None,
        }
    }

    fn coefficient(self, w: f64) -> f64 {
        match self {
            WeightMode::Inside => w * w,
            WeightMode::Outside => w,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_j: f64,
    pub lambda_p: f64,
    pub lambda_f: f64,
    pub lambda_b: f64,
    pub alpha_j: f64,
    pub beta_j: f64,
    pub alpha_p: f64,
    pub beta_p: f64,
    pub mode: WeightMode,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_j: 1.0,
            lambda_p: 1.0,
            lambda_f: 1.0,
            lambda_b: 0.5,
            alpha_j: 1.0,
            beta_j: 1.0,
            alpha_p: 1.0,
            beta_p: 0.5,
            mode: WeightMode::Inside,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let all = [
            ("lambda_j", self.lambda_j),
            ("lambda_p", self.lambda_p),
            ("lambda_f", self.lambda_f),
            ("lambda_b", self.lambda_b),
            ("alpha_j", self.alpha_j),
            ("beta_j", self.beta_j),
            ("alpha_p", self.alpha_p),
            ("beta_p", self.beta_p),
        ];
        match all.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            Some((k, v)) => Err(format!("{k} must be a finite value >= 0, got {v}")),
            None => Ok(()),
        }
    }
}

/// Per-element coefficient `mode(α·|target| + β)` for a weighted squared error.
pub(crate) fn map_coefficients(target: &Tensor, alpha: f64, beta: f64, mode: WeightMode) -> Tensor {
    let data = target
        .data()
        .iter()
        .map(|t| mode.coefficient(alpha * t.abs() + beta))
        .collect();
    Tensor::from_vec(target.shape(), data).expect("same shape")
}

fn weighted_map_loss(
    pred: &Tensor,
    target: &Tensor,
    alpha: f64,
    beta: f64,
    mode: WeightMode,
) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(shape_err(format!(
            "{:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| mode.coefficient(alpha * t.abs() + beta) * (p - t) * (p - t))
        .sum())
}

/// JHM loss with weight `α_J·|target| + β_J` taken from the ground truth.
pub fn loss_jhm(pred: &Jhm, target: &Jhm, w: &LossWeights) -> Result<f64> {
    weighted_map_loss(&pred.0, &target.0, w.alpha_j, w.beta_j, w.mode)
}

pub fn loss_paf(pred: &Paf, target: &Paf, w: &LossWeights) -> Result<f64> {
    weighted_map_loss(&pred.0, &target.0, w.alpha_p, w.beta_p, w.mode)
}

pub fn loss_mapper_total(l_jhm: f64, l_paf: f64, w: &LossWeights) -> f64 {
    w.lambda_j * l_jhm + w.lambda_p * l_paf
}

/// `[3, h, w]` per-pixel coefficients: `mask` on the foreground, `1 − mask` otherwise.
pub(crate) fn mask_coefficients(mask: &MaskImage, foreground: bool) -> Tensor {
    let plane: Vec<f64> = mask
        .data()
        .iter()
        .map(|&m| if m == foreground { 1.0 } else { 0.0 })
        .collect();
    let mut data = Vec::with_capacity(3 * plane.len());
    for _ in 0..3 {
        data.extend_from_slice(&plane);
    }
    Tensor::from_vec(&[3, mask.height(), mask.width()], data).expect("sized above")
}

fn masked_frame_loss(s: &Frame, target: &Frame, mask: &MaskImage, foreground: bool) -> Result<f64> {
    if s.0.shape() != target.0.shape() || (mask.height(), mask.width()) != (s.height(), s.width()) {
        return Err(shape_err(format!(
            "frame {:?}, target {:?}, mask {}x{}",
            s.0.shape(),
            target.0.shape(),
            mask.height(),
            mask.width()
        )));
    }
    let coef = mask_coefficients(mask, foreground);
    Ok(s.0
        .data()
        .iter()
        .zip(target.0.data())
        .zip(coef.data())
        .map(|((a, b), m)| m * (a - b) * (a - b))
        .sum())
}

/// `Σ mask·(S − I)²` with the mask broadcast over colour channels.
pub fn loss_foreground(s: &Frame, i: &Frame, mask: &MaskImage) -> Result<f64> {
    masked_frame_loss(s, i, mask, true)
}

/// `Σ (1 − mask)·(S − B)²` against the background image.
pub fn loss_background(s: &Frame, b: &Frame, mask: &MaskImage) -> Result<f64> {
    masked_frame_loss(s, b, mask, false)
}

pub fn loss_generator_total(l_f: f64, l_b: f64, w: &LossWeights) -> f64 {
    w.lambda_f * l_f + w.lambda_b * l_b
}

/// Adds `Σ coef·(pred − target)²` to the graph.
pub(crate) fn graph_sq_error(
    g: &mut Graph,
    pred: Var,
    target: &Tensor,
    coef: &Tensor,
) -> Result<Var> {
    Ok(g.weighted_sq_error(pred, target, coef)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{N_KEYPOINTS, N_PAF_CHANNELS};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn single_pixel_jhm_loss_is_four() {
        let mut target = Jhm::zeros(N_KEYPOINTS, 4, 4);
        target.0.data_mut()[5] = 1.0;
        let pred = Jhm::zeros(N_KEYPOINTS, 4, 4);
        assert_eq!(
            loss_jhm(&pred, &target, &LossWeights::default()).unwrap(),
            4.0
        );
    }

    #[test]
    fn single_element_paf_loss() {
        let mut target = Paf::zeros(N_PAF_CHANNELS, 2, 2);
        target.0.data_mut()[3] = -1.0;
        let pred = Paf::zeros(N_PAF_CHANNELS, 2, 2);
        assert_eq!(
            loss_paf(&pred, &target, &LossWeights::default()).unwrap(),
            2.25
        );
    }

    #[test]
    fn outside_mode_uses_unsquared_weight() {
        let mut target = Jhm::zeros(N_KEYPOINTS, 2, 2);
        target.0.data_mut()[0] = 1.0;
        let w = LossWeights {
            mode: WeightMode::Outside,
            ..LossWeights::default()
        };
        assert_eq!(
            loss_jhm(&Jhm::zeros(N_KEYPOINTS, 2, 2), &target, &w).unwrap(),
            2.0
        );
    }

    #[test]
    fn totals_combine_terms() {
        let w = LossWeights::default();
        assert_eq!(loss_mapper_total(4.0, 2.25, &w), 6.25);
        assert_eq!(loss_generator_total(0.75, 2.0, &w), 1.75);
        let no_paf = LossWeights { lambda_p: 0.0, ..w };
        assert_eq!(loss_mapper_total(4.0, 2.25, &no_paf), 4.0);
    }

    #[test]
    fn one_foreground_pixel_half_off() {
        let s = Frame::filled(3, 3, [0.5; 3]);
        let i = Frame::filled(3, 3, [1.0; 3]);
        let mut m = MaskImage::empty(3, 3);
        m.set(1, 1, true);
        assert_eq!(loss_foreground(&s, &i, &m).unwrap(), 0.75);
        assert_eq!(
            loss_foreground(&s, &i, &MaskImage::empty(3, 3)).unwrap(),
            0.0
        );
    }

    #[test]
    fn background_loss_vanishes_under_full_mask() {
        let s = Frame::filled(2, 3, [0.1, 0.2, 0.3]);
        let b = Frame::filled(2, 3, [0.9; 3]);
        let mut m = MaskImage::empty(2, 3);
        for y in 0..2 {
            for x in 0..3 {
                m.set(y, x, true);
            }
        }
        assert_eq!(loss_background(&s, &b, &m).unwrap(), 0.0);
        assert_eq!(
            loss_background(&b, &b, &MaskImage::empty(2, 3)).unwrap(),
            0.0
        );
    }

    #[test]
    fn map_losses_match_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = LossWeights {
            alpha_j: 0.7,
            beta_j: 1.3,
            alpha_p: 2.0,
            beta_p: 0.25,
            ..LossWeights::default()
        };
        for _ in 0..10 {
            let (h, wd) = (rng.random_range(1..6), rng.random_range(1..6));
            let pj = Jhm(random(&mut rng, &[N_KEYPOINTS, h, wd], 0.0, 1.0));
            let tj = Jhm(random(&mut rng, &[N_KEYPOINTS, h, wd], 0.0, 1.0));
            let pp = Paf(random(&mut rng, &[N_PAF_CHANNELS, h, wd], -1.0, 1.0));
            let tp = Paf(random(&mut rng, &[N_PAF_CHANNELS, h, wd], -1.0, 1.0));
            let mut oj = 0.0;
            for c in 0..N_KEYPOINTS {
                for y in 0..h {
                    for x in 0..wd {
                        let t = tj.at(c, y, x);
                        let wt = w.alpha_j * t.abs() + w.beta_j;
                        oj += (wt * (pj.at(c, y, x) - t)).powi(2);
                    }
                }
            }
            let mut op = 0.0;
            for c in 0..N_PAF_CHANNELS {
                for y in 0..h {
                    for x in 0..wd {
                        let t = tp.at(c, y, x);
                        let wt = w.alpha_p * t.abs() + w.beta_p;
                        op += (wt * (pp.at(c, y, x) - t)).powi(2);
                    }
                }
            }
            let lj = loss_jhm(&pj, &tj, &w).unwrap();
            let lp = loss_paf(&pp, &tp, &w).unwrap();
            assert!((lj - oj).abs() <= 1e-12 * oj.max(1.0));
            assert!((lp - op).abs() <= 1e-12 * op.max(1.0));
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        assert!(loss_jhm(
            &Jhm::zeros(N_KEYPOINTS, 2, 2),
            &Jhm::zeros(N_KEYPOINTS, 2, 3),
            &LossWeights::default()
        )
        .is_err());
        let f = Frame::filled(2, 2, [0.0; 3]);
        assert!(loss_foreground(&f, &f, &MaskImage::empty(3, 2)).is_err());
    }

    #[test]
    fn negative_weight_rejected() {
        let w = LossWeights {
            beta_p: -0.1,
            ..LossWeights::default()
        };
        assert!(w.validate().is_err());
        assert!(LossWeights::default().validate().is_ok());
    }
}
