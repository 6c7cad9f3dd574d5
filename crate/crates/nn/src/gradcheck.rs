//! Central finite differences for validating analytic gradients, plus a
//! suite that checks every differentiable [`Graph`] op on random shapes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, Var};
use crate::layers::ResidualBlock;
use crate::params::ParamSet;
use crate::tensor::Tensor;
use crate::Result;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_FLOOR: f64 = 1e-6;

/// Step sizes tried in turn by [`check_gradients`]. A larger step rescues
/// tiny gradients of a large output from cancellation noise; smaller steps
/// rescue a probed point lying closer than the step to a ReLU kink.
const STEPS: [f64; 4] = [DEFAULT_EPS, 1e-4, 1e-6, 1e-7];
/// Agreement good enough to stop trying smaller steps.
const SETTLED: f64 = 1e-5;

/// Best relative error between `analytic` and a central difference of `f`
/// around `x` over [`STEPS`].
fn probe_error<F: FnMut(f64) -> f64>(analytic: f64, x: f64, mut f: F) -> f64 {
    let mut best = f64::INFINITY;
    for eps in STEPS {
        let numeric = (f(x + eps) - f(x - eps)) / (2.0 * eps);
        best = best.min(relative_error(analytic, numeric, DEFAULT_FLOOR));
        if best < SETTLED {
            break;
        }
    }
    best
}

/// `∂f/∂x_i ≈ (f(x + ε·e_i) − f(x − ε·e_i)) / 2ε` for each `i` in `indices`.
pub fn central_difference<F>(mut f: F, x: &[f64], indices: &[usize], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    indices
        .iter()
        .map(|&i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = f(&probe);
            probe[i] = orig - eps;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, floor)`; the floor keeps near-zero gradients from
/// reporting huge relative errors out of rounding noise.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n, floor))
        .fold(0.0, f64::max)
}

pub fn random_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("sized")
}

/// Worst relative error of backprop against central differences for
/// `Σ r·f(inputs, params)`, with `r` drawn from `rng`, over every element of
/// every tracked input and every parameter that `f` loads. Each element
/// reports its best agreement over the step sizes in `STEPS`.
pub fn check_gradients<R, F, E>(
    inputs: &[Tensor],
    params: &ParamSet,
    rng: &mut R,
    f: F,
) -> std::result::Result<f64, E>
where
    R: Rng + ?Sized,
    F: Fn(&mut Graph, &ParamSet, &[Var]) -> std::result::Result<Var, E>,
    E: From<crate::NnError>,
{
    check_gradients_sampled(inputs, params, None, rng, f)
}

/// As [`check_gradients`], but probes at most `per_tensor` randomly chosen
/// elements of each parameter tensor.
pub fn check_gradients_sampled<R, F, E>(
    inputs: &[Tensor],
    params: &ParamSet,
    per_tensor: Option<usize>,
    rng: &mut R,
    f: F,
) -> std::result::Result<f64, E>
where
    R: Rng + ?Sized,
    F: Fn(&mut Graph, &ParamSet, &[Var]) -> std::result::Result<Var, E>,
    E: From<crate::NnError>,
{
    let build = |ts: &[Tensor], ps: &ParamSet| -> std::result::Result<(Graph, Vec<Var>, Var), E> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, ps, &vars)?;
        Ok((g, vars, out))
    };
    let (g0, _, out0) = build(inputs, params)?;
    let coeffs = random_tensor(rng, &[g0.value(out0).len()]);
    drop(g0);

    let loss_of = |ts: &[Tensor], ps: &ParamSet| -> f64 {
        let (mut g, _, out) = build(ts, ps).ok().expect("graph built once already");
        let l = g.dot(out, &coeffs).expect("sized from the output");
        g.value(l).data()[0]
    };

    let (mut g, vars, out) = build(inputs, params)?;
    let l = g.dot(out, &coeffs)?;
    g.backward(l)?;
    let param_grads = g.param_grads()?;

    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = g
            .grad(vars[k])
            .map(<[f64]>::to_vec)
            .unwrap_or(vec![0.0; t.len()]);
        for i in 0..t.len() {
            let err = probe_error(analytic[i], t.data()[i], |x| {
                let mut ts = inputs.to_vec();
                ts[k].data_mut()[i] = x;
                loss_of(&ts, params)
            });
            worst = worst.max(err);
        }
    }
    for (name, grad) in param_grads.iter() {
        let t = params.get(name)?;
        let mut indices: Vec<usize> = match per_tensor {
            Some(k) if k < t.len() => rand::seq::index::sample(rng, t.len(), k).into_vec(),
            _ => (0..t.len()).collect(),
        };
        indices.sort_unstable();
        for i in indices {
            let err = probe_error(grad.data()[i], t.data()[i], |x| {
                let mut ps = params.clone();
                ps.get_mut(name).expect("present").data_mut()[i] = x;
                loss_of(inputs, &ps)
            });
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn check_inputs<F>(inputs: &[Tensor], rng: &mut ChaCha8Rng, f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    check_gradients(inputs, &ParamSet::new(), rng, |g, _, v| f(g, v))
}

/// Values in `±[0.05, 1)`, away from the ReLU kink.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("sized")
}

/// Runs every differentiable op once on shapes drawn from `seed` and returns
/// `(op name, worst relative error)` in a fixed order.
pub fn op_suite(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let mut out = Vec::new();

    let k = [1, 3, 5, 7][rng.random_range(0..4)];
    let stride = rng.random_range(1..=2);
    let (cin, cout) = (rng.random_range(1..=3), rng.random_range(1..=3));
    let (h, w) = (
        rng.random_range(k.max(3)..=8),
        rng.random_range(k.max(3)..=8),
    );
    let n = rng.random_range(1..=2);
    let inputs = [
        random_tensor(rng, &[n, cin, h, w]),
        random_tensor(rng, &[cout, cin, k, k]),
        random_tensor(rng, &[cout]),
    ];
    out.push((
        "conv2d",
        check_inputs(&inputs, rng, |g, v| {
            g.conv2d(v[0], v[1], v[2], stride, k / 2)
        })?,
    ));

    let inputs = [
        random_tensor(rng, &[1, 2, 8, 8]),
        random_tensor(rng, &[3, 2, 3, 3]),
        random_tensor(rng, &[3]),
    ];
    out.push((
        "conv2d 2->3 8x8",
        check_inputs(&inputs, rng, |g, v| g.conv2d(v[0], v[1], v[2], 1, 1))?,
    ));

    let c = rng.random_range(1..=3);
    let block = ResidualBlock::new("rb", c);
    let mut params = ParamSet::new();
    block.init(&mut params, rng)?;
    let x = random_tensor(rng, &[1, c, 5, 6]);
    out.push((
        "residual_block",
        check_gradients(&[x], &params, rng, |g, p, v| block.forward(g, p, v[0]))?,
    ));

    let x = away_from_zero(rng, &[1, 2, 3, 4]);
    out.push(("relu", check_inputs(&[x], rng, |g, v| Ok(g.relu(v[0])))?));
    let x = random_tensor(rng, &[24]);
    out.push((
        "sigmoid",
        check_inputs(&[x], rng, |g, v| Ok(g.sigmoid(v[0])))?,
    ));
    let x = random_tensor(rng, &[2, 1, 3, 3]);
    out.push(("tanh", check_inputs(&[x], rng, |g, v| Ok(g.tanh(v[0])))?));
    let a = random_tensor(rng, &[1, 2, 3, 3]);
    let b = random_tensor(rng, &[1, 2, 3, 3]);
    out.push(("add", check_inputs(&[a, b], rng, |g, v| g.add(v[0], v[1]))?));

    let (h, w) = (rng.random_range(2..=5), rng.random_range(2..=5));
    let (oh, ow) = (rng.random_range(2..=9), rng.random_range(2..=9));
    let x = random_tensor(rng, &[1, 2, h, w]);
    out.push((
        "resize_bilinear",
        check_inputs(&[x], rng, |g, v| g.resize_bilinear(v[0], oh, ow))?,
    ));
    let x = random_tensor(rng, &[2, 1, 3, 4]);
    out.push((
        "upsample_bilinear2x",
        check_inputs(&[x], rng, |g, v| g.upsample_bilinear2x(v[0]))?,
    ));
    let (h, w) = (rng.random_range(2..=7), rng.random_range(2..=7));
    let x = random_tensor(rng, &[1, 2, h, w]);
    out.push((
        "avg_pool2",
        check_inputs(&[x], rng, |g, v| g.avg_pool2(v[0]))?,
    ));

    let a = random_tensor(rng, &[2, 1, 3, 3]);
    let b = random_tensor(rng, &[2, 2, 3, 3]);
    out.push((
        "concat_channels",
        check_inputs(&[a, b], rng, |g, v| g.concat_channels(&[v[0], v[1]]))?,
    ));
    let x = random_tensor(rng, &[2, 4, 2, 3]);
    out.push((
        "slice_channels",
        check_inputs(&[x], rng, |g, v| g.slice_channels(v[0], 1, 2))?,
    ));
    let x = random_tensor(rng, &[2, 2, 2, 3]);
    let w = random_tensor(rng, &[8, 12, 1, 1]);
    let b = random_tensor(rng, &[8]);
    out.push((
        "reshape",
        check_inputs(&[x, w, b], rng, |g, v| {
            let flat = g.reshape(v[0], &[2, 12, 1, 1])?;
            let y = g.conv2d(flat, v[1], v[2], 1, 0)?;
            g.reshape(y, &[2, 2, 2, 2])
        })?,
    ));

    let p = random_tensor(rng, &[1, 3, 4, 4]);
    let t = random_tensor(rng, &[1, 3, 4, 4]);
    let wt = random_tensor(rng, &[1, 3, 4, 4]);
    out.push((
        "weighted_sq_error",
        check_inputs(&[p], rng, |g, v| g.weighted_sq_error(v[0], &t, &wt))?,
    ));
    let a = random_tensor(rng, &[1]);
    let b = random_tensor(rng, &[1]);
    let (ca, cb) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    out.push((
        "lincomb",
        check_inputs(&[a, b], rng, |g, v| g.lincomb(&[(v[0], ca), (v[1], cb)]))?,
    ));
    let x = random_tensor(rng, &[1, 2, 2, 2]);
    let c = random_tensor(rng, &[8]);
    out.push(("dot", check_inputs(&[x], rng, |g, v| g.dot(v[0], &c))?));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_of_cubic() {
        let d = central_difference(|x| x[0].powi(3) + 2.0 * x[1], &[2.0, 5.0], &[0, 1], 1e-5);
        assert!((d[0] - 12.0).abs() < 1e-8);
        assert!((d[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(1e-9, 0.0, 1e-6), 1e-3);
        assert_eq!(relative_error(2.0, 1.0, 1e-6), 0.5);
    }

    #[test]
    fn suite_reports_every_op_in_order() {
        let a = op_suite(3).unwrap();
        let b = op_suite(3).unwrap();
        assert_eq!(a.len(), 16);
        assert_eq!(a, b);
    }
}
