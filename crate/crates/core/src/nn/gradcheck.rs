//! Central finite-difference checks of tape gradients in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::arch::{Network, PolicyArchitecture};
use super::tape::{Graph, Mode, ParamStore, Var};
use super::tensor::Tensor;
use super::NnError;

pub const STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub probes: usize,
    /// Largest `|analytic - numeric| / max(1, |analytic|)`.
    pub max_rel_error: f64,
}

/// Builds a scalar from inputs; called once per evaluation.
pub type Builder<'a> = dyn Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var, NnError> + 'a;

fn eval(params: &ParamStore<f64>, inputs: &[Tensor<f64>], mode: Mode, build: &Builder) -> Result<f64, NnError> {
    let mut g = Graph::new(params, mode);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone(), false)).collect();
    let out = build(&mut g, &vars)?;
    Ok(g.value(out).data[0])
}

/// Probes random elements of trainable parameters and inputs.
pub fn check(
    name: &str,
    params: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    mode: Mode,
    build: &Builder,
    probes: usize,
    seed: u64,
) -> Result<GradCheckReport, NnError> {
    let mut g = Graph::new(params, mode);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone(), true)).collect();
    let out = build(&mut g, &vars)?;
    let grads = g.backward(out);
    drop(g);

    // (is_param, tensor index, element)
    let mut slots: Vec<(bool, usize, usize)> = Vec::new();
    for (i, p) in params.params.iter().enumerate() {
        if p.trainable {
            slots.extend((0..p.value.len()).map(|e| (true, i, e)));
        }
    }
    for (i, t) in inputs.iter().enumerate() {
        slots.extend((0..t.len()).map(|e| (false, i, e)));
    }
    if slots.is_empty() {
        return Err(NnError::Empty("gradient probe set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let (is_param, i, e) = slots[rng.gen_range(0..slots.len())];
        let analytic = if is_param {
            grads.params[i].data[e]
        } else {
            grads.wrt(vars[i]).map(|g| g[e]).unwrap_or(0.0)
        };
        let at = |delta: f64| -> Result<f64, NnError> {
            if is_param {
                let mut p = params.clone();
                p.value_mut(i).data[e] += delta;
                eval(&p, inputs, mode, build)
            } else {
                let mut x = inputs.to_vec();
                x[i].data[e] += delta;
                eval(params, &x, mode, build)
            }
        };
        let numeric = (at(STEP)? - at(-STEP)?) / (2.0 * STEP);
        let rel = (analytic - numeric).abs() / analytic.abs().max(1.0);
        worst = worst.max(rel);
    }
    Ok(GradCheckReport {
        name: name.to_string(),
        probes,
        max_rel_error: worst,
    })
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
    }
}

/// One check per layer type, then the tiny network end to end.
pub fn layer_suite(probes: usize, seed: u64) -> Result<Vec<GradCheckReport>, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let train = Mode::Train { seed: seed ^ 0x5eed };

    // Convolution, odd sizes so padding is asymmetric.
    let mut ps = ParamStore::new();
    let w = ps.push("w", random(&mut rng, &[3, 3, 2, 4], 0.5), true);
    let b = ps.push("b", random(&mut rng, &[4], 0.5), true);
    let x = random(&mut rng, &[2, 7, 5, 2], 1.0);
    let k = random(&mut rng, &[2 * 4 * 3 * 4], 1.0).data;
    let build = move |g: &mut Graph<'_, f64>, v: &[Var]| {
        let y = g.conv2d(v[0], w, b, 2)?;
        g.weighted_sum(y, k.clone())
    };
    out.push(check("conv2d", &ps, &[x], train, &build, probes, rng.gen())?);

    let mut ps = ParamStore::new();
    let w = ps.push("w", random(&mut rng, &[5, 5, 3, 2], 0.3), true);
    let b = ps.push("b", random(&mut rng, &[2], 0.3), true);
    let x = random(&mut rng, &[1, 6, 9, 3], 1.0);
    let k = random(&mut rng, &[3 * 5 * 2], 1.0).data;
    let build = move |g: &mut Graph<'_, f64>, v: &[Var]| {
        let y = g.conv2d(v[0], w, b, 2)?;
        g.weighted_sum(y, k.clone())
    };
    out.push(check("conv2d_5x5", &ps, &[x], train, &build, probes, rng.gen())?);

    let mut ps = ParamStore::new();
    let w = ps.push("w", random(&mut rng, &[6, 3], 0.5), true);
    let b = ps.push("b", random(&mut rng, &[3], 0.5), true);
    let x = random(&mut rng, &[4, 6], 1.0);
    let k = random(&mut rng, &[12], 1.0).data;
    let build = move |g: &mut Graph<'_, f64>, v: &[Var]| {
        let y = g.dense(v[0], w, b)?;
        g.weighted_sum(y, k.clone())
    };
    out.push(check("dense", &ps, &[x], train, &build, probes, rng.gen())?);

    // Keep inputs away from the kink.
    let empty = ParamStore::new();
    let mut x = random(&mut rng, &[3, 10], 1.0);
    for v in &mut x.data {
        if v.abs() < 0.05 {
            *v += 0.1f64.copysign(*v);
        }
    }
    let k = random(&mut rng, &[30], 1.0).data;
    let build = move |g: &mut Graph<'_, f64>, v: &[Var]| {
        let y = g.relu(v[0]);
        g.weighted_sum(y, k.clone())
    };
    out.push(check("relu", &empty, &[x], train, &build, probes, rng.gen())?);

    for (name, mode) in [("batch_norm_train", train), ("batch_norm_eval", Mode::Eval)] {
        let mut ps = ParamStore::new();
        let ga = ps.push("gamma", random(&mut rng, &[3], 1.0), true);
        let be = ps.push("beta", random(&mut rng, &[3], 1.0), true);
        let mu = ps.push("mean", random(&mut rng, &[3], 0.2), false);
        let mut var = random(&mut rng, &[3], 0.5);
        var.data.iter_mut().for_each(|v| *v = v.abs() + 0.5);
        let va = ps.push("var", var, false);
        let x = random(&mut rng, &[4, 2, 2, 3], 1.0);
        let k = random(&mut rng, &[48], 1.0).data;
        let build = move |g: &mut Graph<'_, f64>, v: &[Var]| {
            let y = g.batch_norm(v[0], ga, be, mu, va, 1e-3, 0.99)?;
            g.weighted_sum(y, k.clone())
        };
        out.push(check(name, &ps, &[x], mode, &build, probes, rng.gen())?);
    }

    let x = random(&mut rng, &[4, 8], 1.0);
    let k = random(&mut rng, &[32], 1.0).data;
    let build = move |g: &mut Graph<'_, f64>, v: &[Var]| {
        let y = g.dropout(v[0], 0.3);
        g.weighted_sum(y, k.clone())
    };
    out.push(check("dropout", &empty, &[x], train, &build, probes, rng.gen())?);

    let x = random(&mut rng, &[2, 3, 2, 2], 1.0);
    let k = random(&mut rng, &[24], 1.0).data;
    let build = move |g: &mut Graph<'_, f64>, v: &[Var]| {
        let y = g.flatten(v[0])?;
        g.weighted_sum(y, k.clone())
    };
    out.push(check("flatten", &empty, &[x], train, &build, probes, rng.gen())?);

    let a = random(&mut rng, &[3, 2], 1.0);
    let c = random(&mut rng, &[3, 4], 1.0);
    let k = random(&mut rng, &[18], 1.0).data;
    let build = move |g: &mut Graph<'_, f64>, v: &[Var]| {
        let y = g.concat(v[0], v[1])?;
        g.weighted_sum(y, k.clone())
    };
    out.push(check("concat", &empty, &[a, c], train, &build, probes, rng.gen())?);

    let p = random(&mut rng, &[5, 2], 1.0);
    let t: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..1.0)).collect();
    let build = move |g: &mut Graph<'_, f64>, v: &[Var]| g.policy_loss(v[0], &t, 0.25);
    out.push(check("policy_loss", &empty, &[p], train, &build, probes, rng.gen())?);

    out.push(tiny_conv_dense(probes, rng.gen())?);
    out.push(tiny_network(probes, rng.gen())?);
    Ok(out)
}

/// Two convolutions and a dense layer with the policy loss, no command.
pub fn tiny_conv_dense(probes: usize, seed: u64) -> Result<GradCheckReport, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamStore::new();
    let w1 = ps.push("w1", random(&mut rng, &[3, 3, 3, 4], 0.4), true);
    let b1 = ps.push("b1", random(&mut rng, &[4], 0.1), true);
    let w2 = ps.push("w2", random(&mut rng, &[3, 3, 4, 5], 0.4), true);
    let b2 = ps.push("b2", random(&mut rng, &[5], 0.1), true);
    let w3 = ps.push("w3", random(&mut rng, &[2 * 3 * 5, 2], 0.4), true);
    let b3 = ps.push("b3", random(&mut rng, &[2], 0.1), true);
    let x = random(&mut rng, &[3, 6, 9, 3], 1.0);
    let t: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();
    let build = move |g: &mut Graph<'_, f64>, v: &[Var]| {
        let y = g.conv2d(v[0], w1, b1, 2)?;
        let y = g.conv2d(y, w2, b2, 2)?;
        let y = g.flatten(y)?;
        let y = g.dense(y, w3, b3)?;
        g.policy_loss(y, &t, 0.25)
    };
    check("tiny_conv_conv_dense", &ps, &[x], Mode::Train { seed }, &build, probes, rng.gen())
}

/// The reduced policy network in training mode, including batch-norm,
/// dropout and the command path.
pub fn tiny_network(probes: usize, seed: u64) -> Result<GradCheckReport, NnError> {
    let arch = PolicyArchitecture::tiny();
    let mut net = Network::<f64>::init(arch.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    // Non-trivial biases and affine terms so every path carries gradient.
    for p in &mut net.params.params {
        if p.trainable && !p.name.ends_with(".w") {
            p.value.data.iter_mut().for_each(|v| *v += rng.gen_range(-0.2..0.2));
        }
    }
    let n = 4;
    let x = random(&mut rng, &[n, arch.height, arch.width, 3], 1.0);
    let mut c = Tensor::zeros(&[n, 3]);
    for i in 0..n {
        c.data[i * 3 + i % 3] = 1.0;
    }
    let t: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(0.0..1.0)).collect();
    let net2 = net.clone();
    let build = move |g: &mut Graph<'_, f64>, v: &[Var]| {
        let y = net2.build(g, v[0], v[1])?;
        g.policy_loss(y, &t, 0.25)
    };
    check("tiny_network", &net.params, &[x, c], Mode::Train { seed }, &build, probes, rng.gen())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_passes() {
        for r in layer_suite(100, 7).unwrap() {
            assert!(r.max_rel_error < 1e-5, "{} {}", r.name, r.max_rel_error);
        }
    }
}
