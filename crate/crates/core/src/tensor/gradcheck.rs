//! Central-difference gradient oracle.

use std::rc::Rc;

use super::graph::{Graph, OpKind, Unary, Var};
use super::params::{ParamId, ParamStore};
use super::value::Tensor;
use crate::error::{Error, Result};
use crate::rng::LabRng;

/// Largest `|analytic - numeric| / max(1, |analytic|)` over every scalar of
/// the listed parameters, where `numeric` is the central difference with
/// step `eps` of the scalar returned by `f`.
pub fn finite_diff_check<F>(store: &mut ParamStore, ids: &[ParamId], eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .map(|&id| match g.param_var(id) {
            Some(v) => grads.wrt(&g, v),
            None => Tensor::zeros(store.get(id).value.shape()),
        })
        .collect();
    drop(g);

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let l = f(&mut g, store)?;
        let v = g.value(l).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("finite-difference evaluation".into()))
        }
    };

    let mut worst: f64 = 0.0;
    for (slot, &id) in ids.iter().enumerate() {
        for j in 0..store.get(id).value.numel() {
            let orig = store.get(id).value.data()[j];
            store.get_mut(id).value.data_mut()[j] = orig + eps;
            let plus = eval(store);
            store.get_mut(id).value.data_mut()[j] = orig - eps;
            let minus = eval(store);
            store.get_mut(id).value.data_mut()[j] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let a = analytic[slot].data()[j];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}

/// [`finite_diff_check`] over free tensors; `f` receives one leaf per tensor.
pub fn finite_diff_check_tensors<F>(params: &[Tensor], eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = params
        .iter()
        .enumerate()
        .map(|(i, t)| store.add(format!("p{i}"), t.clone()))
        .collect();
    finite_diff_check(&mut store, &ids, eps, |g, s| {
        let vars = ids.iter().map(|&id| g.param(s, id)).collect::<Result<Vec<_>>>()?;
        f(g, &vars)
    })
}

/// Weighted sum `Σ y ⊙ r` with fixed random `r`, so every output entry
/// contributes a distinct coefficient to the probe loss.
fn probe_loss(g: &mut Graph, y: Var, rng: &mut LabRng) -> Result<Var> {
    let r = Tensor::uniform(g.shape(y), -1.0, 1.0, rng);
    let rv = g.input(r)?;
    let prod = g.mul(y, rv)?;
    g.sum(prod)
}

/// Runs [`finite_diff_check_tensors`] on a small random instance of `kind`.
pub fn op_probe(kind: OpKind, seed: u64, eps: f64) -> Result<f64> {
    let mut rng = LabRng::new(seed);
    let weights_seed = rng.fork(1).seed();
    let normal = |shape: &[usize], rng: &mut LabRng| Tensor::trunc_normal(shape, 1.0, rng);
    let unary = |k: Unary, x: Tensor| {
        finite_diff_check_tensors(&[x], eps, move |g, v| {
            let y = g.unary(v[0], k)?;
            probe_loss(g, y, &mut LabRng::new(weights_seed))
        })
    };
    let check = |params: Vec<Tensor>, f: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>| {
        finite_diff_check_tensors(&params, eps, |g, v| {
            let y = f(g, v)?;
            probe_loss(g, y, &mut LabRng::new(weights_seed))
        })
    };
    match kind {
        OpKind::Add => check(vec![normal(&[2, 3], &mut rng), normal(&[2, 3], &mut rng)], &|g, v| g.add(v[0], v[1])),
        OpKind::Sub => check(vec![normal(&[2, 3], &mut rng), normal(&[2, 3], &mut rng)], &|g, v| g.sub(v[0], v[1])),
        OpKind::Mul => check(vec![normal(&[2, 3], &mut rng), normal(&[2, 3], &mut rng)], &|g, v| g.mul(v[0], v[1])),
        OpKind::Neg => check(vec![normal(&[4], &mut rng)], &|g, v| g.neg(v[0])),
        OpKind::Scale => check(vec![normal(&[4], &mut rng)], &|g, v| g.scale(v[0], 1.7)),
        OpKind::AddScalar => check(vec![normal(&[4], &mut rng)], &|g, v| g.add_scalar(v[0], 0.3)),
        OpKind::BiasAdd => check(vec![normal(&[2, 3, 2, 2], &mut rng), normal(&[3], &mut rng)], &|g, v| {
            g.bias_add(v[0], v[1], 1)
        }),
        OpKind::Linear => check(vec![normal(&[2, 3, 4], &mut rng), normal(&[4, 5], &mut rng)], &|g, v| g.linear(v[0], v[1])),
        OpKind::BatchMatMul => check(
            vec![normal(&[2, 3, 4], &mut rng), normal(&[2, 4, 5], &mut rng), normal(&[2, 5, 4], &mut rng)],
            &|g, v| {
                let plain = g.batch_matmul(v[0], v[1], false)?;
                let trans = g.batch_matmul(v[0], v[2], true)?;
                g.mul(plain, trans)
            },
        ),
        OpKind::Conv2d => check(
            vec![normal(&[2, 3, 6, 6], &mut rng), normal(&[4, 3, 3, 3], &mut rng), normal(&[4], &mut rng)],
            &|g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1, 1),
        ),
        OpKind::DepthwiseConv2d => check(
            vec![normal(&[2, 3, 5, 5], &mut rng), normal(&[3, 1, 3, 3], &mut rng)],
            &|g, v| g.conv2d(v[0], v[1], None, 1, 1, 3),
        ),
        OpKind::PointwiseConv2d => check(
            vec![normal(&[2, 3, 4, 4], &mut rng), normal(&[5, 3, 1, 1], &mut rng)],
            &|g, v| g.conv2d(v[0], v[1], None, 1, 0, 1),
        ),
        OpKind::BatchNorm => {
            let mean = [0.3, -0.2];
            let var = [1.5, 0.7];
            check(
                vec![normal(&[3, 2, 2, 2], &mut rng), normal(&[2], &mut rng), normal(&[2], &mut rng)],
                &move |g, v| {
                    let train = g.batch_norm(v[0], v[1], v[2], 1, None, None)?;
                    let eval = g.batch_norm(v[0], v[1], v[2], 1, Some((&mean, &var)), None)?;
                    g.mul(train, eval)
                },
            )
        }
        OpKind::LayerNorm => check(
            vec![normal(&[3, 5], &mut rng), normal(&[5], &mut rng), normal(&[5], &mut rng)],
            &|g, v| g.layer_norm(v[0], v[1], v[2]),
        ),
        OpKind::Selu => unary(Unary::Selu, normal(&[3, 4], &mut rng)),
        OpKind::Sigmoid => unary(Unary::Sigmoid, normal(&[3, 4], &mut rng)),
        OpKind::Relu => unary(Unary::Relu, normal(&[3, 4], &mut rng)),
        OpKind::LeakyRelu => unary(Unary::LeakyRelu(0.2), normal(&[3, 4], &mut rng)),
        OpKind::Tanh => unary(Unary::Tanh, normal(&[3, 4], &mut rng)),
        OpKind::Ln => unary(Unary::Ln, Tensor::uniform(&[3, 4], 0.5, 2.0, &mut rng)),
        OpKind::Abs => unary(Unary::Abs, normal(&[3, 4], &mut rng)),
        OpKind::Exp => unary(Unary::Exp, normal(&[3, 4], &mut rng)),
        OpKind::Clamp => check(vec![normal(&[3, 4], &mut rng)], &|g, v| g.clamp(v[0], -0.5, 0.5)),
        OpKind::Softmax => check(vec![normal(&[3, 4], &mut rng)], &|g, v| g.softmax(v[0], 0.5)),
        OpKind::MaskedSoftmax => {
            let mut mask: Vec<bool> = (0..12).map(|_| rng.uniform() < 0.5).collect();
            for row in 0..3 {
                mask[row * 4 + rng.index(4)] = true;
            }
            let mask = Rc::new(mask);
            check(vec![normal(&[3, 4], &mut rng)], &move |g, v| g.masked_softmax(v[0], mask.clone()))
        }
        OpKind::LogSoftmax => check(vec![normal(&[3, 4], &mut rng)], &|g, v| g.log_softmax(v[0])),
        OpKind::Sum => check(vec![normal(&[3, 4], &mut rng)], &|g, v| g.sum(v[0])),
        OpKind::Mean => check(vec![normal(&[3, 4], &mut rng)], &|g, v| g.mean(v[0])),
        OpKind::Gather => {
            let index: Vec<usize> = (0..10).map(|_| rng.index(6)).collect();
            let index = Rc::new(index);
            check(vec![normal(&[2, 3], &mut rng)], &move |g, v| g.gather(v[0], index.clone(), &[2, 5]))
        }
        OpKind::Reshape => check(vec![normal(&[2, 6], &mut rng)], &|g, v| g.reshape(v[0], &[3, 4])),
        OpKind::AvgPool => check(vec![normal(&[2, 2, 5, 5], &mut rng)], &|g, v| g.avg_pool(v[0], 2, 3)),
        // A reversal layer is deliberately not the derivative of its forward
        // pass; two stacked reversals with weights a and 1/a are.
        OpKind::Grl => check(vec![normal(&[4], &mut rng)], &|g, v| {
            let r = g.grl(v[0], 0.7)?;
            g.grl(r, 1.0 / 0.7)
        }),
    }
}
