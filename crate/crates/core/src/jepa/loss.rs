use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::model::ParamSet;
use crate::error::{Error, Result};
use crate::ndcore::{Graph, Tensor, Var};

/// Stabiliser inside the VICReg standard deviation.
pub const VICREG_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VicregWeights {
    pub gamma: f64,
    pub lambda_var: f64,
    pub lambda_cov: f64,
}

/// Graph nodes of a VICReg evaluation.
#[derive(Clone, Copy, Debug)]
pub struct VicregTerms {
    pub total: Var,
    pub variance: Var,
    pub covariance: Var,
}

/// Mean squared error between predicted and target latents.
pub fn jepa_loss(predicted: &Tensor, target: &Tensor) -> Result<f64> {
    if predicted.shape() != target.shape() {
        return Err(Error::Shape {
            context: "jepa_loss",
            expected: target.shape().to_vec(),
            actual: predicted.shape().to_vec(),
        });
    }
    let sse: f64 = predicted.data().iter().zip(target.data()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sse / predicted.len() as f64)
}

/// Graph form of [`jepa_loss`]; `target` must be a constant node.
pub fn jepa_loss_graph(g: &mut Graph, predicted: Var, target: Var) -> Var {
    let d = g.sub(predicted, target);
    let sq = g.square(d);
    g.mean(sq)
}

/// VICReg variance and covariance terms of a `B × d` batch node.
pub fn vicreg_graph(g: &mut Graph, z: Var, w: VicregWeights) -> Result<VicregTerms> {
    let (b, d) = (g.value(z).rows(), g.value(z).cols());
    if b < 2 {
        return Err(Error::invalid(format!("vicreg needs a batch of at least 2, got {b}")));
    }
    let mean = g.mean_rows(z);
    let neg = g.scale(mean, -1.0);
    let zc = g.add_row(z, neg);
    let sq = g.square(zc);
    let var = g.mean_rows(sq);
    let var = g.scale(var, b as f64 / (b as f64 - 1.0));
    let var = g.add_const(var, VICREG_EPS);
    let std = g.sqrt(var);
    let gap = g.scale(std, -1.0);
    let gap = g.add_const(gap, w.gamma);
    let hinge = g.hinge(gap);
    let variance = g.mean(hinge);

    let zt = g.transpose(zc);
    let cov = g.matmul(zt, zc);
    let cov = g.scale(cov, 1.0 / (b as f64 - 1.0));
    let mask = g.constant(off_diagonal_mask(d));
    let off = g.mul(cov, mask);
    let off = g.square(off);
    let off = g.sum(off);
    let covariance = g.scale(off, 1.0 / d as f64);

    let a = g.scale(variance, w.lambda_var);
    let c = g.scale(covariance, w.lambda_cov);
    let total = g.add(a, c);
    Ok(VicregTerms { total, variance, covariance })
}

fn off_diagonal_mask(d: usize) -> Tensor {
    let mut m = Tensor::filled(&[d, d], 1.0);
    for i in 0..d {
        m.set(i, i, 0.0);
    }
    m
}

/// VICReg value `(total, variance term, covariance term)` of a batch.
pub fn vicreg(z: &Tensor, w: VicregWeights) -> Result<(f64, f64, f64)> {
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let t = vicreg_graph(&mut g, zv, w)?;
    Ok((g.scalar(t.total), g.scalar(t.variance), g.scalar(t.covariance)))
}

/// θ_target ← m·θ_target + (1 − m)·θ_context.
pub fn ema_update(target: &mut ParamSet, context: &ParamSet, m: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::invalid(format!("ema momentum {m} is outside [0, 1]")));
    }
    target.check_matches(context)?;
    for (t, c) in target.tensors.iter_mut().zip(&context.tensors) {
        let mut next = (**t).clone();
        for (a, &b) in next.data_mut().iter_mut().zip(c.data()) {
            *a = m * *a + (1.0 - m) * b;
        }
        *t = Arc::new(next);
    }
    Ok(())
}
