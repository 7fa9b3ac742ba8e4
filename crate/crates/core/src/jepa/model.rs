//! Parameter layouts and forward passes of the encoder and predictor.
//!
//! Encoder: linear patch embedding plus learned positions, pre-norm
//! transformer blocks, final LayerNorm, mean pool and a linear output
//! projection. Predictor: a token-wise MLP over (mean context latent + learned
//! query for each target slot).

use std::sync::Arc;

use super::config::EncoderConfig;
use crate::error::{Error, Result};
use crate::ndcore::{Graph, RngStream, Tensor, Var};

const INIT_STD: f64 = 0.02;
const LN_EPS: f64 = 1e-5;
/// Parameters per transformer block.
const BLOCK_PARAMS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub tensors: Vec<Arc<Tensor>>,
}

impl ParamSet {
    pub fn init(layout: &[(String, Vec<usize>, Init)], rng: &mut RngStream) -> Self {
        let mut names = Vec::with_capacity(layout.len());
        let mut tensors = Vec::with_capacity(layout.len());
        for (name, shape, init) in layout {
            let numel: usize = shape.iter().product();
            let data = match init {
                Init::Normal => (0..numel).map(|_| INIT_STD * rng.normal()).collect(),
                Init::Zeros => vec![0.0; numel],
                Init::Ones => vec![1.0; numel],
            };
            names.push(name.clone());
            tensors.push(Arc::new(Tensor::new(shape.clone(), data).expect("layout shape")));
        }
        Self { names, tensors }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &*self.tensors[i])
    }

    pub fn set(&mut self, name: &str, t: Tensor) -> Result<()> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::invalid(format!("no parameter named {name}")))?;
        if t.shape() != self.tensors[i].shape() {
            return Err(Error::Shape {
                context: "ParamSet::set",
                expected: self.tensors[i].shape().to_vec(),
                actual: t.shape().to_vec(),
            });
        }
        self.tensors[i] = Arc::new(t);
        Ok(())
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.all_finite())
    }

    pub fn check_matches(&self, other: &ParamSet) -> Result<()> {
        if self.names != other.names {
            return Err(Error::invalid("parameter sets have different layouts"));
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.shape() != b.shape() {
                return Err(Error::Shape {
                    context: "parameter set",
                    expected: a.shape().to_vec(),
                    actual: b.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Registers every tensor as a graph parameter with indices `offset..`.
    pub fn bind(&self, g: &mut Graph, offset: usize) -> Vec<Var> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| g.param(offset + i, Arc::clone(t)))
            .collect()
    }
}

fn entry(name: impl Into<String>, shape: &[usize], init: Init) -> (String, Vec<usize>, Init) {
    (name.into(), shape.to_vec(), init)
}

pub fn encoder_layout(cfg: &EncoderConfig) -> Vec<(String, Vec<usize>, Init)> {
    let w = cfg.width;
    let h = w * cfg.mlp_ratio;
    let mut l = vec![
        entry("patch_embed.w", &[cfg.token_dim(), w], Init::Normal),
        entry("patch_embed.b", &[1, w], Init::Zeros),
        entry("pos", &[cfg.n_tokens(), w], Init::Normal),
    ];
    for i in 0..cfg.n_layers {
        let p = |s: &str| format!("block{i}.{s}");
        l.extend([
            entry(p("ln1.g"), &[1, w], Init::Ones),
            entry(p("ln1.b"), &[1, w], Init::Zeros),
            entry(p("attn.wq"), &[w, w], Init::Normal),
            entry(p("attn.bq"), &[1, w], Init::Zeros),
            entry(p("attn.wk"), &[w, w], Init::Normal),
            entry(p("attn.bk"), &[1, w], Init::Zeros),
            entry(p("attn.wv"), &[w, w], Init::Normal),
            entry(p("attn.bv"), &[1, w], Init::Zeros),
            entry(p("attn.wo"), &[w, w], Init::Normal),
            entry(p("attn.bo"), &[1, w], Init::Zeros),
            entry(p("ln2.g"), &[1, w], Init::Ones),
            entry(p("ln2.b"), &[1, w], Init::Zeros),
            entry(p("mlp.w1"), &[w, h], Init::Normal),
            entry(p("mlp.b1"), &[1, h], Init::Zeros),
            entry(p("mlp.w2"), &[h, w], Init::Normal),
            entry(p("mlp.b2"), &[1, w], Init::Zeros),
        ]);
    }
    l.extend([
        entry("ln_f.g", &[1, w], Init::Ones),
        entry("ln_f.b", &[1, w], Init::Zeros),
        entry("proj.w", &[w, cfg.out_dim], Init::Normal),
        entry("proj.b", &[1, cfg.out_dim], Init::Zeros),
    ]);
    l
}

pub fn predictor_layout(cfg: &EncoderConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (w, pw) = (cfg.width, cfg.predictor_width);
    let mut l = vec![entry("query_pos", &[cfg.n_tokens(), w], Init::Normal)];
    let depth = cfg.predictor_depth.max(1);
    for i in 0..depth {
        let fan_in = if i == 0 { w } else { pw };
        let fan_out = if i + 1 == depth { w } else { pw };
        l.push(entry(format!("layer{i}.w"), &[fan_in, fan_out], Init::Normal));
        l.push(entry(format!("layer{i}.b"), &[1, fan_out], Init::Zeros));
    }
    l
}

/// Number of encoder parameters that does not depend on the channel count.
pub fn shared_param_count(cfg: &EncoderConfig) -> usize {
    let total: usize = encoder_layout(cfg).iter().map(|(_, s, _)| s.iter().product::<usize>()).sum();
    total - cfg.token_dim() * cfg.width
}

fn affine(g: &mut Graph, x: Var, w: Var, b: Var) -> Var {
    let y = g.matmul(x, w);
    g.add_row(y, b)
}

fn norm(g: &mut Graph, x: Var, gain: Var, bias: Var) -> Var {
    let y = g.layer_norm_rows(x, LN_EPS);
    let y = g.mul_row(y, gain);
    g.add_row(y, bias)
}

fn block(g: &mut Graph, cfg: &EncoderConfig, p: &[Var], x: Var) -> Var {
    let h = norm(g, x, p[0], p[1]);
    let q = affine(g, h, p[2], p[3]);
    let k = affine(g, h, p[4], p[5]);
    let v = affine(g, h, p[6], p[7]);
    let dh = cfg.width / cfg.n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let heads: Vec<Var> = (0..cfg.n_heads)
        .map(|i| {
            let qh = g.slice_cols(q, i * dh, dh);
            let kh = g.slice_cols(k, i * dh, dh);
            let vh = g.slice_cols(v, i * dh, dh);
            let s = g.matmul_t(qh, kh);
            let s = g.scale(s, scale);
            let a = g.softmax_rows(s);
            g.matmul(a, vh)
        })
        .collect();
    let o = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
    let o = affine(g, o, p[8], p[9]);
    let x = g.add(x, o);
    let h = norm(g, x, p[10], p[11]);
    let m = affine(g, h, p[12], p[13]);
    let m = g.gelu(m);
    let m = affine(g, m, p[14], p[15]);
    g.add(x, m)
}

/// Encodes `tokens` (rows are tokens at grid slots `positions`).
///
/// Returns the final-layer latents (`len × width`) and the pooled embedding
/// (`1 × out_dim`).
pub fn encode(g: &mut Graph, cfg: &EncoderConfig, p: &[Var], tokens: Var, positions: &[usize]) -> (Var, Var) {
    let x = affine(g, tokens, p[0], p[1]);
    let pos = g.gather_rows(p[2], positions);
    let mut x = g.add(x, pos);
    for i in 0..cfg.n_layers {
        let at = 3 + i * BLOCK_PARAMS;
        x = block(g, cfg, &p[at..at + BLOCK_PARAMS], x);
    }
    let tail = 3 + cfg.n_layers * BLOCK_PARAMS;
    let latents = norm(g, x, p[tail], p[tail + 1]);
    let mean = g.mean_rows(latents);
    let pooled = affine(g, mean, p[tail + 2], p[tail + 3]);
    (latents, pooled)
}

/// Predicts target-slot latents from context latents.
pub fn predict(g: &mut Graph, cfg: &EncoderConfig, p: &[Var], context_latents: Var, targets: &[usize]) -> Var {
    let ctx = g.mean_rows(context_latents);
    let q = g.gather_rows(p[0], targets);
    let mut h = g.add_row(q, ctx);
    let depth = cfg.predictor_depth.max(1);
    for i in 0..depth {
        h = affine(g, h, p[1 + 2 * i], p[2 + 2 * i]);
        if i + 1 < depth {
            h = g.gelu(h);
        }
    }
    h
}

/// Checks a token matrix against the encoder configuration.
pub fn check_tokens(cfg: &EncoderConfig, tokens: &Tensor, positions: &[usize]) -> Result<()> {
    if tokens.shape().len() != 2 || tokens.cols() != cfg.token_dim() || tokens.rows() != positions.len() {
        return Err(Error::Shape {
            context: "encoder tokens",
            expected: vec![positions.len(), cfg.token_dim()],
            actual: tokens.shape().to_vec(),
        });
    }
    if let Some(&bad) = positions.iter().find(|&&p| p >= cfg.n_tokens()) {
        return Err(Error::invalid(format!("token position {bad} outside the {}-slot grid", cfg.n_tokens())));
    }
    Ok(())
}

/// Forward pass without gradients: (latents, pooled embedding).
pub fn encode_tensors(
    cfg: &EncoderConfig,
    params: &ParamSet,
    tokens: &Tensor,
    positions: &[usize],
) -> Result<(Tensor, Tensor)> {
    check_tokens(cfg, tokens, positions)?;
    let mut g = Graph::new();
    let vars: Vec<Var> = params.tensors.iter().map(|t| g.constant_arc(Arc::clone(t))).collect();
    let x = g.constant(tokens.clone());
    let (lat, pooled) = encode(&mut g, cfg, &vars, x, positions);
    Ok((g.value(lat).clone(), g.value(pooled).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> EncoderConfig {
        EncoderConfig {
            width: 16,
            n_heads: 2,
            n_layers: 2,
            out_dim: 8,
            predictor_width: 16,
            ..EncoderConfig::tiny(3, 16)
        }
    }

    fn tokens(c: &EncoderConfig, seed: u64) -> Tensor {
        let mut rng = RngStream::new(seed);
        let n = c.n_tokens();
        Tensor::matrix(n, c.token_dim(), (0..n * c.token_dim()).map(|_| rng.normal()).collect())
    }

    #[test]
    fn zero_projection_pools_to_zero() {
        let c = cfg();
        let mut p = ParamSet::init(&encoder_layout(&c), &mut RngStream::new(1));
        p.set("proj.w", Tensor::zeros(&[c.width, c.out_dim])).unwrap();
        let pos: Vec<usize> = (0..c.n_tokens()).collect();
        let (_, pooled) = encode_tensors(&c, &p, &tokens(&c, 2), &pos).unwrap();
        assert!(pooled.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pooled_embedding_is_permutation_invariant() {
        let c = cfg();
        let p = ParamSet::init(&encoder_layout(&c), &mut RngStream::new(1));
        let t = tokens(&c, 3);
        let pos: Vec<usize> = (0..c.n_tokens()).collect();
        let perm = RngStream::new(9).permutation(c.n_tokens());
        let (_, a) = encode_tensors(&c, &p, &t, &pos).unwrap();
        let (_, b) = encode_tensors(&c, &p, &t.select_rows(&perm), &perm).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-10);
    }

    #[test]
    fn out_dim_and_shape_errors() {
        let c = cfg();
        let p = ParamSet::init(&encoder_layout(&c), &mut RngStream::new(1));
        let pos: Vec<usize> = (0..c.n_tokens()).collect();
        let (lat, pooled) = encode_tensors(&c, &p, &tokens(&c, 2), &pos).unwrap();
        assert_eq!(lat.shape(), &[c.n_tokens(), c.width]);
        assert_eq!(pooled.shape(), &[1, c.out_dim]);
        let bad = Tensor::zeros(&[c.n_tokens(), c.token_dim() + 1]);
        assert!(encode_tensors(&c, &p, &bad, &pos).is_err());
    }

    #[test]
    fn shared_count_is_channel_independent() {
        let counts: Vec<usize> = [10, 2, 2, 40, 6, 60]
            .iter()
            .map(|&ch| shared_param_count(&EncoderConfig::tiny(ch, 16)))
            .collect();
        assert!(counts.windows(2).all(|w| w[0] == w[1]));
        let c = EncoderConfig::tiny(2, 16);
        let total: usize = encoder_layout(&c).iter().map(|(_, s, _)| s.iter().product::<usize>()).sum();
        assert_eq!(total - counts[0], c.token_dim() * c.width);
    }

    #[test]
    fn predictor_output_shape() {
        let c = cfg();
        let enc = ParamSet::init(&encoder_layout(&c), &mut RngStream::new(1));
        let pred = ParamSet::init(&predictor_layout(&c), &mut RngStream::new(2));
        let mut g = Graph::new();
        let ev = enc.bind(&mut g, 0);
        let pv = pred.bind(&mut g, enc.len());
        let x = g.constant(tokens(&c, 1).select_rows(&[0, 1, 2]));
        let (lat, _) = encode(&mut g, &c, &ev, x, &[0, 1, 2]);
        let y = predict(&mut g, &c, &pv, lat, &[5, 9]);
        assert_eq!(g.value(y).shape(), &[2, c.width]);
    }
}
