use crate::error::{Error, Result};
use crate::ndcore::Tensor;

/// Splits a `C × S × S` image into `(S/p)²` tokens of length `C·p²`.
///
/// Tokens are in row-major patch order; each token flattens its patch as
/// `(channel, dy, dx)`.
pub fn patchify(image: &Tensor, patch_px: usize) -> Result<Tensor> {
    let shape = image.shape();
    if shape.len() != 3 || shape[1] != shape[2] {
        return Err(Error::invalid(format!("patchify expects C×S×S, got {shape:?}")));
    }
    let (c, s) = (shape[0], shape[1]);
    if patch_px == 0 || s % patch_px != 0 {
        return Err(Error::invalid(format!("image size {s} is not divisible by patch size {patch_px}")));
    }
    let g = s / patch_px;
    let dim = c * patch_px * patch_px;
    let src = image.data();
    let mut out = Vec::with_capacity(g * g * dim);
    for py in 0..g {
        for px in 0..g {
            for ch in 0..c {
                for dy in 0..patch_px {
                    let row = (ch * s + py * patch_px + dy) * s + px * patch_px;
                    out.extend_from_slice(&src[row..row + patch_px]);
                }
            }
        }
    }
    Ok(Tensor::matrix(g * g, dim, out))
}

/// Inverse of [`patchify`].
pub fn unpatchify(tokens: &Tensor, channels: usize, patch_px: usize) -> Result<Tensor> {
    let n = tokens.rows();
    let g = (n as f64).sqrt().round() as usize;
    if g * g != n || tokens.cols() != channels * patch_px * patch_px {
        return Err(Error::invalid("token matrix does not describe a square image"));
    }
    let s = g * patch_px;
    let mut img = vec![0.0; channels * s * s];
    for py in 0..g {
        for px in 0..g {
            let tok = tokens.row(py * g + px);
            let mut k = 0;
            for ch in 0..channels {
                for dy in 0..patch_px {
                    let row = (ch * s + py * patch_px + dy) * s + px * patch_px;
                    img[row..row + patch_px].copy_from_slice(&tok[k..k + patch_px]);
                    k += patch_px;
                }
            }
        }
    }
    Tensor::new(vec![channels, s, s], img)
}
