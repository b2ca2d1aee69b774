//! Stacked masked multi-head attention over pyramid tokens.
//!
//! Each layer is a pre-norm residual block: attention restricted by the
//! pyramid neighborhood mask, then a GELU feed-forward. Disallowed
//! attention entries receive a large negative additive bias before the
//! softmax so gradients stay finite.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tensor, Var};
use crate::pyramid::MASK_NEG;

/// Encoder hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ff_mult: usize,
    pub dropout: f64,
    /// Layer normalization is on by default; switchable for ablations.
    pub layer_norm: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 1,
            d_model: 16,
            heads: 4,
            ff_mult: 4,
            dropout: 0.1,
            layer_norm: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "heads ({}) must divide d_model ({})",
                self.heads, self.d_model
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

/// Query/key/value/output projections of one attention layer. The
/// Q/K/V maps are bias-free (a key bias would cancel inside the softmax
/// anyway); only the output projection carries one.
#[derive(Clone, Copy)]
pub struct AttentionVars<'t> {
    pub wq: Var<'t>,
    pub wk: Var<'t>,
    pub wv: Var<'t>,
    pub wo: Var<'t>,
    pub bo: Var<'t>,
}

/// All parameters of one encoder layer, bound on a tape.
#[derive(Clone, Copy)]
pub struct LayerVars<'t> {
    pub attn: AttentionVars<'t>,
    pub ln1_gain: Var<'t>,
    pub ln1_bias: Var<'t>,
    pub ln2_gain: Var<'t>,
    pub ln2_bias: Var<'t>,
    pub ff_w1: Var<'t>,
    pub ff_b1: Var<'t>,
    pub ff_w2: Var<'t>,
    pub ff_b2: Var<'t>,
}

/// Multi-head attention with an additive neighborhood mask.
///
/// Per head: scores = Q K^T / sqrt(d_K), plus the mask bias, softmax,
/// times V; heads are concatenated and output-projected.
pub fn ppam_attention<'t>(
    tokens: Var<'t>,
    mask_bias: Var<'t>,
    heads: usize,
    p: &AttentionVars<'t>,
) -> Result<Var<'t>> {
    let n = tokens.shape()[0];
    let d_model = tokens.shape()[1];
    if d_model % heads != 0 {
        return Err(Error::Config(format!(
            "heads ({heads}) must divide token width ({d_model})"
        )));
    }
    {
        // every token must attend somewhere; the diagonal-allowed mask
        // invariant guarantees it, so a fully-banned row is a bug
        let bias = mask_bias.value();
        for i in 0..n {
            assert!(
                (0..n).any(|j| bias.at(i, j) > MASK_NEG / 2.0),
                "attention mask bans every partner of token {i}"
            );
        }
    }
    let d_k = d_model / heads;
    let inv_scale = 1.0 / (d_k as f64).sqrt();

    let q = tokens.matmul(p.wq)?;
    let k = tokens.matmul(p.wk)?;
    let v = tokens.matmul(p.wv)?;

    let mut head_outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = q.slice_cols(h * d_k, d_k)?;
        let kh = k.slice_cols(h * d_k, d_k)?;
        let vh = v.slice_cols(h * d_k, d_k)?;
        let scores = qh
            .matmul(kh.transpose()?)?
            .scale(inv_scale)?
            .add(mask_bias)?;
        let weights = scores.softmax_lastdim()?;
        head_outputs.push(weights.matmul(vh)?);
    }
    let merged = Var::concat_cols(&head_outputs)?;
    merged.matmul(p.wo)?.add_bias(p.bo)
}

fn dropout<'t>(x: Var<'t>, rate: f64, rng: &mut ChaCha8Rng) -> Result<Var<'t>> {
    if rate == 0.0 {
        return Ok(x);
    }
    let shape = x.shape();
    let n: usize = shape.iter().product();
    let keep = 1.0 - rate;
    let data: Vec<f64> = (0..n)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    // the mask is a constant; gradient flows through the product only
    let mask = x.tape().constant(Tensor::new(shape, data)?);
    x.mul(mask)
}

/// Runs the full encoder stack over embedded pyramid tokens.
pub fn encode<'t>(
    tokens: Var<'t>,
    mask_bias: Var<'t>,
    cfg: &EncoderConfig,
    layers: &[LayerVars<'t>],
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<Var<'t>> {
    cfg.validate()?;
    if layers.len() != cfg.layers {
        return Err(Error::Config(format!(
            "expected {} layer parameter sets, got {}",
            cfg.layers,
            layers.len()
        )));
    }
    let mut x = tokens;
    for layer in layers {
        let attn_in = if cfg.layer_norm {
            x.layer_norm(layer.ln1_gain, layer.ln1_bias)?
        } else {
            x
        };
        let mut attended = ppam_attention(attn_in, mask_bias, cfg.heads, &layer.attn)?;
        if let Some(rng) = dropout_rng.as_deref_mut() {
            attended = dropout(attended, cfg.dropout, rng)?;
        }
        x = x.add(attended)?;

        let ff_in = if cfg.layer_norm {
            x.layer_norm(layer.ln2_gain, layer.ln2_bias)?
        } else {
            x
        };
        let mut ff = ff_in
            .matmul(layer.ff_w1)?
            .add_bias(layer.ff_b1)?
            .gelu()?
            .matmul(layer.ff_w2)?
            .add_bias(layer.ff_b2)?;
        if let Some(rng) = dropout_rng.as_deref_mut() {
            ff = dropout(ff, cfg.dropout, rng)?;
        }
        x = x.add(ff)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, Tape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
        Tensor::new(vec![n], (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap()
    }

    struct AttnTensors {
        wq: Tensor,
        wk: Tensor,
        wv: Tensor,
        wo: Tensor,
        bo: Tensor,
    }

    fn rand_attn(rng: &mut ChaCha8Rng, d: usize) -> AttnTensors {
        AttnTensors {
            wq: rand_mat(rng, d, d),
            wk: rand_mat(rng, d, d),
            wv: rand_mat(rng, d, d),
            wo: rand_mat(rng, d, d),
            bo: rand_vec(rng, d),
        }
    }

    fn bind<'t>(tape: &'t Tape, p: &AttnTensors) -> AttentionVars<'t> {
        AttentionVars {
            wq: tape.constant(p.wq.clone()),
            wk: tape.constant(p.wk.clone()),
            wv: tape.constant(p.wv.clone()),
            wo: tape.constant(p.wo.clone()),
            bo: tape.constant(p.bo.clone()),
        }
    }

    fn mat_mul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for c in 0..k {
                    s += a[i * k + c] * b[c * n + j];
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    fn add_bias(x: &mut [f64], b: &[f64]) {
        let c = b.len();
        for (i, v) in x.iter_mut().enumerate() {
            *v += b[i % c];
        }
    }

    /// Independent unmasked multi-head attention in natural loop order.
    fn reference_full_attention(tokens: &Tensor, p: &AttnTensors, heads: usize) -> Vec<f64> {
        let n = tokens.rows();
        let d = tokens.cols();
        let d_k = d / heads;
        let inv = 1.0 / (d_k as f64).sqrt();
        let q = mat_mul(tokens.data(), p.wq.data(), n, d, d);
        let k = mat_mul(tokens.data(), p.wk.data(), n, d, d);
        let v = mat_mul(tokens.data(), p.wv.data(), n, d, d);
        let mut merged = vec![0.0; n * d];
        for h in 0..heads {
            for i in 0..n {
                let mut scores = vec![0.0; n];
                for j in 0..n {
                    let mut s = 0.0;
                    for c in 0..d_k {
                        s += q[i * d + h * d_k + c] * k[j * d + h * d_k + c];
                    }
                    scores[j] = s * inv;
                }
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|&s| (s - m).exp()).collect();
                let denom: f64 = exps.iter().sum();
                for c in 0..d_k {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += exps[j] / denom * v[j * d + h * d_k + c];
                    }
                    merged[i * d + h * d_k + c] = acc;
                }
            }
        }
        let mut out = mat_mul(&merged, p.wo.data(), n, d, d);
        add_bias(&mut out, p.bo.data());
        out
    }

    fn zero_bias(n: usize) -> Tensor {
        Tensor::new(vec![n], vec![0.0; n]).unwrap()
    }

    fn identity(n: usize) -> Tensor {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor::matrix(n, n, data).unwrap()
    }

    #[test]
    fn all_allowed_mask_equals_unmasked_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10 {
            let n = rng.gen_range(3..8);
            let d = 8;
            let tokens = rand_mat(&mut rng, n, d);
            let p = rand_attn(&mut rng, d);
            let tape = Tape::new();
            let tok = tape.constant(tokens.clone());
            let mask = tape.constant(Tensor::matrix(n, n, vec![0.0; n * n]).unwrap());
            let got = ppam_attention(tok, mask, 2, &bind(&tape, &p)).unwrap().value();
            let want = reference_full_attention(&tokens, &p, 2);
            assert_eq!(got.data(), want.as_slice(), "bitwise mismatch");
        }
    }

    #[test]
    fn diagonal_mask_returns_value_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (n, d) = (4, 6);
        let tokens = rand_mat(&mut rng, n, d);
        let mut p = rand_attn(&mut rng, d);
        p.wo = identity(d);
        p.bo = zero_bias(d);
        let tape = Tape::new();
        let tok = tape.constant(tokens.clone());
        let mut bias = vec![MASK_NEG; n * n];
        for i in 0..n {
            bias[i * n + i] = 0.0;
        }
        let mask = tape.constant(Tensor::matrix(n, n, bias).unwrap());
        let got = ppam_attention(tok, mask, 3, &bind(&tape, &p)).unwrap().value();
        // each output token must be exactly its own value vector
        let tape2 = Tape::new();
        let tok2 = tape2.constant(tokens);
        let v = tok2.matmul(tape2.constant(p.wv.clone())).unwrap().value();
        for (g, w) in got.data().iter().zip(v.data()) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn chain_mask_matches_post_softmax_zeroing_oracle() {
        // tokens 1-2 and 2-3 may attend; 1-3 may not
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n, d, heads) = (3, 4, 2);
        let tokens = rand_mat(&mut rng, n, d);
        let p = rand_attn(&mut rng, d);
        let allowed = [
            [true, true, false],
            [true, true, true],
            [false, true, true],
        ];
        let tape = Tape::new();
        let tok = tape.constant(tokens.clone());
        let bias: Vec<f64> = allowed
            .iter()
            .flatten()
            .map(|&a| if a { 0.0 } else { MASK_NEG })
            .collect();
        let mask = tape.constant(Tensor::matrix(n, n, bias).unwrap());
        let got = ppam_attention(tok, mask, heads, &bind(&tape, &p)).unwrap().value();

        // oracle: full softmax, zero the banned weights, renormalize
        let d_k = d / heads;
        let inv = 1.0 / (d_k as f64).sqrt();
        let q = mat_mul(tokens.data(), p.wq.data(), n, d, d);
        let k = mat_mul(tokens.data(), p.wk.data(), n, d, d);
        let v = mat_mul(tokens.data(), p.wv.data(), n, d, d);
        let mut merged = vec![0.0; n * d];
        for h in 0..heads {
            for i in 0..n {
                let mut weights = vec![0.0; n];
                for j in 0..n {
                    let mut s = 0.0;
                    for c in 0..d_k {
                        s += q[i * d + h * d_k + c] * k[j * d + h * d_k + c];
                    }
                    weights[j] = (s * inv).exp();
                }
                for j in 0..n {
                    if !allowed[i][j] {
                        weights[j] = 0.0;
                    }
                }
                let denom: f64 = weights.iter().sum();
                for c in 0..d_k {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += weights[j] / denom * v[j * d + h * d_k + c];
                    }
                    merged[i * d + h * d_k + c] = acc;
                }
            }
        }
        let mut want = mat_mul(&merged, p.wo.data(), n, d, d);
        add_bias(&mut want, p.bo.data());
        for (g, w) in got.data().iter().zip(&want) {
            assert!((g - w).abs() < 1e-10, "{g} vs {w}");
        }
    }

    fn layer_from<'t>(
        tape: &'t Tape,
        attn: &AttnTensors,
        d: usize,
        ff: usize,
        zero_out: bool,
    ) -> LayerVars<'t> {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let ones = Tensor::new(vec![d], vec![1.0; d]).unwrap();
        LayerVars {
            attn: AttentionVars {
                wq: tape.constant(attn.wq.clone()),
                wk: tape.constant(attn.wk.clone()),
                wv: tape.constant(attn.wv.clone()),
                wo: tape.constant(if zero_out {
                    Tensor::matrix(d, d, vec![0.0; d * d]).unwrap()
                } else {
                    attn.wo.clone()
                }),
                bo: tape.constant(zero_bias(d)),
            },
            ln1_gain: tape.constant(ones.clone()),
            ln1_bias: tape.constant(zero_bias(d)),
            ln2_gain: tape.constant(ones),
            ln2_bias: tape.constant(zero_bias(d)),
            ff_w1: tape.constant(rand_mat(&mut rng, d, ff)),
            ff_b1: tape.constant(zero_bias(ff)),
            ff_w2: tape.constant(if zero_out {
                Tensor::matrix(ff, d, vec![0.0; ff * d]).unwrap()
            } else {
                rand_mat(&mut rng, ff, d)
            }),
            ff_b2: tape.constant(zero_bias(d)),
        }
    }

    #[test]
    fn residual_identity_with_zeroed_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (n, d) = (5, 8);
        let tokens = rand_mat(&mut rng, n, d);
        let attn = rand_attn(&mut rng, d);
        let cfg = EncoderConfig {
            layers: 1,
            d_model: d,
            heads: 2,
            ff_mult: 4,
            dropout: 0.0,
            layer_norm: true,
        };
        let tape = Tape::new();
        let tok = tape.constant(tokens.clone());
        let mask = tape.constant(Tensor::matrix(n, n, vec![0.0; n * n]).unwrap());
        let layer = layer_from(&tape, &attn, d, 4 * d, true);
        let out = encode(tok, mask, &cfg, &[layer], None).unwrap().value();
        assert_eq!(out.data(), tokens.data());
    }

    #[test]
    fn zero_layer_config_rejected() {
        let cfg = EncoderConfig {
            layers: 0,
            ..EncoderConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn head_mismatch_rejected() {
        let cfg = EncoderConfig {
            d_model: 10,
            heads: 4,
            ..EncoderConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn matching_values_attract_attention() {
        // W_Q = W_K = I; token b repeats token a, token c orthogonal:
        // a's weight on b must exceed its weight on c
        let d = 2;
        let tokens = Tensor::matrix(3, 2, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let p = AttnTensors {
            wq: identity(d),
            wk: identity(d),
            wv: identity(d),
            wo: identity(d),
            bo: zero_bias(d),
        };
        let tape = Tape::new();
        let tok = tape.constant(tokens);
        let mask = tape.constant(Tensor::matrix(3, 3, vec![0.0; 9]).unwrap());
        let out = ppam_attention(tok, mask, 1, &bind(&tape, &p)).unwrap().value();
        // output of token a mixes values [1,0] (self+b) and [0,1] (c);
        // more weight on b shows up as out[0][0] > out[0][1]
        assert!(out.at(0, 0) > out.at(0, 1));
    }

    #[test]
    fn permutation_equivariance_without_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (n, d) = (6, 8);
        let tokens = rand_mat(&mut rng, n, d);
        let attn = rand_attn(&mut rng, d);
        let cfg = EncoderConfig {
            layers: 2,
            d_model: d,
            heads: 2,
            ff_mult: 2,
            dropout: 0.0,
            layer_norm: true,
        };
        // random symmetric mask with allowed diagonal
        let mut allowed = vec![false; n * n];
        for i in 0..n {
            allowed[i * n + i] = true;
            for j in 0..i {
                let a = rng.gen_bool(0.6);
                allowed[i * n + j] = a;
                allowed[j * n + i] = a;
            }
        }
        let perm: Vec<usize> = {
            let mut p: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                p.swap(i, rng.gen_range(0..=i));
            }
            p
        };

        let run = |tok_data: &Tensor, allowed: &[bool]| -> Tensor {
            let tape = Tape::new();
            let tok = tape.constant(tok_data.clone());
            let bias: Vec<f64> = allowed
                .iter()
                .map(|&a| if a { 0.0 } else { MASK_NEG })
                .collect();
            let mask = tape.constant(Tensor::matrix(n, n, bias).unwrap());
            let l1 = layer_from(&tape, &attn, d, 2 * d, false);
            let l2 = layer_from(&tape, &attn, d, 2 * d, false);
            encode(tok, mask, &cfg, &[l1, l2], None).unwrap().value()
        };

        let base = run(&tokens, &allowed);

        let mut perm_tokens = vec![0.0; n * d];
        for (new_row, &old_row) in perm.iter().enumerate() {
            perm_tokens[new_row * d..(new_row + 1) * d]
                .copy_from_slice(&tokens.data()[old_row * d..(old_row + 1) * d]);
        }
        let mut perm_allowed = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                perm_allowed[i * n + j] = allowed[perm[i] * n + perm[j]];
            }
        }
        let permuted = run(&Tensor::matrix(n, d, perm_tokens).unwrap(), &perm_allowed);

        for i in 0..n {
            for j in 0..d {
                let diff = (permuted.at(i, j) - base.at(perm[i], j)).abs();
                assert!(diff < 1e-12, "row {i} col {j}: {diff}");
            }
        }
    }

    #[test]
    fn encoder_gradients_pass_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (n, d, ff) = (5, 8, 16);
        let tokens = rand_mat(&mut rng, n, d);
        let cfg = EncoderConfig {
            layers: 1,
            d_model: d,
            heads: 2,
            ff_mult: 2,
            dropout: 0.0,
            layer_norm: true,
        };
        let params = vec![
            rand_mat(&mut rng, d, d),
            rand_mat(&mut rng, d, d),
            rand_mat(&mut rng, d, d),
            rand_mat(&mut rng, d, d),
            rand_vec(&mut rng, d),
            Tensor::new(vec![d], vec![1.0; d]).unwrap(),
            zero_bias(d),
            Tensor::new(vec![d], vec![1.0; d]).unwrap(),
            zero_bias(d),
            rand_mat(&mut rng, d, ff),
            rand_vec(&mut rng, ff),
            rand_mat(&mut rng, ff, d),
            rand_vec(&mut rng, d),
        ];
        let err = grad_check(
            move |tape, vars| {
                let tok = tape.constant(tokens.clone());
                let mask = tape.constant(Tensor::matrix(n, n, vec![0.0; n * n]).unwrap());
                let layer = LayerVars {
                    attn: AttentionVars {
                        wq: vars[0],
                        wk: vars[1],
                        wv: vars[2],
                        wo: vars[3],
                        bo: vars[4],
                    },
                    ln1_gain: vars[5],
                    ln1_bias: vars[6],
                    ln2_gain: vars[7],
                    ln2_bias: vars[8],
                    ff_w1: vars[9],
                    ff_b1: vars[10],
                    ff_w2: vars[11],
                    ff_b2: vars[12],
                };
                encode(tok, mask, &cfg, &[layer], None)?.mean_all()
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-3, "rel err {err}");
    }
}
