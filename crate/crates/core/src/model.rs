//! Model assembly: named parameter blocks plus the two forward passes.
//!
//! The reconstruction model (forecasting, imputation, anomaly
//! detection) runs normalize -> decompose -> periodic pyramid ->
//! masked attention -> feature-flow aggregation, adds a linear trend
//! head, and de-normalizes. The classification model keeps the trend in
//! (no decomposition, no de-normalization) and projects all encoded
//! tokens straight into the class space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{encode, AttentionVars, EncoderConfig, LayerVars};
use crate::error::{Error, Result};
use crate::flows::{aggregate_flows, enumerate_flows_bounded};
use crate::numerics::{Tape, Tensor, Var};
use crate::preprocess::{decompose, normalize, NormStats};
use crate::pyramid::{
    build_mask, embed, inclusion, max_token_count, padded_component_matrix, ComponentTable,
};
use crate::series::Series;
use crate::spectral::{detect_periods, PeriodSet};

/// Ordered, named parameter blocks; declaration order is the checkpoint
/// block order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamRegistry {
    blocks: Vec<(String, Tensor)>,
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self { blocks: Vec::new() }
    }

    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.blocks.push((name.into(), tensor));
        self.blocks.len() - 1
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.blocks[idx].0
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.blocks[idx].1
    }

    pub fn set_tensor(&mut self, idx: usize, t: Tensor) {
        debug_assert_eq!(self.blocks[idx].1.shape(), t.shape());
        self.blocks[idx].1 = t;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.blocks.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Binds every block on a tape, trainable or frozen.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Vec<Var<'t>> {
        self.blocks
            .iter()
            .map(|(_, t)| {
                if trainable {
                    tape.input(t.clone().requires_grad(true))
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }
}

impl Default for ParamRegistry {
    fn default() -> Self {
        Self::new()
    }
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect(),
    )
    .expect("finite init")
}

fn zeros_vec(n: usize) -> Tensor {
    Tensor::new(vec![n], vec![0.0; n]).expect("nonempty")
}

fn ones_vec(n: usize) -> Tensor {
    Tensor::new(vec![n], vec![1.0; n]).expect("nonempty")
}

#[derive(Debug, Clone, Copy)]
struct LayerIds {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    bo: usize,
    ln1_gain: usize,
    ln1_bias: usize,
    ln2_gain: usize,
    ln2_bias: usize,
    ff_w1: usize,
    ff_b1: usize,
    ff_w2: usize,
    ff_b2: usize,
}

fn register_layer(params: &mut ParamRegistry, rng: &mut ChaCha8Rng, i: usize, cfg: &EncoderConfig) -> LayerIds {
    let d = cfg.d_model;
    let ff = cfg.ff_mult * d;
    LayerIds {
        wq: params.register(format!("layer{i}.attn.wq"), xavier(rng, d, d)),
        wk: params.register(format!("layer{i}.attn.wk"), xavier(rng, d, d)),
        wv: params.register(format!("layer{i}.attn.wv"), xavier(rng, d, d)),
        wo: params.register(format!("layer{i}.attn.wo"), xavier(rng, d, d)),
        bo: params.register(format!("layer{i}.attn.bo"), zeros_vec(d)),
        ln1_gain: params.register(format!("layer{i}.ln1.gain"), ones_vec(d)),
        ln1_bias: params.register(format!("layer{i}.ln1.bias"), zeros_vec(d)),
        ln2_gain: params.register(format!("layer{i}.ln2.gain"), ones_vec(d)),
        ln2_bias: params.register(format!("layer{i}.ln2.bias"), zeros_vec(d)),
        ff_w1: params.register(format!("layer{i}.ff.w1"), xavier(rng, d, ff)),
        ff_b1: params.register(format!("layer{i}.ff.b1"), zeros_vec(ff)),
        ff_w2: params.register(format!("layer{i}.ff.w2"), xavier(rng, ff, d)),
        ff_b2: params.register(format!("layer{i}.ff.b2"), zeros_vec(d)),
    }
}

fn layer_vars<'t>(vars: &[Var<'t>], ids: &LayerIds) -> LayerVars<'t> {
    LayerVars {
        attn: AttentionVars {
            wq: vars[ids.wq],
            wk: vars[ids.wk],
            wv: vars[ids.wv],
            wo: vars[ids.wo],
            bo: vars[ids.bo],
        },
        ln1_gain: vars[ids.ln1_gain],
        ln1_bias: vars[ids.ln1_bias],
        ln2_gain: vars[ids.ln2_gain],
        ln2_bias: vars[ids.ln2_bias],
        ff_w1: vars[ids.ff_w1],
        ff_b1: vars[ids.ff_b1],
        ff_w2: vars[ids.ff_w2],
        ff_b2: vars[ids.ff_b2],
    }
}

/// Geometry and hyper-parameters of a reconstruction model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconConfig {
    pub input_len: usize,
    pub target_len: usize,
    pub channels: usize,
    pub k: usize,
    /// Moving-average kernel for trend extraction (odd).
    pub kernel: usize,
    pub max_flows: usize,
    /// When true, the period set is detected once on the first training
    /// window and reused for every forward pass.
    pub freeze_periods: bool,
    pub encoder: EncoderConfig,
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.input_len < 4 {
            return Err(Error::Config("input_len must be at least 4".into()));
        }
        if self.target_len == 0 {
            return Err(Error::Config("target_len must be positive".into()));
        }
        if self.k < 2 {
            return Err(Error::Config("k must be at least 2".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config("moving-average kernel must be odd".into()));
        }
        if self.channels == 0 {
            return Err(Error::Config("channels must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct ReconIds {
    proj_w: usize,
    proj_b: usize,
    pos: usize,
    layers: Vec<LayerIds>,
    flow_w: usize,
    flow_b: usize,
    trend_w: usize,
    trend_b: usize,
}

/// Reconstruction model shared by forecasting, imputation, and anomaly
/// detection (imputation and anomaly use target_len == input_len).
#[derive(Debug, Clone)]
pub struct ReconModel {
    pub cfg: ReconConfig,
    pub params: ParamRegistry,
    ids: ReconIds,
    /// Set on the first training window when `cfg.freeze_periods`.
    pub frozen_periods: Option<PeriodSet>,
}

impl ReconModel {
    pub fn init(cfg: ReconConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.encoder.d_model;
        let n_max = max_token_count(cfg.input_len, cfg.k);
        let mut params = ParamRegistry::new();
        let proj_w = params.register("embed.proj_w", xavier(&mut rng, cfg.input_len, d));
        let proj_b = params.register("embed.proj_b", zeros_vec(d));
        let pos = params.register(
            "embed.pos",
            Tensor::matrix(
                n_max,
                d,
                (0..n_max * d).map(|_| rng.gen_range(-0.02..0.02)).collect(),
            )?,
        );
        let layers = (0..cfg.encoder.layers)
            .map(|i| register_layer(&mut params, &mut rng, i, &cfg.encoder))
            .collect();
        let flow_w = params.register("head.flow_w", xavier(&mut rng, cfg.k * d, cfg.target_len));
        let flow_b = params.register("head.flow_b", zeros_vec(cfg.target_len));
        let trend_w = params.register(
            "head.trend_w",
            xavier(&mut rng, cfg.input_len, cfg.target_len),
        );
        let trend_b = params.register("head.trend_b", zeros_vec(cfg.target_len));
        Ok(Self {
            cfg,
            params,
            ids: ReconIds {
                proj_w,
                proj_b,
                pos,
                layers,
                flow_w,
                flow_b,
                trend_w,
                trend_b,
            },
            frozen_periods: None,
        })
    }

    /// Detects (or reuses) the period set for one input window.
    pub fn periods_for(&self, seasonal: &Series) -> Result<PeriodSet> {
        match &self.frozen_periods {
            Some(ps) => Ok(ps.clone()),
            None => detect_periods(seasonal, self.cfg.k),
        }
    }

    /// Detects the period set on a window and pins it for all later
    /// forward passes.
    pub fn freeze_periods_from(&mut self, x: &Series) -> Result<()> {
        let (x_norm, _) = normalize(x)?;
        let parts = decompose(&x_norm, self.cfg.kernel)?;
        self.frozen_periods = Some(detect_periods(&parts.seasonal, self.cfg.k)?);
        Ok(())
    }

    /// Full forward pass for one window; returns the de-normalized
    /// prediction as a (target_len x channels) value on the tape.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        vars: &[Var<'t>],
        x: &Series,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var<'t>> {
        let cfg = &self.cfg;
        if x.len() != cfg.input_len || x.channels() != cfg.channels {
            return Err(Error::ShapeMismatch {
                op: "forward",
                left: vec![x.len(), x.channels()],
                right: vec![cfg.input_len, cfg.channels],
            });
        }
        let (x_norm, stats) = normalize(x)?;
        let parts = decompose(&x_norm, cfg.kernel)?;
        let periods = self.periods_for(&parts.seasonal)?;
        let table = ComponentTable::build(cfg.input_len, &periods);
        let relation = inclusion(&table);
        let mask = build_mask(&relation, &table);
        let flows = enumerate_flows_bounded(&relation, &table, cfg.max_flows)?;
        let mask_bias = tape.constant(mask.bias_tensor());

        let mut channel_columns = Vec::with_capacity(cfg.channels);
        for c in 0..cfg.channels {
            let comp = tape.constant(padded_component_matrix(&parts.seasonal.channel(c), &table));
            let tokens = embed(comp, vars[self.ids.proj_w], vars[self.ids.proj_b], vars[self.ids.pos])?;
            let layer_sets: Vec<LayerVars<'t>> = self
                .ids
                .layers
                .iter()
                .map(|ids| layer_vars(vars, ids))
                .collect();
            let encoded = encode(
                tokens,
                mask_bias,
                &cfg.encoder,
                &layer_sets,
                dropout_rng.as_deref_mut(),
            )?;
            let seasonal_out =
                aggregate_flows(encoded, &flows, vars[self.ids.flow_w], vars[self.ids.flow_b])?;

            let trend_row = tape.constant(Tensor::matrix(1, cfg.input_len, parts.trend.channel(c))?);
            let trend_out = trend_row
                .matmul(vars[self.ids.trend_w])?
                .add_bias(vars[self.ids.trend_b])?;

            let combined = seasonal_out.add(trend_out)?;
            let denorm = denormalize_row(tape, combined, &stats, c, cfg.target_len)?;
            channel_columns.push(denorm.transpose()?);
        }
        Var::concat_cols(&channel_columns)
    }

    /// Inference without gradient bookkeeping.
    pub fn predict(&self, x: &Series) -> Result<Series> {
        let tape = Tape::new();
        let vars = self.params.bind(&tape, false);
        let pred = self.forward(&tape, &vars, x, None)?;
        let value = pred.value();
        Series::new(
            self.cfg.target_len,
            self.cfg.channels,
            value.data().to_vec(),
        )
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let config = serde_json::json!({
            "cfg": self.cfg,
            "frozen_periods": self.frozen_periods,
        });
        crate::training::save_checkpoint(path, "reconstruction", &config, &self.params)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (kind, config, params) = crate::training::load_checkpoint(path)?;
        if kind != "reconstruction" {
            return Err(Error::Checkpoint(format!(
                "expected a reconstruction checkpoint, found '{kind}'"
            )));
        }
        let cfg: ReconConfig = serde_json::from_value(config["cfg"].clone())?;
        let frozen: Option<PeriodSet> = serde_json::from_value(config["frozen_periods"].clone())?;
        let mut model = Self::init(cfg, 0)?;
        adopt_params(&mut model.params, params)?;
        model.frozen_periods = frozen;
        Ok(model)
    }
}

/// Replaces freshly-initialized blocks with checkpoint blocks, insisting
/// on matching names and shapes in declaration order.
fn adopt_params(target: &mut ParamRegistry, loaded: ParamRegistry) -> Result<()> {
    if target.len() != loaded.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} blocks, model expects {}",
            loaded.len(),
            target.len()
        )));
    }
    for i in 0..target.len() {
        if target.name(i) != loaded.name(i) || target.tensor(i).shape() != loaded.tensor(i).shape()
        {
            return Err(Error::Checkpoint(format!(
                "block {} mismatch: expected '{}' {:?}, found '{}' {:?}",
                i,
                target.name(i),
                target.tensor(i).shape(),
                loaded.name(i),
                loaded.tensor(i).shape()
            )));
        }
        target.set_tensor(i, loaded.tensor(i).clone());
    }
    Ok(())
}

fn denormalize_row<'t>(
    tape: &'t Tape,
    row: Var<'t>,
    stats: &NormStats,
    channel: usize,
    len: usize,
) -> Result<Var<'t>> {
    let mu = tape.constant(Tensor::matrix(1, len, vec![stats.mu[channel]; len])?);
    row.scale(stats.sigma[channel])?.add(mu)
}

/// Geometry and hyper-parameters of a classification model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyConfig {
    pub input_len: usize,
    pub channels: usize,
    pub k: usize,
    pub num_classes: usize,
    pub max_flows: usize,
    pub encoder: EncoderConfig,
}

impl ClassifyConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.num_classes < 2 {
            return Err(Error::Config("classification needs at least 2 classes".into()));
        }
        if self.input_len < 4 || self.channels == 0 || self.k < 2 {
            return Err(Error::Config("bad classification geometry".into()));
        }
        Ok(())
    }

    fn feature_len(&self) -> usize {
        self.channels * max_token_count(self.input_len, self.k) * self.encoder.d_model
    }
}

#[derive(Debug, Clone)]
struct ClassifyIds {
    proj_w: usize,
    proj_b: usize,
    pos: usize,
    layers: Vec<LayerIds>,
    cls_w: usize,
    cls_b: usize,
}

/// Classification model: pyramid over the normalized raw series (the
/// trend stays in as a discriminative feature), all encoded tokens
/// concatenated channel-major and projected to logits.
#[derive(Debug, Clone)]
pub struct ClassifyModel {
    pub cfg: ClassifyConfig,
    pub params: ParamRegistry,
    ids: ClassifyIds,
}

impl ClassifyModel {
    pub fn init(cfg: ClassifyConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.encoder.d_model;
        let n_max = max_token_count(cfg.input_len, cfg.k);
        let mut params = ParamRegistry::new();
        let proj_w = params.register("embed.proj_w", xavier(&mut rng, cfg.input_len, d));
        let proj_b = params.register("embed.proj_b", zeros_vec(d));
        let pos = params.register(
            "embed.pos",
            Tensor::matrix(
                n_max,
                d,
                (0..n_max * d).map(|_| rng.gen_range(-0.02..0.02)).collect(),
            )?,
        );
        let layers = (0..cfg.encoder.layers)
            .map(|i| register_layer(&mut params, &mut rng, i, &cfg.encoder))
            .collect();
        let cls_w = params.register(
            "head.cls_w",
            xavier(&mut rng, cfg.feature_len(), cfg.num_classes),
        );
        let cls_b = params.register("head.cls_b", zeros_vec(cfg.num_classes));
        Ok(Self {
            cfg,
            params,
            ids: ClassifyIds {
                proj_w,
                proj_b,
                pos,
                layers,
                cls_w,
                cls_b,
            },
        })
    }

    /// Logits for one sample as a (1 x num_classes) value. There is no
    /// decomposition and no de-normalization on this path.
    pub fn forward_logits<'t>(
        &self,
        tape: &'t Tape,
        vars: &[Var<'t>],
        x: &Series,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var<'t>> {
        let cfg = &self.cfg;
        if x.len() != cfg.input_len || x.channels() != cfg.channels {
            return Err(Error::ShapeMismatch {
                op: "forward_logits",
                left: vec![x.len(), x.channels()],
                right: vec![cfg.input_len, cfg.channels],
            });
        }
        let (x_norm, _stats) = normalize(x)?;
        let periods = detect_periods(&x_norm, cfg.k)?;
        let table = ComponentTable::build(cfg.input_len, &periods);
        let relation = inclusion(&table);
        let mask = build_mask(&relation, &table);
        let mask_bias = tape.constant(mask.bias_tensor());
        let n_max = max_token_count(cfg.input_len, cfg.k);
        let d = cfg.encoder.d_model;

        let mut channel_features = Vec::with_capacity(cfg.channels);
        for c in 0..cfg.channels {
            let comp = tape.constant(padded_component_matrix(&x_norm.channel(c), &table));
            let tokens = embed(comp, vars[self.ids.proj_w], vars[self.ids.proj_b], vars[self.ids.pos])?;
            let layer_sets: Vec<LayerVars<'t>> = self
                .ids
                .layers
                .iter()
                .map(|ids| layer_vars(vars, ids))
                .collect();
            let encoded = encode(
                tokens,
                mask_bias,
                &cfg.encoder,
                &layer_sets,
                dropout_rng.as_deref_mut(),
            )?;
            // fixed-width feature regardless of this sample's pyramid:
            // absent token slots stay zero
            let feat = encoded.pad_rows(n_max)?.reshape(vec![1, n_max * d])?;
            channel_features.push(feat);
        }
        let features = Var::concat_cols(&channel_features)?;
        features.matmul(vars[self.ids.cls_w])?.add_bias(vars[self.ids.cls_b])
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let config = serde_json::json!({ "cfg": self.cfg });
        crate::training::save_checkpoint(path, "classification", &config, &self.params)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (kind, config, params) = crate::training::load_checkpoint(path)?;
        if kind != "classification" {
            return Err(Error::Checkpoint(format!(
                "expected a classification checkpoint, found '{kind}'"
            )));
        }
        let cfg: ClassifyConfig = serde_json::from_value(config["cfg"].clone())?;
        let mut model = Self::init(cfg, 0)?;
        adopt_params(&mut model.params, params)?;
        Ok(model)
    }

    /// Class prediction for one sample.
    pub fn predict(&self, x: &Series) -> Result<usize> {
        let tape = Tape::new();
        let vars = self.params.bind(&tape, false);
        let logits = self.forward_logits(&tape, &vars, x, None)?.value();
        let mut best = 0;
        for j in 1..self.cfg.num_classes {
            if logits.data()[j] > logits.data()[best] {
                best = j;
            }
        }
        Ok(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{gen_multiperiod, SyntheticSpec, Tone};
    use crate::flows::DEFAULT_MAX_FLOWS;

    fn small_cfg() -> ReconConfig {
        ReconConfig {
            input_len: 16,
            target_len: 4,
            channels: 2,
            k: 2,
            kernel: 5,
            max_flows: DEFAULT_MAX_FLOWS,
            freeze_periods: false,
            encoder: EncoderConfig {
                layers: 1,
                d_model: 8,
                heads: 2,
                ff_mult: 2,
                dropout: 0.0,
                layer_norm: true,
            },
        }
    }

    fn sample(len: usize, channels: usize) -> Series {
        let spec = SyntheticSpec {
            len,
            channels,
            tones: vec![Tone {
                period: 8,
                amplitude: 1.0,
                phase: 0.3,
            }],
            trend_slope: 0.05,
            noise_sigma: 0.0,
            seed: 3,
        };
        gen_multiperiod(&spec).unwrap()
    }

    #[test]
    fn forward_output_shape() {
        let model = ReconModel::init(small_cfg(), 1).unwrap();
        let x = sample(16, 2);
        let pred = model.predict(&x).unwrap();
        assert_eq!((pred.len(), pred.channels()), (4, 2));
    }

    #[test]
    fn constant_series_prediction_stays_near_constant() {
        // a constant series is all trend; with sigma floored the
        // de-normalized output must sit at the channel mean up to the
        // floored-sigma scale of the head outputs
        let mut cfg = small_cfg();
        cfg.channels = 1;
        let model = ReconModel::init(cfg, 2).unwrap();
        let x = Series::from_fn(16, 1, |_, _| 4.2);
        let pred = model.predict(&x).unwrap();
        for t in 0..pred.len() {
            assert!((pred.get(t, 0) - 4.2).abs() < 1e-3, "{}", pred.get(t, 0));
        }
    }

    #[test]
    fn frozen_periods_are_reused() {
        let mut cfg = small_cfg();
        cfg.freeze_periods = true;
        let mut model = ReconModel::init(cfg, 3).unwrap();
        let x = sample(16, 2);
        model.freeze_periods_from(&x).unwrap();
        let frozen = model.frozen_periods.clone().unwrap();
        // a different window with a different spectrum still uses them
        let other = Series::from_fn(16, 2, |t, _| (t as f64 * 1.3).cos());
        let got = model
            .periods_for(&other)
            .unwrap();
        assert_eq!(got, frozen);
    }

    #[test]
    fn classify_logit_shape_and_range() {
        let cfg = ClassifyConfig {
            input_len: 16,
            channels: 2,
            k: 2,
            num_classes: 3,
            max_flows: DEFAULT_MAX_FLOWS,
            encoder: EncoderConfig {
                layers: 1,
                d_model: 8,
                heads: 2,
                ff_mult: 2,
                dropout: 0.0,
                layer_norm: true,
            },
        };
        let model = ClassifyModel::init(cfg, 4).unwrap();
        let x = sample(16, 2);
        let tape = Tape::new();
        let vars = model.params.bind(&tape, false);
        let logits = model.forward_logits(&tape, &vars, &x, None).unwrap().value();
        assert_eq!(logits.shape(), &[1, 3]);
        let class = model.predict(&x).unwrap();
        assert!(class < 3);
    }

    #[test]
    fn classify_features_keep_the_trend() {
        // inputs differing only by trend must produce different logits:
        // the classification path never strips the trend out
        let cfg = ClassifyConfig {
            input_len: 16,
            channels: 1,
            k: 2,
            num_classes: 2,
            max_flows: DEFAULT_MAX_FLOWS,
            encoder: EncoderConfig {
                layers: 1,
                d_model: 8,
                heads: 2,
                ff_mult: 2,
                dropout: 0.0,
                layer_norm: true,
            },
        };
        let model = ClassifyModel::init(cfg, 5).unwrap();
        let flat = Series::from_fn(16, 1, |t, _| (t as f64 * 0.9).sin());
        let trended = Series::from_fn(16, 1, |t, _| (t as f64 * 0.9).sin() + 0.5 * t as f64);
        let tape = Tape::new();
        let vars = model.params.bind(&tape, false);
        let a = model.forward_logits(&tape, &vars, &flat, None).unwrap().value();
        let b = model.forward_logits(&tape, &vars, &trended, None).unwrap().value();
        let diff: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .sum();
        assert!(diff > 1e-6, "trend information lost: logit diff {diff}");
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = small_cfg();
        cfg.encoder.layers = 0;
        assert!(ReconModel::init(cfg, 1).is_err());
        let mut cfg = small_cfg();
        cfg.kernel = 4;
        assert!(ReconModel::init(cfg, 1).is_err());
    }
}
