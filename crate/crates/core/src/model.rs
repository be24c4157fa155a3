//! The staging network: channel mixing, residual feature extraction,
//! bidirectional recurrent context and a per-column classifier.
//!
//! Shapes for a batch of `B` sequences of `T` samples:
//!
//! ```text
//! [B, C, T] → mix   → [B, C, 1, T]
//!           → R residual blocks, each halving time → [B, f0·2^(R+1), 1, T/2^R]
//!           → BiGRU (skipped when hidden = 0)     → [B, 2H, T/2^R]
//!           → 1×1 conv + softmax over stages      → [B, K, T/2^R]
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchNormState, Conv2dSpec, GruDirection, Mode, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::checkpoint::CheckpointData;
use crate::nn::params::{Binding, ParamId, ParamKind, ParamStore};
use crate::nn::{glorot_uniform, Adam};
use crate::scalar::Real;
use crate::stage::{EPOCH_SECONDS, NUM_STAGES};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub channels: usize,
    pub fs: usize,
    pub classes: usize,
    /// Residual blocks; each halves the time axis.
    pub blocks: usize,
    pub base_filters: usize,
    /// GRU units per direction, 0 to disable the recurrent stage.
    pub hidden: usize,
    /// Sequence length in 30-s epochs.
    pub alpha: usize,
    /// Loss averaging window in seconds.
    pub tau: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { channels: 4, fs: 128, classes: NUM_STAGES, blocks: 7, base_filters: 4, hidden: 1024, alpha: 10, tau: 30 }
    }
}

impl ModelConfig {
    pub fn samples_per_sequence(&self) -> usize {
        self.alpha * EPOCH_SECONDS * self.fs
    }

    pub fn feature_channels(&self) -> usize {
        self.base_filters << (self.blocks + 1)
    }

    /// Bottleneck width of block `r` (1-based).
    pub fn bottleneck(&self, r: usize) -> usize {
        self.base_filters << (r - 1)
    }

    /// Output columns per second of signal.
    pub fn columns_per_second(&self) -> usize {
        self.fs >> self.blocks
    }

    pub fn output_columns(&self) -> usize {
        self.samples_per_sequence() >> self.blocks
    }

    pub fn columns_per_epoch(&self) -> usize {
        EPOCH_SECONDS * self.columns_per_second()
    }

    /// Output columns averaged into one loss window.
    pub fn loss_window(&self) -> usize {
        self.tau * self.columns_per_second()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.channels == 0 || self.classes < 2 || self.base_filters == 0 || self.alpha == 0 || self.blocks == 0 {
            return bad(format!("degenerate configuration {self:?}"));
        }
        if self.blocks >= usize::BITS as usize || self.fs % (1 << self.blocks) != 0 {
            return bad(format!("fs = {} is not a multiple of 2^{}; output columns would not align with seconds", self.fs, self.blocks));
        }
        if self.tau == 0 || EPOCH_SECONDS % self.tau != 0 {
            return bad(format!("τ = {} s does not divide {EPOCH_SECONDS} s", self.tau));
        }
        Ok(())
    }

    /// Closed-form trainable-scalar count.
    pub fn parameter_count(&self) -> usize {
        let c = self.channels;
        let mut total = c * c + 2 * c;
        let mut cin = c;
        for r in 1..=self.blocks {
            let b = self.bottleneck(r);
            let out = 4 * b;
            total += cin * b + 2 * b; // reduce + BN
            total += 3 * b * b + 2 * b; // 1×3 + BN
            total += b * out + 2 * out; // expand + BN
            total += cin * out + out; // shortcut with bias
            cin = out;
        }
        let h = self.hidden;
        let clf_in = if h == 0 { cin } else { total += 2 * (3 * h * cin + 3 * h * h + 3 * h); 2 * h };
        total + self.classes * clf_in + self.classes
    }
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
    state: usize,
}

#[derive(Clone, Copy, Debug)]
struct Block {
    reduce: ParamId,
    norm1: Norm,
    conv: ParamId,
    norm2: Norm,
    expand: ParamId,
    norm3: Norm,
    shortcut_w: ParamId,
    shortcut_b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct GruIds {
    w_input: ParamId,
    w_hidden: ParamId,
    bias: ParamId,
}

impl GruIds {
    fn bind(&self, b: &Binding) -> GruDirection {
        GruDirection { w_input: b.var(self.w_input), w_hidden: b.var(self.w_hidden), bias: b.var(self.bias) }
    }
}

/// Network parameters, batch-norm statistics and wiring.
#[derive(Clone, Debug)]
pub struct SleepNet<T: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub norms: Vec<BatchNormState<T>>,
    norm_names: Vec<String>,
    mix: ParamId,
    mix_norm: Norm,
    blocks: Vec<Block>,
    gru: Option<[GruIds; 2]>,
    clf_w: ParamId,
    clf_b: ParamId,
}

struct Builder<'a, T: Real, R: Rng + ?Sized> {
    params: ParamStore<T>,
    norms: Vec<BatchNormState<T>>,
    norm_names: Vec<String>,
    rng: &'a mut R,
}

impl<T: Real, R: Rng + ?Sized> Builder<'_, T, R> {
    fn weight(&mut self, name: String, shape: &[usize]) -> Result<ParamId> {
        let value = glorot_uniform(shape, self.rng)?;
        Ok(self.params.add(name, ParamKind::Weight, value))
    }

    fn bias(&mut self, name: String, n: usize) -> ParamId {
        self.params.add(name, ParamKind::Bias, Tensor::zeros([n]))
    }

    fn norm(&mut self, name: String, n: usize) -> Norm {
        let gamma = self.params.add(format!("{name}.gamma"), ParamKind::Affine, Tensor::full([n], T::one()));
        let beta = self.params.add(format!("{name}.beta"), ParamKind::Affine, Tensor::zeros([n]));
        self.norms.push(BatchNormState::new(n));
        self.norm_names.push(name);
        Norm { gamma, beta, state: self.norms.len() - 1 }
    }
}

impl<T: Real> SleepNet<T> {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut b = Builder { params: ParamStore::new(), norms: Vec::new(), norm_names: Vec::new(), rng };
        let c = config.channels;
        let mix = b.weight("mix.w".into(), &[c, 1, c, 1])?;
        let mix_norm = b.norm("mix.bn".into(), c);
        let mut blocks = Vec::with_capacity(config.blocks);
        let mut cin = c;
        for r in 1..=config.blocks {
            let (w, out) = (config.bottleneck(r), 4 * config.bottleneck(r));
            let p = format!("block{r}");
            blocks.push(Block {
                reduce: b.weight(format!("{p}.reduce.w"), &[w, cin, 1, 1])?,
                norm1: b.norm(format!("{p}.bn1"), w),
                conv: b.weight(format!("{p}.conv.w"), &[w, w, 1, 3])?,
                norm2: b.norm(format!("{p}.bn2"), w),
                expand: b.weight(format!("{p}.expand.w"), &[out, w, 1, 1])?,
                norm3: b.norm(format!("{p}.bn3"), out),
                shortcut_w: b.weight(format!("{p}.shortcut.w"), &[out, cin, 1, 1])?,
                shortcut_b: b.bias(format!("{p}.shortcut.b"), out),
            });
            cin = out;
        }
        let h = config.hidden;
        let gru = if h == 0 {
            None
        } else {
            let mut dir = |name: &str| -> Result<GruIds> {
                Ok(GruIds {
                    w_input: b.weight(format!("gru.{name}.w_input"), &[3 * h, cin])?,
                    w_hidden: b.weight(format!("gru.{name}.w_hidden"), &[3 * h, h])?,
                    bias: b.bias(format!("gru.{name}.bias"), 3 * h),
                })
            };
            Some([dir("fwd")?, dir("bwd")?])
        };
        let clf_in = if h == 0 { cin } else { 2 * h };
        let clf_w = b.weight("clf.w".into(), &[config.classes, clf_in, 1, 1])?;
        let clf_b = b.bias("clf.b".into(), config.classes);
        let net = Self {
            config,
            params: b.params,
            norms: b.norms,
            norm_names: b.norm_names,
            mix,
            mix_norm,
            blocks,
            gru,
            clf_w,
            clf_b,
        };
        let built = net.params.scalar_count();
        if built != config.parameter_count() {
            return Err(Error::InvalidArgument(format!(
                "parameter audit: built {built}, formula {}",
                config.parameter_count()
            )));
        }
        Ok(net)
    }

    fn norm(&self, tape: &mut Tape<T>, b: &Binding, x: Var, n: Norm, mode: Mode, states: &mut [BatchNormState<T>]) -> Result<Var> {
        tape.batch_norm(x, b.var(n.gamma), b.var(n.beta), &mut states[n.state], mode)
    }

    /// `[B, C, T] → [B, C, 1, T]`: a full-height kernel over the channel axis.
    pub fn mixing(&self, tape: &mut Tape<T>, b: &Binding, x: Var, mode: Mode, states: &mut [BatchNormState<T>]) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        if s.len() != 3 || s[1] != self.config.channels {
            return Err(Error::Shape { op: "mixing", detail: format!("need [B, {}, T], got {s:?}", self.config.channels) });
        }
        let img = tape.reshape(x, &[s[0], 1, s[1], s[2]])?;
        let y = tape.conv2d(img, b.var(self.mix), None, Conv2dSpec::default())?;
        let y = self.norm(tape, b, y, self.mix_norm, mode, states)?;
        Ok(tape.relu(y))
    }

    /// One bottleneck block (0-based index) including the trailing pool.
    pub fn residual_block(&self, tape: &mut Tape<T>, b: &Binding, x: Var, index: usize, mode: Mode, states: &mut [BatchNormState<T>]) -> Result<Var> {
        let blk = self.blocks[index];
        let unit = Conv2dSpec::default();
        let y = tape.conv2d(x, b.var(blk.reduce), None, unit)?;
        let y = self.norm(tape, b, y, blk.norm1, mode, states)?;
        let y = tape.relu(y);
        let y = tape.conv2d(y, b.var(blk.conv), None, Conv2dSpec::padded(0, 1))?;
        let y = self.norm(tape, b, y, blk.norm2, mode, states)?;
        let y = tape.relu(y);
        let y = tape.conv2d(y, b.var(blk.expand), None, unit)?;
        let y = self.norm(tape, b, y, blk.norm3, mode, states)?;
        let short = tape.conv2d(x, b.var(blk.shortcut_w), Some(b.var(blk.shortcut_b)), unit)?;
        let y = tape.add(y, short)?;
        let y = tape.relu(y);
        tape.max_pool_time(y)
    }

    /// `[B, C, 1, T] → [B, F, T/2^R]`.
    pub fn feature_extraction(&self, tape: &mut Tape<T>, b: &Binding, x: Var, mode: Mode, states: &mut [BatchNormState<T>]) -> Result<Var> {
        let mut y = x;
        for r in 0..self.blocks.len() {
            y = self.residual_block(tape, b, y, r, mode, states)?;
        }
        let s = tape.shape(y).to_vec();
        tape.reshape(y, &[s[0], s[1], s[3]])
    }

    /// `[B, F, T'] → [B, 2H, T']`, or the identity when `hidden = 0`.
    pub fn temporal_context(&self, tape: &mut Tape<T>, b: &Binding, x: Var) -> Result<Var> {
        match &self.gru {
            None => Ok(x),
            Some([f, r]) => tape.gru_bidirectional(x, f.bind(b), r.bind(b)),
        }
    }

    /// `[B, D, T'] → [B, K, T']` stage probabilities.
    pub fn classifier(&self, tape: &mut Tape<T>, b: &Binding, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        let img = tape.reshape(x, &[s[0], s[1], 1, s[2]])?;
        let a = tape.conv2d(img, b.var(self.clf_w), Some(b.var(self.clf_b)), Conv2dSpec::default())?;
        let a = tape.reshape(a, &[s[0], self.config.classes, s[2]])?;
        tape.softmax(a)
    }

    /// Full forward pass of `x: [B, C, T]` with explicit batch-norm state.
    pub fn forward_with(&self, tape: &mut Tape<T>, b: &Binding, x: Var, mode: Mode, states: &mut [BatchNormState<T>]) -> Result<Var> {
        let t = tape.shape(x).last().copied().unwrap_or(0);
        if t % (1 << self.config.blocks) != 0 {
            return Err(Error::Shape { op: "forward", detail: format!("{t} samples not divisible by 2^{}", self.config.blocks) });
        }
        let y = self.mixing(tape, b, x, mode, states)?;
        let y = self.feature_extraction(tape, b, y, mode, states)?;
        let y = self.temporal_context(tape, b, y)?;
        self.classifier(tape, b, y)
    }

    /// Training-mode forward pass; updates running statistics.
    pub fn forward_train(&mut self, tape: &mut Tape<T>, b: &Binding, x: Var) -> Result<Var> {
        let mut states = std::mem::take(&mut self.norms);
        let out = self.forward_with(tape, b, x, Mode::Train, &mut states);
        self.norms = states;
        out
    }

    /// Eval-mode probabilities `[B, K, T']` for a batch `[B, C, T]`.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let mut states = self.norms.clone();
        let y = self.forward_with(&mut tape, &b, xv, Mode::Eval, &mut states)?;
        Ok(tape.value(y).clone())
    }

    pub fn to_checkpoint(&self, optimizer: Option<Adam<T>>) -> CheckpointData<T> {
        let mut buffers = Vec::with_capacity(2 * self.norms.len());
        for (name, st) in self.norm_names.iter().zip(&self.norms) {
            let n = st.features();
            buffers.push((format!("{name}.running_mean"), Tensor::new([n], st.running_mean.clone()).unwrap()));
            buffers.push((format!("{name}.running_var"), Tensor::new([n], st.running_var.clone()).unwrap()));
        }
        CheckpointData { params: self.params.clone(), buffers, optimizer }
    }

    /// Rebuild from a checkpoint written for `config`; every tensor must be
    /// present with the expected shape.
    pub fn from_checkpoint<R: Rng + ?Sized>(config: ModelConfig, data: &CheckpointData<T>, rng: &mut R) -> Result<Self> {
        let mut net = Self::new(config, rng)?;
        if data.params.len() != net.params.len() {
            return Err(Error::Format(format!("checkpoint has {} parameters, model {}", data.params.len(), net.params.len())));
        }
        for p in net.params.iter_mut() {
            let src = data
                .params
                .find(&p.name)
                .map(|id| data.params.get(id))
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {}", p.name)))?;
            if src.value.shape() != p.value.shape() {
                return Err(Error::Format(format!("{} has shape {:?}", p.name, src.value.shape())));
            }
            p.value = src.value.clone();
        }
        for (name, st) in net.norm_names.iter().zip(net.norms.iter_mut()) {
            let n = st.features();
            let fetch = |suffix: &str| {
                let key = format!("{name}.{suffix}");
                data.buffers
                    .iter()
                    .find(|(k, _)| *k == key)
                    .map(|(_, t)| t.data().to_vec())
                    .filter(|v| v.len() == n)
                    .ok_or_else(|| Error::Format(format!("checkpoint lacks {key}")))
            };
            st.running_mean = fetch("running_mean")?;
            st.running_var = fetch("running_var")?;
        }
        Ok(net)
    }

    pub fn param(&self, name: &str) -> Option<ParamId> {
        self.params.find(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_dimensions() {
        let c = ModelConfig::default();
        assert_eq!(c.samples_per_sequence(), 38400);
        assert_eq!(c.feature_channels(), 1024);
        assert_eq!(c.output_columns(), 300);
        assert_eq!(c.bottleneck(1) * 4, 16);
        assert_eq!(ModelConfig { alpha: 4, ..c }.output_columns(), 120);
    }

    #[test]
    fn rejects_misaligned_rate() {
        assert!(ModelConfig { blocks: 8, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { tau: 7, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn audit_holds_across_configs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (blocks, f0, hidden) in [(1, 1, 0), (2, 2, 3), (3, 4, 8)] {
            let cfg = ModelConfig { blocks, base_filters: f0, hidden, alpha: 1, ..Default::default() };
            let net = SleepNet::<f32>::new(cfg, &mut rng).unwrap();
            assert_eq!(net.params.scalar_count(), cfg.parameter_count());
        }
    }

    #[test]
    fn checkpoint_round_trip_restores_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = ModelConfig { blocks: 2, base_filters: 2, hidden: 3, alpha: 1, fs: 128, ..Default::default() };
        let mut net = SleepNet::<f32>::new(cfg, &mut rng).unwrap();
        net.norms[1].running_mean[0] = 0.25;
        let ck = net.to_checkpoint(None);
        let back = SleepNet::from_checkpoint(cfg, &ck, &mut rng).unwrap();
        assert_eq!(back.params, net.params);
        assert_eq!(back.norms, net.norms);
    }
}
