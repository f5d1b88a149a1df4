//! Audio sentiment vector: a Bi-LSTM branch over hand-crafted acoustic
//! features and a convolutional branch over the log-mel spectrogram (or
//! raw frames), each attention-pooled, then fused and projected.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::FeatureKind;
use crate::error::{bail, Result};
use crate::nn::{dropout_apply, Attended, Attention, BiLstm, Conv1d, Conv1dConfig, Dense, DropoutSpec, ForwardCtx};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Axis, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CnnInput {
    LogMel,
    Raw,
}

impl CnnInput {
    pub fn kind(self) -> FeatureKind {
        match self {
            CnnInput::LogMel => FeatureKind::LogMel,
            CnnInput::Raw => FeatureKind::RawFrames,
        }
    }
}

/// How the attended LSTM vector `L` and CNN vector `C` are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchCombine {
    /// `concat(β_L·L, β_C·C)` with `β = softmax(s_L, s_C)`.
    Concat,
    /// `β_L·P_L L + β_C·P_C C` after projecting both to the ASV width.
    Add,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AudioBranchConfig {
    pub kinds: Vec<FeatureKind>,
    pub cnn_input: CnnInput,
    pub lstm_hidden: usize,
    pub conv: Conv1dConfig,
    pub asv_width: usize,
    pub combine: BranchCombine,
}

impl Default for AudioBranchConfig {
    fn default() -> Self {
        AudioBranchConfig {
            kinds: FeatureKind::DEFAULT_LSTM.to_vec(),
            cnn_input: CnnInput::LogMel,
            lstm_hidden: 200,
            conv: Conv1dConfig::default(),
            asv_width: 100,
            combine: BranchCombine::Concat,
        }
    }
}

impl AudioBranchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() {
            bail!(Config, "audio branch needs at least one feature kind");
        }
        if let Some(k) = self.kinds.iter().find(|k| matches!(k, FeatureKind::RawFrames)) {
            bail!(Config, "'{k}' is a CNN input, not an LSTM feature");
        }
        if self.lstm_hidden == 0 || self.asv_width == 0 {
            bail!(Config, "audio hidden size and ASV width must be positive");
        }
        self.conv.validate()
    }

    /// Width of the frame-wise LSTM input.
    pub fn lstm_input_width(&self) -> usize {
        self.kinds.iter().map(|k| k.dims()).sum()
    }

    pub fn cnn_input_width(&self) -> usize {
        self.cnn_input.kind().dims()
    }
}

/// Standardized per-utterance inputs to the audio branch.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioInputs {
    /// `T × lstm_input_width`.
    pub features: Tensor,
    /// `T' × cnn_input_width`.
    pub spectrogram: Tensor,
}

/// Tape handles produced by one audio-branch forward pass.
#[derive(Clone, Copy, Debug)]
pub struct AudioOutput {
    pub asv: Var,
    pub lstm_weights: Var,
    pub cnn_weights: Var,
    /// `1 × 2`: weights of the LSTM and CNN vectors in the fusion.
    pub branch_weights: Var,
}

#[derive(Clone, Debug)]
pub struct AudioBranch {
    pub config: AudioBranchConfig,
    pub lstm: BiLstm,
    pub lstm_attention: Attention,
    pub conv: Conv1d,
    pub conv_attention: Attention,
    pub lstm_gate: Attention,
    pub conv_gate: Attention,
    pub lstm_proj: Option<Dense>,
    pub conv_proj: Option<Dense>,
    pub output: Dense,
    pub dropout: DropoutSpec,
}

impl AudioBranch {
    pub fn new(store: &mut ParamStore, name: &str, config: AudioBranchConfig, dropout: DropoutSpec, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let lstm = BiLstm::new(store, &format!("{name}.lstm"), config.lstm_input_width(), config.lstm_hidden, rng);
        let l_width = lstm.output_width();
        let lstm_attention = Attention::new(store, &format!("{name}.lstm_attention"), l_width, rng);
        let conv = Conv1d::new(store, &format!("{name}.conv"), config.cnn_input_width(), config.conv.clone(), rng)?;
        let c_width = config.conv.out_channels();
        let conv_attention = Attention::new(store, &format!("{name}.conv_attention"), c_width, rng);
        let lstm_gate = Attention::new(store, &format!("{name}.lstm_gate"), l_width, rng);
        let conv_gate = Attention::new(store, &format!("{name}.conv_gate"), c_width, rng);
        let (lstm_proj, conv_proj, fused_width) = match config.combine {
            BranchCombine::Concat => (None, None, l_width + c_width),
            BranchCombine::Add => (
                Some(Dense::new(
                    store,
                    &format!("{name}.lstm_proj"),
                    l_width,
                    config.asv_width,
                    false,
                    rng,
                )),
                Some(Dense::new(
                    store,
                    &format!("{name}.conv_proj"),
                    c_width,
                    config.asv_width,
                    false,
                    rng,
                )),
                config.asv_width,
            ),
        };
        let output = Dense::new(store, &format!("{name}.output"), fused_width, config.asv_width, true, rng);
        Ok(AudioBranch {
            config,
            lstm,
            lstm_attention,
            conv,
            conv_attention,
            lstm_gate,
            conv_gate,
            lstm_proj,
            conv_proj,
            output,
            dropout,
        })
    }

    pub fn asv_width(&self) -> usize {
        self.config.asv_width
    }

    /// Bi-LSTM over the feature frames, then attention pooling into `L`.
    pub fn lstm_branch_forward(&self, tape: &mut Tape, store: &ParamStore, features: Var) -> Result<(Var, Attended)> {
        let shape = tape.shape(features);
        if shape[0] == 0 {
            bail!(Contract, "empty feature sequence");
        }
        if shape.len() != 2 || shape[1] != self.config.lstm_input_width() {
            bail!(
                Dimension,
                "audio features {:?} do not match the configured width {}",
                shape,
                self.config.lstm_input_width()
            );
        }
        let hidden = self.lstm.encode(tape, store, features)?;
        let attended = self.lstm_attention.attend(tape, store, hidden)?;
        Ok((hidden, attended))
    }

    /// Multi-kernel convolution (batch norm, ReLU) then attention pooling into `C`.
    pub fn cnn_branch_forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        spectrogram: Var,
        ctx: &mut ForwardCtx,
    ) -> Result<(Var, Attended)> {
        let maps = self.conv.forward(tape, store, spectrogram, ctx)?;
        let attended = self.conv_attention.attend(tape, store, maps)?;
        Ok((maps, attended))
    }

    /// Weighs `L` and `C` against each other, combines them and projects to
    /// the ASV width. Returns the ASV and the `1 × 2` branch weights.
    pub fn fuse_audio_features(&self, tape: &mut Tape, store: &ParamStore, l: Var, c: Var, ctx: &mut ForwardCtx) -> Result<(Var, Var)> {
        for (v, gate, what) in [(l, &self.lstm_gate, "LSTM"), (c, &self.conv_gate, "CNN")] {
            if tape.shape(v) != [1, gate.width] {
                bail!(Dimension, "{what} vector {:?} should be 1 × {}", tape.shape(v), gate.width);
            }
        }
        let s_l = self.lstm_gate.scores(tape, store, l)?;
        let s_c = self.conv_gate.scores(tape, store, c)?;
        let s = tape.concat(&[s_l, s_c], Axis::Cols)?;
        let beta = tape.softmax(s, Axis::Cols)?;
        let b_l = tape.pick(beta, 0)?;
        let b_c = tape.pick(beta, 1)?;
        let (l, c) = match (&self.lstm_proj, &self.conv_proj) {
            (Some(pl), Some(pc)) => (pl.forward(tape, store, l)?, pc.forward(tape, store, c)?),
            _ => (l, c),
        };
        let wl = tape.mul_col(l, b_l)?;
        let wc = tape.mul_col(c, b_c)?;
        let combined = match self.config.combine {
            BranchCombine::Concat => tape.concat(&[wl, wc], Axis::Cols)?,
            BranchCombine::Add => tape.add(wl, wc)?,
        };
        let combined = dropout_apply(&self.dropout, tape, combined, ctx)?;
        let asv = self.output.forward(tape, store, combined)?;
        Ok((asv, beta))
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, inputs: &AudioInputs, ctx: &mut ForwardCtx) -> Result<AudioOutput> {
        let features = tape.leaf(inputs.features.clone())?;
        let spectrogram = tape.leaf(inputs.spectrogram.clone())?;
        let (_, l) = self.lstm_branch_forward(tape, store, features)?;
        let (_, c) = self.cnn_branch_forward(tape, store, spectrogram, ctx)?;
        let (asv, branch_weights) = self.fuse_audio_features(tape, store, l.pooled, c.pooled, ctx)?;
        Ok(AudioOutput {
            asv,
            lstm_weights: l.weights,
            cnn_weights: c.weights,
            branch_weights,
        })
    }

    /// Parameters whose gradient vanishes identically: attention score
    /// biases (softmax is shift invariant) and, when batch norm follows,
    /// the convolution biases.
    pub fn shift_invariant_params(&self) -> Vec<ParamId> {
        let mut ids = vec![self.lstm_attention.bias, self.conv_attention.bias];
        if self.config.conv.batch_norm {
            ids.extend(self.config.conv.kernel_sizes.iter().filter_map(|&k| self.conv.bias(k)));
        }
        ids
    }
}

/// One utterance's exported audio record.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioSentimentVector {
    pub values: Vec<f64>,
    pub lstm_weights: Vec<f64>,
    pub cnn_weights: Vec<f64>,
    pub branch_weights: Vec<f64>,
}

impl AudioSentimentVector {
    pub fn read(tape: &Tape, out: &AudioOutput) -> Self {
        let get = |v: Var| tape.value(v).data().to_vec();
        AudioSentimentVector {
            values: get(out.asv),
            lstm_weights: get(out.lstm_weights),
            cnn_weights: get(out.cnn_weights),
            branch_weights: get(out.branch_weights),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Mode, Padding};
    use crate::tensor::param_grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn micro(combine: BranchCombine) -> AudioBranchConfig {
        AudioBranchConfig {
            kinds: vec![FeatureKind::SpectralCentroid, FeatureKind::Rmse],
            cnn_input: CnnInput::LogMel,
            lstm_hidden: 3,
            conv: Conv1dConfig {
                kernel_sizes: vec![1, 3],
                channels: 2,
                ..Conv1dConfig::default()
            },
            asv_width: 4,
            combine,
        }
    }

    fn build(cfg: AudioBranchConfig, seed: u64) -> (ParamStore, AudioBranch) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = AudioBranch::new(&mut store, "audio", cfg, DropoutSpec::new(0.0).unwrap(), &mut rng).unwrap();
        (store, b)
    }

    fn inputs(t: usize, seed: u64) -> AudioInputs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioInputs {
            features: crate::nn::init_uniform(&[t, 2], 1, &mut rng),
            spectrogram: crate::nn::init_uniform(&[t, 64], 1, &mut rng),
        }
    }

    #[test]
    fn constant_features_get_uniform_lstm_attention() {
        let (store, b) = build(micro(BranchCombine::Concat), 1);
        let mut tape = Tape::new();
        // A constant sequence still produces distinct LSTM states, so feed
        // the attention identical hidden rows directly.
        let h = tape.leaf(Tensor::from_rows(&vec![vec![0.3; 6]; 5]).unwrap()).unwrap();
        let a = b.lstm_attention.attend(&mut tape, &store, h).unwrap();
        for &w in tape.value(a.weights).data() {
            assert!((w - 0.2).abs() < 1e-15);
        }
        let one = tape.leaf(Tensor::matrix(1, 2, vec![0.5, -0.5]).unwrap()).unwrap();
        let (_, a) = b.lstm_branch_forward(&mut tape, &store, one).unwrap();
        assert_eq!(tape.value(a.weights).data(), &[1.0]);
    }

    #[test]
    fn hand_computed_lstm_attention() {
        let (mut store, b) = build(micro(BranchCombine::Concat), 2);
        store
            .set(
                b.lstm_attention.weight,
                Tensor::matrix(1, 6, vec![0.1, -0.2, 0.3, 0.05, 0.0, -0.1]).unwrap(),
            )
            .unwrap();
        store.set(b.lstm_attention.bias, Tensor::vector(vec![0.01]).unwrap()).unwrap();
        let x = inputs(3, 3).features;
        let mut tape = Tape::new();
        let xv = tape.leaf(x).unwrap();
        let (hidden, a) = b.lstm_branch_forward(&mut tape, &store, xv).unwrap();
        let h = tape.value(hidden).clone();
        let w = store.get(b.lstm_attention.weight).data().to_vec();
        let s: Vec<f64> = (0..3)
            .map(|i| h.row_slice(i).iter().zip(&w).map(|(v, w)| w * v.tanh()).sum::<f64>() + 0.01)
            .collect();
        let z: f64 = s.iter().map(|v| v.exp()).sum();
        for j in 0..6 {
            let expect: f64 = (0..3).map(|i| s[i].exp() / z * h.at(i, j)).sum();
            assert!((tape.value(a.pooled).at(0, j) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_spectrogram_gives_constant_cnn_vector() {
        let (store, b) = build(micro(BranchCombine::Concat), 3);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[7, 64])).unwrap();
        let (maps, c) = b.cnn_branch_forward(&mut tape, &store, x, &mut ForwardCtx::eval()).unwrap();
        let m = tape.value(maps);
        for t in 1..7 {
            assert_eq!(m.row_slice(t), m.row_slice(0));
        }
        // Eval-mode BN with unit running variance and zero bias: the image of 0.
        let bn = |v: f64| ((v - 0.0) / (1.0f64 + 1e-5).sqrt()).max(0.0);
        for (j, &v) in tape.value(c.pooled).data().iter().enumerate() {
            assert!((v - bn(m.at(0, j))).abs() < 1e-15 && (v - bn(0.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn delta_kernel_cnn_matches_reduced_oracle() {
        let cfg = AudioBranchConfig {
            conv: Conv1dConfig {
                kernel_sizes: vec![3],
                channels: 64,
                padding: Padding::Same,
                ..Conv1dConfig::default()
            },
            ..micro(BranchCombine::Concat)
        };
        let (mut store, b) = build(cfg, 4);
        // Tap-major weight: the centre tap of channel o reads input channel o.
        let mut w = vec![0.0; 64 * 3 * 64];
        for o in 0..64 {
            w[o * 192 + 64 + o] = 1.0;
        }
        store.set(b.conv.weight(3).unwrap(), Tensor::matrix(64, 192, w).unwrap()).unwrap();
        let x = inputs(5, 5).spectrogram;
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone()).unwrap();
        let mut ctx = ForwardCtx::new(Mode::Train, 0);
        let (_, c) = b.cnn_branch_forward(&mut tape, &store, xv, &mut ctx).unwrap();
        // Oracle: train-mode BN of the input itself, ReLU, then attention.
        let mut y = vec![vec![0.0; 64]; 5];
        for j in 0..64 {
            let col: Vec<f64> = (0..5).map(|t| x.at(t, j)).collect();
            let mean = col.iter().sum::<f64>() / 5.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
            for t in 0..5 {
                y[t][j] = ((col[t] - mean) / (var + 1e-5).sqrt()).max(0.0);
            }
        }
        let aw = store.get(b.conv_attention.weight).data().to_vec();
        let ab = store.get(b.conv_attention.bias).data()[0];
        let s: Vec<f64> = y
            .iter()
            .map(|r| r.iter().zip(&aw).map(|(v, w)| w * v.tanh()).sum::<f64>() + ab)
            .collect();
        let z: f64 = s.iter().map(|v| v.exp()).sum();
        for j in 0..64 {
            let expect: f64 = (0..5).map(|t| s[t].exp() / z * y[t][j]).sum();
            assert!((tape.value(c.pooled).at(0, j) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn fusion_symmetry_zero_image_and_hand_computation() {
        let cfg = AudioBranchConfig {
            lstm_hidden: 2,
            conv: Conv1dConfig {
                kernel_sizes: vec![1],
                channels: 4,
                ..Conv1dConfig::default()
            },
            ..micro(BranchCombine::Concat)
        };
        let (mut store, b) = build(cfg, 6);
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx::eval();
        let v = tape.leaf(Tensor::row(vec![0.1, -0.2, 0.3, 0.4]).unwrap()).unwrap();
        let (a1, _) = b.fuse_audio_features(&mut tape, &store, v, v, &mut ctx).unwrap();
        let (a2, _) = b.fuse_audio_features(&mut tape, &store, v, v, &mut ctx).unwrap();
        assert_eq!(tape.value(a1), tape.value(a2));

        let z = tape.leaf(Tensor::zeros(&[1, 4])).unwrap();
        let (asv, _) = b.fuse_audio_features(&mut tape, &store, z, z, &mut ctx).unwrap();
        let bias = store.get(b.output.bias).map(|v| v.max(0.0));
        assert_eq!(tape.value(asv).data(), bias.data());

        // Hand-set gates: s_L = 1·tanh(L_0), s_C = 0.5 (bias only).
        store
            .set(b.lstm_gate.weight, Tensor::matrix(1, 4, vec![1.0, 0.0, 0.0, 0.0]).unwrap())
            .unwrap();
        store.set(b.conv_gate.weight, Tensor::zeros(&[1, 4])).unwrap();
        store.set(b.conv_gate.bias, Tensor::vector(vec![0.5]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let l = tape.leaf(Tensor::row(vec![0.7, 0.1, -0.3, 0.2]).unwrap()).unwrap();
        let c = tape.leaf(Tensor::row(vec![0.2, 0.9, 0.4, -0.5]).unwrap()).unwrap();
        let (asv, beta) = b.fuse_audio_features(&mut tape, &store, l, c, &mut ctx).unwrap();
        let (sl, sc): (f64, f64) = (0.7f64.tanh(), 0.5);
        let bl = sl.exp() / (sl.exp() + sc.exp());
        assert!((tape.value(beta).data()[0] - bl).abs() < 1e-12);
        let fused: Vec<f64> = [0.7, 0.1, -0.3, 0.2]
            .iter()
            .map(|v| v * bl)
            .chain([0.2, 0.9, 0.4, -0.5].iter().map(|v| v * (1.0 - bl)))
            .collect();
        let w = store.get(b.output.weight);
        for o in 0..4 {
            let pre: f64 = (0..8).map(|j| w.at(o, j) * fused[j]).sum::<f64>() + store.get(b.output.bias).data()[o];
            assert!((tape.value(asv).data()[o] - pre.max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn asv_width_is_length_invariant() {
        for combine in [BranchCombine::Concat, BranchCombine::Add] {
            let (store, b) = build(micro(combine), 7);
            for t in 1..=64 {
                let mut tape = Tape::new();
                let out = b.forward(&mut tape, &store, &inputs(t, t as u64), &mut ForwardCtx::eval()).unwrap();
                assert_eq!(tape.shape(out.asv), &[1, 4]);
                for w in [out.lstm_weights, out.cnn_weights, out.branch_weights] {
                    let s: f64 = tape.value(w).data().iter().sum();
                    assert!((s - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn width_mismatch_and_empty_input() {
        let (store, b) = build(micro(BranchCombine::Concat), 8);
        let mut tape = Tape::new();
        let bad = tape.leaf(Tensor::zeros(&[3, 5])).unwrap();
        assert_eq!(b.lstm_branch_forward(&mut tape, &store, bad).unwrap_err().kind(), "dimension");
        let l = tape.leaf(Tensor::zeros(&[1, 3])).unwrap();
        let c = tape.leaf(Tensor::zeros(&[1, 4])).unwrap();
        let err = b.fuse_audio_features(&mut tape, &store, l, c, &mut ForwardCtx::eval()).unwrap_err();
        assert_eq!(err.kind(), "dimension");
    }

    #[test]
    fn branch_gradients_match_finite_differences() {
        for combine in [BranchCombine::Concat, BranchCombine::Add] {
            let (store, b) = build(micro(combine), 9);
            let x = inputs(4, 10);
            let skip = b.shift_invariant_params();
            let ids: Vec<ParamId> = store.trainable_ids().into_iter().filter(|id| !skip.contains(id)).collect();
            let loss = |tape: &mut Tape, s: &ParamStore| {
                let mut ctx = ForwardCtx::new(Mode::Train, 1);
                let out = b.forward(tape, s, &x, &mut ctx)?;
                let sq = tape.mul(out.asv, out.asv)?;
                tape.sum(sq)
            };
            let report = param_grad_check(&store, &ids, loss, 1e-5, None).unwrap();
            assert!(report.max_error < 1e-4, "{combine:?}: {report:?}");
            let mut tape = Tape::new();
            let l = loss(&mut tape, &store).unwrap();
            let g = tape.backward(l).unwrap();
            for id in skip {
                let worst = g.param(id).map_or(0.0, |t| t.data().iter().fold(0.0f64, |m, v| m.max(v.abs())));
                assert!(worst < 1e-12, "{} {worst}", store.name(id));
            }
        }
    }
}
