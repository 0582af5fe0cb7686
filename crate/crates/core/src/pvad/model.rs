//! Causal-conv + GRU personalized VAD network and its weight file format.
//!
//! Layout per step: log-mel row → causal 1-D convolutions (ReLU) → concat
//! with the speaker embedding along channels → single-layer GRU → affine
//! classifier → sigmoid. Gate ordering and tensor shapes follow the common
//! `(reset, update, new)` GRU convention so exported weights load directly.
//!
//! Weight file: the magic `PVAD`, a little-endian `u16` version, then
//! tensors until end of file. Each tensor is a `u16` name length, the UTF-8
//! name, a `u8` rank, `rank` `u32` dimensions and the `f32` data, all
//! little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PvadError, SpeakerEmbedding};

pub const WEIGHT_MAGIC: &[u8; 4] = b"PVAD";
pub const WEIGHT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PvadDims {
    pub n_mels: usize,
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub embedding: usize,
    pub hidden: usize,
}

impl Default for PvadDims {
    fn default() -> Self {
        Self {
            n_mels: 80,
            conv_channels: vec![64, 64, 64],
            kernel: 3,
            embedding: super::EMBEDDING_DIM,
            hidden: 128,
        }
    }
}

/// One causal convolution layer, weights laid out `[out][in][kernel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalConv {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl CausalConv {
    fn w(&self, o: usize, i: usize, j: usize) -> f32 {
        self.weight[(o * self.in_channels + i) * self.kernel + j]
    }

    /// Output for one time step given the `kernel` most recent inputs,
    /// oldest first.
    fn apply(&self, window: &[&[f32]]) -> Vec<f32> {
        (0..self.out_channels)
            .map(|o| {
                let mut acc = self.bias[o];
                for (j, x) in window.iter().enumerate() {
                    for (i, &xi) in x.iter().enumerate() {
                        acc += self.w(o, i, j) * xi;
                    }
                }
                acc.max(0.0)
            })
            .collect()
    }
}

/// Single-layer GRU. `w_ih` is `[3·hidden][input]`, `w_hh` is
/// `[3·hidden][hidden]`, gate blocks ordered reset, update, new.
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub input: usize,
    pub hidden: usize,
    pub w_ih: Vec<f32>,
    pub w_hh: Vec<f32>,
    pub b_ih: Vec<f32>,
    pub b_hh: Vec<f32>,
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

fn matvec(w: &[f32], cols: usize, x: &[f32], bias: &[f32]) -> Vec<f32> {
    w.chunks_exact(cols)
        .zip(bias)
        .map(|(row, b)| b + row.iter().zip(x).map(|(a, v)| a * v).sum::<f32>())
        .collect()
}

impl Gru {
    fn step(&self, x: &[f32], h: &[f32]) -> Vec<f32> {
        let gi = matvec(&self.w_ih, self.input, x, &self.b_ih);
        let gh = matvec(&self.w_hh, self.hidden, h, &self.b_hh);
        let n_h = self.hidden;
        (0..n_h)
            .map(|k| {
                let r = sigmoid(gi[k] + gh[k]);
                let z = sigmoid(gi[n_h + k] + gh[n_h + k]);
                let n = (gi[2 * n_h + k] + r * gh[2 * n_h + k]).tanh();
                (1.0 - z) * n + z * h[k]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PvadModel {
    pub convs: Vec<CausalConv>,
    pub gru: Gru,
    pub classifier_weight: Vec<f32>,
    pub classifier_bias: f32,
}

/// Streaming carry-over for one stream: the last `kernel - 1` inputs of
/// every conv layer and the GRU hidden vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PvadState {
    history: Vec<Vec<Vec<f32>>>,
    hidden: Vec<f32>,
}

impl PvadState {
    pub fn new(model: &PvadModel) -> Self {
        Self {
            history: model
                .convs
                .iter()
                .map(|c| vec![vec![0.0; c.in_channels]; c.kernel - 1])
                .collect(),
            hidden: vec![0.0; model.gru.hidden],
        }
    }

    pub fn reset(&mut self) {
        for layer in &mut self.history {
            for slot in layer {
                slot.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        self.hidden.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn hidden(&self) -> &[f32] {
        &self.hidden
    }

    fn matches(&self, model: &PvadModel) -> bool {
        self.hidden.len() == model.gru.hidden
            && self.history.len() == model.convs.len()
            && self
                .history
                .iter()
                .zip(&model.convs)
                .all(|(h, c)| h.len() == c.kernel - 1 && h.iter().all(|s| s.len() == c.in_channels))
    }
}

impl PvadModel {
    pub fn zeros(dims: &PvadDims) -> Self {
        Self::build(dims, |_| 0.0)
    }

    /// Uniform `±1/√fan_in` initialization from a seeded RNG.
    pub fn random(dims: &PvadDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(dims, |fan_in| {
            let bound = 1.0 / (fan_in as f32).sqrt();
            rng.gen_range(-bound..bound)
        })
    }

    fn build(dims: &PvadDims, mut init: impl FnMut(usize) -> f32) -> Self {
        let mut convs = Vec::new();
        let mut in_ch = dims.n_mels;
        for &out_ch in &dims.conv_channels {
            let fan_in = in_ch * dims.kernel;
            convs.push(CausalConv {
                in_channels: in_ch,
                out_channels: out_ch,
                kernel: dims.kernel,
                weight: (0..out_ch * fan_in).map(|_| init(fan_in)).collect(),
                bias: (0..out_ch).map(|_| init(fan_in)).collect(),
            });
            in_ch = out_ch;
        }
        let input = in_ch + dims.embedding;
        let h = dims.hidden;
        let gru = Gru {
            input,
            hidden: h,
            w_ih: (0..3 * h * input).map(|_| init(h)).collect(),
            w_hh: (0..3 * h * h).map(|_| init(h)).collect(),
            b_ih: (0..3 * h).map(|_| init(h)).collect(),
            b_hh: (0..3 * h).map(|_| init(h)).collect(),
        };
        Self {
            convs,
            gru,
            classifier_weight: (0..h).map(|_| init(h)).collect(),
            classifier_bias: init(h),
        }
    }

    pub fn n_mels(&self) -> usize {
        self.convs.first().map_or(self.gru.input, |c| c.in_channels)
    }

    pub fn conv_out(&self) -> usize {
        self.convs.last().map_or(self.n_mels(), |c| c.out_channels)
    }

    pub fn embedding_dim(&self) -> usize {
        self.gru.input - self.conv_out()
    }

    fn check_inputs(&self, row: &[f32], embedding: &SpeakerEmbedding) -> Result<(), PvadError> {
        if row.len() != self.n_mels() {
            return Err(PvadError::DimensionMismatch {
                axis: "features",
                expected: self.n_mels(),
                got: row.len(),
            });
        }
        if embedding.dim() != self.embedding_dim() {
            return Err(PvadError::DimensionMismatch {
                axis: "embedding",
                expected: self.embedding_dim(),
                got: embedding.dim(),
            });
        }
        Ok(())
    }

    fn classify(&self, h: &[f32]) -> f32 {
        let logit = self.classifier_bias
            + self
                .classifier_weight
                .iter()
                .zip(h)
                .map(|(w, v)| w * v)
                .sum::<f32>();
        sigmoid(logit)
    }

    /// Whole-utterance evaluation: each conv layer runs over the full
    /// left-zero-padded sequence before the GRU sweeps it.
    pub fn forward_batch(
        &self,
        rows: &[Vec<f32>],
        embedding: &SpeakerEmbedding,
    ) -> Result<Vec<f32>, PvadError> {
        for row in rows {
            self.check_inputs(row, embedding)?;
        }
        let mut seq: Vec<Vec<f32>> = rows.to_vec();
        for conv in &self.convs {
            let pad = conv.kernel - 1;
            let mut padded = vec![vec![0.0; conv.in_channels]; pad];
            padded.extend(seq.iter().cloned());
            seq = (0..rows.len())
                .map(|t| {
                    let window: Vec<&[f32]> =
                        padded[t..t + conv.kernel].iter().map(Vec::as_slice).collect();
                    conv.apply(&window)
                })
                .collect();
        }
        let mut h = vec![0.0; self.gru.hidden];
        Ok(seq
            .into_iter()
            .map(|mut x| {
                x.extend_from_slice(embedding.as_slice());
                h = self.gru.step(&x, &h);
                self.classify(&h)
            })
            .collect())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PvadError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PvadError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHT_MAGIC);
        out.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
        for (name, dims, data) in self.named_tensors() {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(dims.len() as u8);
            for d in &dims {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    fn named_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        let mut t = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            t.push((
                format!("conv{i}.weight"),
                vec![c.out_channels, c.in_channels, c.kernel],
                c.weight.clone(),
            ));
            t.push((format!("conv{i}.bias"), vec![c.out_channels], c.bias.clone()));
        }
        let g = &self.gru;
        t.push(("gru.weight_ih".into(), vec![3 * g.hidden, g.input], g.w_ih.clone()));
        t.push(("gru.weight_hh".into(), vec![3 * g.hidden, g.hidden], g.w_hh.clone()));
        t.push(("gru.bias_ih".into(), vec![3 * g.hidden], g.b_ih.clone()));
        t.push(("gru.bias_hh".into(), vec![3 * g.hidden], g.b_hh.clone()));
        t.push((
            "classifier.weight".into(),
            vec![1, g.hidden],
            self.classifier_weight.clone(),
        ));
        t.push(("classifier.bias".into(), vec![1], vec![self.classifier_bias]));
        t
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PvadError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != WEIGHT_MAGIC {
            return Err(PvadError::WeightFormat("bad magic".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != WEIGHT_VERSION {
            return Err(PvadError::WeightFormat(format!("unsupported version {version}")));
        }
        let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)> = BTreeMap::new();
        while r.pos < bytes.len() {
            let name_len = u16::from_le_bytes(r.array()?) as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| PvadError::WeightFormat("tensor name is not UTF-8".into()))?;
            let rank = r.take(1)?[0] as usize;
            let dims: Vec<usize> = (0..rank)
                .map(|_| r.array().map(|b| u32::from_le_bytes(b) as usize))
                .collect::<Result<_, _>>()?;
            let count: usize = dims.iter().product();
            let data = r
                .take(count * 4)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            tensors.insert(name, (dims, data));
        }
        Self::from_tensors(tensors)
    }

    fn from_tensors(mut t: BTreeMap<String, (Vec<usize>, Vec<f32>)>) -> Result<Self, PvadError> {
        let mut take = |name: &str, rank: usize| -> Result<(Vec<usize>, Vec<f32>), PvadError> {
            let (dims, data) = t
                .remove(name)
                .ok_or_else(|| PvadError::WeightFormat(format!("missing tensor {name}")))?;
            if dims.len() != rank {
                return Err(PvadError::WeightFormat(format!(
                    "{name}: expected rank {rank}, got {}",
                    dims.len()
                )));
            }
            Ok((dims, data))
        };
        let mut convs = Vec::new();
        let mut i = 0;
        loop {
            let name = format!("conv{i}.weight");
            let (dims, weight) = match take(&name, 3) {
                Ok(v) => v,
                Err(_) if i > 0 => break,
                Err(e) => return Err(e),
            };
            let (bdims, bias) = take(&format!("conv{i}.bias"), 1)?;
            if bdims[0] != dims[0] || dims[2] == 0 {
                return Err(PvadError::WeightFormat(format!("conv{i}: inconsistent shapes")));
            }
            if let Some(prev) = convs.last() {
                let prev: &CausalConv = prev;
                if prev.out_channels != dims[1] {
                    return Err(PvadError::DimensionMismatch {
                        axis: "conv channels",
                        expected: prev.out_channels,
                        got: dims[1],
                    });
                }
            }
            convs.push(CausalConv {
                out_channels: dims[0],
                in_channels: dims[1],
                kernel: dims[2],
                weight,
                bias,
            });
            i += 1;
        }
        let (ih_dims, w_ih) = take("gru.weight_ih", 2)?;
        let (hh_dims, w_hh) = take("gru.weight_hh", 2)?;
        let (_, b_ih) = take("gru.bias_ih", 1)?;
        let (_, b_hh) = take("gru.bias_hh", 1)?;
        let (cw_dims, classifier_weight) = take("classifier.weight", 2)?;
        let (_, cb) = take("classifier.bias", 1)?;
        let hidden = hh_dims[1];
        if ih_dims[0] != 3 * hidden
            || hh_dims[0] != 3 * hidden
            || b_ih.len() != 3 * hidden
            || b_hh.len() != 3 * hidden
            || cw_dims != [1, hidden]
            || cb.len() != 1
        {
            return Err(PvadError::WeightFormat("inconsistent GRU/classifier shapes".into()));
        }
        let conv_out = convs.last().map_or(0, |c| c.out_channels);
        if ih_dims[1] <= conv_out {
            return Err(PvadError::DimensionMismatch {
                axis: "gru input",
                expected: conv_out + 1,
                got: ih_dims[1],
            });
        }
        Ok(Self {
            convs,
            gru: Gru {
                input: ih_dims[1],
                hidden,
                w_ih,
                w_hh,
                b_ih,
                b_hh,
            },
            classifier_weight,
            classifier_bias: cb[0],
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PvadError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| PvadError::WeightFormat("truncated weight file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], PvadError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

/// Advances the network by one 10 ms feature row and returns the speaking
/// probability for that step.
pub fn pvad_step(
    state: &mut PvadState,
    row: &[f32],
    embedding: &SpeakerEmbedding,
    model: &PvadModel,
) -> Result<f32, PvadError> {
    model.check_inputs(row, embedding)?;
    if !state.matches(model) {
        return Err(PvadError::DimensionMismatch {
            axis: "state",
            expected: model.gru.hidden,
            got: state.hidden.len(),
        });
    }
    let mut x = row.to_vec();
    for (conv, hist) in model.convs.iter().zip(state.history.iter_mut()) {
        let y = {
            let mut window: Vec<&[f32]> = hist.iter().map(Vec::as_slice).collect();
            window.push(&x);
            conv.apply(&window)
        };
        if !hist.is_empty() {
            hist.remove(0);
            hist.push(x);
        }
        x = y;
    }
    x.extend_from_slice(embedding.as_slice());
    state.hidden = model.gru.step(&x, &state.hidden);
    Ok(model.classify(&state.hidden))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pvad::EMBEDDING_DIM;
    use rand::Rng;

    fn small_dims() -> PvadDims {
        PvadDims {
            n_mels: 8,
            conv_channels: vec![6, 5],
            kernel: 3,
            embedding: EMBEDDING_DIM,
            hidden: 7,
        }
    }

    fn embedding(seed: u64) -> SpeakerEmbedding {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SpeakerEmbedding::from_vector((0..EMBEDDING_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap()
    }

    fn rows(seed: u64, n: usize, dim: usize) -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect()
    }

    #[test]
    fn zero_weights_give_one_half() {
        let model = PvadModel::zeros(&PvadDims::default());
        let mut state = PvadState::new(&model);
        for row in rows(1, 5, 80) {
            let p = pvad_step(&mut state, &row, &embedding(2), &model).unwrap();
            assert_eq!(p, 0.5);
        }
    }

    #[test]
    fn default_dims_match_documented_architecture() {
        let model = PvadModel::random(&PvadDims::default(), 7);
        assert_eq!(model.n_mels(), 80);
        assert_eq!(model.convs.len(), 3);
        assert_eq!(model.gru.input, 64 + 192);
        assert_eq!(model.gru.hidden, 128);
        assert_eq!(model.embedding_dim(), 192);
    }

    #[test]
    fn streaming_matches_batch() {
        let model = PvadModel::random(&small_dims(), 3);
        let emb = embedding(4);
        let input = rows(5, 60, 8);
        let batch = model.forward_batch(&input, &emb).unwrap();
        let mut state = PvadState::new(&model);
        for (t, row) in input.iter().enumerate() {
            let p = pvad_step(&mut state, row, &emb, &model).unwrap();
            assert!((p - batch[t]).abs() < 1e-5, "step {t}");
        }
    }

    #[test]
    fn one_probability_per_row() {
        let model = PvadModel::random(&PvadDims::default(), 11);
        let out = model.forward_batch(&rows(1, 100, 80), &embedding(1)).unwrap();
        assert_eq!(out.len(), 100);
        assert!(out.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn dimension_mismatch_names_the_axis() {
        let model = PvadModel::random(&small_dims(), 3);
        let mut state = PvadState::new(&model);
        let err = pvad_step(&mut state, &[0.0; 9], &embedding(1), &model).unwrap_err();
        assert!(matches!(err, PvadError::DimensionMismatch { axis: "features", expected: 8, got: 9 }));
        let other = PvadModel::random(&PvadDims::default(), 3);
        let mut wrong_state = PvadState::new(&other);
        let err = pvad_step(&mut wrong_state, &[0.0; 8], &embedding(1), &model).unwrap_err();
        assert!(matches!(err, PvadError::DimensionMismatch { axis: "state", .. }));
    }

    #[test]
    fn reset_restores_initial_state() {
        let model = PvadModel::random(&small_dims(), 3);
        let fresh = PvadState::new(&model);
        let mut state = fresh.clone();
        for row in rows(9, 10, 8) {
            pvad_step(&mut state, &row, &embedding(1), &model).unwrap();
        }
        assert_ne!(state, fresh);
        state.reset();
        assert_eq!(state, fresh);
    }

    #[test]
    fn weight_file_round_trip_and_layout() {
        let model = PvadModel::random(&small_dims(), 21);
        let bytes = model.to_bytes();
        assert_eq!(&bytes[..4], b"PVAD");
        assert_eq!(&bytes[4..6], &1u16.to_le_bytes());
        // first tensor header: name length, name, rank, dims
        assert_eq!(&bytes[6..8], &12u16.to_le_bytes());
        assert_eq!(&bytes[8..20], b"conv0.weight");
        assert_eq!(bytes[20], 3);
        assert_eq!(&bytes[21..25], &6u32.to_le_bytes());
        assert_eq!(&bytes[25..29], &8u32.to_le_bytes());
        assert_eq!(&bytes[29..33], &3u32.to_le_bytes());
        let first = f32::from_le_bytes(bytes[33..37].try_into().unwrap());
        assert_eq!(first, model.convs[0].weight[0]);
        assert_eq!(PvadModel::from_bytes(&bytes).unwrap(), model);
    }

    #[test]
    fn truncated_or_foreign_files_are_rejected() {
        let bytes = PvadModel::random(&small_dims(), 21).to_bytes();
        assert!(PvadModel::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(PvadModel::from_bytes(b"NOPE\x01\x00").is_err());
        let mut wrong_version = bytes.clone();
        wrong_version[4] = 9;
        assert!(PvadModel::from_bytes(&wrong_version).is_err());
    }
}
