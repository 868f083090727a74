use super::video::ToyVideo;
use crate::diffusion::timestep_embedding;
use crate::error::{Result, SabrError};
use crate::tensor::{RngStream, Tensor};

/// Seed of the frozen projection; never trained, never changed.
pub const FEATURIZER_SEED: u64 = 0x5AB5_F00D;

/// Token matrix [M, d_cond] with M = (F_ctx + F_env)·P, context first.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningTokens {
    pub tokens: Tensor<f64>,
    pub ctx_frames: usize,
    pub env_frames: usize,
    pub patches: usize,
}

/// Frozen linear map from raw patch descriptors to `d_cond` features.
#[derive(Clone, Debug)]
pub struct Featurizer {
    weight: Vec<f64>,
    input: usize,
    width: usize,
}

impl Featurizer {
    pub fn new(input: usize, width: usize) -> Result<Self> {
        if input == 0 || width == 0 || !width.is_multiple_of(4) {
            return Err(SabrError::Config(format!(
                "featurizer {input}→{width}: width must be a positive multiple of 4"
            )));
        }
        let mut rng = RngStream::new(FEATURIZER_SEED)
            .split_index("featurizer", (input * 4096 + width) as u64);
        let scale = 1.0 / (input as f64).sqrt();
        let weight = (0..input * width).map(|_| rng.normal() * scale).collect();
        Ok(Featurizer {
            weight,
            input,
            width,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Projected patch features without positional terms.
    pub fn content(&self, descriptor: &[f64]) -> Result<Vec<f64>> {
        if descriptor.len() != self.input {
            return Err(SabrError::Dimension(format!(
                "patch descriptor of {} values, featurizer expects {}",
                descriptor.len(),
                self.input
            )));
        }
        let mut out = vec![0.0; self.width];
        for (i, x) in descriptor.iter().enumerate() {
            if *x != 0.0 {
                for (o, w) in out
                    .iter_mut()
                    .zip(&self.weight[i * self.width..(i + 1) * self.width])
                {
                    *o += x * w;
                }
            }
        }
        Ok(out)
    }

    /// Patch position encoding in the first half of the features, frame
    /// index encoding in the second.
    pub fn position(&self, patch: usize, frame: usize) -> Result<Vec<f64>> {
        let half = self.width / 2;
        let mut v = timestep_embedding(patch as f64, half)?;
        v.extend(timestep_embedding(frame as f64, half)?);
        Ok(v)
    }

    pub fn featurize(&self, video: &ToyVideo) -> Result<ConditioningTokens> {
        let p = video.patches();
        if video.env.len() != p || video.ctx.iter().any(|f| f.len() != p) {
            return Err(SabrError::Dimension(
                "video frames disagree with the patch grid".into(),
            ));
        }
        let env: Vec<Vec<f64>> = video
            .env
            .iter()
            .map(|d| self.content(d))
            .collect::<Result<_>>()?;
        let total = video.ctx.len() + video.env_frames;
        let mut data = Vec::with_capacity(total * p * self.width);
        for (fi, frame) in video.ctx.iter().enumerate() {
            for (pi, d) in frame.iter().enumerate() {
                let c = self.content(d)?;
                data.extend(c.iter().zip(self.position(pi, fi)?).map(|(a, b)| a + b));
            }
        }
        for fi in video.ctx.len()..total {
            for (pi, c) in env.iter().enumerate() {
                data.extend(c.iter().zip(self.position(pi, fi)?).map(|(a, b)| a + b));
            }
        }
        Ok(ConditioningTokens {
            tokens: Tensor::new(&[total * p, self.width], data)?,
            ctx_frames: video.ctx.len(),
            env_frames: video.env_frames,
            patches: p,
        })
    }
}

/// Conditioning tokens of `video` with the frozen featurizer of width `width`.
pub fn featurize(video: &ToyVideo, width: usize) -> Result<ConditioningTokens> {
    Featurizer::new(video.descriptor_len(), width)?.featurize(video)
}
