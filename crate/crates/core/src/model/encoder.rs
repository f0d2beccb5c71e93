use crate::error::Result;
use crate::features::tokens::{vocab_size, TokenSequence};
use crate::features::{N_MELS, SPEAKER_DIM};
use crate::ndmath::layers::{normal_array, Conv1d, Init, LayerNorm, Linear};
use crate::ndmath::{Graph, ParamId, ParamStore, Real, Var};
use crate::Rng;

/// Token embedding, residual conv stack with layer norm and ReLU, and a
/// linear projection to the prior mean. The speaker vector is projected and
/// added at every token position before the convolutions.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub hidden: usize,
    embedding: ParamId,
    speaker: Linear,
    convs: Vec<Conv1d>,
    norms: Vec<LayerNorm>,
    proj: Conv1d,
}

/// Graph handles for one encoded sequence.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    /// `[80 × N]` prior means.
    pub mu: Var,
    /// `[H × N]` token states before the projection.
    pub hidden: Var,
}

impl Encoder {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut Rng,
        name: &str,
        hidden: usize,
        layers: usize,
        kernel: usize,
    ) -> Self {
        let embedding = store.add(&format!("{name}.embedding"), normal_array(rng, &[hidden, vocab_size()], 1.0));
        let speaker = Linear::new(store, rng, &format!("{name}.speaker"), SPEAKER_DIM, hidden, Init::FanIn);
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        for i in 0..layers {
            convs.push(Conv1d::new(store, rng, &format!("{name}.conv{i}"), hidden, hidden, kernel, 1, 1, Init::FanIn));
            norms.push(LayerNorm::new(store, &format!("{name}.norm{i}"), hidden));
        }
        let proj = Conv1d::pointwise(store, rng, &format!("{name}.proj"), hidden, N_MELS, Init::FanIn);
        Self {
            hidden,
            embedding,
            speaker,
            convs,
            norms,
            proj,
        }
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, tokens: &TokenSequence, speaker: Var) -> Result<EncoderOutput> {
        tokens.validate()?;
        let emb = g.param(self.embedding);
        let mut x = g.gather_cols(emb, &tokens.ids);
        let s = self.speaker.forward(g, speaker);
        x = g.add(x, s);
        for (conv, norm) in self.convs.iter().zip(&self.norms) {
            let h = conv.forward(g, x);
            let h = norm.forward(g, h);
            let h = g.clamp_min(h, 0.0);
            x = g.add(x, h);
        }
        let mu = self.proj.forward(g, x);
        Ok(EncoderOutput { mu, hidden: x })
    }
}
