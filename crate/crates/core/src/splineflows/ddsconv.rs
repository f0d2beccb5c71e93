use crate::error::{Error, Result};
use crate::ndmath::layers::{Conv1d, Init, LayerNorm};
use crate::ndmath::{Graph, ParamStore, Real, Var};
use crate::Rng;

/// Residual stack of dilated depthwise + pointwise convolutions. Layer `i`
/// uses dilation `kernel^i`; each sublayer is followed by layer norm and GELU.
#[derive(Clone, Debug)]
pub struct DdsConv {
    pub channels: usize,
    pub kernel: usize,
    depthwise: Vec<Conv1d>,
    pointwise: Vec<Conv1d>,
    norm1: Vec<LayerNorm>,
    norm2: Vec<LayerNorm>,
}

impl DdsConv {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut Rng,
        name: &str,
        channels: usize,
        kernel: usize,
        depth: usize,
    ) -> Self {
        let mut s = Self {
            channels,
            kernel,
            depthwise: Vec::new(),
            pointwise: Vec::new(),
            norm1: Vec::new(),
            norm2: Vec::new(),
        };
        for i in 0..depth {
            let dil = kernel.pow(i as u32);
            s.depthwise.push(Conv1d::new(
                store,
                rng,
                &format!("{name}.sep{i}"),
                channels,
                channels,
                kernel,
                dil,
                channels,
                Init::FanIn,
            ));
            s.pointwise.push(Conv1d::pointwise(store, rng, &format!("{name}.pw{i}"), channels, channels, Init::FanIn));
            s.norm1.push(LayerNorm::new(store, &format!("{name}.ln1_{i}"), channels));
            s.norm2.push(LayerNorm::new(store, &format!("{name}.ln2_{i}"), channels));
        }
        s
    }

    pub fn depth(&self) -> usize {
        self.depthwise.len()
    }

    /// Frames on either side that can influence one output frame.
    pub fn receptive_radius(&self) -> usize {
        (0..self.depth()).map(|i| self.kernel.pow(i as u32) * (self.kernel - 1) / 2).sum()
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, x: Var, cond: Option<Var>) -> Result<Var> {
        if g.rows(x) != self.channels {
            return Err(Error::ShapeMismatch {
                op: "dds_conv_block",
                left: vec![self.channels, g.cols(x)],
                right: g.shape(x).to_vec(),
            });
        }
        let mut h = x;
        if let Some(c) = cond {
            if g.shape(c) != g.shape(x) {
                return Err(Error::ShapeMismatch {
                    op: "dds_conv_block conditioning",
                    left: g.shape(x).to_vec(),
                    right: g.shape(c).to_vec(),
                });
            }
            h = g.add(h, c);
        }
        for i in 0..self.depth() {
            let y = self.depthwise[i].forward(g, h);
            let y = self.norm1[i].forward(g, y);
            let y = g.gelu(y);
            let y = self.pointwise[i].forward(g, y);
            let y = self.norm2[i].forward(g, y);
            let y = g.gelu(y);
            h = g.add(h, y);
        }
        Ok(h)
    }
}
