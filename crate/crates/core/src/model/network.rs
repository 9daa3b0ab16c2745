use serde::{Deserialize, Serialize};

use super::layers::*;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const IN_CHANNELS: usize = 2;
pub const OUT_CHANNELS: usize = 3;

/// U-shaped encoder-decoder layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSpec {
    pub base_width: usize,
    /// Number of 2x downsampling stages.
    pub depth: usize,
    /// 3x3 conv + SiLU pairs per stage.
    pub blocks: usize,
    /// Run the layers on the input divided by its RMS and scale the
    /// denoising residual back, so denoising is equivariant to input level.
    pub normalize: bool,
}

impl Default for NetSpec {
    fn default() -> Self {
        NetSpec {
            base_width: 16,
            depth: 2,
            blocks: 2,
            normalize: true,
        }
    }
}

impl NetSpec {
    pub fn downsample_factor(&self) -> usize {
        1 << self.depth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Layer {
    Conv {
        cin: usize,
        cout: usize,
        k: usize,
        offset: usize,
    },
    Silu,
    AvgPool2,
    Upsample2,
    /// Saves the current activation for a later [`Layer::AddSkip`].
    PushSkip,
    AddSkip,
}

impl Layer {
    fn param_count(&self) -> usize {
        match *self {
            Layer::Conv { cin, cout, k, .. } => cout * cin * k * k + cout,
            _ => 0,
        }
    }
}

fn build_layers(spec: &NetSpec) -> (Vec<Layer>, usize) {
    let mut layers = Vec::new();
    let mut offset = 0;
    let mut conv = |layers: &mut Vec<Layer>, cin, cout, k| {
        let l = Layer::Conv { cin, cout, k, offset };
        offset += l.param_count();
        layers.push(l);
    };
    let width = |s: usize| spec.base_width << s;
    let mut c = IN_CHANNELS;
    for s in 0..=spec.depth {
        for _ in 0..spec.blocks {
            conv(&mut layers, c, width(s), 3);
            layers.push(Layer::Silu);
            c = width(s);
        }
        if s < spec.depth {
            layers.push(Layer::PushSkip);
            layers.push(Layer::AvgPool2);
        }
    }
    for s in (0..spec.depth).rev() {
        layers.push(Layer::Upsample2);
        conv(&mut layers, c, width(s), 1);
        layers.push(Layer::AddSkip);
        c = width(s);
        for _ in 0..spec.blocks {
            conv(&mut layers, c, c, 3);
            layers.push(Layer::Silu);
        }
    }
    conv(&mut layers, c, OUT_CHANNELS, 1);
    (layers, offset)
}

/// Dense `[n][c][w][h]` block of activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub n: usize,
    pub c: usize,
    pub w: usize,
    pub h: usize,
    pub data: Vec<f64>,
}

impl Batch {
    pub fn new(n: usize, c: usize, w: usize, h: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * c * w * h {
            return Err(Error::ShapeMismatch(format!(
                "batch {n}x{c}x{w}x{h} needs {} values, got {}",
                n * c * w * h,
                data.len()
            )));
        }
        Ok(Batch { n, c, w, h, data })
    }

    pub fn zeros(n: usize, c: usize, w: usize, h: usize) -> Self {
        Batch {
            n,
            c,
            w,
            h,
            data: vec![0.0; n * c * w * h],
        }
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.w * self.h
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let l = self.sample_len();
        &self.data[i * l..(i + 1) * l]
    }

    /// Concatenates equally shaped samples.
    pub fn stack(samples: &[&[f64]], c: usize, w: usize, h: usize) -> Result<Self> {
        let data = samples.iter().flat_map(|s| s.iter().copied()).collect();
        Batch::new(samples.len(), c, w, h, data)
    }
}

/// Forward-pass record for one sample.
#[derive(Debug, Clone)]
pub(crate) struct SampleTrace {
    /// Input of every layer, plus its spatial size.
    inputs: Vec<(Vec<f64>, usize, usize, usize)>,
    /// Input RMS the layers saw the input divided by.
    scale: f64,
    pub(crate) output: Vec<f64>,
}

/// Forward record for a batch; consumed by [`Network::backward`].
#[derive(Debug, Clone, Default)]
pub struct Graph {
    traces: Vec<SampleTrace>,
    w: usize,
    h: usize,
}

impl Graph {
    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    /// Raw 3-channel network output.
    pub fn output(&self) -> Batch {
        let parts: Vec<&[f64]> = self.traces.iter().map(|t| t.output.as_slice()).collect();
        Batch::stack(&parts, OUT_CHANNELS, self.w, self.h).expect("consistent traces")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetSpec,
    layers: Vec<Layer>,
    params: Vec<f64>,
}

impl Network {
    /// He-normal conv weights, zero biases and a zero output head, so an
    /// untrained network passes its input through with `seg_prob = 0.5`.
    pub fn new(spec: NetSpec, rng: &Rng) -> Result<Self> {
        if spec.base_width == 0 || spec.blocks == 0 {
            return Err(Error::InvalidArgument(
                "base_width and blocks must be positive".into(),
            ));
        }
        let (layers, count) = build_layers(&spec);
        let mut params = vec![0.0; count];
        let mut rng = rng.split("init");
        let last = layers.len() - 1;
        for (idx, l) in layers.iter().enumerate() {
            if let Layer::Conv { cin, cout, k, offset } = *l {
                if idx == last {
                    continue;
                }
                let std = (2.0 / (cin * k * k) as f64).sqrt();
                for p in &mut params[offset..offset + cout * cin * k * k] {
                    *p = std * rng.normal();
                }
            }
        }
        Ok(Network { spec, layers, params })
    }

    pub fn from_params(spec: NetSpec, params: Vec<f64>) -> Result<Self> {
        let (layers, count) = build_layers(&spec);
        if params.len() != count {
            return Err(Error::CheckpointMismatch(format!(
                "layer spec {spec:?} needs {count} parameters, got {}",
                params.len()
            )));
        }
        Ok(Network { spec, layers, params })
    }

    pub fn spec(&self) -> NetSpec {
        self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// `(offset, weight count, bias count)` of every conv, in layer order.
    pub fn param_shapes(&self) -> Vec<(usize, [usize; 4])> {
        self.layers
            .iter()
            .filter_map(|l| match *l {
                Layer::Conv { cin, cout, k, offset } => Some((offset, [cout, cin, k, k])),
                _ => None,
            })
            .collect()
    }

    fn check_input(&self, c: usize, w: usize, h: usize) -> Result<()> {
        let f = self.spec.downsample_factor();
        if c != IN_CHANNELS || w == 0 || h == 0 || !w.is_multiple_of(f) || !h.is_multiple_of(f) {
            return Err(Error::ShapeMismatch(format!(
                "network input must be {IN_CHANNELS} x W x H with W, H divisible by {f}, got {c} x {w} x {h}"
            )));
        }
        Ok(())
    }

    fn conv_params(&self, cin: usize, cout: usize, k: usize, offset: usize) -> (&[f64], &[f64]) {
        let nw = cout * cin * k * k;
        (
            &self.params[offset..offset + nw],
            &self.params[offset + nw..offset + nw + cout],
        )
    }

    pub(crate) fn forward_sample(&self, x: &[f64], w: usize, h: usize, keep: bool) -> SampleTrace {
        let mut inputs = Vec::new();
        let mut skips: Vec<Vec<f64>> = Vec::new();
        let scale = if self.spec.normalize { input_scale(x) } else { 1.0 };
        let act0: Vec<f64> = x.iter().map(|v| v / scale).collect();
        let (mut act, mut c, mut cw, mut ch) = (act0, IN_CHANNELS, w, h);
        for layer in &self.layers {
            let next = match *layer {
                Layer::Conv { cin, cout, k, offset } => {
                    let (wt, b) = self.conv_params(cin, cout, k, offset);
                    let y = conv_forward(&act, cin, cw, ch, wt, b, cout, k);
                    c = cout;
                    y
                }
                Layer::Silu => silu_forward(&act),
                Layer::AvgPool2 => {
                    let y = pool_forward(&act, c, cw, ch);
                    (cw, ch) = (cw / 2, ch / 2);
                    y
                }
                Layer::Upsample2 => {
                    let y = upsample_forward(&act, c, cw, ch);
                    (cw, ch) = (cw * 2, ch * 2);
                    y
                }
                Layer::PushSkip => {
                    skips.push(act.clone());
                    act.clone()
                }
                Layer::AddSkip => {
                    let s = skips.pop().expect("balanced skips");
                    act.iter().zip(&s).map(|(a, b)| a + b).collect()
                }
            };
            if keep {
                let prev = std::mem::replace(&mut act, next);
                let (pw, ph) = match *layer {
                    Layer::AvgPool2 => (cw * 2, ch * 2),
                    Layer::Upsample2 => (cw / 2, ch / 2),
                    _ => (cw, ch),
                };
                let pc = match *layer {
                    Layer::Conv { cin, .. } => cin,
                    _ => c,
                };
                inputs.push((prev, pc, pw, ph));
            } else {
                act = next;
            }
        }
        // residual path for the two denoising channels
        let hw = w * h;
        for (o, v) in act[..2 * hw].iter_mut().zip(&x[..2 * hw]) {
            *o = v + scale * *o;
        }
        SampleTrace {
            inputs,
            scale,
            output: act,
        }
    }

    /// Gradient of the parameters given the gradient of one sample's raw
    /// output; accumulated into `grad`.
    pub(crate) fn backward_sample(&self, trace: &SampleTrace, dout: &[f64], grad: &mut [f64]) {
        let mut g = dout.to_vec();
        let hw = dout.len() / OUT_CHANNELS;
        g[..2 * hw].iter_mut().for_each(|v| *v *= trace.scale);
        let mut skip_grads: Vec<Vec<f64>> = Vec::new();
        for (layer, (input, c, w, h)) in self.layers.iter().zip(&trace.inputs).rev() {
            let (c, w, h) = (*c, *w, *h);
            g = match *layer {
                Layer::Conv { cin, cout, k, offset } => {
                    let nw = cout * cin * k * k;
                    let (wt, _) = self.conv_params(cin, cout, k, offset);
                    let (gw, gb) = grad[offset..offset + nw + cout].split_at_mut(nw);
                    conv_backward(input, cin, w, h, wt, cout, k, &g, gw, gb)
                }
                Layer::Silu => silu_backward(input, &g),
                Layer::AvgPool2 => pool_backward(&g, c, w, h),
                Layer::Upsample2 => upsample_backward(&g, c, w, h),
                Layer::AddSkip => {
                    skip_grads.push(g.clone());
                    g
                }
                Layer::PushSkip => {
                    let s = skip_grads.pop().expect("balanced skips");
                    g.iter().zip(&s).map(|(a, b)| a + b).collect()
                }
            };
        }
    }

    /// Raw 3-channel output of every sample, without recording a graph.
    pub fn forward_raw(&self, batch: &Batch) -> Result<Batch> {
        self.check_input(batch.c, batch.w, batch.h)?;
        let data = (0..batch.n)
            .flat_map(|i| self.forward_sample(batch.sample(i), batch.w, batch.h, false).output)
            .collect();
        Batch::new(batch.n, OUT_CHANNELS, batch.w, batch.h, data)
    }

    /// Denoised `[n][2][w][h]` and segmentation probability `[n][1][w][h]`.
    pub fn forward(&self, batch: &Batch) -> Result<(Batch, Batch)> {
        let raw = self.forward_raw(batch)?;
        Ok(split_output(&raw))
    }

    pub fn forward_graph(&self, batch: &Batch) -> Result<Graph> {
        self.check_input(batch.c, batch.w, batch.h)?;
        let traces = (0..batch.n)
            .map(|i| self.forward_sample(batch.sample(i), batch.w, batch.h, true))
            .collect();
        Ok(Graph {
            traces,
            w: batch.w,
            h: batch.h,
        })
    }

    /// Parameter gradients given the gradient of the loss with respect to
    /// the raw output recorded in `graph`.
    pub fn backward(&self, graph: &Graph, d_output: &Batch) -> Result<Vec<f64>> {
        if graph.is_empty() {
            return Err(Error::BackwardBeforeForward);
        }
        if d_output.n != graph.traces.len()
            || d_output.c != OUT_CHANNELS
            || (d_output.w, d_output.h) != (graph.w, graph.h)
        {
            return Err(Error::ShapeMismatch(
                "output gradient does not match the recorded forward pass".into(),
            ));
        }
        let mut grad = vec![0.0; self.params.len()];
        for (i, trace) in graph.traces.iter().enumerate() {
            self.backward_sample(trace, d_output.sample(i), &mut grad);
        }
        Ok(grad)
    }
}

/// RMS of a sample, or 1 when it is zero or not finite.
fn input_scale(x: &[f64]) -> f64 {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if rms > 0.0 && rms.is_finite() {
        rms
    } else {
        1.0
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Splits raw output into denoised channels and sigmoid probabilities.
pub fn split_output(raw: &Batch) -> (Batch, Batch) {
    let hw = raw.w * raw.h;
    let mut den = Vec::with_capacity(raw.n * 2 * hw);
    let mut prob = Vec::with_capacity(raw.n * hw);
    for i in 0..raw.n {
        let s = raw.sample(i);
        den.extend_from_slice(&s[..2 * hw]);
        prob.extend(s[2 * hw..].iter().map(|&z| sigmoid(z)));
    }
    (
        Batch {
            n: raw.n,
            c: 2,
            w: raw.w,
            h: raw.h,
            data: den,
        },
        Batch {
            n: raw.n,
            c: 1,
            w: raw.w,
            h: raw.h,
            data: prob,
        },
    )
}
