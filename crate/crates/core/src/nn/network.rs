use crate::error::{Error, Result};
use crate::nn::layer::{Layer, Params};
use crate::nn::loss;
use crate::tensor::Tensor;

/// Gradient of the loss with respect to one parametric layer's *effective*
/// weights (weight ⊙ mask) and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weight: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

/// Ordered stack of layers applied to samples of a fixed shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let net = Self {
            input_shape,
            layers,
        };
        net.output_shape()?;
        for (i, layer) in net.layers.iter().enumerate() {
            if let Some(p) = layer.params() {
                p.validate()
                    .map_err(|e| Error::invalid(format!("layer {i}: {e}")))?;
            }
        }
        Ok(net)
    }

    /// `input -> [dense -> relu]* -> dense -> softmax`, zero-initialized.
    pub fn mlp(input_shape: Vec<usize>, hidden: &[usize], classes: usize) -> Result<Self> {
        let mut layers = Vec::new();
        let mut width: usize = input_shape.iter().product();
        for &h in hidden {
            layers.push(dense(width, h));
            layers.push(Layer::Relu);
            width = h;
        }
        layers.push(dense(width, classes));
        layers.push(Layer::SoftmaxOutput);
        Self::new(input_shape, layers)
    }

    /// Two 3x3 convolutions, global average pooling and a dense classifier,
    /// zero-initialized. `input_shape` is `(channels, height, width)`.
    pub fn conv2(input_shape: Vec<usize>, channels: usize, classes: usize) -> Result<Self> {
        if input_shape.len() != 3 {
            return Err(Error::shape("conv2 input", &[0, 0, 0], &input_shape));
        }
        let layers = vec![
            conv(input_shape[0], channels, 3, 1),
            Layer::Relu,
            conv(channels, channels, 3, 1),
            Layer::Relu,
            Layer::GlobalAvgPool,
            dense(channels, classes),
            Layer::SoftmaxOutput,
        ];
        Self::new(input_shape, layers)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Per-sample output shape, validating every layer along the way.
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        let mut shape = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer_output_shape(i, layer, &shape)?;
        }
        Ok(shape)
    }

    pub fn num_classes(&self) -> usize {
        self.output_shape().map(|s| s.iter().product()).unwrap_or(0)
    }

    /// Parametric layers with their index in `layers()`.
    pub fn prunable(&self) -> impl Iterator<Item = (usize, &Params)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.params().map(|p| (i, p)))
    }

    pub fn prunable_mut(&mut self) -> impl Iterator<Item = (usize, &mut Params)> {
        self.layers
            .iter_mut()
            .enumerate()
            .filter_map(|(i, l)| l.params_mut().map(|p| (i, p)))
    }

    pub fn total_weights(&self) -> usize {
        self.prunable().map(|(_, p)| p.len()).sum()
    }

    pub fn surviving_weights(&self) -> usize {
        self.prunable().map(|(_, p)| p.surviving()).sum()
    }

    /// Fraction of prunable weights removed by masks.
    pub fn sparsity(&self) -> f64 {
        let total = self.total_weights();
        if total == 0 {
            return 0.0;
        }
        1.0 - self.surviving_weights() as f64 / total as f64
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        if batch.shape().len() != self.input_shape.len() + 1
            || batch.shape()[1..] != self.input_shape[..]
        {
            let mut expected = vec![batch.rows()];
            expected.extend_from_slice(&self.input_shape);
            return Err(Error::shape("network input", &expected, batch.shape()));
        }
        Ok(())
    }

    /// Logits for a batch shaped `(n, ...input_shape)`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut x = batch.clone();
        for layer in &self.layers {
            x = layer_forward(layer, &x);
        }
        Ok(x)
    }

    /// Softmax probabilities for a batch.
    pub fn predict_proba(&self, batch: &Tensor) -> Result<Tensor> {
        let logits = self.forward(batch)?;
        Ok(loss::softmax(&logits))
    }

    /// Activations entering each layer, followed by the final output.
    pub(crate) fn forward_trace(&self, batch: &Tensor) -> Result<Vec<Tensor>> {
        self.check_batch(batch)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(batch.clone());
        for layer in &self.layers {
            let next = layer_forward(layer, acts.last().expect("non-empty"));
            acts.push(next);
        }
        Ok(acts)
    }

    /// Backpropagate `grad_out` (gradient w.r.t. the network output) through the
    /// recorded activations. Entry `i` of the result is `Some` for parametric layers.
    pub(crate) fn backward(&self, acts: &[Tensor], grad_out: Tensor) -> Vec<Option<ParamGrad>> {
        let mut grads = vec![None; self.layers.len()];
        let mut g = grad_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts[i];
            let need_input_grad = i > 0;
            let (gin, pg) = layer_backward(layer, input, &g, need_input_grad);
            grads[i] = pg;
            match gin {
                Some(next) => g = next,
                None => break,
            }
        }
        grads
    }

    /// Mean softmax cross-entropy over the batch and its gradients.
    pub fn loss_and_grads(
        &self,
        batch: &Tensor,
        labels: &[usize],
    ) -> Result<(f64, Vec<Option<ParamGrad>>)> {
        if labels.len() != batch.rows() {
            return Err(Error::shape("labels", &[batch.rows()], &[labels.len()]));
        }
        let acts = self.forward_trace(batch)?;
        let logits = acts.last().expect("non-empty");
        let (value, grad) = loss::cross_entropy(logits, labels)?;
        Ok((value, self.backward(&acts, grad)))
    }
}

fn dense(input: usize, output: usize) -> Layer {
    Layer::Dense(Params::new(
        Tensor::zeros(vec![output, input]),
        Some(Tensor::zeros(vec![output])),
    ))
}

fn conv(input: usize, output: usize, kernel: usize, padding: usize) -> Layer {
    Layer::Conv2d {
        params: Params::new(
            Tensor::zeros(vec![output, input, kernel, kernel]),
            Some(Tensor::zeros(vec![output])),
        ),
        stride: 1,
        padding,
    }
}

fn conv_out(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    (size + 2 * padding)
        .checked_sub(kernel)
        .map(|d| d / stride + 1)
}

fn layer_output_shape(index: usize, layer: &Layer, shape: &[usize]) -> Result<Vec<usize>> {
    let ctx = |what: &str| format!("layer {index} ({what})");
    match layer {
        Layer::Dense(p) => {
            let ws = p.weight.shape();
            if ws.len() != 2 {
                return Err(Error::shape(ctx("dense weight rank"), &[0, 0], ws));
            }
            let width: usize = shape.iter().product();
            if width != ws[1] {
                return Err(Error::shape(ctx("dense input"), &[ws[1]], &[width]));
            }
            if let Some(b) = &p.bias {
                if b.len() != ws[0] {
                    return Err(Error::shape(ctx("dense bias"), &[ws[0]], b.shape()));
                }
            }
            Ok(vec![ws[0]])
        }
        Layer::Conv2d {
            params,
            stride,
            padding,
        } => {
            let ws = params.weight.shape();
            if ws.len() != 4 || ws[2] != ws[3] {
                return Err(Error::shape(ctx("conv kernel"), &[0, 0, 0, 0], ws));
            }
            if shape.len() != 3 || shape[0] != ws[1] {
                return Err(Error::shape(ctx("conv input"), &[ws[1], 0, 0], shape));
            }
            if *stride == 0 {
                return Err(Error::invalid(ctx("conv stride must be positive")));
            }
            if let Some(b) = &params.bias {
                if b.len() != ws[0] {
                    return Err(Error::shape(ctx("conv bias"), &[ws[0]], b.shape()));
                }
            }
            let h = conv_out(shape[1], ws[2], *stride, *padding);
            let w = conv_out(shape[2], ws[3], *stride, *padding);
            match (h, w) {
                (Some(h), Some(w)) => Ok(vec![ws[0], h, w]),
                _ => Err(Error::shape(
                    ctx("conv spatial"),
                    &[ws[2], ws[3]],
                    &shape[1..],
                )),
            }
        }
        Layer::Relu => Ok(shape.to_vec()),
        Layer::GlobalAvgPool => {
            if shape.len() != 3 {
                return Err(Error::shape(ctx("pool input"), &[0, 0, 0], shape));
            }
            Ok(vec![shape[0]])
        }
        Layer::SoftmaxOutput => {
            if shape.len() != 1 {
                return Err(Error::shape(ctx("softmax input"), &[0], shape));
            }
            Ok(shape.to_vec())
        }
    }
}

fn layer_forward(layer: &Layer, x: &Tensor) -> Tensor {
    match layer {
        Layer::Dense(p) => dense_forward(p, x),
        Layer::Conv2d {
            params,
            stride,
            padding,
        } => conv_forward(params, *stride, *padding, x),
        Layer::Relu => {
            let data = x.data().iter().map(|&v| v.max(0.0)).collect();
            Tensor::new(x.shape().to_vec(), data).expect("same shape")
        }
        Layer::GlobalAvgPool => {
            let (n, c) = (x.shape()[0], x.shape()[1]);
            let hw = x.shape()[2] * x.shape()[3];
            let mut out = Vec::with_capacity(n * c);
            for plane in x.data().chunks(hw) {
                let s: f64 = plane.iter().map(|&v| v as f64).sum();
                out.push((s / hw as f64) as f32);
            }
            Tensor::new(vec![n, c], out).expect("pool shape")
        }
        Layer::SoftmaxOutput => x.clone(),
    }
}

fn dense_forward(p: &Params, x: &Tensor) -> Tensor {
    let (out_dim, in_dim) = (p.weight.shape()[0], p.weight.shape()[1]);
    let w = p.effective_weight();
    let n = x.rows();
    let mut out = Vec::with_capacity(n * out_dim);
    for xs in x.data().chunks(in_dim) {
        for o in 0..out_dim {
            let row = &w[o * in_dim..(o + 1) * in_dim];
            let mut acc = p.bias.as_ref().map_or(0.0, |b| b.data()[o] as f64);
            for (&a, &b) in xs.iter().zip(row) {
                acc += a as f64 * b as f64;
            }
            out.push(acc as f32);
        }
    }
    Tensor::new(vec![n, out_dim], out).expect("dense shape")
}

struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeom {
    fn new(p: &Params, stride: usize, padding: usize, x: &Tensor) -> Self {
        let ws = p.weight.shape();
        let xs = x.shape();
        let (h, w, k) = (xs[2], xs[3], ws[2]);
        Self {
            n: xs[0],
            c: xs[1],
            h,
            w,
            o: ws[0],
            k,
            ho: conv_out(h, k, stride, padding).expect("validated"),
            wo: conv_out(w, k, stride, padding).expect("validated"),
            stride,
            padding,
        }
    }

    /// Input coordinate for output position `y` and kernel offset `ky`, if inside the image.
    #[inline]
    fn src(&self, y: usize, ky: usize, limit: usize) -> Option<usize> {
        (y * self.stride + ky)
            .checked_sub(self.padding)
            .filter(|&v| v < limit)
    }
}

fn conv_forward(p: &Params, stride: usize, padding: usize, x: &Tensor) -> Tensor {
    let g = ConvGeom::new(p, stride, padding, x);
    let w = p.effective_weight();
    let xd = x.data();
    let mut out = vec![0f32; g.n * g.o * g.ho * g.wo];
    let mut acc = vec![0f64; g.ho * g.wo];
    for n in 0..g.n {
        for o in 0..g.o {
            let b = p.bias.as_ref().map_or(0.0, |b| b.data()[o] as f64);
            acc.iter_mut().for_each(|a| *a = b);
            for c in 0..g.c {
                let plane = &xd[(n * g.c + c) * g.h * g.w..][..g.h * g.w];
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let wv = w[((o * g.c + c) * g.k + ky) * g.k + kx] as f64;
                        if wv == 0.0 {
                            continue;
                        }
                        for y in 0..g.ho {
                            let Some(sy) = g.src(y, ky, g.h) else {
                                continue;
                            };
                            for xo in 0..g.wo {
                                if let Some(sx) = g.src(xo, kx, g.w) {
                                    acc[y * g.wo + xo] += wv * plane[sy * g.w + sx] as f64;
                                }
                            }
                        }
                    }
                }
            }
            let dst = &mut out[(n * g.o + o) * g.ho * g.wo..][..g.ho * g.wo];
            for (d, a) in dst.iter_mut().zip(&acc) {
                *d = *a as f32;
            }
        }
    }
    Tensor::new(vec![g.n, g.o, g.ho, g.wo], out).expect("conv shape")
}

fn layer_backward(
    layer: &Layer,
    input: &Tensor,
    g: &Tensor,
    need_input_grad: bool,
) -> (Option<Tensor>, Option<ParamGrad>) {
    match layer {
        Layer::Dense(p) => {
            let (gin, pg) = dense_backward(p, input, g, need_input_grad);
            (gin, Some(pg))
        }
        Layer::Conv2d {
            params,
            stride,
            padding,
        } => {
            let (gin, pg) = conv_backward(params, *stride, *padding, input, g, need_input_grad);
            (gin, Some(pg))
        }
        Layer::Relu => {
            let data = input
                .data()
                .iter()
                .zip(g.data())
                .map(|(&x, &d)| if x > 0.0 { d } else { 0.0 })
                .collect();
            (
                Some(Tensor::new(input.shape().to_vec(), data).expect("relu")),
                None,
            )
        }
        Layer::GlobalAvgPool => {
            let hw = input.shape()[2] * input.shape()[3];
            let scale = 1.0 / hw as f64;
            let mut data = Vec::with_capacity(input.len());
            for &d in g.data() {
                let v = (d as f64 * scale) as f32;
                data.extend(std::iter::repeat_n(v, hw));
            }
            (
                Some(Tensor::new(input.shape().to_vec(), data).expect("pool")),
                None,
            )
        }
        Layer::SoftmaxOutput => (Some(g.clone()), None),
    }
}

fn dense_backward(
    p: &Params,
    input: &Tensor,
    g: &Tensor,
    need_input_grad: bool,
) -> (Option<Tensor>, ParamGrad) {
    let (out_dim, in_dim) = (p.weight.shape()[0], p.weight.shape()[1]);
    let n = input.rows();
    let mut gw = vec![0f64; out_dim * in_dim];
    let mut gb = vec![0f64; out_dim];
    for (xs, gs) in input.data().chunks(in_dim).zip(g.data().chunks(out_dim)) {
        for (o, &go) in gs.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            let go = go as f64;
            gb[o] += go;
            for (acc, &x) in gw[o * in_dim..(o + 1) * in_dim].iter_mut().zip(xs) {
                *acc += go * x as f64;
            }
        }
    }
    let gin = need_input_grad.then(|| {
        let w = p.effective_weight();
        let mut out = Vec::with_capacity(n * in_dim);
        let mut acc = vec![0f64; in_dim];
        for gs in g.data().chunks(out_dim) {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (o, &go) in gs.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                let go = go as f64;
                for (a, &wv) in acc.iter_mut().zip(&w[o * in_dim..(o + 1) * in_dim]) {
                    *a += go * wv as f64;
                }
            }
            out.extend(acc.iter().map(|&a| a as f32));
        }
        Tensor::new(input.shape().to_vec(), out).expect("dense grad")
    });
    let pg = ParamGrad {
        weight: gw.into_iter().map(|v| v as f32).collect(),
        bias: p
            .bias
            .as_ref()
            .map(|_| gb.into_iter().map(|v| v as f32).collect()),
    };
    (gin, pg)
}

fn conv_backward(
    p: &Params,
    stride: usize,
    padding: usize,
    input: &Tensor,
    g: &Tensor,
    need_input_grad: bool,
) -> (Option<Tensor>, ParamGrad) {
    let geo = ConvGeom::new(p, stride, padding, input);
    let xd = input.data();
    let gd = g.data();
    let k = geo.k;
    let mut gw = vec![0f64; geo.o * geo.c * k * k];
    let mut gb = vec![0f64; geo.o];
    let w = p.effective_weight();
    let mut gin = need_input_grad.then(|| vec![0f64; input.len()]);
    for n in 0..geo.n {
        for o in 0..geo.o {
            let gplane = &gd[(n * geo.o + o) * geo.ho * geo.wo..][..geo.ho * geo.wo];
            gb[o] += gplane.iter().map(|&v| v as f64).sum::<f64>();
            for c in 0..geo.c {
                let base = (n * geo.c + c) * geo.h * geo.w;
                let plane = &xd[base..base + geo.h * geo.w];
                for ky in 0..k {
                    for kx in 0..k {
                        let widx = ((o * geo.c + c) * k + ky) * k + kx;
                        let wv = w[widx] as f64;
                        let mut acc = 0f64;
                        for y in 0..geo.ho {
                            let Some(sy) = geo.src(y, ky, geo.h) else {
                                continue;
                            };
                            for xo in 0..geo.wo {
                                if let Some(sx) = geo.src(xo, kx, geo.w) {
                                    let gv = gplane[y * geo.wo + xo] as f64;
                                    acc += gv * plane[sy * geo.w + sx] as f64;
                                    if let Some(gi) = gin.as_mut() {
                                        gi[base + sy * geo.w + sx] += gv * wv;
                                    }
                                }
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    let gin = gin.map(|v| {
        Tensor::new(
            input.shape().to_vec(),
            v.into_iter().map(|x| x as f32).collect(),
        )
        .expect("conv grad")
    });
    let pg = ParamGrad {
        weight: gw.into_iter().map(|v| v as f32).collect(),
        bias: p
            .bias
            .as_ref()
            .map(|_| gb.into_iter().map(|v| v as f32).collect()),
    };
    (gin, pg)
}
