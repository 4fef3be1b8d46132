//! Small fully-convolutional heatmap predictor with hand-written backprop.
//!
//! Layout (`c1, c2, c3` are the stage widths, `N` the landmark count):
//!
//! ```text
//! input 1xHxW
//! e1 = elu(conv3x3(input))            c1 @ H
//! e2 = elu(conv3x3(pool(e1)))         c2 @ H/2
//! e3 = elu(conv3x3(pool(e2)))         c3 @ H/4
//! d2 = elu(conv3x3(up(e3)) + e2)      c2 @ H/2
//! d1 = elu(conv3x3(up(d2)) + e1)      c1 @ H
//! out = conv1x1(dropout(d1))          N  @ H
//! ```
//!
//! Pooling is 2x2 average, upsampling is nearest-neighbour, so `H` and `W`
//! must be multiples of 4. All tensors are channel-major `[C][H][W]`.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Architecture hyperparameters. The parameter vector layout is fully
/// determined by this plus the landmark count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictorSpec {
    pub widths: [usize; 3],
    pub landmarks: usize,
}

impl PredictorSpec {
    pub fn new(widths: [usize; 3], landmarks: usize) -> Result<Self> {
        if widths.iter().any(|&w| w == 0) || landmarks == 0 {
            return Err(Error::invalid("predictor widths and landmark count must be positive"));
        }
        Ok(Self { widths, landmarks })
    }

    fn convs(&self) -> [ConvShape; 6] {
        let [c1, c2, c3] = self.widths;
        [
            ConvShape::new(1, c1, 3),
            ConvShape::new(c1, c2, 3),
            ConvShape::new(c2, c3, 3),
            ConvShape::new(c3, c2, 3),
            ConvShape::new(c2, c1, 3),
            ConvShape::new(c1, self.landmarks, 1),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.convs().iter().map(ConvShape::len).sum()
    }

    pub fn check_geometry(&self, width: usize, height: usize) -> Result<()> {
        if width < 4 || height < 4 || width % 4 != 0 || height % 4 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "predictor input must be a multiple of 4 in both dimensions, got {width}x{height}"
            )));
        }
        Ok(())
    }

    /// He-style initialization, deterministic per seed; biases start at zero.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = rng::seeded(seed);
        let mut params = Vec::with_capacity(self.param_count());
        for (i, c) in self.convs().iter().enumerate() {
            let fan_in = (c.cin * c.k * c.k) as f64;
            // The output layer starts small so initial heatmaps are near zero.
            let std = if i == 5 { 0.1 / fan_in.sqrt() } else { (2.0 / fan_in).sqrt() };
            for _ in 0..c.cout * c.cin * c.k * c.k {
                let u: f64 = rng.random_range(-1.0..1.0);
                params.push(u * std * 3f64.sqrt());
            }
            params.extend(std::iter::repeat(0.0).take(c.cout));
        }
        params
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvShape {
    cin: usize,
    cout: usize,
    k: usize,
}

impl ConvShape {
    const fn new(cin: usize, cout: usize, k: usize) -> Self {
        Self { cin, cout, k }
    }

    fn weights(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    fn len(&self) -> usize {
        self.weights() + self.cout
    }
}

/// Feature map `[C][H][W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[i * n..(i + 1) * n]
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// Same-padded convolution with odd square kernel. `params` holds the weights
/// `[cout][cin][k][k]` followed by `cout` biases.
fn conv_forward(input: &Tensor, params: &[f64], s: ConvShape) -> Tensor {
    let (h, w) = (input.h, input.w);
    let mut out = Tensor::zeros(s.cout, h, w);
    let pad = s.k / 2;
    let (weights, bias) = params.split_at(s.weights());
    let plane = h * w;
    for oc in 0..s.cout {
        let o = &mut out.data[oc * plane..(oc + 1) * plane];
        o.fill(bias[oc]);
        for ic in 0..s.cin {
            let inp = &input.data[ic * plane..(ic + 1) * plane];
            for ky in 0..s.k {
                for kx in 0..s.k {
                    let wv = weights[((oc * s.cin + ic) * s.k + ky) * s.k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (x0, x1, sx) = tap_range(w, kx, pad);
                    for y in 0..h {
                        let yy = y as isize + ky as isize - pad as isize;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        let src = &inp[yy as usize * w..(yy as usize + 1) * w];
                        let dst = &mut o[y * w..(y + 1) * w];
                        axpy(wv, &src[(x0 as isize + sx) as usize..(x1 as isize + sx) as usize], &mut dst[x0..x1]);
                    }
                }
            }
        }
    }
    out
}

/// Valid output column range `[x0, x1)` for kernel column `kx` and the source offset.
#[inline]
fn tap_range(w: usize, kx: usize, pad: usize) -> (usize, usize, isize) {
    let sx = kx as isize - pad as isize;
    let x0 = (-sx).max(0) as usize;
    let x1 = (w as isize - sx.max(0)) as usize;
    (x0, x1.max(x0), sx)
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Accumulates parameter gradients into `dparams` and returns the input gradient.
fn conv_backward(input: &Tensor, gout: &Tensor, params: &[f64], dparams: &mut [f64], s: ConvShape, need_input_grad: bool) -> Option<Tensor> {
    let (h, w) = (input.h, input.w);
    let pad = s.k / 2;
    let plane = h * w;
    let (weights, _) = params.split_at(s.weights());
    let (dweights, dbias) = dparams.split_at_mut(s.weights());
    let mut gin = need_input_grad.then(|| Tensor::zeros(s.cin, h, w));
    for oc in 0..s.cout {
        let go = &gout.data[oc * plane..(oc + 1) * plane];
        dbias[oc] += go.iter().sum::<f64>();
        for ic in 0..s.cin {
            let inp = &input.data[ic * plane..(ic + 1) * plane];
            for ky in 0..s.k {
                for kx in 0..s.k {
                    let widx = ((oc * s.cin + ic) * s.k + ky) * s.k + kx;
                    let wv = weights[widx];
                    let (x0, x1, sx) = tap_range(w, kx, pad);
                    let (s0, s1) = ((x0 as isize + sx) as usize, (x1 as isize + sx) as usize);
                    let mut acc = 0.0;
                    for y in 0..h {
                        let yy = y as isize + ky as isize - pad as isize;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        let yy = yy as usize;
                        let g = &go[y * w + x0..y * w + x1];
                        acc += dot(&inp[yy * w + s0..yy * w + s1], g);
                        if let Some(gi) = gin.as_mut() {
                            let row = &mut gi.data[ic * plane + yy * w..ic * plane + (yy + 1) * w];
                            axpy(wv, g, &mut row[s0..s1]);
                        }
                    }
                    dweights[widx] += acc;
                }
            }
        }
    }
    gin
}

#[inline]
fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Derivative of ELU expressed through its output.
#[inline]
fn elu_grad_from_output(y: f64) -> f64 {
    if y > 0.0 {
        1.0
    } else {
        y + 1.0
    }
}

fn elu_inplace(t: &mut Tensor) {
    t.data.iter_mut().for_each(|v| *v = elu(*v));
}

fn elu_backward(out: &Tensor, g: &mut Tensor) {
    for (gi, &yi) in g.data.iter_mut().zip(&out.data) {
        *gi *= elu_grad_from_output(yi);
    }
}

fn pool(t: &Tensor) -> Tensor {
    let (h2, w2) = (t.h / 2, t.w / 2);
    let mut out = Tensor::zeros(t.c, h2, w2);
    for c in 0..t.c {
        let src = t.channel(c);
        for y in 0..h2 {
            for x in 0..w2 {
                let i = 2 * y * t.w + 2 * x;
                out.data[c * h2 * w2 + y * w2 + x] = 0.25 * (src[i] + src[i + 1] + src[i + t.w] + src[i + t.w + 1]);
            }
        }
    }
    out
}

fn pool_backward(g: &Tensor, h: usize, w: usize) -> Tensor {
    let mut out = Tensor::zeros(g.c, h, w);
    for c in 0..g.c {
        for y in 0..g.h {
            for x in 0..g.w {
                let v = 0.25 * g.data[c * g.plane() + y * g.w + x];
                let i = c * h * w + 2 * y * w + 2 * x;
                out.data[i] += v;
                out.data[i + 1] += v;
                out.data[i + w] += v;
                out.data[i + w + 1] += v;
            }
        }
    }
    out
}

fn upsample(t: &Tensor) -> Tensor {
    let (h2, w2) = (t.h * 2, t.w * 2);
    let mut out = Tensor::zeros(t.c, h2, w2);
    for c in 0..t.c {
        for y in 0..h2 {
            for x in 0..w2 {
                out.data[c * h2 * w2 + y * w2 + x] = t.data[c * t.plane() + (y / 2) * t.w + x / 2];
            }
        }
    }
    out
}

fn upsample_backward(g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(g.c, g.h / 2, g.w / 2);
    let plane = out.plane();
    for c in 0..g.c {
        for y in 0..g.h {
            for x in 0..g.w {
                out.data[c * plane + (y / 2) * out.w + x / 2] += g.data[c * g.plane() + y * g.w + x];
            }
        }
    }
    out
}

fn add_inplace(a: &mut Tensor, b: &Tensor) {
    for (x, y) in a.data.iter_mut().zip(&b.data) {
        *x += y;
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Tensor,
    e1: Tensor,
    p1: Tensor,
    e2: Tensor,
    p2: Tensor,
    e3: Tensor,
    u3: Tensor,
    d2: Tensor,
    u2: Tensor,
    d1: Tensor,
    /// Dropout multipliers (`0` or `1/(1-p)`), absent when dropout is off.
    mask: Option<Vec<f64>>,
    dropped: Tensor,
}

/// Dropout applied before the output layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DropoutMode {
    Off,
    On { rate: f64, seed: u64 },
}

pub struct ReferencePredictor {
    pub spec: PredictorSpec,
}

impl ReferencePredictor {
    pub fn new(spec: PredictorSpec) -> Self {
        Self { spec }
    }

    fn slices<'a>(&self, params: &'a [f64]) -> Vec<&'a [f64]> {
        let mut out = Vec::with_capacity(6);
        let mut off = 0;
        for c in self.spec.convs() {
            out.push(&params[off..off + c.len()]);
            off += c.len();
        }
        out
    }

    /// Forward pass. `image` is `height x width` row-major.
    pub fn forward(&self, params: &[f64], image: &[f64], width: usize, height: usize, dropout: DropoutMode) -> Result<(Tensor, ForwardCache)> {
        self.spec.check_geometry(width, height)?;
        if image.len() != width * height {
            return Err(Error::ShapeMismatch(format!("image has {} values, expected {}", image.len(), width * height)));
        }
        if params.len() != self.spec.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} predictor parameters, architecture needs {}",
                params.len(),
                self.spec.param_count()
            )));
        }
        let convs = self.spec.convs();
        let p = self.slices(params);
        let input = Tensor {
            c: 1,
            h: height,
            w: width,
            data: image.to_vec(),
        };
        let mut e1 = conv_forward(&input, p[0], convs[0]);
        elu_inplace(&mut e1);
        let p1 = pool(&e1);
        let mut e2 = conv_forward(&p1, p[1], convs[1]);
        elu_inplace(&mut e2);
        let p2 = pool(&e2);
        let mut e3 = conv_forward(&p2, p[2], convs[2]);
        elu_inplace(&mut e3);
        let u3 = upsample(&e3);
        let mut d2 = conv_forward(&u3, p[3], convs[3]);
        add_inplace(&mut d2, &e2);
        elu_inplace(&mut d2);
        let u2 = upsample(&d2);
        let mut d1 = conv_forward(&u2, p[4], convs[4]);
        add_inplace(&mut d1, &e1);
        elu_inplace(&mut d1);

        let (mask, dropped) = match dropout {
            DropoutMode::On { rate, seed } if rate > 0.0 => {
                let mut rng: Rng = rng::seeded(seed);
                let keep = 1.0 / (1.0 - rate);
                let mask: Vec<f64> = (0..d1.data.len())
                    .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                    .collect();
                let mut dropped = d1.clone();
                for (v, m) in dropped.data.iter_mut().zip(&mask) {
                    *v *= m;
                }
                (Some(mask), dropped)
            }
            _ => (None, d1.clone()),
        };
        let out = conv_forward(&dropped, p[5], convs[5]);
        let cache = ForwardCache {
            input,
            e1,
            p1,
            e2,
            p2,
            e3,
            u3,
            d2,
            u2,
            d1,
            mask,
            dropped,
        };
        Ok((out, cache))
    }

    /// Gradient of a scalar loss with respect to all parameters, given the
    /// gradient with respect to the output heatmaps.
    pub fn backward(&self, params: &[f64], cache: &ForwardCache, grad_out: &Tensor) -> Vec<f64> {
        let convs = self.spec.convs();
        let p = self.slices(params);
        let mut grad = vec![0.0; params.len()];
        let mut offsets = [0usize; 7];
        for (i, c) in convs.iter().enumerate() {
            offsets[i + 1] = offsets[i] + c.len();
        }
        let mut back = |i: usize, input: &Tensor, gout: &Tensor, need_input: bool| {
            conv_backward(input, gout, p[i], &mut grad[offsets[i]..offsets[i + 1]], convs[i], need_input)
        };

        let mut g_d1 = back(5, &cache.dropped, grad_out, true).expect("input gradient");
        if let Some(mask) = &cache.mask {
            for (g, m) in g_d1.data.iter_mut().zip(mask) {
                *g *= m;
            }
        }
        elu_backward(&cache.d1, &mut g_d1);
        // d1 = elu(conv(u2) + e1): the pre-activation gradient flows to both.
        let mut g_e1 = g_d1.clone();
        let g_u2 = back(4, &cache.u2, &g_d1, true).expect("input gradient");
        let mut g_d2 = upsample_backward(&g_u2);
        elu_backward(&cache.d2, &mut g_d2);
        let mut g_e2 = g_d2.clone();
        let g_u3 = back(3, &cache.u3, &g_d2, true).expect("input gradient");
        let mut g_e3 = upsample_backward(&g_u3);
        elu_backward(&cache.e3, &mut g_e3);
        let g_p2 = back(2, &cache.p2, &g_e3, true).expect("input gradient");
        add_inplace(&mut g_e2, &pool_backward(&g_p2, cache.e2.h, cache.e2.w));
        elu_backward(&cache.e2, &mut g_e2);
        let g_p1 = back(1, &cache.p1, &g_e2, true).expect("input gradient");
        add_inplace(&mut g_e1, &pool_backward(&g_p1, cache.e1.h, cache.e1.w));
        elu_backward(&cache.e1, &mut g_e1);
        back(0, &cache.input, &g_e1, false);
        grad
    }
}
