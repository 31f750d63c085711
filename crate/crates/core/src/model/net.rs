//! Two conv blocks, global average pooling and a dense head, with hand-written backprop.
//!
//! Tensors are flat row-major `channels x time x frequency` buffers.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub dense_w: Vec<f64>,
    pub dense_b: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Shape {
    pub c1: usize,
    pub c2: usize,
    pub classes: usize,
    pub bins: usize,
}

impl Shape {
    pub fn feature_len(&self) -> usize {
        self.c2
    }
}

impl NetParams {
    pub fn init(shape: Shape, rng: &mut impl Rng) -> Self {
        let he = |fan_in: usize| Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
        let conv1 = he(9);
        let conv2 = he(9 * shape.c1);
        let dense = Normal::new(0.0, 0.1 / (shape.feature_len() as f64).sqrt()).unwrap();
        Self {
            conv1_w: (0..shape.c1 * 9).map(|_| conv1.sample(rng)).collect(),
            conv1_b: vec![0.0; shape.c1],
            conv2_w: (0..shape.c2 * shape.c1 * 9).map(|_| conv2.sample(rng)).collect(),
            conv2_b: vec![0.0; shape.c2],
            dense_w: (0..shape.classes * shape.feature_len())
                .map(|_| dense.sample(rng))
                .collect(),
            dense_b: vec![0.0; shape.classes],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            conv1_w: vec![0.0; self.conv1_w.len()],
            conv1_b: vec![0.0; self.conv1_b.len()],
            conv2_w: vec![0.0; self.conv2_w.len()],
            conv2_b: vec![0.0; self.conv2_b.len()],
            dense_w: vec![0.0; self.dense_w.len()],
            dense_b: vec![0.0; self.dense_b.len()],
        }
    }

    pub fn tensors(&self) -> [&Vec<f64>; 6] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.dense_w,
            &self.dense_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.dense_w,
            &mut self.dense_b,
        ]
    }

    pub fn add_assign(&mut self, other: &NetParams) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
    }
}

/// Forward activations kept for backprop.
pub(crate) struct Trace {
    pub t: usize,
    pub f: usize,
    pub input: Vec<f64>,
    pub a1: Vec<f64>,
    pub p1: Vec<f64>,
    p1_idx: Vec<usize>,
    pub a2: Vec<f64>,
    p2_idx: Vec<usize>,
    pub t4: usize,
    pub feat: Vec<f64>,
    pub logits: Vec<f64>,
}

impl Trace {
    pub fn t2(&self) -> usize {
        self.t / 2
    }
    pub fn f2(&self) -> usize {
        self.f / 2
    }
}

pub(crate) struct Grads {
    pub input: Vec<f64>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub params: Option<NetParams>,
}

fn conv3x3(input: &[f64], cin: usize, h: usize, w: usize, weights: &[f64], bias: &[f64]) -> Vec<f64> {
    let cout = bias.len();
    let plane = h * w;
    let mut out = vec![0.0; cout * plane];
    for co in 0..cout {
        let dst = &mut out[co * plane..(co + 1) * plane];
        dst.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..cin {
            let src = &input[ci * plane..(ci + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = weights[((co * cin + ci) * 3 + ky) * 3 + kx];
                    let dy = ky as isize - 1;
                    let dx = kx as isize - 1;
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (h as isize - dy).min(h as isize) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize) as usize;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let orow = &mut dst[y * w + x0..y * w + x1];
                        let srow = &src[sy * w + (x0 as isize + dx) as usize..];
                        for (o, s) in orow.iter_mut().zip(srow) {
                            *o += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns (d input, d weights, d bias).
fn conv3x3_backward(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    dout: &[f64],
    cout: usize,
    want_input: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let plane = h * w;
    let mut din = vec![0.0; if want_input { cin * plane } else { 0 }];
    let mut dw = vec![0.0; weights.len()];
    let mut db = vec![0.0; cout];
    for co in 0..cout {
        let g = &dout[co * plane..(co + 1) * plane];
        db[co] = g.iter().sum();
        for ci in 0..cin {
            let src = &input[ci * plane..(ci + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let widx = ((co * cin + ci) * 3 + ky) * 3 + kx;
                    let wv = weights[widx];
                    let dy = ky as isize - 1;
                    let dx = kx as isize - 1;
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (h as isize - dy).min(h as isize) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize) as usize;
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (x0 as isize + dx) as usize;
                        let grow = &g[y * w + x0..y * w + x1];
                        let srow = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                        for (gv, s) in grow.iter().zip(srow) {
                            acc += gv * s;
                        }
                        if want_input {
                            let drow = &mut din[ci * plane + sy * w + sx0..ci * plane + sy * w + sx0 + (x1 - x0)];
                            for (d, gv) in drow.iter_mut().zip(grow) {
                                *d += wv * gv;
                            }
                        }
                    }
                    dw[widx] = acc;
                }
            }
        }
    }
    (din, dw, db)
}

/// 2x2 stride-2 max pooling (trailing odd row/column dropped). Ties keep the first cell.
fn maxpool2(input: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (h2, w2) = (h / 2, w / 2);
    let mut out = vec![0.0; c * h2 * w2];
    let mut idx = vec![0; c * h2 * w2];
    for ch in 0..c {
        for y in 0..h2 {
            for x in 0..w2 {
                let base = ch * h * w;
                let cands = [
                    base + 2 * y * w + 2 * x,
                    base + 2 * y * w + 2 * x + 1,
                    base + (2 * y + 1) * w + 2 * x,
                    base + (2 * y + 1) * w + 2 * x + 1,
                ];
                let mut best = cands[0];
                for &cand in &cands[1..] {
                    if input[cand] > input[best] {
                        best = cand;
                    }
                }
                let o = ch * h2 * w2 + y * w2 + x;
                out[o] = input[best];
                idx[o] = best;
            }
        }
    }
    (out, idx)
}

fn relu_inplace(v: &mut [f64]) {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Tail of the network after the second conv block's activation.
fn head_from_a2(params: &NetParams, shape: Shape, a2: &[f64], t2: usize, f2: usize) -> (Vec<usize>, usize, Vec<f64>, Vec<f64>) {
    let (p2, p2_idx) = maxpool2(a2, shape.c2, t2, f2);
    let (t4, f4) = (t2 / 2, f2 / 2);
    let cells = t4 * f4;
    let feat: Vec<f64> = p2
        .chunks(cells)
        .map(|channel| channel.iter().sum::<f64>() / cells as f64)
        .collect();
    let logits = dense(params, shape, &feat);
    (p2_idx, t4, feat, logits)
}

fn dense(params: &NetParams, shape: Shape, feat: &[f64]) -> Vec<f64> {
    (0..shape.classes)
        .map(|k| {
            params.dense_b[k]
                + params.dense_w[k * feat.len()..(k + 1) * feat.len()]
                    .iter()
                    .zip(feat)
                    .map(|(w, x)| w * x)
                    .sum::<f64>()
        })
        .collect()
}

fn block2(params: &NetParams, shape: Shape, a1: &[f64], t: usize, f: usize) -> (Vec<f64>, Vec<usize>, Vec<f64>) {
    let (p1, p1_idx) = maxpool2(a1, shape.c1, t, f);
    let mut a2 = conv3x3(&p1, shape.c1, t / 2, f / 2, &params.conv2_w, &params.conv2_b);
    relu_inplace(&mut a2);
    (p1, p1_idx, a2)
}

pub(crate) fn forward(params: &NetParams, shape: Shape, input: Vec<f64>, t: usize) -> Trace {
    let f = shape.bins;
    let mut a1 = conv3x3(&input, 1, t, f, &params.conv1_w, &params.conv1_b);
    relu_inplace(&mut a1);
    let (p1, p1_idx, a2) = block2(params, shape, &a1, t, f);
    let (p2_idx, t4, feat, logits) = head_from_a2(params, shape, &a2, t / 2, f / 2);
    Trace {
        t,
        f,
        input,
        a1,
        p1,
        p1_idx,
        a2,
        p2_idx,
        t4,
        feat,
        logits,
    }
}

/// Logits obtained by substituting a post-activation feature map of `layer` (1 or 2).
pub(crate) fn logits_from_layer(params: &NetParams, shape: Shape, layer: usize, map: &[f64], t: usize) -> Vec<f64> {
    let f = shape.bins;
    let a2 = match layer {
        1 => block2(params, shape, map, t, f).2,
        _ => map.to_vec(),
    };
    head_from_a2(params, shape, &a2, t / 2, f / 2).3
}

pub(crate) fn backward(params: &NetParams, shape: Shape, trace: &Trace, dlogits: &[f64], want_params: bool) -> Grads {
    let (t, f) = (trace.t, trace.f);
    let (t2, f2) = (t / 2, f / 2);
    let f4 = f2 / 2;
    let nf = trace.feat.len();

    let mut dfeat = vec![0.0; nf];
    for (k, g) in dlogits.iter().enumerate() {
        for (d, w) in dfeat.iter_mut().zip(&params.dense_w[k * nf..(k + 1) * nf]) {
            *d += g * w;
        }
    }
    let cells = trace.t4 * f4;
    let mut da2 = vec![0.0; trace.a2.len()];
    for (o, idx) in trace.p2_idx.iter().enumerate() {
        da2[*idx] += dfeat[o / cells] / cells as f64;
    }
    let dz2: Vec<f64> = da2
        .iter()
        .zip(&trace.a2)
        .map(|(g, a)| if *a > 0.0 { *g } else { 0.0 })
        .collect();
    let (dp1, dw2, db2) = conv3x3_backward(&trace.p1, shape.c1, t2, f2, &params.conv2_w, &dz2, shape.c2, true);
    let mut da1 = vec![0.0; trace.a1.len()];
    for (o, g) in dp1.iter().enumerate() {
        da1[trace.p1_idx[o]] += g;
    }
    let dz1: Vec<f64> = da1
        .iter()
        .zip(&trace.a1)
        .map(|(g, a)| if *a > 0.0 { *g } else { 0.0 })
        .collect();
    let (dinput, dw1, db1) = conv3x3_backward(&trace.input, 1, t, f, &params.conv1_w, &dz1, shape.c1, true);

    let params_grad = want_params.then(|| {
        let mut dense_w = vec![0.0; params.dense_w.len()];
        for (k, g) in dlogits.iter().enumerate() {
            for (d, x) in dense_w[k * nf..(k + 1) * nf].iter_mut().zip(&trace.feat) {
                *d = g * x;
            }
        }
        NetParams {
            conv1_w: dw1,
            conv1_b: db1,
            conv2_w: dw2,
            conv2_b: db2,
            dense_w,
            dense_b: dlogits.to_vec(),
        }
    });
    Grads {
        input: dinput,
        a1: da1,
        a2: da2,
        params: params_grad,
    }
}
