use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};

#[derive(Debug, Clone)]
pub(crate) struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

/// Per-channel `x * scale + shift`; batch norm with frozen statistics folds
/// into this form.
#[derive(Debug, Clone)]
pub(crate) struct ChannelAffine {
    pub scale: ParamId,
    pub shift: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct MaxPool {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone)]
pub(crate) enum Block {
    Conv(Conv2d),
    Affine(ChannelAffine),
    Relu,
    MaxPool(MaxPool),
    /// Non-overlapping average pooling with window = stride.
    AvgPool(usize),
    GlobalAvgPool,
    /// `relu(main(x) + shortcut(x))`; an empty shortcut is the identity.
    Residual { main: Vec<Block>, shortcut: Vec<Block> },
}

impl Block {
    fn has_params(&self) -> bool {
        match self {
            Block::Conv(_) | Block::Affine(_) => true,
            Block::Residual { main, shortcut } => main.iter().chain(shortcut).any(Block::has_params),
            _ => false,
        }
    }
}

/// Saved state needed to back-propagate through one block.
pub(crate) enum Trace {
    Input(Tensor),
    Output(Tensor),
    ArgMax { index: Vec<usize>, shape: (usize, usize, usize) },
    Shape((usize, usize, usize)),
    Residual { main: Vec<Trace>, shortcut: Vec<Trace>, out: Tensor },
}

fn out_len(n: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad).saturating_sub(kernel) / stride + 1
}

impl Conv2d {
    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            out_len(h, self.kernel, self.stride, self.pad),
            out_len(w, self.kernel, self.stride, self.pad),
        )
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    fn im2col(&self, x: &Tensor) -> Vec<f64> {
        let (ho, wo) = self.out_hw(x.h, x.w);
        let k = self.kernel;
        let p = ho * wo;
        let mut col = vec![0.0; x.c * k * k * p];
        for ci in 0..x.c {
            let src = &x.data[ci * x.plane()..(ci + 1) * x.plane()];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((ci * k + ky) * k + kx) * p..][..p];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * x.w..][..x.w];
                        let dst = &mut row[oy * wo..][..wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < x.w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, col: &[f64], c: usize, h: usize, w: usize) -> Tensor {
        let (ho, wo) = self.out_hw(h, w);
        let k = self.kernel;
        let p = ho * wo;
        let mut out = Tensor::zeros(c, h, w);
        for ci in 0..c {
            let dst = &mut out.data[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((ci * k + ky) * k + kx) * p..][..p];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * w..][..w];
                        for (ox, v) in row[oy * wo..][..wo].iter().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst_row[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn forward(&self, x: &Tensor, params: &ParamStore) -> Tensor {
        let (ho, wo) = self.out_hw(x.h, x.w);
        let p = ho * wo;
        let kk = self.in_c * self.kernel * self.kernel;
        let mut out = Tensor::zeros(self.out_c, ho, wo);
        if let Some(b) = self.bias {
            for (o, bias) in params.slice(b).iter().enumerate() {
                out.data[o * p..(o + 1) * p].fill(*bias);
            }
        }
        let w = params.slice(self.weight);
        if self.is_pointwise() {
            gemm(self.out_c, kk, p, w, false, &x.data, false, 1.0, &mut out.data);
        } else {
            let col = self.im2col(x);
            gemm(self.out_c, kk, p, w, false, &col, false, 1.0, &mut out.data);
        }
        out
    }

    fn backward(&self, x: &Tensor, dy: &Tensor, params: &ParamStore, grads: &mut [f64], need_dx: bool) -> Option<Tensor> {
        let p = dy.plane();
        let kk = self.in_c * self.kernel * self.kernel;
        if let Some(b) = self.bias {
            for (o, g) in grads[b.range()].iter_mut().enumerate() {
                *g += dy.data[o * p..(o + 1) * p].iter().sum::<f64>();
            }
        }
        let col_owned;
        let col: &[f64] = if self.is_pointwise() {
            &x.data
        } else {
            col_owned = self.im2col(x);
            &col_owned
        };
        gemm(self.out_c, p, kk, &dy.data, false, col, true, 1.0, &mut grads[self.weight.range()]);
        if !need_dx {
            return None;
        }
        let w = params.slice(self.weight);
        let mut dcol = vec![0.0; kk * p];
        gemm(kk, self.out_c, p, w, true, &dy.data, false, 0.0, &mut dcol);
        if self.is_pointwise() {
            Some(Tensor::from_vec(x.c, x.h, x.w, dcol))
        } else {
            Some(self.col2im(&dcol, x.c, x.h, x.w))
        }
    }
}

impl ChannelAffine {
    fn forward(&self, x: &Tensor, params: &ParamStore) -> Tensor {
        let (scale, shift) = (params.slice(self.scale), params.slice(self.shift));
        let p = x.plane();
        let mut out = x.clone();
        for c in 0..x.c {
            for v in &mut out.data[c * p..(c + 1) * p] {
                *v = *v * scale[c] + shift[c];
            }
        }
        out
    }

    fn backward(&self, x: &Tensor, dy: &Tensor, params: &ParamStore, grads: &mut [f64]) -> Tensor {
        let scale = params.slice(self.scale);
        let p = x.plane();
        let mut dx = dy.clone();
        for c in 0..x.c {
            let xs = &x.data[c * p..(c + 1) * p];
            let ds = &dy.data[c * p..(c + 1) * p];
            grads[self.scale.offset + c] += xs.iter().zip(ds).map(|(a, b)| a * b).sum::<f64>();
            grads[self.shift.offset + c] += ds.iter().sum::<f64>();
            for v in &mut dx.data[c * p..(c + 1) * p] {
                *v *= scale[c];
            }
        }
        dx
    }
}

impl MaxPool {
    fn forward(&self, x: &Tensor) -> (Tensor, Vec<usize>) {
        let ho = out_len(x.h, self.kernel, self.stride, self.pad);
        let wo = out_len(x.w, self.kernel, self.stride, self.pad);
        let mut out = Tensor::zeros(x.c, ho, wo);
        let mut index = vec![0usize; x.c * ho * wo];
        for c in 0..x.c {
            let base = c * x.plane();
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut arg = usize::MAX;
                    for ky in 0..self.kernel {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= x.w as isize {
                                continue;
                            }
                            let i = base + iy as usize * x.w + ix as usize;
                            if x.data[i] > best || arg == usize::MAX {
                                best = x.data[i];
                                arg = i;
                            }
                        }
                    }
                    let o = (c * ho + oy) * wo + ox;
                    out.data[o] = best;
                    index[o] = arg;
                }
            }
        }
        (out, index)
    }
}

fn avg_pool(x: &Tensor, k: usize) -> Tensor {
    let (ho, wo) = (x.h / k, x.w / k);
    let mut out = Tensor::zeros(x.c, ho, wo);
    let inv = 1.0 / (k * k) as f64;
    for c in 0..x.c {
        let src = &x.data[c * x.plane()..(c + 1) * x.plane()];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = 0.0;
                for ky in 0..k {
                    let row = &src[(oy * k + ky) * x.w + ox * k..][..k];
                    s += row.iter().sum::<f64>();
                }
                out.data[(c * ho + oy) * wo + ox] = s * inv;
            }
        }
    }
    out
}

fn avg_pool_backward(dy: &Tensor, k: usize, shape: (usize, usize, usize)) -> Tensor {
    let (c, h, w) = shape;
    let mut dx = Tensor::zeros(c, h, w);
    let inv = 1.0 / (k * k) as f64;
    for ci in 0..c {
        for oy in 0..dy.h {
            for ox in 0..dy.w {
                let g = dy.data[(ci * dy.h + oy) * dy.w + ox] * inv;
                for ky in 0..k {
                    let row = &mut dx.data[(ci * h + oy * k + ky) * w + ox * k..][..k];
                    row.iter_mut().for_each(|v| *v += g);
                }
            }
        }
    }
    dx
}

fn relu(mut x: Tensor) -> Tensor {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
    x
}

fn relu_backward(out: &Tensor, mut dy: Tensor) -> Tensor {
    for (g, o) in dy.data.iter_mut().zip(&out.data) {
        if *o <= 0.0 {
            *g = 0.0;
        }
    }
    dy
}

/// Runs `blocks` in order, recording traces when `traces` is given.
pub(crate) fn forward(blocks: &[Block], mut x: Tensor, params: &ParamStore, mut traces: Option<&mut Vec<Trace>>) -> Tensor {
    for block in blocks {
        let record = traces.is_some();
        let (y, trace) = match block {
            Block::Conv(conv) => {
                let y = conv.forward(&x, params);
                (y, record.then(|| Trace::Input(x)))
            }
            Block::Affine(aff) => {
                let y = aff.forward(&x, params);
                (y, record.then(|| Trace::Input(x)))
            }
            Block::Relu => {
                let y = relu(x);
                let t = record.then(|| Trace::Output(y.clone()));
                (y, t)
            }
            Block::MaxPool(pool) => {
                let shape = x.shape();
                let (y, index) = pool.forward(&x);
                (y, record.then(|| Trace::ArgMax { index, shape }))
            }
            Block::AvgPool(k) => {
                let shape = x.shape();
                (avg_pool(&x, *k), record.then_some(Trace::Shape(shape)))
            }
            Block::GlobalAvgPool => {
                let shape = x.shape();
                let p = x.plane() as f64;
                let data = x.data.chunks_exact(x.plane()).map(|ch| ch.iter().sum::<f64>() / p).collect();
                (Tensor::from_vec(x.c, 1, 1, data), record.then_some(Trace::Shape(shape)))
            }
            Block::Residual { main, shortcut } => {
                let mut main_tr = Vec::new();
                let mut short_tr = Vec::new();
                let m = forward(main, x.clone(), params, record.then_some(&mut main_tr));
                let s = if shortcut.is_empty() {
                    x
                } else {
                    forward(shortcut, x, params, record.then_some(&mut short_tr))
                };
                debug_assert_eq!(m.shape(), s.shape());
                let mut y = m;
                y.data.iter_mut().zip(&s.data).for_each(|(a, b)| *a = (*a + b).max(0.0));
                let t = record.then(|| Trace::Residual {
                    main: main_tr,
                    shortcut: short_tr,
                    out: y.clone(),
                });
                (y, t)
            }
        };
        if let (Some(traces), Some(trace)) = (traces.as_deref_mut(), trace) {
            traces.push(trace);
        }
        x = y;
    }
    x
}

/// Back-propagates `dy` through `blocks`, accumulating into `grads`.
/// Returns the input gradient only when `need_dx` is set.
pub(crate) fn backward(
    blocks: &[Block],
    traces: &[Trace],
    mut dy: Tensor,
    params: &ParamStore,
    grads: &mut [f64],
    need_dx: bool,
) -> Option<Tensor> {
    debug_assert_eq!(blocks.len(), traces.len());
    for (i, (block, trace)) in blocks.iter().zip(traces).enumerate().rev() {
        if !need_dx && !blocks[..=i].iter().any(Block::has_params) {
            return None;
        }
        let want_dx = need_dx || blocks[..i].iter().any(Block::has_params);
        dy = match (block, trace) {
            (Block::Conv(conv), Trace::Input(x)) => match conv.backward(x, &dy, params, grads, want_dx) {
                Some(dx) => dx,
                None => return None,
            },
            (Block::Affine(aff), Trace::Input(x)) => aff.backward(x, &dy, params, grads),
            (Block::Relu, Trace::Output(out)) => relu_backward(out, dy),
            (Block::MaxPool(_), Trace::ArgMax { index, shape }) => {
                let mut dx = Tensor::zeros(shape.0, shape.1, shape.2);
                for (g, &i) in dy.data.iter().zip(index) {
                    dx.data[i] += g;
                }
                dx
            }
            (Block::AvgPool(k), Trace::Shape(shape)) => avg_pool_backward(&dy, *k, *shape),
            (Block::GlobalAvgPool, Trace::Shape((c, h, w))) => {
                let inv = 1.0 / (h * w) as f64;
                let mut dx = Tensor::zeros(*c, *h, *w);
                for (ch, g) in dx.data.chunks_exact_mut(h * w).zip(&dy.data) {
                    ch.fill(g * inv);
                }
                dx
            }
            (Block::Residual { main, shortcut }, Trace::Residual { main: mt, shortcut: st, out }) => {
                let d = relu_backward(out, dy);
                let dm = backward(main, mt, d.clone(), params, grads, want_dx);
                let ds = if shortcut.is_empty() {
                    Some(d)
                } else {
                    backward(shortcut, st, d, params, grads, want_dx)
                };
                match (dm, ds) {
                    (Some(mut a), Some(b)) => {
                        a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += y);
                        a
                    }
                    _ => return None,
                }
            }
            _ => unreachable!("trace does not match block"),
        };
    }
    need_dx.then_some(dy)
}

/// Output shape of `blocks` for an input of `shape`, without computing it.
pub(crate) fn output_shape(blocks: &[Block], shape: (usize, usize, usize)) -> (usize, usize, usize) {
    blocks.iter().fold(shape, |(c, h, w), b| match b {
        Block::Conv(conv) => {
            let (ho, wo) = conv.out_hw(h, w);
            (conv.out_c, ho, wo)
        }
        Block::Affine(_) | Block::Relu => (c, h, w),
        Block::MaxPool(p) => (c, out_len(h, p.kernel, p.stride, p.pad), out_len(w, p.kernel, p.stride, p.pad)),
        Block::AvgPool(k) => (c, h / k, w / k),
        Block::GlobalAvgPool => (c, 1, 1),
        Block::Residual { main, .. } => output_shape(main, (c, h, w)),
    })
}
