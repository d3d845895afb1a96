//! Dense, conv2d, max-pool and pointwise layers with exact backward passes.
//!
//! Layouts: dense input `[n, in]` (or `[in]`), weight `[out, in]`; conv input
//! `[c, h, w]`, weight `[c_out, c_in, k, k]` with zero "same" padding and
//! stride 1; max-pool windows are `p x p` with stride `p`.

use super::tensor::Tensor;
use super::LearnError;

fn shape_err(what: &str, detail: String) -> LearnError {
    LearnError::Shape(format!("{what}: {detail}"))
}

pub struct DenseGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Tensor,
}

fn dense_dims(x: &Tensor, w: &Tensor) -> Result<(usize, usize, usize), LearnError> {
    if w.rank() != 2 {
        return Err(shape_err("dense", format!("weight rank {} (want 2)", w.rank())));
    }
    let (out, inp) = (w.shape()[0], w.shape()[1]);
    let rows = match x.shape() {
        [i] if *i == inp => 1,
        [n, i] if *i == inp => *n,
        s => {
            return Err(shape_err(
                "dense",
                format!("input shape {s:?} incompatible with in_features={inp}"),
            ))
        }
    };
    Ok((rows, inp, out))
}

pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, LearnError> {
    let (rows, inp, out) = dense_dims(x, w)?;
    if b.shape() != [out] {
        return Err(shape_err("dense", format!("bias shape {:?}, out_features={out}", b.shape())));
    }
    let mut y = vec![0.0; rows * out];
    for r in 0..rows {
        let xr = &x.data()[r * inp..(r + 1) * inp];
        for (j, yj) in y[r * out..(r + 1) * out].iter_mut().enumerate() {
            let wj = &w.data()[j * inp..(j + 1) * inp];
            *yj = b.data()[j] + dot(wj, xr);
        }
    }
    let shape = if x.rank() == 1 { vec![out] } else { vec![rows, out] };
    Ok(Tensor::new(shape, y))
}

pub fn dense_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<DenseGrads, LearnError> {
    let (rows, inp, out) = dense_dims(x, w)?;
    if dy.len() != rows * out {
        return Err(shape_err("dense backward", format!("upstream len {} want {}", dy.len(), rows * out)));
    }
    let mut dx = vec![0.0; rows * inp];
    let mut dw = vec![0.0; out * inp];
    let mut db = vec![0.0; out];
    for r in 0..rows {
        let xr = &x.data()[r * inp..(r + 1) * inp];
        let dxr = &mut dx[r * inp..(r + 1) * inp];
        for j in 0..out {
            let g = dy.data()[r * out + j];
            if g == 0.0 {
                continue;
            }
            db[j] += g;
            let wj = &w.data()[j * inp..(j + 1) * inp];
            axpy(g, xr, &mut dw[j * inp..(j + 1) * inp]);
            axpy(g, wj, dxr);
        }
    }
    Ok(DenseGrads {
        dx: Tensor::new(x.shape().to_vec(), dx),
        dw: Tensor::new(vec![out, inp], dw),
        db: Tensor::new(vec![out], db),
    })
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

struct ConvDims {
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    k: usize,
}

fn conv_dims(x: &Tensor, w: &Tensor) -> Result<ConvDims, LearnError> {
    let [c_in, h, wd] = x.shape() else {
        return Err(shape_err("conv2d", format!("input shape {:?} (want [c, h, w])", x.shape())));
    };
    let [c_out, wc_in, k, k2] = w.shape() else {
        return Err(shape_err("conv2d", format!("kernel shape {:?} (want [c_out, c_in, k, k])", w.shape())));
    };
    if wc_in != c_in {
        return Err(shape_err("conv2d", format!("kernel c_in={wc_in}, input channels={c_in}")));
    }
    if k != k2 || k % 2 == 0 {
        return Err(shape_err("conv2d", format!("kernel must be square and odd, got {k}x{k2}")));
    }
    Ok(ConvDims {
        c_in: *c_in,
        c_out: *c_out,
        h: *h,
        w: *wd,
        k: *k,
    })
}

/// Valid output range along one axis for kernel offset `o` (0..k) with
/// padding `p`: output positions `y` such that `y + o - p` is in bounds.
#[inline]
fn valid_range(o: usize, p: usize, n: usize) -> (usize, usize) {
    let lo = p.saturating_sub(o);
    let hi = (n + p).saturating_sub(o).min(n);
    (lo.min(hi), hi)
}

pub fn conv2d_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, LearnError> {
    let d = conv_dims(x, w)?;
    if b.shape() != [d.c_out] {
        return Err(shape_err("conv2d", format!("bias shape {:?}, c_out={}", b.shape(), d.c_out)));
    }
    let (h, wd, k) = (d.h, d.w, d.k);
    let p = k / 2;
    let plane = h * wd;
    let mut y = vec![0.0; d.c_out * plane];
    let xd = x.data();
    let kd = w.data();
    for co in 0..d.c_out {
        let yo = &mut y[co * plane..(co + 1) * plane];
        yo.iter_mut().for_each(|v| *v = b.data()[co]);
        for ci in 0..d.c_in {
            let xi = &xd[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                let (y0, y1) = valid_range(ky, p, h);
                for kx in 0..k {
                    let wv = kd[((co * d.c_in + ci) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (x0, x1) = valid_range(kx, p, wd);
                    if x0 == x1 {
                        continue;
                    }
                    for yy in y0..y1 {
                        let src_row = (yy + ky - p) * wd;
                        let dst = &mut yo[yy * wd + x0..yy * wd + x1];
                        let src = &xi[src_row + x0 + kx - p..src_row + x1 + kx - p];
                        axpy(wv, src, dst);
                    }
                }
            }
        }
    }
    Ok(Tensor::new(vec![d.c_out, h, wd], y))
}

pub struct ConvGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Tensor,
}

pub fn conv2d_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<ConvGrads, LearnError> {
    let d = conv_dims(x, w)?;
    let (h, wd, k) = (d.h, d.w, d.k);
    if dy.shape() != [d.c_out, h, wd] {
        return Err(shape_err("conv2d backward", format!("upstream shape {:?}", dy.shape())));
    }
    let p = k / 2;
    let plane = h * wd;
    let mut dx = vec![0.0; d.c_in * plane];
    let mut dw = vec![0.0; d.c_out * d.c_in * k * k];
    let mut db = vec![0.0; d.c_out];
    let xd = x.data();
    let kd = w.data();
    for (co, dbo) in db.iter_mut().enumerate() {
        let go = &dy.data()[co * plane..(co + 1) * plane];
        *dbo = go.iter().sum();
        for ci in 0..d.c_in {
            let xi = &xd[ci * plane..(ci + 1) * plane];
            let dxi = &mut dx[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                let (y0, y1) = valid_range(ky, p, h);
                for kx in 0..k {
                    let widx = ((co * d.c_in + ci) * k + ky) * k + kx;
                    let wv = kd[widx];
                    let (x0, x1) = valid_range(kx, p, wd);
                    if x0 == x1 {
                        continue;
                    }
                    let mut acc = 0.0;
                    for yy in y0..y1 {
                        let src_row = (yy + ky - p) * wd;
                        let g = &go[yy * wd + x0..yy * wd + x1];
                        let lo = src_row + x0 + kx - p;
                        let hi = src_row + x1 + kx - p;
                        acc += dot(g, &xi[lo..hi]);
                        if wv != 0.0 {
                            axpy(wv, g, &mut dxi[lo..hi]);
                        }
                    }
                    dw[widx] = acc;
                }
            }
        }
    }
    Ok(ConvGrads {
        dx: Tensor::new(x.shape().to_vec(), dx),
        dw: Tensor::new(w.shape().to_vec(), dw),
        db: Tensor::new(vec![d.c_out], db),
    })
}

/// Pooled output plus, per output cell, the flat input index of its maximum.
pub struct PoolOutput {
    pub y: Tensor,
    pub argmax: Vec<usize>,
}

/// `p x p` max-pool with stride `p`; trailing rows/cols that do not fill a
/// window are dropped. Ties go to the lowest flat index.
pub fn maxpool_forward(x: &Tensor, p: usize) -> Result<PoolOutput, LearnError> {
    let [c, h, w] = x.shape() else {
        return Err(shape_err("maxpool", format!("input shape {:?} (want [c, h, w])", x.shape())));
    };
    let (c, h, w) = (*c, *h, *w);
    if p == 0 || h < p || w < p {
        return Err(shape_err("maxpool", format!("window {p} larger than input {h}x{w}")));
    }
    let (oh, ow) = (h / p, w / p);
    let mut y = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    let xd = x.data();
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = usize::MAX;
                let mut best_v = f64::NEG_INFINITY;
                for dy in 0..p {
                    for dx in 0..p {
                        let idx = (ch * h + oy * p + dy) * w + ox * p + dx;
                        if best == usize::MAX || xd[idx] > best_v {
                            best = idx;
                            best_v = xd[idx];
                        }
                    }
                }
                y.push(best_v);
                argmax.push(best);
            }
        }
    }
    Ok(PoolOutput {
        y: Tensor::new(vec![c, oh, ow], y),
        argmax,
    })
}

pub fn maxpool_backward(input_shape: &[usize], argmax: &[usize], dy: &Tensor) -> Result<Tensor, LearnError> {
    if dy.len() != argmax.len() {
        return Err(shape_err("maxpool backward", format!("upstream len {} want {}", dy.len(), argmax.len())));
    }
    let n: usize = input_shape.iter().product();
    let mut dx = vec![0.0; n];
    for (&i, &g) in argmax.iter().zip(dy.data()) {
        dx[i] += g;
    }
    Ok(Tensor::new(input_shape.to_vec(), dx))
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor, LearnError> {
    if x.len() != dy.len() {
        return Err(shape_err("relu backward", format!("input len {} upstream len {}", x.len(), dy.len())));
    }
    let d = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Ok(Tensor::new(x.shape().to_vec(), d))
}

/// `ln(1 + e^x)`, overflow-safe.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Derivative of [`softplus`] (the logistic sigmoid).
pub fn softplus_grad(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
