//! Raw numeric kernels shared by the taped graph and the tape-free
//! inference path. Every reduction runs in a fixed order so repeated calls
//! are bit-identical.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Symmetric zero padding of `(k - 1) / 2`; output is `ceil(n / stride)`.
    Same,
    /// No padding; output is `floor((n - k) / stride) + 1`.
    Valid,
}

/// Resolved geometry of one convolution call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub f: usize,
    pub t: usize,
    pub cout: usize,
    pub kf: usize,
    pub kt: usize,
    pub sf: usize,
    pub st: usize,
    pub pf: usize,
    pub pt: usize,
    pub fo: usize,
    pub to: usize,
}

impl ConvGeom {
    pub fn new(
        input: &[usize],
        weight: &[usize],
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Self> {
        let (batch, cin, f, t) = match input[..] {
            [b, c, f, t] => (b, c, f, t),
            _ => return Err(Error::dim("input rank", format!("{:?} is not 4-D", input))),
        };
        let (cout, wcin, kf, kt) = match weight[..] {
            [o, i, kf, kt] => (o, i, kf, kt),
            _ => return Err(Error::dim("weight rank", format!("{:?} is not 4-D", weight))),
        };
        if wcin != cin {
            return Err(Error::dim(
                "channels",
                format!("input has {} channels, kernel expects {}", cin, wcin),
            ));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::Contract("stride must be at least 1".into()));
        }
        if kf == 0 || kt == 0 {
            return Err(Error::dim("kernel", "kernel sizes must be positive"));
        }
        let (pf, pt, fo, to) = match padding {
            Padding::Same => {
                if kf % 2 == 0 {
                    return Err(Error::dim("frequency", format!("same padding needs an odd kernel, got {}", kf)));
                }
                if kt % 2 == 0 {
                    return Err(Error::dim("time", format!("same padding needs an odd kernel, got {}", kt)));
                }
                (
                    (kf - 1) / 2,
                    (kt - 1) / 2,
                    f.div_ceil(stride.0),
                    t.div_ceil(stride.1),
                )
            }
            Padding::Valid => {
                if f < kf {
                    return Err(Error::dim("frequency", format!("input {} smaller than kernel {}", f, kf)));
                }
                if t < kt {
                    return Err(Error::dim("time", format!("input {} smaller than kernel {}", t, kt)));
                }
                (0, 0, (f - kf) / stride.0 + 1, (t - kt) / stride.1 + 1)
            }
        };
        if f == 0 || t == 0 {
            return Err(Error::dim("spatial", "empty input map"));
        }
        Ok(ConvGeom {
            batch,
            cin,
            f,
            t,
            cout,
            kf,
            kt,
            sf: stride.0,
            st: stride.1,
            pf,
            pt,
            fo,
            to,
        })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.batch, self.cout, self.fo, self.to]
    }

    fn patch(&self) -> usize {
        self.cin * self.kf * self.kt
    }

    fn positions(&self) -> usize {
        self.fo * self.to
    }

    fn is_pointwise(&self) -> bool {
        self.kf == 1 && self.kt == 1 && self.sf == 1 && self.st == 1
    }
}

fn im2col(g: &ConvGeom, x: &[f64], cols: &mut [f64]) {
    let p = g.positions();
    for ci in 0..g.cin {
        let plane = &x[ci * g.f * g.t..(ci + 1) * g.f * g.t];
        for i in 0..g.kf {
            for j in 0..g.kt {
                let row = (ci * g.kf + i) * g.kt + j;
                let dst = &mut cols[row * p..(row + 1) * p];
                for of in 0..g.fo {
                    let fi = (of * g.sf + i) as isize - g.pf as isize;
                    let out_row = &mut dst[of * g.to..(of + 1) * g.to];
                    if fi < 0 || fi >= g.f as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[fi as usize * g.t..(fi as usize + 1) * g.t];
                    for (ot, o) in out_row.iter_mut().enumerate() {
                        let ti = (ot * g.st + j) as isize - g.pt as isize;
                        *o = if ti < 0 || ti >= g.t as isize {
                            0.0
                        } else {
                            src[ti as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeom, cols: &[f64], dx: &mut [f64]) {
    let p = g.positions();
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.f * g.t..(ci + 1) * g.f * g.t];
        for i in 0..g.kf {
            for j in 0..g.kt {
                let row = (ci * g.kf + i) * g.kt + j;
                let src = &cols[row * p..(row + 1) * p];
                for of in 0..g.fo {
                    let fi = (of * g.sf + i) as isize - g.pf as isize;
                    if fi < 0 || fi >= g.f as isize {
                        continue;
                    }
                    let dst = &mut plane[fi as usize * g.t..(fi as usize + 1) * g.t];
                    for ot in 0..g.to {
                        let ti = (ot * g.st + j) as isize - g.pt as isize;
                        if ti >= 0 && ti < g.t as isize {
                            dst[ti as usize] += src[of * g.to + ot];
                        }
                    }
                }
            }
        }
    }
}

/// `c[m x n] = alpha * a[m x k] * b[k x n] + beta * c`, with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the callers size every buffer to cover the strided extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Cross-correlation of `x` with `w`, plus an optional per-channel bias.
pub fn conv2d_forward(g: &ConvGeom, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (ck, p) = (g.patch(), g.positions());
    let in_per = g.cin * g.f * g.t;
    let out_per = g.cout * p;
    let mut out = vec![0.0; g.batch * out_per];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; ck * p] };
    for b in 0..g.batch {
        let xb = &x[b * in_per..(b + 1) * in_per];
        let ob = &mut out[b * out_per..(b + 1) * out_per];
        if let Some(bias) = bias {
            for (co, chunk) in ob.chunks_mut(p).enumerate() {
                chunk.fill(bias[co]);
            }
        }
        let src: &[f64] = if g.is_pointwise() {
            xb
        } else {
            im2col(g, xb, &mut cols);
            &cols
        };
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        gemm(g.cout, ck, p, w, (ck as isize, 1), src, (p as isize, 1), beta, ob);
    }
    out
}

/// Gradients of a convolution. Returns `(dx, dw, db)`, computing only the
/// requested ones.
pub fn conv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
    let (ck, p) = (g.patch(), g.positions());
    let in_per = g.cin * g.f * g.t;
    let out_per = g.cout * p;
    let mut dx = need_dx.then(|| vec![0.0; g.batch * in_per]);
    let mut dw = need_dw.then(|| vec![0.0; g.cout * ck]);
    let mut db = need_db.then(|| vec![0.0; g.cout]);
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { vec![0.0; ck * p] };
    let mut dcols = if need_dx && !pointwise { vec![0.0; ck * p] } else { Vec::new() };
    for b in 0..g.batch {
        let xb = &x[b * in_per..(b + 1) * in_per];
        let dyb = &dy[b * out_per..(b + 1) * out_per];
        if let Some(db) = db.as_mut() {
            for (co, chunk) in dyb.chunks(p).enumerate() {
                db[co] += chunk.iter().sum::<f64>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            let src: &[f64] = if pointwise {
                xb
            } else {
                im2col(g, xb, &mut cols);
                &cols
            };
            // dW += dY * cols^T
            gemm(g.cout, p, ck, dyb, (p as isize, 1), src, (1, p as isize), 1.0, dw);
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_per..(b + 1) * in_per];
            if pointwise {
                gemm(ck, g.cout, p, w, (1, ck as isize), dyb, (p as isize, 1), 0.0, dxb);
            } else {
                // dcols = W^T * dY
                gemm(ck, g.cout, p, w, (1, ck as isize), dyb, (p as isize, 1), 0.0, &mut dcols);
                col2im(g, &dcols, dxb);
            }
        }
    }
    (dx, dw, db)
}

/// 2x2 max pooling with stride 2; a trailing odd row/column is discarded.
/// Returns the pooled values and, per output, the flat input index of the
/// window maximum (first index wins ties in row-major order).
pub fn maxpool2x2_forward(shape: &[usize], x: &[f64]) -> Result<(Vec<usize>, Vec<f64>, Vec<usize>)> {
    let (b, c, f, t) = match shape[..] {
        [b, c, f, t] => (b, c, f, t),
        _ => return Err(Error::dim("input rank", format!("{:?} is not 4-D", shape))),
    };
    if f < 2 {
        return Err(Error::dim("frequency", format!("max pooling needs at least 2 rows, got {}", f)));
    }
    if t < 2 {
        return Err(Error::dim("time", format!("max pooling needs at least 2 columns, got {}", t)));
    }
    let (fo, to) = (f / 2, t / 2);
    let mut out = Vec::with_capacity(b * c * fo * to);
    let mut arg = Vec::with_capacity(b * c * fo * to);
    for plane in 0..b * c {
        let base = plane * f * t;
        for of in 0..fo {
            for ot in 0..to {
                let mut best = base + 2 * of * t + 2 * ot;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * of + di) * t + 2 * ot + dj;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    Ok((vec![b, c, fo, to], out, arg))
}

pub fn global_mean_pool_forward(shape: &[usize], x: &[f64]) -> Result<(Vec<usize>, Vec<f64>)> {
    let (b, c, f, t) = match shape[..] {
        [b, c, f, t] => (b, c, f, t),
        _ => return Err(Error::dim("input rank", format!("{:?} is not 4-D", shape))),
    };
    if f * t == 0 {
        return Err(Error::dim("spatial", "global mean pooling over an empty map"));
    }
    let n = (f * t) as f64;
    let out = x.chunks(f * t).map(|p| p.iter().sum::<f64>() / n).collect();
    Ok((vec![b, c], out))
}

/// Per-channel statistics over (batch, frequency, time).
pub fn channel_stats(shape: &[usize], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (b, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    let n = (b * hw) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for bi in 0..b {
            let off = (bi * c + ch) * hw;
            s += x[off..off + hw].iter().sum::<f64>();
        }
        let m = s / n;
        let mut v = 0.0;
        for bi in 0..b {
            let off = (bi * c + ch) * hw;
            v += x[off..off + hw].iter().map(|&z| (z - m) * (z - m)).sum::<f64>();
        }
        mean[ch] = m;
        var[ch] = v / n;
    }
    (mean, var)
}

/// Applies `y = scale[c] * x + shift[c]` per channel.
pub fn channel_affine(shape: &[usize], x: &[f64], scale: &[f64], shift: &[f64]) -> Vec<f64> {
    let (c, hw) = (shape[1], shape[2] * shape[3]);
    let mut out = Vec::with_capacity(x.len());
    for (i, chunk) in x.chunks(hw).enumerate() {
        let ch = i % c;
        out.extend(chunk.iter().map(|&v| scale[ch] * v + shift[ch]));
    }
    out
}

/// Batch-norm in evaluation mode, expressed as a per-channel affine map.
pub fn bn_eval_coeffs(gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64], eps: f64) -> (Vec<f64>, Vec<f64>) {
    let scale: Vec<f64> = gamma
        .iter()
        .zip(var)
        .map(|(g, v)| g / (v + eps).sqrt())
        .collect();
    let shift = beta
        .iter()
        .zip(mean)
        .zip(&scale)
        .map(|((b, m), s)| b - m * s)
        .collect();
    (scale, shift)
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Row-wise log-softmax of a (rows x classes) matrix.
pub fn log_softmax(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|v| v - lse));
    }
    out
}
