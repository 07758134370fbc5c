//! Raw slice kernels behind the tensor ops. Every loop has a fixed summation
//! order so forward and backward passes are bit-reproducible.

#[inline]
fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `[cin x len] * [cout x cin x 3] -> [cout x len]`, stride 1, zero padding 1.
pub fn conv1d_forward(x: &[f64], cin: usize, len: usize, k: &[f64], cout: usize) -> Vec<f64> {
    let mut out = vec![0.0; cout * len];
    for o in 0..cout {
        let out_o = &mut out[o * len..(o + 1) * len];
        for c in 0..cin {
            let xc = &x[c * len..(c + 1) * len];
            let w = &k[(o * cin + c) * 3..(o * cin + c) * 3 + 3];
            if len > 1 {
                axpy(&mut out_o[1..], w[0], &xc[..len - 1]);
            }
            axpy(out_o, w[1], xc);
            if len > 1 {
                axpy(&mut out_o[..len - 1], w[2], &xc[1..]);
            }
        }
    }
    out
}

/// Returns `(dx, dk)` for [`conv1d_forward`].
pub fn conv1d_backward(
    x: &[f64],
    cin: usize,
    len: usize,
    k: &[f64],
    cout: usize,
    dout: &[f64],
    need_dx: bool,
) -> (Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; if need_dx { cin * len } else { 0 }];
    let mut dk = vec![0.0; k.len()];
    for o in 0..cout {
        let g = &dout[o * len..(o + 1) * len];
        for c in 0..cin {
            let base = (o * cin + c) * 3;
            let w = &k[base..base + 3];
            let xc = &x[c * len..(c + 1) * len];
            if len > 1 {
                dk[base] += dot(&g[1..], &xc[..len - 1]);
                dk[base + 2] += dot(&g[..len - 1], &xc[1..]);
            }
            dk[base + 1] += dot(g, xc);
            if need_dx {
                let dxc = &mut dx[c * len..(c + 1) * len];
                if len > 1 {
                    axpy(&mut dxc[..len - 1], w[0], &g[1..]);
                }
                axpy(dxc, w[1], g);
                if len > 1 {
                    axpy(&mut dxc[1..], w[2], &g[..len - 1]);
                }
            }
        }
    }
    (dx, dk)
}

/// Row/column ranges for a 3x3 tap at offset `d` in {-1, 0, 1} over an axis
/// of size `n`: output indices `lo..hi` read input indices `lo+d..hi+d`.
#[inline]
fn tap_range(d: isize, n: usize) -> (usize, usize) {
    match d {
        -1 => (1, n),
        0 => (0, n),
        _ => (0, n.saturating_sub(1)),
    }
}

/// `[cin x h x w] * [cout x cin x 3 x 3] -> [cout x h x w]`, stride 1, zero padding 1.
pub fn conv2d_forward(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    k: &[f64],
    cout: usize,
) -> Vec<f64> {
    let plane = h * w;
    let mut out = vec![0.0; cout * plane];
    for o in 0..cout {
        let out_o = &mut out[o * plane..(o + 1) * plane];
        for c in 0..cin {
            let xc = &x[c * plane..(c + 1) * plane];
            let kb = (o * cin + c) * 9;
            for a in 0..3 {
                let dr = a as isize - 1;
                let (r0, r1) = tap_range(dr, h);
                for b in 0..3 {
                    let dc = b as isize - 1;
                    let (c0, c1) = tap_range(dc, w);
                    let s = k[kb + a * 3 + b];
                    if c0 >= c1 {
                        continue;
                    }
                    for r in r0..r1 {
                        let sr = (r as isize + dr) as usize;
                        let sc0 = (c0 as isize + dc) as usize;
                        axpy(
                            &mut out_o[r * w + c0..r * w + c1],
                            s,
                            &xc[sr * w + sc0..sr * w + sc0 + (c1 - c0)],
                        );
                    }
                }
            }
        }
    }
    out
}

/// Returns `(dx, dk)` for [`conv2d_forward`].
pub fn conv2d_backward(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    k: &[f64],
    cout: usize,
    dout: &[f64],
    need_dx: bool,
) -> (Vec<f64>, Vec<f64>) {
    let plane = h * w;
    let mut dx = vec![0.0; if need_dx { cin * plane } else { 0 }];
    let mut dk = vec![0.0; k.len()];
    for o in 0..cout {
        let g = &dout[o * plane..(o + 1) * plane];
        for c in 0..cin {
            let xc = &x[c * plane..(c + 1) * plane];
            let dxc: &mut [f64] = if need_dx { &mut dx[c * plane..(c + 1) * plane] } else { &mut [] };
            let kb = (o * cin + c) * 9;
            for a in 0..3 {
                let dr = a as isize - 1;
                let (r0, r1) = tap_range(dr, h);
                for b in 0..3 {
                    let dc = b as isize - 1;
                    let (c0, c1) = tap_range(dc, w);
                    if c0 >= c1 {
                        continue;
                    }
                    let s = k[kb + a * 3 + b];
                    let mut acc = 0.0;
                    for r in r0..r1 {
                        let sr = (r as isize + dr) as usize;
                        let sc0 = (c0 as isize + dc) as usize;
                        let gr = &g[r * w + c0..r * w + c1];
                        let src = sr * w + sc0..sr * w + sc0 + (c1 - c0);
                        acc += dot(gr, &xc[src.clone()]);
                        if need_dx {
                            axpy(&mut dxc[src], s, gr);
                        }
                    }
                    dk[kb + a * 3 + b] += acc;
                }
            }
        }
    }
    (dx, dk)
}

/// Output length of the window-2 stride-2 pools; a length-1 axis passes through.
#[inline]
pub fn pooled_len(n: usize) -> usize {
    if n >= 2 {
        n / 2
    } else {
        n
    }
}

/// Max pool over `[channels x len]`. Returns the pooled values and, for each
/// output, the flat input index that supplied it (first index wins ties).
pub fn maxpool1d_forward(x: &[f64], channels: usize, len: usize) -> (Vec<f64>, Vec<usize>) {
    let out_len = pooled_len(len);
    let mut out = Vec::with_capacity(channels * out_len);
    let mut arg = Vec::with_capacity(channels * out_len);
    for c in 0..channels {
        let base = c * len;
        if len == 1 {
            out.push(x[base]);
            arg.push(base);
            continue;
        }
        for i in 0..out_len {
            let a = base + 2 * i;
            let (v, idx) = if x[a + 1] > x[a] { (x[a + 1], a + 1) } else { (x[a], a) };
            out.push(v);
            arg.push(idx);
        }
    }
    (out, arg)
}

/// Average pool over `[channels x h x w]` with 2x2 windows (a length-1 axis
/// uses a window of 1 on that axis). Trailing odd rows/columns are dropped.
pub fn avgpool2d_forward(x: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (pooled_len(h), pooled_len(w));
    let (wh, ww) = (if h >= 2 { 2 } else { 1 }, if w >= 2 { 2 } else { 1 });
    let scale = 1.0 / (wh * ww) as f64;
    let mut out = vec![0.0; channels * ho * wo];
    for c in 0..channels {
        let xc = &x[c * h * w..(c + 1) * h * w];
        for r in 0..ho {
            for q in 0..wo {
                let mut s = 0.0;
                for a in 0..wh {
                    for b in 0..ww {
                        s += xc[(r * wh + a) * w + q * ww + b];
                    }
                }
                out[(c * ho + r) * wo + q] = s * scale;
            }
        }
    }
    out
}

pub fn avgpool2d_backward(dout: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (pooled_len(h), pooled_len(w));
    let (wh, ww) = (if h >= 2 { 2 } else { 1 }, if w >= 2 { 2 } else { 1 });
    let scale = 1.0 / (wh * ww) as f64;
    let mut dx = vec![0.0; channels * h * w];
    for c in 0..channels {
        let dxc = &mut dx[c * h * w..(c + 1) * h * w];
        for r in 0..ho {
            for q in 0..wo {
                let g = dout[(c * ho + r) * wo + q] * scale;
                for a in 0..wh {
                    for b in 0..ww {
                        dxc[(r * wh + a) * w + q * ww + b] += g;
                    }
                }
            }
        }
    }
    dx
}

/// `[cin x s] -> [cout x s]` with `out[o] = sum_c w[o][c] * x[c] (+ b[o])`.
pub fn channel_mix_forward(
    x: &[f64],
    cin: usize,
    s: usize,
    wt: &[f64],
    cout: usize,
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let mut out = vec![0.0; cout * s];
    for o in 0..cout {
        let out_o = &mut out[o * s..(o + 1) * s];
        if let Some(b) = bias {
            out_o.iter_mut().for_each(|v| *v = b[o]);
        }
        for c in 0..cin {
            axpy(out_o, wt[o * cin + c], &x[c * s..(c + 1) * s]);
        }
    }
    out
}

/// Returns `(dx, dw, db)` for [`channel_mix_forward`].
pub fn channel_mix_backward(
    x: &[f64],
    cin: usize,
    s: usize,
    wt: &[f64],
    cout: usize,
    dout: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; cin * s];
    let mut dw = vec![0.0; cout * cin];
    let mut db = vec![0.0; cout];
    for o in 0..cout {
        let g = &dout[o * s..(o + 1) * s];
        db[o] = g.iter().sum();
        for c in 0..cin {
            let xc = &x[c * s..(c + 1) * s];
            dw[o * cin + c] = dot(g, xc);
            axpy(&mut dx[c * s..(c + 1) * s], wt[o * cin + c], g);
        }
    }
    (dx, dw, db)
}

/// `[n x in] * [out x in]^T + b -> [n x out]`.
pub fn affine_forward(x: &[f64], n: usize, din: usize, wt: &[f64], dout_dim: usize, b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * dout_dim];
    for r in 0..n {
        let xr = &x[r * din..(r + 1) * din];
        for o in 0..dout_dim {
            out[r * dout_dim + o] = dot(xr, &wt[o * din..(o + 1) * din]) + b[o];
        }
    }
    out
}

/// Returns `(dx, dw, db)` for [`affine_forward`].
pub fn affine_backward(
    x: &[f64],
    n: usize,
    din: usize,
    wt: &[f64],
    dout_dim: usize,
    g: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; n * din];
    let mut dw = vec![0.0; dout_dim * din];
    let mut db = vec![0.0; dout_dim];
    for r in 0..n {
        let xr = &x[r * din..(r + 1) * din];
        for o in 0..dout_dim {
            let go = g[r * dout_dim + o];
            db[o] += go;
            axpy(&mut dw[o * din..(o + 1) * din], go, xr);
            axpy(&mut dx[r * din..(r + 1) * din], go, &wt[o * din..(o + 1) * din]);
        }
    }
    (dx, dw, db)
}
