//! Slice-level forward/backward kernels. All loops run in a fixed order so
//! results are bit-reproducible.

use super::Real;

/// Output length of a strided, zero-padded correlation.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

pub fn conv1d_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    conv_out_len(len, kernel, stride, padding)
}

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn matmul_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Dot product with eight interleaved partial sums combined in a fixed
/// order, so it vectorizes and stays reproducible.
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `out[m×k] += g[m×n] · bᵀ` where `b` is `k×n`.
pub(crate) fn matmul_a_bt_acc<T: Real>(g: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] += dot(grow, &b[p * n..(p + 1) * n]);
        }
    }
}

/// `out[k×n] += aᵀ · g` where `a` is `m×k` and `g` is `m×n`.
pub(crate) fn matmul_at_b_acc<T: Real>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

/// Range of output positions `t` for which `t*stride + k - padding` lands in `0..len`.
fn valid_range(len: usize, out_len: usize, k: usize, stride: usize, padding: usize) -> (usize, usize) {
    let lo = if padding > k { (padding - k).div_ceil(stride) } else { 0 };
    // largest t with t*stride + k - padding <= len - 1
    let hi = if len + padding < k + 1 { 0 } else { (len + padding - k - 1) / stride + 1 };
    (lo.min(out_len), hi.min(out_len))
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv1dDims {
    pub c_in: usize,
    pub len: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_len: usize,
}

/// Unfolds `x` into a `(c_in·kernel) × out_len` matrix of receptive fields.
fn im2col_1d<T: Real>(x: &[T], d: Conv1dDims) -> Vec<T> {
    let mut cols = vec![T::zero(); d.c_in * d.kernel * d.out_len];
    for c in 0..d.c_in {
        let xrow = &x[c * d.len..(c + 1) * d.len];
        for k in 0..d.kernel {
            let row = &mut cols[(c * d.kernel + k) * d.out_len..(c * d.kernel + k + 1) * d.out_len];
            let (lo, hi) = valid_range(d.len, d.out_len, k, d.stride, d.padding);
            if lo >= hi {
                continue;
            }
            if d.stride == 1 {
                let s = lo + k - d.padding;
                row[lo..hi].copy_from_slice(&xrow[s..s + hi - lo]);
            } else {
                for t in lo..hi {
                    row[t] = xrow[t * d.stride + k - d.padding];
                }
            }
        }
    }
    cols
}

fn col2im_1d<T: Real>(cols: &[T], d: Conv1dDims, dx: &mut [T]) {
    for c in 0..d.c_in {
        let dxrow = &mut dx[c * d.len..(c + 1) * d.len];
        for k in 0..d.kernel {
            let row = &cols[(c * d.kernel + k) * d.out_len..(c * d.kernel + k + 1) * d.out_len];
            let (lo, hi) = valid_range(d.len, d.out_len, k, d.stride, d.padding);
            for t in lo..hi {
                dxrow[t * d.stride + k - d.padding] += row[t];
            }
        }
    }
}

pub(crate) fn conv1d_forward<T: Real>(x: &[T], w: &[T], b: &[T], d: Conv1dDims) -> Vec<T> {
    let cols = im2col_1d(x, d);
    let mut out = Vec::with_capacity(d.c_out * d.out_len);
    for &bo in &b[..d.c_out] {
        out.extend(std::iter::repeat_n(bo, d.out_len));
    }
    matmul_acc(w, &cols, &mut out, d.c_out, d.c_in * d.kernel, d.out_len);
    out
}

pub(crate) fn conv1d_backward<T: Real>(
    x: &[T],
    w: &[T],
    g: &[T],
    d: Conv1dDims,
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    if let Some(db) = db {
        for o in 0..d.c_out {
            db[o] += g[o * d.out_len..(o + 1) * d.out_len].iter().fold(T::zero(), |a, &b| a + b);
        }
    }
    let ck = d.c_in * d.kernel;
    if let Some(dw) = dw {
        let cols = im2col_1d(x, d);
        matmul_a_bt_acc(g, &cols, dw, d.c_out, ck, d.out_len);
    }
    if let Some(dx) = dx {
        let mut dcols = vec![T::zero(); ck * d.out_len];
        matmul_at_b_acc(w, g, &mut dcols, d.c_out, ck, d.out_len);
        col2im_1d(&dcols, d, dx);
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv2dDims {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub out_h: usize,
    pub out_w: usize,
}

fn im2col_2d<T: Real>(x: &[T], d: Conv2dDims) -> Vec<T> {
    let (sh, sw) = d.stride;
    let (ph, pw) = d.padding;
    let plane = d.out_h * d.out_w;
    let mut cols = vec![T::zero(); d.c_in * d.kh * d.kw * plane];
    for c in 0..d.c_in {
        let xplane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for i in 0..d.kh {
            let (ylo, yhi) = valid_range(d.h, d.out_h, i, sh, ph);
            for j in 0..d.kw {
                let (xlo, xhi) = valid_range(d.w, d.out_w, j, sw, pw);
                let r = (c * d.kh + i) * d.kw + j;
                let row = &mut cols[r * plane..(r + 1) * plane];
                for oy in ylo..yhi {
                    let iy = oy * sh + i - ph;
                    let xrow = &xplane[iy * d.w..(iy + 1) * d.w];
                    let orow = &mut row[oy * d.out_w..(oy + 1) * d.out_w];
                    for ox in xlo..xhi {
                        orow[ox] = xrow[ox * sw + j - pw];
                    }
                }
            }
        }
    }
    cols
}

fn col2im_2d<T: Real>(cols: &[T], d: Conv2dDims, dx: &mut [T]) {
    let (sh, sw) = d.stride;
    let (ph, pw) = d.padding;
    let plane = d.out_h * d.out_w;
    for c in 0..d.c_in {
        let xplane = &mut dx[c * d.h * d.w..(c + 1) * d.h * d.w];
        for i in 0..d.kh {
            let (ylo, yhi) = valid_range(d.h, d.out_h, i, sh, ph);
            for j in 0..d.kw {
                let (xlo, xhi) = valid_range(d.w, d.out_w, j, sw, pw);
                let r = (c * d.kh + i) * d.kw + j;
                let row = &cols[r * plane..(r + 1) * plane];
                for oy in ylo..yhi {
                    let iy = oy * sh + i - ph;
                    for ox in xlo..xhi {
                        xplane[iy * d.w + ox * sw + j - pw] += row[oy * d.out_w + ox];
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Real>(x: &[T], w: &[T], b: &[T], d: Conv2dDims) -> Vec<T> {
    let plane = d.out_h * d.out_w;
    let cols = im2col_2d(x, d);
    let mut out = Vec::with_capacity(d.c_out * plane);
    for &bo in &b[..d.c_out] {
        out.extend(std::iter::repeat_n(bo, plane));
    }
    matmul_acc(w, &cols, &mut out, d.c_out, d.c_in * d.kh * d.kw, plane);
    out
}

pub(crate) fn conv2d_backward<T: Real>(
    x: &[T],
    w: &[T],
    g: &[T],
    d: Conv2dDims,
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let plane = d.out_h * d.out_w;
    if let Some(db) = db {
        for o in 0..d.c_out {
            db[o] += g[o * plane..(o + 1) * plane].iter().fold(T::zero(), |a, &b| a + b);
        }
    }
    let ck = d.c_in * d.kh * d.kw;
    if let Some(dw) = dw {
        let cols = im2col_2d(x, d);
        matmul_a_bt_acc(g, &cols, dw, d.c_out, ck, plane);
    }
    if let Some(dx) = dx {
        let mut dcols = vec![T::zero(); ck * plane];
        matmul_at_b_acc(w, g, &mut dcols, d.c_out, ck, plane);
        col2im_2d(&dcols, d, dx);
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct GruDims {
    pub steps: usize,
    pub input: usize,
    pub hidden: usize,
}

/// Saved activations of one GRU layer over a sequence, each `steps × hidden`.
#[derive(Clone, Debug, Default)]
pub(crate) struct GruCache<T> {
    pub z: Vec<T>,
    pub r: Vec<T>,
    pub n: Vec<T>,
    /// `U_n h_{t-1} + b_un`, the hidden-side candidate pre-activation.
    pub hn: Vec<T>,
}

/// Runs one GRU layer. Weight layout is `input × 3H` and `H × 3H` with gate
/// column blocks ordered `[z | r | n]`.
pub(crate) fn gru_forward<T: Real>(
    x: &[T],
    h0: &[T],
    w_ih: &[T],
    w_hh: &[T],
    b_ih: &[T],
    b_hh: &[T],
    d: GruDims,
) -> (Vec<T>, GruCache<T>) {
    let h = d.hidden;
    let g3 = 3 * h;
    let mut ax = vec![T::zero(); d.steps * g3];
    for t in 0..d.steps {
        ax[t * g3..(t + 1) * g3].copy_from_slice(b_ih);
    }
    matmul_acc(x, w_ih, &mut ax, d.steps, d.input, g3);

    let mut out = vec![T::zero(); d.steps * h];
    let mut cache = GruCache {
        z: vec![T::zero(); d.steps * h],
        r: vec![T::zero(); d.steps * h],
        n: vec![T::zero(); d.steps * h],
        hn: vec![T::zero(); d.steps * h],
    };
    let mut ah = vec![T::zero(); g3];
    for t in 0..d.steps {
        ah.copy_from_slice(b_hh);
        {
            let prev: &[T] = if t == 0 { h0 } else { &out[(t - 1) * h..t * h] };
            matmul_acc(prev, w_hh, &mut ah, 1, h, g3);
        }
        let axt = &ax[t * g3..(t + 1) * g3];
        for j in 0..h {
            let prev = if t == 0 { h0[j] } else { out[(t - 1) * h + j] };
            let z = sigmoid(axt[j] + ah[j]);
            let r = sigmoid(axt[h + j] + ah[h + j]);
            let hn = ah[2 * h + j];
            let n = (axt[2 * h + j] + r * hn).tanh();
            let i = t * h + j;
            cache.z[i] = z;
            cache.r[i] = r;
            cache.n[i] = n;
            cache.hn[i] = hn;
            out[i] = (T::one() - z) * n + z * prev;
        }
    }
    (out, cache)
}

pub(crate) struct GruGrads<T> {
    pub dx: Vec<T>,
    pub dh0: Vec<T>,
    pub dw_ih: Vec<T>,
    pub dw_hh: Vec<T>,
    pub db_ih: Vec<T>,
    pub db_hh: Vec<T>,
}

/// Backpropagation through time for [`gru_forward`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn gru_backward<T: Real>(
    x: &[T],
    h0: &[T],
    w_ih: &[T],
    w_hh: &[T],
    out: &[T],
    cache: &GruCache<T>,
    g_out: &[T],
    d: GruDims,
) -> GruGrads<T> {
    let h = d.hidden;
    let g3 = 3 * h;
    let mut gx = vec![T::zero(); d.steps * g3];
    let mut gh = vec![T::zero(); g3];
    let mut dw_hh = vec![T::zero(); h * g3];
    let mut db_hh = vec![T::zero(); g3];
    let mut dh_next = vec![T::zero(); h];
    let mut dh = vec![T::zero(); h];
    for t in (0..d.steps).rev() {
        for j in 0..h {
            dh[j] = g_out[t * h + j] + dh_next[j];
        }
        let prev: &[T] = if t == 0 { h0 } else { &out[(t - 1) * h..t * h] };
        for j in 0..h {
            let i = t * h + j;
            let (z, r, n, hn) = (cache.z[i], cache.r[i], cache.n[i], cache.hn[i]);
            let dn = dh[j] * (T::one() - z);
            let dz = dh[j] * (prev[j] - n);
            let dn_pre = dn * (T::one() - n * n);
            let dz_pre = dz * z * (T::one() - z);
            let dr_pre = dn_pre * hn * r * (T::one() - r);
            gx[t * g3 + j] = dz_pre;
            gx[t * g3 + h + j] = dr_pre;
            gx[t * g3 + 2 * h + j] = dn_pre;
            gh[j] = dz_pre;
            gh[h + j] = dr_pre;
            gh[2 * h + j] = dn_pre * r;
            dh_next[j] = dh[j] * z;
        }
        matmul_at_b_acc(prev, &gh, &mut dw_hh, 1, h, g3);
        for (a, &b) in db_hh.iter_mut().zip(&gh) {
            *a += b;
        }
        matmul_a_bt_acc(&gh, w_hh, &mut dh_next, 1, h, g3);
    }
    let mut dw_ih = vec![T::zero(); d.input * g3];
    matmul_at_b_acc(x, &gx, &mut dw_ih, d.steps, d.input, g3);
    let mut db_ih = vec![T::zero(); g3];
    for t in 0..d.steps {
        for (a, &b) in db_ih.iter_mut().zip(&gx[t * g3..(t + 1) * g3]) {
            *a += b;
        }
    }
    let mut dx = vec![T::zero(); d.steps * d.input];
    matmul_a_bt_acc(&gx, w_ih, &mut dx, d.steps, d.input, g3);
    GruGrads { dx, dh0: dh_next, dw_ih, dw_hh, db_ih, db_hh }
}
