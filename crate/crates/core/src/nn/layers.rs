//! Layer specifications, shape inference and the batched kernels.

use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Seq { channels: usize, length: usize },
    Flat(usize),
}

impl Shape {
    pub fn size(&self) -> usize {
        match *self {
            Shape::Seq { channels, length } => channels * length,
            Shape::Flat(n) => n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "function", rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Tanh,
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu { slope: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LayerSpec {
    #[serde(rename = "CONV1D")]
    Conv1d { filters: usize, kernel: usize, stride: usize },
    #[serde(rename = "MAXPOOL1D")]
    MaxPool1d { size: usize, stride: usize },
    #[serde(rename = "FLATTEN")]
    Flatten,
    #[serde(rename = "FULLY_CONNECTED")]
    FullyConnected { units: usize },
    #[serde(rename = "ACTIVATION")]
    Activation(Activation),
}

impl LayerSpec {
    pub fn conv(filters: usize, kernel: usize) -> Self {
        LayerSpec::Conv1d { filters, kernel, stride: 1 }
    }

    pub fn pool(size: usize, stride: usize) -> Self {
        LayerSpec::MaxPool1d { size, stride }
    }

    pub fn dense(units: usize) -> Self {
        LayerSpec::FullyConnected { units }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "CONV1D",
            LayerSpec::MaxPool1d { .. } => "MAXPOOL1D",
            LayerSpec::Flatten => "FLATTEN",
            LayerSpec::FullyConnected { .. } => "FULLY_CONNECTED",
            LayerSpec::Activation(_) => "ACTIVATION",
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape, NnError> {
        let bad = |m: String| Err(NnError::InvalidLayer(m));
        match (*self, input) {
            (LayerSpec::Conv1d { filters, kernel, stride }, Shape::Seq { length, .. }) => {
                if filters == 0 || kernel == 0 || stride == 0 {
                    return bad("conv parameters must be positive".into());
                }
                if length < kernel {
                    return bad(format!("conv kernel {kernel} longer than input length {length}"));
                }
                Ok(Shape::Seq {
                    channels: filters,
                    length: (length - kernel) / stride + 1,
                })
            }
            (LayerSpec::MaxPool1d { size, stride }, Shape::Seq { channels, length }) => {
                if size == 0 || stride == 0 {
                    return bad("pool parameters must be positive".into());
                }
                if length < size {
                    return bad(format!("pool size {size} longer than input length {length}"));
                }
                Ok(Shape::Seq {
                    channels,
                    length: (length - size) / stride + 1,
                })
            }
            (LayerSpec::Flatten, s) => Ok(Shape::Flat(s.size())),
            (LayerSpec::FullyConnected { units }, Shape::Flat(_)) => {
                if units == 0 {
                    return bad("dense layer needs at least one unit".into());
                }
                Ok(Shape::Flat(units))
            }
            (LayerSpec::Activation(_), s) => Ok(s),
            (spec, s) => bad(format!("{} cannot follow shape {s:?}", spec.kind_name())),
        }
    }

    /// (weight count, bias count, fan_in, fan_out) for Glorot initialization.
    pub(crate) fn param_layout(&self, input: Shape) -> (usize, usize, usize, usize) {
        match (*self, input) {
            (LayerSpec::Conv1d { filters, kernel, .. }, Shape::Seq { channels, .. }) => {
                (filters * channels * kernel, filters, channels * kernel, filters * kernel)
            }
            (LayerSpec::FullyConnected { units }, Shape::Flat(n)) => (units * n, units, n, units),
            _ => (0, 0, 0, 0),
        }
    }
}

/// C = alpha * A(m x k) * B(k x n) + beta * C with explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() > (m - 1) * rsc + (n - 1));
    // SAFETY: the debug assertions above state the extents the callers
    // guarantee; every index touched by dgemm lies inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

pub(crate) struct ConvGeom {
    pub in_channels: usize,
    pub in_length: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_length: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.in_channels * self.kernel
    }

    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        let t_out = self.out_length;
        for c in 0..self.in_channels {
            let xc = &x[c * self.in_length..(c + 1) * self.in_length];
            for j in 0..self.kernel {
                let row = &mut col[(c * self.kernel + j) * t_out..(c * self.kernel + j + 1) * t_out];
                if self.stride == 1 {
                    row.copy_from_slice(&xc[j..j + t_out]);
                } else {
                    for (t, r) in row.iter_mut().enumerate() {
                        *r = xc[t * self.stride + j];
                    }
                }
            }
        }
    }

    pub fn forward(&self, batch: usize, x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
        let (in_sz, out_sz) = (self.in_channels * self.in_length, self.filters * self.out_length);
        let rows = self.rows();
        let mut col = vec![0.0; rows * self.out_length];
        for s in 0..batch {
            self.im2col(&x[s * in_sz..(s + 1) * in_sz], &mut col);
            let o = &mut out[s * out_sz..(s + 1) * out_sz];
            for f in 0..self.filters {
                o[f * self.out_length..(f + 1) * self.out_length].fill(b[f]);
            }
            gemm(self.filters, rows, self.out_length, w, rows, 1, &col, self.out_length, 1, 1.0, o, self.out_length);
        }
    }

    /// Accumulates weight/bias gradients; writes the input gradient when asked.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        batch: usize,
        x: &[f64],
        w: &[f64],
        dout: &[f64],
        dw: &mut [f64],
        db: &mut [f64],
        dx: Option<&mut [f64]>,
    ) {
        let (in_sz, out_sz) = (self.in_channels * self.in_length, self.filters * self.out_length);
        let rows = self.rows();
        let t_out = self.out_length;
        let mut col = vec![0.0; rows * t_out];
        let mut dcol = vec![0.0; rows * t_out];
        let mut dx = dx;
        for s in 0..batch {
            let xs = &x[s * in_sz..(s + 1) * in_sz];
            let ds = &dout[s * out_sz..(s + 1) * out_sz];
            self.im2col(xs, &mut col);
            // dW (F x rows) += dOut (F x T) * col^T (T x rows)
            gemm(self.filters, t_out, rows, ds, t_out, 1, &col, 1, t_out, 1.0, dw, rows);
            for f in 0..self.filters {
                db[f] += ds[f * t_out..(f + 1) * t_out].iter().sum::<f64>();
            }
            if let Some(dx) = dx.as_deref_mut() {
                // dcol (rows x T) = W^T (rows x F) * dOut (F x T)
                gemm(rows, self.filters, t_out, w, 1, rows, ds, t_out, 1, 0.0, &mut dcol, t_out);
                let dxs = &mut dx[s * in_sz..(s + 1) * in_sz];
                dxs.fill(0.0);
                for c in 0..self.in_channels {
                    for j in 0..self.kernel {
                        let row = &dcol[(c * self.kernel + j) * t_out..(c * self.kernel + j + 1) * t_out];
                        let base = c * self.in_length + j;
                        for (t, &g) in row.iter().enumerate() {
                            dxs[base + t * self.stride] += g;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) struct PoolGeom {
    pub channels: usize,
    pub in_length: usize,
    pub size: usize,
    pub stride: usize,
    pub out_length: usize,
}

impl PoolGeom {
    /// Max over each window; ties resolve to the first position. `argmax`
    /// receives the winning index within the sample.
    pub fn forward(&self, batch: usize, x: &[f64], out: &mut [f64], argmax: &mut [u32]) {
        let (in_sz, out_sz) = (self.channels * self.in_length, self.channels * self.out_length);
        for s in 0..batch {
            let xs = &x[s * in_sz..(s + 1) * in_sz];
            for c in 0..self.channels {
                for t in 0..self.out_length {
                    let start = c * self.in_length + t * self.stride;
                    let mut best = start;
                    for i in start + 1..start + self.size {
                        if xs[i] > xs[best] {
                            best = i;
                        }
                    }
                    let o = s * out_sz + c * self.out_length + t;
                    out[o] = xs[best];
                    argmax[o] = best as u32;
                }
            }
        }
    }

    pub fn backward(&self, batch: usize, dout: &[f64], argmax: &[u32], dx: &mut [f64]) {
        let (in_sz, out_sz) = (self.channels * self.in_length, self.channels * self.out_length);
        dx.fill(0.0);
        for s in 0..batch {
            for o in 0..out_sz {
                dx[s * in_sz + argmax[s * out_sz + o] as usize] += dout[s * out_sz + o];
            }
        }
    }
}

pub(crate) fn dense_forward(batch: usize, n_in: usize, units: usize, x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    for s in 0..batch {
        out[s * units..(s + 1) * units].copy_from_slice(b);
    }
    // Y (B x units) += X (B x in) * W^T (in x units)
    gemm(batch, n_in, units, x, n_in, 1, w, 1, n_in, 1.0, out, units);
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward(
    batch: usize,
    n_in: usize,
    units: usize,
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    // dW (units x in) += dY^T (units x B) * X (B x in)
    gemm(units, batch, n_in, dout, 1, units, x, n_in, 1, 1.0, dw, n_in);
    for s in 0..batch {
        for (g, d) in db.iter_mut().zip(&dout[s * units..(s + 1) * units]) {
            *g += d;
        }
    }
    if let Some(dx) = dx {
        // dX (B x in) = dY (B x units) * W (units x in)
        gemm(batch, units, n_in, dout, units, 1, w, n_in, 1, 0.0, dx, n_in);
    }
}

pub(crate) fn activation_forward(act: Activation, x: &[f64], out: &mut [f64]) {
    match act {
        Activation::LeakyRelu { slope } => {
            for (o, &v) in out.iter_mut().zip(x) {
                *o = if v > 0.0 { v } else { slope * v };
            }
        }
        Activation::Tanh => {
            for (o, &v) in out.iter_mut().zip(x) {
                *o = v.tanh();
            }
        }
    }
}

pub(crate) fn activation_backward(act: Activation, x: &[f64], y: &[f64], dout: &[f64], dx: &mut [f64]) {
    match act {
        Activation::LeakyRelu { slope } => {
            for ((d, &v), &g) in dx.iter_mut().zip(x).zip(dout) {
                *d = if v > 0.0 { g } else { slope * g };
            }
        }
        Activation::Tanh => {
            for ((d, &t), &g) in dx.iter_mut().zip(y).zip(dout) {
                *d = g * (1.0 - t * t);
            }
        }
    }
}
