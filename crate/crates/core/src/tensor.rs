//! Dense row-major tensors and the differentiable building blocks of the
//! model: affine layers, same-length 1-D convolutions and SiLU.
//!
//! Every block has a hand-written backward pass. Backward functions take the
//! cached forward input and the upstream gradient and accumulate parameter
//! gradients into [`Param::grad`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(config_err!(
                "tensor shape {shape:?} needs {expected} elements, got {}",
                data.len()
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Samples every element uniformly from `[-bound, bound)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::lit(rng.random_range(-bound..bound)))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    /// Returns an error naming `what` if any element is NaN or infinite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite(format!("{what}[{i}] = {}", self.data[i]))),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::lit(x.to_f64())).collect(),
        }
    }

    fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.shape.len() != rank {
            return Err(config_err!(
                "{what} must have rank {rank}, got shape {:?}",
                self.shape
            ));
        }
        Ok(())
    }
}

/// A trainable tensor with its gradient and AdamW moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub state_m: Tensor<T>,
    pub state_v: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Param {
            grad: zeros.clone(),
            state_m: zeros.clone(),
            state_v: zeros,
            value,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Copies the value into another precision; gradient and moments restart at zero.
    pub fn cast<U: Real>(&self) -> Param<U> {
        Param::new(self.value.cast())
    }
}

/// `y = x·W + b` for `x: [batch, in]`, `W: [in, out]`, `b: [out]`.
pub fn linear_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    x.expect_rank(2, "linear input")?;
    w.expect_rank(2, "linear weight")?;
    b.expect_rank(1, "linear bias")?;
    let (batch, fan_in) = (x.shape[0], x.shape[1]);
    let (w_in, fan_out) = (w.shape[0], w.shape[1]);
    if w_in != fan_in || b.shape[0] != fan_out {
        return Err(config_err!(
            "linear shapes do not conform: x {:?}, W {:?}, b {:?}",
            x.shape,
            w.shape,
            b.shape
        ));
    }
    let mut y = Vec::with_capacity(batch * fan_out);
    for _ in 0..batch {
        y.extend_from_slice(&b.data);
    }
    if fan_out <= NARROW_OUT {
        narrow_matmul_acc(&x.data, &w.data, fan_in, fan_out, &mut y);
        return Ok(Tensor {
            shape: vec![batch, fan_out],
            data: y,
        });
    }
    T::gemm(
        batch, fan_in, fan_out, &x.data, false, &w.data, false, &mut y, true,
    );
    Ok(Tensor {
        shape: vec![batch, fan_out],
        data: y,
    })
}

const NARROW_OUT: usize = 4;

/// `y += x·w` for a few output columns, where blocked GEMM is inefficient.
fn narrow_matmul_acc<T: Real>(x: &[T], w: &[T], fan_in: usize, fan_out: usize, y: &mut [T]) {
    let wt: Vec<Vec<T>> = (0..fan_out)
        .map(|o| (0..fan_in).map(|i| w[i * fan_out + o]).collect())
        .collect();
    for (row, out) in x.chunks_exact(fan_in).zip(y.chunks_exact_mut(fan_out)) {
        for (o, col) in out.iter_mut().zip(&wt) {
            let mut acc = [T::zero(); 8];
            let mut rc = row.chunks_exact(8);
            let mut cc = col.chunks_exact(8);
            for (r8, c8) in (&mut rc).zip(&mut cc) {
                for l in 0..8 {
                    acc[l] = acc[l] + r8[l] * c8[l];
                }
            }
            let tail: T = rc
                .remainder()
                .iter()
                .zip(cc.remainder())
                .map(|(&a, &b)| a * b)
                .sum();
            *o = *o + acc.iter().copied().sum::<T>() + tail;
        }
    }
}

/// Gradients of [`linear_forward`]: accumulates into `dw`/`db`, returns `dx`
/// when requested.
pub fn linear_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    dw: &mut Tensor<T>,
    db: &mut Tensor<T>,
    want_dx: bool,
) -> Option<Tensor<T>> {
    let (batch, fan_in) = (x.shape[0], x.shape[1]);
    let fan_out = w.shape[1];
    debug_assert_eq!(dy.shape, [batch, fan_out]);
    T::gemm(
        fan_in,
        batch,
        fan_out,
        &x.data,
        true,
        &dy.data,
        false,
        &mut dw.data,
        true,
    );
    for row in dy.data.chunks_exact(fan_out) {
        for (g, &d) in db.data.iter_mut().zip(row) {
            *g = *g + d;
        }
    }
    want_dx.then(|| {
        let mut dx = vec![T::zero(); batch * fan_in];
        T::gemm(
            batch, fan_out, fan_in, &dy.data, false, &w.data, true, &mut dx, false,
        );
        Tensor {
            shape: vec![batch, fan_in],
            data: dx,
        }
    })
}

/// Same-length cross-correlation: `x: [ch_in, T]`, `kernels: [ch_out, ch_in, k]`
/// with odd `k` and `(k-1)/2` zeros of padding on each side.
pub fn conv1d_forward<T: Real>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Tensor<T>> {
    x.expect_rank(2, "conv input")?;
    kernels.expect_rank(3, "conv kernels")?;
    b.expect_rank(1, "conv bias")?;
    let (ch_in, len) = (x.shape[0], x.shape[1]);
    let (ch_out, k_in, k) = (kernels.shape[0], kernels.shape[1], kernels.shape[2]);
    if k % 2 == 0 {
        return Err(config_err!("conv kernel size must be odd, got {k}"));
    }
    if k_in != ch_in || b.shape[0] != ch_out {
        return Err(config_err!(
            "conv shapes do not conform: x {:?}, kernels {:?}, b {:?}",
            x.shape,
            kernels.shape,
            b.shape
        ));
    }
    let pad = (k - 1) / 2;
    let mut y = vec![T::zero(); ch_out * len];
    for o in 0..ch_out {
        let out = &mut y[o * len..(o + 1) * len];
        out.iter_mut().for_each(|v| *v = b.data[o]);
        for c in 0..ch_in {
            let xs = &x.data[c * len..(c + 1) * len];
            for j in 0..k {
                let w = kernels.data[(o * ch_in + c) * k + j];
                // out[t] += w * x[t + j - pad] for in-range reads
                let lo = pad.saturating_sub(j);
                let hi = (len + pad).saturating_sub(j).min(len);
                for t in lo..hi {
                    out[t] = out[t] + w * xs[t + j - pad];
                }
            }
        }
    }
    Ok(Tensor {
        shape: vec![ch_out, len],
        data: y,
    })
}

/// Gradients of [`conv1d_forward`]: accumulates into `dk`/`db`, returns `dx`
/// when requested.
pub fn conv1d_backward<T: Real>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    dy: &Tensor<T>,
    dk: &mut Tensor<T>,
    db: &mut Tensor<T>,
    want_dx: bool,
) -> Option<Tensor<T>> {
    let (ch_in, len) = (x.shape[0], x.shape[1]);
    let (ch_out, k) = (kernels.shape[0], kernels.shape[2]);
    let pad = (k - 1) / 2;
    let mut dx = want_dx.then(|| vec![T::zero(); ch_in * len]);
    for o in 0..ch_out {
        let g = &dy.data[o * len..(o + 1) * len];
        db.data[o] = db.data[o] + g.iter().copied().sum::<T>();
        for c in 0..ch_in {
            let xs = &x.data[c * len..(c + 1) * len];
            for j in 0..k {
                let idx = (o * ch_in + c) * k + j;
                let lo = pad.saturating_sub(j);
                let hi = (len + pad).saturating_sub(j).min(len);
                let mut acc = T::zero();
                for t in lo..hi {
                    acc = acc + g[t] * xs[t + j - pad];
                }
                dk.data[idx] = dk.data[idx] + acc;
                if let Some(dx) = dx.as_mut() {
                    let w = kernels.data[idx];
                    let dxs = &mut dx[c * len..(c + 1) * len];
                    for t in lo..hi {
                        dxs[t + j - pad] = dxs[t + j - pad] + w * g[t];
                    }
                }
            }
        }
    }
    dx.map(|data| Tensor {
        shape: vec![ch_in, len],
        data,
    })
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn silu_scalar<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

/// Elementwise `x·sigmoid(x)`.
pub fn silu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    Tensor {
        shape: x.shape.clone(),
        data: {
            let mut d = x.data.clone();
            T::silu_slice(&mut d);
            d
        },
    }
}

pub fn silu_inplace<T: Real>(x: &mut [T]) {
    T::silu_slice(x);
}

/// `dx = dy · silu'(x)` where `silu'(x) = s + x·s·(1-s)`.
pub fn silu_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data
        .iter()
        .zip(&dy.data)
        .map(|(&v, &g)| {
            let s = sigmoid(v);
            g * (s + v * s * (T::one() - s))
        })
        .collect();
    Tensor {
        shape: x.shape.clone(),
        data,
    }
}

/// Affine layer with weight `[in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Linear<T> {
    /// Uniform initialization in `±sqrt(1/fan_in)`.
    pub fn new<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (1.0 / fan_in as f64).sqrt();
        Linear {
            weight: Param::new(Tensor::uniform(&[fan_in, fan_out], bound, rng)),
            bias: Param::new(Tensor::uniform(&[fan_out], bound, rng)),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Param::new(Tensor::zeros(&[fan_in, fan_out])),
            bias: Param::new(Tensor::zeros(&[fan_out])),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        linear_forward(x, &self.weight.value, &self.bias.value)
    }

    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, want_dx: bool) -> Option<Tensor<T>> {
        linear_backward(
            x,
            &self.weight.value,
            dy,
            &mut self.weight.grad,
            &mut self.bias.grad,
            want_dx,
        )
    }

    pub fn cast<U: Real>(&self) -> Linear<U> {
        Linear {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

/// Same-length 1-D convolution layer with kernels `[out, in, k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d<T> {
    pub kernels: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Conv1d<T> {
    /// Uniform initialization in `±sqrt(1/(in·k))`.
    pub fn new<R: Rng + ?Sized>(ch_in: usize, ch_out: usize, k: usize, rng: &mut R) -> Self {
        let bound = (1.0 / (ch_in * k) as f64).sqrt();
        Conv1d {
            kernels: Param::new(Tensor::uniform(&[ch_out, ch_in, k], bound, rng)),
            bias: Param::new(Tensor::uniform(&[ch_out], bound, rng)),
        }
    }

    pub fn zeros(ch_in: usize, ch_out: usize, k: usize) -> Self {
        Conv1d {
            kernels: Param::new(Tensor::zeros(&[ch_out, ch_in, k])),
            bias: Param::new(Tensor::zeros(&[ch_out])),
        }
    }

    pub fn param_count(&self) -> usize {
        self.kernels.len() + self.bias.len()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv1d_forward(x, &self.kernels.value, &self.bias.value)
    }

    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, want_dx: bool) -> Option<Tensor<T>> {
        conv1d_backward(
            x,
            &self.kernels.value,
            dy,
            &mut self.kernels.grad,
            &mut self.bias.grad,
            want_dx,
        )
    }

    pub fn cast<U: Real>(&self) -> Conv1d<U> {
        Conv1d {
            kernels: self.kernels.cast(),
            bias: self.bias.cast(),
        }
    }
}
