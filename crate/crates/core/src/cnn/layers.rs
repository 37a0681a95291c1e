//! Tensor operations and their reverse-mode counterparts.

use super::{CnnError, Real};

/// Row-major values with shape `(c, h, w)` or `(n,)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, CnnError> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || shape.len() > 3 || n != data.len() {
            return Err(CnnError::Shape(format!(
                "shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CnnError::Argument("tensor values must be finite".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn chw(&self) -> Result<(usize, usize, usize), CnnError> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(CnnError::Shape(format!(
                "expected a (c, h, w) tensor, got {:?}",
                self.shape
            ))),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from(*v).unwrap()).collect(),
        }
    }
}

/// Valid, stride-1 cross-correlation. `w` is laid out `[out, in, kh, kw]`.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    w: &[T],
    w_shape: [usize; 4],
    b: &[T],
) -> Result<Tensor<T>, CnnError> {
    let (c_in, h, wd) = input.chw()?;
    let [n_out, wc, kh, kw] = w_shape;
    if wc != c_in {
        return Err(CnnError::Shape(format!(
            "kernel expects {wc} input channels, input has {c_in}"
        )));
    }
    if kh == 0 || kw == 0 || kh > h || kw > wd {
        return Err(CnnError::Shape(format!(
            "kernel {kh}x{kw} does not fit a {h}x{wd} input"
        )));
    }
    if w.len() != n_out * c_in * kh * kw || b.len() != n_out {
        return Err(CnnError::Shape("weight or bias length does not match".into()));
    }
    let (oh, ow) = (h - kh + 1, wd - kw + 1);
    let col = im2col(input, kh, kw);
    let (rows, p) = (c_in * kh * kw, oh * ow);
    let mut out = vec![T::zero(); n_out * p];
    T::gemm(n_out, rows, p, w, (rows, 1), &col, (p, 1), T::zero(), &mut out);
    for (plane, &bias) in out.chunks_exact_mut(p).zip(b) {
        plane.iter_mut().for_each(|v| *v += bias);
    }
    Ok(Tensor {
        shape: vec![n_out, oh, ow],
        data: out,
    })
}

/// Unfold every `kh x kw` window into a column: row `(c, u, v)`, column
/// `(i, j)` holds `input[c, i + u, j + v]`.
fn im2col<T: Real>(input: &Tensor<T>, kh: usize, kw: usize) -> Vec<T> {
    let (c_in, h, wd) = (input.shape[0], input.shape[1], input.shape[2]);
    let (oh, ow) = (h - kh + 1, wd - kw + 1);
    let mut col = Vec::with_capacity(c_in * kh * kw * oh * ow);
    for c in 0..c_in {
        let inp = &input.data[c * h * wd..(c + 1) * h * wd];
        for u in 0..kh {
            for v in 0..kw {
                for i in 0..oh {
                    col.extend_from_slice(&inp[(i + u) * wd + v..(i + u) * wd + v + ow]);
                }
            }
        }
    }
    col
}

/// Gradients of [`conv2d`] for weights, biases and (if asked) the input.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    w: &[T],
    w_shape: [usize; 4],
    dout: &Tensor<T>,
    need_input: bool,
) -> (Vec<T>, Vec<T>, Option<Tensor<T>>) {
    let (c_in, h, wd) = input.chw().expect("checked in forward");
    let [n_out, _, kh, kw] = w_shape;
    let (oh, ow) = (h - kh + 1, wd - kw + 1);
    let (rows, p) = (c_in * kh * kw, oh * ow);
    let col = im2col(input, kh, kw);
    let db = dout.data.chunks_exact(p).map(|g| g.iter().copied().sum()).collect();
    // dW = dout * col^T
    let mut dw = vec![T::zero(); w.len()];
    T::gemm(n_out, p, rows, &dout.data, (p, 1), &col, (1, p), T::zero(), &mut dw);
    let din = need_input.then(|| {
        // dcol = W^T * dout, then fold back onto the input
        let mut dcol = vec![T::zero(); rows * p];
        T::gemm(rows, n_out, p, w, (1, rows), &dout.data, (p, 1), T::zero(), &mut dcol);
        let mut din = vec![T::zero(); input.data.len()];
        let mut r = 0;
        for c in 0..c_in {
            let plane = &mut din[c * h * wd..(c + 1) * h * wd];
            for u in 0..kh {
                for v in 0..kw {
                    let src = &dcol[r * p..(r + 1) * p];
                    for i in 0..oh {
                        let dst = &mut plane[(i + u) * wd + v..(i + u) * wd + v + ow];
                        for (d, &g) in dst.iter_mut().zip(&src[i * ow..(i + 1) * ow]) {
                            *d += g;
                        }
                    }
                    r += 1;
                }
            }
        }
        Tensor {
            shape: input.shape.clone(),
            data: din,
        }
    });
    (dw, db, din)
}

/// 2x2 max pool with stride 2. The second value holds, per output, the flat
/// input index of the winner (first maximum in row-major window order).
pub fn maxpool2<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>), CnnError> {
    let (c, h, w) = input.chw()?;
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(CnnError::Shape(format!(
            "max pool needs even spatial dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                for idx in [
                    base + 2 * i * w + 2 * j + 1,
                    base + (2 * i + 1) * w + 2 * j,
                    base + (2 * i + 1) * w + 2 * j + 1,
                ] {
                    if input.data[idx] > input.data[best] {
                        best = idx;
                    }
                }
                out.push(input.data[best]);
                arg.push(best);
            }
        }
    }
    Ok((
        Tensor {
            shape: vec![c, oh, ow],
            data: out,
        },
        arg,
    ))
}

pub fn maxpool2_backward<T: Real>(in_shape: &[usize], argmax: &[usize], dout: &Tensor<T>) -> Tensor<T> {
    let mut din = Tensor::zeros(in_shape.to_vec());
    for (&a, &g) in argmax.iter().zip(&dout.data) {
        din.data[a] += g;
    }
    din
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    Tensor {
        shape: input.shape.clone(),
        data: input.data.iter().map(|&v| v.max(T::zero())).collect(),
    }
}

pub fn relu_backward<T: Real>(input: &Tensor<T>, dout: &Tensor<T>) -> Tensor<T> {
    Tensor {
        shape: input.shape.clone(),
        data: input
            .data
            .iter()
            .zip(&dout.data)
            .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
            .collect(),
    }
}

pub fn global_avg_pool<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>, CnnError> {
    let (c, h, w) = input.chw()?;
    let n = T::from(h * w).unwrap();
    let data = input
        .data
        .chunks_exact(h * w)
        .map(|p| p.iter().copied().sum::<T>() / n)
        .collect();
    Ok(Tensor {
        shape: vec![c],
        data,
    })
}

pub fn global_avg_pool_backward<T: Real>(in_shape: &[usize], dout: &Tensor<T>) -> Tensor<T> {
    let hw = in_shape[1] * in_shape[2];
    let n = T::from(hw).unwrap();
    let mut data = Vec::with_capacity(dout.data.len() * hw);
    for &g in &dout.data {
        data.extend(std::iter::repeat_n(g / n, hw));
    }
    Tensor {
        shape: in_shape.to_vec(),
        data,
    }
}

/// `out = W x + b` with `W` laid out `[out, in]`.
pub fn dense<T: Real>(input: &Tensor<T>, w: &[T], n_out: usize, b: &[T]) -> Result<Tensor<T>, CnnError> {
    let n_in = input.data.len();
    if input.shape.len() != 1 || w.len() != n_in * n_out || b.len() != n_out {
        return Err(CnnError::Shape(format!(
            "dense {n_in}->{n_out} does not match input {:?}",
            input.shape
        )));
    }
    let data = w
        .chunks_exact(n_in)
        .zip(b)
        .map(|(row, &bias)| bias + row.iter().zip(&input.data).map(|(&a, &x)| a * x).sum::<T>())
        .collect();
    Ok(Tensor {
        shape: vec![n_out],
        data,
    })
}

pub fn dense_backward<T: Real>(input: &Tensor<T>, w: &[T], dout: &Tensor<T>) -> (Vec<T>, Vec<T>, Tensor<T>) {
    let n_in = input.data.len();
    let mut dw = Vec::with_capacity(w.len());
    let mut din = vec![T::zero(); n_in];
    for (row, &g) in w.chunks_exact(n_in).zip(&dout.data) {
        dw.extend(input.data.iter().map(|&x| g * x));
        for (d, &a) in din.iter_mut().zip(row) {
            *d += a * g;
        }
    }
    (
        dw,
        dout.data.clone(),
        Tensor {
            shape: input.shape.clone(),
            data: din,
        },
    )
}

/// Softmax with the max subtracted first.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `-log softmax(logits)[label]` and its gradient with respect to the logits.
pub fn cross_entropy<T: Real>(logits: &[T], label: usize) -> (T, Vec<T>) {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<T>().ln();
    let mut grad = softmax(logits);
    grad[label] -= T::one();
    (lse - logits[label], grad)
}
