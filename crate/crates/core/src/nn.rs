//! Minimal convolutional building blocks with hand-written backpropagation.
//!
//! Convolution activations are stored channel-major over the batch,
//! `(C, B, H, W)`, so one GEMM covers a whole batch. Dense activations are
//! row-major `(B, F)`. All convolutions use a 3×3 kernel, stride 2, padding 1.

use std::fmt::Debug;

use num_traits::Float;
use rand::Rng;

/// Scalar type usable by the network: `f32` for training, `f64` for
/// gradient checks.
pub trait Real: Float + Default + Debug + Send + Sync + 'static + std::iter::Sum {
    #[allow(clippy::too_many_arguments)]
    /// # Safety
    /// Pointers and strides must describe valid matrices of the given shapes.
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self {
        Self::from(v).expect("representable")
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// `C (m×n) = op(A) · op(B) + beta·C` with row-major storage. `op(A)` is
/// `m×k`; when `ta` is set, `a` holds the `k×m` matrix. Same for `b`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    beta: T,
    c: &mut [T],
) {
    assert!(
        a.len() >= m * k && b.len() >= k * n && c.len() >= m * n,
        "gemm shape mismatch"
    );
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths checked above; strides match the stated layouts.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
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
        )
    }
}

/// Learned tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn zeros(len: usize) -> Self {
        Self {
            value: vec![T::zero(); len],
            grad: vec![T::zero(); len],
        }
    }

    pub fn uniform(len: usize, bound: f64, rng: &mut impl Rng) -> Self {
        let value = (0..len)
            .map(|_| T::of(rng.random_range(-bound..bound)))
            .collect();
        Self {
            value,
            grad: vec![T::zero(); len],
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Spatial geometry of a stride-2 convolution: `big` side ↔ `small` side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geom {
    pub big: usize,
    pub small: usize,
}

impl Geom {
    pub fn down(big: usize) -> Self {
        Self {
            big,
            small: (big + 2 - 3) / 2 + 1,
        }
    }
}

/// `(C, B, big, big)` → `(C·9, B·small·small)`.
pub fn im2col<T: Real>(src: &[T], channels: usize, batch: usize, g: Geom) -> Vec<T> {
    let (big, small) = (g.big, g.small);
    let cols = batch * small * small;
    let mut out = vec![T::zero(); channels * 9 * cols];
    for ch in 0..channels {
        for ky in 0..3 {
            for kx in 0..3 {
                let row =
                    &mut out[(ch * 9 + ky * 3 + kx) * cols..(ch * 9 + ky * 3 + kx + 1) * cols];
                for b in 0..batch {
                    let plane =
                        &src[(ch * batch + b) * big * big..(ch * batch + b + 1) * big * big];
                    for oy in 0..small {
                        let iy = (oy * 2 + ky) as isize - 1;
                        if iy < 0 || iy >= big as isize {
                            continue;
                        }
                        let src_row = &plane[iy as usize * big..(iy as usize + 1) * big];
                        let dst = &mut row[(b * small + oy) * small..(b * small + oy + 1) * small];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * 2 + kx) as isize - 1;
                            if ix >= 0 && ix < big as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatter-adds columns back into `(C, B, big, big)`.
pub fn col2im<T: Real>(col: &[T], channels: usize, batch: usize, g: Geom) -> Vec<T> {
    let (big, small) = (g.big, g.small);
    let cols = batch * small * small;
    let mut out = vec![T::zero(); channels * batch * big * big];
    for ch in 0..channels {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[(ch * 9 + ky * 3 + kx) * cols..(ch * 9 + ky * 3 + kx + 1) * cols];
                for b in 0..batch {
                    let plane =
                        &mut out[(ch * batch + b) * big * big..(ch * batch + b + 1) * big * big];
                    for oy in 0..small {
                        let iy = (oy * 2 + ky) as isize - 1;
                        if iy < 0 || iy >= big as isize {
                            continue;
                        }
                        let dst_row = &mut plane[iy as usize * big..(iy as usize + 1) * big];
                        let src = &row[(b * small + oy) * small..(b * small + oy + 1) * small];
                        for (ox, s) in src.iter().enumerate() {
                            let ix = (ox * 2 + kx) as isize - 1;
                            if ix >= 0 && ix < big as isize {
                                dst_row[ix as usize] = dst_row[ix as usize] + *s;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Stride-2, 3×3 convolution (`transposed = false`, big → small) or its
/// transpose (small → big).
///
/// Weight layout: `[cout][cin·9]` for convolutions, `[cin][cout·9]` for
/// transposed convolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    pub cin: usize,
    pub cout: usize,
    pub geom: Geom,
    pub transposed: bool,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

/// What a layer keeps from the forward pass.
#[derive(Debug, Clone, Default)]
pub struct ConvCache<T> {
    /// im2col of the input (convolution) or the input itself (transposed).
    saved: Vec<T>,
}

impl<T: Real> Conv<T> {
    pub fn new(
        cin: usize,
        cout: usize,
        geom: Geom,
        transposed: bool,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = if transposed { cout * 9 } else { cin * 9 } as f64;
        let bound = gain * (3.0 / fan_in).sqrt();
        Self {
            cin,
            cout,
            geom,
            transposed,
            weight: Param::uniform(cin * cout * 9, bound, rng),
            bias: Param::uniform(cout, 1.0 / fan_in.sqrt(), rng),
        }
    }

    pub fn in_side(&self) -> usize {
        if self.transposed {
            self.geom.small
        } else {
            self.geom.big
        }
    }

    pub fn out_side(&self) -> usize {
        if self.transposed {
            self.geom.big
        } else {
            self.geom.small
        }
    }

    pub fn forward(&self, x: &[T], batch: usize) -> (Vec<T>, ConvCache<T>) {
        let g = self.geom;
        let s2 = g.small * g.small;
        if !self.transposed {
            let col = im2col(x, self.cin, batch, g);
            let n = batch * s2;
            let mut out = vec![T::zero(); self.cout * n];
            for (c, chunk) in out.chunks_mut(n).enumerate() {
                chunk.iter_mut().for_each(|v| *v = self.bias.value[c]);
            }
            gemm(
                self.cout,
                self.cin * 9,
                n,
                &self.weight.value,
                false,
                &col,
                false,
                T::one(),
                &mut out,
            );
            (out, ConvCache { saved: col })
        } else {
            let n = batch * s2;
            let mut col = vec![T::zero(); self.cout * 9 * n];
            gemm(
                self.cout * 9,
                self.cin,
                n,
                &self.weight.value,
                true,
                x,
                false,
                T::zero(),
                &mut col,
            );
            let mut out = col2im(&col, self.cout, batch, g);
            let plane = batch * g.big * g.big;
            for (c, chunk) in out.chunks_mut(plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v = *v + self.bias.value[c]);
            }
            (out, ConvCache { saved: x.to_vec() })
        }
    }

    /// Accumulates parameter gradients; returns the input gradient when
    /// `need_input_grad` is set.
    pub fn backward(
        &mut self,
        cache: &ConvCache<T>,
        dy: &[T],
        batch: usize,
        need_input_grad: bool,
    ) -> Option<Vec<T>> {
        let g = self.geom;
        let n = batch * g.small * g.small;
        if !self.transposed {
            let col = &cache.saved;
            gemm(
                self.cout,
                n,
                self.cin * 9,
                dy,
                false,
                col,
                true,
                T::one(),
                &mut self.weight.grad,
            );
            for (c, chunk) in dy.chunks(n).enumerate() {
                self.bias.grad[c] = self.bias.grad[c] + chunk.iter().copied().sum();
            }
            need_input_grad.then(|| {
                let mut dcol = vec![T::zero(); self.cin * 9 * n];
                gemm(
                    self.cin * 9,
                    self.cout,
                    n,
                    &self.weight.value,
                    true,
                    dy,
                    false,
                    T::zero(),
                    &mut dcol,
                );
                col2im(&dcol, self.cin, batch, g)
            })
        } else {
            let x = &cache.saved;
            let dcol = im2col(dy, self.cout, batch, g);
            gemm(
                self.cin,
                n,
                self.cout * 9,
                x,
                false,
                &dcol,
                true,
                T::one(),
                &mut self.weight.grad,
            );
            let plane = batch * g.big * g.big;
            for (c, chunk) in dy.chunks(plane).enumerate() {
                self.bias.grad[c] = self.bias.grad[c] + chunk.iter().copied().sum();
            }
            need_input_grad.then(|| {
                let mut dx = vec![T::zero(); self.cin * n];
                gemm(
                    self.cin,
                    self.cout * 9,
                    n,
                    &self.weight.value,
                    false,
                    &dcol,
                    false,
                    T::zero(),
                    &mut dx,
                );
                dx
            })
        }
    }
}

/// Fully connected layer, weight `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Dense<T> {
    pub fn new(inputs: usize, outputs: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let bound = gain * (3.0 / inputs as f64).sqrt();
        Self {
            inputs,
            outputs,
            weight: Param::uniform(inputs * outputs, bound, rng),
            bias: Param::uniform(outputs, 1.0 / (inputs as f64).sqrt(), rng),
        }
    }

    pub fn forward(&self, x: &[T], batch: usize) -> Vec<T> {
        let mut y: Vec<T> = (0..batch)
            .flat_map(|_| self.bias.value.iter().copied())
            .collect();
        gemm(
            batch,
            self.inputs,
            self.outputs,
            x,
            false,
            &self.weight.value,
            true,
            T::one(),
            &mut y,
        );
        y
    }

    pub fn backward(
        &mut self,
        x: &[T],
        dy: &[T],
        batch: usize,
        need_input_grad: bool,
    ) -> Option<Vec<T>> {
        gemm(
            self.outputs,
            batch,
            self.inputs,
            dy,
            true,
            x,
            false,
            T::one(),
            &mut self.weight.grad,
        );
        for row in dy.chunks(self.outputs) {
            for (g, d) in self.bias.grad.iter_mut().zip(row) {
                *g = *g + *d;
            }
        }
        need_input_grad.then(|| {
            let mut dx = vec![T::zero(); batch * self.inputs];
            gemm(
                batch,
                self.outputs,
                self.inputs,
                dy,
                false,
                &self.weight.value,
                false,
                T::zero(),
                &mut dx,
            );
            dx
        })
    }
}

pub fn leaky_relu<T: Real>(x: &mut [T], slope: T) {
    for v in x {
        if *v < T::zero() {
            *v = *v * slope;
        }
    }
}

/// Backward through leaky ReLU given its output (sign is preserved).
pub fn leaky_relu_backward<T: Real>(out: &[T], dy: &mut [T], slope: T) {
    for (d, y) in dy.iter_mut().zip(out) {
        if *y <= T::zero() {
            *d = *d * slope;
        }
    }
}

pub fn sigmoid<T: Real>(x: &mut [T]) {
    for v in x {
        *v = T::one() / (T::one() + (-*v).exp());
    }
}

/// `(C, B, S)` → `(B, C·S)`.
pub fn channels_to_rows<T: Real>(x: &[T], channels: usize, batch: usize, spatial: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for c in 0..channels {
        for b in 0..batch {
            let src = &x[(c * batch + b) * spatial..(c * batch + b + 1) * spatial];
            out[b * channels * spatial + c * spatial..b * channels * spatial + (c + 1) * spatial]
                .copy_from_slice(src);
        }
    }
    out
}

/// `(B, C·S)` → `(C, B, S)`.
pub fn rows_to_channels<T: Real>(x: &[T], channels: usize, batch: usize, spatial: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for c in 0..channels {
        for b in 0..batch {
            let src = &x
                [b * channels * spatial + c * spatial..b * channels * spatial + (c + 1) * spatial];
            out[(c * batch + b) * spatial..(c * batch + b + 1) * spatial].copy_from_slice(src);
        }
    }
    out
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Param<T>]) {
        if self.m.is_empty() {
            self.m = params
                .iter()
                .map(|p| vec![T::zero(); p.value.len()])
                .collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let c1 = T::of(1.0 - self.beta1.powi(self.step));
        let c2 = T::of(1.0 - self.beta2.powi(self.step));
        let lr = T::of(self.lr);
        let eps = T::of(self.eps);
        for (k, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p.value[i] = p.value[i] - lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}
