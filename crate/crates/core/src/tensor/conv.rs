//! Cross-correlation and fully-connected kernels built on im2col + GEMM.

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Zero padding per side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn same(p: usize) -> Self {
        Self {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stride {
    pub h: usize,
    pub w: usize,
}

impl Stride {
    pub fn uniform(s: usize) -> Self {
        Self { h: s, w: s }
    }
}

impl Default for Stride {
    fn default() -> Self {
        Self::uniform(1)
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    pad: Padding,
    stride: Stride,
}

impl ConvGeometry {
    fn new<T: Element>(
        input: &Tensor<T>,
        kernel: &Tensor<T>,
        pad: Padding,
        stride: Stride,
    ) -> Result<Self> {
        let (n, c, h, w) = input.dims4()?;
        let (out_c, in_c, kh, kw) = kernel.dims4().map_err(|_| {
            Error::shape(
                "conv2d",
                format!("kernel must be O×I×Kh×Kw, got {:?}", kernel.shape()),
            )
        })?;
        if in_c != c {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "input {:?} has {c} channels but kernel {:?} expects {in_c}",
                    input.shape(),
                    kernel.shape()
                ),
            ));
        }
        if stride.h == 0 || stride.w == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        let ph = h + pad.top + pad.bottom;
        let pw = w + pad.left + pad.right;
        if ph < kh || pw < kw {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "padded input {ph}×{pw} smaller than kernel {kh}×{kw} (input {:?})",
                    input.shape()
                ),
            ));
        }
        Ok(Self {
            n,
            c,
            h,
            w,
            out_c,
            kh,
            kw,
            oh: (ph - kh) / stride.h + 1,
            ow: (pw - kw) / stride.w + 1,
            pad,
            stride,
        })
    }

    fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    /// Calls `f(col_start, input_start, len)` for every run of in-bounds
    /// taps of one image. Consecutive taps in a run are one column apart in
    /// `col` and `stride.w` apart in the input.
    #[inline]
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let plane = self.out_plane();
        let sw = self.stride.w;
        for ci in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let lo = self.pad.left.saturating_sub(kj).div_ceil(sw);
                    let hi = (self.w + self.pad.left)
                        .saturating_sub(kj)
                        .div_ceil(sw)
                        .min(self.ow);
                    if lo >= hi {
                        continue;
                    }
                    let ix0 = lo * sw + kj - self.pad.left;
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride.h + ki) as isize - self.pad.top as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let in_row = (ci * self.h + iy as usize) * self.w;
                        f(row * plane + oy * self.ow + lo, in_row + ix0, hi - lo);
                    }
                }
            }
        }
    }

    fn im2col<T: Element>(&self, image: &[T], col: &mut [T]) {
        col.fill(T::zero());
        let sw = self.stride.w;
        self.for_each_run(|c0, i0, len| {
            let dst = &mut col[c0..c0 + len];
            if sw == 1 {
                dst.copy_from_slice(&image[i0..i0 + len]);
            } else {
                for (j, d) in dst.iter_mut().enumerate() {
                    *d = image[i0 + j * sw];
                }
            }
        });
    }

    fn col2im<T: Element>(&self, col: &[T], image: &mut [T]) {
        let sw = self.stride.w;
        self.for_each_run(|c0, i0, len| {
            for (j, &v) in col[c0..c0 + len].iter().enumerate() {
                image[i0 + j * sw] += v;
            }
        });
    }
}

fn check_bias<T: Element>(bias: Option<&Tensor<T>>, out: usize, op: &'static str) -> Result<()> {
    if let Some(b) = bias {
        if b.len() != out {
            return Err(Error::shape(
                op,
                format!("bias has {} entries, expected {out}", b.len()),
            ));
        }
    }
    Ok(())
}

/// 2-D cross-correlation of an `N×C×H×W` input with an `O×C×Kh×Kw` kernel.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    padding: Padding,
    stride: Stride,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input, kernel, padding, stride)?;
    check_bias(bias, g.out_c, "conv2d")?;
    let (patch, plane) = (g.patch_len(), g.out_plane());
    let in_per = g.c * g.h * g.w;
    let out_per = g.out_c * plane;
    let mut out = vec![T::zero(); g.n * out_per];
    let mut col = vec![T::zero(); patch * plane];
    for b in 0..g.n {
        let image = &input.data()[b * in_per..(b + 1) * in_per];
        g.im2col(image, &mut col);
        let dst = &mut out[b * out_per..(b + 1) * out_per];
        T::gemm(
            g.out_c,
            patch,
            plane,
            kernel.data(),
            (patch as isize, 1),
            &col,
            (plane as isize, 1),
            T::zero(),
            dst,
            (plane as isize, 1),
        );
        if let Some(bias) = bias {
            for (o, chunk) in dst.chunks_mut(plane).enumerate() {
                let bv = bias.data()[o];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(Tensor::from_parts_unchecked(
        vec![g.n, g.out_c, g.oh, g.ow],
        out,
    ))
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    padding: Padding,
    stride: Stride,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let g = ConvGeometry::new(input, kernel, padding, stride)?;
    if grad_out.shape() != [g.n, g.out_c, g.oh, g.ow] {
        return Err(Error::shape(
            "conv2d_backward",
            format!(
                "grad {:?} does not match output {:?}",
                grad_out.shape(),
                [g.n, g.out_c, g.oh, g.ow]
            ),
        ));
    }
    let (patch, plane) = (g.patch_len(), g.out_plane());
    let in_per = g.c * g.h * g.w;
    let out_per = g.out_c * plane;
    let mut dx = vec![T::zero(); input.len()];
    let mut dk = vec![T::zero(); kernel.len()];
    let mut db = vec![T::zero(); g.out_c];
    let mut col = vec![T::zero(); patch * plane];
    for b in 0..g.n {
        let image = &input.data()[b * in_per..(b + 1) * in_per];
        let gy = &grad_out.data()[b * out_per..(b + 1) * out_per];
        g.im2col(image, &mut col);
        // dK += dY · colᵀ
        T::gemm(
            g.out_c,
            plane,
            patch,
            gy,
            (plane as isize, 1),
            &col,
            (1, plane as isize),
            T::one(),
            &mut dk,
            (patch as isize, 1),
        );
        // dcol = Kᵀ · dY
        T::gemm(
            patch,
            g.out_c,
            plane,
            kernel.data(),
            (1, patch as isize),
            gy,
            (plane as isize, 1),
            T::zero(),
            &mut col,
            (plane as isize, 1),
        );
        g.col2im(&col, &mut dx[b * in_per..(b + 1) * in_per]);
        for (o, chunk) in gy.chunks(plane).enumerate() {
            db[o] += chunk.iter().copied().sum::<T>();
        }
    }
    Ok((
        Tensor::from_parts_unchecked(input.shape().to_vec(), dx),
        Tensor::from_parts_unchecked(kernel.shape().to_vec(), dk),
        Tensor::from_parts_unchecked(vec![g.out_c], db),
    ))
}

fn linear_dims<T: Element>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match (input.shape(), weight.shape()) {
        (&[n, cin], &[cout, win]) if cin == win => Ok((n, cin, cout)),
        (a, b) => Err(Error::shape(
            "linear",
            format!("input {a:?} is incompatible with weight {b:?} (expected N×Cin and Cout×Cin)"),
        )),
    }
}

/// `input · weightᵀ + bias` for `N×Cin` input and `Cout×Cin` weight.
pub fn linear<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (n, cin, cout) = linear_dims(input, weight)?;
    check_bias(bias, cout, "linear")?;
    let mut out = vec![T::zero(); n * cout];
    T::gemm(
        n,
        cin,
        cout,
        input.data(),
        (cin as isize, 1),
        weight.data(),
        (1, cin as isize),
        T::zero(),
        &mut out,
        (cout as isize, 1),
    );
    if let Some(bias) = bias {
        for row in out.chunks_mut(cout) {
            for (v, &b) in row.iter_mut().zip(bias.data()) {
                *v += b;
            }
        }
    }
    Ok(Tensor::from_parts_unchecked(vec![n, cout], out))
}

/// Gradients of [`linear`] with respect to input, weight and bias.
pub fn linear_backward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, cin, cout) = linear_dims(input, weight)?;
    if grad_out.shape() != [n, cout] {
        return Err(Error::shape(
            "linear_backward",
            format!("grad {:?} does not match output {:?}", grad_out.shape(), [n, cout]),
        ));
    }
    let mut dx = vec![T::zero(); n * cin];
    let mut dw = vec![T::zero(); cout * cin];
    T::gemm(
        n,
        cout,
        cin,
        grad_out.data(),
        (cout as isize, 1),
        weight.data(),
        (cin as isize, 1),
        T::zero(),
        &mut dx,
        (cin as isize, 1),
    );
    T::gemm(
        cout,
        n,
        cin,
        grad_out.data(),
        (1, cout as isize),
        input.data(),
        (cin as isize, 1),
        T::zero(),
        &mut dw,
        (cin as isize, 1),
    );
    let mut db = vec![T::zero(); cout];
    for row in grad_out.data().chunks(cout) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    Ok((
        Tensor::from_parts_unchecked(vec![n, cin], dx),
        Tensor::from_parts_unchecked(vec![cout, cin], dw),
        Tensor::from_parts_unchecked(vec![cout], db),
    ))
}
