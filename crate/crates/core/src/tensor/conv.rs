//! im2col-based 2-D convolution and its transpose.
//!
//! Both directions lower to one gemm per sample. The column buffer is
//! recomputed in the backward pass instead of being kept on the tape.

use super::{dims4, Scalar, Tensor};
use crate::error::{Error, Result};

/// Spatial output extent of a convolution, or `None` if the kernel does not fit.
pub fn conv2d_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Spatial output extent of a transposed convolution, or `None` if negative.
pub fn conv_transpose2d_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if input == 0 || stride == 0 || kernel == 0 {
        return None;
    }
    ((input - 1) * stride + kernel).checked_sub(2 * padding).filter(|&s| s > 0)
}

/// Geometry of a sliding window over an image of `channels × h × w`.
#[derive(Clone, Copy, Debug)]
struct Window {
    channels: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Window {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

/// Range of output columns `ox` whose source column `ox·stride + k − pad`
/// falls inside `0..extent`.
fn valid_range(out: usize, extent: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if extent + pad > k {
        (extent + pad - k).div_ceil(stride).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Unfolds `image` (`channels × h × w`) into `col` (`channels·kh·kw × oh·ow`).
fn im2col<T: Scalar>(image: &[T], g: &Window, col: &mut [T]) {
    let positions = g.positions();
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &image[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (y0, y1) = valid_range(g.oh, g.h, ki, g.stride, g.pad);
            for kj in 0..g.kw {
                let (x0, x1) = valid_range(g.ow, g.w, kj, g.stride, g.pad);
                let dst = &mut col[row * positions..(row + 1) * positions];
                dst[..y0 * g.ow].fill(T::zero());
                dst[y1 * g.ow..].fill(T::zero());
                for oy in y0..y1 {
                    let iy = oy * g.stride + ki - g.pad;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    line[..x0].fill(T::zero());
                    line[x1..].fill(T::zero());
                    let first = x0 * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        line[x0..x1].copy_from_slice(&src[first..first + (x1 - x0)]);
                    } else {
                        for (v, ix) in line[x0..x1].iter_mut().zip((first..).step_by(g.stride)) {
                            *v = src[ix];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Folds `col` back onto `image`, accumulating overlapping windows.
fn col2im<T: Scalar>(col: &[T], g: &Window, image: &mut [T]) {
    let positions = g.positions();
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut image[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (y0, y1) = valid_range(g.oh, g.h, ki, g.stride, g.pad);
            for kj in 0..g.kw {
                let (x0, x1) = valid_range(g.ow, g.w, kj, g.stride, g.pad);
                let src = &col[row * positions..(row + 1) * positions];
                for oy in y0..y1 {
                    let iy = oy * g.stride + ki - g.pad;
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let line = &src[oy * g.ow + x0..oy * g.ow + x1];
                    let first = x0 * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        for (d, &v) in dst[first..first + line.len()].iter_mut().zip(line) {
                            *d = *d + v;
                        }
                    } else {
                        for (&v, ix) in line.iter().zip((first..).step_by(g.stride)) {
                            dst[ix] = dst[ix] + v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn check_param(op: &'static str, stride: usize) -> Result<()> {
    if stride == 0 {
        return Err(Error::domain(op, "stride must be positive"));
    }
    Ok(())
}

fn check_bias<T: Scalar>(op: &'static str, bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return Err(Error::shape(
                op,
                format!("bias shape {:?} does not match {channels} output channels", b.shape()),
            ));
        }
    }
    Ok(())
}

/// Shape bookkeeping shared by the conv2d forward and backward passes.
#[derive(Clone, Copy, Debug)]
pub(super) struct Conv2dDims {
    n: usize,
    cout: usize,
    win: Window,
}

impl Conv2dDims {
    pub(super) fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<Self> {
        const OP: &str = "conv2d";
        check_param(OP, stride)?;
        let (n, cin, h, wd) = dims4(OP, x)?;
        let (cout, wcin, kh, kw) = dims4(OP, w)?;
        if cin != wcin {
            return Err(Error::shape(
                OP,
                format!("input has {cin} channels but weight expects {wcin}"),
            ));
        }
        let oh = conv2d_output_size(h, kh, stride, pad)
            .ok_or_else(|| Error::shape(OP, format!("kernel {kh} larger than padded height {}", h + 2 * pad)))?;
        let ow = conv2d_output_size(wd, kw, stride, pad)
            .ok_or_else(|| Error::shape(OP, format!("kernel {kw} larger than padded width {}", wd + 2 * pad)))?;
        Ok(Conv2dDims {
            n,
            cout,
            win: Window {
                channels: cin,
                h,
                w: wd,
                kh,
                kw,
                stride,
                pad,
                oh,
                ow,
            },
        })
    }

    pub(super) fn output_shape(&self) -> [usize; 4] {
        [self.n, self.cout, self.win.oh, self.win.ow]
    }
}

pub(super) fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let d = Conv2dDims::new(x.shape(), w.shape(), stride, pad)?;
    check_bias("conv2d", bias, d.cout)?;
    let g = d.win;
    let (rows, pos) = (g.rows(), g.positions());
    let in_stride = g.channels * g.h * g.w;
    let out_stride = d.cout * pos;
    let mut out = vec![T::zero(); d.n * out_stride];
    let mut col = vec![T::zero(); rows * pos];
    for s in 0..d.n {
        im2col(&x.data()[s * in_stride..(s + 1) * in_stride], &g, &mut col);
        let dst = &mut out[s * out_stride..(s + 1) * out_stride];
        if let Some(b) = bias {
            for (c, chunk) in dst.chunks_mut(pos).enumerate() {
                chunk.fill(b.data()[c]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(
            d.cout,
            rows,
            pos,
            T::one(),
            w.data(),
            (rows as isize, 1),
            &col,
            (pos as isize, 1),
            beta,
            dst,
            (pos as isize, 1),
        );
    }
    Tensor::new(d.output_shape(), out)
}

/// Gradients of conv2d with respect to the requested operands.
pub(super) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

#[allow(clippy::too_many_arguments)]
pub(super) fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
    dout: &[T],
    need_input: bool,
    need_weight: bool,
    need_bias: bool,
) -> Result<ConvGrads<T>> {
    let d = Conv2dDims::new(x.shape(), w.shape(), stride, pad)?;
    let g = d.win;
    let (rows, pos) = (g.rows(), g.positions());
    let in_stride = g.channels * g.h * g.w;
    let out_stride = d.cout * pos;
    let mut dx = need_input.then(|| vec![T::zero(); x.len()]);
    let mut dw = need_weight.then(|| vec![T::zero(); w.len()]);
    let mut db = need_bias.then(|| vec![T::zero(); d.cout]);
    let mut col = vec![T::zero(); rows * pos];
    for s in 0..d.n {
        let grad = &dout[s * out_stride..(s + 1) * out_stride];
        if let Some(db) = db.as_mut() {
            for (c, chunk) in grad.chunks(pos).enumerate() {
                db[c] = chunk.iter().fold(db[c], |acc, &v| acc + v);
            }
        }
        if let Some(dw) = dw.as_mut() {
            im2col(&x.data()[s * in_stride..(s + 1) * in_stride], &g, &mut col);
            // dW += dOut · colᵀ
            T::gemm(
                d.cout,
                pos,
                rows,
                T::one(),
                grad,
                (pos as isize, 1),
                &col,
                (1, pos as isize),
                T::one(),
                dw,
                (rows as isize, 1),
            );
        }
        if let Some(dx) = dx.as_mut() {
            // dcol = Wᵀ · dOut
            T::gemm(
                rows,
                d.cout,
                pos,
                T::one(),
                w.data(),
                (1, rows as isize),
                grad,
                (pos as isize, 1),
                T::zero(),
                &mut col,
                (pos as isize, 1),
            );
            col2im(&col, &g, &mut dx[s * in_stride..(s + 1) * in_stride]);
        }
    }
    Ok(ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}

/// Shape bookkeeping for the transposed convolution. The window describes
/// the *output* image; its positions are the input pixels.
#[derive(Clone, Copy, Debug)]
pub(super) struct ConvTransposeDims {
    n: usize,
    cin: usize,
    win: Window,
}

impl ConvTransposeDims {
    pub(super) fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<Self> {
        const OP: &str = "conv_transpose2d";
        check_param(OP, stride)?;
        let (n, cin, h, wd) = dims4(OP, x)?;
        let (wcin, cout, kh, kw) = dims4(OP, w)?;
        if cin != wcin {
            return Err(Error::shape(
                OP,
                format!("input has {cin} channels but weight expects {wcin}"),
            ));
        }
        let oh = conv_transpose2d_output_size(h, kh, stride, pad)
            .ok_or_else(|| Error::shape(OP, "padding removes the whole output height"))?;
        let ow = conv_transpose2d_output_size(wd, kw, stride, pad)
            .ok_or_else(|| Error::shape(OP, "padding removes the whole output width"))?;
        Ok(ConvTransposeDims {
            n,
            cin,
            win: Window {
                channels: cout,
                h: oh,
                w: ow,
                kh,
                kw,
                stride,
                pad,
                oh: h,
                ow: wd,
            },
        })
    }

    pub(super) fn output_shape(&self) -> [usize; 4] {
        [self.n, self.win.channels, self.win.h, self.win.w]
    }
}

pub(super) fn conv_transpose2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let d = ConvTransposeDims::new(x.shape(), w.shape(), stride, pad)?;
    let g = d.win;
    check_bias("conv_transpose2d", bias, g.channels)?;
    let (rows, pos) = (g.rows(), g.positions());
    let in_stride = d.cin * pos;
    let out_plane = g.h * g.w;
    let out_stride = g.channels * out_plane;
    let mut out = vec![T::zero(); d.n * out_stride];
    let mut col = vec![T::zero(); rows * pos];
    for s in 0..d.n {
        // col = Wᵀ · X, with W viewed as cin × (cout·kh·kw)
        T::gemm(
            rows,
            d.cin,
            pos,
            T::one(),
            w.data(),
            (1, rows as isize),
            &x.data()[s * in_stride..(s + 1) * in_stride],
            (pos as isize, 1),
            T::zero(),
            &mut col,
            (pos as isize, 1),
        );
        let dst = &mut out[s * out_stride..(s + 1) * out_stride];
        col2im(&col, &g, dst);
        if let Some(b) = bias {
            for (c, chunk) in dst.chunks_mut(out_plane).enumerate() {
                for v in chunk {
                    *v = *v + b.data()[c];
                }
            }
        }
    }
    Tensor::new(d.output_shape(), out)
}

#[allow(clippy::too_many_arguments)]
pub(super) fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
    dout: &[T],
    need_input: bool,
    need_weight: bool,
    need_bias: bool,
) -> Result<ConvGrads<T>> {
    let d = ConvTransposeDims::new(x.shape(), w.shape(), stride, pad)?;
    let g = d.win;
    let (rows, pos) = (g.rows(), g.positions());
    let in_stride = d.cin * pos;
    let out_plane = g.h * g.w;
    let out_stride = g.channels * out_plane;
    let mut dx = need_input.then(|| vec![T::zero(); x.len()]);
    let mut dw = need_weight.then(|| vec![T::zero(); w.len()]);
    let mut db = need_bias.then(|| vec![T::zero(); g.channels]);
    let mut col = vec![T::zero(); rows * pos];
    for s in 0..d.n {
        let grad = &dout[s * out_stride..(s + 1) * out_stride];
        if let Some(db) = db.as_mut() {
            for (c, chunk) in grad.chunks(out_plane).enumerate() {
                db[c] = chunk.iter().fold(db[c], |acc, &v| acc + v);
            }
        }
        if dx.is_none() && dw.is_none() {
            continue;
        }
        im2col(grad, &g, &mut col);
        if let Some(dx) = dx.as_mut() {
            // dX = W · dcol
            T::gemm(
                d.cin,
                rows,
                pos,
                T::one(),
                w.data(),
                (rows as isize, 1),
                &col,
                (pos as isize, 1),
                T::zero(),
                &mut dx[s * in_stride..(s + 1) * in_stride],
                (pos as isize, 1),
            );
        }
        if let Some(dw) = dw.as_mut() {
            // dW += X · dcolᵀ
            T::gemm(
                d.cin,
                pos,
                rows,
                T::one(),
                &x.data()[s * in_stride..(s + 1) * in_stride],
                (pos as isize, 1),
                &col,
                (1, pos as isize),
                T::one(),
                dw,
                (rows as isize, 1),
            );
        }
    }
    Ok(ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_sizes() {
        assert_eq!(conv2d_output_size(16, 3, 2, 1), Some(8));
        assert_eq!(conv2d_output_size(3, 5, 1, 0), None);
        assert_eq!(conv_transpose2d_output_size(8, 4, 2, 1), Some(16));
        assert_eq!(conv_transpose2d_output_size(1, 1, 1, 1), None);
    }

    #[test]
    fn im2col_then_col2im_counts_window_coverage() {
        // Folding an unfolded all-ones image yields, per pixel, the number of
        // windows that cover it.
        let g = Window {
            channels: 1,
            h: 3,
            w: 3,
            kh: 2,
            kw: 2,
            stride: 1,
            pad: 0,
            oh: 2,
            ow: 2,
        };
        let image = vec![1.0f64; 9];
        let mut col = vec![0.0; g.rows() * g.positions()];
        im2col(&image, &g, &mut col);
        let mut back = vec![0.0; 9];
        col2im(&col, &g, &mut back);
        assert_eq!(back, vec![1.0, 2.0, 1.0, 2.0, 4.0, 2.0, 1.0, 2.0, 1.0]);
    }
}
