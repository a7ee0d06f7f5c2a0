//! im2col-based 2-D cross-correlation.

use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{Real, Tensor};
use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeometry {
    pub fn new(
        input: &[usize],
        weight: &[usize],
        bias: Option<&[usize]>,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let [c_in, h, w] = match *input {
            [c, h, w] => [c, h, w],
            _ => return Err(domain!("conv2d input must be [C, H, W], got {:?}", input)),
        };
        let [c_out, wc_in, kh, kw] = match *weight {
            [a, b, c, d] => [a, b, c, d],
            _ => return Err(domain!("conv2d weight must be [Co, Ci, k, k], got {:?}", weight)),
        };
        if wc_in != c_in {
            return Err(domain!(
                "conv2d weight expects {} input channels, input has {}",
                wc_in,
                c_in
            ));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(domain!("conv2d kernel must be square and odd, got {kh}x{kw}"));
        }
        if stride == 0 {
            return Err(domain!("conv2d stride must be positive"));
        }
        if let Some(b) = bias {
            if b != [c_out] {
                return Err(domain!("conv2d bias must be [{}], got {:?}", c_out, b));
            }
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(domain!("conv2d kernel {kh} larger than padded input {h}x{w}"));
        }
        Ok(Self {
            c_in,
            h,
            w,
            c_out,
            k: kh,
            stride,
            padding,
            h_out: (h + 2 * padding - kh) / stride + 1,
            w_out: (w + 2 * padding - kw) / stride + 1,
        })
    }

    #[inline]
    pub fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    #[inline]
    pub fn out_pixels(&self) -> usize {
        self.h_out * self.w_out
    }

    /// 1×1, stride 1, no padding: the input already is its column matrix.
    #[inline]
    pub fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.padding == 0
    }

    /// Output columns `ox` whose input column `ox*stride + kx - padding`
    /// lies inside the image.
    #[inline]
    fn valid_range(&self, kx: usize, out: usize, size: usize) -> (usize, usize) {
        let off = kx as isize - self.padding as isize;
        let s = self.stride as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= size - 1
        let hi_num = size as isize - 1 - off;
        let hi = if hi_num < 0 { -1 } else { hi_num / s };
        let lo = lo.min(out as isize) as usize;
        let hi = (hi + 1).clamp(lo as isize, out as isize) as usize;
        (lo, hi)
    }
}

pub(crate) fn im2col<T: Real>(input: &[T], g: &ConvGeometry) -> Vec<T> {
    let p = g.out_pixels();
    let mut cols = vec![T::zero(); g.patch_len() * p];
    for c in 0..g.c_in {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            let (oy0, oy1) = g.valid_range(ky, g.h_out, g.h);
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (ox0, ox1) = g.valid_range(kx, g.w_out, g.w);
                if ox0 >= ox1 {
                    continue;
                }
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ky - g.padding;
                    let src_row = &plane[iy * g.w..(iy + 1) * g.w];
                    let out_row = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    if g.stride == 1 {
                        let ix0 = ox0 + kx - g.padding;
                        out_row[ox0..ox1].copy_from_slice(&src_row[ix0..ix0 + (ox1 - ox0)]);
                    } else {
                        for ox in ox0..ox1 {
                            out_row[ox] = src_row[ox * g.stride + kx - g.padding];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-adds a column-gradient matrix back onto an input gradient.
pub(crate) fn col2im<T: Real>(cols: &[T], g: &ConvGeometry, grad_input: &mut [T]) {
    let p = g.out_pixels();
    for c in 0..g.c_in {
        let plane = &mut grad_input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            let (oy0, oy1) = g.valid_range(ky, g.h_out, g.h);
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * p..(row + 1) * p];
                let (ox0, ox1) = g.valid_range(kx, g.w_out, g.w);
                if ox0 >= ox1 {
                    continue;
                }
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ky - g.padding;
                    let dst_row = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let col_row = &src[oy * g.w_out..(oy + 1) * g.w_out];
                    if g.stride == 1 {
                        let ix0 = ox0 + kx - g.padding;
                        let dst = &mut dst_row[ix0..ix0 + (ox1 - ox0)];
                        for (d, &v) in dst.iter_mut().zip(&col_row[ox0..ox1]) {
                            *d += v;
                        }
                    } else {
                        for ox in ox0..ox1 {
                            dst_row[ox * g.stride + kx - g.padding] += col_row[ox];
                        }
                    }
                }
            }
        }
    }
}

/// `weight · cols + bias`, writing `[C_out, H'·W']`.
pub(crate) fn conv_gemm<T: Real>(
    g: &ConvGeometry,
    weight: &[T],
    cols: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let p = g.out_pixels();
    let kk = g.patch_len();
    let mut out = vec![T::zero(); g.c_out * p];
    if let Some(b) = bias {
        for (row, &bv) in out.chunks_exact_mut(p).zip(b) {
            row.fill(bv);
        }
    }
    T::gemm(
        g.c_out,
        kk,
        p,
        T::one(),
        weight,
        (kk as isize, 1),
        cols,
        (p as isize, 1),
        T::one(),
        &mut out,
        (p as isize, 1),
    );
    out
}

/// Tape-free convolution, used by inference helpers and as the reference
/// path in tests of the tape operator.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(
        input.shape(),
        weight.shape(),
        bias.map(|b| b.shape()),
        stride,
        padding,
    )?;
    let data = if g.is_pointwise() {
        conv_gemm(&g, weight.data(), input.data(), bias.map(|b| b.data()))
    } else {
        let cols = im2col(input.data(), &g);
        conv_gemm(&g, weight.data(), &cols, bias.map(|b| b.data()))
    };
    Tensor::from_vec(&[g.c_out, g.h_out, g.w_out], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_bruteforce() {
        for size in 1..9 {
            for k in [1usize, 3, 5] {
                for padding in 0..=k / 2 + 1 {
                    for stride in 1..4 {
                        if size + 2 * padding < k {
                            continue;
                        }
                        let g = ConvGeometry::new(&[1, size, size], &[1, 1, k, k], None, stride, padding)
                            .unwrap();
                        for kx in 0..k {
                            let brute: Vec<usize> = (0..g.w_out)
                                .filter(|&o| {
                                    let i = (o * stride + kx) as isize - padding as isize;
                                    i >= 0 && i < size as isize
                                })
                                .collect();
                            let (lo, hi) = g.valid_range(kx, g.w_out, size);
                            let got: Vec<usize> = (lo..hi).collect();
                            assert_eq!(got, brute, "size {size} k {k} p {padding} s {stride} kx {kx}");
                        }
                    }
                }
            }
        }
    }
}
