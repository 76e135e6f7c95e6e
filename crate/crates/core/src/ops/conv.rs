use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dGeometry {
    pub fn new<T: Element>(
        input: &Tensor<T>,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let (n, cin, h, w) = input.dims4()?;
        let (cout, wcin, kh, kw) = weight.dims4().map_err(|_| {
            Error::shape(
                "conv2d",
                format!("weight must be [Cout,Cin,Kh,Kw], got {:?}", weight.shape()),
            )
        })?;
        if wcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("input has {cin} channels but weight expects {wcin}"),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape(
                "conv2d",
                format!("kernel must be odd-sized, got {kh}x{kw}"),
            ));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be at least 1"));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} exceeds padded input {h}x{w} (padding {padding})"),
            ));
        }
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias must be [{cout}], got {:?}", b.shape()),
                ));
            }
        }
        Ok(Self {
            batch: n,
            in_channels: cin,
            out_channels: cout,
            in_h: h,
            in_w: w,
            kernel_h: kh,
            kernel_w: kw,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
            stride,
            padding,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfolds one sample into a `[Cin*Kh*Kw, Ho*Wo]` column matrix.
    fn im2col<T: Element>(&self, x: &[T], cols: &mut [T]) {
        let p = self.out_pixels();
        let pad = self.padding as isize;
        for c in 0..self.in_channels {
            let plane = &x[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ki in 0..self.kernel_h {
                for kj in 0..self.kernel_w {
                    let row = (c * self.kernel_h + ki) * self.kernel_w + kj;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oi in 0..self.out_h {
                        let ii = (oi * self.stride + ki) as isize - pad;
                        let out_row = &mut dst[oi * self.out_w..(oi + 1) * self.out_w];
                        if ii < 0 || ii >= self.in_h as isize {
                            out_row.fill(T::zero());
                            continue;
                        }
                        let src = &plane[ii as usize * self.in_w..(ii as usize + 1) * self.in_w];
                        for (oj, o) in out_row.iter_mut().enumerate() {
                            let jj = (oj * self.stride + kj) as isize - pad;
                            *o = if jj < 0 || jj >= self.in_w as isize {
                                T::zero()
                            } else {
                                src[jj as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Element>(&self, cols: &[T], dx: &mut [T]) {
        let p = self.out_pixels();
        let pad = self.padding as isize;
        for c in 0..self.in_channels {
            let plane = &mut dx[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ki in 0..self.kernel_h {
                for kj in 0..self.kernel_w {
                    let row = (c * self.kernel_h + ki) * self.kernel_w + kj;
                    let src = &cols[row * p..(row + 1) * p];
                    for oi in 0..self.out_h {
                        let ii = (oi * self.stride + ki) as isize - pad;
                        if ii < 0 || ii >= self.in_h as isize {
                            continue;
                        }
                        let dst = &mut plane[ii as usize * self.in_w..(ii as usize + 1) * self.in_w];
                        for oj in 0..self.out_w {
                            let jj = (oj * self.stride + kj) as isize - pad;
                            if jj >= 0 && jj < self.in_w as isize {
                                dst[jj as usize] += src[oi * self.out_w + oj];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Zero-padded 2-D cross-correlation. Output spatial size is
/// `floor((H + 2*padding - Kh) / stride) + 1`.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = Conv2dGeometry::new(input, weight, bias, stride, padding)?;
    let k = g.patch_len();
    let p = g.out_pixels();
    let in_len = g.in_channels * g.in_h * g.in_w;
    let out_len = g.out_channels * p;
    let x = input.data();
    let w = weight.data();
    let mut out = vec![T::zero(); g.batch * out_len];
    out.par_chunks_mut(out_len)
        .enumerate()
        .for_each(|(n, out_n)| {
            let mut cols = vec![T::zero(); k * p];
            g.im2col(&x[n * in_len..(n + 1) * in_len], &mut cols);
            for co in 0..g.out_channels {
                let dst = &mut out_n[co * p..(co + 1) * p];
                if let Some(b) = bias {
                    dst.fill(b.data()[co]);
                }
                let w_row = &w[co * k..(co + 1) * k];
                for (kk, &wv) in w_row.iter().enumerate() {
                    let src = &cols[kk * p..(kk + 1) * p];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += wv * s;
                    }
                }
            }
        });
    Ok(Tensor::from_parts(
        vec![g.batch, g.out_channels, g.out_h, g.out_w],
        out,
    ))
}

pub struct Conv2dGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
    grad_out: &Tensor<T>,
) -> Result<Conv2dGrads<T>> {
    let g = Conv2dGeometry::new(input, weight, None, stride, padding)?;
    let expected = [g.batch, g.out_channels, g.out_h, g.out_w];
    if grad_out.shape() != expected {
        return Err(Error::shape(
            "conv2d_backward",
            format!("grad shape {:?} != output shape {expected:?}", grad_out.shape()),
        ));
    }
    let k = g.patch_len();
    let p = g.out_pixels();
    let in_len = g.in_channels * g.in_h * g.in_w;
    let out_len = g.out_channels * p;
    let x = input.data();
    let w = weight.data();
    let dy = grad_out.data();

    // Per-sample partials, reduced below in sample order so results do not
    // depend on thread scheduling.
    let partials: Vec<(Vec<T>, Vec<T>, Vec<T>)> = (0..g.batch)
        .into_par_iter()
        .map(|n| {
            let mut cols = vec![T::zero(); k * p];
            g.im2col(&x[n * in_len..(n + 1) * in_len], &mut cols);
            let dy_n = &dy[n * out_len..(n + 1) * out_len];
            let mut dw = vec![T::zero(); g.out_channels * k];
            let mut db = vec![T::zero(); g.out_channels];
            let mut dcols = vec![T::zero(); k * p];
            for co in 0..g.out_channels {
                let dy_row = &dy_n[co * p..(co + 1) * p];
                db[co] = dy_row.iter().copied().sum();
                for kk in 0..k {
                    let col = &cols[kk * p..(kk + 1) * p];
                    dw[co * k + kk] = dy_row.iter().zip(col).map(|(&a, &b)| a * b).sum();
                    let wv = w[co * k + kk];
                    let dcol = &mut dcols[kk * p..(kk + 1) * p];
                    for (d, &s) in dcol.iter_mut().zip(dy_row) {
                        *d += wv * s;
                    }
                }
            }
            let mut dx = vec![T::zero(); in_len];
            g.col2im(&dcols, &mut dx);
            (dx, dw, db)
        })
        .collect();

    let mut dx = Vec::with_capacity(g.batch * in_len);
    let mut dw = vec![T::zero(); g.out_channels * k];
    let mut db = vec![T::zero(); g.out_channels];
    for (dx_n, dw_n, db_n) in partials {
        dx.extend_from_slice(&dx_n);
        for (a, b) in dw.iter_mut().zip(&dw_n) {
            *a += *b;
        }
        for (a, b) in db.iter_mut().zip(&db_n) {
            *a += *b;
        }
    }
    Ok(Conv2dGrads {
        input: Tensor::from_parts(input.shape().to_vec(), dx),
        weight: Tensor::from_parts(weight.shape().to_vec(), dw),
        bias: Tensor::from_parts(vec![g.out_channels], db),
    })
}
