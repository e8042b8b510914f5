//! Dense numeric kernels shared by the graph ops. GEMM is delegated to
//! `matrixmultiply`; convolution is im2col + GEMM.

/// Strided matrix view for [`gemm`].
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub rs: isize,
    pub cs: isize,
}

impl<'a> Mat<'a> {
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: cols as isize, cs: 1 }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: 1, cs: cols as isize }
    }
}

/// `c = alpha * a(m×k) · b(k×n) + beta * c`, with `c` row-major `m×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, alpha: f64, a: Mat, b: Mat, beta: f64, c: &mut [f64]) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c[..m * n].iter_mut() {
            *v *= beta;
        }
        return;
    }
    let max_a = (m as isize - 1) * a.rs + (k as isize - 1) * a.cs;
    let max_b = (k as isize - 1) * b.rs + (n as isize - 1) * b.cs;
    assert!(max_a >= 0 && (max_a as usize) < a.data.len(), "gemm: lhs view out of bounds");
    assert!(max_b >= 0 && (max_b as usize) < b.data.len(), "gemm: rhs view out of bounds");
    // SAFETY: the asserts above bound every element the views address, and
    // `c` holds at least m*n contiguous row-major elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    fn col_rows(&self) -> usize {
        self.in_per_group() * self.kernel * self.kernel
    }
}

fn im2col(geo: &ConvGeometry, image: &[f64], group: usize, cols: &mut [f64]) {
    let (oh, ow) = (geo.out_height(), geo.out_width());
    let hw = geo.height * geo.width;
    let k = geo.kernel;
    let cg = geo.in_per_group();
    for c in 0..cg {
        let plane = &image[(group * cg + c) * hw..(group * cg + c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * geo.stride + ky) as isize - geo.pad as isize;
                    for ox in 0..ow {
                        let ix = (ox * geo.stride + kx) as isize - geo.pad as isize;
                        dst[oy * ow + ox] = if iy >= 0
                            && ix >= 0
                            && (iy as usize) < geo.height
                            && (ix as usize) < geo.width
                        {
                            plane[iy as usize * geo.width + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add(geo: &ConvGeometry, cols: &[f64], group: usize, image: &mut [f64]) {
    let (oh, ow) = (geo.out_height(), geo.out_width());
    let hw = geo.height * geo.width;
    let k = geo.kernel;
    let cg = geo.in_per_group();
    for c in 0..cg {
        let plane = &mut image[(group * cg + c) * hw..(group * cg + c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * geo.stride + ky) as isize - geo.pad as isize;
                    if iy < 0 || iy as usize >= geo.height {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * geo.stride + kx) as isize - geo.pad as isize;
                        if ix >= 0 && (ix as usize) < geo.width {
                            plane[iy as usize * geo.width + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(geo: &ConvGeometry, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (oh, ow) = (geo.out_height(), geo.out_width());
    let ohw = oh * ow;
    let rows = geo.col_rows();
    let og = geo.out_per_group();
    let in_stride = geo.in_channels * geo.height * geo.width;
    let out_stride = geo.out_channels * ohw;
    let mut out = vec![0.0; geo.batch * out_stride];
    let mut cols = vec![0.0; rows * ohw];
    for b in 0..geo.batch {
        let image = &x[b * in_stride..(b + 1) * in_stride];
        for g in 0..geo.groups {
            im2col(geo, image, g, &mut cols);
            let wg = &w[g * og * rows..(g + 1) * og * rows];
            let dst = &mut out[b * out_stride + g * og * ohw..b * out_stride + (g + 1) * og * ohw];
            gemm(og, rows, ohw, 1.0, Mat::row_major(wg, rows), Mat::row_major(&cols, ohw), 0.0, dst);
        }
        if let Some(bias) = bias {
            for (c, &bv) in bias.iter().enumerate() {
                for v in &mut out[b * out_stride + c * ohw..b * out_stride + (c + 1) * ohw] {
                    *v += bv;
                }
            }
        }
    }
    out
}

/// Gradients of a convolution: (dx, dw, dbias).
pub(crate) fn conv2d_backward(
    geo: &ConvGeometry,
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    want_dx: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (oh, ow) = (geo.out_height(), geo.out_width());
    let ohw = oh * ow;
    let rows = geo.col_rows();
    let og = geo.out_per_group();
    let in_stride = geo.in_channels * geo.height * geo.width;
    let out_stride = geo.out_channels * ohw;
    let mut dx = if want_dx { vec![0.0; x.len()] } else { Vec::new() };
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; geo.out_channels];
    let mut cols = vec![0.0; rows * ohw];
    let mut dcols = vec![0.0; rows * ohw];
    for b in 0..geo.batch {
        let image = &x[b * in_stride..(b + 1) * in_stride];
        let dimg = &dout[b * out_stride..(b + 1) * out_stride];
        for (c, d) in db.iter_mut().enumerate() {
            *d += dimg[c * ohw..(c + 1) * ohw].iter().sum::<f64>();
        }
        for g in 0..geo.groups {
            im2col(geo, image, g, &mut cols);
            let dg = &dimg[g * og * ohw..(g + 1) * og * ohw];
            let dwg = &mut dw[g * og * rows..(g + 1) * og * rows];
            gemm(og, ohw, rows, 1.0, Mat::row_major(dg, ohw), Mat::transposed(&cols, ohw), 1.0, dwg);
            if want_dx {
                let wg = &w[g * og * rows..(g + 1) * og * rows];
                gemm(rows, og, ohw, 1.0, Mat::transposed(wg, rows), Mat::row_major(dg, ohw), 0.0, &mut dcols);
                col2im_add(geo, &dcols, g, &mut dx[b * in_stride..(b + 1) * in_stride]);
            }
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| v as f64 * 0.5).collect(); // 3x4
        let mut c = vec![0.0; 8];
        gemm(2, 3, 4, 1.0, Mat::row_major(&a, 3), Mat::row_major(&b, 4), 0.0, &mut c);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|k| a[i * 3 + k] * b[k * 4 + j]).sum();
                assert_eq!(c[i * 4 + j], want);
            }
        }
        // aᵀ·a via a transposed view: (3x2)(2x3)
        let mut c2 = vec![0.0; 9];
        gemm(3, 2, 3, 1.0, Mat::transposed(&a, 3), Mat::row_major(&a, 3), 0.0, &mut c2);
        assert_eq!(c2[0], 0.0 * 0.0 + 3.0 * 3.0);
        assert_eq!(c2[4], 1.0 + 16.0);
    }

    #[test]
    fn strided_conv_shape() {
        let geo = ConvGeometry {
            batch: 1,
            in_channels: 1,
            out_channels: 1,
            height: 32,
            width: 32,
            kernel: 3,
            stride: 2,
            pad: 1,
            groups: 1,
        };
        assert_eq!((geo.out_height(), geo.out_width()), (16, 16));
    }
}
