use ndarray::{Array4, ArrayView3, ArrayViewMut3};

/// Batch of feature maps in NCHW layout.
pub type Tensor = Array4<f32>;

/// Output edge length of a convolution.
pub fn conv_out(size: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - kernel) / stride + 1
}

/// Unfold one `C×H×W` image into a `(C·k·k) × (Ho·Wo)` column matrix stored
/// row-major in `cols`.
pub fn im2col(x: ArrayView3<f32>, kernel: usize, stride: usize, pad: usize, cols: &mut [f32]) {
    let (c, h, w) = x.dim();
    let ho = conv_out(h, kernel, stride, pad);
    let wo = conv_out(w, kernel, stride, pad);
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let plane = ho * wo;
    debug_assert_eq!(cols.len(), c * kernel * kernel * plane);
    for ci in 0..c {
        let img = &src[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (ci * kernel + ky) * kernel + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let line = &img[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *o = if ix < 0 || ix >= w as isize { 0.0 } else { line[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add a column matrix back into `dx`.
pub fn col2im(cols: &[f32], kernel: usize, stride: usize, pad: usize, mut dx: ArrayViewMut3<f32>) {
    let (c, h, w) = dx.dim();
    let ho = conv_out(h, kernel, stride, pad);
    let wo = conv_out(w, kernel, stride, pad);
    let plane = ho * wo;
    let dst = dx.as_slice_mut().expect("standard layout");
    for ci in 0..c {
        let img = &mut dst[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (ci * kernel + ky) * kernel + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let line = &mut img[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            line[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)>
        let x = Array3::from_shape_fn((2, 5, 4), |(c, i, j)| (c * 31 + i * 7 + j) as f32 * 0.1 - 1.0);
        let (k, s, p) = (3, 2, 1);
        let ho = conv_out(5, k, s, p);
        let wo = conv_out(4, k, s, p);
        let n = 2 * k * k * ho * wo;
        let mut cols = vec![0.0; n];
        im2col(x.view(), k, s, p, &mut cols);
        let y: Vec<f32> = (0..n).map(|i| ((i * 13) % 7) as f32 - 3.0).collect();
        let lhs: f32 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut dx = Array3::zeros((2, 5, 4));
        col2im(&y, k, s, p, dx.view_mut());
        let rhs: f32 = x.iter().zip(dx.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-3, "{lhs} vs {rhs}");
    }
}
