//! im2col / col2im kernels shared by the convolution and transposed
//! convolution ops.

/// Spatial geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }
}

/// Unfolds one [C,H,W] image into a [C*k*k, Ho*Wo] column block written at
/// `col[.. , col_offset..col_offset+Ho*Wo]` of a row-major matrix with
/// `col_stride` columns. Out-of-bounds taps read zero.
pub fn im2col(x: &[f32], g: &ConvGeom, col: &mut [f32], col_offset: usize, col_stride: usize) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let hw = g.height * g.width;
    for c in 0..g.channels {
        let plane = &x[c * hw..(c + 1) * hw];
        for ka in 0..g.kernel {
            for kb in 0..g.kernel {
                let row = (c * g.kernel + ka) * g.kernel + kb;
                let out_row = &mut col[row * col_stride + col_offset..];
                for i in 0..ho {
                    let yi = (i * g.stride + ka) as isize - g.pad as isize;
                    if yi < 0 || yi >= g.height as isize {
                        for j in 0..wo {
                            out_row[i * wo + j] = 0.0;
                        }
                        continue;
                    }
                    let src = &plane[yi as usize * g.width..(yi as usize + 1) * g.width];
                    for j in 0..wo {
                        let xj = (j * g.stride + kb) as isize - g.pad as isize;
                        out_row[i * wo + j] = if xj < 0 || xj >= g.width as isize {
                            0.0
                        } else {
                            src[xj as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatter-adds a column block back into a [C,H,W]
/// image buffer (which the caller must have zeroed or pre-filled).
pub fn col2im(col: &[f32], g: &ConvGeom, col_offset: usize, col_stride: usize, x: &mut [f32]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let hw = g.height * g.width;
    for c in 0..g.channels {
        let plane = &mut x[c * hw..(c + 1) * hw];
        for ka in 0..g.kernel {
            for kb in 0..g.kernel {
                let row = (c * g.kernel + ka) * g.kernel + kb;
                let in_row = &col[row * col_stride + col_offset..];
                for i in 0..ho {
                    let yi = (i * g.stride + ka) as isize - g.pad as isize;
                    if yi < 0 || yi >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[yi as usize * g.width..(yi as usize + 1) * g.width];
                    for j in 0..wo {
                        let xj = (j * g.stride + kb) as isize - g.pad as isize;
                        if xj >= 0 && (xj as usize) < g.width {
                            dst[xj as usize] += in_row[i * wo + j];
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

    #[test]
    fn im2col_col2im_adjoint() {
        // <im2col(x), c> == <x, col2im(c)> for random x, c.
        let g = ConvGeom {
            channels: 2,
            height: 5,
            width: 4,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        let n_x = g.channels * g.height * g.width;
        let n_col = g.col_rows() * g.out_height() * g.out_width();
        let mut rng = crate::numcore::Rng::new(11);
        let mut x = vec![0.0; n_x];
        let mut c = vec![0.0; n_col];
        rng.fill_normal(&mut x);
        rng.fill_normal(&mut c);

        let cols = g.out_height() * g.out_width();
        let mut col = vec![0.0; n_col];
        im2col(&x, &g, &mut col, 0, cols);
        let lhs: f64 = col.iter().zip(&c).map(|(a, b)| (*a as f64) * (*b as f64)).sum();

        let mut back = vec![0.0; n_x];
        col2im(&c, &g, 0, cols, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        assert!((lhs - rhs).abs() < 1e-3, "{lhs} vs {rhs}");
    }
}
