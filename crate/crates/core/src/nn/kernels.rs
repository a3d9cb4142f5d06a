/// Row and column strides of a logical matrix inside a flat buffer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    rs: isize,
    cs: isize,
}

impl Layout {
    /// Matrix stored row-major with `cols` columns.
    pub fn row_major(cols: usize) -> Self {
        Layout {
            rs: cols as isize,
            cs: 1,
        }
    }

    /// Transpose of a matrix stored row-major with `stored_cols` columns.
    pub fn transposed(stored_cols: usize) -> Self {
        Layout {
            rs: 1,
            cs: stored_cols as isize,
        }
    }
}

/// `c[m, n] = a[m, k] · b[k, n] + beta · c`, with `c` row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f32], la: Layout, b: &[f32], lb: Layout, c: &mut [f32], beta: f32) {
    assert!(c.len() >= m * n, "gemm output too small");
    assert!(a.len() >= m * k && b.len() >= k * n, "gemm input too small");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the strides address only elements inside `a`, `b` and `c`:
    // each layout spans at most rows·cols contiguous values, checked above.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            la.rs,
            la.cs,
            b.as_ptr(),
            lb.rs,
            lb.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a square-kernel convolution over one `[C, H, W]` image.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn conv(channels: usize, in_h: usize, in_w: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        ConvGeometry {
            channels,
            in_h,
            in_w,
            kernel,
            stride,
            pad,
            out_h: conv_out_size(in_h, kernel, stride, pad),
            out_w: conv_out_size(in_w, kernel, stride, pad),
        }
    }

    /// Input coordinate read by output position `o` and kernel tap `t`.
    fn source(&self, o: usize, t: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + t) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }
}

pub(crate) fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// `cols[(c·k + ky)·k + kx, oy·out_w + ox] = image[c, oy·s − p + ky, ox·s − p + kx]`.
pub(crate) fn im2col(geo: &ConvGeometry, image: &[f32], cols: &mut [f32]) {
    let k = geo.kernel;
    let p = geo.out_h * geo.out_w;
    for c in 0..geo.channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * p..][..p];
                for oy in 0..geo.out_h {
                    let dst = &mut row[oy * geo.out_w..(oy + 1) * geo.out_w];
                    match geo.source(oy, ky, geo.in_h) {
                        None => dst.fill(0.0),
                        Some(iy) => {
                            let src = &image[(c * geo.in_h + iy) * geo.in_w..][..geo.in_w];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                *d = geo.source(ox, kx, geo.in_w).map_or(0.0, |ix| src[ix]);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back onto the image.
pub(crate) fn col2im(geo: &ConvGeometry, cols: &[f32], image: &mut [f32]) {
    let k = geo.kernel;
    let p = geo.out_h * geo.out_w;
    for c in 0..geo.channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * p..][..p];
                for oy in 0..geo.out_h {
                    let Some(iy) = geo.source(oy, ky, geo.in_h) else { continue };
                    let dst = &mut image[(c * geo.in_h + iy) * geo.in_w..][..geo.in_w];
                    for ox in 0..geo.out_w {
                        if let Some(ix) = geo.source(ox, kx, geo.in_w) {
                            dst[ix] += row[oy * geo.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}
