//! Raw loops behind the tape primitives.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Trans {
    No,
    Yes,
}

/// `c = a * b + beta * c`, with `a` logically `[m, k]` and `b` `[k, n]`
/// after the requested transposes; all buffers dense row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: Trans,
    b: &[f64],
    tb: Trans,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match ta {
        Trans::No => (k as isize, 1),
        Trans::Yes => (1, m as isize),
    };
    let (rsb, csb) = match tb {
        Trans::No => (n as isize, 1),
        Trans::Yes => (1, k as isize),
    };
    // SAFETY: the strides above describe exactly the `m*k`, `k*n` and `m*n`
    // element buffers checked in the debug assertions.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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
        );
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeom {
    pub fn oh(&self) -> usize {
        self.h - self.kh + 1
    }

    pub fn ow(&self) -> usize {
        self.w - self.kw + 1
    }
}

/// Unfolds one `[C, H, W]` image into `[C*KH*KW, OH*OW]`.
pub(crate) fn im2col(img: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let (oh, ow) = (g.oh(), g.ow());
    let p = oh * ow;
    let mut row = 0;
    for c in 0..g.c {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let src = &plane[(oy + ky) * g.w + kx..(oy + ky) * g.w + kx + ow];
                    dst[oy * ow..(oy + 1) * ow].copy_from_slice(src);
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`], accumulating into `img`.
pub(crate) fn col2im_add(col: &[f64], g: &ConvGeom, img: &mut [f64]) {
    let (oh, ow) = (g.oh(), g.ow());
    let p = oh * ow;
    let mut row = 0;
    for c in 0..g.c {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let dst = &mut plane[(oy + ky) * g.w + kx..(oy + ky) * g.w + kx + ow];
                    for (d, s) in dst.iter_mut().zip(&src[oy * ow..(oy + 1) * ow]) {
                        *d += s;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Product weight of world `w` under per-variable probabilities `probs`,
/// optionally leaving out one variable's factor.
pub(crate) fn world_weight(probs: &[f64], w: usize, skip: Option<usize>) -> f64 {
    let n = probs.len();
    let mut acc = 1.0;
    for (i, &p) in probs.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        acc *= if crate::logic::bit(w, i, n) { p } else { 1.0 - p };
    }
    acc
}
