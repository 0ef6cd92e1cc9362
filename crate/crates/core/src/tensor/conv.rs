//! Stride-1 "same" convolution via im2col + GEMM.
//!
//! Layout: input item `[cin, h, w]`, weight `[cout, cin, k, k]`, columns
//! `[cin * k * k, h * w]`. Padding is `(k - 1) * dilation / 2` per side.

use rayon::prelude::*;

use super::Real;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub dilation: usize,
}

impl ConvGeom {
    fn pad(&self) -> isize {
        ((self.k - 1) * self.dilation / 2) as isize
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn hw(&self) -> usize {
        self.h * self.w
    }

    /// Valid `x` range for kernel column offset `dx`: positions whose source
    /// pixel `x + dx` lies inside the image.
    fn x_range(&self, dx: isize) -> (usize, usize) {
        let lo = (-dx).max(0) as usize;
        let hi = (self.w as isize - dx).clamp(0, self.w as isize) as usize;
        (lo.min(hi), hi)
    }
}

fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let (h, w, hw, k) = (g.h, g.w, g.hw(), g.k);
    let pad = g.pad();
    let d = g.dilation as isize;
    for ci in 0..g.cin {
        let src = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize * d - pad;
            for kx in 0..k {
                let dx = kx as isize * d - pad;
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let (x0, x1) = g.x_range(dx);
                for y in 0..h {
                    let out = &mut dst[y * w..(y + 1) * w];
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        out.fill(T::zero());
                        continue;
                    }
                    let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                    out[..x0].fill(T::zero());
                    out[x1..].fill(T::zero());
                    let s0 = (x0 as isize + dx) as usize;
                    out[x0..x1].copy_from_slice(&srow[s0..s0 + (x1 - x0)]);
                }
            }
        }
    }
}

fn col2im_add<T: Real>(g: &ConvGeom, cols: &[T], dx_out: &mut [T]) {
    let (h, w, hw, k) = (g.h, g.w, g.hw(), g.k);
    let pad = g.pad();
    let d = g.dilation as isize;
    for ci in 0..g.cin {
        let dst = &mut dx_out[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize * d - pad;
            for kx in 0..k {
                let dx = kx as isize * d - pad;
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let (x0, x1) = g.x_range(dx);
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = (x0 as isize + dx) as usize;
                    let drow = &mut dst[sy as usize * w + s0..sy as usize * w + s0 + (x1 - x0)];
                    for (o, &v) in drow.iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                        *o += v;
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Real>(g: &ConvGeom, input: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let (hw, rows) = (g.hw(), g.rows());
    let item_in = g.cin * hw;
    let item_out = g.cout * hw;
    let mut out = vec![T::zero(); g.n * item_out];
    out.par_chunks_mut(item_out)
        .zip(input.par_chunks(item_in))
        .for_each_init(Vec::new, |cols, (o, x)| {
            let cols_ref: &[T] = if g.k == 1 {
                x
            } else {
                cols.resize(rows * hw, T::zero());
                im2col(g, x, cols);
                cols
            };
            for (co, plane) in o.chunks_mut(hw).enumerate() {
                plane.fill(bias[co]);
            }
            T::gemm(
                g.cout,
                rows,
                hw,
                weight,
                (rows as isize, 1),
                cols_ref,
                (hw as isize, 1),
                T::one(),
                o,
                (hw as isize, 1),
            );
        });
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn backward<T: Real>(
    g: &ConvGeom,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (need_x, need_w, need_b) = need;
    let (hw, rows) = (g.hw(), g.rows());
    let item_in = g.cin * hw;
    let item_out = g.cout * hw;

    let bias = need_b.then(|| {
        let mut db = vec![T::zero(); g.cout];
        for item in grad_out.chunks(item_out) {
            for (co, plane) in item.chunks(hw).enumerate() {
                db[co] += plane.iter().copied().sum::<T>();
            }
        }
        db
    });

    let mut dx = need_x.then(|| vec![T::zero(); g.n * item_in]);

    // Per-item weight gradients are reduced afterwards in batch order so the
    // result does not depend on scheduling.
    let per_item: Vec<Option<Vec<T>>> = match dx.as_mut() {
        Some(dx) => dx
            .par_chunks_mut(item_in)
            .zip(input.par_chunks(item_in))
            .zip(grad_out.par_chunks(item_out))
            .map(|((dxi, x), go)| item_backward(g, x, weight, go, Some(dxi), need_w))
            .collect(),
        None => input
            .par_chunks(item_in)
            .zip(grad_out.par_chunks(item_out))
            .map(|(x, go)| item_backward(g, x, weight, go, None, need_w))
            .collect(),
    };

    let weight_grad = need_w.then(|| {
        let mut dw = vec![T::zero(); g.cout * rows];
        for item in per_item.into_iter().flatten() {
            for (a, b) in dw.iter_mut().zip(item) {
                *a += b;
            }
        }
        dw
    });

    ConvGrads {
        input: dx,
        weight: weight_grad,
        bias,
    }
}

fn item_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    go: &[T],
    dx: Option<&mut [T]>,
    need_w: bool,
) -> Option<Vec<T>> {
    let (hw, rows) = (g.hw(), g.rows());
    let mut dw = None;
    if need_w {
        let mut cols_buf = Vec::new();
        let cols: &[T] = if g.k == 1 {
            x
        } else {
            cols_buf.resize(rows * hw, T::zero());
            im2col(g, x, &mut cols_buf);
            &cols_buf
        };
        let mut w = vec![T::zero(); g.cout * rows];
        // dW = dOut · colsᵀ
        T::gemm(
            g.cout,
            hw,
            rows,
            go,
            (hw as isize, 1),
            cols,
            (1, hw as isize),
            T::zero(),
            &mut w,
            (rows as isize, 1),
        );
        dw = Some(w);
    }
    if let Some(dx) = dx {
        // dCols = Wᵀ · dOut
        if g.k == 1 {
            T::gemm(
                rows,
                g.cout,
                hw,
                weight,
                (1, rows as isize),
                go,
                (hw as isize, 1),
                T::zero(),
                dx,
                (hw as isize, 1),
            );
        } else {
            let mut dcols = vec![T::zero(); rows * hw];
            T::gemm(
                rows,
                g.cout,
                hw,
                weight,
                (1, rows as isize),
                go,
                (hw as isize, 1),
                T::zero(),
                &mut dcols,
                (hw as isize, 1),
            );
            col2im_add(g, &dcols, dx);
        }
    }
    dw
}
