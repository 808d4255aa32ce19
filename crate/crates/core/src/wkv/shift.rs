//! Depthwise token shifts: a 3x3 convolution within each frame and a
//! length-3 convolution along time. Both are cross-correlations with zero
//! padding, i.e. `y[i] = sum_a kernel[a] * x[i + a - 1]`.

use crate::error::{shape_err, Result};
use crate::numerics::graph::{BackCtx, Backward, Graph, Var};
use crate::numerics::real::Real;
use crate::numerics::tensor::Tensor;
use crate::wkv::layout::{FrameGrid, SeqLayout};

fn check_spatial<T: Real>(x: &Tensor<T>, grid: FrameGrid, kernel: &Tensor<T>) -> Result<usize> {
    if grid.h == 0 || grid.w == 0 || grid.frames == 0 {
        return shape_err(format!("spatial shift: empty grid {grid:?}"));
    }
    let d = x.last_dim();
    if x.rows() != grid.tokens() {
        return shape_err(format!("spatial shift: {} tokens vs grid {grid:?}", x.rows()));
    }
    if kernel.shape() != [3, 3, d] {
        return shape_err(format!("spatial shift: kernel {:?}, want [3, 3, {d}]", kernel.shape()));
    }
    Ok(d)
}

fn check_temporal<T: Real>(x: &Tensor<T>, layout: SeqLayout, kernel: &Tensor<T>) -> Result<usize> {
    if layout.len == 0 {
        return shape_err("temporal shift: empty sequence");
    }
    let d = x.last_dim();
    if x.rows() != layout.tokens() {
        return shape_err(format!("temporal shift: {} tokens vs {layout:?}", x.rows()));
    }
    if kernel.shape() != [3, d] {
        return shape_err(format!("temporal shift: kernel {:?}, want [3, {d}]", kernel.shape()));
    }
    Ok(d)
}

fn spatial_fwd<T: Real>(x: &[T], kernel: &[T], g: FrameGrid, d: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    let (h, w) = (g.h as isize, g.w as isize);
    for f in 0..g.frames {
        let fb = f * g.h * g.w;
        for i in 0..h {
            for j in 0..w {
                let out = (fb + (i * w + j) as usize) * d;
                for a in 0..3isize {
                    let si = i + a - 1;
                    if si < 0 || si >= h {
                        continue;
                    }
                    for b in 0..3isize {
                        let sj = j + b - 1;
                        if sj < 0 || sj >= w {
                            continue;
                        }
                        let src = (fb + (si * w + sj) as usize) * d;
                        let kr = &kernel[((a * 3 + b) as usize) * d..][..d];
                        for c in 0..d {
                            y[out + c] += kr[c] * x[src + c];
                        }
                    }
                }
            }
        }
    }
    y
}

fn temporal_fwd<T: Real>(x: &[T], kernel: &[T], layout: SeqLayout, d: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    let len = layout.len as isize;
    for s in 0..layout.sequences() {
        let (base, stride) = layout.seq(s, d);
        for t in 0..len {
            let out = base + t as usize * stride;
            for a in 0..3isize {
                let st = t + a - 1;
                if st < 0 || st >= len {
                    continue;
                }
                let src = base + st as usize * stride;
                let kr = &kernel[a as usize * d..][..d];
                for c in 0..d {
                    y[out + c] += kr[c] * x[src + c];
                }
            }
        }
    }
    y
}

/// 3x3 depthwise convolution inside every frame. `x` is `[frames*h*w, D]`,
/// `kernel` is `[3, 3, D]`.
pub fn token_shift_spatial<T: Real>(x: &Tensor<T>, grid: FrameGrid, kernel: &Tensor<T>) -> Result<Tensor<T>> {
    let d = check_spatial(x, grid, kernel)?;
    Tensor::new(x.shape(), spatial_fwd(x.data(), kernel.data(), grid, d))
}

/// Length-3 depthwise convolution along each sequence of `layout`; `kernel`
/// is `[3, D]`.
pub fn token_shift_temporal<T: Real>(x: &Tensor<T>, layout: SeqLayout, kernel: &Tensor<T>) -> Result<Tensor<T>> {
    let d = check_temporal(x, layout, kernel)?;
    Tensor::new(x.shape(), temporal_fwd(x.data(), kernel.data(), layout, d))
}

/// Centered identity kernels.
pub fn identity_kernel_spatial<T: Real>(d: usize) -> Tensor<T> {
    Tensor::from_fn(&[3, 3, d], |i| if i / d == 4 { T::one() } else { T::zero() })
}

pub fn identity_kernel_temporal<T: Real>(d: usize) -> Tensor<T> {
    Tensor::from_fn(&[3, d], |i| if i / d == 1 { T::one() } else { T::zero() })
}

struct SpatialShift {
    x: Var,
    kernel: Var,
    grid: FrameGrid,
}

impl<T: Real> Backward<T> for SpatialShift {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.kernel]
    }

    fn backward(&self, ctx: &BackCtx<'_, T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let x = ctx.value(self.x);
        let kernel = ctx.value(self.kernel);
        let d = x.last_dim();
        let g = self.grid;
        let (h, w) = (g.h as isize, g.w as isize);
        let mut dx = vec![T::zero(); x.len()];
        let mut dk = vec![T::zero(); kernel.len()];
        let (xd, kd, gd) = (x.data(), kernel.data(), gout.data());
        for f in 0..g.frames {
            let fb = f * g.h * g.w;
            for i in 0..h {
                for j in 0..w {
                    let out = (fb + (i * w + j) as usize) * d;
                    for a in 0..3isize {
                        let si = i + a - 1;
                        if si < 0 || si >= h {
                            continue;
                        }
                        for b in 0..3isize {
                            let sj = j + b - 1;
                            if sj < 0 || sj >= w {
                                continue;
                            }
                            let src = (fb + (si * w + sj) as usize) * d;
                            let ko = ((a * 3 + b) as usize) * d;
                            for c in 0..d {
                                dx[src + c] += kd[ko + c] * gd[out + c];
                                dk[ko + c] += xd[src + c] * gd[out + c];
                            }
                        }
                    }
                }
            }
        }
        vec![
            Some(Tensor::new(x.shape(), dx).unwrap()),
            Some(Tensor::new(kernel.shape(), dk).unwrap()),
        ]
    }
}

struct TemporalShift {
    x: Var,
    kernel: Var,
    layout: SeqLayout,
}

impl<T: Real> Backward<T> for TemporalShift {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.kernel]
    }

    fn backward(&self, ctx: &BackCtx<'_, T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let x = ctx.value(self.x);
        let kernel = ctx.value(self.kernel);
        let d = x.last_dim();
        let layout = self.layout;
        let len = layout.len as isize;
        let mut dx = vec![T::zero(); x.len()];
        let mut dk = vec![T::zero(); kernel.len()];
        let (xd, kd, gd) = (x.data(), kernel.data(), gout.data());
        for s in 0..layout.sequences() {
            let (base, stride) = layout.seq(s, d);
            for t in 0..len {
                let out = base + t as usize * stride;
                for a in 0..3isize {
                    let st = t + a - 1;
                    if st < 0 || st >= len {
                        continue;
                    }
                    let src = base + st as usize * stride;
                    let ko = a as usize * d;
                    for c in 0..d {
                        dx[src + c] += kd[ko + c] * gd[out + c];
                        dk[ko + c] += xd[src + c] * gd[out + c];
                    }
                }
            }
        }
        vec![
            Some(Tensor::new(x.shape(), dx).unwrap()),
            Some(Tensor::new(kernel.shape(), dk).unwrap()),
        ]
    }
}

impl<T: Real> Graph<T> {
    pub fn shift_spatial(&mut self, x: Var, kernel: Var, grid: FrameGrid) -> Result<Var> {
        let out = token_shift_spatial(self.value(x), grid, self.value(kernel))?;
        Ok(self.push(out, SpatialShift { x, kernel, grid }))
    }

    pub fn shift_temporal(&mut self, x: Var, kernel: Var, layout: SeqLayout) -> Result<Var> {
        let out = token_shift_temporal(self.value(x), layout, self.value(kernel))?;
        Ok(self.push(out, TemporalShift { x, kernel, layout }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::grad_check_many;
    use crate::numerics::rng::RngStream;

    #[test]
    fn identity_kernels_are_identity() {
        let mut rng = RngStream::new(0);
        let grid = FrameGrid { frames: 2, h: 3, w: 4 };
        let x = Tensor::<f64>::randn(&[grid.tokens(), 5], 1.0, &mut rng);
        let y = token_shift_spatial(&x, grid, &identity_kernel_spatial(5)).unwrap();
        assert_eq!(x, y);
        let layout = SeqLayout::temporal(2, 3, 4);
        let y = token_shift_temporal(&x, layout, &identity_kernel_temporal(5)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn constant_interior_preserved() {
        let grid = FrameGrid { frames: 1, h: 5, w: 5 };
        let x = Tensor::<f64>::full(&[25, 1], 2.5);
        let k = Tensor::new(&[3, 3, 1], vec![0.1, 0.05, 0.1, 0.2, 0.1, 0.05, 0.15, 0.05, 0.2]).unwrap();
        let y = token_shift_spatial(&x, grid, &k).unwrap();
        for i in 1..4 {
            for j in 1..4 {
                assert!((y.data()[i * 5 + j] - 2.5).abs() < 1e-12);
            }
        }
        // corners lose the padded taps
        assert!(y.data()[0] < 2.5);
    }

    #[test]
    fn spatial_impulse_response() {
        // 4x4 grid, impulse at (1, 2); cross-correlation places kernel tap
        // (a, b) at output (1 - (a-1), 2 - (b-1)), i.e. the flipped kernel.
        let grid = FrameGrid { frames: 1, h: 4, w: 4 };
        let mut x = Tensor::<f64>::zeros(&[16, 1]);
        x.data_mut()[4 + 2] = 1.0;
        let kv = [0.3, -1.2, 0.7, 2.0, 0.5, -0.4, 1.1, 0.9, -0.6];
        let k = Tensor::new(&[3, 3, 1], kv.to_vec()).unwrap();
        let y = token_shift_spatial(&x, grid, &k).unwrap();
        #[rustfmt::skip]
        let expected = [
            0.0, -0.6, 0.9,  1.1,
            0.0, -0.4, 0.5,  2.0,
            0.0,  0.7, -1.2, 0.3,
            0.0,  0.0, 0.0,  0.0,
        ];
        assert_eq!(y.data(), &expected);
    }

    #[test]
    fn temporal_impulse_and_single_frame() {
        let layout = SeqLayout::single(5);
        let mut x = Tensor::<f64>::zeros(&[5, 1]);
        x.data_mut()[2] = 1.0;
        let k = Tensor::new(&[3, 1], vec![0.25, -0.5, 2.0]).unwrap();
        let y = token_shift_temporal(&x, layout, &k).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0, -0.5, 0.25, 0.0]);

        let x1 = Tensor::new(&[1, 2], vec![3.0, -1.0]).unwrap();
        let k1 = Tensor::new(&[3, 2], vec![9.0, 9.0, 0.5, 4.0, 7.0, 7.0]).unwrap();
        let y1 = token_shift_temporal(&x1, SeqLayout::single(1), &k1).unwrap();
        assert_eq!(y1.data(), &[1.5, -4.0]);
    }

    #[test]
    fn empty_grid_is_shape_error() {
        let x = Tensor::<f64>::zeros(&[0, 2]);
        let grid = FrameGrid { frames: 1, h: 0, w: 3 };
        assert!(token_shift_spatial(&x, grid, &identity_kernel_spatial(2)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = RngStream::new(21);
        for seed in 0..20 {
            let grid = FrameGrid {
                frames: 1 + seed % 2,
                h: 1 + seed % 4,
                w: 2 + seed % 3,
            };
            let d = 1 + seed % 3;
            let layout = SeqLayout::temporal(1, grid.frames, grid.h * grid.w);
            let x = Tensor::randn(&[grid.tokens(), d], 1.0, &mut rng);
            let ks = Tensor::randn(&[3, 3, d], 1.0, &mut rng);
            let kt = Tensor::randn(&[3, d], 1.0, &mut rng);
            let probe = Tensor::randn(&[grid.tokens(), d], 1.0, &mut rng);
            let rep = grad_check_many(
                |g, v| {
                    let y = g.shift_spatial(v[0], v[1], grid).unwrap();
                    let y = g.shift_temporal(y, v[2], layout).unwrap();
                    g.weighted_sum(y, &probe)
                },
                &[x, ks, kt],
                1e-5,
            )
            .unwrap();
            assert!(rep.max_rel_err < 1e-6, "seed {seed}: {rep:?}");
        }
    }
}
