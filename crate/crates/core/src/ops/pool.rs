use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Effective `(window_h, window_w, out_h, out_w)` after clamping the window
/// to the spatial extent. Trailing partial windows produce an extra cell.
pub fn pool_geometry(h: usize, w: usize, window: usize) -> (usize, usize, usize, usize) {
    let wh = window.min(h).max(1);
    let ww = window.min(w).max(1);
    (wh, ww, h.div_ceil(wh), w.div_ceil(ww))
}

/// Non-overlapping average pooling. Each output cell is the mean of the
/// input elements inside its window; partial windows at the bottom/right
/// border average only their valid elements.
///
/// Sums are accumulated in `f64`, which makes the mean of a window of equal
/// `f32` values exact.
pub fn avg_pool2d<T: Element>(input: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
    if window == 0 {
        return Err(Error::shape("avg_pool2d", "window must be at least 1"));
    }
    let (n, c, h, w) = input.dims4()?;
    if window == 1 {
        return Ok(input.clone());
    }
    let (wh, ww, oh, ow) = pool_geometry(h, w, window);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in x.chunks_exact(h * w) {
        for oi in 0..oh {
            let r0 = oi * wh;
            let r1 = (r0 + wh).min(h);
            for oj in 0..ow {
                let c0 = oj * ww;
                let c1 = (c0 + ww).min(w);
                let mut acc = 0.0f64;
                for r in r0..r1 {
                    for v in &plane[r * w + c0..r * w + c1] {
                        acc += v.as_f64();
                    }
                }
                let count = ((r1 - r0) * (c1 - c0)) as f64;
                out.push(T::of_f64(acc / count));
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, oh, ow], out))
}

pub fn avg_pool2d_backward<T: Element>(
    input_shape: &[usize],
    window: usize,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = *input_shape else {
        return Err(Error::shape("avg_pool2d_backward", "input must be rank 4"));
    };
    if window <= 1 {
        return Ok(grad_out.clone());
    }
    let (wh, ww, oh, ow) = pool_geometry(h, w, window);
    if grad_out.shape() != [n, c, oh, ow] {
        return Err(Error::shape(
            "avg_pool2d_backward",
            format!("grad shape {:?} != [{n},{c},{oh},{ow}]", grad_out.shape()),
        ));
    }
    let mut dx = vec![T::zero(); n * c * h * w];
    for (plane, g) in dx.chunks_exact_mut(h * w).zip(grad_out.data().chunks_exact(oh * ow)) {
        for oi in 0..oh {
            let r0 = oi * wh;
            let r1 = (r0 + wh).min(h);
            for oj in 0..ow {
                let c0 = oj * ww;
                let c1 = (c0 + ww).min(w);
                let share = g[oi * ow + oj] / T::from_usize((r1 - r0) * (c1 - c0)).unwrap();
                for r in r0..r1 {
                    for d in &mut plane[r * w + c0..r * w + c1] {
                        *d += share;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(input_shape.to_vec(), dx))
}

/// Spatial mean per `(n, c)`; identical to [`avg_pool2d`] with a window
/// covering the whole map.
pub fn global_avg_pool<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, h, w) = input.dims4()?;
    avg_pool2d(input, h.max(w))
}

/// Nearest-neighbour resize to a larger grid, `src = floor(dst * in / out)`.
pub fn upsample_to<T: Element>(input: &Tensor<T>, target_h: usize, target_w: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    if target_h < h || target_w < w {
        return Err(Error::shape(
            "upsample_to",
            format!("target {target_h}x{target_w} is smaller than input {h}x{w}"),
        ));
    }
    let rows: Vec<usize> = (0..target_h).map(|i| i * h / target_h).collect();
    let cols: Vec<usize> = (0..target_w).map(|j| j * w / target_w).collect();
    let mut out = Vec::with_capacity(n * c * target_h * target_w);
    for plane in input.data().chunks_exact(h * w) {
        for &r in &rows {
            let src = &plane[r * w..(r + 1) * w];
            out.extend(cols.iter().map(|&cj| src[cj]));
        }
    }
    Ok(Tensor::from_parts(vec![n, c, target_h, target_w], out))
}

pub fn upsample_to_backward<T: Element>(input_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = *input_shape else {
        return Err(Error::shape("upsample_to_backward", "input must be rank 4"));
    };
    let (gn, gc, th, tw) = grad_out.dims4()?;
    if gn != n || gc != c || th < h || tw < w {
        return Err(Error::shape(
            "upsample_to_backward",
            format!("grad shape {:?} incompatible with input {input_shape:?}", grad_out.shape()),
        ));
    }
    let mut dx = vec![T::zero(); n * c * h * w];
    for (plane, g) in dx.chunks_exact_mut(h * w).zip(grad_out.data().chunks_exact(th * tw)) {
        for i in 0..th {
            let r = i * h / th;
            for j in 0..tw {
                plane[r * w + j * w / tw] += g[i * tw + j];
            }
        }
    }
    Ok(Tensor::from_parts(input_shape.to_vec(), dx))
}

/// Integer-factor nearest-neighbour upsampling: `out[i][j] = in[i / f][j / f]`.
pub fn upsample_nearest<T: Element>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::shape("upsample_nearest", "factor must be at least 1"));
    }
    let (_, _, h, w) = input.dims4()?;
    upsample_to(input, h * factor, w * factor)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn window_one_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f32>::randn(&[2, 3, 5, 4], 1.0, &mut rng);
        assert_eq!(avg_pool2d(&x, 1).unwrap(), x);
    }

    #[test]
    fn mean_of_four() {
        let x = Tensor::<f32>::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = avg_pool2d(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[2.5]);
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5]);
    }

    #[test]
    fn matches_brute_force_window_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::<f64>::randn(&[1, 2, 8, 8], 1.0, &mut rng);
        let y = avg_pool2d(&x, 4).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 2]);
        for c in 0..2 {
            for oi in 0..2 {
                for oj in 0..2 {
                    let mut s = 0.0;
                    for i in 0..4 {
                        for j in 0..4 {
                            s += x.at4(0, c, oi * 4 + i, oj * 4 + j);
                        }
                    }
                    assert!((y.at4(0, c, oi, oj) - s / 16.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn partial_windows_average_valid_elements() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 3, 3], |i| i as f64);
        let y = avg_pool2d(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        // [[0,1,2],[3,4,5],[6,7,8]]
        assert_eq!(y.data(), &[2.0, 3.5, 6.5, 8.0]);
        // window larger than the map is clamped
        let g = avg_pool2d(&x, 9).unwrap();
        assert_eq!(g.shape(), &[1, 1, 1, 1]);
        assert_eq!(g.data(), &[4.0]);
    }

    #[test]
    fn global_pool_matches_sum_over_area() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::randn(&[2, 3, 6, 4], 1.0, &mut rng);
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 1, 1]);
        for (k, plane) in x.data().chunks(24).enumerate() {
            let s: f64 = plane.iter().sum();
            assert!((y.data()[k] - s / 24.0).abs() < 1e-12);
        }
        let constant = Tensor::<f32>::full(&[1, 2, 3, 3], 1.75);
        assert!(global_avg_pool(&constant).unwrap().data().iter().all(|&v| v == 1.75));
    }

    #[test]
    fn upsample_replicates() {
        let x = Tensor::<f32>::full(&[1, 1, 1, 1], 7.0);
        let y = upsample_nearest(&x, 3).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 7.0));
        assert_eq!(upsample_nearest(&y, 1).unwrap(), y);
    }

    #[test]
    fn upsample_to_integer_multiple_matches_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f32>::randn(&[2, 2, 4, 4], 1.0, &mut rng);
        assert_eq!(upsample_to(&x, 8, 8).unwrap(), upsample_nearest(&x, 2).unwrap());
    }

    #[test]
    fn upsample_to_floor_index_map() {
        let x = Tensor::<f32>::from_fn(&[1, 1, 3, 3], |i| i as f32);
        let y = upsample_to(&x, 8, 8).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let (si, sj) = ((i * 3) as f64 / 8.0, (j * 3) as f64 / 8.0);
                let want = x.at4(0, 0, si.floor() as usize, sj.floor() as usize);
                assert_eq!(y.at4(0, 0, i, j), want);
            }
        }
        assert!(upsample_to(&x, 2, 8).is_err());
    }

    #[test]
    fn scalar_map_broadcasts() {
        let x = Tensor::<f32>::new(&[1, 2, 1, 1], vec![0.25, -1.0]).unwrap();
        let y = upsample_to(&x, 5, 3).unwrap();
        assert!(y.data()[..15].iter().all(|&v| v == 0.25));
        assert!(y.data()[15..].iter().all(|&v| v == -1.0));
    }
}
