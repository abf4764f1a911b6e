//! 2×2 max pooling with recorded argmax positions and the matching
//! index-driven unpooling.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Argmax positions recorded by [`maxpool2x2`].
///
/// Each entry is the row-major offset of the window maximum inside its
/// pre-pool `(h, w)` plane.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    pooled: Shape,
    input_h: usize,
    input_w: usize,
    index: Vec<u32>,
}

pub fn pooled_extent(len: usize) -> usize {
    len.div_ceil(2)
}

impl PoolIndices {
    /// Assembles indices from raw parts. Only the length is checked here;
    /// positions are validated when the indices are replayed.
    pub fn from_raw(pooled: Shape, input_h: usize, input_w: usize, index: Vec<u32>) -> Result<Self> {
        if index.len() != pooled.len() {
            return Err(Error::CorruptIndices(format!(
                "{} indices for pooled shape {pooled}",
                index.len()
            )));
        }
        if pooled.h != pooled_extent(input_h) || pooled.w != pooled_extent(input_w) {
            return Err(Error::CorruptIndices(format!(
                "pooled plane {}×{} cannot come from {input_h}×{input_w}",
                pooled.h, pooled.w
            )));
        }
        Ok(PoolIndices {
            pooled,
            input_h,
            input_w,
            index,
        })
    }

    pub fn pooled_shape(&self) -> Shape {
        self.pooled
    }

    /// Pre-pool shape, restored exactly by unpooling.
    pub fn input_shape(&self) -> Shape {
        Shape::new(self.pooled.n, self.pooled.c, self.input_h, self.input_w)
    }

    pub fn indices(&self) -> &[u32] {
        &self.index
    }

    fn validate(&self, op: &'static str, pooled: Shape) -> Result<()> {
        if pooled != self.pooled {
            return Err(Error::shape(
                op,
                format!("tensor is {pooled} but indices were recorded for {}", self.pooled),
            ));
        }
        let pw = self.pooled.w;
        for (i, &idx) in self.index.iter().enumerate() {
            let idx = idx as usize;
            let (iy, ix) = (idx / self.input_w.max(1), idx % self.input_w.max(1));
            let cell = i % self.pooled.plane();
            let (py, px) = (cell / pw, cell % pw);
            if idx >= self.input_h * self.input_w || iy / 2 != py || ix / 2 != px {
                return Err(Error::CorruptIndices(format!(
                    "index {idx} for pooled cell ({py}, {px}) lies outside its window in a {}×{} plane",
                    self.input_h, self.input_w
                )));
            }
        }
        Ok(())
    }
}

/// 2×2 stride-2 max pooling in ceil mode. Edge windows on odd sizes are
/// clipped to the valid region; ties go to the earliest row-major position.
pub fn maxpool2x2<T: Scalar>(input: &Tensor<T>) -> (Tensor<T>, PoolIndices) {
    let s = input.shape();
    let (ph, pw) = (pooled_extent(s.h), pooled_extent(s.w));
    let pooled = Shape::new(s.n, s.c, ph, pw);
    let mut out = Vec::with_capacity(pooled.len());
    let mut index = Vec::with_capacity(pooled.len());
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = input.plane(n, c);
            for py in 0..ph {
                let y1 = (2 * py + 2).min(s.h);
                for px in 0..pw {
                    let x1 = (2 * px + 2).min(s.w);
                    let mut best = 2 * py * s.w + 2 * px;
                    for y in 2 * py..y1 {
                        for x in 2 * px..x1 {
                            let i = y * s.w + x;
                            if plane[i] > plane[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(plane[best]);
                    index.push(best as u32);
                }
            }
        }
    }
    let indices = PoolIndices {
        pooled,
        input_h: s.h,
        input_w: s.w,
        index,
    };
    (Tensor::from_vec(pooled, out).expect("pooled size"), indices)
}

/// Writes each pooled value at its recorded position in a zeroed tensor of
/// the recorded pre-pool size.
pub fn unpool2x2<T: Scalar>(pooled: &Tensor<T>, indices: &PoolIndices) -> Result<Tensor<T>> {
    indices.validate("unpool2x2", pooled.shape())?;
    let mut out = Tensor::zeros(indices.input_shape());
    let in_plane = indices.input_h * indices.input_w;
    let p_plane = indices.pooled.plane();
    for (plane_no, (vals, idx)) in pooled
        .data()
        .chunks(p_plane.max(1))
        .zip(indices.index.chunks(p_plane.max(1)))
        .enumerate()
    {
        let dst = &mut out.data_mut()[plane_no * in_plane..(plane_no + 1) * in_plane];
        for (&v, &i) in vals.iter().zip(idx) {
            dst[i as usize] = v;
        }
    }
    Ok(out)
}

/// Routes pooled gradients back to the recorded argmax positions.
pub fn maxpool2x2_backward<T: Scalar>(grad_output: &Tensor<T>, indices: &PoolIndices) -> Result<Tensor<T>> {
    unpool2x2(grad_output, indices)
}

/// Gathers the gradient at each recorded position; the adjoint of [`unpool2x2`].
pub fn unpool2x2_backward<T: Scalar>(grad_output: &Tensor<T>, indices: &PoolIndices) -> Result<Tensor<T>> {
    if grad_output.shape() != indices.input_shape() {
        return Err(Error::shape(
            "unpool2x2_backward",
            format!(
                "grad_output is {} but indices restore {}",
                grad_output.shape(),
                indices.input_shape()
            ),
        ));
    }
    indices.validate("unpool2x2_backward", indices.pooled)?;
    let in_plane = indices.input_h * indices.input_w;
    let p_plane = indices.pooled.plane().max(1);
    let data = indices
        .index
        .iter()
        .enumerate()
        .map(|(k, &i)| grad_output.data()[(k / p_plane) * in_plane + i as usize])
        .collect();
    Tensor::from_vec(indices.pooled, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_window_max() {
        let x = Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool2x2(&x);
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx.indices(), &[3]);
    }

    #[test]
    fn ties_resolve_to_top_left() {
        let x = Tensor::<f32>::full(Shape::new(1, 1, 2, 2), 7.0);
        let (_, idx) = maxpool2x2(&x);
        assert_eq!(idx.indices(), &[0]);
    }

    #[test]
    fn odd_sizes_round_up() {
        let x = Tensor::<f32>::from_fn(Shape::new(1, 2, 45, 23), |_, c, y, x| (c * 1000 + y * 23 + x) as f32);
        let (y, idx) = maxpool2x2(&x);
        assert_eq!(y.shape(), Shape::new(1, 2, 23, 12));
        let up = unpool2x2(&y, &idx).unwrap();
        assert_eq!(up.shape(), x.shape());
        // bottom-right clipped window is a single pixel
        assert_eq!(y.at(0, 1, 22, 11), x.at(0, 1, 44, 22));
    }

    #[test]
    fn unpool_places_maxima() {
        let x = Tensor::<f32>::from_vec(
            Shape::new(1, 1, 2, 4),
            vec![1.0, 5.0, -4.0, -1.0, 2.0, 3.0, -2.0, -3.0],
        )
        .unwrap();
        let (y, idx) = maxpool2x2(&x);
        let up = unpool2x2(&y, &idx).unwrap();
        assert_eq!(up.data(), &[0.0, 5.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(idx.indices(), &[1, 3]);
    }

    #[test]
    fn rejects_corrupted_indices() {
        let x = Tensor::<f32>::from_fn(Shape::new(1, 1, 4, 4), |_, _, y, x| (y * 4 + x) as f32);
        let (y, idx) = maxpool2x2(&x);
        let mut raw = idx.indices().to_vec();
        raw[0] = 15;
        let bad = PoolIndices::from_raw(idx.pooled_shape(), 4, 4, raw).unwrap();
        assert!(matches!(unpool2x2(&y, &bad), Err(Error::CorruptIndices(_))));
        let mut raw = idx.indices().to_vec();
        raw[3] = 99;
        let bad = PoolIndices::from_raw(idx.pooled_shape(), 4, 4, raw).unwrap();
        assert!(matches!(unpool2x2(&y, &bad), Err(Error::CorruptIndices(_))));
        assert!(PoolIndices::from_raw(idx.pooled_shape(), 4, 4, vec![0; 3]).is_err());
        let wrong = Tensor::<f32>::zeros(Shape::new(1, 2, 2, 2));
        assert!(matches!(unpool2x2(&wrong, &idx), Err(Error::Shape { .. })));
    }

    #[test]
    fn unpool_backward_is_adjoint() {
        let x = Tensor::<f64>::from_fn(Shape::new(2, 2, 5, 3), |n, c, y, x| ((n + 3 * c + 7 * y + 11 * x) % 13) as f64);
        let (p, idx) = maxpool2x2(&x);
        let g = Tensor::<f64>::from_fn(idx.input_shape(), |n, c, y, x| (n + c + y * 2 + x) as f64 * 0.5);
        // <unpool(p), g> == <p, unpool_backward(g)>
        let lhs: f64 = unpool2x2(&p, &idx).unwrap().data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = p.data().iter().zip(unpool2x2_backward(&g, &idx).unwrap().data()).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }
}
