//! Euclidean projection onto the probability simplex.

use crate::error::{Error, Result};

/// Projection of `v` onto `{u >= 0, sum u = 1}` by sorting and thresholding.
pub fn project_simplex(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Empty);
    }
    let mut out = v.to_vec();
    project_in_place(&mut out);
    Ok(out)
}

/// In-place variant used on the solver's hot path. `v` must be non-empty.
pub fn project_in_place(v: &mut [f64]) {
    match v.len() {
        0 => {}
        1 => v[0] = 1.0,
        2 => {
            // closed form for the common two-label case
            let a = (0.5 * (v[0] - v[1] + 1.0)).clamp(0.0, 1.0);
            v[0] = a;
            v[1] = 1.0 - a;
        }
        n => {
            let mut stack = [0.0f64; 8];
            let mut heap = Vec::new();
            let sorted: &mut [f64] = if n <= 8 {
                stack[..n].copy_from_slice(v);
                &mut stack[..n]
            } else {
                heap.extend_from_slice(v);
                &mut heap
            };
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
            let mut cumsum = 0.0;
            let mut theta = 0.0;
            for (j, &u) in sorted.iter().enumerate() {
                cumsum += u;
                let t = (cumsum - 1.0) / (j + 1) as f64;
                if u - t > 0.0 {
                    theta = t;
                }
            }
            for a in v.iter_mut() {
                *a = (*a - theta).max(0.0);
            }
        }
    }
}
