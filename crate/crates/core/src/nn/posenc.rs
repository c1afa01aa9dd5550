use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};

/// Sinusoidal encoding of one (possibly fractional) position.
///
/// Even channels carry `sin(pos / 10000^(2i/dim))`, odd ones the matching cosine.
pub fn encoding_at(pos: f64, dim: usize, out: &mut [f32]) {
    debug_assert_eq!(out.len(), dim);
    for i in 0..dim / 2 {
        let rate = 10000f64.powf(2.0 * i as f64 / dim as f64);
        let angle = pos / rate;
        out[2 * i] = angle.sin() as f32;
        out[2 * i + 1] = angle.cos() as f32;
    }
}

/// `(dim, positions.len())` channel-major matrix of encodings.
pub fn encoding_matrix(positions: &[f64], dim: usize) -> Vec<f32> {
    let len = positions.len();
    let mut out = vec![0.0f32; dim * len];
    let mut col = vec![0.0f32; dim];
    for (t, &p) in positions.iter().enumerate() {
        encoding_at(p, dim, &mut col);
        for (c, v) in col.iter().enumerate() {
            out[c * len + t] = *v;
        }
    }
    out
}

/// Encoding of positions `offset..offset + length` as a `(1, dim, length)` tensor.
pub fn positional_encoding(length: usize, dim: usize, offset: usize) -> Result<Tensor> {
    if dim % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "positional encoding dimension must be even, got {dim}"
        )));
    }
    let positions: Vec<f64> = (0..length).map(|p| (p + offset) as f64).collect();
    Ok(Tensor::new(
        Shape::new(1, dim, length),
        encoding_matrix(&positions, dim),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_is_sin_zero_cos_one() {
        let pe = positional_encoding(1, 6, 0).unwrap();
        assert_eq!(pe.to_vec(), vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn scalar_formula_oracle() {
        let (dim, len) = (4usize, 3usize);
        let pe = positional_encoding(len, dim, 0).unwrap();
        for pos in 0..len {
            for c in 0..dim {
                let i = c / 2;
                let angle = pos as f64 / 10000f64.powf((2 * i) as f64 / dim as f64);
                let want = if c % 2 == 0 { angle.sin() } else { angle.cos() };
                assert!((pe.at(0, c, pos) as f64 - want).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn values_bounded_and_offset_shifts() {
        let pe = positional_encoding(50, 16, 7).unwrap();
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let base = positional_encoding(57, 16, 0).unwrap();
        for c in 0..16 {
            assert_eq!(pe.at(0, c, 0), base.at(0, c, 7));
        }
    }

    #[test]
    fn odd_dimension_rejected() {
        assert!(positional_encoding(3, 5, 0).is_err());
    }
}
