use super::Matrix;
use crate::error::{Error, Result};

/// Mean over the rows of each length-`seq_len` block whose mask is true.
/// Returns one pooled row per block.
pub fn masked_mean_pool(x: &Matrix, mask: &[bool], seq_len: usize) -> Result<Matrix> {
    if mask.len() != x.rows() {
        return Err(Error::LengthMismatch { expected: x.rows(), actual: mask.len() });
    }
    if seq_len == 0 || x.rows() % seq_len != 0 {
        return Err(Error::Shape(format!("{} rows do not split into blocks of {seq_len}", x.rows())));
    }
    let blocks = x.rows() / seq_len;
    let mut out = Matrix::zeros(blocks, x.cols());
    for b in 0..blocks {
        let rows: Vec<usize> = (b * seq_len..(b + 1) * seq_len).filter(|&r| mask[r]).collect();
        if rows.is_empty() {
            return Err(Error::NoModalities);
        }
        let inv = 1.0 / rows.len() as f64;
        let o = out.row_mut(b);
        for &r in &rows {
            o.iter_mut().zip(x.row(r)).for_each(|(a, v)| *a += v);
        }
        o.iter_mut().for_each(|a| *a *= inv);
    }
    Ok(out)
}

pub fn masked_mean_pool_backward(dpooled: &Matrix, mask: &[bool], seq_len: usize) -> Matrix {
    let mut dx = Matrix::zeros(mask.len(), dpooled.cols());
    for b in 0..dpooled.rows() {
        let block = &mask[b * seq_len..(b + 1) * seq_len];
        let count = block.iter().filter(|&&m| m).count();
        if count == 0 {
            continue;
        }
        let inv = 1.0 / count as f64;
        for (i, &m) in block.iter().enumerate() {
            if m {
                dx.row_mut(b * seq_len + i)
                    .iter_mut()
                    .zip(dpooled.row(b))
                    .for_each(|(d, g)| *d = g * inv);
            }
        }
    }
    dx
}
