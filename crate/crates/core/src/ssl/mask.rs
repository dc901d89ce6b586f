use rand::Rng;

use crate::error::{Error, Result};

/// Zero-span positions chosen by [`mask_rows`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSpec {
    pub mask_size: usize,
    /// Start of the zeroed span, one per row.
    pub positions: Vec<usize>,
}

/// Zero one uniformly placed contiguous span of `mask_size` samples per row.
pub fn mask_rows<P: AsRef<[f64]>, R: Rng + ?Sized>(
    rows: &[P],
    mask_size: usize,
    rng: &mut R,
) -> Result<(Vec<Vec<f64>>, MaskSpec)> {
    let mut out = Vec::with_capacity(rows.len());
    let mut positions = Vec::with_capacity(rows.len());
    for row in rows {
        let row = row.as_ref();
        let (masked, start) = mask_one(row, mask_size, rng)?;
        out.push(masked);
        positions.push(start);
    }
    Ok((out, MaskSpec { mask_size, positions }))
}

pub(crate) fn mask_one<R: Rng + ?Sized>(row: &[f64], mask_size: usize, rng: &mut R) -> Result<(Vec<f64>, usize)> {
    if mask_size > row.len() {
        return Err(Error::Mask {
            mask_size,
            row_len: row.len(),
        });
    }
    let start = rng.random_range(0..=row.len() - mask_size);
    let mut masked = row.to_vec();
    masked[start..start + mask_size].iter_mut().for_each(|v| *v = 0.0);
    Ok((masked, start))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_and_full_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 + 1.0; 256]).collect();
        let (out, spec) = mask_rows(&rows, 0, &mut rng).unwrap();
        assert_eq!(out, rows);
        assert!(spec.positions.iter().all(|p| *p <= 256));
        let (out, spec) = mask_rows(&rows, 256, &mut rng).unwrap();
        assert!(out.iter().all(|r| r.iter().all(|v| *v == 0.0)));
        assert!(spec.positions.iter().all(|p| *p == 0));
    }

    #[test]
    fn oversized_mask_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = mask_rows(&[vec![1.0; 256]], 257, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Mask { mask_size: 257, row_len: 256 }));
    }

    #[test]
    fn span_is_contiguous_and_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows = vec![vec![1.0; 256]; 50];
        let (out, spec) = mask_rows(&rows, 64, &mut rng).unwrap();
        for (r, p) in out.iter().zip(&spec.positions) {
            let zeros: Vec<usize> = (0..256).filter(|i| r[*i] == 0.0).collect();
            assert_eq!(zeros.len(), 64);
            assert_eq!(zeros[0], *p);
            assert_eq!(*zeros.last().unwrap(), p + 63);
        }
    }
}
