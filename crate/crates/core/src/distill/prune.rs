use crate::error::{Error, Result};
use crate::network::pruned_count;
use crate::tensor::{Parameter, Scalar, Tensor};

/// Keep-mask (`true` = kept) zeroing the `⌊s·n⌋` smallest-magnitude
/// entries; among equal magnitudes the lowest flat index is pruned first.
pub fn magnitude_prune_mask<T: Scalar>(weights: &Tensor<T>, sparsity: f64) -> Result<Vec<bool>> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::invalid(format!(
            "sparsity must be in [0, 1), got {sparsity}"
        )));
    }
    let n = weights.len();
    let drop = pruned_count(n, sparsity);
    let mut order: Vec<usize> = (0..n).collect();
    let w = weights.data();
    order.sort_by(|&a, &b| {
        w[a].abs()
            .partial_cmp(&w[b].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut mask = vec![true; n];
    for &i in &order[..drop] {
        mask[i] = false;
    }
    Ok(mask)
}

/// Zeroes masked-out values, gradients and momentum.
pub fn apply_mask<T: Scalar>(p: &mut Parameter<T>, mask: &[bool]) {
    for (i, &keep) in mask.iter().enumerate() {
        if !keep {
            p.value.data_mut()[i] = T::zero();
            p.grad.data_mut()[i] = T::zero();
            p.momentum_buffer.data_mut()[i] = T::zero();
        }
    }
}

pub fn mask_gradient<T: Scalar>(grad: &mut Tensor<T>, mask: &[bool]) {
    for (g, &keep) in grad.data_mut().iter_mut().zip(mask) {
        if !keep {
            *g = T::zero();
        }
    }
}

/// Fraction of exact zeros.
pub fn zero_fraction<T: Scalar>(t: &Tensor<T>) -> f64 {
    t.data().iter().filter(|&&v| v == T::zero()).count() as f64 / t.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_two_largest() {
        let w = Tensor::new(vec![4], vec![0.1f32, -0.5, 0.3, -0.2]).unwrap();
        assert_eq!(
            magnitude_prune_mask(&w, 0.5).unwrap(),
            vec![false, true, true, false]
        );
        assert_eq!(magnitude_prune_mask(&w, 0.0).unwrap(), vec![true; 4]);
    }

    #[test]
    fn ties_prune_lowest_index_first() {
        let w = Tensor::new(vec![5], vec![0.2f32, -0.2, 0.2, 1.0, 0.2]).unwrap();
        assert_eq!(
            magnitude_prune_mask(&w, 0.4).unwrap(),
            vec![false, false, true, true, true]
        );
    }

    #[test]
    fn pruned_fraction_is_floor() {
        let mut r = crate::rng::Rng::new(3);
        for &(n, s) in &[
            (97usize, 0.33),
            (64, 0.5),
            (10, 0.95),
            (1000, 0.9),
            (7, 0.1),
        ] {
            let w: Tensor = crate::rng::gaussian_sample(&mut r, &[n], 0.0, 1.0);
            let m = magnitude_prune_mask(&w, s).unwrap();
            let dropped = m.iter().filter(|&&k| !k).count();
            assert_eq!(dropped, (s * n as f64).floor() as usize);
            // every kept magnitude is >= every pruned one
            let kept_min = (0..n)
                .filter(|&i| m[i])
                .map(|i| w.data()[i].abs())
                .fold(f32::MAX, f32::min);
            let pruned_max = (0..n)
                .filter(|&i| !m[i])
                .map(|i| w.data()[i].abs())
                .fold(0.0, f32::max);
            assert!(kept_min >= pruned_max);
        }
    }
}
