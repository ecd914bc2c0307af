use crate::error::{Error, Result};

/// Affine map `z = (y - shift) / scale` onto mean 0, range 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeTransform {
    pub shift: f64,
    pub scale: f64,
}

impl OutcomeTransform {
    pub fn identity() -> Self {
        OutcomeTransform { shift: 0.0, scale: 1.0 }
    }

    pub fn apply(&self, y: f64) -> f64 {
        (y - self.shift) / self.scale
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.scale + self.shift
    }

    /// Maps a difference on the standardised scale back to outcome units.
    pub fn invert_difference(&self, dz: f64) -> f64 {
        dz * self.scale
    }
}

pub fn standardize_outcome(y: &[f64]) -> Result<(Vec<f64>, OutcomeTransform)> {
    if y.len() < 2 {
        return Err(Error::invalid("standardisation needs at least two outcomes"));
    }
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::DegenerateOutcome);
    }
    let shift = y.iter().sum::<f64>() / y.len() as f64;
    let t = OutcomeTransform { shift, scale: range };
    let mut z: Vec<f64> = y.iter().map(|&v| t.apply(v)).collect();
    // remove residual rounding from the mean
    let resid = z.iter().sum::<f64>() / z.len() as f64;
    z.iter_mut().for_each(|v| *v -= resid);
    Ok((z, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_examples() {
        assert_eq!(standardize_outcome(&[0.0, 1.0]).unwrap().0, vec![-0.5, 0.5]);
        assert_eq!(standardize_outcome(&[1.0, 3.0]).unwrap().0, vec![-0.5, 0.5]);
        assert!(matches!(standardize_outcome(&[5.0, 5.0, 5.0]), Err(Error::DegenerateOutcome)));
    }

    proptest! {
        #[test]
        fn mean_zero_range_one_and_invertible(y in prop::collection::vec(-1e3f64..1e3, 2..60)) {
            prop_assume!(y.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - y.iter().cloned().fold(f64::INFINITY, f64::min) > 1e-6);
            let (z, t) = standardize_outcome(&y).unwrap();
            let mean = z.iter().sum::<f64>() / z.len() as f64;
            prop_assert!(mean.abs() < 1e-12);
            let hi = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = z.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert!((hi - lo - 1.0).abs() < 1e-12);
            for (&orig, &v) in y.iter().zip(&z) {
                let back = t.invert(t.apply(orig));
                prop_assert!((back - orig).abs() <= 1e-12 * orig.abs().max(1.0));
                prop_assert!((t.invert(v) - orig).abs() <= 1e-9 * orig.abs().max(1.0));
            }
        }
    }
}
