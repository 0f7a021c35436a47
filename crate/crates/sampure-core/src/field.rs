//! Score fields: anything that can play the role of `s(x; sigma)`.
//!
//! The purifier, the reconstruction-error estimator, and the attacks are all
//! generic over this trait so that the trained network can be swapped for the
//! closed-form Gaussian-mixture score (the oracle adapter) or for constructed
//! fixtures with known landscapes.

use alloc::vec::Vec;

/// A score function together with its input-Jacobian pullback.
pub trait ScoreField {
    fn dim(&self) -> usize;

    /// `s(x; sigma)`.
    fn score(&self, x: &[f64], sigma: f64) -> Vec<f64>;

    /// `J_s(x; sigma)^T v`, the vector-Jacobian product of the score at `x`.
    fn score_vjp(&self, x: &[f64], sigma: f64, v: &[f64]) -> Vec<f64>;
}

impl<T: ScoreField + ?Sized> ScoreField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn score(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        (**self).score(x, sigma)
    }
    fn score_vjp(&self, x: &[f64], sigma: f64, v: &[f64]) -> Vec<f64> {
        (**self).score_vjp(x, sigma, v)
    }
}

/// One-dimensional piecewise-linear score field `s(x; sigma) = g(x) / sigma`,
/// where `g` interpolates the knot values linearly and extends as a constant
/// beyond the first and last knot.
///
/// This is the fixture family used to construct reconstruction-error
/// landscapes with known minima; see [`PiecewiseLinearScore1d::sharp_flat_fixture`].
#[derive(Debug, Clone)]
pub struct PiecewiseLinearScore1d {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseLinearScore1d {
    /// Knots must be strictly increasing; panics otherwise.
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(knots.len(), values.len());
        assert!(knots.len() >= 2);
        assert!(knots.windows(2).all(|w| w[0] < w[1]), "knots must be strictly increasing");
        PiecewiseLinearScore1d { knots, values }
    }

    /// The documented sharp-vs-flat fixture.
    ///
    /// `g` has exactly two zeros on `[0, 1]`: a sharp one at `x = 0.25`
    /// (slope -25 inside a notch of half-width 0.02) and a flat one at
    /// `x = 0.45` (right slope 2/3). The induced reconstruction error
    /// `E[(xi + g(x + sigma*xi))^2]` therefore has a narrow spurious minimum
    /// at 0.25 and a wide flat one at 0.45.
    ///
    /// The geometry is matched to a sharpness radius of 0.2: the one-step
    /// normalized ascent has a stationary point where the ascent step lands
    /// exactly on a zero of the error landscape, i.e. at `zero + rho_sam`.
    /// Starting in the notch, the ascent point falls outside it, the pulled
    /// gradient walks the iterate right, and the walk stabilizes where the
    /// ascent point straddles the notch, which is exactly the flat minimum.
    /// Plain descent from the notch never leaves it.
    pub fn sharp_flat_fixture() -> Self {
        Self::new(
            alloc::vec![0.0, 0.23, 0.27, 0.45, 0.90],
            alloc::vec![1.139, 0.5, -0.5, 0.0, 0.3],
        )
    }

    /// Interpolated value and slope of `g` at `x`.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let n = self.knots.len();
        if x <= self.knots[0] {
            return (self.values[0], 0.0);
        }
        if x >= self.knots[n - 1] {
            return (self.values[n - 1], 0.0);
        }
        let mut i = 0;
        while self.knots[i + 1] < x {
            i += 1;
        }
        let t = (x - self.knots[i]) / (self.knots[i + 1] - self.knots[i]);
        let slope = (self.values[i + 1] - self.values[i]) / (self.knots[i + 1] - self.knots[i]);
        (self.values[i] + t * (self.values[i + 1] - self.values[i]), slope)
    }
}

impl ScoreField for PiecewiseLinearScore1d {
    fn dim(&self) -> usize {
        1
    }

    fn score(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        let (g, _) = self.eval(x[0]);
        alloc::vec![g / sigma]
    }

    fn score_vjp(&self, x: &[f64], sigma: f64, v: &[f64]) -> Vec<f64> {
        let (_, slope) = self.eval(x[0]);
        alloc::vec![slope / sigma * v[0]]
    }
}
