//! Factory functions and envelope functions: every target and envelope the
//! cascade machinery evaluates, with certified (directed-rounding) evaluation
//! for the irrational variants.

use crate::numerics::{
    gauss_integral_bounds, precision_bits, rat_int, rational_pow_bounds, sqrt_two_over_e_bounds,
    BoundPair, Int, Rat,
};
use num::{One, Signed, Zero};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Concave,
    Convex,
    Linear,
}

#[derive(Debug, Error, PartialEq)]
pub enum FuncError {
    #[error("argument {0} outside [0,1]")]
    ArgOutOfRange(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("function leaves [0,1] at p = {0}")]
    RangeViolation(String),
    #[error("operation requires the smoothed-elbow variant")]
    NotSmoothedElbow,
}

/// A factory or envelope function on `[0, 1]`.
///
/// `Constant` through `PiecewiseLinear` are the factory-function variants;
/// `Scaled` and `Shifted` wrap a base function for the fixed-schedule
/// curvature-offset envelopes. Rational exponents only: the `sqrt` cascade's `p^(1/2.02)` is
/// `Power(50/101)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Func {
    Constant(Rat),
    Linear { intercept: Rat, slope: Rat },
    /// `min(c*p, 1-eps)` with `c > 1`, `0 < eps < 1`.
    Elbow { c: Rat, eps: Rat },
    /// Twice-differentiable elbow: `c*p` below the knot, then
    /// `(1-eps) + delta * ∫_0^(c*(p-knot)/delta) exp(-t^2) dt`.
    SmoothedElbow { c: Rat, eps: Rat, delta: Rat },
    /// `c * (1 - 4*(p - 1/2)^2)` with `0 < c < 1`.
    Parabola { c: Rat },
    /// `p^exponent` for a positive rational exponent.
    Power { exponent: Rat },
    /// Piecewise-linear through the listed knots; first knot at x=0, last at x=1.
    PiecewiseLinear { knots: Vec<(Rat, Rat)> },
    Scaled { inner: Box<Func>, factor: Rat },
    Shifted { inner: Box<Func>, offset: Rat },
}

pub enum FhVariant {
    Original,
    Improved,
}

impl Func {
    pub fn elbow(c: Rat, eps: Rat) -> Result<Func, FuncError> {
        if c <= Rat::one() {
            return Err(FuncError::InvalidParams(
                "elbow requires c > 1 (c <= 1 is the trivial thinning case)".into(),
            ));
        }
        if !eps.is_positive() || eps >= Rat::one() {
            return Err(FuncError::InvalidParams("elbow requires 0 < eps < 1".into()));
        }
        Ok(Func::Elbow { c, eps })
    }

    /// Elbow function through the point `(x, y)`: slope `y/x`, cap `y`.
    pub fn elbow_through(x: &Rat, y: &Rat) -> Result<Func, FuncError> {
        if !x.is_positive() || !y.is_positive() || y >= &Rat::one() {
            return Err(FuncError::InvalidParams(
                "elbow point needs 0 < x, 0 < y < 1".into(),
            ));
        }
        Func::elbow(y / x, Rat::one() - y)
    }

    pub fn smoothed_elbow(c: Rat, eps: Rat, delta: Rat) -> Result<Func, FuncError> {
        if c <= Rat::one() || !eps.is_positive() || eps >= Rat::one() || !delta.is_positive() {
            return Err(FuncError::InvalidParams(
                "smoothed elbow requires c > 1, 0 < eps < 1, delta > 0".into(),
            ));
        }
        Ok(Func::SmoothedElbow { c, eps, delta })
    }

    pub fn power(exponent: Rat) -> Result<Func, FuncError> {
        if !exponent.is_positive() {
            return Err(FuncError::InvalidParams("power exponent must be > 0".into()));
        }
        Ok(Func::Power { exponent })
    }

    pub fn parabola(c: Rat) -> Result<Func, FuncError> {
        if !c.is_positive() || c > Rat::one() {
            return Err(FuncError::InvalidParams("parabola requires 0 < c <= 1".into()));
        }
        Ok(Func::Parabola { c })
    }

    pub fn piecewise_linear(knots: Vec<(Rat, Rat)>) -> Result<Func, FuncError> {
        if knots.len() < 2 {
            return Err(FuncError::InvalidParams("need at least two knots".into()));
        }
        if !knots[0].0.is_zero() || knots.last().unwrap().0 != Rat::one() {
            return Err(FuncError::InvalidParams(
                "knots must span x = 0 to x = 1".into(),
            ));
        }
        for w in knots.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(FuncError::InvalidParams("knot x values must increase".into()));
            }
        }
        for (_, y) in &knots {
            if y.is_negative() || y > &Rat::one() {
                return Err(FuncError::RangeViolation(y.to_string()));
            }
        }
        Ok(Func::PiecewiseLinear { knots })
    }

    pub fn shape(&self) -> Shape {
        match self {
            Func::Constant(_) | Func::Linear { .. } => Shape::Linear,
            Func::Elbow { .. } | Func::SmoothedElbow { .. } | Func::Parabola { .. } => {
                Shape::Concave
            }
            Func::Power { exponent } => {
                if exponent == &Rat::one() {
                    Shape::Linear
                } else if exponent < &Rat::one() {
                    Shape::Concave
                } else {
                    Shape::Convex
                }
            }
            // piecewise-linear shape is not derived; callers that need it
            // should check dominance pointwise
            Func::PiecewiseLinear { .. } => Shape::Concave,
            Func::Scaled { inner, .. } | Func::Shifted { inner, .. } => inner.shape(),
        }
    }

    /// x-coordinates where the function is non-smooth (interior knots only).
    pub fn knots(&self) -> Vec<Rat> {
        match self {
            Func::Elbow { c, eps } => vec![(Rat::one() - eps) / c],
            Func::SmoothedElbow { c, eps, .. } => vec![(Rat::one() - eps) / c],
            Func::PiecewiseLinear { knots } => knots
                .iter()
                .map(|(x, _)| x.clone())
                .filter(|x| x.is_positive() && x < &Rat::one())
                .collect(),
            Func::Scaled { inner, .. } | Func::Shifted { inner, .. } => inner.knots(),
            _ => vec![],
        }
    }

    /// The elbow point `((1-eps)/c, 1-eps)` when this is an elbow function.
    pub fn elbow_point(&self) -> Option<(Rat, Rat)> {
        match self {
            Func::Elbow { c, eps } | Func::SmoothedElbow { c, eps, .. } => {
                let y = Rat::one() - eps;
                Some((&y / c, y))
            }
            _ => None,
        }
    }

    /// True when `eval` is exact (lo = hi) at every rational argument.
    pub fn is_rational_valued(&self) -> bool {
        match self {
            Func::Constant(_)
            | Func::Linear { .. }
            | Func::Elbow { .. }
            | Func::Parabola { .. }
            | Func::PiecewiseLinear { .. } => true,
            Func::SmoothedElbow { .. } => false,
            Func::Power { exponent } => exponent.denom().is_one(),
            Func::Scaled { inner, .. } | Func::Shifted { inner, .. } => inner.is_rational_valued(),
        }
    }

    /// Certified evaluation. Rational-valued variants return exact bounds
    /// regardless of `precision`; irrational ones return an enclosure of
    /// width at most `precision`.
    pub fn eval(&self, p: &Rat, precision: &Rat) -> Result<BoundPair, FuncError> {
        if p.is_negative() || p > &Rat::one() {
            return Err(FuncError::ArgOutOfRange(p.to_string()));
        }
        assert!(precision.is_positive());
        Ok(match self {
            Func::Constant(c) => BoundPair::exact(c.clone()),
            Func::Linear { intercept, slope } => BoundPair::exact(intercept + slope * p),
            Func::Elbow { c, eps } => {
                let cap = Rat::one() - eps;
                let lin = c * p;
                BoundPair::exact(if lin < cap { lin } else { cap })
            }
            Func::Parabola { c } => {
                let d = p - crate::numerics::rat(1, 2);
                BoundPair::exact(c * (Rat::one() - rat_int(4) * &d * &d))
            }
            Func::PiecewiseLinear { knots } => {
                let mut val = knots.last().unwrap().1.clone();
                for w in knots.windows(2) {
                    let (x0, y0) = &w[0];
                    let (x1, y1) = &w[1];
                    if p >= x0 && p <= x1 {
                        val = y0 + (y1 - y0) * (p - x0) / (x1 - x0);
                        break;
                    }
                }
                BoundPair::exact(val)
            }
            Func::Power { exponent } => {
                let a: u64 = exponent.numer().try_into().map_err(|_| {
                    FuncError::InvalidParams("power exponent numerator too large".into())
                })?;
                let b: u32 = exponent.denom().try_into().map_err(|_| {
                    FuncError::InvalidParams("power exponent denominator too large".into())
                })?;
                rational_pow_bounds(p, a, b, precision)
            }
            Func::SmoothedElbow { c, eps, delta } => {
                let knot = (Rat::one() - eps) / c;
                if p <= &knot {
                    BoundPair::exact(c * p)
                } else {
                    // (1-eps) + delta * ∫_0^(c*(p-knot)/delta) exp(-t^2) dt
                    let z = c * (p - &knot) / delta;
                    let bits = precision_bits(&(precision / delta)) + 4;
                    let integral = gauss_integral_bounds(&z, bits);
                    integral
                        .scale_nonneg(delta)
                        .shift(&(Rat::one() - eps))
                }
            }
            Func::Scaled { inner, factor } => inner
                .eval(p, &(precision / factor.clone().max(Rat::one())))?
                .scale_nonneg(factor),
            Func::Shifted { inner, offset } => inner.eval(p, precision)?.shift(offset),
        })
    }

    /// Exact value when the variant admits one.
    pub fn eval_exact(&self, p: &Rat) -> Option<Rat> {
        if !self.is_rational_valued() {
            return None;
        }
        let b = self.eval(p, &crate::numerics::rat(1, 2)).ok()?;
        debug_assert!(b.is_exact());
        Some(b.lo().clone())
    }

    /// Rational upper bound on `|f''|` for the smoothed elbow:
    /// `C = c^2 * sqrt(2) / (delta * sqrt(e))`, rounded up.
    pub fn second_derivative_bound(&self) -> Result<Rat, FuncError> {
        match self {
            Func::SmoothedElbow { c, delta, .. } => {
                let factor = sqrt_two_over_e_bounds(64);
                Ok(c * c * factor.hi() / delta)
            }
            _ => Err(FuncError::NotSmoothedElbow),
        }
    }

    /// Fixed-schedule ("fh") upper envelope for a smoothed elbow at bit count `n`:
    /// additive `f + C/(2n)` (original) or multiplicative
    /// `f * (1 + C/(2n(1-eps)))` (improved; equals zero at zero).
    pub fn fh_envelope(&self, n: u64, variant: FhVariant) -> Result<Func, FuncError> {
        let (eps, bound) = match self {
            Func::SmoothedElbow { eps, .. } => (eps.clone(), self.second_derivative_bound()?),
            _ => return Err(FuncError::NotSmoothedElbow),
        };
        assert!(n >= 1);
        let two_n = Rat::from_integer(Int::from(2 * n));
        Ok(match variant {
            FhVariant::Original => Func::Shifted {
                inner: Box::new(self.clone()),
                offset: &bound / two_n,
            },
            FhVariant::Improved => Func::Scaled {
                inner: Box::new(self.clone()),
                factor: Rat::one() + &bound / (two_n * (Rat::one() - eps)),
            },
        })
    }

    /// Range sanity check at knots plus a uniform grid.
    pub fn validate_range(&self, grid: usize) -> Result<(), FuncError> {
        let prec = crate::numerics::rat(1, 1_000_000);
        let mut points: Vec<Rat> = (0..=grid)
            .map(|i| Rat::new(Int::from(i), Int::from(grid.max(1))))
            .collect();
        points.extend(self.knots());
        for p in points {
            let b = self.eval(&p, &prec)?;
            if b.lo() < &(-prec.clone()) || b.hi() > &(Rat::one() + &prec) {
                return Err(FuncError::RangeViolation(p.to_string()));
            }
        }
        Ok(())
    }
}
