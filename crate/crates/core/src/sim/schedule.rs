use crate::error::{Error, Result};

/// Learning-rate schedule over a budget of `K` steps.
#[derive(Clone, Debug, PartialEq)]
pub enum Schedule {
    Constant {
        lr: f64,
    },
    /// `η = scale / √K`, constant across steps.
    InvSqrtBudget {
        scale: f64,
    },
    /// Linear interpolation between `(fraction of K, rate)` breakpoints.
    PiecewiseLinear {
        breakpoints: Vec<(f64, f64)>,
    },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            Schedule::Constant { lr } if !(*lr >= 0.0 && lr.is_finite()) => {
                Err(Error::param("lr", format!("{lr} is not a non-negative rate")))
            }
            Schedule::InvSqrtBudget { scale } if !(*scale >= 0.0 && scale.is_finite()) => {
                Err(Error::param("scale", format!("{scale} is not a non-negative rate")))
            }
            Schedule::PiecewiseLinear { breakpoints } => {
                if breakpoints.is_empty() {
                    return Err(Error::param("breakpoints", "at least one breakpoint is required"));
                }
                for &(t, r) in breakpoints {
                    if !(0.0..=1.0).contains(&t) {
                        return Err(Error::param("breakpoints", format!("fraction {t} is outside [0, 1]")));
                    }
                    if !(r >= 0.0 && r.is_finite()) {
                        return Err(Error::param("breakpoints", format!("rate {r} is negative")));
                    }
                }
                if breakpoints.windows(2).any(|w| w[1].0 < w[0].0) {
                    return Err(Error::param("breakpoints", "fractions must be sorted"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Rate used for step `step` of a `budget`-step run.
    pub fn lr_at(&self, step: usize, budget: usize) -> f64 {
        match self {
            Schedule::Constant { lr } => *lr,
            Schedule::InvSqrtBudget { scale } => scale / (budget.max(1) as f64).sqrt(),
            Schedule::PiecewiseLinear { breakpoints } => {
                let t = step as f64 / budget.max(1) as f64;
                let (first, last) = (breakpoints[0], breakpoints[breakpoints.len() - 1]);
                if t <= first.0 {
                    return first.1;
                }
                if t >= last.0 {
                    return last.1;
                }
                let i = breakpoints.partition_point(|&(f, _)| f <= t);
                let (t0, r0) = breakpoints[i - 1];
                let (t1, r1) = breakpoints[i];
                if t1 == t0 {
                    r1
                } else {
                    r0 + (r1 - r0) * (t - t0) / (t1 - t0)
                }
            }
        }
    }
}
