//! Plan files: JSON persistence for cascade plans. Rationals are stored as
//! integer-string pairs, never decimals, so a saved plan stays exact; count
//! rows are stored alongside the envelopes and checked against a rebuild on
//! load.

use crate::functions::{Func, FuncError};
use crate::numerics::{Int, Rat};
use crate::planner::{CascadePlan, DescentCurve, TierVerification};
use crate::tables::{build_count_table, EnvelopePair, TableError, VerificationReport, VerifyMode};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PlanFileError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported format version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("bad rational: {0}")]
    BadRational(String),
    #[error("stored count rows for checkpoint {checkpoint} do not match rebuild")]
    CountMismatch { checkpoint: u64 },
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Func(#[from] FuncError),
}

/// Exact rational as decimal integer strings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct RatSpec {
    pub num: String,
    pub den: String,
}

impl RatSpec {
    pub fn from_rat(r: &Rat) -> Self {
        RatSpec {
            num: r.numer().to_string(),
            den: r.denom().to_string(),
        }
    }

    pub fn to_rat(&self) -> Result<Rat, PlanFileError> {
        let num = Int::from_str(&self.num)
            .map_err(|_| PlanFileError::BadRational(self.num.clone()))?;
        let den = Int::from_str(&self.den)
            .map_err(|_| PlanFileError::BadRational(self.den.clone()))?;
        if den <= Int::from(0) {
            return Err(PlanFileError::BadRational(format!(
                "{}/{}: denominator must be positive",
                self.num, self.den
            )));
        }
        Ok(Rat::new(num, den))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum FuncSpec {
    Constant { value: RatSpec },
    Linear { intercept: RatSpec, slope: RatSpec },
    Elbow { c: RatSpec, eps: RatSpec },
    SmoothedElbow { c: RatSpec, eps: RatSpec, delta: RatSpec },
    Parabola { c: RatSpec },
    Power { exponent: RatSpec },
    PiecewiseLinear { knots: Vec<(RatSpec, RatSpec)> },
    Scaled { inner: Box<FuncSpec>, factor: RatSpec },
    Shifted { inner: Box<FuncSpec>, offset: RatSpec },
}

impl FuncSpec {
    pub fn from_func(f: &Func) -> Self {
        let r = RatSpec::from_rat;
        match f {
            Func::Constant(v) => FuncSpec::Constant { value: r(v) },
            Func::Linear { intercept, slope } => FuncSpec::Linear {
                intercept: r(intercept),
                slope: r(slope),
            },
            Func::Elbow { c, eps } => FuncSpec::Elbow { c: r(c), eps: r(eps) },
            Func::SmoothedElbow { c, eps, delta } => FuncSpec::SmoothedElbow {
                c: r(c),
                eps: r(eps),
                delta: r(delta),
            },
            Func::Parabola { c } => FuncSpec::Parabola { c: r(c) },
            Func::Power { exponent } => FuncSpec::Power { exponent: r(exponent) },
            Func::PiecewiseLinear { knots } => FuncSpec::PiecewiseLinear {
                knots: knots.iter().map(|(x, y)| (r(x), r(y))).collect(),
            },
            Func::Scaled { inner, factor } => FuncSpec::Scaled {
                inner: Box::new(FuncSpec::from_func(inner)),
                factor: r(factor),
            },
            Func::Shifted { inner, offset } => FuncSpec::Shifted {
                inner: Box::new(FuncSpec::from_func(inner)),
                offset: r(offset),
            },
        }
    }

    /// Rebuild through the validating constructors so a hand-edited file
    /// cannot smuggle in out-of-range parameters.
    pub fn to_func(&self) -> Result<Func, PlanFileError> {
        Ok(match self {
            FuncSpec::Constant { value } => Func::Constant(value.to_rat()?),
            FuncSpec::Linear { intercept, slope } => Func::Linear {
                intercept: intercept.to_rat()?,
                slope: slope.to_rat()?,
            },
            FuncSpec::Elbow { c, eps } => Func::elbow(c.to_rat()?, eps.to_rat()?)?,
            FuncSpec::SmoothedElbow { c, eps, delta } => {
                Func::smoothed_elbow(c.to_rat()?, eps.to_rat()?, delta.to_rat()?)?
            }
            FuncSpec::Parabola { c } => Func::parabola(c.to_rat()?)?,
            FuncSpec::Power { exponent } => Func::power(exponent.to_rat()?)?,
            FuncSpec::PiecewiseLinear { knots } => {
                let mut ks = Vec::with_capacity(knots.len());
                for (x, y) in knots {
                    ks.push((x.to_rat()?, y.to_rat()?));
                }
                Func::piecewise_linear(ks)?
            }
            FuncSpec::Scaled { inner, factor } => Func::Scaled {
                inner: Box::new(inner.to_func()?),
                factor: factor.to_rat()?,
            },
            FuncSpec::Shifted { inner, offset } => Func::Shifted {
                inner: Box::new(inner.to_func()?),
                offset: offset.to_rat()?,
            },
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum DescentSpec {
    Quadratic {
        x_star: RatSpec,
        y_star: RatSpec,
    },
    QuinticMatchedSlope {
        x_star: RatSpec,
        y_star: RatSpec,
        c: RatSpec,
        kappa: RatSpec,
    },
    ExplicitPoints {
        points: Vec<(RatSpec, RatSpec)>,
    },
}

impl DescentSpec {
    pub fn from_curve(c: &DescentCurve) -> Self {
        let r = RatSpec::from_rat;
        match c {
            DescentCurve::Quadratic { x_star, y_star } => DescentSpec::Quadratic {
                x_star: r(x_star),
                y_star: r(y_star),
            },
            DescentCurve::QuinticMatchedSlope {
                x_star,
                y_star,
                c,
                kappa,
            } => DescentSpec::QuinticMatchedSlope {
                x_star: r(x_star),
                y_star: r(y_star),
                c: r(c),
                kappa: r(kappa),
            },
            DescentCurve::ExplicitPoints(pts) => DescentSpec::ExplicitPoints {
                points: pts.iter().map(|(x, y)| (r(x), r(y))).collect(),
            },
        }
    }

    pub fn to_curve(&self) -> Result<DescentCurve, PlanFileError> {
        Ok(match self {
            DescentSpec::Quadratic { x_star, y_star } => DescentCurve::Quadratic {
                x_star: x_star.to_rat()?,
                y_star: y_star.to_rat()?,
            },
            DescentSpec::QuinticMatchedSlope {
                x_star,
                y_star,
                c,
                kappa,
            } => DescentCurve::QuinticMatchedSlope {
                x_star: x_star.to_rat()?,
                y_star: y_star.to_rat()?,
                c: c.to_rat()?,
                kappa: kappa.to_rat()?,
            },
            DescentSpec::ExplicitPoints { points } => {
                let mut pts = Vec::with_capacity(points.len());
                for (x, y) in points {
                    pts.push((x.to_rat()?, y.to_rat()?));
                }
                DescentCurve::ExplicitPoints(pts)
            }
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EnvelopeSpec {
    pub checkpoint: u64,
    pub lower: FuncSpec,
    pub upper: FuncSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TierCountsSpec {
    pub checkpoint: u64,
    pub a: Vec<String>,
    pub b: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum VerifyModeSpec {
    Knots,
    Grid { points: usize },
}

impl VerifyModeSpec {
    pub fn from_mode(m: &VerifyMode) -> Self {
        match m {
            VerifyMode::Knots => VerifyModeSpec::Knots,
            VerifyMode::Grid(points) => VerifyModeSpec::Grid { points: *points },
        }
    }

    pub fn to_mode(&self) -> VerifyMode {
        match self {
            VerifyModeSpec::Knots => VerifyMode::Knots,
            VerifyModeSpec::Grid { points } => VerifyMode::Grid(*points),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TierVerificationSpec {
    pub checkpoint: u64,
    pub mode: VerifyModeSpec,
    pub passed: bool,
    pub detail: String,
    /// True when the check is a proof (concavity argument), not a grid sweep.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proof: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_upper_margin: Option<RatSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_lower_margin: Option<RatSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points_checked: Option<usize>,
}

impl TierVerificationSpec {
    fn from_tier(t: &TierVerification) -> Self {
        TierVerificationSpec {
            checkpoint: t.checkpoint,
            mode: VerifyModeSpec::from_mode(&t.mode),
            passed: t.passed,
            detail: t.detail.clone(),
            proof: t.report.as_ref().map(|r| r.proof),
            min_upper_margin: t
                .report
                .as_ref()
                .map(|r| RatSpec::from_rat(&r.min_upper_margin)),
            min_lower_margin: t
                .report
                .as_ref()
                .map(|r| RatSpec::from_rat(&r.min_lower_margin)),
            points_checked: t.report.as_ref().map(|r| r.points_checked),
        }
    }

    fn to_tier(&self) -> Result<TierVerification, PlanFileError> {
        let report = match (&self.min_upper_margin, &self.min_lower_margin) {
            (Some(u), Some(l)) => Some(VerificationReport {
                mode: self.mode.to_mode(),
                proof: self.proof.unwrap_or(false),
                min_upper_margin: u.to_rat()?,
                min_lower_margin: l.to_rat()?,
                points_checked: self.points_checked.unwrap_or(0),
            }),
            _ => None,
        };
        Ok(TierVerification {
            checkpoint: self.checkpoint,
            mode: self.mode.to_mode(),
            passed: self.passed,
            detail: self.detail.clone(),
            report,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Provenance {
    pub tool_version: String,
    pub verification: Vec<TierVerificationSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PlanFile {
    pub format_version: u32,
    pub name: String,
    pub target: FuncSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub descent: Option<DescentSpec>,
    pub envelopes: Vec<EnvelopeSpec>,
    pub checkpoints: Vec<u64>,
    pub counts: Vec<TierCountsSpec>,
    pub provenance: Provenance,
}

fn int_row(row: &[Int]) -> Vec<String> {
    row.iter().map(|v| v.to_string()).collect()
}

impl PlanFile {
    pub fn from_plan(plan: &CascadePlan) -> Self {
        PlanFile {
            format_version: FORMAT_VERSION,
            name: plan.name.clone(),
            target: FuncSpec::from_func(&plan.target),
            descent: plan.descent.as_ref().map(DescentSpec::from_curve),
            envelopes: plan
                .envelopes
                .iter()
                .map(|e| EnvelopeSpec {
                    checkpoint: e.checkpoint,
                    lower: FuncSpec::from_func(&e.lower),
                    upper: FuncSpec::from_func(&e.upper),
                })
                .collect(),
            checkpoints: plan.table.checkpoints.clone(),
            counts: plan
                .table
                .checkpoints
                .iter()
                .enumerate()
                .map(|(i, &m)| TierCountsSpec {
                    checkpoint: m,
                    a: int_row(&plan.table.a[i]),
                    b: int_row(&plan.table.b[i]),
                })
                .collect(),
            provenance: Provenance {
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                verification: plan
                    .verification
                    .iter()
                    .map(TierVerificationSpec::from_tier)
                    .collect(),
            },
        }
    }

    /// Rebuild a plan: envelopes are re-instantiated, the count table is
    /// recomputed from scratch, and the result must match the stored rows
    /// exactly — a plan file is an auditable record, not a cache.
    pub fn to_plan(&self) -> Result<CascadePlan, PlanFileError> {
        if self.format_version != FORMAT_VERSION {
            return Err(PlanFileError::UnsupportedVersion(self.format_version));
        }
        let target = self.target.to_func()?;
        let mut envelopes = Vec::with_capacity(self.envelopes.len());
        for e in &self.envelopes {
            let mut pair = EnvelopePair::new(e.lower.to_func()?, e.upper.to_func()?, e.checkpoint);
            // verification outcome travels in provenance; trust it for the
            // rebuild and let `verify` re-run the checks on demand
            pair.assume_verified();
            envelopes.push(pair);
        }
        let table = build_count_table(&target, &envelopes)?;
        for (i, stored) in self.counts.iter().enumerate() {
            if table.checkpoints.get(i) != Some(&stored.checkpoint)
                || int_row(&table.a[i]) != stored.a
                || int_row(&table.b[i]) != stored.b
            {
                return Err(PlanFileError::CountMismatch {
                    checkpoint: stored.checkpoint,
                });
            }
        }
        if self.counts.len() != table.tiers() {
            return Err(PlanFileError::CountMismatch {
                checkpoint: *table.checkpoints.last().unwrap_or(&0),
            });
        }
        let mut verification = Vec::with_capacity(self.provenance.verification.len());
        for v in &self.provenance.verification {
            verification.push(v.to_tier()?);
        }
        Ok(CascadePlan {
            name: self.name.clone(),
            target,
            envelopes,
            descent: self.descent.as_ref().map(|d| d.to_curve()).transpose()?,
            table,
            verification,
        })
    }

    pub fn to_json(&self) -> Result<String, PlanFileError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self, PlanFileError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), PlanFileError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PlanFileError> {
        PlanFile::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::{plan_constant_half, plan_elbow_reference};

    #[test]
    fn round_trip_constant_half() {
        let plan = plan_constant_half().unwrap();
        let file = PlanFile::from_plan(&plan);
        let json = file.to_json().unwrap();
        let reloaded = PlanFile::from_json(&json).unwrap();
        let rebuilt = reloaded.to_plan().unwrap();
        let file2 = PlanFile::from_plan(&rebuilt);
        // byte-identical count rows after a full save/load/rebuild cycle
        assert_eq!(
            serde_json::to_string(&file.counts).unwrap(),
            serde_json::to_string(&file2.counts).unwrap()
        );
        assert_eq!(file2.checkpoints, vec![2, 4]);
    }

    #[test]
    fn round_trip_elbow_reference() {
        let plan = plan_elbow_reference().unwrap();
        let file = PlanFile::from_plan(&plan);
        let json = file.to_json().unwrap();
        let rebuilt = PlanFile::from_json(&json).unwrap().to_plan().unwrap();
        let file2 = PlanFile::from_plan(&rebuilt);
        assert_eq!(
            serde_json::to_string(&file.counts).unwrap(),
            serde_json::to_string(&file2.counts).unwrap()
        );
        assert_eq!(file2.provenance.verification.len(), 4);
        assert!(json.contains("\"num\""));
        assert!(json.contains("\"den\""));
        // exactness guard: no decimal-rendered rationals anywhere
        assert!(!json.contains("0.1539"));
    }

    #[test]
    fn tampered_counts_rejected() {
        let plan = plan_constant_half().unwrap();
        let mut file = PlanFile::from_plan(&plan);
        file.counts[1].a[2] = "99".into();
        assert!(matches!(
            file.to_plan(),
            Err(PlanFileError::CountMismatch { checkpoint: 4 })
        ));
    }

    #[test]
    fn version_and_rational_validation() {
        let plan = plan_constant_half().unwrap();
        let mut file = PlanFile::from_plan(&plan);
        file.format_version = 2;
        assert!(matches!(
            file.to_plan(),
            Err(PlanFileError::UnsupportedVersion(2))
        ));

        let bad = RatSpec {
            num: "1".into(),
            den: "0".into(),
        };
        assert!(matches!(bad.to_rat(), Err(PlanFileError::BadRational(_))));
        let ok = RatSpec {
            num: "-3".into(),
            den: "6".into(),
        };
        assert_eq!(ok.to_rat().unwrap(), crate::numerics::rat(-1, 2));
    }
}
