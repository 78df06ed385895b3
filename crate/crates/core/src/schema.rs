//! JSON documents for problems and pricing scenarios.
//!
//! Expression nodes carry a `"type"` tag: `affine`, `quadratic`, `max`, `sum`,
//! `pwuni` or `comp`. Infinite bounds are written as `null`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kkt::LinearConstraint;
use crate::nsfunc::{CompNode, FuncExpr, Phi, Poly, PwUni, SmoothPiece};
use crate::pricing::{Cost, ProviderSpec, Scenario, UserSpec};
use crate::solver::{Bound, Problem, Sense};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ExprNode {
    Affine {
        c: Vec<f64>,
        d0: f64,
    },
    Quadratic {
        #[serde(rename = "Q")]
        q: Vec<Vec<f64>>,
        c: Vec<f64>,
        d0: f64,
    },
    Max {
        children: Vec<ExprNode>,
    },
    Sum {
        terms: Vec<SumTerm>,
    },
    Pwuni {
        var: usize,
        breaks: Vec<f64>,
        pieces: Vec<Vec<f64>>,
    },
    Comp {
        c0: f64,
        terms: Vec<CompTermNode>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SumTerm {
    pub w: f64,
    pub child: ExprNode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhiName {
    #[serde(rename = "id")]
    Identity,
    #[serde(rename = "exp")]
    Exp,
    #[serde(rename = "sq+")]
    SquarePos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompTermNode {
    pub c: f64,
    pub phi: PhiName,
    pub child: ExprNode,
}

impl ExprNode {
    pub fn to_expr(&self) -> Result<FuncExpr> {
        match self {
            ExprNode::Affine { c, d0 } => FuncExpr::affine(c.clone(), *d0),
            ExprNode::Quadratic { q, c, d0 } => FuncExpr::quadratic(q.clone(), c.clone(), *d0),
            ExprNode::Max { children } => FuncExpr::max(
                children
                    .iter()
                    .map(ExprNode::to_expr)
                    .collect::<Result<_>>()?,
            ),
            ExprNode::Sum { terms } => FuncExpr::sum(
                terms
                    .iter()
                    .map(|t| Ok((t.w, t.child.to_expr()?)))
                    .collect::<Result<_>>()?,
            ),
            ExprNode::Pwuni {
                var,
                breaks,
                pieces,
            } => FuncExpr::pwuni(*var, breaks.clone(), pieces.clone()),
            ExprNode::Comp { c0, terms } => FuncExpr::comp(
                *c0,
                terms
                    .iter()
                    .map(|t| {
                        let phi = match t.phi {
                            PhiName::Identity => Phi::Identity,
                            PhiName::Exp => Phi::Exp,
                            PhiName::SquarePos => Phi::SquarePos,
                        };
                        Ok((t.c, phi, t.child.to_expr()?))
                    })
                    .collect::<Result<_>>()?,
            ),
        }
    }

    pub fn from_expr(e: &FuncExpr) -> Self {
        match e {
            FuncExpr::Leaf(SmoothPiece::Affine { c, d0 }) => ExprNode::Affine {
                c: c.clone(),
                d0: *d0,
            },
            FuncExpr::Leaf(SmoothPiece::Quadratic { q, c, d0 }) => ExprNode::Quadratic {
                q: q.clone(),
                c: c.clone(),
                d0: *d0,
            },
            FuncExpr::Max(children) => ExprNode::Max {
                children: children.iter().map(ExprNode::from_expr).collect(),
            },
            FuncExpr::Sum(terms) => ExprNode::Sum {
                terms: terms
                    .iter()
                    .map(|t| SumTerm {
                        w: t.weight,
                        child: ExprNode::from_expr(&t.child),
                    })
                    .collect(),
            },
            FuncExpr::PwUni(pw) => ExprNode::Pwuni {
                var: pw.var,
                breaks: pw.breaks.clone(),
                pieces: pw.pieces.iter().map(|p| p.coeffs().to_vec()).collect(),
            },
            FuncExpr::Comp(CompNode { c0, terms }) => ExprNode::Comp {
                c0: *c0,
                terms: terms
                    .iter()
                    .map(|t| CompTermNode {
                        c: t.coef,
                        phi: match t.phi {
                            Phi::Identity => PhiName::Identity,
                            Phi::Exp => PhiName::Exp,
                            Phi::SquarePos => PhiName::SquarePos,
                        },
                        child: ExprNode::from_expr(&t.child),
                    })
                    .collect(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintEntry {
    pub a: Vec<f64>,
    pub b: f64,
}

/// Box side; `None` is infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundEntry {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

fn default_sense() -> Sense {
    Sense::Min
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub vars: usize,
    #[serde(default = "default_sense")]
    pub sense: Sense,
    pub objective: ExprNode,
    #[serde(default)]
    pub constraints: Vec<ConstraintEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<BoundEntry>>,
}

impl ProblemFile {
    pub fn to_problem(&self) -> Result<Problem> {
        let constraints = self
            .constraints
            .iter()
            .map(|c| LinearConstraint::new(c.a.clone(), c.b))
            .collect::<Result<Vec<_>>>()?;
        let bounds = self.bounds.as_ref().map(|bs| {
            bs.iter()
                .map(|b| Bound {
                    lo: b.lo.unwrap_or(f64::NEG_INFINITY),
                    hi: b.hi.unwrap_or(f64::INFINITY),
                })
                .collect()
        });
        Problem::new(
            self.vars,
            self.objective.to_expr()?,
            self.sense,
            constraints,
            bounds,
        )
    }

    pub fn from_problem(p: &Problem) -> Self {
        let finite = |v: f64| v.is_finite().then_some(v);
        Self {
            vars: p.dim(),
            sense: p.sense(),
            objective: ExprNode::from_expr(p.objective()),
            constraints: p
                .constraints()
                .iter()
                .map(|c| ConstraintEntry {
                    a: c.a.clone(),
                    b: c.b,
                })
                .collect(),
            bounds: p.bounds().map(|bs| {
                bs.iter()
                    .map(|b| BoundEntry {
                        lo: finite(b.lo),
                        hi: finite(b.hi),
                    })
                    .collect()
            }),
        }
    }
}

fn parse_err(e: serde_json::Error) -> Error {
    Error::Parse(e.to_string())
}

pub fn parse_problem(json: &str) -> Result<Problem> {
    serde_json::from_str::<ProblemFile>(json)
        .map_err(parse_err)?
        .to_problem()
}

pub fn problem_to_json(p: &Problem) -> String {
    serde_json::to_string_pretty(&ProblemFile::from_problem(p)).expect("plain data serializes")
}

/// Piecewise function given either by slopes (linear, through the origin)
/// or by explicit polynomial pieces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseEntry {
    #[serde(default)]
    pub breaks: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slopes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pieces: Option<Vec<Vec<f64>>>,
}

impl PiecewiseEntry {
    fn to_pwuni(&self) -> Result<PwUni> {
        match (&self.slopes, &self.pieces) {
            (Some(slopes), None) => {
                PwUni::piecewise_linear(0, self.breaks.clone(), slopes, 0.0, 0.0)
            }
            (None, Some(pieces)) => PwUni::new(
                0,
                self.breaks.clone(),
                pieces
                    .iter()
                    .cloned()
                    .map(Poly::new)
                    .collect::<Result<_>>()?,
            ),
            _ => Err(Error::Parse(
                "give exactly one of \"slopes\" and \"pieces\"".into(),
            )),
        }
    }

    fn from_pwuni(pw: &PwUni) -> Self {
        let through_origin = pw.value_at(0.0) == 0.0;
        if pw.is_linear() && through_origin {
            let slopes = pw
                .pieces
                .iter()
                .map(|p| p.coeffs().get(1).copied().unwrap_or(0.0));
            Self {
                breaks: pw.breaks.clone(),
                slopes: Some(slopes.collect()),
                pieces: None,
            }
        } else {
            Self {
                breaks: pw.breaks.clone(),
                slopes: None,
                pieces: Some(pw.pieces.iter().map(|p| p.coeffs().to_vec()).collect()),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserEntry {
    pub id: String,
    #[serde(default)]
    pub breaks: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slopes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pieces: Option<Vec<Vec<f64>>>,
    pub cap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CostEntry {
    Quadratic { c2: f64, c1: f64 },
    Piecewise { pl: PiecewiseEntry },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderEntry {
    pub cost: CostEntry,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub users: Vec<UserEntry>,
    pub provider: ProviderEntry,
}

impl ScenarioFile {
    pub fn to_scenario(&self) -> Result<Scenario> {
        let users = self
            .users
            .iter()
            .map(|u| {
                let utility = PiecewiseEntry {
                    breaks: u.breaks.clone(),
                    slopes: u.slopes.clone(),
                    pieces: u.pieces.clone(),
                };
                UserSpec::new(u.id.clone(), utility.to_pwuni()?, u.cap)
            })
            .collect::<Result<Vec<_>>>()?;
        let cost = match &self.provider.cost {
            CostEntry::Quadratic { c2, c1 } => Cost::Quadratic { c2: *c2, c1: *c1 },
            CostEntry::Piecewise { pl } => Cost::Piecewise(pl.to_pwuni()?),
        };
        Scenario::new(users, ProviderSpec::new(cost, self.provider.capacity)?)
    }

    pub fn from_scenario(sc: &Scenario) -> Self {
        Self {
            users: sc
                .users
                .iter()
                .map(|u| {
                    let e = PiecewiseEntry::from_pwuni(&u.utility);
                    UserEntry {
                        id: u.id.clone(),
                        breaks: e.breaks,
                        slopes: e.slopes,
                        pieces: e.pieces,
                        cap: u.cap,
                    }
                })
                .collect(),
            provider: ProviderEntry {
                cost: match &sc.provider.cost {
                    Cost::Quadratic { c2, c1 } => CostEntry::Quadratic { c2: *c2, c1: *c1 },
                    Cost::Piecewise(pw) => CostEntry::Piecewise {
                        pl: PiecewiseEntry::from_pwuni(pw),
                    },
                },
                capacity: sc.provider.capacity,
            },
        }
    }
}

pub fn parse_scenario(json: &str) -> Result<Scenario> {
    serde_json::from_str::<ScenarioFile>(json)
        .map_err(parse_err)?
        .to_scenario()
}

pub fn scenario_to_json(sc: &Scenario) -> String {
    serde_json::to_string_pretty(&ScenarioFile::from_scenario(sc)).expect("plain data serializes")
}
