//! Model parameters and the primitive economic functions shared by the
//! single-firm, regulated two-firm and unregulated two-firm models.
//!
//! Conventions used throughout the crate:
//!
//! ```text
//! price        P(x)   = p0 - p1 x1 - p2 x2
//! revenue      f(x)   = P(x) (x1 + x2),   f_i(x) = P(x) x_i
//! social cost  g(x)   = ½ κ x_d² + ½ λ (x1 + x2 - δ)²
//! effort cost  c_i(a) = a² / (2 γ_i)
//! ```
//!
//! `x_d` is the penalized technology: `x1` for the single firm, `x2` for the
//! regulated two-firm model. With `literal_signs` set, the single-firm model
//! switches to `f(x) = (p0 - p1 x1 + p2 x2)(x1 + x2)` and a deviation weight of
//! `λ` instead of `½ λ`.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Production (or emission) levels of technology/firm 1 and 2.
pub type StateVector = Vector2<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("field `{0}` is not allowed for this model kind")]
    UnexpectedField(&'static str),
    #[error("field `{field}` out of range: {value}")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("operation requires {expected}, got {found:?}")]
    WrongKind {
        expected: &'static str,
        found: ModelKind,
    },
}

impl ParamError {
    /// Name of the offending field, when the error is tied to one.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            ParamError::MissingField(f) | ParamError::UnexpectedField(f) => Some(f),
            ParamError::OutOfRange { field, .. } => Some(field),
            ParamError::WrongKind { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    SingleFirm,
    #[serde(rename = "two-firm")]
    TwoFirmRegulated,
    #[serde(rename = "nash")]
    TwoFirmNash,
}

impl ModelKind {
    pub fn has_principal(self) -> bool {
        !matches!(self, ModelKind::TwoFirmNash)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Firm {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

impl Firm {
    pub const BOTH: [Firm; 2] = [Firm::One, Firm::Two];

    pub fn index(self) -> usize {
        match self {
            Firm::One => 0,
            Firm::Two => 1,
        }
    }

    pub fn other(self) -> Firm {
        match self {
            Firm::One => Firm::Two,
            Firm::Two => Firm::One,
        }
    }

    pub fn from_number(n: u8) -> Option<Firm> {
        match n {
            1 => Some(Firm::One),
            2 => Some(Firm::Two),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RevenueScope {
    Total,
    Firm1,
    Firm2,
}

/// Unvalidated parameter record, as read from a configuration document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawParams {
    pub kind: Option<ModelKind>,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    pub sigma1: Option<f64>,
    pub sigma2: Option<f64>,
    /// Agent risk aversion of the single-firm model.
    pub eta_a: Option<f64>,
    pub eta1: Option<f64>,
    pub eta2: Option<f64>,
    pub eta_p: Option<f64>,
    pub p0: Option<f64>,
    pub p1: Option<f64>,
    pub p2: Option<f64>,
    pub kappa: Option<f64>,
    pub lambda: Option<f64>,
    pub delta: Option<f64>,
    pub horizon: Option<f64>,
    pub literal_signs: Option<bool>,
}

impl RawParams {
    pub fn validate(&self) -> Result<ModelParams, ParamError> {
        validate_params(self)
    }
}

/// Regulator-side constants, present only for the contracting models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrincipalParams {
    pub eta_p: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub delta: f64,
}

/// Validated, immutable model constants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelParams {
    kind: ModelKind,
    gamma: [f64; 2],
    sigma: [f64; 2],
    /// Agent risk aversions; both entries hold `η_A` for the single firm.
    eta: [f64; 2],
    principal: Option<PrincipalParams>,
    p: [f64; 3],
    horizon: f64,
    literal_signs: bool,
}

fn require(value: Option<f64>, field: &'static str) -> Result<f64, ParamError> {
    value.ok_or(ParamError::MissingField(field))
}

fn forbid<T>(value: &Option<T>, field: &'static str) -> Result<(), ParamError> {
    match value {
        Some(_) => Err(ParamError::UnexpectedField(field)),
        None => Ok(()),
    }
}

fn positive(value: Option<f64>, field: &'static str) -> Result<f64, ParamError> {
    let v = require(value, field)?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(ParamError::OutOfRange { field, value: v })
    }
}

fn non_negative(value: Option<f64>, field: &'static str) -> Result<f64, ParamError> {
    let v = require(value, field)?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(ParamError::OutOfRange { field, value: v })
    }
}

fn finite(value: Option<f64>, field: &'static str) -> Result<f64, ParamError> {
    let v = require(value, field)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ParamError::OutOfRange { field, value: v })
    }
}

/// Checks field presence for the record's kind and the sign constraints on
/// every value.
pub fn validate_params(raw: &RawParams) -> Result<ModelParams, ParamError> {
    let kind = raw.kind.ok_or(ParamError::MissingField("kind"))?;

    let eta = match kind {
        ModelKind::SingleFirm => {
            forbid(&raw.eta1, "eta1")?;
            forbid(&raw.eta2, "eta2")?;
            let eta_a = positive(raw.eta_a, "eta_a")?;
            [eta_a, eta_a]
        }
        ModelKind::TwoFirmRegulated | ModelKind::TwoFirmNash => {
            forbid(&raw.eta_a, "eta_a")?;
            [positive(raw.eta1, "eta1")?, positive(raw.eta2, "eta2")?]
        }
    };

    let principal = if kind.has_principal() {
        Some(PrincipalParams {
            eta_p: positive(raw.eta_p, "eta_p")?,
            kappa: non_negative(raw.kappa, "kappa")?,
            lambda: non_negative(raw.lambda, "lambda")?,
            delta: finite(raw.delta, "delta")?,
        })
    } else {
        forbid(&raw.eta_p, "eta_p")?;
        forbid(&raw.kappa, "kappa")?;
        forbid(&raw.lambda, "lambda")?;
        forbid(&raw.delta, "delta")?;
        None
    };

    Ok(ModelParams {
        kind,
        gamma: [positive(raw.gamma1, "gamma1")?, positive(raw.gamma2, "gamma2")?],
        sigma: [positive(raw.sigma1, "sigma1")?, positive(raw.sigma2, "sigma2")?],
        eta,
        principal,
        p: [
            non_negative(raw.p0, "p0")?,
            non_negative(raw.p1, "p1")?,
            non_negative(raw.p2, "p2")?,
        ],
        horizon: positive(raw.horizon, "horizon")?,
        literal_signs: raw.literal_signs.unwrap_or(false),
    })
}

/// Quadratic polynomial `½ x·Q x + L·x + c` in the two state coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadratic {
    pub q: Matrix2<f64>,
    pub l: Vector2<f64>,
    pub c: f64,
}

impl Quadratic {
    pub fn zero() -> Self {
        Quadratic {
            q: Matrix2::zeros(),
            l: Vector2::zeros(),
            c: 0.0,
        }
    }

    pub fn eval(&self, x: &StateVector) -> f64 {
        0.5 * x.dot(&(self.q * x)) + self.l.dot(x) + self.c
    }
}

impl std::ops::Sub for Quadratic {
    type Output = Quadratic;

    fn sub(self, rhs: Quadratic) -> Quadratic {
        Quadratic {
            q: self.q - rhs.q,
            l: self.l - rhs.l,
            c: self.c - rhs.c,
        }
    }
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn gamma(&self, firm: Firm) -> f64 {
        self.gamma[firm.index()]
    }

    pub fn sigma(&self, firm: Firm) -> f64 {
        self.sigma[firm.index()]
    }

    /// Risk aversion of agent/firm `firm` (`η_A` for both slots in the
    /// single-firm model).
    pub fn eta(&self, firm: Firm) -> f64 {
        self.eta[firm.index()]
    }

    pub fn principal(&self) -> Option<&PrincipalParams> {
        self.principal.as_ref()
    }

    pub fn require_principal(&self) -> Result<&PrincipalParams, ParamError> {
        self.principal.as_ref().ok_or(ParamError::WrongKind {
            expected: "a model with a principal",
            found: self.kind,
        })
    }

    pub fn require_kind(&self, kind: ModelKind) -> Result<(), ParamError> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(ParamError::WrongKind {
                expected: match kind {
                    ModelKind::SingleFirm => "single-firm",
                    ModelKind::TwoFirmRegulated => "two-firm",
                    ModelKind::TwoFirmNash => "nash",
                },
                found: self.kind,
            })
        }
    }

    /// Price coefficients `(p0, p1, p2)`.
    pub fn prices(&self) -> [f64; 3] {
        self.p
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn literal_signs(&self) -> bool {
        self.literal_signs
    }

    /// Copy with a different horizon; the horizon is validated like any other
    /// strictly positive field.
    pub fn with_horizon(&self, horizon: f64) -> Result<ModelParams, ParamError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(ParamError::OutOfRange {
                field: "horizon",
                value: horizon,
            });
        }
        Ok(ModelParams {
            horizon,
            ..self.clone()
        })
    }

    pub fn with_literal_signs(&self, literal_signs: bool) -> ModelParams {
        ModelParams {
            literal_signs,
            ..self.clone()
        }
    }

    fn single_firm_literal(&self) -> bool {
        self.literal_signs && self.kind == ModelKind::SingleFirm
    }

    /// Common price factor `p0 - p1 x1 - p2 x2`.
    pub fn price(&self, x: &StateVector) -> f64 {
        let [p0, p1, p2] = self.p;
        p0 - p1 * x[0] - p2 * x[1]
    }

    pub fn revenue(&self, x: &StateVector, scope: RevenueScope) -> f64 {
        match scope {
            RevenueScope::Total if self.single_firm_literal() => {
                let [p0, p1, p2] = self.p;
                (p0 - p1 * x[0] + p2 * x[1]) * (x[0] + x[1])
            }
            RevenueScope::Total => self.price(x) * (x[0] + x[1]),
            RevenueScope::Firm1 => self.price(x) * x[0],
            RevenueScope::Firm2 => self.price(x) * x[1],
        }
    }

    /// Revenue of a single firm, `P(x) x_i`.
    pub fn firm_revenue(&self, x: &StateVector, firm: Firm) -> f64 {
        match firm {
            Firm::One => self.revenue(x, RevenueScope::Firm1),
            Firm::Two => self.revenue(x, RevenueScope::Firm2),
        }
    }

    fn penalized_coordinate(&self) -> usize {
        match self.kind {
            ModelKind::SingleFirm => 0,
            _ => 1,
        }
    }

    pub fn social_cost(&self, x: &StateVector) -> Result<f64, ParamError> {
        let pr = self.require_principal()?;
        let xd = x[self.penalized_coordinate()];
        let dev = x[0] + x[1] - pr.delta;
        let dev_weight = if self.single_firm_literal() {
            pr.lambda
        } else {
            0.5 * pr.lambda
        };
        Ok(0.5 * pr.kappa * xd * xd + dev_weight * dev * dev)
    }

    pub fn effort_cost(&self, a: f64, firm: Firm) -> f64 {
        a * a / (2.0 * self.gamma(firm))
    }

    /// Total revenue written as `½ x·Q x + L·x + c`.
    pub fn revenue_quadratic(&self) -> Quadratic {
        let [p0, p1, p2] = self.p;
        // P(x)(x1 + x2): x1² → -p1, x2² → ∓p2, x1x2 → -(p1 ± p2)
        let (q22, q12) = if self.single_firm_literal() {
            (2.0 * p2, p2 - p1)
        } else {
            (-2.0 * p2, -(p1 + p2))
        };
        Quadratic {
            q: Matrix2::new(-2.0 * p1, q12, q12, q22),
            l: Vector2::new(p0, p0),
            c: 0.0,
        }
    }

    /// Social cost written as `½ x·Q x + L·x + c`.
    pub fn social_cost_quadratic(&self) -> Result<Quadratic, ParamError> {
        let pr = self.require_principal()?;
        let w = if self.single_firm_literal() {
            2.0 * pr.lambda
        } else {
            pr.lambda
        };
        let mut q = Matrix2::from_element(w);
        let d = self.penalized_coordinate();
        q[(d, d)] += pr.kappa;
        Ok(Quadratic {
            q,
            l: Vector2::from_element(-w * pr.delta),
            c: 0.5 * w * pr.delta * pr.delta,
        })
    }
}

/// Parameter sets used by the shipped scenarios and the test-suite.
pub mod scenarios {
    use super::*;

    /// Unregulated duopoly: σ = (0.2, 0.3), p = (1, 0.6, 0.4), η = (1, 1),
    /// γ = (1.5, 1), T = 1.
    pub fn duopoly_raw() -> RawParams {
        RawParams {
            kind: Some(ModelKind::TwoFirmNash),
            gamma1: Some(1.5),
            gamma2: Some(1.0),
            sigma1: Some(0.2),
            sigma2: Some(0.3),
            eta1: Some(1.0),
            eta2: Some(1.0),
            p0: Some(1.0),
            p1: Some(0.6),
            p2: Some(0.4),
            horizon: Some(1.0),
            ..RawParams::default()
        }
    }

    pub fn duopoly() -> ModelParams {
        duopoly_raw().validate().expect("duopoly parameters are valid")
    }

    /// Regulated two-firm fixture: the duopoly constants plus
    /// κ = λ = δ = η_p = 1.
    pub fn regulated_raw() -> RawParams {
        RawParams {
            kind: Some(ModelKind::TwoFirmRegulated),
            eta_p: Some(1.0),
            kappa: Some(1.0),
            lambda: Some(1.0),
            delta: Some(1.0),
            ..duopoly_raw()
        }
    }

    pub fn regulated() -> ModelParams {
        regulated_raw().validate().expect("regulated parameters are valid")
    }

    /// Single-firm analogue of [`regulated`] with `η_A = 1`.
    pub fn single_firm_raw() -> RawParams {
        RawParams {
            kind: Some(ModelKind::SingleFirm),
            eta1: None,
            eta2: None,
            eta_a: Some(1.0),
            ..regulated_raw()
        }
    }

    pub fn single_firm() -> ModelParams {
        single_firm_raw()
            .validate()
            .expect("single-firm parameters are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::scenarios::*;
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn x(a: f64, b: f64) -> StateVector {
        StateVector::new(a, b)
    }

    #[test]
    fn duopoly_validates() {
        let p = duopoly();
        assert_eq!(p.kind(), ModelKind::TwoFirmNash);
        assert_eq!(p.gamma(Firm::One), 1.5);
        assert_eq!(p.sigma(Firm::Two), 0.3);
        assert!(p.principal().is_none());
    }

    #[test]
    fn zero_gamma_is_out_of_range() {
        let raw = RawParams {
            gamma1: Some(0.0),
            ..duopoly_raw()
        };
        let err = raw.validate().unwrap_err();
        assert_eq!(err.field(), Some("gamma1"));
        assert!(matches!(err, ParamError::OutOfRange { .. }));
    }

    #[test]
    fn nash_rejects_principal_fields() {
        let raw = RawParams {
            kappa: Some(1.0),
            ..duopoly_raw()
        };
        assert_eq!(raw.validate(), Err(ParamError::UnexpectedField("kappa")));
    }

    #[test]
    fn missing_and_non_finite_fields() {
        let raw = RawParams {
            sigma2: None,
            ..duopoly_raw()
        };
        assert_eq!(raw.validate(), Err(ParamError::MissingField("sigma2")));
        let raw = RawParams {
            p1: Some(f64::NAN),
            ..duopoly_raw()
        };
        assert_eq!(raw.validate().unwrap_err().field(), Some("p1"));
        let raw = RawParams {
            eta_p: None,
            ..regulated_raw()
        };
        assert_eq!(raw.validate(), Err(ParamError::MissingField("eta_p")));
        let raw = RawParams {
            eta1: Some(1.0),
            ..single_firm_raw()
        };
        assert_eq!(raw.validate(), Err(ParamError::UnexpectedField("eta1")));
    }

    #[test]
    fn negative_delta_is_allowed() {
        let raw = RawParams {
            delta: Some(-3.0),
            ..regulated_raw()
        };
        assert!(raw.validate().is_ok());
    }

    #[test]
    fn price_examples() {
        let p = duopoly();
        assert_eq!(p.price(&x(0.0, 0.0)), 1.0);
        assert_abs_diff_eq!(p.price(&x(1.0, 1.0)), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.price(&x(0.5, 0.5)), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn revenue_examples() {
        let p = duopoly();
        for scope in [RevenueScope::Total, RevenueScope::Firm1, RevenueScope::Firm2] {
            assert_eq!(p.revenue(&x(0.0, 0.0), scope), 0.0);
        }
        assert_abs_diff_eq!(p.revenue(&x(0.5, 0.5), RevenueScope::Total), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn literal_single_firm_revenue() {
        let p = single_firm().with_literal_signs(true);
        // (1 - 0.6·0.5 + 0.4·0.5)(1.0)
        assert_abs_diff_eq!(p.revenue(&x(0.5, 0.5), RevenueScope::Total), 0.9, epsilon = 1e-15);
        // literal signs do not touch the two-firm models
        let q = regulated().with_literal_signs(true);
        assert_abs_diff_eq!(q.revenue(&x(0.5, 0.5), RevenueScope::Total), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn social_cost_examples() {
        let p = regulated();
        assert_abs_diff_eq!(p.social_cost(&x(0.0, 0.0)).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p.social_cost(&x(1.0, 0.0)).unwrap(), 0.0, epsilon = 1e-15);

        let zero = RawParams {
            kappa: Some(0.0),
            lambda: Some(0.0),
            ..regulated_raw()
        }
        .validate()
        .unwrap();
        assert_eq!(zero.social_cost(&x(3.0, -7.0)).unwrap(), 0.0);

        assert!(matches!(
            duopoly().social_cost(&x(0.0, 0.0)),
            Err(ParamError::WrongKind { .. })
        ));
    }

    #[test]
    fn literal_single_firm_social_cost() {
        let p = single_firm();
        let lit = p.with_literal_signs(true);
        // x = (1, 1): κ term ½·1, deviation (2-1)² weighted ½ vs 1
        assert_abs_diff_eq!(p.social_cost(&x(1.0, 1.0)).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(lit.social_cost(&x(1.0, 1.0)).unwrap(), 1.5, epsilon = 1e-15);
    }

    #[test]
    fn effort_cost_examples() {
        let p = duopoly();
        assert_eq!(p.effort_cost(0.0, Firm::One), 0.0);
        assert_abs_diff_eq!(p.effort_cost(3.0, Firm::One), 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.effort_cost(1.0, Firm::Two), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn quadratic_forms_match_pointwise() {
        for params in [
            regulated(),
            single_firm(),
            single_firm().with_literal_signs(true),
        ] {
            let f = params.revenue_quadratic();
            let g = params.social_cost_quadratic().unwrap();
            for &(a, b) in &[(0.0, 0.0), (1.3, -0.7), (-2.0, 2.0), (0.25, 4.0)] {
                let s = x(a, b);
                assert_abs_diff_eq!(
                    f.eval(&s),
                    params.revenue(&s, RevenueScope::Total),
                    epsilon = 1e-12
                );
                assert_abs_diff_eq!(g.eval(&s), params.social_cost(&s).unwrap(), epsilon = 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn revenue_decomposes(a in -10.0..10.0f64, b in -10.0..10.0f64) {
            let p = duopoly();
            let s = x(a, b);
            let total = p.revenue(&s, RevenueScope::Total);
            let parts = p.revenue(&s, RevenueScope::Firm1) + p.revenue(&s, RevenueScope::Firm2);
            prop_assert!((total - parts).abs() <= 1e-12 * (1.0 + total.abs()));
        }

        #[test]
        fn social_cost_non_negative(a in -10.0..10.0f64, b in -10.0..10.0f64) {
            prop_assert!(regulated().social_cost(&x(a, b)).unwrap() >= 0.0);
            prop_assert!(single_firm().social_cost(&x(a, b)).unwrap() >= 0.0);
        }

        #[test]
        fn social_cost_vanishes_on_zero_set(delta in -5.0..5.0f64) {
            let p = RawParams { delta: Some(delta), ..regulated_raw() }.validate().unwrap();
            // x2 = 0 and x1 + x2 = δ
            prop_assert!(p.social_cost(&x(delta, 0.0)).unwrap().abs() < 1e-15);
        }

        #[test]
        fn effort_cost_even_and_convex(a in -10.0..10.0f64) {
            let p = duopoly();
            for firm in Firm::BOTH {
                prop_assert_eq!(p.effort_cost(a, firm), p.effort_cost(-a, firm));
                let h = 1e-2;
                let second = p.effort_cost(a + h, firm) - 2.0 * p.effort_cost(a, firm)
                    + p.effort_cost(a - h, firm);
                prop_assert!(second > 0.0);
            }
        }

        #[test]
        fn price_is_affine(
            a in -5.0..5.0f64, b in -5.0..5.0f64,
            c in -5.0..5.0f64, d in -5.0..5.0f64,
        ) {
            let p = duopoly();
            let (u, v) = (x(a, b), x(c, d));
            let lhs = p.price(&(u + v)) + p.price(&x(0.0, 0.0));
            let rhs = p.price(&u) + p.price(&v);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
