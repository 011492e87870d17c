//! Built-in model catalog for the slow-fast systems.
//!
//! All catalog members are scalar (n = m = l = d = j = 1) with scalar marks.
//! Coefficients are fixed closed forms selected by family name; only numeric
//! parameters and mark laws can be overridden.
//!
//! | family            | slow drift               | fast drift            | fast jumps |
//! |-------------------|--------------------------|-----------------------|------------|
//! | `analytic-ou`     | theta sin x + q z        | -kappa (z - c tanh x) | c2 u       |
//! | `bounded-tanh`    | theta sin x + q tanh z   | -kappa (z - c tanh x) | none       |
//! | `levy-correlated` | theta sin x + q z        | -kappa (z - c tanh x) | c2 u       |
//!
//! Slow diffusion is `sigma1 dV` (plus `sigma0 dB` for `levy-correlated`),
//! slow jumps are `c1 u` against `nu1 = r1 * law1`, fast diffusion is
//! `sigma2 dW`, fast jumps run against `nu2 = r2 * law2`.
//!
//! Assumption coverage:
//! * `bounded-tanh` satisfies every Lipschitz, boundedness, dissipativity and
//!   nondegeneracy hypothesis of the slow-fast theory when sigma2 > 0 and |c| < 2.
//! * `analytic-ou` and `levy-correlated` satisfy all of them except the uniform
//!   bound on |b1|^2 + |sigma1|^2 + int |f1|^2 nu1, because b1 grows linearly in z.
//!   They are kept because their averaged drift has a closed form.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{config_err, Error, Result};
use crate::kernel::{JumpMeasure, MarkLaw};
use crate::quadrature::hermite_64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    AnalyticOu,
    BoundedTanh,
    LevyCorrelated,
}

impl Family {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "analytic-ou" => Ok(Self::AnalyticOu),
            "bounded-tanh" => Ok(Self::BoundedTanh),
            "levy-correlated" => Ok(Self::LevyCorrelated),
            other => config_err(format!(
                "unknown model `{other}` (expected analytic-ou, bounded-tanh or levy-correlated)"
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::AnalyticOu => "analytic-ou",
            Self::BoundedTanh => "bounded-tanh",
            Self::LevyCorrelated => "levy-correlated",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Override value for a catalog parameter.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamValue {
    Num(f64),
    Text(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub theta: f64,
    pub q: f64,
    pub c: f64,
    pub kappa: f64,
    /// Diffusion on the shared channel V.
    pub sigma1: f64,
    /// Diffusion on the private channel B (`levy-correlated` only).
    pub sigma0: f64,
    pub c1: f64,
    pub nu1: JumpMeasure,
    pub sigma2: f64,
    pub c2: f64,
    pub nu2: JumpMeasure,
    pub x0: f64,
    pub z0: f64,
}

impl ModelParams {
    fn defaults(family: Family) -> Self {
        let unif = MarkLaw::Uniform;
        let (sigma1, sigma0) = match family {
            Family::LevyCorrelated => (0.4, 0.3),
            _ => (0.5, 0.0),
        };
        Self {
            theta: 1.0,
            q: 1.0,
            c: 1.0,
            kappa: 1.0,
            sigma1,
            sigma0,
            c1: 0.5,
            nu1: JumpMeasure {
                rate: 1.0,
                law: unif,
            },
            sigma2: 1.0,
            c2: if family == Family::BoundedTanh { 0.0 } else { 0.5 },
            nu2: JumpMeasure {
                rate: 1.0,
                law: unif,
            },
            x0: 0.5,
            z0: 0.0,
        }
    }

    fn set(&mut self, family: Family, key: &str, value: &ParamValue) -> Result<()> {
        let num = || match value {
            ParamValue::Num(v) if v.is_finite() => Ok(*v),
            _ => config_err(format!("parameter `{key}` must be a finite number")),
        };
        let law = || match value {
            ParamValue::Text(s) => MarkLaw::parse(s),
            _ => config_err(format!("parameter `{key}` must be a mark-law name")),
        };
        match key {
            "theta" => self.theta = num()?,
            "q" => self.q = num()?,
            "c" => self.c = num()?,
            "kappa" => self.kappa = num()?,
            "sigma1" => self.sigma1 = num()?,
            "sigma0" if family == Family::LevyCorrelated => self.sigma0 = num()?,
            "c1" => self.c1 = num()?,
            "r1" => self.nu1 = JumpMeasure::new(num()?, self.nu1.law)?,
            "law1" => self.nu1.law = law()?,
            "sigma2" => self.sigma2 = num()?,
            "c2" if family != Family::BoundedTanh => self.c2 = num()?,
            "r2" => self.nu2 = JumpMeasure::new(num()?, self.nu2.law)?,
            "law2" => self.nu2.law = law()?,
            "x0" => self.x0 = num()?,
            "z0" => self.z0 = num()?,
            other => {
                return config_err(format!(
                    "model `{family}` has no parameter `{other}`"
                ))
            }
        }
        Ok(())
    }
}

/// Lipschitz, growth and monotonicity constants declared for a model.
/// `None` marks a constant the model does not possess.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DeclaredConstants {
    pub l_b1: Option<f64>,
    pub l_sigma1: Option<f64>,
    pub l_f1: Option<f64>,
    pub l_b1_sigma1_f1: Option<f64>,
    pub l_b2: Option<f64>,
    pub lbar_b2: Option<f64>,
    pub l_sigma2: Option<f64>,
    pub int_l2_nu2: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dissipativity {
    pub m: f64,
    pub valid: bool,
}

/// M = 2 Lbar_b2 - L_b2 - 2 L_sigma2^2 - 2 int L^2 nu2, invalid when M <= 0.
pub fn verify_dissipativity(k: &DeclaredConstants) -> Result<Dissipativity> {
    let get = |v: Option<f64>, name: &str| -> Result<f64> {
        match v {
            Some(x) if x.is_finite() && x >= 0.0 => Ok(x),
            Some(x) => config_err(format!("declared constant {name} = {x} is not finite and >= 0")),
            None => config_err(format!("declared constant {name} is missing")),
        }
    };
    let lbar = get(k.lbar_b2, "Lbar_b2")?;
    let lb2 = get(k.l_b2, "L_b2")?;
    let ls2 = get(k.l_sigma2, "L_sigma2")?;
    let jl = get(k.int_l2_nu2, "int L^2 nu2")?;
    let m = 2.0 * lbar - lb2 - 2.0 * ls2 * ls2 - 2.0 * jl;
    Ok(Dissipativity { m, valid: m > 0.0 })
}

/// One catalog model with its parameters and declared constants.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub family: Family,
    pub params: ModelParams,
    pub constants: DeclaredConstants,
    f1_mean: f64,
    f2_mean: f64,
}

impl ModelSpec {
    pub fn catalog(name: &str, overrides: &BTreeMap<String, ParamValue>) -> Result<Self> {
        let family = Family::parse(name)?;
        let mut params = ModelParams::defaults(family);
        for (k, v) in overrides {
            params.set(family, k, v)?;
        }
        Self::from_params(family, params)
    }

    pub fn default_of(family: Family) -> Self {
        Self::from_params(family, ModelParams::defaults(family))
            .expect("catalog defaults are valid")
    }

    pub fn from_params(family: Family, params: ModelParams) -> Result<Self> {
        let p = &params;
        for (name, v) in [
            ("kappa", p.kappa),
            ("sigma1", p.sigma1),
            ("sigma0", p.sigma0),
            ("sigma2", p.sigma2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return config_err(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if family == Family::BoundedTanh && p.c2 != 0.0 {
            return config_err("bounded-tanh has no fast jumps (c2 must be 0)");
        }
        let eu2_1 = p.nu1.law.second_moment();
        let eu2_2 = p.nu2.law.second_moment();
        let int_l2_nu2 = p.c2 * p.c2 * p.nu2.rate * eu2_2;
        let bounded = match family {
            Family::BoundedTanh => Some(
                (p.theta.abs() + p.q.abs()).powi(2)
                    + p.sigma1 * p.sigma1
                    + p.c1 * p.c1 * p.nu1.rate * eu2_1,
            ),
            _ => None,
        };
        let constants = DeclaredConstants {
            l_b1: Some(2.0 * (p.theta * p.theta).max(p.q * p.q)),
            l_sigma1: Some(0.0),
            l_f1: Some(0.0),
            l_b1_sigma1_f1: bounded,
            l_b2: Some(p.kappa * p.c.abs()),
            lbar_b2: Some(p.kappa),
            l_sigma2: Some(0.0),
            int_l2_nu2: Some(int_l2_nu2),
        };
        let f1_mean = p.c1 * p.nu1.rate * p.nu1.law.mean();
        let f2_mean = p.c2 * p.nu2.rate * p.nu2.law.mean();
        Ok(Self {
            family,
            params,
            constants,
            f1_mean,
            f2_mean,
        })
    }

    pub fn dissipativity(&self) -> Result<Dissipativity> {
        verify_dissipativity(&self.constants)
    }

    /// True for families whose only deviation from the hypotheses is the
    /// unbounded slow drift.
    pub fn is_documented_exception(&self) -> bool {
        self.constants.l_b1_sigma1_f1.is_none()
    }

    #[inline]
    pub fn b1(&self, x: f64, z: f64) -> f64 {
        let p = &self.params;
        match self.family {
            Family::BoundedTanh => p.theta * x.sin() + p.q * z.tanh(),
            _ => p.theta * x.sin() + p.q * z,
        }
    }

    /// Coefficient of dV in the slow equation.
    #[inline]
    pub fn sigma_v(&self, _x: f64) -> f64 {
        self.params.sigma1
    }

    /// Coefficient of dB in the slow equation (zero outside `levy-correlated`).
    #[inline]
    pub fn sigma_b(&self, _x: f64) -> f64 {
        self.params.sigma0
    }

    #[inline]
    pub fn f1(&self, _x: f64, u: f64) -> f64 {
        self.params.c1 * u
    }

    /// int f1(x, u) nu1(du).
    #[inline]
    pub fn f1_compensator(&self, _x: f64) -> f64 {
        self.f1_mean
    }

    pub fn nu1(&self) -> JumpMeasure {
        self.params.nu1
    }

    #[inline]
    pub fn b2(&self, x: f64, z: f64) -> f64 {
        -self.params.kappa * (z - self.params.c * x.tanh())
    }

    #[inline]
    pub fn sigma2(&self, _x: f64, _z: f64) -> f64 {
        self.params.sigma2
    }

    #[inline]
    pub fn f2(&self, _x: f64, _z: f64, u: f64) -> f64 {
        self.params.c2 * u
    }

    /// int f2(x, z, u) nu2(du).
    #[inline]
    pub fn f2_compensator(&self, _x: f64, _z: f64) -> f64 {
        self.f2_mean
    }

    pub fn nu2(&self) -> JumpMeasure {
        self.params.nu2
    }

    pub fn has_slow_jumps(&self) -> bool {
        self.params.c1 != 0.0 && self.params.nu1.rate > 0.0
    }

    pub fn has_fast_jumps(&self) -> bool {
        self.params.c2 != 0.0 && self.params.nu2.rate > 0.0
    }

    /// True when the fast coefficients do not depend on the slow state.
    pub fn fast_is_x_independent(&self) -> bool {
        self.params.c == 0.0 || self.params.kappa == 0.0
    }

    /// True when the slow drift depends on the fast state.
    pub fn slow_depends_on_fast(&self) -> bool {
        self.params.q != 0.0
    }

    /// Mean of the frozen fast process' invariant law at `x`.
    pub fn invariant_mean(&self, x: f64) -> f64 {
        self.params.c * x.tanh()
    }

    /// Variance of the frozen fast process' invariant law.
    pub fn invariant_variance(&self) -> Result<f64> {
        let p = &self.params;
        if p.kappa <= 0.0 {
            return Err(Error::Model("invariant law requires kappa > 0".into()));
        }
        let jump = p.c2 * p.c2 * p.nu2.rate * p.nu2.law.second_moment();
        Ok((p.sigma2 * p.sigma2 + jump) / (2.0 * p.kappa))
    }

    /// Averaged slow drift by closed form (OU families) or Gauss-Hermite
    /// quadrature over the Gaussian invariant law (`bounded-tanh`).
    pub fn bbar_reference(&self, x: f64) -> Result<f64> {
        let p = &self.params;
        let mean = self.invariant_mean(x);
        match self.family {
            Family::BoundedTanh => {
                let sd = self.invariant_variance()?.sqrt();
                Ok(p.theta * x.sin() + p.q * hermite_64().expect_normal(mean, sd, f64::tanh))
            }
            _ => Ok(p.theta * x.sin() + p.q * mean),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consts(lbar: f64, lb2: f64, ls2: f64, jl: f64) -> DeclaredConstants {
        DeclaredConstants {
            lbar_b2: Some(lbar),
            l_b2: Some(lb2),
            l_sigma2: Some(ls2),
            int_l2_nu2: Some(jl),
            ..Default::default()
        }
    }

    #[test]
    fn dissipativity_hand_values() {
        let d = verify_dissipativity(&consts(2.0, 0.5, 0.0, 0.0)).unwrap();
        assert_eq!(d.m, 3.5);
        assert!(d.valid);
        let d = verify_dissipativity(&consts(0.25, 0.5, 0.0, 0.0)).unwrap();
        assert_eq!(d.m, 0.0);
        assert!(!d.valid);
        let d = verify_dissipativity(&consts(2.0, 0.5, 0.0, 1.0)).unwrap();
        assert_eq!(d.m, 1.5);
        let missing = DeclaredConstants {
            l_b2: None,
            ..consts(1.0, 0.0, 0.0, 0.0)
        };
        assert!(matches!(
            verify_dissipativity(&missing),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn catalog_defaults_are_dissipative() {
        for f in [Family::AnalyticOu, Family::BoundedTanh, Family::LevyCorrelated] {
            let m = ModelSpec::default_of(f);
            let d = m.dissipativity().unwrap();
            assert!(d.valid, "{f}: M = {}", d.m);
        }
        let ou = ModelSpec::default_of(Family::AnalyticOu);
        assert!((ou.dissipativity().unwrap().m - (1.0 - 2.0 * 0.25 / 3.0)).abs() < 1e-12);
        assert!(ou.is_documented_exception());
        assert!(!ModelSpec::default_of(Family::BoundedTanh).is_documented_exception());
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let mut o = BTreeMap::new();
        o.insert("kappa".to_string(), ParamValue::Num(2.0));
        o.insert("law2".to_string(), ParamValue::Text("normal".into()));
        let m = ModelSpec::catalog("analytic-ou", &o).unwrap();
        assert_eq!(m.params.kappa, 2.0);
        assert_eq!(m.params.nu2.law, MarkLaw::Normal);
        o.insert("kapa".to_string(), ParamValue::Num(1.0));
        assert!(ModelSpec::catalog("analytic-ou", &o).is_err());
        assert!(ModelSpec::catalog("lorenz", &BTreeMap::new()).is_err());
        let mut c2 = BTreeMap::new();
        c2.insert("c2".to_string(), ParamValue::Num(0.3));
        assert!(ModelSpec::catalog("bounded-tanh", &c2).is_err());
    }

    #[test]
    fn analytic_ou_bbar_closed_form() {
        let mut o = BTreeMap::new();
        o.insert("theta".to_string(), ParamValue::Num(0.0));
        let m = ModelSpec::catalog("analytic-ou", &o).unwrap();
        assert!((m.bbar_reference(1.0).unwrap() - 1f64.tanh()).abs() < 1e-15);
        assert_eq!(m.bbar_reference(0.0).unwrap(), 0.0);
        let v = m.invariant_variance().unwrap();
        assert!((v - (1.0 + 0.25 / 3.0) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn bounded_tanh_bbar_is_damped() {
        let m = ModelSpec::default_of(Family::BoundedTanh);
        let x: f64 = 0.5;
        let b = m.bbar_reference(x).unwrap();
        let naive = x.sin() + (x.tanh()).tanh();
        // E tanh(G) is pulled toward zero relative to tanh(E G).
        assert!(b < naive && b > x.sin());
    }
}
