//! Problem files (TOML or JSON).
//!
//! ```toml
//! masses = [1.0, 1.0, 1.0]
//! dimension = 2
//! guess = "builtin:equilateral"   # or positions = [...]
//! h0 = -1.0
//!
//! [tolerances]
//! rtol = 1e-10
//! atol = 1e-12
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::central::{builtin_guess, find_cc, CcOptions, CentralConfiguration};
use crate::error::{Error, Result};
use crate::hamiltonian::{CoefficientPath, ConstantPath, TrigPath};
use crate::homothetic::{b1_path, lambda_path, RadialProfile};
use crate::linalg::{from_rows, Vector};
use crate::nbody::MassSystem;
use crate::ode::Tolerances;

/// Coefficient path given directly in a problem file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PathSpec {
    Constant { matrix: Vec<Vec<f64>> },
    Trig {
        base: Vec<Vec<f64>>,
        #[serde(default)]
        terms: Vec<crate::hamiltonian::TrigTerm>,
    },
    /// Eigen-block 𝓑_λ of a homothetic orbit with Û(x₀) = b.
    HomotheticBlock { b: f64, lambda: f64, h0: f64 },
    /// Radial block B̂₁ of a homothetic orbit.
    HomotheticRadial { b: f64, h0: f64 },
}

impl PathSpec {
    pub fn build(&self) -> Result<Box<dyn CoefficientPath>> {
        Ok(match self {
            PathSpec::Constant { matrix } => {
                let m = from_rows(matrix)?;
                if m.nrows() != m.ncols() || m.nrows() % 2 != 0 || m.nrows() == 0 {
                    return Err(Error::InvalidInput("path.matrix must be square of even size".into()));
                }
                Box::new(ConstantPath::new(m))
            }
            PathSpec::Trig { base, terms } => {
                let p: TrigPath = serde_json::from_value(serde_json::json!({ "base": base, "terms": terms }))
                    .map_err(|e| Error::InvalidInput(format!("path: {e}")))?;
                Box::new(p.prepared()?)
            }
            PathSpec::HomotheticBlock { b, lambda, h0 } => Box::new(lambda_path(RadialProfile::new(*b, *h0)?, *lambda)),
            PathSpec::HomotheticRadial { b, h0 } => Box::new(b1_path(RadialProfile::new(*b, *h0)?)),
        })
    }
}

/// Synthetic homothetic spectrum: U(s₀) and the eigenvalues λᵢ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSpec {
    #[serde(rename = "U")]
    pub u: f64,
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub json: Option<String>,
    pub csv: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub masses: Option<Vec<f64>>,
    pub dimension: Option<usize>,
    /// Flat ambient positions (body-major).
    pub positions: Option<Vec<f64>>,
    pub velocities: Option<Vec<f64>>,
    /// `builtin:equilateral`, `builtin:collinear`, or a path to a file holding
    /// a `positions` array.
    pub guess: Option<String>,
    pub h0: Option<f64>,
    pub pipeline: Option<String>,
    pub tolerances: Option<Tolerances>,
    pub output: Option<OutputSpec>,
    pub path: Option<PathSpec>,
    pub spectrum: Option<SpectrumSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Toml,
    Json,
}

impl ProblemSpec {
    pub fn parse(text: &str, format: Format) -> Result<Self> {
        match format {
            Format::Toml => toml::from_str(text).map_err(|e| Error::InvalidInput(format!("TOML: {e}"))),
            Format::Json => serde_json::from_str(text).map_err(|e| {
                Error::InvalidInput(format!("JSON line {} column {}: {e}", e.line(), e.column()))
            }),
        }
    }

    /// Reads a problem file; `.json` is JSON, anything else TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
        let format = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Format::Json,
            _ => Format::Toml,
        };
        let spec = Self::parse(&text, format).map_err(|e| match e {
            Error::InvalidInput(m) => Error::InvalidInput(format!("{}: {m}", path.display())),
            other => other,
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(m) = &self.masses {
            if m.len() < 2 || m.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                return Err(Error::InvalidInput("key `masses`: need at least two positive finite masses".into()));
            }
            if self.dimension.is_none() {
                return Err(Error::InvalidInput("key `dimension`: required when `masses` is given".into()));
            }
        }
        if let (Some(m), Some(d)) = (&self.masses, self.dimension) {
            if d == 0 {
                return Err(Error::InvalidInput("key `dimension`: must be at least 1".into()));
            }
            for (key, v) in [("positions", &self.positions), ("velocities", &self.velocities)] {
                if let Some(v) = v {
                    if v.len() != m.len() * d {
                        return Err(Error::InvalidInput(format!(
                            "key `{key}`: expected {} numbers (n·d), got {}",
                            m.len() * d,
                            v.len()
                        )));
                    }
                }
            }
        }
        if let Some(t) = &self.tolerances {
            if !(t.rtol > 0.0 && t.atol > 0.0) {
                return Err(Error::InvalidInput("key `tolerances`: rtol and atol must be positive".into()));
            }
        }
        if let Some(h) = self.h0 {
            if !h.is_finite() {
                return Err(Error::InvalidInput("key `h0`: must be finite".into()));
            }
        }
        if let Some(s) = &self.spectrum {
            if !(s.u > 0.0) {
                return Err(Error::InvalidInput("key `spectrum.U`: must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn system(&self) -> Result<MassSystem> {
        let masses = self.masses.clone().ok_or_else(|| Error::InvalidInput("key `masses`: missing".into()))?;
        let d = self.dimension.ok_or_else(|| Error::InvalidInput("key `dimension`: missing".into()))?;
        MassSystem::new(masses, d)
    }

    pub fn tolerances(&self) -> Tolerances {
        self.tolerances.unwrap_or_default()
    }

    /// Starting configuration: `positions`, else `guess`, else collinear.
    pub fn starting_configuration(&self, sys: &MassSystem, guess_override: Option<&str>) -> Result<Vector> {
        if let Some(g) = guess_override.or(self.guess.as_deref()) {
            return resolve_guess(sys, g);
        }
        if let Some(p) = &self.positions {
            return Ok(Vector::from_column_slice(p));
        }
        builtin_guess(sys, "collinear")
    }

    /// Central configuration found from the starting configuration.
    pub fn central_configuration(&self, sys: &MassSystem, guess: Option<&str>, opts: &CcOptions) -> Result<CentralConfiguration> {
        let q = self.starting_configuration(sys, guess)?;
        find_cc(sys, &q, opts)
    }
}

fn resolve_guess(sys: &MassSystem, g: &str) -> Result<Vector> {
    if let Some(name) = g.strip_prefix("builtin:") {
        return builtin_guess(sys, name);
    }
    let spec = ProblemSpec::load(Path::new(g))?;
    let p = spec
        .positions
        .ok_or_else(|| Error::InvalidInput(format!("{g}: key `positions` missing")))?;
    if p.len() != sys.n * sys.d {
        return Err(Error::InvalidInput(format!("{g}: key `positions` has {} numbers, expected {}", p.len(), sys.n * sys.d)));
    }
    Ok(Vector::from_vec(p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_agree() {
        let t = r#"
masses = [1.0, 2.0, 3.0]
dimension = 2
guess = "builtin:equilateral"
h0 = -0.1
[tolerances]
rtol = 1e-9
atol = 1e-11
[path]
type = "homothetic-block"
b = 2.0
lambda = -0.1
h0 = -1.0
"#;
        let a = ProblemSpec::parse(t, Format::Toml).unwrap();
        let j = serde_json::to_string(&a).unwrap();
        let b = ProblemSpec::parse(&j, Format::Json).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.masses.as_deref(), Some(&[1.0, 2.0, 3.0][..]));
        assert!(matches!(a.path, Some(PathSpec::HomotheticBlock { .. })));
        a.validate().unwrap();
    }

    #[test]
    fn diagnostics_name_the_key() {
        let e = ProblemSpec::parse("masses = [1.0, 1.0]\ndimesion = 2\n", Format::Toml).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("dimesion") && msg.contains("line 2"), "{msg}");
        let spec = ProblemSpec::parse("masses = [1.0, 1.0]\ndimension = 2\npositions = [1.0]\n", Format::Toml).unwrap();
        assert!(spec.validate().unwrap_err().to_string().contains("positions"));
    }

    #[test]
    fn float_values_round_trip_exactly() {
        let x = 0.1f64 + 0.2;
        let spec = ProblemSpec { h0: Some(x), masses: Some(vec![1.0 / 3.0, 2.0]), dimension: Some(1), ..Default::default() };
        let back = ProblemSpec::parse(&serde_json::to_string(&spec).unwrap(), Format::Json).unwrap();
        assert_eq!(back.h0.unwrap().to_bits(), x.to_bits());
        assert_eq!(back.masses.unwrap()[0].to_bits(), (1.0f64 / 3.0).to_bits());
    }

    #[test]
    fn trig_path_builds() {
        let spec: PathSpec = serde_json::from_str(
            r#"{"type": "trig", "base": [[1, 0], [0, -1]], "terms": [{"omega": 2, "cos": [[0, 0.1], [0.1, 0]], "sin": [[0, 0], [0, 0.2]]}]}"#,
        )
        .unwrap();
        let p = spec.build().unwrap();
        assert_eq!(p.dim(), 2);
        assert!((p.eval(0.0)[(0, 1)] - 0.1).abs() < 1e-15);
    }
}
