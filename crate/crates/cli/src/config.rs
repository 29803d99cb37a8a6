//! Problem files: one TOML document per problem. The grammar is described in
//! `docs/config.md`.

use std::fmt;

use hvopt::model::{build_l0, LinearInequality};
use hvopt::{Flavor, FunctionHandle, HeavisideTerm, PolyhedralSet, ProblemSpec};
use serde::Deserialize;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    format: u32,
    name: Option<String>,
    dimension: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: String,
    budget: Option<f64>,
    #[serde(default)]
    inequality: Vec<RowFile>,
    l0: Option<L0File>,
    #[serde(default)]
    objective: Vec<TermFile>,
    #[serde(default)]
    constraint: Vec<TermFile>,
    start: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RowFile {
    a: Vec<f64>,
    d: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct L0File {
    weights: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermFile {
    multiplier: String,
    inner: String,
    #[serde(default)]
    flavor: FlavorFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
enum FlavorFile {
    #[default]
    Open,
    Closed,
}

/// A validation failure tied to a location in the problem file.
#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn err(field: impl Into<String>, message: impl fmt::Display) -> ConfigError {
    ConfigError { field: field.into(), message: message.to_string() }
}

#[derive(Clone, Debug)]
pub struct LoadedProblem {
    pub name: String,
    pub problem: ProblemSpec,
    pub start: Option<Vec<f64>>,
}

pub fn parse(text: &str, default_name: &str) -> Result<LoadedProblem, ConfigError> {
    let file: ProblemFile = toml::from_str(text).map_err(|e| err("document", e.to_string().trim_end()))?;
    if file.format != FORMAT_VERSION {
        return Err(err("format", format!("unsupported version {}, expected {FORMAT_VERSION}", file.format)));
    }
    let n = file.dimension;
    if n == 0 {
        return Err(err("dimension", "must be positive"));
    }
    let vec_len = |field: &str, v: &[f64]| {
        if v.len() == n {
            Ok(())
        } else {
            Err(err(field, format!("has {} entries, dimension is {n}", v.len())))
        }
    };
    vec_len("lower", &file.lower)?;
    vec_len("upper", &file.upper)?;
    let mut rows = Vec::with_capacity(file.inequality.len());
    for (i, r) in file.inequality.iter().enumerate() {
        vec_len(&format!("inequality[{i}].a"), &r.a)?;
        rows.push(LinearInequality { a: r.a.clone(), d: r.d });
    }
    let set = PolyhedralSet::new(n, rows, file.lower.clone(), file.upper.clone()).map_err(|e| err("lower/upper/inequality", e))?;
    let expr = |field: String, src: &str| FunctionHandle::parse(src, n).map_err(|e| err(field, e));
    let cost = expr("cost".into(), &file.cost)?;
    let mut objective = Vec::new();
    if let Some(l0) = &file.l0 {
        vec_len("l0.weights", &l0.weights)?;
        objective.extend(build_l0(&l0.weights).map_err(|e| err("l0.weights", e))?);
    }
    let terms = |section: &str, list: &[TermFile]| -> Result<Vec<HeavisideTerm>, ConfigError> {
        list.iter()
            .enumerate()
            .map(|(i, t)| {
                let flavor = match t.flavor {
                    FlavorFile::Open => Flavor::Open,
                    FlavorFile::Closed => Flavor::Closed,
                };
                Ok(HeavisideTerm::new(
                    expr(format!("{section}[{i}].multiplier"), &t.multiplier)?,
                    expr(format!("{section}[{i}].inner"), &t.inner)?,
                    flavor,
                ))
            })
            .collect()
    };
    objective.extend(terms("objective", &file.objective)?);
    let constraint = terms("constraint", &file.constraint)?;
    if let Some(s) = &file.start {
        vec_len("start", s)?;
        if !set.contains(s, 1e-12) {
            return Err(err("start", "lies outside the polyhedral set"));
        }
    }
    let problem = ProblemSpec::new(cost, objective, constraint, file.budget, set).map_err(|e| err("problem", e))?;
    Ok(LoadedProblem {
        name: file.name.unwrap_or_else(|| default_name.to_string()),
        problem,
        start: file.start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const L0: &str = r#"
format = 1
dimension = 1
lower = [-2.0]
upper = [2.0]
cost = "(x1 - 1)^2"
[l0]
weights = [0.5]
"#;

    #[test]
    fn l0_file_builds_two_terms() {
        let p = parse(L0, "l0").unwrap();
        assert_eq!(p.problem.n_objective(), 2);
        assert_eq!(p.problem.phi(&[1.0]), 0.5);
        assert_eq!(p.name, "l0");
    }

    #[test]
    fn negative_weight_is_rejected_with_its_field() {
        let e = parse(&L0.replace("0.5]", "-0.5]"), "l0").unwrap_err();
        assert_eq!(e.field, "l0.weights");
        assert!(e.message.contains("nonnegative"), "{e}");
    }

    #[test]
    fn bad_expression_names_the_term() {
        let src = format!("{L0}\n[[objective]]\nmultiplier = \"1\"\ninner = \"x1 +\"\n");
        let e = parse(&src, "l0").unwrap_err();
        assert_eq!(e.field, "objective[0].inner");
    }

    #[test]
    fn syntax_errors_carry_the_line() {
        let e = parse("format = 1\ndimension = \n", "x").unwrap_err();
        assert!(e.message.contains("line 2"), "{e}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let e = parse(&format!("{L0}\nbudgett = 1\n"), "x").unwrap_err();
        assert!(e.message.contains("budgett"), "{e}");
    }

    #[test]
    fn wrong_length_is_reported() {
        let e = parse(&L0.replace("upper = [2.0]", "upper = [2.0, 1.0]"), "x").unwrap_err();
        assert_eq!(e.field, "upper");
    }
}
