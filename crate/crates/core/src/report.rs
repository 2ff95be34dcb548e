use serde::{Deserialize, Serialize, Serializer};

fn finite_or_null<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn opt_finite<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) if x.is_finite() => s.serialize_f64(*x),
        _ => s.serialize_none(),
    }
}

fn de_nullable<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// Outcome of one inequality or identity check. `max_violation` is the largest
/// amount by which the checked relation fails (negative when it holds with
/// margin), or the sup residual for identities.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckReport {
    pub check: String,
    #[serde(serialize_with = "opt_finite")]
    pub slice_time: Option<f64>,
    #[serde(serialize_with = "finite_or_null", deserialize_with = "de_nullable")]
    pub max_violation: f64,
    #[serde(serialize_with = "finite_or_null", deserialize_with = "de_nullable")]
    pub tolerance: f64,
    pub pass: bool,
    #[serde(serialize_with = "opt_finite")]
    pub refinement_order: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl CheckReport {
    pub fn new(check: impl Into<String>, slice_time: Option<f64>, max_violation: f64, tolerance: f64) -> Self {
        let pass = max_violation.is_finite() && max_violation <= tolerance;
        CheckReport {
            check: check.into(),
            slice_time,
            max_violation,
            tolerance,
            pass,
            refinement_order: None,
            notes: Vec::new(),
        }
    }

    /// A check whose hypotheses are not met; it never passes.
    pub fn refused(check: impl Into<String>, reason: impl Into<String>) -> Self {
        CheckReport {
            check: check.into(),
            slice_time: None,
            max_violation: f64::NAN,
            tolerance: f64::NAN,
            pass: false,
            refinement_order: None,
            notes: vec![format!("refused: {}", reason.into())],
        }
    }

    pub fn with_order(mut self, order: Option<f64>) -> Self {
        self.refinement_order = order;
        self
    }

    pub fn note(mut self, s: impl Into<String>) -> Self {
        self.notes.push(s.into());
        self
    }

    pub fn fail_if(mut self, cond: bool, why: impl Into<String>) -> Self {
        if cond {
            self.pass = false;
            self.notes.push(why.into());
        }
        self
    }

    pub fn is_refusal(&self) -> bool {
        self.notes.iter().any(|n| n.starts_with("refused:"))
    }
}

/// Observed order from errors at spacing h and h/ratio.
pub fn observed_order(coarse: f64, fine: f64, ratio: f64) -> Option<f64> {
    if coarse > 0.0 && fine > 0.0 && coarse.is_finite() && fine.is_finite() {
        Some((coarse / fine).ln() / ratio.ln())
    } else {
        None
    }
}

/// Worst (largest) value and where it occurred.
#[derive(Debug, Clone, Copy)]
pub struct Worst {
    pub value: f64,
    pub time: Option<f64>,
}

impl Default for Worst {
    fn default() -> Self {
        Worst { value: f64::NEG_INFINITY, time: None }
    }
}

impl Worst {
    pub fn update(&mut self, v: f64, t: f64) {
        if self.time.is_none() || v > self.value {
            self.value = v;
            self.time = Some(t);
        }
    }
}

/// Write rows as CSV with a header line.
pub fn write_csv(path: &std::path::Path, header: &[&str], rows: &[Vec<String>]) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{}", header.join(","))?;
    for r in rows {
        writeln!(f, "{}", r.join(","))?;
    }
    f.flush()
}

pub fn fmt(v: f64) -> String {
    format!("{v:.10e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_shape() {
        let r = CheckReport::new("x", Some(0.5), 1e-4, 1e-3);
        assert!(r.pass);
        let s = serde_json::to_string(&r).unwrap();
        for k in ["check", "slice_time", "max_violation", "tolerance", "pass", "refinement_order"] {
            assert!(s.contains(&format!("\"{k}\"")), "{s}");
        }
        let refused = CheckReport::refused("y", "hypothesis");
        let s = serde_json::to_string(&refused).unwrap();
        assert!(s.contains("\"max_violation\":null"));
        let back: CheckReport = serde_json::from_str(&s).unwrap();
        assert!(!back.pass && back.is_refusal());
    }

    #[test]
    fn order() {
        assert!((observed_order(1.6e-3, 1e-4, 2.0).unwrap() - 4.0).abs() < 1e-12);
        assert!(observed_order(0.0, 1.0, 2.0).is_none());
    }
}
