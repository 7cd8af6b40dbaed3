use std::fmt;

use serde::{Deserialize, Serialize};

/// Decision rule mapping `(statistic, reference, mc_std_error)` to a verdict.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rule {
    /// `statistic ≤ reference + 3·mc_std_error`.
    AtMostPlus3Se,
    /// `statistic ≤ reference`.
    AtMost,
    /// `statistic == reference`.
    Exact,
    /// `statistic` is a p-value, `reference` the (corrected) level.
    PValueAtLeast,
    /// `|statistic - reference| ≤ tol`.
    AbsWithin { tol: f64 },
}

impl Rule {
    pub fn passes(&self, statistic: f64, reference: f64, se: f64) -> bool {
        match *self {
            Rule::AtMostPlus3Se => statistic <= reference + 3.0 * se,
            Rule::AtMost => statistic <= reference,
            Rule::Exact => statistic == reference,
            Rule::PValueAtLeast => statistic >= reference,
            Rule::AbsWithin { tol } => (statistic - reference).abs() <= tol,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

/// Outcome of one verification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub name: String,
    pub statistic: f64,
    pub reference: f64,
    #[serde(rename = "error")]
    pub mc_std_error: f64,
    pub replicas: usize,
    pub rule: Rule,
    pub status: Status,
    pub pass: bool,
    /// Deliberately broken fixture: expected to fail.
    pub negative_control: bool,
    pub notes: String,
}

impl TestReport {
    pub fn evaluate(
        name: impl Into<String>,
        statistic: f64,
        reference: f64,
        mc_std_error: f64,
        replicas: usize,
        rule: Rule,
    ) -> Self {
        let ok = rule.passes(statistic, reference, mc_std_error);
        TestReport {
            name: name.into(),
            statistic,
            reference,
            mc_std_error,
            replicas,
            rule,
            status: if ok { Status::Pass } else { Status::Fail },
            pass: ok,
            negative_control: false,
            notes: String::new(),
        }
    }

    /// A count of violations that must be zero.
    pub fn exact_count(name: impl Into<String>, violations: usize, checked: usize) -> Self {
        Self::evaluate(name, violations as f64, 0.0, 0.0, checked, Rule::Exact)
    }

    pub fn skipped(name: impl Into<String>, reason: impl Into<String>) -> Self {
        TestReport {
            name: name.into(),
            statistic: f64::NAN,
            reference: f64::NAN,
            mc_std_error: 0.0,
            replicas: 0,
            rule: Rule::Exact,
            status: Status::Skipped,
            pass: true,
            negative_control: false,
            notes: reason.into(),
        }
    }

    pub fn with_note(mut self, note: impl AsRef<str>) -> Self {
        if !self.notes.is_empty() {
            self.notes.push_str("; ");
        }
        self.notes.push_str(note.as_ref());
        self
    }

    pub fn as_negative_control(mut self) -> Self {
        self.negative_control = true;
        self
    }

    pub fn failed(&self) -> bool {
        self.status == Status::Fail
    }

    /// A control behaved as designed iff it failed.
    pub fn control_behaved(&self) -> bool {
        self.negative_control && self.failed()
    }
}

impl fmt::Display for TestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = match (self.status, self.negative_control) {
            (Status::Skipped, _) => "SKIP",
            (Status::Pass, false) => "PASS",
            (Status::Fail, false) => "FAIL",
            (Status::Fail, true) => "PASS (control failed as designed)",
            (Status::Pass, true) => "FAIL (control did not fail)",
        };
        write!(
            f,
            "[{verdict}] {}: statistic={:.6e} reference={:.6e} se={:.3e} n={}",
            self.name, self.statistic, self.reference, self.mc_std_error, self.replicas
        )?;
        if !self.notes.is_empty() {
            write!(f, " ({})", self.notes)?;
        }
        Ok(())
    }
}

/// Reports produced by one bundle run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub name: String,
    pub seed: u64,
    pub config_hash: String,
    pub reports: Vec<TestReport>,
}

impl ReportBundle {
    pub fn new(name: impl Into<String>, seed: u64, config_hash: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            seed,
            config_hash: config_hash.into(),
            reports: Vec::new(),
        }
    }

    pub fn extend(&mut self, reports: impl IntoIterator<Item = TestReport>) {
        self.reports.extend(reports);
    }

    /// No regular (non-control) check failed.
    pub fn checks_pass(&self) -> bool {
        self.reports.iter().filter(|r| !r.negative_control).all(|r| !r.failed())
    }

    /// Every negative control failed.
    pub fn controls_behave(&self) -> bool {
        self.reports.iter().filter(|r| r.negative_control).all(|r| r.failed())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

/// Bonferroni-corrected per-test level.
pub fn bonferroni(alpha: f64, tests: usize) -> f64 {
    alpha / tests.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rules() {
        assert!(Rule::AtMostPlus3Se.passes(1.1, 1.0, 0.04));
        assert!(!Rule::AtMostPlus3Se.passes(1.2, 1.0, 0.04));
        assert!(Rule::Exact.passes(0.0, 0.0, 1.0));
        assert!(!Rule::Exact.passes(1.0, 0.0, 1.0));
        assert!(Rule::PValueAtLeast.passes(0.02, 0.01, 0.0));
        assert!(Rule::AbsWithin { tol: 0.01 }.passes(0.365, 0.3679, 0.0));
    }

    #[test]
    fn verdict_is_a_function_of_inputs() {
        let a = TestReport::evaluate("x", 0.5, 0.4, 0.05, 10, Rule::AtMostPlus3Se);
        let b = TestReport::evaluate("x", 0.5, 0.4, 0.05, 10, Rule::AtMostPlus3Se);
        assert_eq!(a, b);
        assert!(a.pass);
        let c = TestReport::evaluate("x", 0.6, 0.4, 0.05, 10, Rule::AtMostPlus3Se).as_negative_control();
        assert!(c.control_behaved());
    }

    #[test]
    fn bundle_json_has_schema_fields() {
        let mut b = ReportBundle::new("demo", 42, "abc");
        b.extend([TestReport::exact_count("exact", 0, 10)]);
        let v: serde_json::Value = serde_json::from_str(&b.to_json()).unwrap();
        assert_eq!(v["seed"], 42);
        assert_eq!(v["config_hash"], "abc");
        let r = &v["reports"][0];
        for key in ["name", "statistic", "reference", "error", "pass"] {
            assert!(r.get(key).is_some(), "missing {key}");
        }
    }
}
