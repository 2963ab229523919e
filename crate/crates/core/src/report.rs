//! Pass/fail reports produced by every validator in the crate.

use std::fmt;

/// One checked condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEntry {
    pub name: String,
    /// Rule that decided the outcome, e.g. "p-series: e > 1".
    pub rule: String,
    /// Measured quantity: an exponent, a limit exponent, a residual, a count.
    pub measured: f64,
    pub passed: bool,
}

/// A list of checked conditions plus non-fatal warnings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConditionReport {
    pub title: String,
    pub entries: Vec<ConditionEntry>,
    pub warnings: Vec<String>,
}

impl ConditionReport {
    pub fn new(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            ..Self::default()
        }
    }

    pub fn push(&mut self, name: impl Into<String>, rule: impl Into<String>, measured: f64, passed: bool) {
        self.entries.push(ConditionEntry {
            name: name.into(),
            rule: rule.into(),
            measured,
            passed,
        });
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        self.warnings.push(message.into());
    }

    /// Conjunction of all entries.
    pub fn overall(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn entry(&self, name: &str) -> Option<&ConditionEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Names of the failing entries, in report order.
    pub fn failures(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| !e.passed)
            .map(|e| e.name.as_str())
            .collect()
    }

    /// Appends every entry and warning of `other`.
    pub fn merge(&mut self, other: ConditionReport) {
        self.entries.extend(other.entries);
        self.warnings.extend(other.warnings);
    }
}

impl fmt::Display for ConditionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.title.is_empty() {
            writeln!(f, "{}", self.title)?;
        }
        let width = self.entries.iter().map(|e| e.name.chars().count()).max().unwrap_or(0);
        for e in &self.entries {
            let pad = width - e.name.chars().count();
            writeln!(
                f,
                "  [{}] {}{}  {:>12.6}  ({})",
                if e.passed { "pass" } else { "FAIL" },
                e.name,
                " ".repeat(pad),
                e.measured,
                e.rule
            )?;
        }
        for w in &self.warnings {
            writeln!(f, "  [warn] {w}")?;
        }
        Ok(())
    }
}
