//! Recommendation rules stored as TOML. Each rule has a predicate written as
//! clauses joined by `and`/`or` (`and` binds tighter), for example
//! `tbsa_percent >= 10 or circumferential`.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ClinicalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    WoundCare,
    Pain,
    Fluids,
    Infection,
    Tetanus,
    FollowUp,
    Referral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Advisory,
    Urgent,
}

/// Numeric facts a predicate may compare.
pub const NUMERIC_FIELDS: [&str; 8] = [
    "tbsa_percent",
    "d_max_mm",
    "d_avg_mm",
    "area_cm2",
    "perimeter_cm",
    "volume_cm3",
    "age_years",
    "weight_kg",
];

/// Boolean facts a predicate may test.
pub const FLAG_FIELDS: [&str; 15] = [
    "circumferential",
    "emergency",
    "tetanus_unknown",
    "tetanus_not_current",
    "site_face",
    "site_hand",
    "site_foot",
    "site_perineum",
    "mechanism_scald",
    "mechanism_flame",
    "mechanism_contact",
    "mechanism_chemical",
    "mechanism_electrical",
    "mechanism_radiation",
    "mechanism_other",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparator {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl Comparator {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "<" => Comparator::Lt,
            "<=" => Comparator::Le,
            ">" => Comparator::Gt,
            ">=" => Comparator::Ge,
            "==" => Comparator::Eq,
            "!=" => Comparator::Ne,
            _ => return None,
        })
    }

    fn holds(self, a: f64, b: f64) -> bool {
        match self {
            Comparator::Lt => a < b,
            Comparator::Le => a <= b,
            Comparator::Gt => a > b,
            Comparator::Ge => a >= b,
            Comparator::Eq => a == b,
            Comparator::Ne => a != b,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Eq => "==",
            Comparator::Ne => "!=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Clause {
    Always,
    Flag { name: String, negated: bool },
    Compare { field: String, op: Comparator, value: f64 },
}

/// Disjunction of conjunctions.
#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub any_of: Vec<Vec<Clause>>,
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let groups: Vec<String> = self
            .any_of
            .iter()
            .map(|all| {
                all.iter()
                    .map(|c| match c {
                        Clause::Always => "always".to_string(),
                        Clause::Flag { name, negated: false } => name.clone(),
                        Clause::Flag { name, negated: true } => format!("not {name}"),
                        Clause::Compare { field, op, value } => format!("{field} {} {value}", op.symbol()),
                    })
                    .collect::<Vec<_>>()
                    .join(" and ")
            })
            .collect();
        write!(f, "{}", groups.join(" or "))
    }
}

impl Predicate {
    pub fn parse(text: &str) -> Result<Self, String> {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.is_empty() {
            return Err("empty predicate".into());
        }
        let mut any_of = vec![Vec::new()];
        let mut i = 0;
        let mut expect_clause = true;
        while i < tokens.len() {
            let tok = tokens[i];
            if !expect_clause {
                match tok {
                    "and" => {}
                    "or" => any_of.push(Vec::new()),
                    other => return Err(format!("expected 'and' or 'or', found '{other}'")),
                }
                expect_clause = true;
                i += 1;
                continue;
            }
            let clause = if tok == "always" {
                i += 1;
                Clause::Always
            } else if tok == "not" {
                let name = tokens.get(i + 1).ok_or("'not' at end of predicate")?;
                if !FLAG_FIELDS.contains(name) {
                    return Err(format!("'not' needs a flag, found '{name}'"));
                }
                i += 2;
                Clause::Flag {
                    name: name.to_string(),
                    negated: true,
                }
            } else if FLAG_FIELDS.contains(&tok) {
                i += 1;
                Clause::Flag {
                    name: tok.to_string(),
                    negated: false,
                }
            } else if NUMERIC_FIELDS.contains(&tok) {
                let op = tokens
                    .get(i + 1)
                    .and_then(|s| Comparator::parse(s))
                    .ok_or_else(|| format!("'{tok}' must be followed by a comparator"))?;
                let raw = tokens
                    .get(i + 2)
                    .ok_or_else(|| format!("missing value after '{tok}'"))?;
                let value: f64 = raw.parse().map_err(|_| format!("'{raw}' is not a number"))?;
                if !value.is_finite() {
                    return Err(format!("'{raw}' is not finite"));
                }
                i += 3;
                Clause::Compare {
                    field: tok.to_string(),
                    op,
                    value,
                }
            } else {
                return Err(format!("unknown field '{tok}'"));
            };
            any_of.last_mut().expect("non-empty").push(clause);
            expect_clause = false;
        }
        if expect_clause {
            return Err("predicate ends with a connective".into());
        }
        Ok(Predicate { any_of })
    }

    pub fn evaluate(&self, facts: &Facts) -> bool {
        self.any_of.iter().any(|all| {
            all.iter().all(|c| match c {
                Clause::Always => true,
                Clause::Flag { name, negated } => facts.flag(name) != *negated,
                Clause::Compare { field, op, value } => facts.number(field).is_some_and(|x| op.holds(x, *value)),
            })
        })
    }
}

/// Inputs to rule evaluation. Missing numbers make comparisons false.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Facts {
    pub numbers: Vec<(&'static str, f64)>,
    pub flags: BTreeSet<&'static str>,
}

impl Facts {
    pub fn set_number(&mut self, name: &'static str, value: Option<f64>) {
        debug_assert!(NUMERIC_FIELDS.contains(&name));
        if let Some(v) = value {
            self.numbers.push((name, v));
        }
    }

    pub fn set_flag(&mut self, name: &'static str, on: bool) {
        debug_assert!(FLAG_FIELDS.contains(&name));
        if on {
            self.flags.insert(name);
        }
    }

    pub fn number(&self, name: &str) -> Option<f64> {
        self.numbers.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }

    pub fn flag(&self, name: &str) -> bool {
        self.flags.contains(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub id: String,
    pub when: String,
    pub category: Category,
    pub severity: Severity,
    pub text: String,
    /// Attach a fluid plan to the emitted item.
    #[serde(default)]
    pub fluid_plan: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RulesetFile {
    name: String,
    #[serde(default)]
    notice: String,
    #[serde(default = "default_coefficient")]
    fluid_coefficient: f64,
    fallback: RuleSpec,
    #[serde(default, rename = "rule")]
    rules: Vec<RuleSpec>,
}

fn default_coefficient() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub spec: RuleSpec,
    pub predicate: Predicate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ruleset {
    pub name: String,
    pub notice: String,
    pub fluid_coefficient: f64,
    pub rules: Vec<Rule>,
    /// Emitted when no rule matches.
    pub fallback: RuleSpec,
}

pub const DEFAULT_RULESET: &str = include_str!("default_ruleset.toml");

impl Ruleset {
    pub fn parse(text: &str) -> Result<Self, ClinicalError> {
        let file: RulesetFile = toml::from_str(text).map_err(|e| ClinicalError::Ruleset(e.to_string()))?;
        if !(file.fluid_coefficient > 0.0 && file.fluid_coefficient.is_finite()) {
            return Err(ClinicalError::Ruleset("fluid_coefficient must be positive".into()));
        }
        let mut ids = BTreeSet::new();
        ids.insert(file.fallback.id.clone());
        let mut rules = Vec::with_capacity(file.rules.len());
        for spec in file.rules {
            if spec.id.trim().is_empty() {
                return Err(ClinicalError::Ruleset("rule with empty id".into()));
            }
            if !ids.insert(spec.id.clone()) {
                return Err(ClinicalError::Ruleset(format!("duplicate rule id '{}'", spec.id)));
            }
            let predicate =
                Predicate::parse(&spec.when).map_err(|e| ClinicalError::Ruleset(format!("rule '{}': {e}", spec.id)))?;
            rules.push(Rule { spec, predicate });
        }
        Ok(Ruleset {
            name: file.name,
            notice: file.notice,
            fluid_coefficient: file.fluid_coefficient,
            rules,
            fallback: file.fallback,
        })
    }

    pub fn default_rules() -> Self {
        Self::parse(DEFAULT_RULESET).expect("bundled ruleset parses")
    }

    pub fn contains_id(&self, id: &str) -> bool {
        self.fallback.id == id || self.rules.iter().any(|r| r.spec.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predicate_precedence() {
        let p = Predicate::parse("tbsa_percent >= 10 and age_years < 16 or circumferential").unwrap();
        assert_eq!(p.any_of.len(), 2);
        let mut f = Facts::default();
        f.set_flag("circumferential", true);
        assert!(p.evaluate(&f));
        let mut g = Facts::default();
        g.set_number("tbsa_percent", Some(12.0));
        assert!(!p.evaluate(&g));
        g.set_number("age_years", Some(8.0));
        assert!(p.evaluate(&g));
        assert_eq!(
            p.to_string(),
            "tbsa_percent >= 10 and age_years < 16 or circumferential"
        );
    }

    #[test]
    fn predicate_errors() {
        for bad in [
            "",
            "tbsa_percent",
            "tbsa_percent >= x",
            "bogus",
            "always and",
            "not tbsa_percent",
            "always always",
        ] {
            assert!(Predicate::parse(bad).is_err(), "{bad:?} should fail");
        }
    }

    #[test]
    fn default_ruleset_loads() {
        let r = Ruleset::default_rules();
        assert!(r
            .rules
            .iter()
            .any(|r| r.spec.category == Category::Fluids && r.spec.fluid_plan));
        assert!(r.contains_id(&r.fallback.id));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = r#"
name = "x"
[fallback]
id = "a"
when = "always"
category = "follow-up"
severity = "info"
text = "t"
[[rule]]
id = "a"
when = "always"
category = "pain"
severity = "info"
text = "t"
"#;
        assert!(matches!(Ruleset::parse(text), Err(ClinicalError::Ruleset(m)) if m.contains("duplicate")));
    }
}
