//! Intake records, fluid planning, body surface area and rule-driven
//! advisory recommendations.

mod intake;
mod rules;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{AssessmentSession, PatientRecord};

pub use intake::{
    BurnDescriptor, CareMode, DepthCategory, History, IntakeRecord, Mechanism, PrimarySurvey, SurveyItem,
};
pub use rules::{
    Category, Clause, Comparator, Facts, Predicate, Rule, RuleSpec, Ruleset, Severity, DEFAULT_RULESET, FLAG_FIELDS,
    NUMERIC_FIELDS,
};

#[derive(Debug, Error, PartialEq)]
pub enum ClinicalError {
    #[error("invalid fields: {}", fields.join(", "))]
    Validation { fields: Vec<String> },
    #[error("ruleset error: {0}")]
    Ruleset(String),
    #[error("session is incomplete: {0}")]
    IncompleteSession(String),
}

fn invalid(fields: &[&str]) -> ClinicalError {
    ClinicalError::Validation {
        fields: fields.iter().map(|s| s.to_string()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluidPlan {
    pub weight_kg: f64,
    pub tbsa_percent: f64,
    /// mL per kg per %TBSA.
    pub coefficient: f64,
    pub total_ml: f64,
    pub first8h_ml: f64,
    pub next16h_ml: f64,
    pub rate_first8h_ml_per_h: f64,
    pub rate_next16h_ml_per_h: f64,
}

pub const ADULT_COEFFICIENT: f64 = 4.0;

pub fn parkland_plan(weight_kg: f64, tbsa_percent: f64, coefficient: f64) -> Result<FluidPlan, ClinicalError> {
    let mut bad = Vec::new();
    if !(weight_kg > 0.0 && weight_kg <= 400.0) {
        bad.push("weight_kg");
    }
    if !(tbsa_percent > 0.0 && tbsa_percent <= 100.0) {
        bad.push("tbsa_percent");
    }
    if !(coefficient > 0.0 && coefficient.is_finite()) {
        bad.push("coefficient");
    }
    if !bad.is_empty() {
        return Err(invalid(&bad));
    }
    let total = coefficient * weight_kg * tbsa_percent;
    let half = total / 2.0;
    Ok(FluidPlan {
        weight_kg,
        tbsa_percent,
        coefficient,
        total_ml: total,
        first8h_ml: half,
        next16h_ml: half,
        rate_first8h_ml_per_h: half / 8.0,
        rate_next16h_ml_per_h: half / 16.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodySurfaceArea {
    pub m2: f64,
    pub cm2: f64,
}

/// `sqrt(height_cm * weight_kg / 3600)` square metres.
pub fn estimate_bsa(height_cm: f64, weight_kg: f64) -> Result<BodySurfaceArea, ClinicalError> {
    let mut bad = Vec::new();
    if !(height_cm > 0.0 && height_cm.is_finite()) {
        bad.push("height_cm");
    }
    if !(weight_kg > 0.0 && weight_kg.is_finite()) {
        bad.push("weight_kg");
    }
    if !bad.is_empty() {
        return Err(invalid(&bad));
    }
    let m2 = (height_cm * weight_kg / 3600.0).sqrt();
    Ok(BodySurfaceArea { m2, cm2: m2 * 1e4 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TbsaSource {
    Measured,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationItem {
    pub rule_id: String,
    pub category: Category,
    pub severity: Severity,
    pub text: String,
    pub fluid_plan: Option<FluidPlan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationSet {
    pub ruleset: String,
    pub notice: String,
    pub tbsa_percent: Option<f64>,
    pub tbsa_source: Option<TbsaSource>,
    pub items: Vec<RecommendationItem>,
}

fn site_has(intake: &IntakeRecord, words: &[&str]) -> bool {
    intake.burns.iter().any(|b| {
        let site = b.site.to_lowercase();
        words.iter().any(|w| site.contains(w))
    })
}

/// Facts derived from a patient and session, plus the TBSA and its source.
pub fn session_facts(patient: &PatientRecord, session: &AssessmentSession) -> (Facts, Option<(f64, TbsaSource)>) {
    let mut facts = Facts::default();
    let intake = &session.intake;
    let tbsa = session
        .metrics
        .as_ref()
        .and_then(|m| m.tbsa_percent)
        .map(|t| (t, TbsaSource::Measured))
        .or(intake.manual_tbsa_percent.map(|t| (t, TbsaSource::Manual)));
    facts.set_number("tbsa_percent", tbsa.map(|t| t.0));
    if let Some(m) = &session.metrics {
        facts.set_number("d_max_mm", Some(m.d_max_mm));
        facts.set_number("d_avg_mm", Some(m.d_avg_mm));
        facts.set_number("area_cm2", Some(m.area_cm2));
        facts.set_number("perimeter_cm", Some(m.perimeter_cm));
        facts.set_number("volume_cm3", Some(m.volume_proxy_cm3));
    }
    facts.set_number("age_years", patient.demographics.age_years);
    facts.set_number("weight_kg", patient.demographics.weight_kg);
    facts.set_flag("circumferential", intake.any_circumferential());
    facts.set_flag("emergency", intake.mode == CareMode::Emergency);
    facts.set_flag("tetanus_unknown", intake.history.tetanus_up_to_date.is_none());
    facts.set_flag("tetanus_not_current", intake.history.tetanus_up_to_date == Some(false));
    facts.set_flag("site_face", site_has(intake, &["face", "facial"]));
    facts.set_flag("site_hand", site_has(intake, &["hand", "finger", "palm"]));
    facts.set_flag("site_foot", site_has(intake, &["foot", "feet", "toe"]));
    facts.set_flag("site_perineum", site_has(intake, &["perine", "genital", "groin"]));
    for m in Mechanism::ALL {
        let flag = FLAG_FIELDS
            .iter()
            .find(|f| f.strip_prefix("mechanism_") == Some(m.as_str()))
            .expect("every mechanism has a flag");
        facts.set_flag(flag, intake.mechanism == m);
    }
    (facts, tbsa)
}

/// Evaluates `ruleset` against a session. Items keep ruleset order.
pub fn recommend(
    patient: &PatientRecord,
    session: &AssessmentSession,
    ruleset: &Ruleset,
) -> Result<RecommendationSet, ClinicalError> {
    if session.metrics.is_none() {
        return Err(ClinicalError::IncompleteSession("no burn metrics recorded".into()));
    }
    let (facts, tbsa) = session_facts(patient, session);
    let mut items = Vec::new();
    for rule in &ruleset.rules {
        if !rule.predicate.evaluate(&facts) {
            continue;
        }
        let mut text = rule.spec.text.clone();
        let mut plan = None;
        if rule.spec.fluid_plan {
            match (patient.demographics.weight_kg, tbsa) {
                (Some(w), Some((a, _))) => match parkland_plan(w, a, ruleset.fluid_coefficient) {
                    Ok(p) => plan = Some(p),
                    Err(e) => text.push_str(&format!(" Fluid plan not computed: {e}.")),
                },
                _ => text.push_str(" Fluid plan not computed: weight or TBSA not recorded."),
            }
        }
        items.push(RecommendationItem {
            rule_id: rule.spec.id.clone(),
            category: rule.spec.category,
            severity: rule.spec.severity,
            text,
            fluid_plan: plan,
        });
    }
    if items.is_empty() {
        let f = &ruleset.fallback;
        items.push(RecommendationItem {
            rule_id: f.id.clone(),
            category: f.category,
            severity: f.severity,
            text: f.text.clone(),
            fluid_plan: None,
        });
    }
    Ok(RecommendationSet {
        ruleset: ruleset.name.clone(),
        notice: ruleset.notice.clone(),
        tbsa_percent: tbsa.map(|t| t.0),
        tbsa_source: tbsa.map(|t| t.1),
        items,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parkland_reference_case() {
        let p = parkland_plan(70.0, 40.0, ADULT_COEFFICIENT).unwrap();
        assert_eq!(p.total_ml, 11200.0);
        assert_eq!(p.first8h_ml, 5600.0);
        assert_eq!(p.next16h_ml, 5600.0);
        assert_eq!(p.rate_first8h_ml_per_h, 700.0);
        assert_eq!(p.rate_next16h_ml_per_h, 350.0);
    }

    #[test]
    fn parkland_tiny_and_out_of_range() {
        let p = parkland_plan(70.0, 0.0001, 4.0).unwrap();
        assert!((p.total_ml - 0.028).abs() < 1e-15);
        assert_eq!(
            parkland_plan(70.0, 150.0, 4.0),
            Err(ClinicalError::Validation {
                fields: vec!["tbsa_percent".into()]
            })
        );
        let err = parkland_plan(0.0, 0.0, 4.0).unwrap_err();
        assert_eq!(err.to_string(), "invalid fields: weight_kg, tbsa_percent");
    }

    #[test]
    fn bsa_examples() {
        let b = estimate_bsa(170.0, 70.0).unwrap();
        assert!((b.m2 - 1.818).abs() < 1e-3);
        assert_eq!(estimate_bsa(36.0, 1.0).unwrap().m2, 0.1);
        assert_eq!(estimate_bsa(36.0, 1.0).unwrap().cm2, 1000.0);
        assert!(estimate_bsa(170.0, 0.0).is_err());
    }

    #[test]
    fn emergency_intake_requires_survey() {
        let mut intake = IntakeRecord::consultation();
        assert!(intake.validate().is_ok());
        intake.mode = CareMode::Emergency;
        assert!(matches!(intake.validate(), Err(ClinicalError::Validation { fields }) if fields == ["primary_survey"]));
        let ok = SurveyItem {
            assessed: true,
            notes: String::new(),
        };
        intake.primary_survey = Some(PrimarySurvey {
            airway: Some(ok.clone()),
            breathing: Some(ok.clone()),
            circulation: Some(ok.clone()),
            disability: None,
            exposure: Some(ok),
        });
        assert!(
            matches!(intake.validate(), Err(ClinicalError::Validation { fields }) if fields == ["primary_survey.disability"])
        );
    }
}
