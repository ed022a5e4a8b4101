use serde::{Deserialize, Serialize};

use super::ClinicalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CareMode {
    Emergency,
    Consultation,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Scald,
    Flame,
    Contact,
    Chemical,
    Electrical,
    Radiation,
    #[default]
    Other,
}

impl Mechanism {
    pub const ALL: [Mechanism; 7] = [
        Mechanism::Scald,
        Mechanism::Flame,
        Mechanism::Contact,
        Mechanism::Chemical,
        Mechanism::Electrical,
        Mechanism::Radiation,
        Mechanism::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mechanism::Scald => "scald",
            Mechanism::Flame => "flame",
            Mechanism::Contact => "contact",
            Mechanism::Chemical => "chemical",
            Mechanism::Electrical => "electrical",
            Mechanism::Radiation => "radiation",
            Mechanism::Other => "other",
        }
    }
}

/// One line of the primary survey checklist.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SurveyItem {
    pub assessed: bool,
    #[serde(default)]
    pub notes: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrimarySurvey {
    pub airway: Option<SurveyItem>,
    pub breathing: Option<SurveyItem>,
    pub circulation: Option<SurveyItem>,
    pub disability: Option<SurveyItem>,
    pub exposure: Option<SurveyItem>,
}

impl PrimarySurvey {
    /// Checklist entries that are absent or not marked assessed.
    pub fn missing(&self) -> Vec<&'static str> {
        [
            ("airway", &self.airway),
            ("breathing", &self.breathing),
            ("circulation", &self.circulation),
            ("disability", &self.disability),
            ("exposure", &self.exposure),
        ]
        .into_iter()
        .filter(|(_, item)| !item.as_ref().is_some_and(|i| i.assessed))
        .map(|(name, _)| name)
        .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthCategory {
    Superficial,
    SuperficialPartial,
    DeepPartial,
    FullThickness,
    #[default]
    Unknown,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BurnDescriptor {
    pub site: String,
    #[serde(default)]
    pub suspected_depth: DepthCategory,
    #[serde(default)]
    pub circumferential: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct History {
    pub present_illness: String,
    pub past_medical: String,
    pub medications: String,
    pub allergies: String,
    /// `None` when unknown.
    pub tetanus_up_to_date: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntakeRecord {
    pub mode: CareMode,
    #[serde(default)]
    pub mechanism_text: String,
    #[serde(default)]
    pub mechanism: Mechanism,
    #[serde(default)]
    pub primary_survey: Option<PrimarySurvey>,
    #[serde(default)]
    pub secondary_findings: Vec<String>,
    #[serde(default)]
    pub burns: Vec<BurnDescriptor>,
    #[serde(default)]
    pub history: History,
    /// Clinician TBSA estimate, used when no measured value exists.
    #[serde(default)]
    pub manual_tbsa_percent: Option<f64>,
}

impl IntakeRecord {
    pub fn consultation() -> Self {
        Self {
            mode: CareMode::Consultation,
            mechanism_text: String::new(),
            mechanism: Mechanism::Other,
            primary_survey: None,
            secondary_findings: Vec::new(),
            burns: Vec::new(),
            history: History::default(),
            manual_tbsa_percent: None,
        }
    }

    pub fn validate(&self) -> Result<(), ClinicalError> {
        let mut fields = Vec::new();
        if self.mode == CareMode::Emergency {
            match &self.primary_survey {
                None => fields.push("primary_survey".to_string()),
                Some(s) => fields.extend(s.missing().into_iter().map(|m| format!("primary_survey.{m}"))),
            }
        }
        if let Some(t) = self.manual_tbsa_percent {
            if !(t > 0.0 && t <= 100.0) {
                fields.push("manual_tbsa_percent".to_string());
            }
        }
        for (i, b) in self.burns.iter().enumerate() {
            if b.site.trim().is_empty() {
                fields.push(format!("burns[{i}].site"));
            }
        }
        if fields.is_empty() {
            Ok(())
        } else {
            Err(ClinicalError::Validation { fields })
        }
    }

    pub fn any_circumferential(&self) -> bool {
        self.burns.iter().any(|b| b.circumferential)
    }
}
