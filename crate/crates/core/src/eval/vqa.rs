//! Open-ended answer scoring.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QuestionType {
    #[serde(rename = "count")]
    Count,
    #[serde(rename = "color")]
    Color,
    #[serde(rename = "category")]
    Category,
    #[serde(rename = "shape")]
    Shape,
    #[serde(rename = "status")]
    Status,
    #[serde(rename = "reasoning")]
    Reasoning,
    #[serde(rename = "rural/urban")]
    RuralUrban,
    #[serde(rename = "target background")]
    TargetBackground,
    #[serde(rename = "position")]
    Position,
}

impl QuestionType {
    pub const ALL: [QuestionType; 9] = [
        QuestionType::Count,
        QuestionType::Color,
        QuestionType::Category,
        QuestionType::Shape,
        QuestionType::Status,
        QuestionType::Reasoning,
        QuestionType::RuralUrban,
        QuestionType::TargetBackground,
        QuestionType::Position,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QuestionType::Count => "count",
            QuestionType::Color => "color",
            QuestionType::Category => "category",
            QuestionType::Shape => "shape",
            QuestionType::Status => "status",
            QuestionType::Reasoning => "reasoning",
            QuestionType::RuralUrban => "rural/urban",
            QuestionType::TargetBackground => "target background",
            QuestionType::Position => "position",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaRecord {
    pub image: String,
    pub question: String,
    #[serde(rename = "type")]
    pub kind: QuestionType,
    pub answer: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub image: String,
    pub question: String,
    pub prediction: String,
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercases, turns punctuation into spaces, drops articles and collapses
/// whitespace.
pub fn normalize(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { ' ' })
        .collect();
    cleaned
        .split_whitespace()
        .filter(|w| !ARTICLES.contains(w))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Synonym sets keyed by a head word. The head word and its listed
/// synonyms are all interchangeable; sets of different entries are not
/// chained together.
#[derive(Clone, Debug, Default)]
pub struct Lexicon {
    groups: HashMap<String, HashSet<String>>,
}

impl Lexicon {
    pub fn from_map(map: BTreeMap<String, Vec<String>>) -> Self {
        let mut groups: HashMap<String, HashSet<String>> = HashMap::new();
        for (word, syns) in map {
            let members: Vec<String> = std::iter::once(word).chain(syns).map(|w| normalize(&w)).collect();
            for m in &members {
                groups.entry(m.clone()).or_default().extend(members.iter().cloned());
            }
        }
        Self { groups }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_map(serde_json::from_slice(&std::fs::read(path)?)?))
    }

    pub fn synonyms(&self, a: &str, b: &str) -> bool {
        self.groups.get(a).is_some_and(|g| g.contains(b))
    }
}

/// Child-to-parent concept tree scored with Wu-Palmer similarity
/// `2 * depth(lcs) / (depth(a) + depth(b))`, roots at depth 1.
#[derive(Clone, Debug, Default)]
pub struct Taxonomy {
    parent: HashMap<String, String>,
}

impl Taxonomy {
    pub fn from_map(map: BTreeMap<String, String>) -> Result<Self> {
        let parent: HashMap<String, String> = map.into_iter().map(|(c, p)| (normalize(&c), normalize(&p))).collect();
        let t = Self { parent };
        for c in t.parent.keys() {
            if t.path(c).is_none() {
                return Err(Error::format("taxonomy", format!("cycle through '{c}'")));
            }
        }
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_map(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// Path from `c` up to its root, `c` first.
    fn path(&self, c: &str) -> Option<Vec<String>> {
        let mut out = vec![c.to_string()];
        let mut cur = c;
        while let Some(p) = self.parent.get(cur) {
            if out.len() > self.parent.len() {
                return None;
            }
            out.push(p.clone());
            cur = p;
        }
        Some(out)
    }

    fn known(&self, c: &str) -> bool {
        self.parent.contains_key(c) || self.parent.values().any(|p| p == c)
    }

    pub fn similarity(&self, a: &str, b: &str) -> f64 {
        if !self.known(a) || !self.known(b) {
            return 0.0;
        }
        let (Some(pa), Some(pb)) = (self.path(a), self.path(b)) else {
            return 0.0;
        };
        let ancestors: HashSet<&String> = pb.iter().collect();
        let Some(i) = pa.iter().position(|c| ancestors.contains(c)) else {
            return 0.0;
        };
        let lcs_depth = (pa.len() - i) as f64;
        2.0 * lcs_depth / (pa.len() + pb.len()) as f64
    }
}

#[derive(Clone, Debug)]
pub struct AnswerScorer {
    pub lexicon: Lexicon,
    pub taxonomy: Option<Taxonomy>,
    pub threshold: f64,
}

impl Default for AnswerScorer {
    fn default() -> Self {
        Self {
            lexicon: Lexicon::default(),
            taxonomy: None,
            threshold: 0.8,
        }
    }
}

impl AnswerScorer {
    /// Correct iff the normalised strings match, are listed synonyms, or
    /// reach the similarity threshold. A missing prediction is incorrect.
    pub fn score(&self, pred: Option<&str>, gold: &str) -> bool {
        let Some(pred) = pred else { return false };
        let (p, g) = (normalize(pred), normalize(gold));
        if p.is_empty() {
            return false;
        }
        if p == g || self.lexicon.synonyms(&p, &g) {
            return true;
        }
        self.taxonomy
            .as_ref()
            .is_some_and(|t| t.similarity(&p, &g) >= self.threshold)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeAccuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VqaReport {
    pub per_type: BTreeMap<String, TypeAccuracy>,
    /// Mean of the per-type accuracies.
    pub average: f64,
    pub overall: f64,
    pub missing_predictions: usize,
}

/// Joins predictions to questions on `(image, question)` and scores them.
pub fn score_dataset(qa: &[QaRecord], preds: &[Prediction], scorer: &AnswerScorer) -> VqaReport {
    let lookup: HashMap<(&str, &str), &str> = preds
        .iter()
        .map(|p| ((p.image.as_str(), p.question.as_str()), p.prediction.as_str()))
        .collect();
    let mut per: BTreeMap<QuestionType, TypeAccuracy> = BTreeMap::new();
    let mut missing = 0;
    for r in qa {
        let pred = lookup.get(&(r.image.as_str(), r.question.as_str())).copied();
        if pred.is_none() {
            missing += 1;
        }
        let e = per.entry(r.kind).or_default();
        e.total += 1;
        if scorer.score(pred, &r.answer) {
            e.correct += 1;
        }
    }
    for e in per.values_mut() {
        e.accuracy = e.correct as f64 / e.total as f64;
    }
    let average = if per.is_empty() {
        0.0
    } else {
        per.values().map(|e| e.accuracy).sum::<f64>() / per.len() as f64
    };
    let correct: usize = per.values().map(|e| e.correct).sum();
    VqaReport {
        per_type: per.into_iter().map(|(k, v)| (k.name().to_string(), v)).collect(),
        average,
        overall: if qa.is_empty() { 0.0 } else { correct as f64 / qa.len() as f64 },
        missing_predictions: missing,
    }
}

/// One header row of question types in canonical order plus `avg`, and one
/// row of percentages. Types absent from the data are left blank.
pub fn accuracy_csv(report: &VqaReport) -> String {
    let mut header: Vec<String> = QuestionType::ALL.iter().map(|t| t.name().to_string()).collect();
    header.push("avg".into());
    let mut row: Vec<String> = QuestionType::ALL
        .iter()
        .map(|t| {
            report
                .per_type
                .get(t.name())
                .map_or(String::new(), |a| format!("{:.2}", a.accuracy * 100.0))
        })
        .collect();
    row.push(format!("{:.2}", report.average * 100.0));
    format!("{}\n{}\n", header.join(","), row.join(","))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalisation() {
        assert_eq!(normalize("  The Red car! "), "red car");
        assert_eq!(normalize("an apple"), "apple");
    }

    #[test]
    fn scoring_rules() {
        let s = AnswerScorer {
            lexicon: Lexicon::from_map(BTreeMap::from([("car".into(), vec!["automobile".into()])])),
            ..AnswerScorer::default()
        };
        assert!(s.score(Some("Red"), "red"));
        assert!(s.score(Some("automobile"), "car"));
        assert!(s.score(Some("car"), "Automobile."));
        assert!(!s.score(Some("three"), "four"));
        assert!(!s.score(None, "four"));
        assert!(!s.score(Some("..."), "four"));
    }

    #[test]
    fn wu_palmer() {
        let t = Taxonomy::from_map(BTreeMap::from([
            ("vehicle".into(), "object".into()),
            ("car".into(), "vehicle".into()),
            ("truck".into(), "vehicle".into()),
            ("sedan".into(), "car".into()),
        ]))
        .unwrap();
        // lcs vehicle at depth 2, both at depth 3
        assert!((t.similarity("car", "truck") - 4.0 / 6.0).abs() < 1e-12);
        assert!((t.similarity("sedan", "car") - 6.0 / 7.0).abs() < 1e-12);
        assert_eq!(t.similarity("car", "car"), 1.0);
        assert_eq!(t.similarity("car", "boat"), 0.0);
        assert!(Taxonomy::from_map(BTreeMap::from([("a".into(), "b".into()), ("b".into(), "a".into())])).is_err());
    }

    #[test]
    fn dataset_report() {
        let qa = vec![
            QaRecord {
                image: "i".into(),
                question: "q1".into(),
                kind: QuestionType::Color,
                answer: "red".into(),
            },
            QaRecord {
                image: "i".into(),
                question: "q2".into(),
                kind: QuestionType::Count,
                answer: "3".into(),
            },
        ];
        let preds = vec![Prediction {
            image: "i".into(),
            question: "q1".into(),
            prediction: "Red".into(),
        }];
        let r = score_dataset(&qa, &preds, &AnswerScorer::default());
        assert_eq!(r.missing_predictions, 1);
        assert_eq!(r.average, 0.5);
        let csv = accuracy_csv(&r);
        assert!(csv.lines().nth(1).unwrap().starts_with("0.00,100.00,"));
    }
}
