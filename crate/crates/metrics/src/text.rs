use serde::{Deserialize, Serialize};

use crate::error::{MetricsError, Result};

fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Word-level ROUGE-L F1; 0 when either side is empty.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let c: Vec<&str> = candidate.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let l = lcs_len(&c, &r) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / c.len() as f64;
    let rec = l / r.len() as f64;
    2.0 * p * rec / (p + rec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeScore {
    /// `(attribute, correct)` in the order of the expected record.
    pub per_attribute: Vec<(String, bool)>,
    pub overall: f64,
    /// No `<Attribute>: <option>` line for any expected attribute was found.
    pub parse_failure: bool,
}

/// Exact-match accuracy of `<Attribute>: <option>` lines in `text` against
/// the expected `(attribute, choice)` pairs. The first line naming an
/// attribute wins; missing attributes count as wrong.
pub fn attribute_accuracy(text: &str, expected: &[(String, String)]) -> AttributeScore {
    let mut found: Vec<Option<&str>> = vec![None; expected.len()];
    for line in text.lines() {
        let Some((key, value)) = line.split_once(':') else { continue };
        let key = key.trim();
        if let Some(i) = expected.iter().position(|(a, _)| a == key) {
            found[i].get_or_insert(value.trim());
        }
    }
    let parse_failure = found.iter().all(Option::is_none);
    let per_attribute: Vec<(String, bool)> =
        expected.iter().zip(&found).map(|((a, want), got)| (a.clone(), *got == Some(want.as_str()))).collect();
    let correct = per_attribute.iter().filter(|(_, ok)| *ok).count();
    let overall = if expected.is_empty() { 0.0 } else { correct as f64 / expected.len() as f64 };
    AttributeScore { per_attribute, overall, parse_failure }
}

/// Mean of ordinal ratings mapped poor=1, fair=2, good=3, great=4.
pub fn radar_score<S: AsRef<str>>(ratings: &[S]) -> Result<f64> {
    if ratings.is_empty() {
        return Err(MetricsError::Empty("ratings"));
    }
    let mut total = 0.0;
    for r in ratings {
        total += match r.as_ref().trim().to_ascii_lowercase().as_str() {
            "poor" => 1.0,
            "fair" => 2.0,
            "good" => 3.0,
            "great" => 4.0,
            other => return Err(MetricsError::Invalid(format!("unknown rating {other:?}"))),
        };
    }
    Ok(total / ratings.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l("the storm moves east", "the storm moves east"), 1.0);
        assert_eq!(rouge_l("a b", "c d"), 0.0);
        assert_eq!(rouge_l("", "a"), 0.0);
        assert!((rouge_l("a b c d", "a c d e") - 0.75).abs() < 1e-12);
    }

    fn record() -> Vec<(String, String)> {
        (0..11).map(|i| (format!("Attr {i}"), format!("opt {i}"))).collect()
    }

    #[test]
    fn attribute_echo_and_one_wrong() {
        let rec = record();
        let text: String = rec.iter().map(|(a, o)| format!("{a}: {o}\n")).collect();
        let s = attribute_accuracy(&text, &rec);
        assert_eq!(s.overall, 1.0);
        assert!(!s.parse_failure);
        let wrong = text.replace("opt 3", "opt 4");
        assert!((attribute_accuracy(&wrong, &rec).overall - 10.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn unparseable_text_scores_zero() {
        let s = attribute_accuracy("nothing useful here", &record());
        assert_eq!(s.overall, 0.0);
        assert!(s.parse_failure);
    }

    #[test]
    fn radar_score_mapping() {
        assert_eq!(radar_score(&["great"; 3]).unwrap(), 4.0);
        assert_eq!(radar_score(&["good", "great", "poor", "fair"]).unwrap(), 2.5);
        assert!(radar_score::<&str>(&[]).is_err());
        assert!(radar_score(&["superb"]).is_err());
    }
}
