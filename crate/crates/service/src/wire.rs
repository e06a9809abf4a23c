use misc_observer::data::{Label, LabelSet, Speaker};
use misc_observer::metrics::top_k;
use serde::{Deserialize, Serialize};

pub const SIGNIFICANT_DIGITS: usize = 6;

/// `x` rounded to six significant digits, as it appears on the wire.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .expect("formatted float parses")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelProb {
    pub code: Label,
    pub probability: f64,
}

/// Full distribution in label-set order.
pub fn distribution(labels: &LabelSet, probs: &[f64]) -> Vec<LabelProb> {
    labels
        .labels()
        .iter()
        .zip(probs)
        .map(|(&code, &p)| LabelProb {
            code,
            probability: round_sig(p),
        })
        .collect()
}

/// The `k` most probable codes, most probable first.
pub fn ranked(labels: &LabelSet, probs: &[f64], k: usize) -> Vec<LabelProb> {
    top_k(probs, k)
        .into_iter()
        .map(|i| LabelProb {
            code: labels.label(i),
            probability: round_sig(probs[i]),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRequest {
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
}

/// Code assigned to an utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categorized {
    pub session_id: String,
    /// Position of the utterance in its session.
    pub index: usize,
    pub speaker: Speaker,
    pub code: Label,
    pub distribution: Vec<LabelProb>,
}

/// Ranked codes for the utterance that has not been said yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub session_id: String,
    pub speaker: Speaker,
    pub k: usize,
    pub top_k: Vec<LabelProb>,
    /// Set when MI non-adherent behavior is among the top `k`.
    pub warning: bool,
}

impl Forecast {
    pub fn new(session_id: &str, speaker: Speaker, probs: &[f64], k: usize) -> Self {
        let top_k = ranked(&speaker.labels(), probs, k);
        Forecast {
            session_id: session_id.to_string(),
            speaker,
            k,
            warning: top_k.iter().any(|l| l.code == Label::Min),
            top_k,
        }
    }
}

impl Categorized {
    pub fn new(session_id: &str, index: usize, speaker: Speaker, probs: &[f64]) -> Self {
        let labels = speaker.labels();
        Categorized {
            session_id: session_id.to_string(),
            index,
            speaker,
            code: labels.label(misc_observer::metrics::argmax(probs)),
            distribution: distribution(&labels, probs),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_keeps_six_significant_digits() {
        assert_eq!(round_sig(0.909_712_345), 0.909712);
        assert_eq!(round_sig(1.0), 1.0);
        assert_eq!(round_sig(1.234_567_89e-7), 1.23457e-7);
        assert_eq!(round_sig(0.0), 0.0);
        assert_eq!(
            serde_json::to_string(&round_sig(2.0 / 3.0)).unwrap(),
            "0.666667"
        );
    }

    #[test]
    fn forecast_flags_min_in_top_k() {
        let mut probs = vec![0.0; 8];
        probs[0] = 0.5;
        probs[7] = 0.3;
        probs[3] = 0.2;
        let f = Forecast::new("s", Speaker::Therapist, &probs, 3);
        assert!(f.warning);
        assert_eq!(f.top_k[1].code, Label::Min);
        let f = Forecast::new("s", Speaker::Therapist, &probs, 1);
        assert!(!f.warning);
        assert_eq!(f.top_k[0].code, Label::Fa);
    }

    #[test]
    fn categorized_reports_argmax() {
        let c = Categorized::new("s", 4, Speaker::Client, &[0.2, 0.7, 0.1]);
        assert_eq!(c.code, Label::Ct);
        assert_eq!(c.distribution.len(), 3);
        let json = serde_json::to_string(&c).unwrap();
        assert!(
            json.contains(r#""speaker":"C""#) && json.contains(r#""code":"Ct""#),
            "{json}"
        );
    }
}
