use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::Deserialize;

use super::{Label, Session, Speaker, Utterance};
use crate::error::{Error, Result};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSession {
    session_id: String,
    utterances: Vec<RawUtterance>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUtterance {
    speaker: String,
    text: String,
    #[serde(default)]
    label: Option<String>,
}

fn parse_line(line: &str) -> std::result::Result<Session, String> {
    let raw: RawSession = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if raw.utterances.is_empty() {
        return Err(format!("session {:?} has no utterances", raw.session_id));
    }
    let mut utterances = Vec::with_capacity(raw.utterances.len());
    for (i, u) in raw.utterances.into_iter().enumerate() {
        let speaker: Speaker = u
            .speaker
            .parse()
            .map_err(|e| format!("utterance {i}: {e}"))?;
        let label = match u.label {
            None => None,
            Some(code) => {
                let label: Label = code.parse().map_err(|e| format!("utterance {i}: {e}"))?;
                if label.speaker() != speaker {
                    return Err(format!(
                        "utterance {i}: code {label} does not belong to speaker {speaker}"
                    ));
                }
                Some(label)
            }
        };
        utterances.push(Utterance {
            speaker,
            text: u.text,
            label,
        });
    }
    Ok(Session {
        session_id: raw.session_id,
        utterances,
    })
}

/// Parses one session record per line. Blank lines are skipped; an empty
/// input is an empty corpus.
pub fn read_corpus(reader: impl Read, source_name: &str) -> Result<Vec<Session>> {
    let mut sessions = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            source_name: source_name.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let session = parse_line(&line).map_err(|message| Error::Parse {
            source_name: source_name.to_string(),
            line: i + 1,
            message,
        })?;
        sessions.push(session);
    }
    Ok(sessions)
}

pub fn parse_corpus(text: &str, source_name: &str) -> Result<Vec<Session>> {
    read_corpus(text.as_bytes(), source_name)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Session>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(file, &path.display().to_string())
}

pub fn write_corpus(path: impl AsRef<Path>, sessions: &[Session]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for s in sessions {
        serde_json::to_writer(&mut out, s).expect("sessions serialize");
        out.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

/// Whole-session train/dev/test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionSplit {
    pub train: Vec<Session>,
    pub dev: Vec<Session>,
    pub test: Vec<Session>,
}

impl SessionSplit {
    /// Splits in corpus order: the last `test_frac` of sessions are test, the
    /// `dev_frac` before them dev. Windows never straddle the split.
    pub fn by_fraction(sessions: Vec<Session>, dev_frac: f64, test_frac: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&dev_frac)
            || !(0.0..1.0).contains(&test_frac)
            || dev_frac + test_frac >= 1.0
        {
            return Err(Error::config(format!(
                "split fractions dev={dev_frac} test={test_frac} must be in [0, 1) and sum below 1"
            )));
        }
        let n = sessions.len();
        let n_test = (n as f64 * test_frac).round() as usize;
        let n_dev = (n as f64 * dev_frac).round() as usize;
        let mut train = sessions;
        let test = train.split_off(n - n_test);
        let dev = train.split_off(n - n_test - n_dev);
        Ok(SessionSplit { train, dev, test })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = r#"{"session_id":"s1","utterances":[{"speaker":"T","text":"How are you?","label":"Quo"},{"speaker":"C","text":"Fine.","label":"Fn"}]}"#;

    #[test]
    fn parses_well_formed_record() {
        let sessions = parse_corpus(TWO, "mem").unwrap();
        assert_eq!(sessions.len(), 1);
        assert_eq!(sessions[0].utterances.len(), 2);
        assert_eq!(sessions[0].utterances[0].label, Some(Label::Quo));
    }

    #[test]
    fn role_mismatch_is_located() {
        let bad = format!(
            "{TWO}\n{}",
            r#"{"session_id":"s2","utterances":[{"speaker":"T","text":"x","label":"Ct"}]}"#
        );
        match parse_corpus(&bad, "mem") {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("utterance 0"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_codes_and_speakers_fail() {
        for rec in [
            r#"{"session_id":"s","utterances":[{"speaker":"X","text":"x"}]}"#,
            r#"{"session_id":"s","utterances":[{"speaker":"C","text":"x","label":"Zz"}]}"#,
            r#"{"session_id":"s","utterances":[]}"#,
            r#"not json"#,
        ] {
            assert!(
                matches!(parse_corpus(rec, "mem"), Err(Error::Parse { line: 1, .. })),
                "{rec}"
            );
        }
    }

    #[test]
    fn empty_input_is_empty_corpus() {
        assert!(parse_corpus("", "mem").unwrap().is_empty());
        assert!(parse_corpus("\n  \n", "mem").unwrap().is_empty());
    }

    #[test]
    fn unlabeled_utterances_allowed() {
        let s = parse_corpus(
            r#"{"session_id":"s","utterances":[{"speaker":"C","text":"hi"}]}"#,
            "mem",
        )
        .unwrap();
        assert_eq!(s[0].utterances[0].label, None);
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let sessions = parse_corpus(TWO, "mem").unwrap();
        write_corpus(&path, &sessions).unwrap();
        assert_eq!(load_corpus(&path).unwrap(), sessions);
    }

    #[test]
    fn split_is_by_session() {
        let sessions: Vec<Session> = (0..10)
            .map(|i| Session {
                session_id: format!("s{i}"),
                utterances: vec![Utterance::new(Speaker::Client, "x", None)],
            })
            .collect();
        let split = SessionSplit::by_fraction(sessions, 0.2, 0.1).unwrap();
        assert_eq!(
            (split.train.len(), split.dev.len(), split.test.len()),
            (7, 2, 1)
        );
        assert_eq!(split.test[0].session_id, "s9");
        assert!(SessionSplit::by_fraction(vec![], 0.6, 0.5).is_err());
    }
}
