//! Score-file I/O.
//!
//! One trial per line, UTF-8 CSV without a header:
//! `trial_id,label,score` with `label` in `{genuine, spoof}`. Scores are
//! written with 17 significant digits so files round-trip `f64` exactly.

use super::{Label, TrialScore};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

/// JSON report emitted next to a score file by the evaluation drivers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EerReport {
    pub eer: f64,
    pub threshold: f64,
    pub n_genuine: usize,
    pub n_spoof: usize,
}

pub fn write_scores(path: &Path, scores: &[TrialScore]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_scores_to(&mut w, scores).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_scores_to(w: &mut impl Write, scores: &[TrialScore]) -> std::io::Result<()> {
    for t in scores {
        // {:.16e} prints one digit before the point and 16 after: 17
        // significant digits, enough to reconstruct any f64 exactly.
        writeln!(w, "{},{},{:.16e}", t.trial_id, t.label, t.score)?;
    }
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<TrialScore>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_scores_from(BufReader::new(file), path)
}

pub fn read_scores_from(r: impl Read, path: &Path) -> Result<Vec<TrialScore>> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(r).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, ',');
        let (id, label, score) = match (fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("expected `trial_id,label,score`, got {line:?}"),
                ))
            }
        };
        let label = match label {
            "genuine" => Label::Genuine,
            "spoof" => Label::Spoof,
            other => {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("unknown label {other:?} (expected genuine or spoof)"),
                ))
            }
        };
        let score: f64 = score.trim().parse().map_err(|_| {
            Error::parse(path, line_no, format!("invalid score {score:?}"))
        })?;
        out.push(TrialScore {
            trial_id: id.to_string(),
            label,
            score,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn read_str(text: &str) -> Result<Vec<TrialScore>> {
        read_scores_from(text.as_bytes(), &PathBuf::from("<mem>"))
    }

    #[test]
    fn parses_the_format_definition_line() {
        let got = read_str("trial_0001,spoof,-1.25\n").unwrap();
        assert_eq!(
            got,
            vec![TrialScore {
                trial_id: "trial_0001".into(),
                label: Label::Spoof,
                score: -1.25,
            }]
        );
    }

    #[test]
    fn empty_file_reads_empty_then_eer_is_domain_error() {
        let got = read_str("").unwrap();
        assert!(got.is_empty());
        assert!(matches!(
            super::super::compute_eer(&got),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn unknown_label_is_parse_error_with_line() {
        let err = read_str("a,genuine,1.0\nb,bonafide,0.5\n").unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("bonafide"), "{message}");
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn malformed_line_is_parse_error_with_line() {
        let err = read_str("justonefield\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn bad_score_is_parse_error() {
        let err = read_str("a,spoof,not-a-number\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn thousand_random_trials_roundtrip_bit_exact() {
        let mut rng = crate::numerics::RngStream::new(77);
        let scores: Vec<TrialScore> = (0..1000)
            .map(|i| TrialScore {
                trial_id: format!("trial_{i:04}"),
                label: if rng.next_uniform() < 0.5 {
                    Label::Genuine
                } else {
                    Label::Spoof
                },
                score: rng.next_gaussian() * 10f64.powi((rng.next_below(7) as i32) - 3),
            })
            .collect();
        let mut buf = Vec::new();
        write_scores_to(&mut buf, &scores).unwrap();
        let back = read_scores_from(buf.as_slice(), &PathBuf::from("<mem>")).unwrap();
        assert_eq!(back.len(), scores.len());
        for (a, b) in scores.iter().zip(&back) {
            assert_eq!(a.trial_id, b.trial_id);
            assert_eq!(a.label, b.label);
            assert_eq!(a.score.to_bits(), b.score.to_bits(), "{} vs {}", a.score, b.score);
        }
    }
}
