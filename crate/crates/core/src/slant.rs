//! Projects corpora onto the partisan lexicon and scores slant as the
//! difference of Jensen-Shannon divergences from the two party references.
//!
//! Negative delta = usage closer to the Democratic reference; positive =
//! closer to the Republican reference.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::{Bigram, BigramCountTable};
use crate::lexicon::PartisanLexicon;

pub const LN_2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Error)]
pub enum SlantError {
    #[error("insufficient evidence: {have} lexicon-term occurrences, need at least {need}")]
    InsufficientEvidence { have: u64, need: u64 },
    #[error("invalid distribution: {message}")]
    InvalidDistribution { message: String },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A probability distribution over lexicon bigrams, with the raw
/// occurrence count that backs it.
///
/// Terms are kept ordered so that divergence sums always accumulate in the
/// same order; scores must be bit-for-bit reproducible across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct TermDistribution {
    probs: BTreeMap<Bigram, f64>,
    support_count: u64,
}

impl TermDistribution {
    /// Restrict `counts` to the lexicon terms and renormalize.
    pub fn project(
        counts: &BigramCountTable,
        lexicon: &PartisanLexicon,
        min_evidence: u64,
    ) -> Result<Self, SlantError> {
        let mut hits: Vec<(&Bigram, u64)> = Vec::new();
        let mut total: u64 = 0;
        for (bigram, _, _) in lexicon.terms() {
            let n = counts.count(bigram);
            if n > 0 {
                hits.push((bigram, n));
                total += n;
            }
        }
        if total < min_evidence.max(1) {
            return Err(SlantError::InsufficientEvidence {
                have: total,
                need: min_evidence.max(1),
            });
        }
        let probs = hits
            .into_iter()
            .map(|(b, n)| (b.clone(), n as f64 / total as f64))
            .collect();
        Ok(TermDistribution {
            probs,
            support_count: total,
        })
    }

    /// Build a distribution directly from probabilities (synthetic inputs,
    /// mixtures). Zero-probability entries are dropped; the rest must sum
    /// to 1 within 1e-9.
    pub fn from_probabilities(
        probs: HashMap<Bigram, f64>,
        support_count: u64,
    ) -> Result<Self, SlantError> {
        let mut sum = 0.0;
        for (bigram, p) in &probs {
            if !(0.0..=1.0 + 1e-12).contains(p) {
                return Err(SlantError::InvalidDistribution {
                    message: format!("probability {p} for `{bigram}` outside [0, 1]"),
                });
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SlantError::InvalidDistribution {
                message: format!("probabilities sum to {sum}, expected 1"),
            });
        }
        let probs: BTreeMap<Bigram, f64> =
            probs.into_iter().filter(|(_, p)| *p > 0.0).collect();
        Ok(TermDistribution {
            probs,
            support_count,
        })
    }

    pub fn probability(&self, bigram: &Bigram) -> f64 {
        self.probs.get(bigram).copied().unwrap_or(0.0)
    }

    pub fn support_count(&self) -> u64 {
        self.support_count
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Bigram, f64)> {
        self.probs.iter().map(|(b, &p)| (b, p))
    }
}

/// Jensen-Shannon divergence in nats: ½KL(P‖M) + ½KL(Q‖M), M = ½(P+Q).
/// Zero-probability terms contribute nothing; no smoothing is applied.
/// The result is clamped to [0, ln 2] to shed float round-off at the
/// boundaries.
pub fn jensen_shannon(p: &TermDistribution, q: &TermDistribution) -> f64 {
    let mut acc = 0.0;
    for (bigram, pi) in p.iter() {
        let m = 0.5 * (pi + q.probability(bigram));
        acc += 0.5 * pi * (pi / m).ln();
    }
    for (bigram, qi) in q.iter() {
        let m = 0.5 * (qi + p.probability(bigram));
        acc += 0.5 * qi * (qi / m).ln();
    }
    acc.clamp(0.0, LN_2)
}

/// Differential slant: divergence from the Democratic reference minus
/// divergence from the Republican reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlantScore {
    pub jsd_dem: f64,
    pub jsd_rep: f64,
    pub delta: f64,
}

pub fn slant_delta(
    text: &TermDistribution,
    dem: &TermDistribution,
    rep: &TermDistribution,
) -> SlantScore {
    let jsd_dem = jensen_shannon(text, dem);
    let jsd_rep = jensen_shannon(text, rep);
    SlantScore {
        jsd_dem,
        jsd_rep,
        delta: jsd_dem - jsd_rep,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitScore {
    pub unit: String,
    pub score: SlantScore,
    pub support_count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedUnit {
    pub unit: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UnitScores {
    pub scored: Vec<UnitScore>,
    pub skipped: Vec<SkippedUnit>,
}

/// Score each named corpus unit against the party references. Units that
/// fail projection (e.g. insufficient evidence) are skipped with a reason
/// rather than failing the batch. Output order follows the unit names.
pub fn score_corpus_units(
    units: &BTreeMap<String, BigramCountTable>,
    lexicon: &PartisanLexicon,
    dem: &TermDistribution,
    rep: &TermDistribution,
    min_evidence: u64,
) -> UnitScores {
    let mut out = UnitScores::default();
    for (name, counts) in units {
        match TermDistribution::project(counts, lexicon, min_evidence) {
            Ok(dist) => out.scored.push(UnitScore {
                unit: name.clone(),
                score: slant_delta(&dist, dem, rep),
                support_count: dist.support_count(),
            }),
            Err(e) => out.skipped.push(SkippedUnit {
                unit: name.clone(),
                reason: e.to_string(),
            }),
        }
    }
    out
}

/// Per-unit slant scores: `unit,jsd_dem,jsd_rep,delta,support_count`.
pub fn write_units_csv(path: &Path, scores: &[UnitScore]) -> Result<(), SlantError> {
    let csv_err = |e: csv::Error| SlantError::Csv {
        path: path.to_owned(),
        message: e.to_string(),
    };
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    writer
        .write_record(["unit", "jsd_dem", "jsd_rep", "delta", "support_count"])
        .map_err(csv_err)?;
    for row in scores {
        writer
            .write_record([
                row.unit.clone(),
                row.score.jsd_dem.to_string(),
                row.score.jsd_rep.to_string(),
                row.score.delta.to_string(),
                row.support_count.to_string(),
            ])
            .map_err(csv_err)?;
    }
    writer.flush().map_err(|e| SlantError::Io {
        path: path.to_owned(),
        source: e,
    })
}

/// Read back a CSV written by [`write_units_csv`].
pub fn read_units_csv(path: &Path) -> Result<Vec<UnitScore>, SlantError> {
    let csv_err = |message: String| SlantError::Csv {
        path: path.to_owned(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(e.to_string()))?;
    let mut scores = Vec::new();
    for record in reader.deserialize() {
        let (unit, jsd_dem, jsd_rep, delta, support_count): (String, f64, f64, f64, u64) =
            record.map_err(|e| csv_err(e.to_string()))?;
        scores.push(UnitScore {
            unit,
            score: SlantScore {
                jsd_dem,
                jsd_rep,
                delta,
            },
            support_count,
        });
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::LexiconParams;
    use proptest::prelude::*;

    fn bigram(s: &str) -> Bigram {
        s.parse().unwrap()
    }

    /// Lexicon whose Democratic side is d0..d<n, Republican side r0..r<n.
    fn test_lexicon(n: usize) -> PartisanLexicon {
        let dem = (0..n)
            .map(|i| (bigram(&format!("d{i} term")), (n - i) as f64))
            .collect();
        let rep = (0..n)
            .map(|i| (bigram(&format!("r{i} term")), (n - i) as f64))
            .collect();
        PartisanLexicon::new(dem, rep, LexiconParams::default()).unwrap()
    }

    fn dist(entries: &[(&str, f64)]) -> TermDistribution {
        let probs = entries.iter().map(|(s, p)| (bigram(s), *p)).collect();
        TermDistribution::from_probabilities(probs, 100).unwrap()
    }

    #[test]
    fn project_renormalizes_counts() {
        let lex = test_lexicon(2);
        let mut counts = BigramCountTable::new();
        counts.add_count(bigram("d0 term"), 3);
        counts.add_count(bigram("r0 term"), 1);
        counts.add_count(bigram("unrelated thing"), 50);
        let d = TermDistribution::project(&counts, &lex, 1).unwrap();
        assert_eq!(d.probability(&bigram("d0 term")), 0.75);
        assert_eq!(d.probability(&bigram("r0 term")), 0.25);
        assert_eq!(d.probability(&bigram("unrelated thing")), 0.0);
        assert_eq!(d.support_count(), 4);
    }

    #[test]
    fn project_requires_lexicon_evidence() {
        let lex = test_lexicon(2);
        let mut counts = BigramCountTable::new();
        counts.add_count(bigram("unrelated thing"), 1000);
        let err = TermDistribution::project(&counts, &lex, 1).unwrap_err();
        assert!(matches!(err, SlantError::InsufficientEvidence { have: 0, .. }));

        let mut sparse = BigramCountTable::new();
        sparse.add_count(bigram("d0 term"), 10);
        assert!(matches!(
            TermDistribution::project(&sparse, &lex, 50),
            Err(SlantError::InsufficientEvidence { have: 10, need: 50 })
        ));
    }

    #[test]
    fn project_probabilities_equal_count_ratios() {
        let lex = test_lexicon(20);
        let mut counts = BigramCountTable::new();
        let mut total = 0u64;
        for i in 0..20 {
            let n = (i as u64 + 1) * 3;
            counts.add_count(bigram(&format!("d{i} term")), n);
            total += n;
        }
        let d = TermDistribution::project(&counts, &lex, 1).unwrap();
        let mut sum = 0.0;
        for i in 0..20 {
            let n = (i as u64 + 1) * 3;
            let p = d.probability(&bigram(&format!("d{i} term")));
            assert_eq!(p, n as f64 / total as f64);
            sum += p;
        }
        assert!((sum - 1.0).abs() <= 1e-12, "probabilities sum to {sum}");
    }

    #[test]
    fn jsd_identity_is_zero() {
        let p = dist(&[("d0 term", 0.5), ("r0 term", 0.5)]);
        assert_eq!(jensen_shannon(&p, &p), 0.0);
    }

    #[test]
    fn jsd_disjoint_supports_hit_ln2() {
        let p = dist(&[("d0 term", 1.0)]);
        let q = dist(&[("r0 term", 1.0)]);
        assert!((jensen_shannon(&p, &q) - LN_2).abs() <= 1e-15);
    }

    #[test]
    fn jsd_known_value() {
        // Frozen from an independent ½KL+½KL evaluation.
        let p = dist(&[("d0 term", 0.5), ("r0 term", 0.5)]);
        let q = dist(&[("d0 term", 1.0)]);
        let got = jensen_shannon(&p, &q);
        assert!((got - 0.21576155433883565).abs() <= 1e-12, "got {got}");
    }

    #[test]
    fn delta_of_dem_reference_is_negative() {
        let dem = dist(&[("d0 term", 0.7), ("r0 term", 0.3)]);
        let rep = dist(&[("d0 term", 0.2), ("r0 term", 0.8)]);
        let score = slant_delta(&dem, &dem, &rep);
        assert_eq!(score.jsd_dem, 0.0);
        assert!(score.delta < 0.0);
        assert_eq!(score.delta, -jensen_shannon(&dem, &rep));
    }

    #[test]
    fn delta_of_equidistant_text_is_zero() {
        let dem = dist(&[("d0 term", 0.6), ("r0 term", 0.4)]);
        let rep = dist(&[("d0 term", 0.4), ("r0 term", 0.6)]);
        let text = dist(&[("d0 term", 0.5), ("r0 term", 0.5)]);
        let score = slant_delta(&text, &dem, &rep);
        assert!(score.delta.abs() <= 1e-15, "delta {}", score.delta);
    }

    fn mixture(dem: &TermDistribution, rep: &TermDistribution, lambda: f64) -> TermDistribution {
        let mut probs: HashMap<Bigram, f64> = HashMap::new();
        for (b, p) in dem.iter() {
            *probs.entry(b.clone()).or_insert(0.0) += (1.0 - lambda) * p;
        }
        for (b, p) in rep.iter() {
            *probs.entry(b.clone()).or_insert(0.0) += lambda * p;
        }
        TermDistribution::from_probabilities(probs, 100).unwrap()
    }

    #[test]
    fn delta_is_strictly_monotone_along_the_mixture_path() {
        let dem = dist(&[("d0 term", 0.5), ("d1 term", 0.3), ("r0 term", 0.2)]);
        let rep = dist(&[("r0 term", 0.5), ("r1 term", 0.3), ("d0 term", 0.2)]);
        let mut last = f64::NEG_INFINITY;
        for k in 0..=10 {
            let lambda = k as f64 / 10.0;
            let delta = slant_delta(&mixture(&dem, &rep, lambda), &dem, &rep).delta;
            assert!(delta > last, "delta not increasing at λ={lambda}");
            if k == 0 {
                assert!(delta < 0.0);
            }
            if k == 10 {
                assert!(delta > 0.0);
            }
            last = delta;
        }
    }

    #[test]
    fn duplicating_documents_leaves_score_unchanged() {
        let lex = test_lexicon(3);
        let dem = dist(&[("d0 term", 0.8), ("r0 term", 0.2)]);
        let rep = dist(&[("d0 term", 0.2), ("r0 term", 0.8)]);
        let mut once = BigramCountTable::new();
        once.add_count(bigram("d0 term"), 7);
        once.add_count(bigram("d1 term"), 3);
        once.add_count(bigram("r0 term"), 2);
        let mut twice = once.clone();
        for (b, n) in once.iter() {
            twice.add_count(b.clone(), n);
        }
        let s1 = TermDistribution::project(&once, &lex, 1).unwrap();
        let s2 = TermDistribution::project(&twice, &lex, 1).unwrap();
        for (b, p) in s1.iter() {
            assert!((p - s2.probability(b)).abs() <= 1e-15);
        }
        let d1 = slant_delta(&s1, &dem, &rep);
        let d2 = slant_delta(&s2, &dem, &rep);
        assert!((d1.delta - d2.delta).abs() <= 1e-15);
    }

    #[test]
    fn score_units_orders_and_skips() {
        let lex = test_lexicon(3);
        let dem_probs = dist(&[("d0 term", 0.6), ("d1 term", 0.3), ("r0 term", 0.1)]);
        let rep_probs = dist(&[("r0 term", 0.6), ("r1 term", 0.3), ("d0 term", 0.1)]);

        let mut units: BTreeMap<String, BigramCountTable> = BTreeMap::new();
        let mut dem_like = BigramCountTable::new();
        dem_like.add_count(bigram("d0 term"), 60);
        dem_like.add_count(bigram("d1 term"), 30);
        dem_like.add_count(bigram("r0 term"), 10);
        let mut rep_like = BigramCountTable::new();
        rep_like.add_count(bigram("r0 term"), 60);
        rep_like.add_count(bigram("r1 term"), 30);
        rep_like.add_count(bigram("d0 term"), 10);
        let mut middle = BigramCountTable::new();
        for (b, n) in dem_like.iter().chain(rep_like.iter()) {
            middle.add_count(b.clone(), n);
        }
        units.insert("outlet-dem".into(), dem_like);
        units.insert("outlet-mid".into(), middle);
        units.insert("outlet-rep".into(), rep_like);
        units.insert("outlet-empty".into(), BigramCountTable::new());

        let scores = score_corpus_units(&units, &lex, &dem_probs, &rep_probs, 5);
        let by_name: HashMap<&str, f64> = scores
            .scored
            .iter()
            .map(|u| (u.unit.as_str(), u.score.delta))
            .collect();
        assert!(by_name["outlet-dem"] < 0.0);
        assert!(by_name["outlet-rep"] > 0.0);
        assert!(by_name["outlet-mid"].abs() < by_name["outlet-rep"].abs());
        assert!(by_name["outlet-dem"] < by_name["outlet-mid"]);
        assert_eq!(scores.skipped.len(), 1);
        assert_eq!(scores.skipped[0].unit, "outlet-empty");
        // Output sorted by unit name.
        let names: Vec<&str> = scores.scored.iter().map(|u| u.unit.as_str()).collect();
        assert_eq!(names, vec!["outlet-dem", "outlet-mid", "outlet-rep"]);
    }

    #[test]
    fn units_csv_has_fixed_header_and_round_trip_floats() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("slant.csv");
        write_units_csv(
            &path,
            &[UnitScore {
                unit: "outlet-2020".into(),
                score: SlantScore {
                    jsd_dem: 0.125,
                    jsd_rep: 0.5,
                    delta: -0.375,
                },
                support_count: 42,
            }],
        )
        .unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "unit,jsd_dem,jsd_rep,delta,support_count\noutlet-2020,0.125,0.5,-0.375,42\n"
        );
        let back = read_units_csv(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].unit, "outlet-2020");
        assert_eq!(back[0].score.delta, -0.375);
        assert_eq!(back[0].support_count, 42);
    }

    #[test]
    fn unit_equal_to_dem_corpus_scores_most_negative() {
        let lex = test_lexicon(3);
        let dem = dist(&[("d0 term", 0.6), ("d1 term", 0.3), ("r0 term", 0.1)]);
        let rep = dist(&[("r0 term", 0.6), ("r1 term", 0.3), ("d0 term", 0.1)]);
        let mut units: BTreeMap<String, BigramCountTable> = BTreeMap::new();
        let mut exact_dem = BigramCountTable::new();
        exact_dem.add_count(bigram("d0 term"), 60);
        exact_dem.add_count(bigram("d1 term"), 30);
        exact_dem.add_count(bigram("r0 term"), 10);
        let mut mixed = BigramCountTable::new();
        mixed.add_count(bigram("d0 term"), 35);
        mixed.add_count(bigram("d1 term"), 15);
        mixed.add_count(bigram("r0 term"), 35);
        mixed.add_count(bigram("r1 term"), 15);
        units.insert("dem-clone".into(), exact_dem);
        units.insert("mixed".into(), mixed);
        let scores = score_corpus_units(&units, &lex, &dem, &rep, 5);
        let min = scores
            .scored
            .iter()
            .min_by(|a, b| a.score.delta.total_cmp(&b.score.delta))
            .unwrap();
        assert_eq!(min.unit, "dem-clone");
    }

    #[test]
    fn from_probabilities_validates() {
        let mut probs = HashMap::new();
        probs.insert(bigram("d0 term"), 0.7);
        probs.insert(bigram("r0 term"), 0.7);
        assert!(matches!(
            TermDistribution::from_probabilities(probs, 10),
            Err(SlantError::InvalidDistribution { .. })
        ));
        let mut negative = HashMap::new();
        negative.insert(bigram("d0 term"), -0.5);
        negative.insert(bigram("r0 term"), 1.5);
        assert!(TermDistribution::from_probabilities(negative, 10).is_err());
    }

    /// Random distribution over the `2n` lexicon terms, possibly sparse.
    fn random_dist(weights: &[f64], n: usize) -> TermDistribution {
        let total: f64 = weights.iter().sum();
        let mut probs = HashMap::new();
        for (i, w) in weights.iter().enumerate() {
            if *w > 0.0 {
                let name = if i % 2 == 0 {
                    format!("d{} term", i / 2 % n)
                } else {
                    format!("r{} term", i / 2 % n)
                };
                *probs.entry(bigram(&name)).or_insert(0.0) += w / total;
            }
        }
        // Renormalize exactly to absorb accumulated round-off.
        let sum: f64 = probs.values().sum();
        for v in probs.values_mut() {
            *v /= sum;
        }
        TermDistribution::from_probabilities(probs, 100).unwrap()
    }

    proptest! {
        #[test]
        fn jsd_symmetry_and_bounds(
            wp in proptest::collection::vec(0.0f64..10.0, 4..30),
            wq in proptest::collection::vec(0.0f64..10.0, 4..30),
        ) {
            prop_assume!(wp.iter().sum::<f64>() > 0.1 && wq.iter().sum::<f64>() > 0.1);
            let p = random_dist(&wp, 8);
            let q = random_dist(&wq, 8);
            let pq = jensen_shannon(&p, &q);
            let qp = jensen_shannon(&q, &p);
            prop_assert!((pq - qp).abs() <= 1e-12);
            prop_assert!((0.0..=LN_2).contains(&pq));
            prop_assert!(jensen_shannon(&p, &p) == 0.0);
        }

        #[test]
        fn delta_sign_flips_when_references_swap(
            wt in proptest::collection::vec(0.0f64..10.0, 4..20),
            wd in proptest::collection::vec(0.0f64..10.0, 4..20),
            wr in proptest::collection::vec(0.0f64..10.0, 4..20),
        ) {
            prop_assume!(wt.iter().sum::<f64>() > 0.1);
            prop_assume!(wd.iter().sum::<f64>() > 0.1);
            prop_assume!(wr.iter().sum::<f64>() > 0.1);
            let text = random_dist(&wt, 6);
            let dem = random_dist(&wd, 6);
            let rep = random_dist(&wr, 6);
            let fwd = slant_delta(&text, &dem, &rep);
            let rev = slant_delta(&text, &rep, &dem);
            prop_assert!((fwd.delta + rev.delta).abs() <= 1e-12);
            prop_assert!(fwd.delta.abs() <= LN_2);
        }
    }
}
