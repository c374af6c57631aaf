//! Builds the partisan bigram lexicon: a χ² contrast statistic over
//! party-labeled bigram counts, reference-corpus frequency filtering, and
//! the top-N term sets per party.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Bigram, BigramCountTable, CorpusError, Party};

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("degenerate χ² denominator: {factor} is zero")]
    DegenerateDenominator { factor: &'static str },
    #[error("empty {which} bigram table")]
    EmptyInput { which: &'static str },
    #[error("empty reference ranking")]
    EmptyReference,
    #[error("lexicon is empty after reference filtering")]
    EmptyLexicon,
    #[error("duplicate bigram `{bigram}` in lexicon")]
    DuplicateTerm { bigram: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: record {record}: {message}")]
    BadRecord {
        path: PathBuf,
        record: usize,
        message: String,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// The 2×2 usage contrast for one bigram: how often each party used it,
/// and how many other bigram occurrences each party produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartyTermCounts {
    pub rep_uses: u64,
    pub dem_uses: u64,
    pub rep_rest: u64,
    pub dem_rest: u64,
}

impl PartyTermCounts {
    pub fn from_tables(
        bigram: &Bigram,
        dem: &BigramCountTable,
        rep: &BigramCountTable,
    ) -> Self {
        let dem_uses = dem.count(bigram);
        let rep_uses = rep.count(bigram);
        PartyTermCounts {
            rep_uses,
            dem_uses,
            rep_rest: rep.total() - rep_uses,
            dem_rest: dem.total() - dem_uses,
        }
    }
}

/// χ² partisanship statistic for one bigram:
///
/// (rep_uses·dem_rest − dem_uses·rep_rest)² /
///   [(rep_uses+dem_uses)(rep_uses+rep_rest)(dem_uses+dem_rest)(rep_rest+dem_rest)]
///
/// This is the standard 2×2 Pearson χ² divided by the grand total, so it is
/// invariant under uniform scaling of all four counts and induces the same
/// ranking.
pub fn chi_square_bigram(c: &PartyTermCounts) -> Result<f64, LexiconError> {
    let used = c.rep_uses + c.dem_uses;
    let rep_total = c.rep_uses + c.rep_rest;
    let dem_total = c.dem_uses + c.dem_rest;
    let rest = c.rep_rest + c.dem_rest;
    for (value, factor) in [
        (used, "combined bigram count (rep_uses + dem_uses)"),
        (rep_total, "Republican corpus total"),
        (dem_total, "Democratic corpus total"),
        (rest, "combined remainder (rep_rest + dem_rest)"),
    ] {
        if value == 0 {
            return Err(LexiconError::DegenerateDenominator { factor });
        }
    }
    let diff = c.rep_uses as f64 * c.dem_rest as f64 - c.dem_uses as f64 * c.rep_rest as f64;
    Ok(diff * diff / (used as f64 * rep_total as f64 * dem_total as f64 * rest as f64))
}

/// Frequency ranking of a reference corpus: rank 1 is the most frequent
/// bigram, ties broken lexicographically.
#[derive(Debug, Clone, Default)]
pub struct ReferenceRanking {
    ranks: HashMap<Bigram, usize>,
}

impl ReferenceRanking {
    pub fn from_counts(table: &BigramCountTable) -> Self {
        let ranks = table
            .sorted_desc()
            .into_iter()
            .enumerate()
            .map(|(i, (bigram, _))| (bigram.clone(), i + 1))
            .collect();
        ReferenceRanking { ranks }
    }

    /// 1-based frequency rank, or None if the bigram never occurs in the
    /// reference corpus.
    pub fn rank(&self, bigram: &Bigram) -> Option<usize> {
        self.ranks.get(bigram).copied()
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    /// Read a precomputed ranking: CSV with columns bigram, rank.
    pub fn read_csv(path: &Path) -> Result<Self, LexiconError> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| LexiconError::Csv {
            path: path.to_owned(),
            source: e,
        })?;
        let mut ranks = HashMap::new();
        let mut seen_ranks = std::collections::HashSet::new();
        for (i, row) in reader.deserialize::<(String, usize)>().enumerate() {
            let bad = |message: String| LexiconError::BadRecord {
                path: path.to_owned(),
                record: i + 1,
                message,
            };
            let (raw, rank) = row.map_err(|e| bad(e.to_string()))?;
            let bigram: Bigram = raw.parse().map_err(|e: CorpusError| bad(e.to_string()))?;
            if rank == 0 {
                return Err(bad("rank must be ≥ 1".to_owned()));
            }
            if !seen_ranks.insert(rank) {
                return Err(bad(format!("duplicate rank {rank}")));
            }
            if ranks.insert(bigram, rank).is_some() {
                return Err(bad(format!("duplicate bigram `{raw}`")));
            }
        }
        Ok(ReferenceRanking { ranks })
    }

    /// Write the ranking as CSV with columns bigram, rank.
    pub fn write_csv(&self, path: &Path) -> Result<(), LexiconError> {
        let io_err = |e| LexiconError::Io {
            path: path.to_owned(),
            source: e,
        };
        let mut entries: Vec<_> = self.ranks.iter().collect();
        entries.sort_by_key(|(_, &rank)| rank);
        let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
        writeln!(out, "bigram,rank").map_err(io_err)?;
        for (bigram, rank) in entries {
            writeln!(out, "{bigram},{rank}").map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LexiconParams {
    /// Terms kept per party.
    pub set_size: usize,
    /// Bigrams must fall within this many top reference ranks.
    pub reference_top: usize,
    /// Bigrams within this many top reference ranks are excluded as
    /// too common.
    pub reference_exclude_top: usize,
}

impl Default for LexiconParams {
    fn default() -> Self {
        LexiconParams {
            set_size: 1000,
            reference_top: 200_000,
            reference_exclude_top: 100,
        }
    }
}

/// The two partisan term sets, each sorted by χ² descending with
/// lexicographic tie-break; the sets are disjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct PartisanLexicon {
    dem_terms: Vec<(Bigram, f64)>,
    rep_terms: Vec<(Bigram, f64)>,
    params: LexiconParams,
    index: HashMap<Bigram, Party>,
}

fn sort_terms(terms: &mut [(Bigram, f64)]) {
    terms.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

impl PartisanLexicon {
    pub fn new(
        mut dem_terms: Vec<(Bigram, f64)>,
        mut rep_terms: Vec<(Bigram, f64)>,
        params: LexiconParams,
    ) -> Result<Self, LexiconError> {
        sort_terms(&mut dem_terms);
        sort_terms(&mut rep_terms);
        let mut index = HashMap::with_capacity(dem_terms.len() + rep_terms.len());
        for (terms, party) in [(&dem_terms, Party::Democratic), (&rep_terms, Party::Republican)] {
            for (bigram, _) in terms.iter() {
                if index.insert(bigram.clone(), party).is_some() {
                    return Err(LexiconError::DuplicateTerm {
                        bigram: bigram.to_string(),
                    });
                }
            }
        }
        Ok(PartisanLexicon {
            dem_terms,
            rep_terms,
            params,
            index,
        })
    }

    pub fn dem_terms(&self) -> &[(Bigram, f64)] {
        &self.dem_terms
    }

    pub fn rep_terms(&self) -> &[(Bigram, f64)] {
        &self.rep_terms
    }

    pub fn params(&self) -> &LexiconParams {
        &self.params
    }

    pub fn party_of(&self, bigram: &Bigram) -> Option<Party> {
        self.index.get(bigram).copied()
    }

    pub fn contains(&self, bigram: &Bigram) -> bool {
        self.index.contains_key(bigram)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// All terms, Democratic set first.
    pub fn terms(&self) -> impl Iterator<Item = (&Bigram, Party, f64)> {
        self.dem_terms
            .iter()
            .map(|(b, s)| (b, Party::Democratic, *s))
            .chain(
                self.rep_terms
                    .iter()
                    .map(|(b, s)| (b, Party::Republican, *s)),
            )
    }

    /// Write as CSV: columns bigram, party, chi2, rank (rank within the
    /// party's own list).
    pub fn write_csv(&self, path: &Path) -> Result<(), LexiconError> {
        let io_err = |e| LexiconError::Io {
            path: path.to_owned(),
            source: e,
        };
        let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
        writeln!(out, "bigram,party,chi2,rank").map_err(io_err)?;
        let sides = [
            (Party::Democratic, &self.dem_terms),
            (Party::Republican, &self.rep_terms),
        ];
        for (party, terms) in sides {
            for (i, (bigram, chi2)) in terms.iter().enumerate() {
                writeln!(out, "{bigram},{party},{chi2},{}", i + 1).map_err(io_err)?;
            }
        }
        out.flush().map_err(io_err)
    }

    /// Read back a CSV written by [`PartisanLexicon::write_csv`].
    pub fn read_csv(path: &Path, params: LexiconParams) -> Result<Self, LexiconError> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| LexiconError::Csv {
            path: path.to_owned(),
            source: e,
        })?;
        let mut dem_terms = Vec::new();
        let mut rep_terms = Vec::new();
        for (i, row) in reader
            .deserialize::<(String, String, f64, usize)>()
            .enumerate()
        {
            let bad = |message: String| LexiconError::BadRecord {
                path: path.to_owned(),
                record: i + 1,
                message,
            };
            let (raw, party, chi2, _rank) = row.map_err(|e| bad(e.to_string()))?;
            let bigram: Bigram = raw.parse().map_err(|e: CorpusError| bad(e.to_string()))?;
            let party: Party = party.parse().map_err(bad)?;
            match party {
                Party::Democratic => dem_terms.push((bigram, chi2)),
                Party::Republican => rep_terms.push((bigram, chi2)),
            }
        }
        PartisanLexicon::new(dem_terms, rep_terms, params)
    }
}

/// Score every bigram used by either party, filter by reference-corpus
/// frequency, assign each survivor to the party that uses it relatively
/// more, and keep the top `set_size` per party by χ².
pub fn build_partisan_lexicon(
    dem: &BigramCountTable,
    rep: &BigramCountTable,
    reference: &ReferenceRanking,
    params: LexiconParams,
) -> Result<PartisanLexicon, LexiconError> {
    if dem.is_empty() {
        return Err(LexiconError::EmptyInput {
            which: "Democratic",
        });
    }
    if rep.is_empty() {
        return Err(LexiconError::EmptyInput {
            which: "Republican",
        });
    }
    if reference.is_empty() {
        return Err(LexiconError::EmptyReference);
    }

    let mut dem_terms = Vec::new();
    let mut rep_terms = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (bigram, _) in dem.iter().chain(rep.iter()) {
        if !seen.insert(bigram) {
            continue;
        }
        match reference.rank(bigram) {
            Some(rank) if rank > params.reference_exclude_top && rank <= params.reference_top => {}
            _ => continue,
        }
        let counts = PartyTermCounts::from_tables(bigram, dem, rep);
        let chi2 = chi_square_bigram(&counts)?;
        // Relative frequency decides the side; a tie means identical
        // relative usage, i.e. χ² = 0 — no partisan signal, so skip.
        let dem_rel = counts.dem_uses as f64 / dem.total() as f64;
        let rep_rel = counts.rep_uses as f64 / rep.total() as f64;
        if dem_rel > rep_rel {
            dem_terms.push((bigram.clone(), chi2));
        } else if rep_rel > dem_rel {
            rep_terms.push((bigram.clone(), chi2));
        }
    }
    if dem_terms.is_empty() && rep_terms.is_empty() {
        return Err(LexiconError::EmptyLexicon);
    }
    sort_terms(&mut dem_terms);
    sort_terms(&mut rep_terms);
    dem_terms.truncate(params.set_size);
    rep_terms.truncate(params.set_size);
    PartisanLexicon::new(dem_terms, rep_terms, params)
}
