//! Measures political slant in text-generating models and document corpora.
//!
//! The pipeline has four independent measurement methods that feed one
//! combined ranking:
//!
//! 1. Partisan-bigram slant: a lexicon of party-discriminating bigrams is
//!    built from a party-labeled corpus ([`lexicon`]), and text is scored by
//!    divergence from each party's usage profile ([`slant`]).
//! 2. Policy-viewpoint annotation: a judge model labels generated policy
//!    text as left / centrist / right ([`annotate`]).
//! 3. Public-figure sentiment: the judge labels sentiment toward politically
//!    aligned figures, and left-vs-right asymmetry is tested ([`annotate`]).
//! 4. Political-orientation tests: multiple-choice test banks administered
//!    with randomized framing, scored on economic and social axes
//!    ([`politests`]).
//!
//! [`harvest`] plans and executes the model interviews, [`stats`] holds the
//! shared statistics, and [`aggregate`] folds everything into a ranking.

pub mod aggregate;
pub mod annotate;
pub mod corpus;
pub mod harvest;
mod jsonl;
pub mod lexicon;
pub mod mock;
pub mod politests;
pub mod slant;
pub mod stats;

pub use aggregate::{AggregateRanking, BiasRating, Method, MethodScore, RankingRow};
pub use corpus::{Bigram, BigramCountTable, Document, Party};
pub use harvest::{
    Cache, EndpointConfig, Executor, GenerationRecord, GenerationTask, PromptTemplate,
    PublicFigure, ResponseStatus, TemplateKind,
};
pub use lexicon::{LexiconParams, PartisanLexicon, PartyTermCounts, ReferenceRanking};
pub use slant::{SlantScore, TermDistribution};
pub use stats::{WelchTTest, ZScoreVector};
