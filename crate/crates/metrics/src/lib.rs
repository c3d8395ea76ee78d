//! Caption-quality metrics and diversity statistics for generated
//! instructions.
//!
//! Sentences are tokenized with the same pipeline the models use. Scores are
//! computed over ordered maps so they are bitwise stable across runs.

pub mod bleu;
pub mod cider;
pub mod diversity;
pub mod error;
pub mod meteor;
pub mod ngram;
pub mod report;
pub mod rouge;

pub use bleu::{bleu, bleu_stats, BleuStats};
pub use cider::{cider_d, cider_d_scores};
pub use diversity::{diversity_report, diversity_report_with, BigramDenominator, DiversityBlock};
pub use error::{MetricError, Result};
pub use meteor::meteor_lite;
pub use ngram::NGramIndex;
pub use report::{evaluate, join, read_generated, read_references, GeneratedLine, MetricReport, ReferenceLine};
pub use rouge::rouge_l;
