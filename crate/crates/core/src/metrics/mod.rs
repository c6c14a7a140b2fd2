//! Evaluation: one-shot similarity, improvement factor, ranked curves and
//! report files.

pub mod curves;
pub mod ipf;
pub mod report;
pub mod similarity;

pub use curves::{curves, curves_from_scores, top_count, CurveReport};
pub use ipf::{improvement_factor, DEFAULT_EPSILON};
pub use report::{curves_svg, read_table, write_curves, write_table, CurveSample, ReportRow};
pub use similarity::{
    hamming, jaro, jaro_winkler, jaro_winkler_norm, levenshtein, levenshtein_norm,
    perfect_reconstruction, OneShotScores,
};
