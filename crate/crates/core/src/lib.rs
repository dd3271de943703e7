//! Outlier re-identification auditing for synthetic tabular data.
//!
//! The crate selects outliers in an original dataset with a z-score rule,
//! runs a quasi-identifier linkage attack against synthetic variants, scores
//! column-level utility, and ships a differentially private marginal
//! synthesizer as a baseline generator. [`audit`] ties these together into
//! multi-variant reports and the `outlier-audit` binary exposes them on the
//! command line.

pub mod audit;
pub mod cli;
pub mod comparators;
pub mod dataset;
pub mod dp_synth;
pub mod linkage;
pub mod outliers;
pub mod report;
pub mod utility;

pub use comparators::Comparator;
pub use dataset::{
    Attribute, AttributeKind, AttributeRole, Column, Dataset, MissingPolicy, Schema,
};
pub use linkage::{attack, AttackOptions, LinkageResult, QiConfig, QiRule};
pub use outliers::{detect_outliers, CombineRule, OutlierConfig, OutlierSet};
