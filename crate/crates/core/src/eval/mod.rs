//! Caption metrics, the keyword correctness oracle and experiment drivers.

mod coverage;
mod experiments;
pub mod metrics;
mod oracle;
mod report;
mod words;

pub use coverage::{coverage_curve, coverage_svg, CoveragePoint, DEFAULT_SAMPLES, DEFAULT_TOP_P};
pub use experiments::{
    composition_datasets, composition_eval, length_transfer_eval, transfer_dataset, TRANSFER_COUNT, TRANSFER_LEN,
};
pub use metrics::{bleu, cider, perplexity, rouge_l};
pub use oracle::{correctness, judge_greedy, oracle_parse};
pub use report::{evaluate, InstanceRecord, MetricReport, MetricSummary, CIDER_NOTE, STOCK_NOTE};
pub use words::{module_word_table, stopwords, ModuleWords, WordSource};
