//! Fine-tuning, class rebalancing, metrics and the experiment grid.

mod adasyn;
mod dataset;
mod finetune;
mod grid;
mod metrics;

pub use adasyn::{adasyn_budget, adasyn_oversample, adasyn_weights, apportion, balance, AdasynConfig, Synthetic};
pub use dataset::{
    build_dataset, decode_psds, encode_psds, preprocess_dataset, read_dataset, read_dataset_csv, read_psds, read_reference_csv,
    validate_fraction, write_dataset, write_dataset_csv, write_psds, write_reference_csv, AccessAudit, AccessCounts,
    LabelSource, LabeledRows, Purpose, PulseDataset, PulseRecord, Split, FRACTIONS, TRAIN_SHARE,
};
pub use finetune::{evaluate, finetune, load_classifier, predict, FinetuneConfig, FinetuneOutput, EVAL_CHUNK};
pub use grid::{
    parse_results_csv, read_results_csv, results_csv, run_grid, summarize, summary_csv, write_results_csv, Arm,
    GridConfig, GridOutput, PretrainLog, ResultEntry, ResultRow, SummaryRow, RESULTS_HEADER, SUMMARY_HEADER,
};
pub use metrics::{median, MetricsReport};
