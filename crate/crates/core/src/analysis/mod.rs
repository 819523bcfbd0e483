//! Error-propagation analysis and experiment reporting.

mod report;
mod theory;

pub use report::{
    confusion, label_concentration, ratio_table_csv, ConfusionMatrix, EpochRecord, LabelConcentration,
    TrainReport,
};
pub use theory::{
    build_theorem1_network, contribution_ratios, lemma1_error, random_linear_fixture, theorem1_check, theorem1_ratio, InputActiveSets,
    LayerErrorProfile, Theorem1Row,
};
