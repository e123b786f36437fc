//! Classification metrics, adversarial fidelity and efficiency measurements.

mod adversarial;
mod confusion_png;
mod metrics;
mod timing;

pub use adversarial::{
    fgsm, fidelity_score, fidelity_table_csv, input_gradient, perturbation_mask, quantile, FidelityConfig,
    FidelityMethod, FidelityResult, FidelitySample,
};
pub use confusion_png::{render_confusion, CELL};
pub use metrics::{
    classification_metrics, decision_curve, decision_curve_csv, metrics_from_probabilities, net_benefit_curve,
    predict_probabilities, roc_auc, DecisionPoint, MetricsReport,
};
pub use timing::{
    efficiency_csv, efficiency_report, flops_csv, measure_met, EfficiencyConfig, EfficiencyRow, TimingReport,
    EFFICIENCY_METHODS,
};
