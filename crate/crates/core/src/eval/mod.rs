//! Metrics, baselines, the simulated follower and the experiment runner.

pub mod follower;
pub mod metrics;

pub use follower::{simulate_follower, FollowerMode, FollowerPolicy};
pub use metrics::{
    detection_report, is_success, macro_f1, nav_report, navigation_error, random_detection_baseline,
    random_suggestion_baseline, recall_at_k, success_rate, DetectionReport, Episode, NavReport, NavRow, RankedExample,
    SuggestionReport, SUCCESS_RADIUS_M,
};
