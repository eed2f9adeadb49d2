#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use hear_core::suite::{Dataset, Models, SuiteConfig};
use hear_service::session::Study;

/// A small trained study shared by every test in the binary.
pub fn study() -> Arc<Study> {
    static STUDY: OnceLock<Arc<Study>> = OnceLock::new();
    STUDY
        .get_or_init(|| {
            let cfg = SuiteConfig {
                seed: 11,
                environments: 6,
                routes_per_env: 12,
                split: (36, 18, 18),
                detection_pairs: 300,
                type_pairs: 200,
                one_stage_pairs: 300,
                eval_examples: 30,
                nav_episodes: 12,
                ..SuiteConfig::default()
            };
            let ds = Dataset::generate(&cfg).unwrap();
            let models = Models::train(&ds, &cfg).unwrap();
            let mut study = Study::new(ds, models, cfg);
            study.tasks_per_session = 4;
            Arc::new(study)
        })
        .clone()
}

/// Node ids along the intended route of a task, start first.
pub fn route_nodes(study: &Study, route_id: &str) -> Vec<String> {
    let route = &study.ds.entry(route_id).unwrap().route;
    route.node_ids().into_iter().map(String::from).collect()
}
