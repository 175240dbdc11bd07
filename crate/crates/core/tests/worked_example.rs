mod common;

use std::collections::BTreeSet;

use iirlog::patterns::{mine_patterns, top_paths, PatternNode, PatternOptions};
use iirlog::sessionize::{baseline_windows, service_windows, split_processes};
use iirlog::usefulness::{
    global_usefulness, local_usefulness, negative_adjusted_usefulness, success_indicator,
    usefulness_curve, CurveOptions,
};

use common::worked_example;

#[test]
fn local_usefulness_is_one_half() {
    let (log, config) = worked_example();
    let processes: Vec<_> = log
        .sessions()
        .flat_map(|s| split_processes(s.events, &config))
        .collect();
    assert_eq!(processes.len(), 6);
    let local = local_usefulness(&processes, &config).unwrap();
    assert_eq!((local.processes_with_usage, local.total_processes), (3, 6));
    assert_eq!(local.local(), 0.5);
}

#[test]
fn success_indicator_per_row() {
    let (log, config) = worked_example();
    let row = |sid: &str| service_windows(log.session(sid).unwrap().events, &config, 5);
    assert!(success_indicator(&row("p1")[0], &config.success_actions));
    assert!(!success_indicator(&row("p2")[0], &config.success_actions));
    assert!(success_indicator(&row("p5")[0], &config.success_actions));
}

#[test]
fn global_usefulness_at_five() {
    let (log, config) = worked_example();
    let service: Vec<_> = log.sessions().flat_map(|s| service_windows(s.events, &config, 5)).collect();
    let baseline: Vec<_> = log.sessions().flat_map(|s| baseline_windows(s.events, &config, 5)).collect();
    let with = global_usefulness(&service, &config.success_actions).unwrap();
    let without = global_usefulness(&baseline, &config.success_actions).unwrap();
    assert_eq!((with.successes, with.total), (2, 3));
    assert_eq!((without.successes, without.total), (1, 3));
    assert_eq!(with.ratio(), Some(2.0 / 3.0));
    assert_eq!(without.ratio(), Some(1.0 / 3.0));

    let curve = usefulness_curve(&log, &config, CurveOptions { n_max: 5, ..Default::default() }).unwrap();
    let last = curve.last().unwrap();
    assert_eq!(last.n, 5);
    assert_eq!(last.with_service, with);
    assert_eq!(last.without_service, without);
}

#[test]
fn logout_as_negative_signal() {
    let (log, config) = worked_example();
    let logout: BTreeSet<String> = ["logout".to_string()].into();
    let adjusted = negative_adjusted_usefulness(&log, &config, &logout, 5).unwrap();
    assert!((adjusted - 1.0 / 3.0).abs() < 1e-15);
    let plain = negative_adjusted_usefulness(&log, &config, &BTreeSet::new(), 5).unwrap();
    assert_eq!(plain, 2.0 / 3.0);
}

fn child<'a>(node: &'a PatternNode, action: &str) -> &'a PatternNode {
    node.children
        .iter()
        .find(|c| c.action == action)
        .unwrap_or_else(|| panic!("{action} under {}", node.action))
}

#[test]
fn service_path_tree() {
    let (log, config) = worked_example();
    let windows: Vec<_> = log.sessions().flat_map(|s| service_windows(s.events, &config, 7)).collect();
    let opts = PatternOptions {
        node_threshold: 0.0,
        success_threshold: 0.0,
        collapse: true,
    };
    let tree = mine_patterns(&windows, &config, opts);
    assert_eq!(tree.root_action, "select_term_from_recommender");
    assert_eq!(tree.total_windows, 3);
    let search = child(&tree.root, "search");
    assert_eq!(search.count, 3);
    let views = child(search, "view_record");
    assert!(views.repeated);
    assert_eq!(views.count, 3);
    for success in ["export_record", "bookmark_record"] {
        let node = child(views, success);
        assert!(node.is_success);
        assert_eq!(node.count, 1);
    }
    let top = &top_paths(&tree, 1)[0];
    assert!(top.path.contains(">>search>>view_record"), "{}", top.path);
}
