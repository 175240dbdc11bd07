//! Prefix trees of the action paths that follow an anchor event.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::SignalConfig;
use crate::sessionize::EventWindow;

/// Root label used when windows start with different actions.
pub const MIXED_ROOT: &str = "*";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatternNode {
    pub action: String,
    pub depth: usize,
    pub count: u64,
    /// Share of all mined windows passing through this node.
    pub probability: f64,
    /// Share of the parent's windows that continue into this node.
    pub parent_share: f64,
    pub is_success: bool,
    /// Stands for a run of one or more identical consecutive actions.
    pub repeated: bool,
    /// Ordered by count descending, then action.
    pub children: Vec<PatternNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatternTree {
    pub root_action: String,
    pub total_windows: u64,
    pub collapsed: bool,
    pub root: PatternNode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternOptions {
    /// Non-success nodes at or below this share are pruned.
    pub node_threshold: f64,
    /// Success nodes at or below this share are pruned.
    pub success_threshold: f64,
    pub collapse: bool,
}

impl Default for PatternOptions {
    fn default() -> Self {
        PatternOptions {
            node_threshold: 0.02,
            success_threshold: 0.005,
            collapse: true,
        }
    }
}

/// Mutable counting trie used while mining.
#[derive(Debug, Default, Clone)]
struct Trie {
    count: u64,
    repeated: bool,
    children: BTreeMap<String, Trie>,
}

impl Trie {
    fn insert(&mut self, steps: &[(&str, bool)]) {
        self.count += 1;
        if let Some(((action, repeated), rest)) = steps.split_first() {
            let child = self.children.entry(action.to_string()).or_default();
            child.repeated |= repeated;
            child.insert(rest);
        }
    }

    fn merge(&mut self, other: Trie) {
        self.count += other.count;
        self.repeated |= other.repeated;
        for (action, child) in other.children {
            self.children.entry(action).or_default().merge(child);
        }
    }
}

/// Run-length encodes actions into (action, run longer than one).
fn run_lengths<'a>(actions: impl IntoIterator<Item = &'a str>) -> Vec<(&'a str, bool)> {
    let mut out: Vec<(&str, bool)> = Vec::new();
    for a in actions {
        match out.last_mut() {
            Some((last, rep)) if *last == a => *rep = true,
            _ => out.push((a, false)),
        }
    }
    out
}

fn to_node(
    action: String,
    trie: Trie,
    depth: usize,
    parent_count: u64,
    total: u64,
    config: &SignalConfig,
) -> PatternNode {
    let mut children: Vec<PatternNode> = trie
        .children
        .into_iter()
        .map(|(a, t)| to_node(a, t, depth + 1, trie.count, total, config))
        .collect();
    sort_children(&mut children);
    PatternNode {
        is_success: config.is_success(&action),
        depth,
        count: trie.count,
        probability: ratio(trie.count, total),
        parent_share: ratio(trie.count, parent_count),
        repeated: trie.repeated,
        action,
        children,
    }
}

fn ratio(count: u64, total: u64) -> f64 {
    if total == 0 {
        1.0
    } else {
        count as f64 / total as f64
    }
}

fn sort_children(children: &mut [PatternNode]) {
    children.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.action.cmp(&b.action)));
}

/// Builds the path tree of `windows`, rooted at their initiating action.
///
/// With `collapse`, runs of one action merge into a single repeated node.
/// Pruning drops a node with its whole subtree; the root is never pruned.
pub fn mine_patterns(
    windows: &[EventWindow<'_>],
    config: &SignalConfig,
    options: PatternOptions,
) -> PatternTree {
    let root_action = match windows.split_first() {
        None => config.service_action.clone(),
        Some((first, rest)) => {
            let a = &first.initial.action;
            if rest.iter().all(|w| &w.initial.action == a) {
                a.clone()
            } else {
                MIXED_ROOT.to_string()
            }
        }
    };
    let trie = windows
        .par_chunks(4096)
        .map(|chunk| {
            let mut trie = Trie::default();
            for w in chunk {
                let steps = if options.collapse {
                    run_lengths(w.iter().map(|e| e.action.as_str()))
                } else {
                    w.iter().map(|e| (e.action.as_str(), false)).collect()
                };
                // The first step is the root itself.
                let mut root = Trie::default();
                root.insert(&steps[1..]);
                root.repeated = steps[0].1;
                trie.merge(root);
            }
            trie
        })
        .reduce(Trie::default, |mut a, b| {
            a.merge(b);
            a
        });
    let total = trie.count;
    let root = to_node(root_action.clone(), trie, 0, total, total, config);
    let mut tree = PatternTree {
        root_action,
        total_windows: total,
        collapsed: options.collapse,
        root,
    };
    prune(&mut tree, options.node_threshold, options.success_threshold);
    tree
}

/// Removes nodes at or below the thresholds together with their subtrees.
pub fn prune(tree: &mut PatternTree, node_threshold: f64, success_threshold: f64) {
    fn walk(node: &mut PatternNode, node_threshold: f64, success_threshold: f64) {
        node.children.retain(|c| {
            let limit = if c.is_success {
                success_threshold
            } else {
                node_threshold
            };
            c.probability > limit
        });
        for c in &mut node.children {
            walk(c, node_threshold, success_threshold);
        }
    }
    walk(&mut tree.root, node_threshold, success_threshold);
}

/// Merges every child that repeats its parent's action into the parent.
/// Applying it twice gives the same tree as applying it once.
pub fn collapse_tree(tree: &PatternTree) -> PatternTree {
    fn fold_into(target: &mut Vec<PatternNode>, node: PatternNode) {
        match target.iter_mut().find(|c| c.action == node.action) {
            Some(existing) => {
                existing.count += node.count;
                existing.repeated |= node.repeated;
                for child in node.children {
                    fold_into(&mut existing.children, child);
                }
            }
            None => target.push(node),
        }
    }

    fn collapse(mut node: PatternNode) -> PatternNode {
        let mut children = Vec::new();
        let mut pending: Vec<PatternNode> = std::mem::take(&mut node.children);
        while let Some(child) = pending.pop() {
            if child.action == node.action {
                node.repeated = true;
                pending.extend(child.children);
            } else {
                fold_into(&mut children, child);
            }
        }
        node.children = children.into_iter().map(collapse).collect();
        node
    }

    fn annotate(node: &mut PatternNode, depth: usize, parent_count: u64, total: u64) {
        node.depth = depth;
        node.probability = ratio(node.count, total);
        node.parent_share = ratio(node.count, parent_count);
        sort_children(&mut node.children);
        let count = node.count;
        for c in &mut node.children {
            annotate(c, depth + 1, count, total);
        }
    }

    let mut root = collapse(tree.root.clone());
    let total = tree.total_windows;
    annotate(&mut root, 0, total, total);
    PatternTree {
        root_action: tree.root_action.clone(),
        total_windows: total,
        collapsed: true,
        root,
    }
}

fn label(node: &PatternNode) -> String {
    if node.repeated {
        format!("{}+", node.action)
    } else {
        node.action.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSummary {
    /// Labels joined by `>>`; repeated nodes end in `+`.
    pub path: String,
    pub count: u64,
    pub probability: f64,
}

/// Root-to-leaf paths, most frequent first, ties broken by path text.
pub fn top_paths(tree: &PatternTree, limit: usize) -> Vec<PathSummary> {
    fn walk(node: &PatternNode, prefix: &str, out: &mut Vec<PathSummary>) {
        let path = if prefix.is_empty() {
            label(node)
        } else {
            format!("{prefix}>>{}", label(node))
        };
        if node.children.is_empty() {
            out.push(PathSummary {
                path,
                count: node.count,
                probability: node.probability,
            });
        } else {
            for c in &node.children {
                walk(c, &path, out);
            }
        }
    }
    let mut out = Vec::new();
    walk(&tree.root, "", &mut out);
    out.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.path.cmp(&b.path)));
    out.truncate(limit);
    out
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// DOT digraph; success nodes are filled green, labels carry the share of
/// windows with three decimals.
pub fn export_dot(tree: &PatternTree) -> String {
    fn walk(node: &PatternNode, id: &mut usize, out: &mut String) -> usize {
        let me = *id;
        *id += 1;
        let style = if node.is_success {
            ", style=filled, fillcolor=green"
        } else {
            ""
        };
        let _ = writeln!(
            out,
            "  n{me} [label=\"{}\\n{:.3}\"{style}];",
            escape(&label(node)),
            node.probability
        );
        for c in &node.children {
            let child = walk(c, id, out);
            let _ = writeln!(out, "  n{me} -> n{child};");
        }
        me
    }
    let mut out = String::from("digraph patterns {\n  rankdir=LR;\n  node [shape=box];\n");
    walk(&tree.root, &mut 0, &mut out);
    out.push_str("}\n");
    out
}

pub const PATHS_CSV_HEADER: &str = "path,count,probability";

pub fn write_paths_csv<W: Write>(mut out: W, paths: &[PathSummary]) -> io::Result<()> {
    writeln!(out, "{PATHS_CSV_HEADER}")?;
    for p in paths {
        writeln!(out, "{},{},{:.6}", p.path, p.count, p.probability)?;
    }
    Ok(())
}
