use std::fmt::Write as _;

use super::PhyloTree;

/// Graphviz rendering for inspection tooling. Tombstoned nodes are drawn dashed.
pub fn to_dot(tree: &PhyloTree) -> String {
    let mut out = format!("digraph \"{}\" {{\n", tree.id);
    for id in tree.bfs() {
        let node = &tree.nodes[&id];
        let style = if node.status.is_pruned() {
            ", style=dashed"
        } else if node.status.is_failed() {
            ", color=red"
        } else {
            ""
        };
        let _ = writeln!(out, "  {id} [label=\"{id}\\nr={:.6}\"{style}];", node.reward);
    }
    for id in tree.bfs() {
        for child in tree.children_of(id) {
            let _ = writeln!(out, "  {id} -> {child};");
        }
    }
    out.push_str("}\n");
    out
}
