//! Syntax match: fraction of the reference's internal subtrees that also occur
//! in the candidate, compared by S-expression.

use std::collections::HashSet;

use tree_sitter::{Node, Tree};

/// S-expressions of the root and every descendant that has children.
pub fn subtree_sexps(tree: &Tree) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack: Vec<Node> = vec![tree.root_node()];
    while let Some(node) = stack.pop() {
        out.push(node.to_sexp());
        let mut cursor = node.walk();
        for child in node.children(&mut cursor) {
            if child.child_count() != 0 {
                stack.push(child);
            }
        }
    }
    out
}

/// `matched / total` over reference subtrees. Candidate subtrees are not
/// consumed, so repeated reference subtrees can all match one candidate
/// occurrence.
pub fn syntax_match(candidate: &Tree, reference: &Tree) -> f64 {
    let cand: HashSet<String> = subtree_sexps(candidate).into_iter().collect();
    let refs = subtree_sexps(reference);
    let matched = refs.iter().filter(|s| cand.contains(*s)).count();
    matched as f64 / refs.len() as f64
}
