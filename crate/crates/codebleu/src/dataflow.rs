//! Data-flow match over Python def-use edges.
//!
//! Edges are extracted from the tree-sitter parse the same way the reference
//! CodeBLEU scorer does it: every leaf token gets an index, assignments
//! produce `computedFrom` edges, and reads of a previously bound name produce
//! `comesFrom` edges to the binding sites live at that point. Attribute and
//! subscript aliasing is not modelled.

use std::collections::{HashMap, HashSet};

use tree_sitter::{Node, Point, Tree};

type Span = (Point, Point);
type States = HashMap<String, Vec<usize>>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub name: String,
    pub index: usize,
    pub relation: &'static str,
    pub parents: Vec<String>,
    pub parent_indices: Vec<usize>,
}

/// A structural assumption failed (missing field); the whole graph is dropped.
#[derive(Debug)]
struct Malformed;

fn is_token_node(node: &Node) -> bool {
    (node.child_count() == 0 || matches!(node.kind(), "string_literal" | "string" | "character_literal"))
        && node.kind() != "comment"
}

fn span(node: &Node) -> Span {
    (node.start_position(), node.end_position())
}

fn children<'t>(node: &Node<'t>) -> Vec<Node<'t>> {
    let mut cursor = node.walk();
    node.children(&mut cursor).collect()
}

fn token_spans(node: Node, out: &mut Vec<Span>) {
    if is_token_node(&node) {
        out.push(span(&node));
    } else {
        for child in children(&node) {
            token_spans(child, out);
        }
    }
}

fn token_text(sp: &Span, lines: &[&str]) -> String {
    let (start, end) = sp;
    let slice = |line: &str, from: usize, to: Option<usize>| -> String {
        let bytes = line.as_bytes();
        let from = from.min(bytes.len());
        let to = to.map_or(bytes.len(), |t| t.min(bytes.len())).max(from);
        String::from_utf8_lossy(&bytes[from..to]).into_owned()
    };
    let line = |row: usize| lines.get(row).copied().unwrap_or("");
    if start.row == end.row {
        slice(line(start.row), start.column, Some(end.column))
    } else {
        let mut s = slice(line(start.row), start.column, None);
        for row in start.row + 1..end.row {
            s.push_str(line(row));
        }
        s.push_str(&slice(line(end.row), 0, Some(end.column)));
        s
    }
}

struct Ctx {
    index_to_code: HashMap<Span, (usize, String)>,
}

impl Ctx {
    fn lookup(&self, sp: &Span) -> Result<&(usize, String), Malformed> {
        self.index_to_code.get(sp).ok_or(Malformed)
    }

    fn variable_spans(&self, node: Node, out: &mut Vec<Span>) -> Result<(), Malformed> {
        if is_token_node(&node) {
            let sp = span(&node);
            let (_, code) = self.lookup(&sp)?;
            if node.kind() != code {
                out.push(sp);
            }
        } else {
            for child in children(&node) {
                self.variable_spans(child, out)?;
            }
        }
        Ok(())
    }

    fn vars(&self, node: Node) -> Result<Vec<Span>, Malformed> {
        let mut out = Vec::new();
        self.variable_spans(node, &mut out)?;
        Ok(out)
    }
}

fn dedup_in_order<T: Clone + Eq + std::hash::Hash>(items: impl IntoIterator<Item = T>) -> Vec<T> {
    let mut seen = HashSet::new();
    items.into_iter().filter(|x| seen.insert(x.clone())).collect()
}

fn sort_by_index(edges: &mut [Edge]) {
    edges.sort_by_key(|e| e.index);
}

type EdgeKey = (String, usize, &'static str);

/// Merges edges sharing (name, index, relation), keeping first-seen order of
/// keys before the final stable sort by index.
fn merge_loop_edges(edges: Vec<Edge>) -> Vec<Edge> {
    let mut order: Vec<EdgeKey> = Vec::new();
    let mut merged: HashMap<EdgeKey, (Vec<String>, Vec<usize>)> = HashMap::new();
    for e in edges {
        let key = (e.name.clone(), e.index, e.relation);
        match merged.get_mut(&key) {
            None => {
                order.push(key.clone());
                merged.insert(key, (e.parents, e.parent_indices));
            }
            Some((names, idxs)) => {
                *names = dedup_in_order(names.iter().cloned().chain(e.parents));
                let mut all: Vec<usize> = idxs.iter().copied().chain(e.parent_indices).collect();
                all.sort_unstable();
                all.dedup();
                *idxs = all;
            }
        }
    }
    let mut out: Vec<Edge> = order
        .into_iter()
        .map(|key| {
            let (parents, parent_indices) = merged.remove(&key).unwrap_or_default();
            Edge {
                name: key.0,
                index: key.1,
                relation: key.2,
                parents,
                parent_indices,
            }
        })
        .collect();
    sort_by_index(&mut out);
    out
}

fn split_pairs<'t>(left: Node<'t>, right: Node<'t>) -> (Vec<Node<'t>>, Vec<Node<'t>>) {
    let mut lefts: Vec<Node> = children(&left).into_iter().filter(|n| n.kind() != ",").collect();
    let mut rights: Vec<Node> = children(&right).into_iter().filter(|n| n.kind() != ",").collect();
    if rights.len() != lefts.len() {
        lefts = vec![left];
        rights = vec![right];
    }
    if lefts.is_empty() {
        lefts = vec![left];
    }
    if rights.is_empty() {
        rights = vec![right];
    }
    (lefts, rights)
}

fn computed_from(
    ctx: &Ctx,
    lefts: &[Node],
    rights: &[Node],
    states: &mut States,
    out: &mut Vec<Edge>,
) -> Result<(), Malformed> {
    for (l, r) in lefts.iter().zip(rights.iter()) {
        let left_vars = ctx.vars(*l)?;
        let right_vars = ctx.vars(*r)?;
        let mut parents = Vec::with_capacity(right_vars.len());
        let mut parent_indices = Vec::with_capacity(right_vars.len());
        for sp in &right_vars {
            let (idx, code) = ctx.lookup(sp)?;
            parents.push(code.clone());
            parent_indices.push(*idx);
        }
        for sp in &left_vars {
            let (idx, code) = ctx.lookup(sp)?;
            out.push(Edge {
                name: code.clone(),
                index: *idx,
                relation: "computedFrom",
                parents: parents.clone(),
                parent_indices: parent_indices.clone(),
            });
            states.insert(code.clone(), vec![*idx]);
        }
    }
    Ok(())
}

fn dfg(node: Node, ctx: &Ctx, states: &States) -> Result<(Vec<Edge>, States), Malformed> {
    let mut states = states.clone();
    let kind = node.kind();

    if is_token_node(&node) {
        let (idx, code) = ctx.lookup(&span(&node))?;
        if kind == code {
            return Ok((Vec::new(), states));
        }
        if let Some(live) = states.get(code) {
            let edge = Edge {
                name: code.clone(),
                index: *idx,
                relation: "comesFrom",
                parents: vec![code.clone()],
                parent_indices: live.clone(),
            };
            return Ok((vec![edge], states));
        }
        if kind == "identifier" {
            states.insert(code.clone(), vec![*idx]);
        }
        let edge = Edge {
            name: code.clone(),
            index: *idx,
            relation: "comesFrom",
            parents: Vec::new(),
            parent_indices: Vec::new(),
        };
        return Ok((vec![edge], states));
    }

    match kind {
        "default_parameter" => {
            let name = node.child_by_field_name("name").ok_or(Malformed)?;
            let mut out = Vec::new();
            match node.child_by_field_name("value") {
                None => {
                    for sp in ctx.vars(name)? {
                        let (idx, code) = ctx.lookup(&sp)?;
                        out.push(Edge {
                            name: code.clone(),
                            index: *idx,
                            relation: "comesFrom",
                            parents: Vec::new(),
                            parent_indices: Vec::new(),
                        });
                        states.insert(code.clone(), vec![*idx]);
                    }
                }
                Some(value) => {
                    let name_vars = ctx.vars(name)?;
                    let value_vars = ctx.vars(value)?;
                    let (inner, next) = dfg(value, ctx, &states)?;
                    states = next;
                    out.extend(inner);
                    for sp1 in &name_vars {
                        let (idx1, code1) = ctx.lookup(sp1)?;
                        for sp2 in &value_vars {
                            let (idx2, code2) = ctx.lookup(sp2)?;
                            out.push(Edge {
                                name: code1.clone(),
                                index: *idx1,
                                relation: "comesFrom",
                                parents: vec![code2.clone()],
                                parent_indices: vec![*idx2],
                            });
                        }
                        states.insert(code1.clone(), vec![*idx1]);
                    }
                }
            }
            sort_by_index(&mut out);
            Ok((out, states))
        }
        "assignment" | "augmented_assignment" | "for_in_clause" => {
            let (lefts, rights) = if kind == "for_in_clause" {
                let last = children(&node).pop().ok_or(Malformed)?;
                let left = node.child_by_field_name("left").ok_or(Malformed)?;
                (vec![left], vec![last])
            } else {
                let Some(right) = node.child_by_field_name("right") else {
                    return Ok((Vec::new(), states));
                };
                let left = node.child_by_field_name("left").ok_or(Malformed)?;
                split_pairs(left, right)
            };
            let mut out = Vec::new();
            for r in &rights {
                let (inner, next) = dfg(*r, ctx, &states)?;
                states = next;
                out.extend(inner);
            }
            computed_from(ctx, &lefts, &rights, &mut states, &mut out)?;
            sort_by_index(&mut out);
            Ok((out, states))
        }
        "if_statement" => {
            let mut out = Vec::new();
            let mut current = states.clone();
            let mut branches: Vec<States> = Vec::new();
            let mut has_else = false;
            for child in children(&node) {
                if child.kind().contains("else") {
                    has_else = true;
                }
                if !matches!(child.kind(), "elif_clause" | "else_clause") {
                    let (inner, next) = dfg(child, ctx, &current)?;
                    current = next;
                    out.extend(inner);
                } else {
                    let (inner, next) = dfg(child, ctx, &states)?;
                    out.extend(inner);
                    branches.push(next);
                }
            }
            branches.push(current);
            if !has_else {
                branches.push(states.clone());
            }
            let mut merged: States = HashMap::new();
            for branch in branches {
                for (k, v) in branch {
                    merged.entry(k).or_default().extend(v);
                }
            }
            for v in merged.values_mut() {
                v.sort_unstable();
                v.dedup();
            }
            sort_by_index(&mut out);
            Ok((out, merged))
        }
        "for_statement" => {
            let mut out = Vec::new();
            for _ in 0..2 {
                let right = node.child_by_field_name("right").ok_or(Malformed)?;
                let left = node.child_by_field_name("left").ok_or(Malformed)?;
                let (lefts, rights) = split_pairs(left, right);
                for r in &rights {
                    let (inner, next) = dfg(*r, ctx, &states)?;
                    states = next;
                    out.extend(inner);
                }
                computed_from(ctx, &lefts, &rights, &mut states, &mut out)?;
                if let Some(last) = children(&node).pop() {
                    if last.kind() == "block" {
                        let (inner, next) = dfg(last, ctx, &states)?;
                        states = next;
                        out.extend(inner);
                    }
                }
            }
            Ok((merge_loop_edges(out), states))
        }
        "while_statement" => {
            let mut out = Vec::new();
            for _ in 0..2 {
                for child in children(&node) {
                    let (inner, next) = dfg(child, ctx, &states)?;
                    states = next;
                    out.extend(inner);
                }
            }
            Ok((merge_loop_edges(out), states))
        }
        _ => {
            let mut out = Vec::new();
            let kids = children(&node);
            for child in kids.iter().filter(|c| c.kind() == "for_in_clause") {
                let (inner, next) = dfg(*child, ctx, &states)?;
                states = next;
                out.extend(inner);
            }
            for child in kids.iter().filter(|c| c.kind() != "for_in_clause") {
                let (inner, next) = dfg(*child, ctx, &states)?;
                states = next;
                out.extend(inner);
            }
            sort_by_index(&mut out);
            Ok((out, states))
        }
    }
}

/// Extracts the def-use graph of `code` (already parsed into `tree`),
/// keeping only edges that take part in some dependency and merging edges
/// that share a token index.
pub fn data_flow(code: &str, tree: &Tree) -> Vec<Edge> {
    let mut spans = Vec::new();
    token_spans(tree.root_node(), &mut spans);
    let lines: Vec<&str> = code.split('\n').collect();
    let mut index_to_code = HashMap::new();
    for (idx, sp) in spans.iter().enumerate() {
        index_to_code.insert(*sp, (idx, token_text(sp, &lines)));
    }
    let ctx = Ctx { index_to_code };
    let mut edges = match dfg(tree.root_node(), &ctx, &HashMap::new()) {
        Ok((edges, _)) => edges,
        Err(Malformed) => Vec::new(),
    };
    sort_by_index(&mut edges);

    let mut live: HashSet<usize> = HashSet::new();
    for e in &edges {
        if !e.parent_indices.is_empty() {
            live.insert(e.index);
        }
        live.extend(e.parent_indices.iter().copied());
    }
    let edges: Vec<Edge> = edges.into_iter().filter(|e| live.contains(&e.index)).collect();

    let mut order: Vec<usize> = Vec::new();
    let mut by_index: HashMap<usize, Edge> = HashMap::new();
    for e in edges {
        match by_index.get_mut(&e.index) {
            None => {
                order.push(e.index);
                by_index.insert(e.index, e);
            }
            Some(prev) => {
                let parents = dedup_in_order(prev.parents.iter().cloned().chain(e.parents));
                let parent_indices =
                    dedup_in_order(prev.parent_indices.iter().copied().chain(e.parent_indices));
                *prev = Edge {
                    name: e.name,
                    index: e.index,
                    relation: e.relation,
                    parents,
                    parent_indices,
                };
            }
        }
    }
    order
        .into_iter()
        .filter_map(|i| by_index.remove(&i))
        .collect()
}

/// (variable, relation, parents) with names replaced by first-seen ordinals.
pub type NormalizedEdge = (String, &'static str, Vec<String>);

pub fn normalize(edges: &[Edge]) -> Vec<NormalizedEdge> {
    let mut names: HashMap<String, String> = HashMap::new();
    let mut intern = |name: &str| -> String {
        let next = names.len();
        names
            .entry(name.to_string())
            .or_insert_with(|| format!("var_{next}"))
            .clone()
    };
    edges
        .iter()
        .map(|e| {
            let parents: Vec<String> = e.parents.iter().map(|p| intern(p)).collect();
            (intern(&e.name), e.relation, parents)
        })
        .collect()
}

/// Returns `(matched, total)` reference edges. Matched candidate edges are
/// consumed.
pub fn dataflow_counts(candidate: &[Edge], reference: &[Edge]) -> (usize, usize) {
    let mut cand = normalize(candidate);
    let refs = normalize(reference);
    let mut matched = 0;
    for r in &refs {
        if let Some(pos) = cand.iter().position(|c| c == r) {
            cand.remove(pos);
            matched += 1;
        }
    }
    (matched, refs.len())
}
