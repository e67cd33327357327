//! Canonical S-expression form of a lineage tree.
//!
//! ```text
//! (node :id n0 :r 1.000000 :dr 0.000000 :mod "seed" :status success
//!   (node :id n1 :r 1.500000 :dr 0.500000 :mod "unroll loop" :status success))
//! ```
//!
//! Rewards use fixed six-decimal formatting so that printing a parsed tree
//! reproduces the input byte for byte. Failed and pruned nodes carry a
//! `:reason` string; informative failures kept by pruning carry `:retained true`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::{AlgorithmNode, Forest, NodeId, NodeStatus, PhyloTree, TreeId, TreeMeta, TreeOrigin};
use crate::elite_pool::modification_key;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("s-expression parse error at offset {offset}: {message}")]
pub struct SexprError {
    pub offset: usize,
    pub message: String,
}

impl SexprError {
    fn new(offset: usize, message: impl Into<String>) -> Self {
        Self { offset, message: message.into() }
    }
}

pub fn to_sexpr(tree: &PhyloTree, include_pruned: bool) -> String {
    let mut out = String::new();
    write_node(tree, tree.root_id, 0, include_pruned, &mut out);
    out
}

/// Every tree of the forest in id order, each preceded by a `;;` comment line
/// naming it. Parseable tree by tree.
pub fn forest_sexpr(forest: &Forest, include_pruned: bool) -> String {
    let mut out = String::new();
    for tree in forest.trees.values() {
        let _ = writeln!(out, ";; tree {} {}", tree.id, quote(&tree.meta.label));
        out.push_str(&to_sexpr(tree, include_pruned));
        out.push_str("\n\n");
    }
    out
}

fn write_node(tree: &PhyloTree, id: NodeId, indent: usize, include_pruned: bool, out: &mut String) {
    let node = &tree.nodes[&id];
    let _ = write!(
        out,
        "(node :id {} :r {:.6} :dr {:.6} :mod {}",
        node.id,
        node.reward,
        node.delta_reward,
        quote(&node.modification_summary)
    );
    match &node.status {
        NodeStatus::Success => out.push_str(" :status success"),
        NodeStatus::Failed { reason } => {
            let _ = write!(out, " :status failed :reason {}", quote(reason));
        }
        NodeStatus::Pruned { reason } => {
            let _ = write!(out, " :status pruned :reason {}", quote(reason));
        }
    }
    if node.retained {
        out.push_str(" :retained true");
    }
    for &child in tree.children_of(id) {
        if !include_pruned && tree.nodes[&child].status.is_pruned() {
            continue;
        }
        out.push('\n');
        out.push_str(&"  ".repeat(indent + 1));
        write_node(tree, child, indent + 1, include_pruned, out);
    }
    out.push(')');
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Open,
    Close,
    Atom(String),
    Str(String),
}

fn tokenize(text: &str) -> Result<Vec<(usize, Token)>, SexprError> {
    let mut tokens = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(pos, c)) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            ';' => {
                while chars.next_if(|&(_, c)| c != '\n').is_some() {}
            }
            '(' => {
                chars.next();
                tokens.push((pos, Token::Open));
            }
            ')' => {
                chars.next();
                tokens.push((pos, Token::Close));
            }
            '"' => {
                chars.next();
                let mut s = String::new();
                loop {
                    match chars.next() {
                        None => return Err(SexprError::new(pos, "unterminated string")),
                        Some((_, '"')) => break,
                        Some((esc_pos, '\\')) => match chars.next() {
                            Some((_, '"')) => s.push('"'),
                            Some((_, '\\')) => s.push('\\'),
                            Some((_, 'n')) => s.push('\n'),
                            Some((_, 'r')) => s.push('\r'),
                            Some((_, 't')) => s.push('\t'),
                            _ => return Err(SexprError::new(esc_pos, "invalid escape")),
                        },
                        Some((_, c)) => s.push(c),
                    }
                }
                tokens.push((pos, Token::Str(s)));
            }
            _ => {
                let mut atom = String::new();
                while let Some(&(_, c)) = chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == '"' || c == ';' {
                        break;
                    }
                    atom.push(c);
                    chars.next();
                }
                tokens.push((pos, Token::Atom(atom)));
            }
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    cursor: usize,
    end: usize,
    nodes: BTreeMap<NodeId, AlgorithmNode>,
    children: BTreeMap<NodeId, Vec<NodeId>>,
}

impl Parser {
    fn peek(&self) -> Option<&(usize, Token)> {
        self.tokens.get(self.cursor)
    }

    fn next(&mut self) -> Option<(usize, Token)> {
        let t = self.tokens.get(self.cursor).cloned();
        self.cursor += 1;
        t
    }

    fn here(&self) -> usize {
        self.peek().map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn node(&mut self, parent: Option<(NodeId, u32)>) -> Result<NodeId, SexprError> {
        let start = match self.next() {
            Some((p, Token::Open)) => p,
            Some((p, _)) => return Err(SexprError::new(p, "expected '('")),
            None => return Err(SexprError::new(self.end, "expected '('")),
        };
        match self.next() {
            Some((_, Token::Atom(a))) if a == "node" => {}
            Some((p, _)) => return Err(SexprError::new(p, "expected 'node'")),
            None => return Err(SexprError::new(start, "unterminated expression")),
        }

        let mut id = None;
        let mut reward = None;
        let mut delta = None;
        let mut summary = None;
        let mut status = None;
        let mut reason = None;
        let mut retained = false;

        loop {
            let Some((pos, tok)) = self.peek().cloned() else {
                return Err(SexprError::new(start, "unterminated expression"));
            };
            match tok {
                Token::Close | Token::Open => break,
                Token::Str(_) => return Err(SexprError::new(pos, "expected keyword")),
                Token::Atom(key) => {
                    self.cursor += 1;
                    let (vpos, value) = self
                        .next()
                        .ok_or_else(|| SexprError::new(start, "unterminated expression"))?;
                    match (key.as_str(), value) {
                        (":id", Token::Atom(v)) => {
                            id = Some(v.parse::<NodeId>().map_err(|e| SexprError::new(vpos, e))?)
                        }
                        (":r", Token::Atom(v)) => reward = Some(number(vpos, &v)?),
                        (":dr", Token::Atom(v)) => delta = Some(number(vpos, &v)?),
                        (":mod", Token::Str(v)) => summary = Some(v),
                        (":reason", Token::Str(v)) => reason = Some(v),
                        (":status", Token::Atom(v)) => status = Some((vpos, v)),
                        (":retained", Token::Atom(v)) => {
                            retained = match v.as_str() {
                                "true" => true,
                                "false" => false,
                                _ => return Err(SexprError::new(vpos, "expected true or false")),
                            }
                        }
                        (":id" | ":r" | ":dr" | ":status" | ":retained", _) => {
                            return Err(SexprError::new(vpos, format!("expected atom value for {key}")))
                        }
                        (":mod" | ":reason", _) => {
                            return Err(SexprError::new(vpos, format!("expected string value for {key}")))
                        }
                        _ => return Err(SexprError::new(pos, format!("unknown keyword {key:?}"))),
                    }
                }
            }
        }

        let missing = |field: &str| SexprError::new(start, format!("missing field {field}"));
        let id = id.ok_or_else(|| missing(":id"))?;
        let reward = reward.ok_or_else(|| missing(":r"))?;
        let delta_reward = delta.ok_or_else(|| missing(":dr"))?;
        let summary = summary.ok_or_else(|| missing(":mod"))?;
        let (status_pos, status) = status.ok_or_else(|| missing(":status"))?;
        let status = match (status.as_str(), reason) {
            ("success", None) => NodeStatus::Success,
            ("failed", Some(reason)) => NodeStatus::Failed { reason },
            ("pruned", Some(reason)) => NodeStatus::Pruned { reason },
            ("failed" | "pruned", None) => return Err(missing(":reason")),
            ("success", Some(_)) => return Err(SexprError::new(status_pos, "success nodes carry no :reason")),
            _ => return Err(SexprError::new(status_pos, format!("unknown status {status:?}"))),
        };
        if self.nodes.contains_key(&id) {
            return Err(SexprError::new(start, format!("duplicate id {id}")));
        }
        let depth = parent.map(|(_, d)| d + 1).unwrap_or(0);
        self.nodes.insert(
            id,
            AlgorithmNode {
                id,
                parent_id: parent.map(|(p, _)| p),
                code: String::new(),
                modification_key: modification_key(&summary),
                modification_summary: summary,
                detailed_spec: String::new(),
                reward,
                delta_reward,
                metrics: BTreeMap::new(),
                status,
                depth,
                constraint_ok: true,
                created_at: 0,
                retained,
                pruned_at: None,
            },
        );

        loop {
            match self.peek() {
                Some((_, Token::Open)) => {
                    let child = self.node(Some((id, depth)))?;
                    self.children.entry(id).or_default().push(child);
                }
                Some((_, Token::Close)) => {
                    self.cursor += 1;
                    return Ok(id);
                }
                Some(&(p, _)) => return Err(SexprError::new(p, "expected child or ')'")),
                None => return Err(SexprError::new(start, "unterminated expression")),
            }
        }
    }
}

fn number(pos: usize, text: &str) -> Result<f64, SexprError> {
    let bad = || SexprError::new(pos, format!("invalid number {text:?}"));
    if !text.bytes().all(|b| b.is_ascii_digit() || b == b'.' || b == b'-') {
        return Err(bad());
    }
    text.parse::<f64>().map_err(|_| bad())
}

/// Parses the canonical form back into a tree. Fields the text does not carry
/// (code, metrics, creation epoch) come back empty.
pub fn parse_sexpr(text: &str) -> Result<PhyloTree, SexprError> {
    let tokens = tokenize(text)?;
    let mut parser = Parser {
        tokens,
        cursor: 0,
        end: text.len(),
        nodes: BTreeMap::new(),
        children: BTreeMap::new(),
    };
    if parser.peek().is_none() {
        return Err(SexprError::new(0, "empty input"));
    }
    let root_id = parser.node(None)?;
    if parser.peek().is_some() {
        return Err(SexprError::new(parser.here(), "trailing input after root expression"));
    }
    Ok(PhyloTree {
        id: TreeId(0),
        root_id,
        nodes: parser.nodes,
        children: parser.children,
        meta: TreeMeta {
            label: "parsed".to_string(),
            created_epoch: 0,
            origin: TreeOrigin::Seed,
        },
    })
}
