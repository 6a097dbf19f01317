use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::SearchError;

/// One reasoning state. The root holds no text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub state_text: String,
    #[serde(rename = "V")]
    pub value: f64,
    #[serde(rename = "N")]
    pub visits: u64,
    pub expander_id: String,
    /// Every expander that proposed this exact text.
    #[serde(default)]
    pub expanders: Vec<String>,
    /// Simulation reward recorded when the node was accepted.
    #[serde(default)]
    pub reward: Option<f64>,
    pub terminal: bool,
    #[serde(default)]
    pub dead_end: bool,
    #[serde(skip)]
    pub children: Vec<usize>,
    #[serde(skip)]
    pub depth: usize,
}

/// Arena of nodes; ids are indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchTree {
    nodes: Vec<SearchNode>,
}

pub const ROOT: usize = 0;

impl SearchTree {
    pub fn new() -> Self {
        SearchTree {
            nodes: alloc::vec![SearchNode {
                id: ROOT,
                parent: None,
                state_text: String::new(),
                value: 0.0,
                visits: 0,
                expander_id: String::from("root"),
                expanders: Vec::new(),
                reward: None,
                terminal: false,
                dead_end: false,
                children: Vec::new(),
                depth: 0,
            }],
        }
    }

    /// Rebuilds a tree from dumped nodes. Ids must be `0..n` in order and
    /// every parent must precede its children.
    pub fn from_nodes(nodes: Vec<SearchNode>) -> Result<Self, SearchError> {
        let mut out: Vec<SearchNode> = Vec::with_capacity(nodes.len());
        for (i, mut node) in nodes.into_iter().enumerate() {
            if node.id != i {
                return Err(SearchError::Precondition(alloc::format!(
                    "node id {} at position {i}",
                    node.id
                )));
            }
            node.children.clear();
            match node.parent {
                None if i == ROOT => node.depth = 0,
                Some(p) if p < i => {
                    node.depth = out[p].depth + 1;
                    out[p].children.push(i);
                }
                _ => {
                    return Err(SearchError::Precondition(alloc::format!(
                        "node {i} has an invalid parent"
                    )));
                }
            }
            out.push(node);
        }
        if out.is_empty() {
            return Err(SearchError::Precondition("empty tree".into()));
        }
        Ok(SearchTree { nodes: out })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[SearchNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &SearchNode {
        &self.nodes[id]
    }

    pub fn node_mut(&mut self, id: usize) -> &mut SearchNode {
        &mut self.nodes[id]
    }

    /// Attaches an accepted child with `N = 1` and `V = reward`.
    pub fn attach(
        &mut self,
        parent: usize,
        state_text: String,
        expanders: Vec<String>,
        reward: f64,
        terminal: bool,
    ) -> usize {
        let id = self.nodes.len();
        let depth = self.nodes[parent].depth + 1;
        self.nodes.push(SearchNode {
            id,
            parent: Some(parent),
            state_text,
            value: reward,
            visits: 1,
            expander_id: expanders.first().cloned().unwrap_or_default(),
            expanders,
            reward: Some(reward),
            terminal,
            dead_end: false,
            children: Vec::new(),
            depth,
        });
        self.nodes[parent].children.push(id);
        id
    }

    /// Node ids from the root down to `id`.
    pub fn path(&self, id: usize) -> Vec<usize> {
        let mut path = Vec::new();
        let mut cur = Some(id);
        while let Some(c) = cur {
            path.push(c);
            cur = self.nodes[c].parent;
        }
        path.reverse();
        path
    }

    /// State texts from the first step below the root down to `id`.
    pub fn ancestor_texts(&self, id: usize) -> Vec<&str> {
        self.path(id)
            .into_iter()
            .skip(1)
            .map(|i| self.nodes[i].state_text.as_str())
            .collect()
    }
}

impl Default for SearchTree {
    fn default() -> Self {
        Self::new()
    }
}
