//! Draft token trees: construction, score-ordered prefixes, and pruning.
//!
//! A draft tree is rooted at the token the target just committed. Each layer
//! is grown breadth-first from the drafter's distributions and reranked
//! globally by cumulative score, mirroring top-k tree drafting. Because every
//! node's score is the product of draft probabilities along its path, scores
//! never increase with depth, and the global score order yields nested,
//! ancestor-closed prefixes for free.

use serde::Serialize;

use crate::dist::top_k_indices;
use crate::drafter::Drafter;
use crate::error::{Error, Result};
use crate::moe::Token;

/// Maximum supported tree depth; path score products stay well above
/// underflow within this bound.
pub const MAX_STEPS: usize = 16;

/// Draft-tree shape parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    /// Number of drafted layers below the root.
    pub steps: usize,
    /// Nodes kept per layer (and candidate children per parent).
    pub topk: usize,
    /// Verification budget: at most this many non-root nodes survive pruning.
    pub draft_tokens: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { steps: 4, topk: 8, draft_tokens: 32 }
    }
}

impl TreeParams {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("tree steps must be >= 1".into()));
        }
        if self.steps > MAX_STEPS {
            return Err(Error::Config(format!(
                "tree steps {} exceeds the depth guard of {MAX_STEPS}",
                self.steps
            )));
        }
        if self.topk == 0 {
            return Err(Error::Config("tree topk must be >= 1".into()));
        }
        if self.topk > vocab_size {
            return Err(Error::Config(format!(
                "tree topk {} exceeds vocab size {vocab_size}",
                self.topk
            )));
        }
        if self.draft_tokens == 0 {
            return Err(Error::Config("draft_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

/// One node of a draft tree.
///
/// Ids are assigned in creation order, so they double as the deterministic
/// tie-break key: every ordering in the crate is (score desc, id asc).
#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub token: Token,
    /// Draft probability of this token given the parent's context (1 at root).
    pub q_prob: f64,
    /// Product of q_prob along the path from the root (the root scores 1).
    pub cum_score: f64,
    pub depth: usize,
}

/// A drafted token tree plus the context it was drafted from.
#[derive(Debug, Clone)]
pub struct DraftTree {
    nodes: Vec<TreeNode>,
    children: Vec<Vec<usize>>,
    /// Node ids per depth, starting with the root layer.
    layers: Vec<Vec<usize>>,
    /// Committed tokens preceding the root token.
    root_context: Vec<Token>,
}

/// Serialized form of one node in the machine-readable dump.
#[derive(Serialize)]
struct NodeDump {
    id: usize,
    parent: Option<usize>,
    token: Token,
    q_prob: f64,
    cum_score: f64,
}

impl DraftTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn root_token(&self) -> Token {
        self.nodes[0].token
    }

    pub fn root_context(&self) -> &[Token] {
        &self.root_context
    }

    /// Children of a node, in creation (id) order.
    pub fn children_of(&self, id: usize) -> &[usize] {
        &self.children[id]
    }

    /// Node ids per depth; `layers()[0]` is always `[0]`.
    pub fn layers(&self) -> &[Vec<usize>] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    /// Context at a node: the root context, the root token, then the path
    /// tokens down to and including the node. This is the sequence whose
    /// next-token distribution the node's children are drawn from.
    pub fn node_context(&self, id: usize) -> Vec<Token> {
        let mut path = vec![];
        let mut cur = Some(id);
        while let Some(i) = cur {
            path.push(self.nodes[i].token);
            cur = self.nodes[i].parent;
        }
        let mut ctx = self.root_context.clone();
        ctx.extend(path.into_iter().rev());
        ctx
    }

    /// Build a tree from explicit (parent, token, draft-probability) edges.
    ///
    /// Edges are added in order and become ids 1, 2, ...; each parent must
    /// already exist, sibling tokens must be distinct, and probabilities must
    /// lie in (0, 1]. Intended for tests, oracles, and external drafters.
    pub fn from_edges(
        root_token: Token,
        root_context: Vec<Token>,
        edges: &[(usize, Token, f64)],
    ) -> Result<DraftTree> {
        let mut tree = DraftTree {
            nodes: vec![TreeNode {
                id: 0,
                parent: None,
                token: root_token,
                q_prob: 1.0,
                cum_score: 1.0,
                depth: 0,
            }],
            children: vec![vec![]],
            layers: vec![vec![0]],
            root_context,
        };
        for (i, &(parent, token, q)) in edges.iter().enumerate() {
            let id = i + 1;
            if parent >= id {
                return Err(Error::InvalidInput(format!(
                    "edge {i} references parent {parent}, which does not precede node {id}"
                )));
            }
            if !(q > 0.0 && q <= 1.0) {
                return Err(Error::InvalidInput(format!(
                    "edge {i} has draft probability {q}, outside (0, 1]"
                )));
            }
            if tree.children[parent]
                .iter()
                .any(|&c| tree.nodes[c].token == token)
            {
                return Err(Error::InvalidInput(format!(
                    "edge {i} duplicates token {token} under parent {parent}"
                )));
            }
            let depth = tree.nodes[parent].depth + 1;
            if depth > MAX_STEPS {
                return Err(Error::Config(format!(
                    "node {id} at depth {depth} exceeds the depth guard of {MAX_STEPS}"
                )));
            }
            let cum_score = tree.nodes[parent].cum_score * q;
            tree.nodes.push(TreeNode { id, parent: Some(parent), token, q_prob: q, cum_score, depth });
            tree.children.push(vec![]);
            tree.children[parent].push(id);
            if tree.layers.len() <= depth {
                tree.layers.push(vec![]);
            }
            tree.layers[depth].push(id);
        }
        Ok(tree)
    }

    /// Structural self-check used by tests and the oracle suite.
    pub fn validate(&self) -> Result<()> {
        for node in &self.nodes {
            match node.parent {
                None => {
                    if node.id != 0 || node.q_prob != 1.0 || node.cum_score != 1.0 || node.depth != 0 {
                        return Err(Error::Invariant("malformed root node".into()));
                    }
                }
                Some(p) => {
                    if p >= node.id {
                        return Err(Error::Invariant(format!(
                            "node {} precedes its parent {p}",
                            node.id
                        )));
                    }
                    let parent = &self.nodes[p];
                    if node.depth != parent.depth + 1 {
                        return Err(Error::Invariant(format!("bad depth at node {}", node.id)));
                    }
                    if !(node.q_prob > 0.0 && node.q_prob <= 1.0) {
                        return Err(Error::Invariant(format!("bad q_prob at node {}", node.id)));
                    }
                    let expect = parent.cum_score * node.q_prob;
                    if (node.cum_score - expect).abs() > 1e-12 {
                        return Err(Error::Invariant(format!(
                            "cum_score recurrence broken at node {}",
                            node.id
                        )));
                    }
                    if node.cum_score > parent.cum_score {
                        return Err(Error::Invariant(format!(
                            "score increased along the path at node {}",
                            node.id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Indented one-node-per-line rendering for debugging.
    pub fn to_debug_text(&self) -> String {
        let mut out = String::new();
        self.debug_text_into(0, 0, &mut out);
        out
    }

    fn debug_text_into(&self, id: usize, indent: usize, out: &mut String) {
        let n = &self.nodes[id];
        out.push_str(&"  ".repeat(indent));
        out.push_str(&format!(
            "[{}] token={} q={:.6} score={:.6}\n",
            n.id, n.token, n.q_prob, n.cum_score
        ));
        for &c in &self.children[id] {
            self.debug_text_into(c, indent + 1, out);
        }
    }

    /// Machine-readable dump: a JSON array of nodes in id order.
    pub fn to_debug_json(&self) -> String {
        let dump: Vec<NodeDump> = self
            .nodes
            .iter()
            .map(|n| NodeDump {
                id: n.id,
                parent: n.parent,
                token: n.token,
                q_prob: n.q_prob,
                cum_score: n.cum_score,
            })
            .collect();
        serde_json::to_string_pretty(&dump).expect("tree dump serialization cannot fail")
    }
}

/// Grow a draft tree below `root_token` with layer-wise top-k expansion.
///
/// Each layer is formed by taking every current-layer node's `topk` most
/// probable children under the drafter and keeping the `topk` best candidates
/// layer-wide by cumulative score (ties: parent creation order, then token
/// index). The finished tree has `1 + steps * topk` nodes whenever the draft
/// distributions have at least `topk` positive-probability tokens, which
/// holds for any softmax-backed drafter.
pub fn build_tree(
    drafter: &Drafter,
    root_token: Token,
    root_context: &[Token],
    steps: usize,
    topk: usize,
) -> Result<DraftTree> {
    let vocab = drafter.target().config().vocab_size;
    if steps == 0 || topk == 0 {
        return Err(Error::Config("build_tree requires steps >= 1 and topk >= 1".into()));
    }
    if steps > MAX_STEPS {
        return Err(Error::Config(format!(
            "tree steps {steps} exceeds the depth guard of {MAX_STEPS}"
        )));
    }
    if topk > vocab {
        return Err(Error::Config(format!("tree topk {topk} exceeds vocab size {vocab}")));
    }
    if (root_token as usize) >= vocab {
        return Err(Error::InvalidInput(format!(
            "root token {root_token} out of range for vocab size {vocab}"
        )));
    }

    let mut tree = DraftTree {
        nodes: vec![TreeNode {
            id: 0,
            parent: None,
            token: root_token,
            q_prob: 1.0,
            cum_score: 1.0,
            depth: 0,
        }],
        children: vec![vec![]],
        layers: vec![vec![0]],
        root_context: root_context.to_vec(),
    };

    for depth in 1..=steps {
        struct Candidate {
            parent: usize,
            token: Token,
            q_prob: f64,
            cum_score: f64,
        }
        let mut candidates: Vec<Candidate> = vec![];
        for &parent in &tree.layers[depth - 1] {
            let ctx = tree.node_context(parent);
            let dist = drafter.draft_dist(&ctx)?;
            let parent_score = tree.nodes[parent].cum_score;
            for token in top_k_indices(dist.probs(), topk) {
                let q = dist.prob(token);
                if q > 0.0 {
                    candidates.push(Candidate {
                        parent,
                        token: token as Token,
                        q_prob: q,
                        cum_score: parent_score * q,
                    });
                }
            }
        }
        // Layer-wide rerank: score desc, then parent creation order, then token.
        candidates.sort_by(|a, b| {
            b.cum_score
                .total_cmp(&a.cum_score)
                .then_with(|| a.parent.cmp(&b.parent))
                .then_with(|| a.token.cmp(&b.token))
        });
        candidates.truncate(topk);
        if candidates.is_empty() {
            break;
        }
        let mut layer = vec![];
        for c in candidates {
            let id = tree.nodes.len();
            tree.nodes.push(TreeNode {
                id,
                parent: Some(c.parent),
                token: c.token,
                q_prob: c.q_prob,
                cum_score: c.cum_score,
                depth,
            });
            tree.children.push(vec![]);
            tree.children[c.parent].push(id);
            layer.push(id);
        }
        tree.layers.push(layer);
    }
    Ok(tree)
}

/// Node ids ordered by (cumulative score desc, id asc).
///
/// Truncating this sequence at any length yields an ancestor-closed subtree,
/// and the prefixes are nested by construction.
pub fn prefix_sequence(tree: &DraftTree) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..tree.len()).collect();
    ids.sort_by(|&a, &b| {
        tree.node(b)
            .cum_score
            .total_cmp(&tree.node(a).cum_score)
            .then_with(|| a.cmp(&b))
    });
    ids
}

/// The top-`k` nodes of a tree under the global score order.
#[derive(Debug, Clone)]
pub struct TreePrefix<'a> {
    tree: &'a DraftTree,
    kept_ids: Vec<usize>,
    kept: Vec<bool>,
}

impl<'a> TreePrefix<'a> {
    pub fn tree(&self) -> &'a DraftTree {
        self.tree
    }

    /// Kept node ids in score order (the root is always first).
    pub fn kept_ids(&self) -> &[usize] {
        &self.kept_ids
    }

    pub fn k(&self) -> usize {
        self.kept_ids.len()
    }

    pub fn contains(&self, id: usize) -> bool {
        id < self.kept.len() && self.kept[id]
    }

    /// Kept children of a node, in id order.
    pub fn kept_children(&self, id: usize) -> Vec<usize> {
        self.tree
            .children_of(id)
            .iter()
            .copied()
            .filter(|&c| self.contains(c))
            .collect()
    }

    /// Contexts of every kept node, in score order.
    pub fn kept_contexts(&self) -> Vec<Vec<Token>> {
        self.kept_ids.iter().map(|&id| self.tree.node_context(id)).collect()
    }
}

/// Keep the `k` highest-scoring nodes of the tree.
///
/// Because cumulative scores never increase along a path and ties break
/// toward lower (earlier-created) ids, a parent always outranks its children;
/// the result is asserted to be ancestor-closed rather than repaired.
pub fn prune_topk(tree: &DraftTree, k: usize) -> Result<TreePrefix<'_>> {
    if k == 0 || k > tree.len() {
        return Err(Error::InvalidInput(format!(
            "prune size {k} out of range 1..={}",
            tree.len()
        )));
    }
    let mut kept_ids = prefix_sequence(tree);
    kept_ids.truncate(k);
    let mut kept = vec![false; tree.len()];
    for &id in &kept_ids {
        kept[id] = true;
    }
    for &id in &kept_ids {
        if let Some(p) = tree.node(id).parent {
            if !kept[p] {
                return Err(Error::Invariant(format!(
                    "score-order prefix dropped parent {p} of kept node {id}"
                )));
            }
        }
    }
    Ok(TreePrefix { tree, kept_ids, kept })
}
