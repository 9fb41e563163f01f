use serde::{Deserialize, Serialize};

/// One node of a regression tree stored in a flat arena; children are arena
/// indices. A row goes left when its value is strictly below `threshold`;
/// missing values follow `default_left`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: u32,
        threshold: f64,
        default_left: bool,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Tree { nodes: vec![TreeNode::Leaf { value }] }
    }

    pub fn is_leaf_only(&self) -> bool {
        self.nodes.len() == 1
    }

    /// Index of the leaf reached by `row`. Features flagged in `masked` are
    /// treated as missing.
    #[inline]
    pub fn leaf_index(&self, row: &[Option<f64>], masked: Option<&[bool]>) -> usize {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { .. } => return i,
                TreeNode::Split { feature, threshold, default_left, left, right } => {
                    let f = feature as usize;
                    let v = match masked {
                        Some(m) if m[f] => None,
                        _ => row[f],
                    };
                    let go_left = match v {
                        Some(x) => x < threshold,
                        None => default_left,
                    };
                    i = if go_left { left as usize } else { right as usize };
                }
            }
        }
    }

    #[inline]
    pub fn predict(&self, row: &[Option<f64>], masked: Option<&[bool]>) -> f64 {
        match self.nodes[self.leaf_index(row, masked)] {
            TreeNode::Leaf { value } => value,
            TreeNode::Split { .. } => unreachable!("leaf_index returns leaves"),
        }
    }

    /// Number of split levels on the deepest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + walk(nodes, left as usize).max(walk(nodes, right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn split_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Split { .. })).count()
    }
}
