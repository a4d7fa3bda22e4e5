//! Depth-truncated samples of multi-type Galton-Watson trees.
//!
//! Every node draws its offspring configuration from its own ChaCha stream,
//! keyed by the path from the root, so a tree depends only on the law, the
//! root label, the depth and the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BranchingProcess, OffspringConfig};

/// Hard limit on the number of nodes in one sampled tree.
pub const MAX_NODES: usize = 20_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub label: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub depth: usize,
    /// Sits at the depth cutoff; its offspring were never sampled.
    pub cutoff: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledTree {
    pub labels: usize,
    pub root_label: usize,
    pub depth: usize,
    pub seed: u64,
    /// Breadth-first order; the root is node 0 and children follow parents.
    pub nodes: Vec<Node>,
}

/// Two nodes of the same stream family never share a key unless they share
/// a path. This is the splitmix64 finalizer applied to the combined word.
fn child_key(parent: u64, index: u64) -> u64 {
    let mut x = parent
        .rotate_left(17)
        .wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x632b_e59b_d9b4_e019);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Samples a tree rooted at `root_label` whose nodes at distance `depth` are
/// left unexpanded.
pub fn sample_tree(
    b: &BranchingProcess,
    root_label: usize,
    depth: usize,
    seed: u64,
) -> Result<SampledTree> {
    sample_tree_capped(b, root_label, depth, seed, MAX_NODES)
}

pub fn sample_tree_capped(
    b: &BranchingProcess,
    root_label: usize,
    depth: usize,
    seed: u64,
    max_nodes: usize,
) -> Result<SampledTree> {
    if root_label >= b.labels() {
        return Err(Error::InvalidArgument(format!(
            "root label {root_label} outside alphabet of size {}",
            b.labels()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keys = vec![child_key(0, root_label as u64)];
    let mut nodes = vec![Node {
        id: 0,
        label: root_label,
        parent: None,
        children: Vec::new(),
        depth: 0,
        cutoff: depth == 0,
    }];
    let mut next = 0;
    while next < nodes.len() {
        let (label, d) = (nodes[next].label, nodes[next].depth);
        if d < depth {
            rng.set_stream(keys[next]);
            rng.set_word_pos(0);
            let u: f64 = rng.random();
            let config = b.config_for_uniform(label, u).clone();
            if nodes.len() + config.norm() as usize > max_nodes {
                return Err(Error::TreeTooLarge(max_nodes));
            }
            let mut index = 0u64;
            for (child_label, &count) in config.counts().iter().enumerate() {
                for _ in 0..count {
                    let id = nodes.len();
                    nodes.push(Node {
                        id,
                        label: child_label,
                        parent: Some(next),
                        children: Vec::new(),
                        depth: d + 1,
                        cutoff: d + 1 == depth,
                    });
                    keys.push(child_key(keys[next], index));
                    nodes[next].children.push(id);
                    index += 1;
                }
            }
        }
        next += 1;
    }
    Ok(SampledTree {
        labels: b.labels(),
        root_label,
        depth,
        seed,
        nodes,
    })
}

/// Label counts of a node's children.
pub fn child_config(tree: &SampledTree, id: usize) -> OffspringConfig {
    let mut counts = vec![0u32; tree.labels];
    for &c in &tree.nodes[id].children {
        counts[tree.nodes[c].label] += 1;
    }
    OffspringConfig(counts)
}

/// The first root child carrying the root's label.
pub fn choose_o_prime(tree: &SampledTree) -> Option<usize> {
    tree.nodes[0]
        .children
        .iter()
        .copied()
        .find(|&c| tree.nodes[c].label == tree.root_label)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TwoSphereClass {
    /// Label counts of the root's children.
    pub n: OffspringConfig,
    /// Label counts of the children of `o'`, zero without `o'`.
    pub m: OffspringConfig,
}

pub fn classify_two_sphere(tree: &SampledTree) -> Result<TwoSphereClass> {
    if tree.depth < 1 {
        return Err(Error::InsufficientDepth {
            needed: 1,
            actual: tree.depth,
        });
    }
    let n = child_config(tree, 0);
    let m = match choose_o_prime(tree) {
        Some(o) => {
            if tree.depth < 2 {
                return Err(Error::InsufficientDepth {
                    needed: 2,
                    actual: tree.depth,
                });
            }
            child_config(tree, o)
        }
        None => OffspringConfig::zeros(tree.labels),
    };
    Ok(TwoSphereClass { n, m })
}

impl SampledTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    /// Nodes at distance `n` from the root.
    pub fn sphere(&self, n: usize) -> Result<Vec<usize>> {
        self.check_radius(n)?;
        Ok(self
            .nodes
            .iter()
            .filter(|x| x.depth == n)
            .map(|x| x.id)
            .collect())
    }

    pub fn ball_size(&self, n: usize) -> Result<usize> {
        self.check_radius(n)?;
        Ok(self.nodes.iter().filter(|x| x.depth <= n).count())
    }

    fn check_radius(&self, n: usize) -> Result<()> {
        if n > self.depth {
            Err(Error::InsufficientDepth {
                needed: n,
                actual: self.depth,
            })
        } else {
            Ok(())
        }
    }

    /// Every node above the cutoff has children.
    pub fn satisfies_forward_condition(&self) -> bool {
        self.nodes
            .iter()
            .all(|x| x.cutoff || !x.children.is_empty())
    }

    /// Parent/child links are mutually consistent and ids are positions.
    pub fn is_well_formed(&self) -> bool {
        self.nodes.iter().enumerate().all(|(i, x)| {
            x.id == i
                && x.parent.map_or(i == 0, |p| {
                    p < i
                        && self.nodes[p].children.contains(&i)
                        && self.nodes[p].depth + 1 == x.depth
                })
                && x.children.iter().all(|&c| self.nodes[c].parent == Some(i))
        })
    }

    /// True degree of `id` in the finite tree.
    pub fn degree(&self, id: usize) -> usize {
        let x = &self.nodes[id];
        x.children.len() + usize::from(x.parent.is_some())
    }

    /// The forward subtree of `id`, renumbered with `id` as the root.
    pub fn subtree(&self, id: usize) -> SampledTree {
        let base = self.nodes[id].depth;
        let mut map = vec![usize::MAX; self.nodes.len()];
        let mut nodes: Vec<Node> = Vec::new();
        let mut queue = std::collections::VecDeque::from([id]);
        while let Some(x) = queue.pop_front() {
            let new_id = nodes.len();
            map[x] = new_id;
            let old = &self.nodes[x];
            let parent = if x == id {
                None
            } else {
                old.parent.map(|p| map[p])
            };
            if let Some(p) = parent {
                nodes[p].children.push(new_id);
            }
            nodes.push(Node {
                id: new_id,
                label: old.label,
                parent,
                children: Vec::new(),
                depth: old.depth - base,
                cutoff: old.cutoff,
            });
            queue.extend(old.children.iter().copied());
        }
        SampledTree {
            labels: self.labels,
            root_label: self.nodes[id].label,
            depth: self.depth - base,
            seed: self.seed,
            nodes,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
