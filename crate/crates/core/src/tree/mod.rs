//! The in-memory TurtleTree.
//!
//! Interior nodes are always resident and shared between tree versions through `Arc`; leaves
//! and buffer segments are either in memory (not yet written) or referenced by page id.

mod check;
pub mod codec;
mod driver;
mod leaf;
mod live;
mod node;
mod scan;

use std::sync::Arc;

use crate::config::TreeConfig;
use crate::error::{Error, Result};
use crate::model::{Key, Update};
use crate::page::run_page::PageHit;
use crate::page::PageId;

pub use check::check_tree;
pub use driver::batch_update;
pub use leaf::leaf_merge;
pub use live::Live;
pub use node::{buffer_insert, extract_flush_batch, join_nodes, select_flush_pivot, split_node, InsertOutcome};
pub use scan::{point_query, range_scan, Lookup};

/// An immutable sorted run with prefix sums of encoded entry sizes.
#[derive(Debug, PartialEq, Eq)]
pub struct Run {
    entries: Vec<Update>,
    cum: Vec<u64>,
}

impl Run {
    pub fn new(entries: Vec<Update>) -> Self {
        let mut cum = Vec::with_capacity(entries.len() + 1);
        cum.push(0);
        let mut acc = 0;
        for u in &entries {
            acc += u.encoded_len() as u64;
            cum.push(acc);
        }
        Run { entries, cum }
    }

    pub fn entries(&self) -> &[Update] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn bytes(&self) -> u64 {
        *self.cum.last().unwrap()
    }

    /// Encoded bytes of entries `[a, b)`.
    pub fn range_bytes(&self, a: usize, b: usize) -> u64 {
        self.cum[b] - self.cum[a]
    }

    /// First index whose key is `>= key`.
    pub fn lower_bound(&self, key: &[u8]) -> usize {
        self.entries.partition_point(|u| &u.key[..] < key)
    }

    /// Index range of keys in `[lo, hi)`; `None` bounds are open.
    pub fn key_range(&self, lo: Option<&Key>, hi: Option<&Key>) -> (usize, usize) {
        let a = lo.map_or(0, |k| self.lower_bound(k));
        let b = hi.map_or(self.len(), |k| self.lower_bound(k));
        (a, b.max(a))
    }
}

/// Where a run lives.
#[derive(Clone, Debug)]
pub enum RunRef {
    Mem(Arc<Run>),
    Page(PageId),
}

impl RunRef {
    pub fn same(&self, other: &RunRef) -> bool {
        match (self, other) {
            (RunRef::Mem(a), RunRef::Mem(b)) => Arc::ptr_eq(a, b),
            (RunRef::Page(a), RunRef::Page(b)) => a == b,
            _ => false,
        }
    }

    pub fn page(&self) -> Option<PageId> {
        match self {
            RunRef::Page(id) => Some(*id),
            RunRef::Mem(_) => None,
        }
    }
}

/// Read access to durable runs.
pub trait Pages: Send + Sync {
    fn run(&self, id: PageId) -> Result<Arc<Run>>;
    /// Sharded point lookup returning the entry ordinal.
    fn lookup(&self, id: PageId, key: &[u8]) -> Result<Option<PageHit>>;
    /// [`lookup`](Pages::lookup) on a leaf page; stores may account it separately.
    fn leaf_lookup(&self, id: PageId, key: &[u8]) -> Result<Option<PageHit>> {
        self.lookup(id, key)
    }
    /// Consults a leaf filter; `false` means the key is definitely absent.
    fn filter_contains(&self, filter: PageId, key: &[u8]) -> Result<bool>;
}

/// A `Pages` for trees that never touch storage.
pub struct NoPages;

impl Pages for NoPages {
    fn run(&self, id: PageId) -> Result<Arc<Run>> {
        Err(Error::contract(format!("in-memory tree referenced page {id}")))
    }
    fn lookup(&self, id: PageId, _: &[u8]) -> Result<Option<PageHit>> {
        self.run(id).map(|_| None)
    }
    fn filter_contains(&self, id: PageId, _: &[u8]) -> Result<bool> {
        self.run(id).map(|_| true)
    }
}

pub(crate) fn load(pages: &dyn Pages, r: &RunRef) -> Result<Arc<Run>> {
    match r {
        RunRef::Mem(run) => Ok(run.clone()),
        RunRef::Page(id) => pages.run(*id),
    }
}

/// An immutable run page in a node buffer together with the entries still live in it.
#[derive(Clone, Debug)]
pub struct Segment {
    pub run: RunRef,
    pub count: u32,
    pub first_key: Key,
    pub last_key: Key,
    /// Entry index intervals not yet flushed to a child.
    pub live: Live,
}

impl Segment {
    pub fn new(run: Arc<Run>) -> Self {
        debug_assert!(!run.is_empty());
        let count = run.len() as u32;
        Segment {
            first_key: run.entries()[0].key.clone(),
            last_key: run.entries()[run.len() - 1].key.clone(),
            live: Live::full(count),
            count,
            run: RunRef::Mem(run),
        }
    }

    /// True when the segment's keys may intersect `[lo, hi)`.
    pub fn overlaps(&self, lo: Option<&Key>, hi: Option<&Key>) -> bool {
        lo.is_none_or(|lo| self.last_key >= *lo) && hi.is_none_or(|hi| self.first_key < *hi)
    }
}

#[derive(Clone, Debug)]
pub struct LeafRef {
    pub run: RunRef,
    pub filter: Option<PageId>,
    pub bytes: u64,
}

impl LeafRef {
    pub fn mem(entries: Vec<Update>) -> Self {
        let run = Run::new(entries);
        LeafRef { bytes: run.bytes(), run: RunRef::Mem(Arc::new(run)), filter: None }
    }
}

#[derive(Clone, Debug)]
pub enum Child {
    Leaf(LeafRef),
    Node(Arc<Node>),
}

/// Interior node: pivots, per-pivot pending byte counts and a level-tiered buffer.
#[derive(Clone, Debug)]
pub struct Node {
    /// Separators; child `i` covers `[keys[i-1], keys[i])`.
    pub keys: Vec<Key>,
    pub children: Vec<Child>,
    pub pending: Vec<u64>,
    pub levels: Vec<Vec<Segment>>,
    /// 1 when the children are leaves.
    pub height: u32,
    /// Durable identity; `None` once modified since the last checkpoint.
    pub page: Option<PageId>,
}

impl Node {
    pub fn new(cfg: &TreeConfig, keys: Vec<Key>, children: Vec<Child>, height: u32) -> Self {
        let n = children.len();
        debug_assert_eq!(keys.len() + 1, n);
        Node { keys, children, pending: vec![0; n], levels: vec![Vec::new(); cfg.level_count()], height, page: None }
    }

    pub fn pivot_count(&self) -> usize {
        self.children.len()
    }

    pub fn pivot_for(&self, key: &[u8]) -> usize {
        self.keys.partition_point(|k| &k[..] <= key)
    }

    /// Key bounds of pivot `p` within this node.
    pub fn bounds(&self, p: usize) -> (Option<&Key>, Option<&Key>) {
        (p.checked_sub(1).map(|i| &self.keys[i]), self.keys.get(p))
    }

    pub fn buffered_bytes(&self) -> u64 {
        self.pending.iter().sum()
    }

    pub fn segment_count(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }
}

#[derive(Clone, Debug, Default)]
pub enum TreeRoot {
    #[default]
    Empty,
    Leaf(LeafRef),
    Node(Arc<Node>),
}

impl TreeRoot {
    /// Levels from the root to the leaves; 0 for the empty tree.
    pub fn height(&self) -> u32 {
        match self {
            TreeRoot::Empty => 0,
            TreeRoot::Leaf(_) => 1,
            TreeRoot::Node(n) => n.height + 1,
        }
    }

    /// Builds a tree over pre-sorted leaves, one node level deep. Used to seed tests and
    /// worked examples.
    pub fn from_leaves(cfg: &TreeConfig, leaves: Vec<Vec<Update>>) -> Result<Self> {
        match leaves.len() {
            0 => Ok(TreeRoot::Empty),
            1 => Ok(TreeRoot::Leaf(LeafRef::mem(leaves.into_iter().next().unwrap()))),
            n if n > cfg.pivot_capacity => Err(Error::contract("too many leaves for one node")),
            _ => {
                let keys = leaves[1..].iter().map(|l| l[0].key.clone()).collect();
                let children = leaves.into_iter().map(|l| Child::Leaf(LeafRef::mem(l))).collect();
                Ok(TreeRoot::Node(Arc::new(Node::new(cfg, keys, children, 1))))
            }
        }
    }
}
