//! The checkpoint pipeline: batches are applied to an in-memory pending tree, and every χ
//! batches the new and modified pages are written and committed through the manifest.

pub mod manifest;

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use bytes::Bytes;
use parking_lot::Mutex;

use crate::config::{Config, TreeConfig};
use crate::error::{Error, Result};
use crate::filter::{build_leaf_filter, Filter};
use crate::model::{Batch, Key};
use crate::page::run_page::{self, decode_run, encode_run, PageHit, RunKind};
use crate::page::{CacheClass, PageId, PageStore, PoolKind};
use crate::stats::StatsCounters;
use crate::tree::codec::{decode_node, encode_node, node_refs};
use crate::tree::{batch_update, Child, LeafRef, Node, Pages, Run, RunRef, TreeRoot};

pub use manifest::{Manifest, ManifestState, RootDesc};

const FILTER_HEADER_BYTES: usize = 16;

struct Decoded<T> {
    map: HashMap<PageId, (Arc<T>, usize)>,
    order: VecDeque<PageId>,
    bytes: usize,
    cap: usize,
}

impl<T> Decoded<T> {
    fn new(cap: usize) -> Self {
        Decoded { map: HashMap::new(), order: VecDeque::new(), bytes: 0, cap }
    }

    fn get(&self, id: PageId) -> Option<Arc<T>> {
        self.map.get(&id).map(|(v, _)| v.clone())
    }

    fn insert(&mut self, id: PageId, v: Arc<T>, size: usize) {
        if self.map.insert(id, (v, size)).is_none() {
            self.order.push_back(id);
            self.bytes += size;
        }
        while self.bytes > self.cap {
            let Some(old) = self.order.pop_front() else { break };
            if let Some((_, s)) = self.map.remove(&old) {
                self.bytes -= s;
            }
        }
    }
}

/// [`Pages`] over a page store, with small caches of decoded runs and filters.
pub struct StorePages {
    store: Arc<PageStore>,
    runs: Mutex<Decoded<Run>>,
    filters: Mutex<Decoded<Filter>>,
}

impl StorePages {
    pub fn new(store: Arc<PageStore>, decoded_budget: usize) -> Self {
        StorePages {
            store,
            runs: Mutex::new(Decoded::new(decoded_budget)),
            filters: Mutex::new(Decoded::new(decoded_budget / 8)),
        }
    }

    pub fn store(&self) -> &Arc<PageStore> {
        &self.store
    }

    fn class(&self, id: PageId) -> CacheClass {
        if id.pool() == self.store.pool_index(PoolKind::Node) {
            CacheClass::Node
        } else {
            CacheClass::LeafShard
        }
    }

    fn remember(&self, id: PageId, run: Arc<Run>) {
        let size = run.bytes() as usize;
        self.runs.lock().insert(id, run, size);
    }

    /// Bytes held by decoded runs and filters.
    pub fn decoded_bytes(&self) -> usize {
        self.runs.lock().bytes + self.filters.lock().bytes
    }
}

impl Pages for StorePages {
    fn run(&self, id: PageId) -> Result<Arc<Run>> {
        if let Some(r) = self.runs.lock().get(id) {
            return Ok(r);
        }
        let page = self.store.read_page(id, self.class(id))?;
        let (_, entries) = decode_run(&page)?;
        let run = Arc::new(Run::new(entries));
        self.remember(id, run.clone());
        Ok(run)
    }

    fn lookup(&self, id: PageId, key: &[u8]) -> Result<Option<PageHit>> {
        let region = self.store.page_bytes(id.pool()) / 16;
        run_page::lookup(&self.store, id, region, key, true, self.class(id))
    }

    fn leaf_lookup(&self, id: PageId, key: &[u8]) -> Result<Option<PageHit>> {
        let region = self.store.page_bytes(id.pool()) / 16;
        let (hit, touched) = run_page::lookup_counted(&self.store, id, region, key, true, self.class(id))?;
        let stats = self.store.stats();
        StatsCounters::add(&stats.leaf_lookups, 1);
        StatsCounters::add(&stats.leaf_lookup_bytes, touched);
        Ok(hit)
    }

    fn filter_contains(&self, id: PageId, key: &[u8]) -> Result<bool> {
        let cached = self.filters.lock().get(id);
        let f = match cached {
            Some(f) => f,
            None => {
                let page = self.store.read_page(id, CacheClass::Filter)?;
                let f = Arc::new(Filter::decode(&page)?);
                self.filters.lock().insert(id, f.clone(), page.len());
                f
            }
        };
        let hit = f.contains(key);
        if !hit {
            StatsCounters::add(&self.store.stats().filter_negative_hits, 1);
        }
        Ok(hit)
    }
}

/// A segment page written by an externalization.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WrittenSegment {
    /// Height of the node whose buffer holds the segment (1 = leaf parents).
    pub height: u32,
    /// Buffer level, 0-based.
    pub level: usize,
    pub keys: Vec<Key>,
}

#[derive(Clone, Debug, Default)]
pub struct ExternalizeReport {
    pub generation: u64,
    pub seq_upper: u64,
    pub node_pages: usize,
    pub leaf_pages: usize,
    pub filter_pages: usize,
    pub segment_pages: usize,
    pub pages_freed: usize,
    /// Filled only when segment tracing is on.
    pub segments: Vec<WrittenSegment>,
}

impl ExternalizeReport {
    pub fn pages_written(&self) -> usize {
        self.node_pages + self.leaf_pages + self.filter_pages + self.segment_pages
    }
}

struct Writer<'a> {
    cfg: &'a Config,
    store: &'a PageStore,
    pages: &'a StorePages,
    trace: bool,
    written: Vec<PageId>,
    new_nodes: Vec<(PageId, Vec<PageId>)>,
    shared: HashMap<usize, PageId>,
    report: ExternalizeReport,
}

impl Writer<'_> {
    fn write_run(&mut self, run: &Arc<Run>, kind: RunKind) -> Result<PageId> {
        let ptr = Arc::as_ptr(run) as usize;
        if let Some(&id) = self.shared.get(&ptr) {
            return Ok(id);
        }
        let pool = match kind {
            RunKind::Leaf => self.store.pool_index(PoolKind::Leaf),
            RunKind::Segment => (0..self.store.pool_count())
                .find(|&p| {
                    let b = self.store.page_bytes(p);
                    (b - b / 16) as u64 >= run.bytes()
                })
                .ok_or_else(|| Error::contract("segment larger than any page"))?,
        };
        let page_bytes = self.store.page_bytes(pool);
        let image = encode_run(run.entries(), kind, page_bytes, page_bytes / 16)?;
        let id = self.store.write_page(pool, &image)?;
        self.written.push(id);
        self.shared.insert(ptr, id);
        self.pages.remember(id, run.clone());
        Ok(id)
    }

    fn leaf(&mut self, leaf: &LeafRef) -> Result<LeafRef> {
        let RunRef::Mem(run) = &leaf.run else { return Ok(leaf.clone()) };
        let id = self.write_run(run, RunKind::Leaf)?;
        self.report.leaf_pages += 1;
        let fbytes = self.cfg.filter_page_bytes();
        let filter = build_leaf_filter(run.entries(), self.cfg.effective_filter_bits(), fbytes - FILTER_HEADER_BYTES);
        let fid = self.store.write_page(self.store.pool_index(PoolKind::Filter), &filter.encode(fbytes))?;
        self.written.push(fid);
        self.report.filter_pages += 1;
        Ok(LeafRef { run: RunRef::Page(id), filter: Some(fid), bytes: leaf.bytes })
    }

    fn node(&mut self, node: &Arc<Node>) -> Result<Arc<Node>> {
        if node.page.is_some() {
            return Ok(node.clone());
        }
        let mut n = (**node).clone();
        for c in &mut n.children {
            *c = match c {
                Child::Leaf(l) => Child::Leaf(self.leaf(l)?),
                Child::Node(child) => Child::Node(self.node(child)?),
            };
        }
        let height = n.height;
        for (level, segs) in n.levels.iter_mut().enumerate() {
            for s in segs {
                let RunRef::Mem(run) = &s.run else { continue };
                let fresh = !self.shared.contains_key(&(Arc::as_ptr(run) as usize));
                let id = self.write_run(run, RunKind::Segment)?;
                if fresh {
                    self.report.segment_pages += 1;
                    if self.trace {
                        let keys = run.entries().iter().map(|u| u.key.clone()).collect();
                        self.report.segments.push(WrittenSegment { height, level, keys });
                    }
                }
                s.run = RunRef::Page(id);
            }
        }
        let image = encode_node(&n)?;
        let pool = self.store.pool_index(PoolKind::Node);
        let page_bytes = self.store.page_bytes(pool);
        if image.len() > page_bytes {
            return Err(Error::contract(format!("node encodes to {} bytes, page holds {page_bytes}", image.len())));
        }
        let mut padded = image;
        padded.resize(page_bytes, 0);
        let id = self.store.write_page(pool, &padded)?;
        self.written.push(id);
        self.report.node_pages += 1;
        n.page = Some(id);
        self.new_nodes.push((id, node_refs(&n)));
        Ok(Arc::new(n))
    }

    fn root(&mut self, tree: &TreeRoot) -> Result<(TreeRoot, RootDesc)> {
        Ok(match tree {
            TreeRoot::Empty => (TreeRoot::Empty, RootDesc::Empty),
            TreeRoot::Leaf(l) => {
                let l = self.leaf(l)?;
                let desc = RootDesc::Leaf { run: l.run.page().unwrap(), filter: l.filter, bytes: l.bytes };
                (TreeRoot::Leaf(l), desc)
            }
            TreeRoot::Node(n) => {
                let n = self.node(n)?;
                let desc = RootDesc::Node(n.page.unwrap());
                (TreeRoot::Node(n), desc)
            }
        })
    }
}

/// Pending tree plus the durable checkpoint it was derived from.
pub struct Checkpointer {
    cfg: Config,
    tcfg: TreeConfig,
    store: Arc<PageStore>,
    pages: Arc<StorePages>,
    manifest: Manifest,
    node_refs: HashMap<PageId, Vec<PageId>>,
    tree: TreeRoot,
    chi: usize,
    batches_applied: usize,
    seq_upper: u64,
    trace: bool,
}

impl Checkpointer {
    /// Builds the pipeline over the committed state of `manifest`, restoring page refcounts
    /// and loading every interior node.
    pub fn open(cfg: &Config, store: Arc<PageStore>, manifest: Manifest) -> Result<Self> {
        let tcfg = cfg.tree_config()?;
        let state = manifest.state().clone();
        store.restore(&state.refcounts)?;
        let pages = Arc::new(StorePages::new(store.clone(), cfg.memory_budget_bytes / 4));
        let mut node_refs_map = HashMap::new();
        let tree = match state.root {
            RootDesc::Empty => TreeRoot::Empty,
            RootDesc::Leaf { run, filter, bytes } => TreeRoot::Leaf(LeafRef { run: RunRef::Page(run), filter, bytes }),
            RootDesc::Node(id) => TreeRoot::Node(load_node(&store, id, &mut node_refs_map)?),
        };
        if matches!(&tree, TreeRoot::Node(n) if n.levels.len() != tcfg.level_count()) {
            return Err(Error::OpenFailure("stored nodes disagree with the configured pivot capacity".into()));
        }
        Ok(Checkpointer {
            cfg: cfg.clone(),
            tcfg,
            store,
            pages,
            manifest,
            node_refs: node_refs_map,
            tree,
            chi: cfg.chi.max(1),
            batches_applied: 0,
            seq_upper: state.seq_upper,
            trace: false,
        })
    }

    pub fn pages(&self) -> &Arc<StorePages> {
        &self.pages
    }

    pub fn tree_config(&self) -> &TreeConfig {
        &self.tcfg
    }

    /// The pending tree; it subsumes the durable checkpoint.
    pub fn tree(&self) -> &TreeRoot {
        &self.tree
    }

    pub fn chi(&self) -> usize {
        self.chi
    }

    pub fn batches_applied(&self) -> usize {
        self.batches_applied
    }

    /// Highest seq covered by the pending tree.
    pub fn pending_seq(&self) -> u64 {
        self.seq_upper
    }

    pub fn durable_seq(&self) -> u64 {
        self.manifest.state().seq_upper
    }

    pub fn generation(&self) -> u64 {
        self.manifest.state().generation
    }

    pub fn manifest_len(&self) -> u64 {
        self.manifest.len()
    }

    pub fn durable_state(&self) -> &ManifestState {
        self.manifest.state()
    }

    /// Records the keys of every written segment in externalization reports.
    pub fn set_trace(&mut self, on: bool) {
        self.trace = on;
    }

    /// Applies one batch to the pending tree without writing anything. Returns true once χ
    /// batches are pending.
    pub fn apply_batch(&mut self, batch: &Batch) -> Result<bool> {
        if batch.is_empty() {
            return Ok(self.batches_applied >= self.chi);
        }
        let first = batch.entries().iter().map(|u| u.seq).min().unwrap();
        if first <= self.seq_upper {
            return Err(Error::contract(format!("batch starting at seq {first} is not after {}", self.seq_upper)));
        }
        self.tree = batch_update(&self.tcfg, &*self.pages, &self.tree, batch.entries())?;
        self.seq_upper = batch.max_seq();
        self.batches_applied += 1;
        StatsCounters::add(&self.store.stats().batches_applied, 1);
        Ok(self.batches_applied >= self.chi)
    }

    /// Moves the seq horizon forward for seqs that produced no batch.
    pub fn cover_seq(&mut self, seq: u64) {
        self.seq_upper = self.seq_upper.max(seq);
    }

    /// Count and bytes of pending-tree pages not yet written.
    pub fn dirty(&self) -> (usize, u64) {
        fn walk(n: &Node, acc: &mut (usize, u64)) {
            if n.page.is_some() {
                return;
            }
            acc.0 += 1;
            for c in &n.children {
                match c {
                    Child::Leaf(LeafRef { run: RunRef::Mem(r), .. }) => {
                        acc.0 += 1;
                        acc.1 += r.bytes();
                    }
                    Child::Leaf(_) => {}
                    Child::Node(c) => walk(c, acc),
                }
            }
            for s in n.levels.iter().flatten() {
                if let RunRef::Mem(r) = &s.run {
                    acc.0 += 1;
                    acc.1 += r.bytes();
                }
            }
        }
        let mut acc = (0, 0);
        match &self.tree {
            TreeRoot::Empty => {}
            TreeRoot::Leaf(LeafRef { run: RunRef::Mem(r), .. }) => acc = (1, r.bytes()),
            TreeRoot::Leaf(_) => {}
            TreeRoot::Node(n) => walk(n, &mut acc),
        }
        acc
    }

    /// Writes every unwritten page of the pending tree and commits it as the new checkpoint.
    /// On failure the pending tree and the previous checkpoint are untouched.
    pub fn externalize(&mut self) -> Result<ExternalizeReport> {
        let state = self.manifest.state();
        if self.batches_applied == 0 && self.seq_upper == state.seq_upper {
            return Ok(ExternalizeReport { generation: state.generation, seq_upper: state.seq_upper, ..Default::default() });
        }
        let generation = state.generation + 1;
        let old_root = state.root;
        let mut w = Writer {
            cfg: &self.cfg,
            store: &self.store,
            pages: &self.pages,
            trace: self.trace,
            written: Vec::new(),
            new_nodes: Vec::new(),
            shared: HashMap::new(),
            report: ExternalizeReport { generation, seq_upper: self.seq_upper, ..Default::default() },
        };
        let result = w.root(&self.tree).and_then(|(tree, desc)| {
            self.store.sync()?;
            Ok((tree, desc))
        });
        let (tree, desc) = match result {
            Ok(r) => r,
            Err(e) => {
                release(&self.store, &w.written);
                return Err(e);
            }
        };
        let (deltas, freed) = self.refcount_deltas(&w.new_nodes, &desc, &old_root);
        let logged = self
            .manifest
            .prepare(generation, desc, self.seq_upper, deltas.clone())
            .and_then(|_| self.manifest.commit(generation));
        if let Err(e) = logged {
            release(&self.store, &w.written);
            return Err(e);
        }
        let fresh: std::collections::HashSet<PageId> = w.written.iter().copied().collect();
        let mut ordered = deltas;
        ordered.sort_by_key(|&(_, d)| std::cmp::Reverse(d));
        for (p, d) in ordered {
            let d = if fresh.contains(&p) { d - 1 } else { d };
            if d != 0 {
                self.store.adjust(p, d)?;
            }
        }
        for p in &freed {
            self.node_refs.remove(p);
        }
        self.node_refs.extend(w.new_nodes);
        let mut report = w.report;
        report.pages_freed = freed.len();
        self.tree = tree;
        self.batches_applied = 0;
        StatsCounters::add(&self.store.stats().checkpoints, 1);
        Ok(report)
    }

    /// Refcount changes committing `root` implies, and the pages they free.
    fn refcount_deltas(&self, new_nodes: &[(PageId, Vec<PageId>)], root: &RootDesc, old: &RootDesc) -> (Vec<(PageId, i64)>, Vec<PageId>) {
        let counts = &self.manifest.state().refcounts;
        let mut delta: HashMap<PageId, i64> = HashMap::new();
        for (_, refs) in new_nodes {
            for r in refs {
                *delta.entry(*r).or_default() += 1;
            }
        }
        for r in root.refs() {
            *delta.entry(r).or_default() += 1;
        }
        for r in old.refs() {
            *delta.entry(r).or_default() -= 1;
        }
        let current = |p: &PageId| *counts.get(p).unwrap_or(&0) as i64;
        let mut stack: Vec<PageId> =
            delta.iter().filter(|(p, d)| current(p) > 0 && current(p) + **d == 0).map(|(p, _)| *p).collect();
        let mut freed = Vec::new();
        while let Some(p) = stack.pop() {
            freed.push(p);
            for r in self.node_refs.get(&p).into_iter().flatten() {
                let d = delta.entry(*r).or_default();
                *d -= 1;
                if current(r) + *d == 0 {
                    stack.push(*r);
                }
            }
        }
        let mut out: Vec<(PageId, i64)> = delta.into_iter().filter(|(_, d)| *d != 0).collect();
        out.sort();
        (out, freed)
    }

    /// Changes χ. Shrinking it to at most the number of pending batches externalizes first.
    pub fn set_checkpoint_distance(&mut self, chi: usize) -> Result<Option<ExternalizeReport>> {
        if chi == 0 {
            return Err(Error::InvalidParameter("checkpoint distance must be at least 1".into()));
        }
        let report = if self.batches_applied > 0 && self.batches_applied >= chi {
            Some(self.externalize()?)
        } else {
            None
        };
        self.chi = chi;
        Ok(report)
    }

    /// Checks that every durable refcount equals the number of references reachable from the
    /// committed root, and that every reachable page is live.
    pub fn audit(&self) -> Result<()> {
        let state = self.manifest.state();
        let mut expect: HashMap<PageId, u32> = HashMap::new();
        let mut stack = state.root.refs();
        for r in &stack {
            *expect.entry(*r).or_default() += 1;
        }
        let mut seen = std::collections::HashSet::new();
        while let Some(p) = stack.pop() {
            if !seen.insert(p) {
                continue;
            }
            for r in self.node_refs.get(&p).into_iter().flatten() {
                *expect.entry(*r).or_default() += 1;
                stack.push(*r);
            }
        }
        if expect != state.refcounts {
            return Err(Error::contract(format!(
                "manifest refcounts disagree with reachability: {} expected pages, {} recorded",
                expect.len(),
                state.refcounts.len()
            )));
        }
        for (p, c) in &expect {
            if self.store.refcount(*p) != *c {
                return Err(Error::contract(format!("page {p} has count {} but {c} references", self.store.refcount(*p))));
            }
        }
        Ok(())
    }
}

fn release(store: &PageStore, pages: &[PageId]) {
    for p in pages {
        let _ = store.decref(*p);
    }
}

fn load_node(store: &PageStore, id: PageId, refs: &mut HashMap<PageId, Vec<PageId>>) -> Result<Arc<Node>> {
    let page: Bytes = store.read_page(id, CacheClass::Node)?;
    let mut n = decode_node(&page, &mut |child| load_node(store, child, refs))?;
    n.page = Some(id);
    refs.insert(id, node_refs(&n));
    Ok(Arc::new(n))
}
