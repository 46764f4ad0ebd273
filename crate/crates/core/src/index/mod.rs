//! IVF-flat approximate nearest-neighbor index over pyramid segment
//! embeddings.
//!
//! Vectors are clustered with spherical k-means; each vector lives in the
//! inverted list of its nearest centroid, and a query scans only the lists of
//! its `nprobe` nearest centroids. Results are deduplicated to the best
//! segment per cache entry.
//!
//! Vectors and centroids are stored as `f32` so that snapshots round-trip
//! losslessly; similarities are accumulated in `f64`.

mod kmeans;
mod pyramid;

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::cmp::Ordering;

pub use kmeans::{MAX_ITERATIONS, SHIFT_TOLERANCE};
pub use pyramid::{
    max_level, pyramid_segments, simulated_segment_embeddings, PyramidDescriptor,
    DEFAULT_MIN_GRANULARITY, MIN_GRANULARITY_FLOOR, SEGMENT_PERTURBATION,
};

use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::types::EntryId;

/// Cap on k-means training vectors per cluster.
pub const MAX_TRAINING_PER_CLUSTER: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct IndexParams {
    /// Target number of coarse clusters `C`.
    pub clusters: usize,
    pub nprobe: usize,
    /// Minimum pyramid segment length as a fraction of the clip (`δ`).
    pub min_granularity: f64,
    /// Mutations (insert or remove calls) between full re-clusterings.
    pub rebuild_every: usize,
    pub seed: u64,
}

impl Default for IndexParams {
    fn default() -> Self {
        Self {
            clusters: 64,
            nprobe: 8,
            min_granularity: DEFAULT_MIN_GRANULARITY,
            rebuild_every: 1024,
            seed: 0,
        }
    }
}

impl IndexParams {
    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 {
            return Err(Error::InvalidConfig("index clusters must be >= 1"));
        }
        if self.nprobe == 0 {
            return Err(Error::InvalidConfig("nprobe must be >= 1"));
        }
        if !(self.min_granularity > 0.0 && self.min_granularity <= 1.0) {
            return Err(Error::InvalidConfig("min_granularity must be in (0, 1]"));
        }
        Ok(())
    }
}

/// One indexed vector: a segment of a cache entry and its embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedVector {
    pub segment: PyramidDescriptor,
    pub vector: Vec<f32>,
}

impl IndexedVector {
    pub fn new(segment: PyramidDescriptor, embedding: &EmbeddingVector) -> Self {
        Self {
            segment,
            vector: embedding.to_f32(),
        }
    }

    pub fn entry(&self) -> EntryId {
        self.segment.entry
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub entry: EntryId,
    pub segment: PyramidDescriptor,
    pub similarity: f64,
}

#[derive(Debug, Clone)]
pub struct IvfIndex {
    params: IndexParams,
    dim: usize,
    centroids: Vec<Vec<f32>>,
    lists: Vec<Vec<IndexedVector>>,
    /// entry -> lists holding at least one of its vectors
    members: BTreeMap<EntryId, Vec<usize>>,
    total: usize,
    mutations: usize,
    vectors_at_build: usize,
}

fn dot_mixed(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, y)| f64::from(x) * y).sum()
}

fn dot_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

fn nearest_centroid(centroids: &[Vec<f32>], v: &[f32]) -> usize {
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let s = dot_f32(centroid, v);
        if s > best_sim {
            best = c;
            best_sim = s;
        }
    }
    best
}

/// Result order: similarity descending, then entry id ascending.
pub fn hit_order(a: &SearchHit, b: &SearchHit) -> Ordering {
    b.similarity.total_cmp(&a.similarity).then(a.entry.cmp(&b.entry))
}

/// Similarity descending, then entry id, then coarser and earlier segments.
fn scan_order(a: &SearchHit, b: &SearchHit) -> Ordering {
    hit_order(a, b)
        .then(a.segment.level.cmp(&b.segment.level))
        .then(a.segment.start.total_cmp(&b.segment.start))
}

/// Sorts the best `limit` hits and keeps each entry's first, up to `k`.
fn first_per_entry(scanned: &mut [SearchHit], k: usize, limit: usize) -> Vec<SearchHit> {
    let prefix = if scanned.len() > limit {
        scanned.select_nth_unstable_by(limit, scan_order);
        &mut scanned[..limit]
    } else {
        &mut scanned[..]
    };
    prefix.sort_unstable_by(scan_order);
    let mut hits: Vec<SearchHit> = Vec::with_capacity(k);
    for h in prefix.iter() {
        if hits.len() == k {
            break;
        }
        if !hits.iter().any(|x| x.entry == h.entry) {
            hits.push(h.clone());
        }
    }
    hits
}

impl IvfIndex {
    /// An index with no vectors and no centroids.
    pub fn empty(dim: usize, params: IndexParams) -> Self {
        Self {
            params,
            dim,
            centroids: Vec::new(),
            lists: Vec::new(),
            members: BTreeMap::new(),
            total: 0,
            mutations: 0,
            vectors_at_build: 0,
        }
    }

    /// Clusters `items` into `params.clusters` lists. When there are fewer
    /// vectors than clusters, the cluster count is reduced to the vector
    /// count. Centroids are trained on a seeded sample of at most
    /// [`MAX_TRAINING_PER_CLUSTER`] vectors per cluster; every vector is then
    /// assigned to its nearest centroid.
    pub fn build(dim: usize, items: Vec<IndexedVector>, params: IndexParams) -> Result<Self> {
        params.validate()?;
        if let Some(bad) = items.iter().find(|it| it.vector.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.vector.len(),
            });
        }
        let mut index = Self::empty(dim, params);
        if items.is_empty() {
            return Ok(index);
        }
        let mut k = index.params.clusters;
        if items.len() < k {
            log::warn!(
                "only {} vectors for {} clusters; reducing cluster count",
                items.len(),
                k
            );
            k = items.len();
        }
        let limit = MAX_TRAINING_PER_CLUSTER * k;
        let training: Vec<&IndexedVector> = if items.len() > limit {
            let mut rng = crate::rng::derive(index.params.seed, 0x7a_1e);
            let mut picked = rand::seq::index::sample(&mut rng, items.len(), limit).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| &items[i]).collect()
        } else {
            items.iter().collect()
        };
        let data: Vec<f64> = training
            .iter()
            .flat_map(|it| it.vector.iter().map(|&x| f64::from(x)))
            .collect();
        let rows = kmeans::Rows { data: &data, dim };
        let centroids = kmeans::spherical_kmeans(&rows, k, index.params.seed);
        index.centroids = centroids
            .into_iter()
            .map(|c| c.into_iter().map(|x| x as f32).collect())
            .collect();
        index.lists = alloc::vec![Vec::new(); k];
        for item in items {
            index.place(item);
        }
        index.vectors_at_build = index.total;
        Ok(index)
    }

    /// Reassembles an index from stored parts (snapshot loading). Vectors are
    /// kept in the lists they were saved in.
    pub fn from_parts(
        dim: usize,
        params: IndexParams,
        centroids: Vec<Vec<f32>>,
        lists: Vec<Vec<IndexedVector>>,
    ) -> Result<Self> {
        if centroids.len() != lists.len() {
            return Err(Error::InvalidConfig("centroid and list counts differ"));
        }
        for c in &centroids {
            if c.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: c.len(),
                });
            }
        }
        let mut index = Self::empty(dim, params);
        index.centroids = centroids;
        index.lists = alloc::vec![Vec::new(); lists.len()];
        for (li, list) in lists.into_iter().enumerate() {
            for item in list {
                if item.vector.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        actual: item.vector.len(),
                    });
                }
                index.push_to(li, item);
            }
        }
        index.vectors_at_build = index.total;
        Ok(index)
    }

    fn push_to(&mut self, list: usize, item: IndexedVector) {
        let lists = self.members.entry(item.entry()).or_default();
        if !lists.contains(&list) {
            lists.push(list);
        }
        self.lists[list].push(item);
        self.total += 1;
    }

    fn place(&mut self, item: IndexedVector) {
        let c = nearest_centroid(&self.centroids, &item.vector);
        self.push_to(c, item);
    }

    pub fn params(&self) -> &IndexParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroids(&self) -> &[Vec<f32>] {
        &self.centroids
    }

    pub fn lists(&self) -> &[Vec<IndexedVector>] {
        &self.lists
    }

    /// Number of indexed vectors.
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn entry_count(&self) -> usize {
        self.members.len()
    }

    pub fn contains(&self, entry: EntryId) -> bool {
        self.members.contains_key(&entry)
    }

    pub fn entry_ids(&self) -> impl Iterator<Item = EntryId> + '_ {
        self.members.keys().copied()
    }

    /// Adds every segment vector of one entry without re-clustering. An
    /// entry already present is replaced.
    pub fn insert(&mut self, items: Vec<IndexedVector>) -> Result<()> {
        if let Some(bad) = items.iter().find(|it| it.vector.len() != self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: bad.vector.len(),
            });
        }
        let Some(first) = items.first() else {
            return Ok(());
        };
        let entry = first.entry();
        if self.contains(entry) {
            self.detach(entry);
        }
        if self.centroids.is_empty() {
            self.centroids.push(first.vector.clone());
            self.lists.push(Vec::new());
        }
        for item in items {
            self.place(item);
        }
        self.after_mutation()
    }

    /// Removes all vectors of `entry`. Returns `false` (and logs) when the
    /// entry is unknown.
    pub fn remove(&mut self, entry: EntryId) -> Result<bool> {
        if !self.detach(entry) {
            log::warn!("remove of unknown index entry {entry}");
            return Ok(false);
        }
        self.after_mutation()?;
        Ok(true)
    }

    fn detach(&mut self, entry: EntryId) -> bool {
        let Some(lists) = self.members.remove(&entry) else {
            return false;
        };
        for li in lists {
            let before = self.lists[li].len();
            self.lists[li].retain(|it| it.entry() != entry);
            self.total -= before - self.lists[li].len();
        }
        true
    }

    fn after_mutation(&mut self) -> Result<()> {
        self.mutations += 1;
        let under_clustered = self.centroids.len() < self.params.clusters
            && self.total >= 2 * self.vectors_at_build.max(1);
        if self.mutations >= self.params.rebuild_every || under_clustered {
            self.rebuild()?;
        }
        Ok(())
    }

    /// Re-clusters all current vectors and swaps the result in.
    pub fn rebuild(&mut self) -> Result<()> {
        let items: Vec<IndexedVector> = self.lists.iter().flatten().cloned().collect();
        let rebuilt = Self::build(self.dim, items, self.params.clone())?;
        *self = rebuilt;
        Ok(())
    }

    /// Top-`k` entries for `query`, probing the `nprobe` nearest lists
    /// (clamped to `1..=C`). At most one hit per entry: its best segment,
    /// with ties going to the coarser, earlier segment.
    pub fn search(&self, query: &EmbeddingVector, k: usize, nprobe: usize) -> Result<Vec<SearchHit>> {
        if query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        if self.total == 0 || k == 0 {
            return Ok(Vec::new());
        }
        let q = query.values();
        let mut ranked: Vec<(usize, f64)> = self
            .centroids
            .iter()
            .enumerate()
            .map(|(c, centroid)| (c, dot_mixed(centroid, q)))
            .collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
        let probes = nprobe.clamp(1, self.centroids.len());

        let mut scanned: Vec<SearchHit> = Vec::new();
        for &(c, _) in ranked.iter().take(probes) {
            scanned.extend(self.lists[c].iter().map(|item| SearchHit {
                entry: item.entry(),
                segment: item.segment,
                similarity: dot_mixed(&item.vector, q),
            }));
        }
        // Each entry contributes at most `per_entry` segments, so the best
        // `k * per_entry` hits always contain the top `k` entries.
        let per_entry = (1usize << (u32::from(max_level(self.params.min_granularity)) + 1)) - 1;
        let mut hits = first_per_entry(&mut scanned, k, k.saturating_mul(per_entry));
        if hits.len() < k && scanned.len() > k.saturating_mul(per_entry) {
            hits = first_per_entry(&mut scanned, k, usize::MAX);
        }
        Ok(hits)
    }

    /// Describes every broken structural invariant; empty when consistent.
    pub fn consistency_violations(&self) -> Vec<alloc::string::String> {
        use alloc::format;
        let mut problems = Vec::new();
        let mut counted = 0;
        let mut seen: BTreeMap<EntryId, Vec<usize>> = BTreeMap::new();
        for (li, list) in self.lists.iter().enumerate() {
            counted += list.len();
            for item in list {
                let nearest = nearest_centroid(&self.centroids, &item.vector);
                if nearest != li {
                    problems.push(format!(
                        "entry {} level {} sits in list {li} but nearest centroid is {nearest}",
                        item.entry(),
                        item.segment.level
                    ));
                }
                let lists = seen.entry(item.entry()).or_default();
                if !lists.contains(&li) {
                    lists.push(li);
                }
            }
        }
        if counted != self.total {
            problems.push(format!("list lengths sum to {counted}, expected {}", self.total));
        }
        for lists in seen.values_mut() {
            lists.sort_unstable();
        }
        let mut members = self.members.clone();
        for lists in members.values_mut() {
            lists.sort_unstable();
        }
        if seen != members {
            problems.push(format!(
                "membership map disagrees with list contents ({} vs {} entries)",
                members.len(),
                seen.len()
            ));
        }
        problems
    }
}
