//! Euclidean k-nearest-neighbor index over reference feature vectors.
//!
//! Two query modes share one storage layout:
//!
//! * `Exact` scans every stored vector.
//! * `PermPrefix` keeps, for every vector, the ordered list of its
//!   `prefix_len` closest pivots. A query ranks the stored vectors by how
//!   long a prefix they share with the query's own pivot ordering (ties
//!   resolved by a footrule distance over the prefix), takes the best
//!   `candidate_budget` of them and re-ranks those by true distance.
//!
//! Vectors are kept as `f32` in id order, so the row index doubles as the
//! tie-break key. Distances are accumulated in `f64`.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fsutil;
use crate::fvec::FeatureVector;

pub const INDEX_MAGIC: &[u8; 4] = b"SBIX";
pub const INDEX_VERSION: u32 = 1;
const INDEX_TRAILER: &[u8; 4] = b"XIBS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexMode {
    Exact,
    PermPrefix,
}

impl IndexMode {
    pub fn as_str(self) -> &'static str {
        match self {
            IndexMode::Exact => "exact",
            IndexMode::PermPrefix => "perm-prefix",
        }
    }

    fn code(self) -> u8 {
        match self {
            IndexMode::Exact => 0,
            IndexMode::PermPrefix => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(IndexMode::Exact),
            1 => Some(IndexMode::PermPrefix),
            _ => None,
        }
    }
}

impl std::str::FromStr for IndexMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(IndexMode::Exact),
            "perm-prefix" => Ok(IndexMode::PermPrefix),
            other => Err(Error::InvalidParameter(format!(
                "unknown index mode `{other}` (expected exact or perm-prefix)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexConfig {
    pub dim: usize,
    pub mode: IndexMode,
    pub num_pivots: usize,
    pub prefix_len: usize,
    /// Maximum number of candidates refined per query in perm-prefix mode.
    pub candidate_budget: usize,
    pub rng_seed: u64,
}

impl IndexConfig {
    pub fn exact(dim: usize) -> Self {
        Self {
            dim,
            mode: IndexMode::Exact,
            num_pivots: 64,
            prefix_len: 8,
            candidate_budget: 1000,
            rng_seed: 0,
        }
    }

    pub fn perm_prefix(
        dim: usize,
        num_pivots: usize,
        prefix_len: usize,
        candidate_budget: usize,
        rng_seed: u64,
    ) -> Self {
        Self {
            dim,
            mode: IndexMode::PermPrefix,
            num_pivots,
            prefix_len,
            candidate_budget,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidParameter("dim must be positive".into()));
        }
        if self.candidate_budget == 0 {
            return Err(Error::InvalidParameter(
                "candidate_budget must be positive".into(),
            ));
        }
        if self.mode == IndexMode::PermPrefix {
            if self.num_pivots == 0 || self.num_pivots > u16::MAX as usize {
                return Err(Error::InvalidParameter(format!(
                    "num_pivots must be in 1..={}, got {}",
                    u16::MAX,
                    self.num_pivots
                )));
            }
            if self.prefix_len == 0 || self.prefix_len > self.num_pivots {
                return Err(Error::InvalidParameter(format!(
                    "prefix_len must be in 1..=num_pivots ({}), got {}",
                    self.num_pivots, self.prefix_len
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub id: String,
    pub distance: f64,
}

/// Neighbors in ascending distance, ties by ascending id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeighborList {
    pub entries: Vec<Neighbor>,
}

impl NeighborList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|n| n.id.as_str())
    }

    /// True when distances are nondecreasing and equal distances have increasing ids.
    pub fn is_well_ordered(&self) -> bool {
        self.entries
            .windows(2)
            .all(|w| match w[0].distance.partial_cmp(&w[1].distance) {
                Some(Ordering::Less) => true,
                Some(Ordering::Equal) => w[0].id < w[1].id,
                _ => false,
            })
    }
}

#[inline]
fn squared_distance_generic<A, B>(a: &[A], b: &[B]) -> f64
where
    A: Copy + Into<f64>,
    B: Copy + Into<f64>,
{
    debug_assert_eq!(a.len(), b.len());
    // Eight independent lanes let the compiler vectorize the f64 accumulation.
    let mut acc = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for lane in 0..8 {
            let d = x[lane].into() - y[lane].into();
            acc[lane] += d * d;
        }
    }
    let mut tail = 0.0;
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        let d = x.into() - y.into();
        tail += d * d;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Relative slack that absorbs f64 rounding in the screening bounds.
const SCREEN_SLACK: f64 = 1e-9;
const SCREEN_BLOCK: usize = 64;

/// Scalar quantization of the stored vectors onto one shared grid step, so
/// squared code distances are exact integers.
#[derive(Debug, Clone, PartialEq)]
struct Screen {
    offsets: Vec<f64>,
    scale: f64,
    rows: usize,
    dim: usize,
    /// Codes in blocks of `SCREEN_BLOCK` dimensions: the first block of every
    /// row, then the second block of every row, and so on. Most rows are
    /// rejected after one block, so this keeps the hot data contiguous.
    codes: Vec<u8>,
    /// Upper bound on the distance between each row and its quantized form,
    /// in grid steps.
    residuals: Vec<f64>,
}

impl Screen {
    fn new(data: &[f32], dim: usize) -> Self {
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for row in data.chunks_exact(dim) {
            for (j, &v) in row.iter().enumerate() {
                lo[j] = lo[j].min(v as f64);
                hi[j] = hi[j].max(v as f64);
            }
        }
        let span = lo.iter().zip(&hi).map(|(l, h)| h - l).fold(0.0, f64::max);
        let scale = if span > 0.0 && (span / 255.0).is_normal() {
            span / 255.0
        } else {
            1.0
        };
        let mut screen = Screen {
            offsets: lo,
            scale,
            rows: data.len() / dim.max(1),
            dim,
            codes: vec![0; data.len()],
            residuals: Vec::with_capacity(data.len() / dim.max(1)),
        };
        for (r, row) in data.chunks_exact(dim).enumerate() {
            let mut residual = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let (code, err) = screen.code(j, v as f64);
                let (block, within) = (j / SCREEN_BLOCK, j % SCREEN_BLOCK);
                let at = screen.block_start(block) + r * screen.block_width(block) + within;
                screen.codes[at] = code;
                residual += err * err;
            }
            screen
                .residuals
                .push(residual.sqrt() * (1.0 + SCREEN_SLACK) / screen.scale);
        }
        screen
    }

    fn block_count(&self) -> usize {
        self.dim.div_ceil(SCREEN_BLOCK)
    }

    fn block_width(&self, block: usize) -> usize {
        SCREEN_BLOCK.min(self.dim - block * SCREEN_BLOCK)
    }

    fn block_start(&self, block: usize) -> usize {
        self.rows * SCREEN_BLOCK * block
    }

    /// Exact squared code distance between `query` and `row`, abandoning
    /// once it passes `limit`.
    #[inline(always)]
    fn distance(&self, query: &[u8], row: usize, limit: u64) -> u64 {
        let mut total = 0u64;
        for block in 0..self.block_count() {
            let w = self.block_width(block);
            let start = self.block_start(block) + row * w;
            let q = &query[block * SCREEN_BLOCK..block * SCREEN_BLOCK + w];
            total += block_distance(q, &self.codes[start..start + w]);
            if total > limit {
                return total;
            }
        }
        total
    }

    fn code(&self, j: usize, v: f64) -> (u8, f64) {
        let code = ((v - self.offsets[j]) / self.scale)
            .round()
            .clamp(0.0, 255.0);
        (code as u8, v - (self.offsets[j] + code * self.scale))
    }

    fn quantize(&self, query: &[f64]) -> (Vec<u8>, f64) {
        let mut residual = 0.0;
        let codes = query
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                let (code, err) = self.code(j, v);
                residual += err * err;
                code
            })
            .collect();
        (codes, residual.sqrt() * (1.0 + SCREEN_SLACK))
    }
}

/// Squared distance between two blocks of at most `SCREEN_BLOCK` codes.
#[inline(always)]
fn block_distance(a: &[u8], b: &[u8]) -> u64 {
    let mut acc = 0u32;
    for (&x, &y) in a.iter().zip(b) {
        // A block sum is at most 64 * 255^2, so wrapping never happens;
        // wrapping ops keep the loop vectorizable when overflow checks are on.
        let d = (x as i32).wrapping_sub(y as i32);
        acc = acc.wrapping_add(d.wrapping_mul(d) as u32);
    }
    acc as u64
}

pub(crate) fn squared_distance_f32(a: &[f32], b: &[f32]) -> f64 {
    squared_distance_generic(a, b)
}

fn squared_distance_query(query: &[f64], row: &[f32]) -> f64 {
    squared_distance_generic(query, row)
}

/// Euclidean distance between two real vectors.
pub fn distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(squared_distance_generic(a, b).sqrt())
}

/// A `(distance, row)` pair ordered by distance, then row (= id order).
#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored {
    dist: f64,
    row: u32,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.row.cmp(&other.row))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Keeps the `k` smallest items seen so far.
struct TopK {
    k: usize,
    heap: BinaryHeap<Scored>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    fn offer(&mut self, item: Scored) {
        if self.heap.len() < self.k {
            self.heap.push(item);
        } else if let Some(mut top) = self.heap.peek_mut() {
            if item < *top {
                *top = item;
            }
        }
    }

    /// Distance of the current k-th best item, once `k` items are held.
    #[inline]
    fn worst(&self) -> Option<f64> {
        if self.heap.len() < self.k {
            None
        } else {
            self.heap.peek().map(|s| s.dist)
        }
    }

    fn into_sorted(self) -> Vec<Scored> {
        self.heap.into_sorted_vec()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct PermTable {
    /// Row indices of the pivots, in pivot order.
    pivot_rows: Vec<u32>,
    pivot_data: Vec<f32>,
    /// `prefix_len` pivot indices per row, nearest first.
    prefixes: Vec<u16>,
}

/// Immutable kNN index. Safe to share between threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    config: IndexConfig,
    ids: Vec<String>,
    data: Vec<f32>,
    perm: Option<PermTable>,
    /// Quantized copy used to skip far rows during exact scans.
    screen: Option<Screen>,
}

impl Index {
    pub fn build(vectors: Vec<FeatureVector>, config: IndexConfig) -> Result<Self> {
        config.validate()?;
        if vectors.is_empty() {
            return Err(Error::Empty("cannot build an index from zero vectors"));
        }
        if vectors.len() > u32::MAX as usize {
            return Err(Error::InvalidParameter("too many vectors".into()));
        }
        let mut seen = HashSet::with_capacity(vectors.len());
        for v in &vectors {
            v.validate(config.dim)?;
            if !seen.insert(v.id.as_str()) {
                return Err(Error::DuplicateId(v.id.clone()));
            }
        }
        drop(seen);

        let mut vectors = vectors;
        vectors.sort_unstable_by(|a, b| a.id.cmp(&b.id));
        let mut ids = Vec::with_capacity(vectors.len());
        let mut data = Vec::with_capacity(vectors.len() * config.dim);
        for v in vectors {
            data.extend_from_slice(&v.values);
            ids.push(v.id);
        }

        let mut index = Index {
            config,
            ids,
            data,
            perm: None,
            screen: None,
        };
        match index.config.mode {
            IndexMode::Exact => index.screen = Some(Screen::new(&index.data, index.config.dim)),
            IndexMode::PermPrefix => index.perm = Some(index.build_perm_table()?),
        }
        Ok(index)
    }

    fn build_perm_table(&self) -> Result<PermTable> {
        let n = self.len();
        let p = self.config.num_pivots;
        if p > n {
            return Err(Error::InvalidParameter(format!(
                "num_pivots ({p}) exceeds the number of vectors ({n})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.rng_seed);
        let mut pivot_rows: Vec<u32> = rand::seq::index::sample(&mut rng, n, p)
            .into_iter()
            .map(|i| i as u32)
            .collect();
        pivot_rows.sort_unstable();
        let mut pivot_data = Vec::with_capacity(p * self.config.dim);
        for &r in &pivot_rows {
            pivot_data.extend_from_slice(self.row(r as usize));
        }

        let l = self.config.prefix_len;
        let mut prefixes = Vec::with_capacity(n * l);
        let mut scratch = Vec::with_capacity(p);
        for row in 0..n {
            let v = self.row(row);
            pivot_order(&pivot_data, self.config.dim, &mut scratch, |pv| {
                squared_distance_f32(v, pv)
            });
            prefixes.extend(scratch[..l].iter().map(|s| s.row as u16));
        }
        Ok(PermTable {
            pivot_rows,
            pivot_data,
            prefixes,
        })
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn mode(&self) -> IndexMode {
        self.config.mode
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    fn row(&self, r: usize) -> &[f32] {
        let d = self.config.dim;
        &self.data[r * d..(r + 1) * d]
    }

    /// Stored vectors in id order.
    pub fn vectors(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .zip(self.data.chunks_exact(self.config.dim))
            .map(|(id, v)| (id.as_str(), v))
    }

    /// Ids of the pivots (perm-prefix mode only).
    pub fn pivot_ids(&self) -> Option<Vec<&str>> {
        self.perm.as_ref().map(|t| {
            t.pivot_rows
                .iter()
                .map(|&r| self.ids[r as usize].as_str())
                .collect()
        })
    }

    pub fn knn(&self, query: &[f64], k: usize) -> Result<NeighborList> {
        self.knn_with_budget(query, k, self.config.candidate_budget)
    }

    /// Like [`Index::knn`] with an explicit candidate budget for perm-prefix mode.
    /// The budget is ignored in exact mode.
    pub fn knn_with_budget(&self, query: &[f64], k: usize, budget: usize) -> Result<NeighborList> {
        if query.len() != self.config.dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.dim,
                actual: query.len(),
            });
        }
        if k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if let Some(pos) = query.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "query component {pos} is not finite"
            )));
        }
        let best = match &self.perm {
            None => self.scan_exact(query, k),
            Some(table) => {
                if budget < k {
                    return Err(Error::InvalidParameter(format!(
                        "candidate_budget ({budget}) is smaller than k ({k})"
                    )));
                }
                self.scan_perm(table, query, k, budget)
            }
        };
        Ok(NeighborList {
            entries: best
                .into_iter()
                .map(|s| Neighbor {
                    id: self.ids[s.row as usize].clone(),
                    distance: s.dist,
                })
                .collect(),
        })
    }

    fn scan_exact(&self, query: &[f64], k: usize) -> Vec<Scored> {
        let Some(screen) = &self.screen else {
            return self.scan_all(query, k);
        };
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx2") {
                // SAFETY: the CPU supports AVX2, checked just above.
                return unsafe { self.scan_screened_avx2(screen, query, k) };
            }
        }
        self.scan_screened(screen, query, k)
    }

    fn scan_all(&self, query: &[f64], k: usize) -> Vec<Scored> {
        let mut top = TopK::new(k);
        for (row, v) in self.data.chunks_exact(self.config.dim).enumerate() {
            top.offer(Scored {
                dist: squared_distance_query(query, v).sqrt(),
                row: row as u32,
            });
        }
        top.into_sorted()
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn scan_screened_avx2(&self, screen: &Screen, query: &[f64], k: usize) -> Vec<Scored> {
        self.scan_screened(screen, query, k)
    }

    /// Exact scan that skips rows whose quantized distance proves they cannot
    /// enter the current top `k`. Every row that is kept is measured in f64,
    /// so the result is identical to a plain scan.
    #[inline(always)]
    fn scan_screened(&self, screen: &Screen, query: &[f64], k: usize) -> Vec<Scored> {
        let dim = self.config.dim;
        let (query_codes, query_residual) = screen.quantize(query);
        let mut top = TopK::new(k);
        let mut reach = f64::INFINITY;
        for row in 0..screen.rows {
            if reach.is_finite() {
                // Real distance >= scale * sqrt(code distance) - both residuals,
                // with everything here already divided by the grid step.
                let r = reach + screen.residuals[row];
                let limit = r * r * (1.0 + SCREEN_SLACK);
                if limit < u64::MAX as f64
                    && screen.distance(&query_codes, row, limit as u64) > limit as u64
                {
                    continue;
                }
            }
            let v = &self.data[row * dim..(row + 1) * dim];
            top.offer(Scored {
                dist: squared_distance_query(query, v).sqrt(),
                row: row as u32,
            });
            if let Some(kth) = top.worst() {
                reach = (kth * (1.0 + SCREEN_SLACK) + query_residual) / screen.scale;
            }
        }
        top.into_sorted()
    }

    fn scan_perm(&self, table: &PermTable, query: &[f64], k: usize, budget: usize) -> Vec<Scored> {
        let dim = self.config.dim;
        let p = self.config.num_pivots;
        let l = self.config.prefix_len;

        let mut order = Vec::with_capacity(p);
        pivot_order(&table.pivot_data, dim, &mut order, |pv| {
            squared_distance_query(query, pv)
        });
        let mut query_rank = vec![0u32; p];
        for (pos, s) in order.iter().enumerate() {
            query_rank[s.row as usize] = pos as u32;
        }
        let query_prefix: Vec<u16> = order[..l].iter().map(|s| s.row as u16).collect();

        // Key: longest shared prefix first, then smallest footrule over the prefix.
        let mut keys: Vec<(u64, u32)> = table
            .prefixes
            .chunks_exact(l)
            .enumerate()
            .map(|(row, prefix)| {
                let shared = prefix
                    .iter()
                    .zip(&query_prefix)
                    .take_while(|(a, b)| a == b)
                    .count() as u64;
                let footrule: u64 = prefix
                    .iter()
                    .enumerate()
                    .map(|(i, &piv)| (query_rank[piv as usize] as i64 - i as i64).unsigned_abs())
                    .sum();
                (((l as u64 - shared) << 40) | footrule, row as u32)
            })
            .collect();
        let budget = budget.min(keys.len());
        if budget < keys.len() {
            keys.select_nth_unstable(budget - 1);
            keys.truncate(budget);
        }

        let mut top = TopK::new(k);
        for &(_, row) in &keys {
            top.offer(Scored {
                dist: squared_distance_query(query, self.row(row as usize)).sqrt(),
                row,
            });
        }
        top.into_sorted()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(self.data.len() * 4 + self.ids.len() * 16 + 64);
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        out.extend_from_slice(&(c.dim as u32).to_le_bytes());
        out.push(c.mode.code());
        out.extend_from_slice(&c.rng_seed.to_le_bytes());
        out.extend_from_slice(&(c.num_pivots as u32).to_le_bytes());
        out.extend_from_slice(&(c.prefix_len as u32).to_le_bytes());
        out.extend_from_slice(&(c.candidate_budget as u64).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        for (id, v) in self.vectors() {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        if let Some(t) = &self.perm {
            for (i, &r) in t.pivot_rows.iter().enumerate() {
                out.extend_from_slice(&r.to_le_bytes());
                for x in &t.pivot_data[i * c.dim..(i + 1) * c.dim] {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            for &p in &t.prefixes {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        out.extend_from_slice(INDEX_TRAILER);
        out
    }

    /// Decodes an index image. `dim` must match the stored dimension.
    pub fn from_bytes(bytes: &[u8], dim: usize, origin: &str) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            origin,
        };
        if r.take(4)? != INDEX_MAGIC {
            return Err(Error::format(origin, "not an index file (bad magic)"));
        }
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(Error::format(
                origin,
                format!("unsupported index version {version} (expected {INDEX_VERSION})"),
            ));
        }
        let stored_dim = r.u32()? as usize;
        if stored_dim != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: stored_dim,
            });
        }
        let mode_code = r.take(1)?[0];
        let mode = IndexMode::from_code(mode_code)
            .ok_or_else(|| Error::format(origin, format!("unknown index mode code {mode_code}")))?;
        let config = IndexConfig {
            dim,
            mode,
            rng_seed: r.u64()?,
            num_pivots: r.u32()? as usize,
            prefix_len: r.u32()? as usize,
            candidate_budget: r.u64()? as usize,
        };
        config
            .validate()
            .map_err(|e| Error::format(origin, e.to_string()))?;
        let count = r.u64()? as usize;
        if count == 0 {
            return Err(Error::format(origin, "index holds zero vectors"));
        }

        let mut ids = Vec::with_capacity(count.min(1 << 24));
        let mut data = Vec::with_capacity(count.min(1 << 24) * dim);
        for _ in 0..count {
            let len = r.u16()? as usize;
            let id = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format(origin, "id is not UTF-8"))?
                .to_string();
            if let Some(prev) = ids.last() {
                if *prev >= id {
                    return Err(Error::format(origin, "ids are not strictly ascending"));
                }
            }
            r.f32s(dim, &mut data)?;
            ids.push(id);
        }

        let perm = if mode == IndexMode::PermPrefix {
            let p = config.num_pivots;
            let mut pivot_rows = Vec::with_capacity(p);
            let mut pivot_data = Vec::with_capacity(p * dim);
            for _ in 0..p {
                let row = r.u32()?;
                if row as usize >= count {
                    return Err(Error::format(origin, "pivot row out of range"));
                }
                pivot_rows.push(row);
                r.f32s(dim, &mut pivot_data)?;
            }
            let total = count * config.prefix_len;
            let raw = r.take(total * 2)?;
            let prefixes: Vec<u16> = raw
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect();
            if prefixes.iter().any(|&x| x as usize >= p) {
                return Err(Error::format(origin, "pivot reference out of range"));
            }
            Some(PermTable {
                pivot_rows,
                pivot_data,
                prefixes,
            })
        } else {
            None
        };
        if r.take(4)? != INDEX_TRAILER {
            return Err(Error::format(origin, "missing index trailer"));
        }
        if r.pos != bytes.len() {
            return Err(Error::format(origin, "trailing bytes after index"));
        }
        let screen = match config.mode {
            IndexMode::Exact => Some(Screen::new(&data, dim)),
            IndexMode::PermPrefix => None,
        };
        Ok(Index {
            config,
            ids,
            data,
            perm,
            screen,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fsutil::write_atomic(path.as_ref(), &self.to_bytes())
    }

    /// Loads an index written by [`Index::save`]. The stored layout (mode,
    /// pivots, seed) is authoritative; `config.dim` must agree with it and
    /// `config.candidate_budget` replaces the stored query budget.
    pub fn load(path: impl AsRef<Path>, config: &IndexConfig) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut index = Index::from_bytes(&bytes, config.dim, &fsutil::display(path))?;
        if config.candidate_budget == 0 {
            return Err(Error::InvalidParameter(
                "candidate_budget must be positive".into(),
            ));
        }
        index.config.candidate_budget = config.candidate_budget;
        Ok(index)
    }
}

/// Fills `out` with pivots sorted by distance (ties by pivot index).
fn pivot_order(
    pivot_data: &[f32],
    dim: usize,
    out: &mut Vec<Scored>,
    mut dist: impl FnMut(&[f32]) -> f64,
) {
    out.clear();
    out.extend(
        pivot_data
            .chunks_exact(dim)
            .enumerate()
            .map(|(i, pv)| Scored {
                dist: dist(pv),
                row: i as u32,
            }),
    );
    out.sort_unstable();
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(self.origin, format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, out: &mut Vec<f32>) -> Result<()> {
        let raw = self.take(n * 4)?;
        out.extend(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        );
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(id: &str, v: &[f32]) -> FeatureVector {
        FeatureVector::new(id, v.to_vec())
    }

    fn toy() -> Index {
        Index::build(
            vec![
                fv("a", &[0.0, 0.0]),
                fv("b", &[1.0, 0.0]),
                fv("c", &[3.0, 0.0]),
            ],
            IndexConfig::exact(2),
        )
        .unwrap()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(distance(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!((distance(&[0.9, 0.0], &[1.0, 0.0]).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn distance_dimension_mismatch_names_both_lengths() {
        let err = distance(&[0.0; 3], &[0.0; 2]).unwrap_err().to_string();
        assert!(err.contains('3') && err.contains('2'), "{err}");
    }

    #[test]
    fn knn_toy_example() {
        let idx = toy();
        assert_eq!(idx.len(), 3);
        let nl = idx.knn(&[0.9, 0.0], 2).unwrap();
        let ids: Vec<_> = nl.ids().collect();
        assert_eq!(ids, ["b", "a"]);
        assert!((nl.entries[0].distance - 0.1).abs() < 1e-12);
        assert!((nl.entries[1].distance - 0.9).abs() < 1e-12);
    }

    #[test]
    fn knn_query_on_stored_vector() {
        let nl = toy().knn(&[3.0, 0.0], 1).unwrap();
        assert_eq!(
            nl.entries,
            vec![Neighbor {
                id: "c".into(),
                distance: 0.0
            }]
        );
    }

    #[test]
    fn knn_returns_fewer_when_index_is_small() {
        assert_eq!(toy().knn(&[0.0, 0.0], 10).unwrap().len(), 3);
    }

    #[test]
    fn ties_break_by_id() {
        let idx = Index::build(
            vec![fv("z", &[1.0]), fv("m", &[-1.0]), fv("a", &[1.0])],
            IndexConfig::exact(1),
        )
        .unwrap();
        let ids: Vec<_> = idx
            .knn(&[0.0], 3)
            .unwrap()
            .ids()
            .map(String::from)
            .collect();
        assert_eq!(ids, ["a", "m", "z"]);
    }

    #[test]
    fn knn_errors() {
        let idx = toy();
        assert!(matches!(
            idx.knn(&[0.0], 1),
            Err(Error::DimensionMismatch {
                expected: 2,
                actual: 1
            })
        ));
        assert!(idx.knn(&[0.0, 0.0], 0).is_err());
    }

    #[test]
    fn build_errors() {
        assert!(matches!(
            Index::build(vec![], IndexConfig::exact(2)),
            Err(Error::Empty(_))
        ));
        let err = Index::build(
            vec![fv("dup", &[0.0, 0.0]), fv("dup", &[1.0, 1.0])],
            IndexConfig::exact(2),
        )
        .unwrap_err();
        assert!(err.to_string().contains("dup"));
        let too_many_pivots = IndexConfig::perm_prefix(2, 4, 2, 10, 0);
        assert!(Index::build(vec![fv("a", &[0.0, 0.0])], too_many_pivots).is_err());
        let bad_prefix = IndexConfig::perm_prefix(2, 2, 3, 10, 0);
        assert!(bad_prefix.validate().is_err());
    }

    #[test]
    fn perm_budget_smaller_than_k_is_rejected() {
        let vs: Vec<_> = (0..20)
            .map(|i| fv(&format!("v{i:02}"), &[i as f32, 0.0]))
            .collect();
        let idx = Index::build(vs, IndexConfig::perm_prefix(2, 4, 2, 5, 3)).unwrap();
        assert!(idx.knn(&[0.0, 0.0], 6).is_err());
        assert_eq!(idx.knn(&[0.0, 0.0], 5).unwrap().len(), 5);
    }

    #[test]
    fn perm_with_full_budget_equals_exact() {
        let vs: Vec<_> = (0..50)
            .map(|i| fv(&format!("v{i:02}"), &[(i * 7 % 13) as f32, (i % 5) as f32]))
            .collect();
        let exact = Index::build(vs.clone(), IndexConfig::exact(2)).unwrap();
        let perm = Index::build(vs, IndexConfig::perm_prefix(2, 6, 3, 50, 9)).unwrap();
        for q in [[0.5, 0.5], [12.0, 4.0], [6.2, 2.1]] {
            assert_eq!(exact.knn(&q, 7).unwrap(), perm.knn(&q, 7).unwrap());
        }
    }

    #[test]
    fn byte_round_trip_preserves_everything() {
        let vs: Vec<_> = (0..30)
            .map(|i| fv(&format!("v{i}"), &[i as f32, 1.5]))
            .collect();
        let idx = Index::build(vs, IndexConfig::perm_prefix(2, 5, 2, 8, 4)).unwrap();
        let bytes = idx.to_bytes();
        let back = Index::from_bytes(&bytes, 2, "mem").unwrap();
        assert_eq!(back, idx);
    }

    #[test]
    fn corrupt_images_fail_loudly() {
        let bytes = toy().to_bytes();
        for cut in [0, 3, 10, bytes.len() - 5, bytes.len() - 1] {
            assert!(
                Index::from_bytes(&bytes[..cut], 2, "mem").is_err(),
                "cut {cut}"
            );
        }
        let mut wrong_version = bytes.clone();
        wrong_version[4] = 9;
        let err = Index::from_bytes(&wrong_version, 2, "mem").unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
        assert!(matches!(
            Index::from_bytes(&bytes, 3, "mem"),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
