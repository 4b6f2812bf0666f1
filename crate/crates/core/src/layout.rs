//! Pathway-structured covariates, survival outcomes, and the flat coefficient index.
//!
//! Pathways and within-pathway positions are zero-based here. A gene that
//! belongs to several pathways occupies one column per pathway.
//!
//! Flat coefficient order: all main effects grouped by pathway, then the
//! interaction blocks `(k, k')` with `k ≤ k'` in lexicographic order, pairs
//! `(j, l)` lexicographic inside each block. Within-pathway pairs require
//! `l > j`.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Pathway membership: for every pathway, the distinct gene ids in position order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawLayout", into = "RawLayout")]
pub struct PathwayLayout {
    pathways: Vec<Vec<usize>>,
    n_genes: usize,
    offsets: Vec<usize>,
}

impl PathwayLayout {
    /// Builds a layout from per-pathway gene lists over `n_genes` distinct genes.
    pub fn new(pathways: Vec<Vec<usize>>, n_genes: usize) -> Result<Self> {
        if pathways.is_empty() {
            return Err(Error::Structural("layout has no pathways".into()));
        }
        for (k, genes) in pathways.iter().enumerate() {
            if genes.is_empty() {
                return Err(Error::Structural(format!("pathway {k} is empty")));
            }
            let mut seen = genes.clone();
            seen.sort_unstable();
            if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::Structural(format!(
                    "gene {} listed twice in pathway {k}",
                    w[0]
                )));
            }
            if let Some(&g) = seen.last().filter(|&&g| g >= n_genes) {
                return Err(Error::Structural(format!(
                    "gene id {g} in pathway {k} exceeds gene count {n_genes}"
                )));
            }
        }
        let mut layout = PathwayLayout {
            pathways,
            n_genes,
            offsets: Vec::new(),
        };
        layout.rebuild_offsets();
        Ok(layout)
    }

    /// Builds a layout from `(pathway, gene)` membership pairs; pathway ids must be `0..K`.
    pub fn from_membership(pairs: &[(usize, usize)], n_genes: usize) -> Result<Self> {
        let k = pairs.iter().map(|&(k, _)| k + 1).max().unwrap_or(0);
        let mut pathways = vec![Vec::new(); k];
        for &(k, g) in pairs {
            pathways[k].push(g);
        }
        Self::new(pathways, n_genes)
    }

    fn rebuild_offsets(&mut self) {
        let mut acc = 0;
        self.offsets = self
            .pathways
            .iter()
            .map(|g| {
                let o = acc;
                acc += g.len();
                o
            })
            .collect();
    }

    pub fn n_pathways(&self) -> usize {
        self.pathways.len()
    }

    /// Distinct gene count.
    pub fn n_genes(&self) -> usize {
        self.n_genes
    }

    /// Total column count after duplication, `Σ p_k`.
    pub fn p(&self) -> usize {
        self.pathways.iter().map(Vec::len).sum()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.pathways.iter().map(Vec::len).collect()
    }

    pub fn pathway(&self, k: usize) -> &[usize] {
        &self.pathways[k]
    }

    pub fn pathways(&self) -> &[Vec<usize>] {
        &self.pathways
    }

    /// `(pathway, gene)` pairs in column order.
    pub fn membership(&self) -> Vec<(usize, usize)> {
        self.pathways
            .iter()
            .enumerate()
            .flat_map(|(k, g)| g.iter().map(move |&g| (k, g)))
            .collect()
    }

    /// Column of position `j` in pathway `k`.
    pub fn column(&self, k: usize, j: usize) -> usize {
        self.offsets[k] + j
    }

    pub fn offset(&self, k: usize) -> usize {
        self.offsets[k]
    }

    /// Distinct gene behind each column.
    pub fn column_genes(&self) -> Vec<usize> {
        self.pathways.iter().flatten().copied().collect()
    }
}

#[derive(Serialize, Deserialize)]
struct RawLayout {
    pathways: Vec<Vec<usize>>,
    n_genes: usize,
}

impl TryFrom<RawLayout> for PathwayLayout {
    type Error = Error;
    fn try_from(raw: RawLayout) -> Result<Self> {
        PathwayLayout::new(raw.pathways, raw.n_genes)
    }
}

impl From<PathwayLayout> for RawLayout {
    fn from(l: PathwayLayout) -> Self {
        RawLayout {
            pathways: l.pathways,
            n_genes: l.n_genes,
        }
    }
}

/// Address of a coefficient in pathway terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CoefficientIndex {
    Main { k: usize, j: usize },
    /// Interaction between position `j` of pathway `k` and position `l` of
    /// pathway `k2`, with `k ≤ k2` and `l > j` when `k == k2`.
    Interaction { k: usize, k2: usize, j: usize, l: usize },
}

/// Coefficients sharing one higher-level indicator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub k: usize,
    pub k2: usize,
    /// Main effects of pathway `k` (empty unless `k == k2`).
    pub mains: Range<usize>,
    pub interactions: Range<usize>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.mains.len() + self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_pathway(&self) -> bool {
        self.k == self.k2
    }

    pub fn coefficients(&self) -> impl Iterator<Item = usize> + '_ {
        self.mains.clone().chain(self.interactions.clone())
    }
}

/// Bijection between flat coefficient indices and pathway addressing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMap {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    p: usize,
    col_pathway: Vec<u32>,
    col_pos: Vec<u32>,
    /// Column pair of each interaction, indexed by `flat − p`.
    pairs: Vec<(u32, u32)>,
    /// Block id of each flat coefficient.
    block_of: Vec<u32>,
    blocks: Vec<Block>,
    /// `block_id[k * K + k2]` for `k ≤ k2`.
    block_id: Vec<usize>,
    /// CSR incidence of main effects in interactions: `(interaction flat, partner column)`.
    inc_start: Vec<usize>,
    inc: Vec<(u32, u32)>,
}

impl IndexMap {
    pub fn build(layout: &PathwayLayout) -> Result<Self> {
        let sizes = layout.sizes();
        let kk = sizes.len();
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::Structural("empty pathway".into()));
        }
        let p: usize = sizes.iter().sum();
        let n_coef = p * (p + 1) / 2;
        if n_coef > u32::MAX as usize {
            return Err(Error::Capacity(format!("{n_coef} coefficients exceed index width")));
        }
        let mut offsets = Vec::with_capacity(kk);
        let mut col_pathway = Vec::with_capacity(p);
        let mut col_pos = Vec::with_capacity(p);
        let mut acc = 0;
        for (k, &s) in sizes.iter().enumerate() {
            offsets.push(acc);
            for j in 0..s {
                col_pathway.push(k as u32);
                col_pos.push(j as u32);
            }
            acc += s;
        }

        let mut blocks = Vec::with_capacity(kk * (kk + 1) / 2);
        let mut block_id = vec![usize::MAX; kk * kk];
        let mut pairs = Vec::with_capacity(n_coef - p);
        let mut block_of = vec![0u32; n_coef];
        let mut next = p;
        for k in 0..kk {
            for k2 in k..kk {
                let id = blocks.len();
                block_id[k * kk + k2] = id;
                let start = next;
                for j in 0..sizes[k] {
                    let l0 = if k2 == k { j + 1 } else { 0 };
                    for l in l0..sizes[k2] {
                        pairs.push(((offsets[k] + j) as u32, (offsets[k2] + l) as u32));
                        block_of[next] = id as u32;
                        next += 1;
                    }
                }
                let mains = if k == k2 {
                    for c in offsets[k]..offsets[k] + sizes[k] {
                        block_of[c] = id as u32;
                    }
                    offsets[k]..offsets[k] + sizes[k]
                } else {
                    0..0
                };
                blocks.push(Block {
                    k,
                    k2,
                    mains,
                    interactions: start..next,
                });
            }
        }
        debug_assert_eq!(next, n_coef);

        let mut degree = vec![0usize; p];
        for &(u, v) in &pairs {
            degree[u as usize] += 1;
            degree[v as usize] += 1;
        }
        let mut inc_start = Vec::with_capacity(p + 1);
        let mut total = 0;
        inc_start.push(0);
        for d in &degree {
            total += d;
            inc_start.push(total);
        }
        let mut fill = inc_start.clone();
        let mut inc = vec![(0u32, 0u32); total];
        for (t, &(u, v)) in pairs.iter().enumerate() {
            let flat = (p + t) as u32;
            inc[fill[u as usize]] = (flat, v);
            fill[u as usize] += 1;
            inc[fill[v as usize]] = (flat, u);
            fill[v as usize] += 1;
        }

        Ok(IndexMap {
            sizes,
            offsets,
            p,
            col_pathway,
            col_pos,
            pairs,
            block_of,
            blocks,
            block_id,
            inc_start,
            inc,
        })
    }

    /// Column count `p`; also the number of main effects.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_pathways(&self) -> usize {
        self.sizes.len()
    }

    /// Total coefficient count `p(p+1)/2`.
    pub fn len(&self) -> usize {
        self.block_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.block_of.is_empty()
    }

    pub fn n_interactions(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_main(&self, flat: usize) -> bool {
        flat < self.p
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, id: usize) -> &Block {
        &self.blocks[id]
    }

    /// Block id of `(k, k2)` for any order of the two pathways.
    pub fn block_id(&self, k: usize, k2: usize) -> Result<usize> {
        let kk = self.sizes.len();
        let (a, b) = if k <= k2 { (k, k2) } else { (k2, k) };
        if b >= kk {
            return Err(Error::Structural(format!("pathway pair ({k}, {k2}) out of range")));
        }
        Ok(self.block_id[a * kk + b])
    }

    pub fn block_of(&self, flat: usize) -> usize {
        self.block_of[flat] as usize
    }

    /// Columns multiplied by a coefficient: `(c, c)` for a main effect.
    #[inline]
    pub fn columns(&self, flat: usize) -> (usize, usize) {
        if flat < self.p {
            (flat, flat)
        } else {
            let (u, v) = self.pairs[flat - self.p];
            (u as usize, v as usize)
        }
    }

    /// Interactions containing main effect `c`, as `(interaction, partner column)`.
    #[inline]
    pub fn incident(&self, c: usize) -> &[(u32, u32)] {
        &self.inc[self.inc_start[c]..self.inc_start[c + 1]]
    }

    fn column(&self, k: usize, j: usize) -> Result<usize> {
        if k >= self.sizes.len() || j >= self.sizes[k] {
            return Err(Error::Structural(format!("position ({k}, {j}) out of range")));
        }
        Ok(self.offsets[k] + j)
    }

    pub fn flatten(&self, idx: CoefficientIndex) -> Result<usize> {
        match idx {
            CoefficientIndex::Main { k, j } => self.column(k, j),
            CoefficientIndex::Interaction { k, k2, j, l } => {
                self.column(k, j)?;
                self.column(k2, l)?;
                if k2 < k || (k2 == k && l <= j) {
                    return Err(Error::Structural(format!(
                        "interaction ({k},{k2};{j},{l}) is not in canonical order"
                    )));
                }
                let block = &self.blocks[self.block_id(k, k2)?];
                let local = if k == k2 {
                    let s = self.sizes[k];
                    j * s - j * (j + 1) / 2 + (l - j - 1)
                } else {
                    j * self.sizes[k2] + l
                };
                Ok(block.interactions.start + local)
            }
        }
    }

    pub fn unflatten(&self, flat: usize) -> Result<CoefficientIndex> {
        if flat >= self.len() {
            return Err(Error::Structural(format!(
                "flat index {flat} out of range 0..{}",
                self.len()
            )));
        }
        if flat < self.p {
            return Ok(CoefficientIndex::Main {
                k: self.col_pathway[flat] as usize,
                j: self.col_pos[flat] as usize,
            });
        }
        let (u, v) = self.pairs[flat - self.p];
        Ok(CoefficientIndex::Interaction {
            k: self.col_pathway[u as usize] as usize,
            k2: self.col_pathway[v as usize] as usize,
            j: self.col_pos[u as usize] as usize,
            l: self.col_pos[v as usize] as usize,
        })
    }
}

/// Right-censored survival data over a pathway-aligned design.
///
/// `time[i]` is the observed log-time: `y*` when `delta[i]` is true, the log
/// censoring bound `c` otherwise.
#[derive(Debug, Clone)]
pub struct SurvivalDataset<F> {
    layout: Arc<PathwayLayout>,
    index: Arc<IndexMap>,
    n: usize,
    /// Column-major `n × p` pathway-aligned design.
    x: Vec<F>,
    time: Vec<F>,
    delta: Vec<bool>,
}

impl<F: Real> SurvivalDataset<F> {
    /// Builds a dataset from a distinct-gene design (`n × n_genes`, row-major),
    /// duplicating columns of genes that belong to several pathways.
    pub fn from_gene_matrix(
        layout: PathwayLayout,
        genes_row_major: &[F],
        time: Vec<F>,
        delta: Vec<bool>,
    ) -> Result<Self> {
        let n = time.len();
        let g = layout.n_genes();
        if genes_row_major.len() != n * g {
            return Err(Error::Structural(format!(
                "gene matrix has {} values, expected {n} × {g}",
                genes_row_major.len()
            )));
        }
        let cols = layout.column_genes();
        let mut x = Vec::with_capacity(n * cols.len());
        for &gene in &cols {
            x.extend((0..n).map(|i| genes_row_major[i * g + gene]));
        }
        Self::from_columns(Arc::new(layout), x, time, delta)
    }

    /// Builds a dataset from an already pathway-aligned column-major design.
    pub fn from_columns(
        layout: Arc<PathwayLayout>,
        x_col_major: Vec<F>,
        time: Vec<F>,
        delta: Vec<bool>,
    ) -> Result<Self> {
        let index = Arc::new(IndexMap::build(&layout)?);
        Self::with_index(layout, index, x_col_major, time, delta)
    }

    pub(crate) fn with_index(
        layout: Arc<PathwayLayout>,
        index: Arc<IndexMap>,
        x: Vec<F>,
        time: Vec<F>,
        delta: Vec<bool>,
    ) -> Result<Self> {
        let n = time.len();
        let p = layout.p();
        if delta.len() != n {
            return Err(Error::Structural(format!(
                "{} event indicators for {n} subjects",
                delta.len()
            )));
        }
        if x.len() != n * p {
            return Err(Error::Structural(format!(
                "design has {} values, expected {n} × {p}",
                x.len()
            )));
        }
        if let Some(i) = time.iter().position(|t| !t.is_finite()) {
            return Err(Error::Domain(format!("log-time of subject {i} is not finite")));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "covariate (subject {}, column {}) is not finite",
                pos % n.max(1),
                pos / n.max(1)
            )));
        }
        Ok(SurvivalDataset {
            layout,
            index,
            n,
            x,
            time,
            delta,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of observed events.
    pub fn n_events(&self) -> usize {
        self.delta.iter().filter(|&&d| d).count()
    }

    pub fn layout(&self) -> &PathwayLayout {
        &self.layout
    }

    pub fn layout_arc(&self) -> &Arc<PathwayLayout> {
        &self.layout
    }

    pub fn index(&self) -> &IndexMap {
        &self.index
    }

    pub fn time(&self) -> &[F] {
        &self.time
    }

    pub fn delta(&self) -> &[bool] {
        &self.delta
    }

    /// `y*_i` for an observed subject.
    pub fn y_star(&self, i: usize) -> Option<F> {
        self.delta[i].then(|| self.time[i])
    }

    /// `c_i` for a censored subject.
    pub fn censor_bound(&self, i: usize) -> Option<F> {
        (!self.delta[i]).then(|| self.time[i])
    }

    /// Indices of censored subjects in ascending order.
    pub fn censored(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| !self.delta[i]).collect()
    }

    /// Raw pathway-aligned column `c`.
    #[inline]
    pub fn col(&self, c: usize) -> &[F] {
        &self.x[c * self.n..(c + 1) * self.n]
    }

    pub fn x_col_major(&self) -> &[F] {
        &self.x
    }

    /// Design column of coefficient `flat`, materialized.
    pub fn interaction_column(&self, flat: usize) -> Result<Vec<F>> {
        if flat >= self.index.len() {
            return Err(Error::Structural(format!("coefficient {flat} out of range")));
        }
        let (u, v) = self.index.columns(flat);
        if u == v {
            Ok(self.col(u).to_vec())
        } else {
            Ok(self.col(u).iter().zip(self.col(v)).map(|(&a, &b)| a * b).collect())
        }
    }

    /// `Σ_i x̃_ij²` for one coefficient.
    pub fn gram_diag_one(&self, flat: usize) -> F {
        let (u, v) = self.index.columns(flat);
        let (a, b) = (self.col(u), self.col(v));
        if u == v {
            a.iter().map(|&x| x * x).sum()
        } else {
            a.iter().zip(b).map(|(&x, &y)| (x * y) * (x * y)).sum()
        }
    }

    /// Gram diagonal for every coefficient.
    pub fn gram_diag(&self) -> Vec<F> {
        (0..self.index.len()).map(|j| self.gram_diag_one(j)).collect()
    }

    /// Linear predictor `x̃_i w` for every subject.
    pub fn linear_predictor(&self, w: &[F]) -> Vec<F> {
        let mut eta = vec![F::zero(); self.n];
        for (j, &wj) in w.iter().enumerate() {
            if wj == F::zero() {
                continue;
            }
            let (u, v) = self.index.columns(j);
            if u == v {
                for (e, &a) in eta.iter_mut().zip(self.col(u)) {
                    *e += wj * a;
                }
            } else {
                for ((e, &a), &b) in eta.iter_mut().zip(self.col(u)).zip(self.col(v)) {
                    *e += wj * (a * b);
                }
            }
        }
        eta
    }

    /// Restricts the dataset to the given subjects, sharing layout and index.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&r) = rows.iter().find(|&&r| r >= self.n) {
            return Err(Error::Structural(format!("row {r} out of range")));
        }
        let p = self.layout.p();
        let mut x = Vec::with_capacity(rows.len() * p);
        for c in 0..p {
            let col = self.col(c);
            x.extend(rows.iter().map(|&r| col[r]));
        }
        Self::with_index(
            self.layout.clone(),
            self.index.clone(),
            x,
            rows.iter().map(|&r| self.time[r]).collect(),
            rows.iter().map(|&r| self.delta[r]).collect(),
        )
    }

    /// Copy with every subject marked as observed.
    pub fn with_all_observed(&self) -> Self {
        SurvivalDataset {
            delta: vec![true; self.n],
            ..self.clone()
        }
    }

    /// Converts the scalar type.
    pub fn cast<G: Real>(&self) -> SurvivalDataset<G> {
        let conv = |v: &F| G::lit(v.as_f64());
        SurvivalDataset {
            layout: self.layout.clone(),
            index: self.index.clone(),
            n: self.n,
            x: self.x.iter().map(conv).collect(),
            time: self.time.iter().map(conv).collect(),
            delta: self.delta.clone(),
        }
    }

    /// Centers and scales every column to unit sample variance.
    pub fn standardized(&self) -> Self {
        let n = self.n;
        let mut x = self.x.clone();
        for col in x.chunks_mut(n.max(1)) {
            let mean = col.iter().copied().sum::<F>() / F::count(n);
            let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>()
                / F::count(n.saturating_sub(1).max(1));
            let sd = if var > F::zero() { var.sqrt() } else { F::one() };
            for v in col.iter_mut() {
                *v = (*v - mean) / sd;
            }
        }
        SurvivalDataset { x, ..self.clone() }
    }
}
