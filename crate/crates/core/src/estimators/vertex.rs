//! Signed vertex expansion of a hyper-rectangle into one-sided (CDF) queries.
//!
//! For `q = (a_1, b_1] x ... x (a_n, b_n]` the selectivity is
//! `sum_v sgn(v) F(v)` over the `2^n_c` vertices `v in {a_i, b_i}` of the
//! constrained columns, with `sgn(v) = (-1)^{#a(v)}` where `#a(v)` counts the
//! lower endpoints used by `v`. Free columns sit at coordinate 1. A vertex
//! with any coordinate equal to 0 has `F(v) = 0` and is skipped.

use serde::{Deserialize, Serialize};

use crate::query::RangeQuery;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexTerm {
    /// `+1.0` or `-1.0`.
    pub sign: f64,
    pub vertex: Vec<f64>,
    /// `#a(v)`: how many lower endpoints the vertex takes.
    pub lower_count: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdfVertexExpansion {
    pub terms: Vec<VertexTerm>,
    pub skipped_zero_vertices: usize,
}

impl CdfVertexExpansion {
    /// Number of enumerated vertices, `2^n_c`.
    pub fn n_vertices(&self) -> usize {
        self.terms.len() + self.skipped_zero_vertices
    }

    /// `sum_v sgn(v) F(v)` for a point function `F`.
    pub fn aggregate(&self, mut cdf: impl FnMut(&[f64]) -> f64) -> f64 {
        self.terms.iter().map(|t| t.sign * cdf(&t.vertex)).sum()
    }
}

/// Enumerate vertices in mask order: bit `j` of the mask picks the lower
/// endpoint of the `j`-th constrained column. Mask 0 is the all-upper vertex.
pub fn expand_query(q: &RangeQuery) -> CdfVertexExpansion {
    let cols: Vec<usize> = q.constrained_columns().collect();
    assert!(cols.len() < usize::BITS as usize, "too many constrained columns");
    let mut terms = Vec::new();
    let mut skipped = 0;
    let base: Vec<f64> = vec![1.0; q.dims()];
    for mask in 0usize..(1usize << cols.len()) {
        let mut v = base.clone();
        for (j, &c) in cols.iter().enumerate() {
            let iv = q.bound(c).expect("constrained");
            v[c] = if mask >> j & 1 == 1 { iv.lo } else { iv.hi };
        }
        if v.iter().any(|&x| x == 0.0) {
            skipped += 1;
            continue;
        }
        let lower_count = mask.count_ones();
        terms.push(VertexTerm {
            sign: if lower_count % 2 == 0 { 1.0 } else { -1.0 },
            vertex: v,
            lower_count,
        });
    }
    CdfVertexExpansion {
        terms,
        skipped_zero_vertices: skipped,
    }
}

/// Flattened expansions of many queries, computed once and reused.
#[derive(Clone, Debug, Default)]
pub struct VertexCache {
    dims: usize,
    vertices: Vec<f64>,
    signs: Vec<f64>,
    /// `offsets[i]..offsets[i + 1]` are the terms of query `i`.
    offsets: Vec<usize>,
}

impl VertexCache {
    pub fn build<'a>(dims: usize, queries: impl IntoIterator<Item = &'a RangeQuery>) -> Self {
        let mut cache = VertexCache {
            dims,
            vertices: Vec::new(),
            signs: Vec::new(),
            offsets: vec![0],
        };
        for q in queries {
            cache.push(&expand_query(q));
        }
        cache
    }

    pub fn push(&mut self, e: &CdfVertexExpansion) {
        for t in &e.terms {
            self.vertices.extend_from_slice(&t.vertex);
            self.signs.push(t.sign);
        }
        self.offsets.push(self.signs.len());
    }

    pub fn n_queries(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_terms(&self) -> usize {
        self.signs.len()
    }

    pub fn term_range(&self, query: usize) -> std::ops::Range<usize> {
        self.offsets[query]..self.offsets[query + 1]
    }

    pub fn vertex(&self, term: usize) -> &[f64] {
        &self.vertices[term * self.dims..(term + 1) * self.dims]
    }

    pub fn sign(&self, term: usize) -> f64 {
        self.signs[term]
    }
}
