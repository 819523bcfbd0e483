//! Asymmetric LSH for maximum inner-product search over a layer's weight
//! columns.
//!
//! Data vectors (weight columns) are scaled so the largest has norm `C < 1` and
//! padded with `‖w‖², ‖w‖⁴, …, ‖w‖^(2^m)`; queries are unit-normalized and
//! padded with `m` copies of `1/2`. In that transformed space the squared
//! distance is `1 + m/4 − 2⟨q, w⟩ + ‖w‖^(2^(m+1))`, so nearest neighbours are
//! (up to a vanishing term) maximum inner products. Each of the `L` tables
//! hashes with `K` random Gaussian hyperplanes (sign bits).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, flops, norm, DenseMatrix, DenseVector, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlshParams {
    /// Sign bits per table.
    pub k_bits: usize,
    /// Number of tables.
    pub tables: usize,
    /// Padding terms appended by the P and Q transforms.
    pub padding: usize,
    /// Largest column norm after scaling.
    pub norm_bound: f64,
}

impl Default for AlshParams {
    fn default() -> Self {
        AlshParams {
            k_bits: 6,
            tables: 5,
            padding: 3,
            norm_bound: 0.83,
        }
    }
}

impl AlshParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_bits == 0 || self.k_bits > 30 {
            return Err(Error::param(format!("K={} must be in 1..=30", self.k_bits)));
        }
        if self.tables == 0 {
            return Err(Error::param("L must be at least 1"));
        }
        if self.padding == 0 {
            return Err(Error::param("m must be at least 1"));
        }
        if !(self.norm_bound > 0.0 && self.norm_bound < 1.0) {
            return Err(Error::param(format!("C={} must be in (0, 1)", self.norm_bound)));
        }
        Ok(())
    }
}

/// Data-side transform: `[w'; ‖w'‖^2, ‖w'‖^4, …, ‖w'‖^(2^m)]` with `w' = w / scale`.
pub fn transform_p(w: &[f64], padding: usize, scale: f64) -> Result<DenseVector> {
    let mut out: Vec<f64> = w.iter().map(|v| v / scale).collect();
    let n = norm(&out);
    if n > 1.0 {
        return Err(Error::NormBound { norm: n });
    }
    let mut pow = n;
    for _ in 0..padding {
        pow *= pow;
        out.push(pow);
    }
    Ok(DenseVector::from(out))
}

/// Query-side transform: `[a / ‖a‖; 1/2 × m]`. A zero query is padded without
/// normalization.
pub fn transform_q(a: &[f64], padding: usize) -> DenseVector {
    let n = norm(a);
    let mut out: Vec<f64> = if n > 0.0 {
        a.iter().map(|v| v / n).collect()
    } else {
        a.to_vec()
    };
    out.extend(std::iter::repeat_n(0.5, padding));
    DenseVector::from(out)
}

/// `1 − (1 − p^K)^L`: chance that a vector agreeing with the query on each
/// hyperplane with probability `p` shares at least one of `L` buckets.
pub fn collision_probability(p: f64, k_bits: usize, tables: usize) -> f64 {
    1.0 - (1.0 - p.powi(k_bits as i32)).powi(tables as i32)
}

/// Per-hyperplane agreement probability of sign projections, `1 − θ/π`.
pub fn sign_agreement_probability(x: &[f64], y: &[f64]) -> f64 {
    let (nx, ny) = (norm(x), norm(y));
    if nx == 0.0 || ny == 0.0 {
        return 0.5;
    }
    let cos = (dot(x, y) / (nx * ny)).clamp(-1.0, 1.0);
    1.0 - cos.acos() / std::f64::consts::PI
}

/// Whether tables should be rebuilt after `samples_seen` training samples:
/// every 100 samples up to 10 000, every 1000 afterwards.
pub fn rebuild_schedule(samples_seen: u64) -> bool {
    if samples_seen <= 10_000 {
        samples_seen % 100 == 0
    } else {
        samples_seen % 1000 == 0
    }
}

/// Nodes selected for one input.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ActiveSet {
    pub layer: usize,
    pub nodes: Vec<usize>,
}

impl ActiveSet {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Table {
    // k_bits hyperplanes of dimension dim + padding, row-major
    planes: DenseMatrix,
    buckets: Vec<Vec<usize>>,
}

/// `L` hash tables over the columns of one weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AlshIndex {
    params: AlshParams,
    layer: usize,
    seed: u64,
    dim: usize,
    n_columns: usize,
    scale: f64,
    tables: Vec<Table>,
}

/// Bucket occupancy of one table, for diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct TableOccupancy {
    pub table: usize,
    pub bucket_sizes: Vec<usize>,
    pub nonempty_buckets: usize,
    pub largest_bucket: usize,
}

impl AlshIndex {
    /// Index `columns` (all of equal length). Hyperplanes for table `t` come
    /// from stream `t` of `seed`, so the same seed always yields the same
    /// hash functions and adding tables leaves the existing ones unchanged.
    pub fn build(columns: &[DenseVector], params: AlshParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let dim = columns
            .first()
            .ok_or_else(|| Error::param("cannot index an empty column set"))?
            .len();
        if columns.iter().any(|c| c.len() != dim) {
            return Err(Error::dim("AlshIndex::build", "columns differ in length"));
        }
        let mut index = AlshIndex {
            params,
            layer: 0,
            seed,
            dim,
            n_columns: columns.len(),
            scale: 1.0,
            tables: Vec::new(),
        };
        index.tables = (0..params.tables)
            .map(|t| {
                let mut rng = Rng::new(seed, t as u64);
                Table {
                    planes: DenseMatrix::from_fn(params.k_bits, dim + params.padding, |_, _| rng.gauss()),
                    buckets: vec![Vec::new(); 1 << params.k_bits],
                }
            })
            .collect();
        index.fill(columns.iter().map(|c| c.as_slice()))?;
        Ok(index)
    }

    /// Index the columns of a weight matrix (one column per output node).
    pub fn for_weights(w: &DenseMatrix, params: AlshParams, seed: u64, layer: usize) -> Result<Self> {
        let mut idx = Self::build(&w.columns(), params, seed)?;
        idx.layer = layer;
        Ok(idx)
    }

    /// Re-hash `w`'s columns with the existing hyperplanes.
    pub fn rebuild_from_weights(&mut self, w: &DenseMatrix) -> Result<()> {
        if w.rows() != self.dim {
            return Err(Error::dim("AlshIndex::rebuild", "weight rows differ from indexed dimension"));
        }
        let cols = w.columns();
        self.n_columns = cols.len();
        for t in &mut self.tables {
            t.buckets.iter_mut().for_each(Vec::clear);
        }
        self.fill(cols.iter().map(|c| c.as_slice()))
    }

    fn fill<'a>(&mut self, columns: impl Iterator<Item = &'a [f64]> + Clone) -> Result<()> {
        let max_norm = columns.clone().map(norm).fold(0.0, f64::max);
        self.scale = if max_norm > 0.0 {
            max_norm / self.params.norm_bound
        } else {
            1.0
        };
        for (id, col) in columns.enumerate() {
            let p = transform_p(col, self.params.padding, self.scale)?;
            for t in 0..self.tables.len() {
                let b = self.bucket_of(t, p.as_slice());
                self.tables[t].buckets[b].push(id);
            }
        }
        Ok(())
    }

    fn bucket_of(&self, table: usize, v: &[f64]) -> usize {
        let planes = &self.tables[table].planes;
        let mut code = 0usize;
        for bit in 0..planes.rows() {
            if dot(planes.row(bit), v) >= 0.0 {
                code |= 1 << bit;
            }
        }
        flops::add((2 * planes.rows() * planes.cols()) as u64);
        code
    }

    /// Bucket id of data vector `column` (untransformed) under table `t`.
    pub fn signature_of_column(&self, t: usize, column: &[f64]) -> Result<usize> {
        let p = transform_p(column, self.params.padding, self.scale)?;
        Ok(self.bucket_of(t, p.as_slice()))
    }

    /// Bucket id of query `a` under table `t`.
    pub fn signature_of_query(&self, t: usize, a: &[f64]) -> usize {
        let q = transform_q(a, self.params.padding);
        self.bucket_of(t, q.as_slice())
    }

    /// Union of the buckets `a` falls into across all tables, sorted.
    pub fn query(&self, a: &[f64]) -> Result<ActiveSet> {
        if a.len() != self.dim {
            return Err(Error::dim(
                "AlshIndex::query",
                format!("query of length {}, index dimension {}", a.len(), self.dim),
            ));
        }
        let q = transform_q(a, self.params.padding);
        let mut hit = vec![false; self.n_columns];
        for t in 0..self.tables.len() {
            let b = self.bucket_of(t, q.as_slice());
            for &id in &self.tables[t].buckets[b] {
                hit[id] = true;
            }
        }
        let nodes = (0..self.n_columns).filter(|&i| hit[i]).collect();
        Ok(ActiveSet {
            layer: self.layer,
            nodes,
        })
    }

    pub fn params(&self) -> &AlshParams {
        &self.params
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn n_columns(&self) -> usize {
        self.n_columns
    }

    pub fn buckets(&self, table: usize) -> &[Vec<usize>] {
        &self.tables[table].buckets
    }

    pub fn occupancy(&self) -> Vec<TableOccupancy> {
        self.tables
            .iter()
            .enumerate()
            .map(|(t, tab)| {
                let sizes: Vec<usize> = tab.buckets.iter().map(Vec::len).collect();
                TableOccupancy {
                    table: t,
                    nonempty_buckets: sizes.iter().filter(|&&s| s > 0).count(),
                    largest_bucket: sizes.iter().copied().max().unwrap_or(0),
                    bucket_sizes: sizes,
                }
            })
            .collect()
    }

    /// JSON dump of per-table bucket occupancy.
    pub fn occupancy_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Dump<'a> {
            layer: usize,
            columns: usize,
            k_bits: usize,
            tables: Vec<TableOccupancy>,
            #[serde(skip)]
            _p: std::marker::PhantomData<&'a ()>,
        }
        Ok(serde_json::to_string_pretty(&Dump {
            layer: self.layer,
            columns: self.n_columns,
            k_bits: self.params.k_bits,
            tables: self.occupancy(),
            _p: std::marker::PhantomData,
        })?)
    }
}
