//! Symmetric tensors stored over canonical (non-decreasing) multi-indices.
//!
//! Entries are laid out in colexicographic order of the multi-index
//! `i_1 <= ... <= i_p` (0-based), so the entries of the leading `n`-dimensional
//! block always form a prefix of the storage. The rank of a multi-index is
//! `Σ_k C(i_k + k - 1, k)`, which is independent of the dimension.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported interaction order.
pub const MAX_ORDER: usize = 6;

/// Binomial coefficient `C(n, k)` (zero when `k > n`).
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as u64
}

/// Number of canonical multi-indices of length `p` over `n` symbols.
pub fn canonical_count(n: usize, p: usize) -> usize {
    if n == 0 {
        return 0;
    }
    binomial(n + p - 1, p) as usize
}

fn factorial(k: usize) -> u64 {
    (1..=k as u64).product()
}

/// `p! / |{i_1..i_p}|!`: the number of distinct orderings of the multi-set.
pub fn multiplicity(idx: &[usize]) -> u64 {
    let mut sorted = idx.to_vec();
    sorted.sort_unstable();
    multiplicity_sorted(&sorted)
}

pub(crate) fn multiplicity_sorted(sorted: &[usize]) -> u64 {
    let mut denom = 1u64;
    let mut run = 1usize;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            denom *= factorial(run);
            run = 1;
        }
    }
    if !sorted.is_empty() {
        denom *= factorial(run);
    }
    factorial(sorted.len()) / denom
}

/// Colexicographic rank of a sorted multi-index.
pub fn canonical_rank(sorted: &[usize]) -> usize {
    sorted
        .iter()
        .enumerate()
        .map(|(k, &i)| binomial(i + k, k + 1) as usize)
        .sum()
}

/// Inverse of [`canonical_rank`].
pub fn canonical_unrank(mut rank: usize, p: usize) -> Vec<usize> {
    let mut out = vec![0usize; p];
    for k in (1..=p).rev() {
        // largest c with C(c, k) <= rank
        let mut c = k - 1;
        while binomial(c + 1, k) as usize <= rank {
            c += 1;
        }
        rank -= binomial(c, k) as usize;
        out[k - 1] = c + 1 - k;
    }
    out
}

/// Iterator over canonical multi-indices in storage order.
pub struct CanonicalIndices {
    idx: Vec<usize>,
    n: usize,
    remaining: usize,
}

impl CanonicalIndices {
    pub fn new(n: usize, p: usize) -> Self {
        Self::starting_at(n, p, 0)
    }

    pub fn starting_at(n: usize, p: usize, rank: usize) -> Self {
        let total = canonical_count(n, p);
        Self {
            idx: canonical_unrank(rank.min(total), p),
            n,
            remaining: total.saturating_sub(rank),
        }
    }

    /// Advances `idx` to its colex successor in place.
    fn advance(idx: &mut [usize], n: usize) {
        let p = idx.len();
        let mut k = 0;
        while k + 1 < p && idx[k] == idx[k + 1] {
            k += 1;
        }
        idx[k] += 1;
        let _ = n;
        for v in idx.iter_mut().take(k) {
            *v = 0;
        }
    }
}

impl Iterator for CanonicalIndices {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.remaining == 0 {
            return None;
        }
        let out = self.idx.clone();
        self.remaining -= 1;
        if self.remaining > 0 {
            Self::advance(&mut self.idx, self.n);
        }
        Some(out)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

/// Visits every canonical multi-index with its storage position, without allocating.
pub(crate) fn for_each_canonical(n: usize, p: usize, mut f: impl FnMut(usize, &[usize])) {
    let total = canonical_count(n, p);
    if total == 0 {
        return;
    }
    let mut idx = vec![0usize; p];
    for r in 0..total {
        f(r, &idx);
        if r + 1 < total {
            CanonicalIndices::advance(&mut idx, n);
        }
    }
}

/// An order-`p` symmetric tensor on `R^N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricTensor {
    order: usize,
    dim: usize,
    entries: Vec<f64>,
}

impl SymmetricTensor {
    pub fn zeros(order: usize, dim: usize) -> Result<Self> {
        check_shape(order, dim)?;
        Ok(Self {
            order,
            dim,
            entries: vec![0.0; canonical_count(dim, order)],
        })
    }

    pub fn from_entries(order: usize, dim: usize, entries: Vec<f64>) -> Result<Self> {
        check_shape(order, dim)?;
        let want = canonical_count(dim, order);
        if entries.len() != want {
            return Err(Error::Shape(format!(
                "order {order}, dim {dim} needs {want} canonical entries, got {}",
                entries.len()
            )));
        }
        Ok(Self { order, dim, entries })
    }

    /// Builds a tensor by evaluating `f` at each canonical multi-index.
    pub fn from_fn(order: usize, dim: usize, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let mut t = Self::zeros(order, dim)?;
        for_each_canonical(dim, order, |r, idx| t.entries[r] = f(idx));
        Ok(t)
    }

    /// Rank-one symmetric tensor `v ⊗ ... ⊗ v`.
    pub fn rank_one(order: usize, v: &[f64]) -> Result<Self> {
        Self::from_fn(order, v.len(), |idx| idx.iter().map(|&i| v[i]).product())
    }

    /// Order-2 tensor from a dense symmetric matrix (row-major); only the upper triangle is read.
    pub fn from_symmetric_matrix(dim: usize, m: &[f64]) -> Result<Self> {
        if m.len() != dim * dim {
            return Err(Error::Shape(format!("matrix of {} entries is not {dim}x{dim}", m.len())));
        }
        Self::from_fn(2, dim, |idx| m[idx[0] * dim + idx[1]])
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn position(&self, idx: &[usize]) -> Result<usize> {
        if idx.len() != self.order {
            return Err(Error::Shape(format!(
                "multi-index of length {} for an order-{} tensor",
                idx.len(),
                self.order
            )));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.dim) {
            return Err(Error::Shape(format!("index {bad} out of range for dimension {}", self.dim)));
        }
        let mut sorted = idx.to_vec();
        sorted.sort_unstable();
        Ok(canonical_rank(&sorted))
    }

    /// Entry at any (not necessarily sorted) multi-index.
    pub fn get(&self, idx: &[usize]) -> Result<f64> {
        Ok(self.entries[self.position(idx)?])
    }

    /// Sets the entry shared by all permutations of `idx`.
    pub fn set(&mut self, idx: &[usize], value: f64) -> Result<()> {
        let r = self.position(idx)?;
        self.entries[r] = value;
        Ok(())
    }

    pub fn canonical_indices(&self) -> CanonicalIndices {
        CanonicalIndices::new(self.dim, self.order)
    }

    pub fn sup_norm(&self) -> f64 {
        self.entries.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            order: self.order,
            dim: self.dim,
            entries: self.entries.iter().map(|v| v * c).collect(),
        }
    }

    pub fn neg(&self) -> Self {
        self.scaled(-1.0)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a - b)
    }

    fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.order != other.order || self.dim != other.dim {
            return Err(Error::Shape(format!(
                "cannot combine order {}/dim {} with order {}/dim {}",
                self.order, self.dim, other.order, other.dim
            )));
        }
        Ok(Self {
            order: self.order,
            dim: self.dim,
            entries: self.entries.iter().zip(&other.entries).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    /// Restriction to the leading `n` coordinates.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.dim {
            return Err(Error::Shape(format!("prefix {n} of a dimension-{} tensor", self.dim)));
        }
        Ok(Self {
            order: self.order,
            dim: n,
            entries: self.entries[..canonical_count(n, self.order)].to_vec(),
        })
    }

    /// Multiplies each canonical entry by `f(idx)`.
    pub fn map_indexed(&self, mut f: impl FnMut(&[usize], f64) -> f64) -> Self {
        let mut out = self.clone();
        for_each_canonical(self.dim, self.order, |r, idx| out.entries[r] = f(idx, self.entries[r]));
        out
    }

    /// Full symmetric `N x N` matrix (row-major) of an order-2 tensor.
    pub fn to_dense_matrix(&self) -> Result<Vec<f64>> {
        if self.order != 2 {
            return Err(Error::Shape(format!("order-{} tensor is not a matrix", self.order)));
        }
        let n = self.dim;
        let mut m = vec![0.0; n * n];
        let mut r = 0;
        for j in 0..n {
            for i in 0..=j {
                let v = self.entries[r];
                m[i * n + j] = v;
                m[j * n + i] = v;
                r += 1;
            }
        }
        Ok(m)
    }

    /// Dense `N^p` array in row-major index order. Refuses more than `1e8` entries.
    pub fn to_dense(&self) -> Result<Vec<f64>> {
        let total = (self.dim as u128).pow(self.order as u32);
        if total > 100_000_000 {
            return Err(Error::Shape(format!("dense expansion with {total} entries is too large")));
        }
        let total = total as usize;
        let mut out = vec![0.0; total];
        let mut idx = vec![0usize; self.order];
        let mut sorted = vec![0usize; self.order];
        for (flat, slot) in out.iter_mut().enumerate() {
            let mut rem = flat;
            for k in (0..self.order).rev() {
                idx[k] = rem % self.dim;
                rem /= self.dim;
            }
            sorted.copy_from_slice(&idx);
            sorted.sort_unstable();
            *slot = self.entries[canonical_rank(&sorted)];
        }
        Ok(out)
    }

    /// `y = A x` for an order-2 tensor viewed as its symmetric matrix `A`.
    pub fn sym_matvec(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        if self.order != 2 {
            return Err(Error::Shape(format!("order-{} tensor is not a matrix", self.order)));
        }
        self.check_vector(x)?;
        self.check_vector(y)?;
        sym_matvec_packed(&self.entries, x, y);
        Ok(())
    }

    /// Full-index-space contraction `⟨T, x^{⊗p}⟩`.
    pub fn contract(&self, x: &[f64]) -> Result<f64> {
        self.check_vector(x)?;
        Ok(self.contract_unchecked(x))
    }

    pub(crate) fn contract_unchecked(&self, x: &[f64]) -> f64 {
        match self.order {
            1 => self.entries.iter().zip(x).map(|(a, b)| a * b).sum(),
            2 => contract2(&self.entries, x, None),
            3 => contract3(&self.entries, x, None),
            _ => contract_generic(self, x, None),
        }
    }

    /// `⟨T, x^{⊗p}⟩` together with its gradient in `x`.
    pub fn contract_with_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_vector(x)?;
        let mut g = vec![0.0; self.dim];
        let v = self.contract_grad_into(x, &mut g);
        Ok((v, g))
    }

    /// Adds the gradient of `⟨T, x^{⊗p}⟩` into `g` and returns the value.
    pub(crate) fn contract_grad_into(&self, x: &[f64], g: &mut [f64]) -> f64 {
        match self.order {
            1 => {
                for (gi, a) in g.iter_mut().zip(&self.entries) {
                    *gi += a;
                }
                self.entries.iter().zip(x).map(|(a, b)| a * b).sum()
            }
            2 => contract2(&self.entries, x, Some(g)),
            3 => contract3(&self.entries, x, Some(g)),
            _ => contract_generic(self, x, Some(g)),
        }
    }

    fn check_vector(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!(
                "vector of length {} against a dimension-{} tensor",
                x.len(),
                self.dim
            )));
        }
        Ok(())
    }
}

fn check_shape(order: usize, dim: usize) -> Result<()> {
    if order == 0 || order > MAX_ORDER {
        return Err(Error::Shape(format!("order {order} outside 1..={MAX_ORDER}")));
    }
    if dim == 0 {
        return Err(Error::Shape("dimension must be positive".into()));
    }
    Ok(())
}

fn contract2(e: &[f64], x: &[f64], mut g: Option<&mut [f64]>) -> f64 {
    let n = x.len();
    let mut total = 0.0;
    let mut r = 0;
    for j in 0..n {
        let xj = x[j];
        let row = &e[r..r + j + 1];
        // off-diagonal part i < j carries multiplicity 2
        let mut s = 0.0;
        for (i, v) in row[..j].iter().enumerate() {
            s += v * x[i];
        }
        let d = row[j];
        total += 2.0 * s * xj + d * xj * xj;
        if let Some(g) = g.as_deref_mut() {
            for (i, v) in row[..j].iter().enumerate() {
                g[i] += 2.0 * v * xj;
            }
            g[j] += 2.0 * s + 2.0 * d * xj;
        }
        r += j + 1;
    }
    total
}

pub(crate) fn sym_matvec_packed(e: &[f64], x: &[f64], y: &mut [f64]) {
    let n = x.len();
    y.iter_mut().for_each(|v| *v = 0.0);
    let mut r = 0;
    for j in 0..n {
        let xj = x[j];
        let row = &e[r..r + j + 1];
        let mut s = 0.0;
        for (i, v) in row[..j].iter().enumerate() {
            s += v * x[i];
            y[i] += v * xj;
        }
        y[j] += s + row[j] * xj;
        r += j + 1;
    }
}

fn contract3(e: &[f64], x: &[f64], mut g: Option<&mut [f64]>) -> f64 {
    let n = x.len();
    let mut total = 0.0;
    let mut r = 0;
    for k in 0..n {
        let xk = x[k];
        for j in 0..=k {
            let xj = x[j];
            let row = &e[r..r + j + 1];
            // i < j entries; multiplicity 6 when j < k, 3 when j == k
            let m_off = if j < k { 6.0 } else { 3.0 };
            // i == j entry; multiplicity 3 when j < k, 1 when i == j == k
            let m_diag = if j < k { 3.0 } else { 1.0 };
            let mut s = 0.0;
            for (i, v) in row[..j].iter().enumerate() {
                s += v * x[i];
            }
            let d = row[j];
            let xjk = xj * xk;
            total += m_off * s * xjk + m_diag * d * xj * xjk;
            if let Some(g) = g.as_deref_mut() {
                let c = m_off * xjk;
                for (i, v) in row[..j].iter().enumerate() {
                    g[i] += c * v;
                }
                // derivatives in x_j and x_k of m_off*s*x_j*x_k + m_diag*d*x_j^2*x_k
                if j < k {
                    g[j] += m_off * s * xk + 2.0 * m_diag * d * xj * xk;
                    g[k] += m_off * s * xj + m_diag * d * xj * xj;
                } else {
                    g[j] += 2.0 * m_off * s * xj + 3.0 * m_diag * d * xj * xj;
                }
            }
            r += j + 1;
        }
    }
    total
}

fn contract_generic(t: &SymmetricTensor, x: &[f64], mut g: Option<&mut [f64]>) -> f64 {
    let p = t.order;
    let mut prefix = vec![1.0; p + 1];
    let mut suffix = vec![1.0; p + 1];
    let mut total = 0.0;
    for_each_canonical(t.dim, p, |r, idx| {
        let v = t.entries[r];
        if v == 0.0 {
            return;
        }
        let w = v * multiplicity_sorted(idx) as f64;
        for k in 0..p {
            prefix[k + 1] = prefix[k] * x[idx[k]];
        }
        total += w * prefix[p];
        if let Some(g) = g.as_deref_mut() {
            for k in (0..p).rev() {
                suffix[k] = suffix[k + 1] * x[idx[k]];
            }
            for k in 0..p {
                g[idx[k]] += w * prefix[k] * suffix[k + 1];
            }
        }
    });
    total
}

/// Metadata stored next to a binary tensor file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorFileMeta {
    pub format: String,
    pub version: u32,
    pub order: usize,
    pub dim: usize,
    pub distribution: String,
    pub seed: u64,
    pub entries: usize,
    pub index_order: String,
    pub byte_order: String,
}

pub const TENSOR_MAGIC: &[u8; 8] = b"SYMTNSR\0";
pub const TENSOR_VERSION: u32 = 1;

/// Path of the JSON sidecar for a tensor file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `t` in the binary tensor format and a JSON sidecar at `<path>.json`.
pub fn write_tensor(path: &Path, t: &SymmetricTensor, distribution: &str, seed: u64) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let tag = distribution.as_bytes();
    let mut header = Vec::with_capacity(48 + tag.len());
    header.extend_from_slice(TENSOR_MAGIC);
    header.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    header.extend_from_slice(&(t.order as u32).to_le_bytes());
    header.extend_from_slice(&(t.dim as u64).to_le_bytes());
    header.extend_from_slice(&(tag.len() as u32).to_le_bytes());
    header.extend_from_slice(tag);
    header.extend_from_slice(&seed.to_le_bytes());
    header.extend_from_slice(&(t.entries.len() as u64).to_le_bytes());
    w.write_all(&header).map_err(|e| Error::io(path, e))?;
    for v in &t.entries {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let meta = TensorFileMeta {
        format: "symmetric-tensor".into(),
        version: TENSOR_VERSION,
        order: t.order,
        dim: t.dim,
        distribution: distribution.into(),
        seed,
        entries: t.entries.len(),
        index_order: "colex-nondecreasing".into(),
        byte_order: "little-endian-f64".into(),
    };
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(&side, json).map_err(|e| Error::io(&side, e))?;
    Ok(())
}

/// Reads a binary tensor file; returns the tensor, distribution tag and seed.
pub fn read_tensor(path: &Path) -> Result<(SymmetricTensor, String, u64)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut buf8 = [0u8; 8];
    let mut buf4 = [0u8; 4];
    let read = |r: &mut BufReader<File>, b: &mut [u8]| r.read_exact(b).map_err(|e| Error::io(path, e));

    read(&mut r, &mut buf8)?;
    if &buf8 != TENSOR_MAGIC {
        return Err(Error::Format(format!("{} is not a tensor file", path.display())));
    }
    read(&mut r, &mut buf4)?;
    let version = u32::from_le_bytes(buf4);
    if version != TENSOR_VERSION {
        return Err(Error::Format(format!("unsupported tensor file version {version}")));
    }
    read(&mut r, &mut buf4)?;
    let order = u32::from_le_bytes(buf4) as usize;
    read(&mut r, &mut buf8)?;
    let dim = u64::from_le_bytes(buf8) as usize;
    read(&mut r, &mut buf4)?;
    let tag_len = u32::from_le_bytes(buf4) as usize;
    let mut tag = vec![0u8; tag_len];
    read(&mut r, &mut tag)?;
    let tag = String::from_utf8(tag).map_err(|e| Error::Format(e.to_string()))?;
    read(&mut r, &mut buf8)?;
    let seed = u64::from_le_bytes(buf8);
    read(&mut r, &mut buf8)?;
    let count = u64::from_le_bytes(buf8) as usize;
    check_shape(order, dim)?;
    if count != canonical_count(dim, order) {
        return Err(Error::Format(format!("entry count {count} does not match order {order}, dim {dim}")));
    }
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        read(&mut r, &mut buf8)?;
        entries.push(f64::from_le_bytes(buf8));
    }
    Ok((SymmetricTensor { order, dim, entries }, tag, seed))
}
