//! Embedding-space structure analyses: similarity matrices, correlation with
//! gold similarity ratings, average-linkage dendrograms, cluster purity, and
//! PCA projection for inspection.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// How pairwise similarity is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimKind {
    InnerProduct,
    NegEuclidean,
}

/// Symmetric pairwise similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMatrix {
    pub kind: SimKind,
    pub data: Vec<Vec<f64>>,
}

impl SimMatrix {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Upper-triangle entries (i < j) in lexicographic pair order. This is
    /// the pair vector correlated against gold ratings.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let n = self.len();
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                out.push(self.data[i][j]);
            }
        }
        out
    }

    /// Plain matrix CSV: one row per line, no header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for row in &self.data {
            let fields: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// S[i][j] = <row_i, row_j>.
pub fn inner_product_similarity(rows: &[Vec<f64>]) -> SimMatrix {
    let n = rows.len();
    let mut data = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let s: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            data[i][j] = s;
            data[j][i] = s;
        }
    }
    SimMatrix {
        kind: SimKind::InnerProduct,
        data,
    }
}

/// S[i][j] = -||row_i - row_j||.
pub fn neg_euclidean_similarity(rows: &[Vec<f64>]) -> SimMatrix {
    let n = rows.len();
    let mut data = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = -euclidean_distance(&rows[i], &rows[j]).unwrap();
            data[i][j] = d;
            data[j][i] = d;
        }
    }
    SimMatrix {
        kind: SimKind::NegEuclidean,
        data,
    }
}

pub fn euclidean_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::ShapeMismatch(format!(
            "vector lengths {} vs {}",
            u.len(),
            v.len()
        )));
    }
    Ok(u.iter()
        .zip(v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Squared Pearson correlation between two aligned pair-similarity vectors.
pub fn pearson_r2(pred: &[f64], gold: &[f64]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::ShapeMismatch(format!(
            "pair vectors {} vs {}",
            pred.len(),
            gold.len()
        )));
    }
    if pred.len() < 3 {
        return Err(Error::ShapeMismatch(
            "need at least 3 pairs for a correlation".into(),
        ));
    }
    let n = pred.len() as f64;
    let mean_p = pred.iter().sum::<f64>() / n;
    let mean_g = gold.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_p = 0.0;
    let mut var_g = 0.0;
    for (p, g) in pred.iter().zip(gold) {
        let dp = p - mean_p;
        let dg = g - mean_g;
        cov += dp * dg;
        var_p += dp * dp;
        var_g += dg * dg;
    }
    if var_p == 0.0 {
        return Err(Error::ZeroVariance("predicted"));
    }
    if var_g == 0.0 {
        return Err(Error::ZeroVariance("gold"));
    }
    let r = cov / (var_p.sqrt() * var_g.sqrt());
    Ok(r * r)
}

/// One agglomeration step. Node ids: leaves are `0..n`, the step-`s` merge
/// creates node `n + s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

/// Stepwise dendrogram from bottom-up agglomeration.
#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub n_leaves: usize,
    pub merges: Vec<Merge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Linkage {
    Average,
}

/// Bottom-up agglomeration on Euclidean distances. At every step the pair of
/// clusters with minimum average inter-cluster distance merges; exact
/// distance ties break toward the smallest (left id, right id) pair, so the
/// output is bit-stable.
pub fn agglomerative_cluster(rows: &[Vec<f64>], _linkage: Linkage) -> Result<Dendrogram> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::EmptyInput);
    }
    // Active cluster list: (node id, size). Distances kept in a parallel
    // square matrix indexed by active position.
    let mut ids: Vec<usize> = (0..n).collect();
    let mut sizes: Vec<usize> = vec![1; n];
    let mut dist = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = euclidean_distance(&rows[i], &rows[j])?;
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..(n - 1) {
        // Find the minimum-distance active pair with deterministic ties.
        let m = ids.len();
        let mut best: Option<(usize, usize)> = None; // positions
        let mut best_key = (f64::INFINITY, usize::MAX, usize::MAX);
        for a in 0..m {
            for b in (a + 1)..m {
                let d = dist[a][b];
                let (lo, hi) = if ids[a] < ids[b] {
                    (ids[a], ids[b])
                } else {
                    (ids[b], ids[a])
                };
                let key = (d, lo, hi);
                if key < best_key {
                    best_key = key;
                    best = Some((a, b));
                }
            }
        }
        let (a, b) = best.unwrap();
        let (height, lo, hi) = best_key;
        let new_size = sizes[a] + sizes[b];
        merges.push(Merge {
            left: lo,
            right: hi,
            height,
            size: new_size,
        });
        // Average-linkage update: d(A u B, C) = (|A| d(A,C) + |B| d(B,C)) / (|A|+|B|).
        let (sa, sb) = (sizes[a] as f64, sizes[b] as f64);
        let mut new_row = Vec::with_capacity(m - 2);
        for c in 0..m {
            if c == a || c == b {
                continue;
            }
            new_row.push((sa * dist[a][c] + sb * dist[b][c]) / (sa + sb));
        }
        // Drop positions a and b (b > a), append the merged cluster.
        for pos in [b, a] {
            ids.remove(pos);
            sizes.remove(pos);
            dist.remove(pos);
            for row in &mut dist {
                row.remove(pos);
            }
        }
        ids.push(n + step);
        sizes.push(new_size);
        for (row, &d) in dist.iter_mut().zip(&new_row) {
            row.push(d);
        }
        new_row.push(0.0);
        dist.push(new_row);
    }
    Ok(Dendrogram {
        n_leaves: n,
        merges,
    })
}

impl Dendrogram {
    /// Children of an internal node id, if any.
    fn children(&self, node: usize) -> Option<(usize, usize)> {
        if node < self.n_leaves {
            None
        } else {
            let m = &self.merges[node - self.n_leaves];
            Some((m.left, m.right))
        }
    }

    /// Leaves in left-to-right plotting order.
    pub fn leaf_order(&self) -> Vec<usize> {
        let root = self.n_leaves + self.merges.len() - 1;
        let mut order = Vec::with_capacity(self.n_leaves);
        let mut stack = vec![root];
        while let Some(node) = stack.pop() {
            match self.children(node) {
                None => order.push(node),
                Some((l, r)) => {
                    stack.push(r);
                    stack.push(l);
                }
            }
        }
        order
    }
}

/// Cluster assignments induced by undoing the last `k - 1` merges. Cluster
/// labels are `0..k`, numbered by first appearance over leaf index order.
pub fn cut_tree(d: &Dendrogram, k: usize) -> Result<Vec<usize>> {
    let n = d.n_leaves;
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    // Union-find over node ids, applying the first n - k merges.
    let total = n + d.merges.len();
    let mut root: Vec<usize> = (0..total).collect();
    fn find(root: &mut Vec<usize>, mut x: usize) -> usize {
        while root[x] != x {
            root[x] = root[root[x]];
            x = root[x];
        }
        x
    }
    for (step, m) in d.merges.iter().take(n - k).enumerate() {
        let node = n + step;
        let l = find(&mut root, m.left);
        let r = find(&mut root, m.right);
        root[l] = node;
        root[r] = node;
    }
    let mut label_of: BTreeMap<usize, usize> = BTreeMap::new();
    let mut assignments = Vec::with_capacity(n);
    for leaf in 0..n {
        let r = find(&mut root, leaf);
        let next = label_of.len();
        let label = *label_of.entry(r).or_insert(next);
        assignments.push(label);
    }
    Ok(assignments)
}

/// Fraction of items whose cluster's majority label matches their own:
/// (1/N) * sum over clusters of the cluster's top label count.
pub fn cluster_purity(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    if assignments.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "assignments {} vs labels {}",
            assignments.len(),
            labels.len()
        )));
    }
    if assignments.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut counts: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&c, &l) in assignments.iter().zip(labels) {
        *counts.entry(c).or_default().entry(l).or_default() += 1;
    }
    let majority_sum: usize = counts
        .values()
        .map(|by_label| by_label.values().max().copied().unwrap_or(0))
        .sum();
    Ok(majority_sum as f64 / assignments.len() as f64)
}

/// Jacobi eigendecomposition of a symmetric matrix. Returns (eigenvalues,
/// eigenvectors as columns), unsorted.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let off = |a: &Vec<Vec<f64>>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i][j] * a[i][j];
                }
            }
        }
        s
    };
    let frob: f64 = a
        .iter()
        .flat_map(|r| r.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        if off(&a) <= 1e-28 * frob {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let aip = a[i][p];
                    let aiq = a[i][q];
                    a[i][p] = c * aip - s * aiq;
                    a[i][q] = s * aip + c * aiq;
                }
                for j in 0..n {
                    let apj = a[p][j];
                    let aqj = a[q][j];
                    a[p][j] = c * apj - s * aqj;
                    a[q][j] = s * apj + c * aqj;
                }
                for i in 0..n {
                    let vip = v[i][p];
                    let viq = v[i][q];
                    v[i][p] = c * vip - s * viq;
                    v[i][q] = s * vip + c * viq;
                }
            }
        }
    }
    let eigenvalues = (0..n).map(|i| a[i][i]).collect();
    (eigenvalues, v)
}

/// Mean-centered projection onto the top `dims` principal axes. The sign of
/// each axis is fixed by making its largest-magnitude loading positive, so
/// projections are reproducible run to run.
pub fn pca_project(rows: &[Vec<f64>], dims: usize) -> Result<Vec<Vec<f64>>> {
    let n = rows.len();
    if n < 2 || dims == 0 {
        return Err(Error::DegenerateRank { requested: dims });
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::ShapeMismatch("ragged embedding rows".into()));
    }
    let mut mean = vec![0.0; d];
    for row in rows {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|row| row.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    // Sample covariance, d x d.
    let mut cov = vec![vec![0.0; d]; d];
    for row in &centered {
        for i in 0..d {
            for j in i..d {
                cov[i][j] += row[i] * row[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= (n - 1) as f64;
            cov[j][i] = cov[i][j];
        }
    }
    let (eigenvalues, vectors) = jacobi_eigen(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigenvalues[b].partial_cmp(&eigenvalues[a]).unwrap());
    if dims > d {
        return Err(Error::DegenerateRank { requested: dims });
    }
    let max_eig = eigenvalues[order[0]].max(0.0);
    let tol = 1e-12 * max_eig.max(1e-300);
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(dims);
    for &idx in order.iter().take(dims) {
        if eigenvalues[idx] <= tol {
            return Err(Error::DegenerateRank { requested: dims });
        }
        let mut axis: Vec<f64> = (0..d).map(|i| vectors[i][idx]).collect();
        // Sign rule: largest-magnitude loading positive; first index wins ties.
        let pivot = axis
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if axis[pivot] < 0.0 {
            for x in &mut axis {
                *x = -*x;
            }
        }
        axes.push(axis);
    }
    Ok(centered
        .iter()
        .map(|row| {
            axes.iter()
                .map(|axis| row.iter().zip(axis).map(|(x, a)| x * a).sum())
                .collect()
        })
        .collect())
}

/// Serializes a dendrogram as a Newick string. Merge heights are read as
/// cophenetic distances, so an internal node sits at elevation height/2 and
/// a child branch spans (parent elevation - child elevation); leaves sit at
/// elevation zero. Two leaves merging at distance 1 give "(a:0.5,b:0.5);".
pub fn newick_export(d: &Dendrogram, leaf_names: &[String]) -> Result<String> {
    if leaf_names.len() != d.n_leaves {
        return Err(Error::ShapeMismatch(format!(
            "{} leaf names for {} leaves",
            leaf_names.len(),
            d.n_leaves
        )));
    }
    fn elevation(d: &Dendrogram, node: usize) -> f64 {
        if node < d.n_leaves {
            0.0
        } else {
            d.merges[node - d.n_leaves].height / 2.0
        }
    }
    fn emit(d: &Dendrogram, names: &[String], node: usize, out: &mut String) {
        if node < d.n_leaves {
            out.push_str(&names[node]);
            return;
        }
        let m = &d.merges[node - d.n_leaves];
        let h = elevation(d, node);
        out.push('(');
        emit(d, names, m.left, out);
        out.push_str(&format!(":{}", h - elevation(d, m.left)));
        out.push(',');
        emit(d, names, m.right, out);
        out.push_str(&format!(":{}", h - elevation(d, m.right)));
        out.push(')');
    }
    let root = d.n_leaves + d.merges.len() - 1;
    let mut out = String::new();
    emit(d, leaf_names, root, &mut out);
    out.push(';');
    Ok(out)
}

/// Gold similarity ratings over all unordered item pairs, stored in
/// lexicographic (i < j) order to align with [`SimMatrix::upper_triangle`].
#[derive(Debug, Clone, PartialEq)]
pub struct GoldSimilarity {
    pub n_items: usize,
    pub ratings: Vec<f64>,
}

impl GoldSimilarity {
    pub fn new(n_items: usize, ratings: Vec<f64>) -> Result<Self> {
        if ratings.len() != n_items * (n_items - 1) / 2 {
            return Err(Error::ShapeMismatch(format!(
                "{} ratings for {} items",
                ratings.len(),
                n_items
            )));
        }
        if let Some(bad) = ratings.iter().find(|r| !(0.0..=10.0).contains(*r)) {
            return Err(Error::InvalidConfig(format!(
                "gold rating {bad} outside [0, 10]"
            )));
        }
        Ok(GoldSimilarity { n_items, ratings })
    }

    /// Reads the `item_i,item_j,rating` CSV. Every unordered pair of
    /// `0..n_items` must appear exactly once; ratings must lie in [0, 10].
    pub fn read_csv(path: &Path, n_items: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let display = path.display().to_string();
        let n_pairs = n_items * (n_items - 1) / 2;
        let mut ratings: Vec<Option<f64>> = vec![None; n_pairs];
        let pair_slot = |i: usize, j: usize| -> usize {
            // Lexicographic rank of (i, j), i < j.
            i * n_items - i * (i + 1) / 2 + (j - i - 1)
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "item_i,item_j,rating" => {}
            _ => {
                return Err(Error::parse(
                    display,
                    "expected header `item_i,item_j,rating`",
                ))
            }
        }
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::parse(
                    &display,
                    format!("line {}: expected 3 fields", lineno + 1),
                ));
            }
            let a: usize = fields[0].trim().parse().map_err(|e| {
                Error::parse(&display, format!("line {}: {e}", lineno + 1))
            })?;
            let b: usize = fields[1].trim().parse().map_err(|e| {
                Error::parse(&display, format!("line {}: {e}", lineno + 1))
            })?;
            let rating: f64 = fields[2].trim().parse().map_err(|e| {
                Error::parse(&display, format!("line {}: {e}", lineno + 1))
            })?;
            if a == b || a >= n_items || b >= n_items {
                return Err(Error::parse(
                    &display,
                    format!("line {}: bad item pair ({a}, {b})", lineno + 1),
                ));
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            let slot = pair_slot(i, j);
            if ratings[slot].is_some() {
                return Err(Error::parse(
                    &display,
                    format!("line {}: duplicate pair ({i}, {j})", lineno + 1),
                ));
            }
            if !(0.0..=10.0).contains(&rating) {
                return Err(Error::parse(
                    &display,
                    format!("line {}: rating {rating} outside [0, 10]", lineno + 1),
                ));
            }
            ratings[slot] = Some(rating);
        }
        let ratings: Option<Vec<f64>> = ratings.into_iter().collect();
        match ratings {
            Some(r) => Ok(GoldSimilarity {
                n_items,
                ratings: r,
            }),
            None => Err(Error::parse(display, "missing pairs")),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("item_i,item_j,rating\n");
        let mut idx = 0;
        for i in 0..self.n_items {
            for j in (i + 1)..self.n_items {
                out.push_str(&format!("{i},{j},{}\n", self.ratings[idx]));
                idx += 1;
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }
}
