//! Dense kernels used by the regressors: a row-major matrix, an SPD solver
//! and principal component analysis.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::NumericsError;

/// Row-major dense matrix of finite `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<MatrixRepr> for Matrix {
    type Error = NumericsError;

    fn try_from(m: MatrixRepr) -> Result<Self, Self::Error> {
        Matrix::new(m.rows, m.cols, m.data)
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if rows * cols != data.len() {
            return Err(NumericsError::Dimension(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite);
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, NumericsError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(NumericsError::Dimension(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Matrix::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.get(i, j);
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, NumericsError> {
        if self.cols != other.rows {
            return Err(NumericsError::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn mat_vec(&self, v: &[f64]) -> Result<Vec<f64>, NumericsError> {
        if v.len() != self.cols {
            return Err(NumericsError::Dimension(format!(
                "vector of length {} for {} columns",
                v.len(),
                self.cols
            )));
        }
        Ok(self.row_iter().map(|r| dot(r, v)).collect())
    }

    /// `selfᵀ · self`, exactly symmetric.
    pub fn gram(&self) -> Matrix {
        let d = self.cols;
        let mut g = Matrix::zeros(d, d);
        for r in self.row_iter() {
            for i in 0..d {
                let ri = r[i];
                if ri == 0.0 {
                    continue;
                }
                for j in i..d {
                    g.data[i * d + j] += ri * r[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                g.data[i * d + j] = g.data[j * d + i];
            }
        }
        g
    }

    /// `self · selfᵀ`, exactly symmetric.
    pub fn outer_gram(&self) -> Matrix {
        let n = self.rows;
        let mut g = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = dot(self.row(i), self.row(j));
                g.data[i * n + j] = v;
                g.data[j * n + i] = v;
            }
        }
        g
    }

    /// `selfᵀ · v`.
    pub fn tr_mat_vec(&self, v: &[f64]) -> Result<Vec<f64>, NumericsError> {
        if v.len() != self.rows {
            return Err(NumericsError::Dimension(format!(
                "vector of length {} for {} rows",
                v.len(),
                self.rows
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &vi) in self.row_iter().zip(v) {
            for (o, &x) in out.iter_mut().zip(r) {
                *o += vi * x;
            }
        }
        Ok(out)
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for r in self.row_iter() {
            for (m, &x) in means.iter_mut().zip(r) {
                *m += x;
            }
        }
        let n = self.rows.max(1) as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    /// Subtracts `offsets` from every row.
    pub fn sub_row(&self, offsets: &[f64]) -> Matrix {
        let mut out = self.clone();
        for r in out.data.chunks_exact_mut(self.cols.max(1)) {
            for (x, &o) in r.iter_mut().zip(offsets) {
                *x -= o;
            }
        }
        out
    }

    /// Appends `column` as a new last column.
    pub fn with_column(&self, column: &[f64]) -> Matrix {
        assert_eq!(column.len(), self.rows, "column length must match rows");
        let cols = self.cols + 1;
        let mut data = Vec::with_capacity(self.rows * cols);
        for (r, &c) in self.row_iter().zip(column) {
            data.extend_from_slice(r);
            data.push(c);
        }
        Matrix {
            rows: self.rows,
            cols,
            data,
        }
    }

    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    pub fn factor(a: &Matrix) -> Result<Self, NumericsError> {
        let n = a.rows();
        if a.cols() != n {
            return Err(NumericsError::Dimension(format!(
                "{}x{} matrix is not square",
                n,
                a.cols()
            )));
        }
        let mut max_diag: f64 = 0.0;
        for i in 0..n {
            max_diag = max_diag.max(a.get(i, i).abs());
            for j in 0..i {
                let (x, y) = (a.get(i, j), a.get(j, i));
                if (x - y).abs() > 1e-9 * x.abs().max(y.abs()).max(1.0) {
                    return Err(NumericsError::NotSymmetric { row: i, col: j });
                }
            }
        }
        // pivots below this are rounding noise of a singular matrix
        let tol = 1e-12 * max_diag.max(f64::MIN_POSITIVE);

        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let lj = &l.data[j * n..j * n + j];
            let pivot = a.get(j, j) - dot(lj, lj);
            if !(pivot > tol) {
                return Err(NumericsError::Singular { pivot: j });
            }
            let ljj = pivot.sqrt();
            l.data[j * n + j] = ljj;
            for i in j + 1..n {
                let s = a.get(i, j) - dot(&l.data[i * n..i * n + j], &l.data[j * n..j * n + j]);
                l.data[i * n + j] = s / ljj;
            }
        }
        Ok(Cholesky { l })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, NumericsError> {
        let n = self.l.rows();
        if b.len() != n {
            return Err(NumericsError::Dimension(format!(
                "right-hand side of length {} for {n}x{n} system",
                b.len()
            )));
        }
        let mut y = b.to_vec();
        for i in 0..n {
            let s = dot(&self.l.data[i * n..i * n + i], &y[..i]);
            y[i] = (y[i] - s) / self.l.data[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l.data[k * n + i] * y[k];
            }
            y[i] = s / self.l.data[i * n + i];
        }
        Ok(y)
    }
}

/// Solves `A x = b` for symmetric positive-definite `A`.
///
/// Cholesky factorization followed by one step of iterative refinement.
pub fn solve_spd(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, NumericsError> {
    let chol = Cholesky::factor(a)?;
    let mut x = chol.solve(b)?;
    let ax = a.mat_vec(&x)?;
    let residual: Vec<f64> = b.iter().zip(&ax).map(|(bi, axi)| bi - axi).collect();
    let correction = chol.solve(&residual)?;
    x.iter_mut().zip(&correction).for_each(|(xi, c)| *xi += c);
    Ok(x)
}

/// Principal axes of a centered data matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// k×d, orthonormal rows sorted by decreasing variance.
    pub components: Matrix,
    /// Sample variance (denominator n−1) along each component.
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    /// Keeps the leading `k` components.
    pub fn truncate(&self, k: usize) -> PcaModel {
        let k = k.min(self.n_components());
        let d = self.input_dim();
        PcaModel {
            mean: self.mean.clone(),
            components: Matrix::new(k, d, self.components.data()[..k * d].to_vec())
                .expect("prefix of a valid matrix"),
            explained_variance: self.explained_variance[..k].to_vec(),
            explained_variance_ratio: self.explained_variance_ratio[..k].to_vec(),
        }
    }

    /// Maps projected coordinates back to the input space.
    pub fn inverse_transform(&self, z: &Matrix) -> Result<Matrix, NumericsError> {
        let mut x = z.matmul(&self.components)?;
        for r in x.data.chunks_exact_mut(self.input_dim().max(1)) {
            for (v, m) in r.iter_mut().zip(&self.mean) {
                *v += m;
            }
        }
        Ok(x)
    }
}

/// Fits the top-`k` principal components of `x` (n samples × d features).
///
/// Eigendecomposes the d×d covariance when d ≤ n and the n×n Gram matrix of
/// the centered samples otherwise. Each component is signed so that its
/// largest-magnitude entry is positive.
pub fn fit_pca(x: &Matrix, k: usize) -> Result<PcaModel, NumericsError> {
    let (n, d) = (x.rows(), x.cols());
    if n < 2 || k == 0 || k > (n - 1).min(d) {
        return Err(NumericsError::Dimension(format!(
            "{k} components requested from {n} samples of dimension {d}"
        )));
    }
    let mean = x.column_means();
    let xc = x.sub_row(&mean);
    let denom = (n - 1) as f64;
    let total_variance = xc.data().iter().map(|v| v * v).sum::<f64>() / denom;

    let (variances, mut vectors) = if d <= n {
        let eig = SymmetricEigen::new(xc.gram().to_nalgebra());
        let order = descending(eig.eigenvalues.as_slice());
        let vars: Vec<f64> = order[..k]
            .iter()
            .map(|&i| eig.eigenvalues[i].max(0.0) / denom)
            .collect();
        let vecs: Vec<Vec<f64>> = order[..k]
            .iter()
            .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
            .collect();
        (vars, vecs)
    } else {
        let eig = SymmetricEigen::new(xc.outer_gram().to_nalgebra());
        let order = descending(eig.eigenvalues.as_slice());
        let vars: Vec<f64> = order[..k]
            .iter()
            .map(|&i| eig.eigenvalues[i].max(0.0) / denom)
            .collect();
        let vecs: Vec<Vec<f64>> = order[..k]
            .iter()
            .map(|&i| {
                let u: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
                xc.tr_mat_vec(&u).expect("u has n entries")
            })
            .collect();
        (vars, vecs)
    };

    orthonormalize(&mut vectors, d);
    for v in &mut vectors {
        let lead = v
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }

    let ratios = variances
        .iter()
        .map(|v| {
            if total_variance > 0.0 {
                (v / total_variance).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    Ok(PcaModel {
        mean,
        components: Matrix::new(k, d, vectors.concat())?,
        explained_variance: variances,
        explained_variance_ratio: ratios,
    })
}

/// Fits as many components as the data allows, then keeps the fewest that
/// reach `target` cumulative explained variance.
pub fn fit_pca_variance(x: &Matrix, target: f64) -> Result<(PcaModel, bool), NumericsError> {
    let max_k = x.rows().saturating_sub(1).min(x.cols());
    let full = fit_pca(x, max_k)?;
    let (k, reached) = select_k_for_variance(&full.explained_variance_ratio, target);
    Ok((full.truncate(k.max(1)), reached))
}

fn descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Modified Gram–Schmidt; directions that vanish (rank-deficient data) are
/// replaced with the standard basis vector least covered by earlier rows.
fn orthonormalize(vectors: &mut [Vec<f64>], d: usize) {
    for i in 0..vectors.len() {
        let (done, rest) = vectors.split_at_mut(i);
        let v = &mut rest[0];
        let scale = norm(v);
        for u in done.iter() {
            let p = dot(u, v);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
        }
        let mut n = norm(v);
        if n <= 1e-10 * scale.max(1e-300) || n == 0.0 {
            let j = (0..d)
                .max_by(|&a, &b| {
                    let cov = |j: usize| done.iter().map(|u| u[j] * u[j]).sum::<f64>();
                    cov(b).total_cmp(&cov(a))
                })
                .unwrap_or(0);
            v.iter_mut().for_each(|x| *x = 0.0);
            v[j] = 1.0;
            for u in done.iter() {
                let p = dot(u, v);
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
            }
            n = norm(v);
        }
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// `(X − mean) · componentsᵀ`.
pub fn pca_transform(m: &PcaModel, x: &Matrix) -> Result<Matrix, NumericsError> {
    if x.cols() != m.input_dim() {
        return Err(NumericsError::Dimension(format!(
            "PCA fitted on {} features, got {}",
            m.input_dim(),
            x.cols()
        )));
    }
    x.sub_row(&m.mean).matmul(&m.components.transpose())
}

/// Smallest `k` whose cumulative ratio reaches `target`, and whether it did.
///
/// When the target is out of reach every component is kept and the flag is
/// false.
pub fn select_k_for_variance(ratios: &[f64], target: f64) -> (usize, bool) {
    let mut cumulative = 0.0;
    for (i, r) in ratios.iter().enumerate() {
        cumulative += r;
        if cumulative >= target - 1e-12 {
            return (i + 1, true);
        }
    }
    (ratios.len(), false)
}

/// Per-feature z-scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Standardizer {
        let mean = x.column_means();
        let n = x.rows();
        let mut var = vec![0.0; x.cols()];
        for r in x.row_iter() {
            for ((v, &xi), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (xi - m) * (xi - m);
            }
        }
        let denom = n.saturating_sub(1).max(1) as f64;
        let scale = var
            .iter()
            .map(|v| {
                let s = (v / denom).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix, NumericsError> {
        if x.cols() != self.mean.len() {
            return Err(NumericsError::Dimension(format!(
                "standardizer fitted on {} features, got {}",
                self.mean.len(),
                x.cols()
            )));
        }
        let mut out = x.sub_row(&self.mean);
        for r in out.data.chunks_exact_mut(x.cols().max(1)) {
            for (v, s) in r.iter_mut().zip(&self.scale) {
                *v /= s;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    /// Gaussian elimination with partial pivoting, independent of Cholesky.
    fn eliminate(a: &Matrix, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut r = a.row(i).to_vec();
                r.push(b[i]);
                r
            })
            .collect();
        for c in 0..n {
            let p = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
            m.swap(c, p);
            for r in c + 1..n {
                let f = m[r][c] / m[c][c];
                for k in c..=n {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| m[i][k] * x[k]).sum();
            x[i] = (m[i][n] - s) / m[i][i];
        }
        x
    }

    #[test]
    fn solves_simple_systems() {
        let x = solve_spd(&Matrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
        let a = Matrix::from_rows(&[[2.0, 0.0], [0.0, 4.0]]).unwrap();
        let x = solve_spd(&a, &[2.0, 8.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn matches_elimination_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_matrix(&mut rng, 8, 8);
        let mut a = m.gram();
        for i in 0..8 {
            a.set(i, i, a.get(i, i) + 1.0);
        }
        let b: Vec<f64> = (0..8).map(|_| rng.random_range(-5.0..5.0)).collect();
        let x = solve_spd(&a, &b).unwrap();
        let oracle = eliminate(&a, &b);
        for (u, v) in x.iter().zip(&oracle) {
            assert!((u - v).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_systems() {
        let singular = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert_eq!(
            solve_spd(&singular, &[1.0, 1.0]),
            Err(NumericsError::Singular { pivot: 1 })
        );
        let indefinite = Matrix::from_rows(&[[-1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(
            solve_spd(&indefinite, &[1.0, 1.0]),
            Err(NumericsError::Singular { pivot: 0 })
        );
        let asym = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(
            solve_spd(&asym, &[1.0, 1.0]),
            Err(NumericsError::NotSymmetric { .. })
        ));
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert_eq!(
            Matrix::new(1, 1, vec![f64::NAN]),
            Err(NumericsError::NonFinite)
        );
    }

    #[test]
    fn rank_one_pca() {
        let x = Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0], [-3.0, -3.0], [0.5, 0.5]]).unwrap();
        let pca = fit_pca(&x, 1).unwrap();
        assert!((pca.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
        let c = pca.components.row(0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((c[0] - h).abs() < 1e-12 && (c[1] - h).abs() < 1e-12);

        let z = pca_transform(&pca, &x).unwrap();
        let back = pca.inverse_transform(&z).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn orthogonal_clusters_share_variance() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]).unwrap();
        let pca = fit_pca(&x, 2).unwrap();
        let total: f64 = pca.explained_variance_ratio.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_rank_reconstruction_and_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 30, 10);
        let pca = fit_pca(&x, 10).unwrap();
        let z = pca_transform(&pca, &x).unwrap();
        let back = pca.inverse_transform(&z).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-7);
        }
        for i in 0..30 {
            for j in 0..i {
                let dx: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
                let dz: f64 = z.row(i).iter().zip(z.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
                assert!((dx.sqrt() - dz.sqrt()).abs() < 1e-7);
            }
        }
        let mean_row = Matrix::new(1, 10, pca.mean.clone()).unwrap();
        let zm = pca_transform(&pca, &mean_row).unwrap();
        assert!(zm.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gram_path_components_are_covariance_eigenvectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // 6 samples in 20 dims takes the Gram route
        let wide = random_matrix(&mut rng, 6, 20);
        let pca = fit_pca(&wide, 5).unwrap();
        let xc = wide.sub_row(&wide.column_means());
        let mut cov = xc.gram();
        cov.data.iter_mut().for_each(|v| *v /= 5.0);
        for i in 0..5 {
            let v = pca.components.row(i);
            let cv = cov.mat_vec(v).unwrap();
            for (a, b) in cv.iter().zip(v) {
                assert!((a - pca.explained_variance[i] * b).abs() < 1e-9);
            }
            for j in 0..5 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot(v, pca.components.row(j)) - expected).abs() < 1e-8);
            }
        }
        let total: f64 = pca.explained_variance_ratio.iter().sum();
        assert!((total - 1.0).abs() < 1e-9, "6 samples span 5 dims");
        assert!(pca.explained_variance_ratio.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn pca_rejects_bad_k() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 7.0]]).unwrap();
        assert!(fit_pca(&x, 0).is_err());
        assert!(fit_pca(&x, 3).is_err());
        let single = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert!(fit_pca(&single, 1).is_err());
        let pca = fit_pca(&x, 2).unwrap();
        let wrong = Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        assert!(pca_transform(&pca, &wrong).is_err());
    }

    #[test]
    fn variance_selection() {
        assert_eq!(select_k_for_variance(&[0.6, 0.25, 0.15], 0.85), (2, true));
        assert_eq!(select_k_for_variance(&[1.0], 0.85), (1, true));
        assert_eq!(select_k_for_variance(&[0.5, 0.2], 0.85), (2, false));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let mut raw: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..1.0)).collect();
            raw.sort_by(|a, b| b.total_cmp(a));
            let s: f64 = raw.iter().sum();
            let ratios: Vec<f64> = raw.iter().map(|r| r / s).collect();
            let target = rng.random_range(0.05..0.99);
            // brute force: first prefix length whose sum clears the target
            let brute = (1..=ratios.len())
                .find(|&k| ratios[..k].iter().sum::<f64>() >= target - 1e-12)
                .unwrap();
            assert_eq!(select_k_for_variance(&ratios, target).0, brute);
        }
    }

    #[test]
    fn standardizer_scales_columns() {
        let x = Matrix::from_rows(&[[1.0, 5.0], [3.0, 5.0]]).unwrap();
        let s = Standardizer::fit(&x);
        let z = s.transform(&x).unwrap();
        assert!((z.get(0, 0) + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        // constant column keeps unit scale
        assert_eq!(z.get(0, 1), 0.0);
    }
}
