//! Streaming orthogonal least-squares line fit.
//!
//! Each Hough cell keeps the running mean of its points together with the
//! left singular vectors `P` and singular values `Σ` of the mean-adjusted
//! point matrix. A new point is folded in with a rank-one sequential
//! Karhunen–Loève update: difference matrix, QR of its component outside
//! span(P), SVD of the 5×5 augmented matrix, and truncation back to 3×3.
//! Cost per point is constant.
//!
//! Below the vote threshold a cell only needs its points' first and second
//! moments; [`LineMoments`] keeps them and yields the same `(mean, P, Σ)` by a
//! 3×3 eigen-decomposition when the cell reaches the threshold.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

/// Running line fit of the points voted into one cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinePca {
    pub mean: [f64; 3],
    /// Columns are left singular vectors, most significant first.
    pub basis: [[f64; 3]; 3],
    /// Singular values, non-increasing.
    pub sigma: [f64; 3],
}

const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl LinePca {
    /// State after the first point: mean = z, P = I, Σ = 0.
    pub fn from_point(z: &Vector3<f64>) -> Self {
        LinePca {
            mean: [z.x, z.y, z.z],
            basis: IDENTITY,
            sigma: [0.0; 3],
        }
    }

    pub fn mean(&self) -> Vector3<f64> {
        Vector3::from(self.mean)
    }

    /// Fitted line direction: first column of P.
    pub fn direction(&self) -> Vector3<f64> {
        Vector3::from(self.basis[0])
    }

    pub fn basis_column(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.basis[i])
    }

    /// Folds in point `z`; `votes` counts points including `z`.
    pub fn update(&mut self, z: &Vector3<f64>, votes: u32) {
        if votes <= 1 {
            *self = LinePca::from_point(z);
            return;
        }
        let n = votes as f64;
        let old = self.mean;
        let w_old = (n - 1.0) / n;
        for i in 0..3 {
            self.mean[i] = w_old * old[i] + z[i] / n;
        }

        // difference matrix [0, b]
        let scale = w_old.sqrt();
        let b = [scale * (z.x - old[0]), scale * (z.y - old[1]), scale * (z.z - old[2])];
        let p = &self.basis;
        let pb = [dot(&p[0], &b), dot(&p[1], &b), dot(&p[2], &b)];
        let mut resid = b;
        for (col, &c) in p.iter().zip(&pb) {
            for i in 0..3 {
                resid[i] -= col[i] * c;
            }
        }

        let bnorm = dot(&b, &b).sqrt();
        let (q, r) = qr_3x2(&[[0.0; 3], resid], bnorm);

        // E = [[Σ, PᵀB̂], [0, B̃ᵀ(B̂ − PPᵀB̂)]]. B̂'s first column is zero, so
        // row 3 and column 3 of E vanish; the SVD runs on the other 4×4.
        debug_assert!(r[0][0] == 0.0 && r[0][1] == 0.0);
        let e = [
            [self.sigma[0], 0.0, 0.0, pb[0]],
            [0.0, self.sigma[1], 0.0, pb[1]],
            [0.0, 0.0, self.sigma[2], pb[2]],
            [0.0, 0.0, 0.0, r[1][1]],
        ];
        let (u, s) = svd_4x4_left(&e);

        // P ← [P, B̃]·Ũ, keeping the leading three columns
        let cols = [p[0], p[1], p[2], q[1]];
        let mut basis = [[0.0; 3]; 3];
        for (j, out) in basis.iter_mut().enumerate() {
            for (k, col) in cols.iter().enumerate() {
                let w = u[k][j];
                for i in 0..3 {
                    out[i] += col[i] * w;
                }
            }
        }
        self.basis = basis;
        self.sigma = [s[0], s[1], s[2]];
    }
}

/// Running mean and scatter matrix (sum of outer products of the
/// mean-adjusted points) of a cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineMoments {
    pub mean: [f64; 3],
    /// Upper triangle: xx, xy, xz, yy, yz, zz.
    pub scatter: [f64; 6],
}

impl LineMoments {
    pub fn from_point(z: &Vector3<f64>) -> Self {
        LineMoments {
            mean: [z.x, z.y, z.z],
            scatter: [0.0; 6],
        }
    }

    /// Folds in point `z`; `votes` counts points including `z`.
    #[inline]
    pub fn update(&mut self, z: &Vector3<f64>, votes: u32) {
        if votes <= 1 {
            *self = LineMoments::from_point(z);
            return;
        }
        let n = votes as f64;
        let w_old = (n - 1.0) / n;
        let b = [z.x - self.mean[0], z.y - self.mean[1], z.z - self.mean[2]];
        for (m, d) in self.mean.iter_mut().zip(b) {
            *m += d / n;
        }
        let s = &mut self.scatter;
        s[0] += w_old * b[0] * b[0];
        s[1] += w_old * b[0] * b[1];
        s[2] += w_old * b[0] * b[2];
        s[3] += w_old * b[1] * b[1];
        s[4] += w_old * b[1] * b[2];
        s[5] += w_old * b[2] * b[2];
    }

    pub fn scatter_matrix(&self) -> Matrix3<f64> {
        let s = &self.scatter;
        Matrix3::new(s[0], s[1], s[2], s[1], s[3], s[4], s[2], s[4], s[5])
    }

    /// The equivalent SVD state: P = eigenvectors of the scatter, Σ = square
    /// roots of its eigenvalues, both in non-increasing order.
    pub fn to_pca(&self) -> LinePca {
        if self.scatter.iter().all(|&v| v == 0.0) {
            return LinePca {
                mean: self.mean,
                basis: IDENTITY,
                sigma: [0.0; 3],
            };
        }
        let eig = SymmetricEigen::new(self.scatter_matrix());
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut basis = [[0.0; 3]; 3];
        let mut sigma = [0.0; 3];
        for (dst, &src) in order.iter().enumerate() {
            sigma[dst] = eig.eigenvalues[src].max(0.0).sqrt();
            let col = eig.eigenvectors.column(src);
            basis[dst] = [col[0], col[1], col[2]];
        }
        LinePca {
            mean: self.mean,
            basis,
            sigma,
        }
    }
}

#[inline]
fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Thin QR of a 3×2 matrix given as two columns, by modified Gram–Schmidt.
/// Columns whose residual is negligible relative to `scale` get a zero `Q`
/// column and zero diagonal in `R`.
pub(crate) fn qr_3x2(cols: &[[f64; 3]; 2], scale: f64) -> ([[f64; 3]; 2], [[f64; 2]; 2]) {
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut q = [[0.0; 3]; 2];
    let mut r = [[0.0; 2]; 2];

    let n0 = dot(&cols[0], &cols[0]).sqrt();
    if n0 > tol {
        r[0][0] = n0;
        for i in 0..3 {
            q[0][i] = cols[0][i] / n0;
        }
    }
    let mut v = cols[1];
    r[0][1] = dot(&q[0], &v);
    for i in 0..3 {
        v[i] -= q[0][i] * r[0][1];
    }
    let n1 = dot(&v, &v).sqrt();
    if n1 > tol {
        r[1][1] = n1;
        for i in 0..3 {
            q[1][i] = v[i] / n1;
        }
    }
    (q, r)
}

/// [`svd_5x5_left`] for the non-zero 4×4 block of the update matrix, without
/// allocation. Rows of `e` with zero norm are left untouched.
#[inline]
fn svd_4x4_left(e: &[[f64; 4]; 4]) -> ([[f64; 4]; 4], [f64; 4]) {
    let mut rows = *e;
    let mut u = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
    let sq = |r: &[f64; 4]| r[0] * r[0] + r[1] * r[1] + r[2] * r[2] + r[3] * r[3];
    let mut norms = [sq(&rows[0]), sq(&rows[1]), sq(&rows[2]), sq(&rows[3])];

    for _sweep in 0..40 {
        let mut rotated = false;
        for i in 0..3 {
            for j in i + 1..4 {
                let (a, b) = (norms[i], norms[j]);
                if a == 0.0 || b == 0.0 {
                    continue;
                }
                let (ri, rj) = (rows[i], rows[j]);
                let c = ri[0] * rj[0] + ri[1] * rj[1] + ri[2] * rj[2] + ri[3] * rj[3];
                if c * c <= 1e-28 * (a * b) {
                    continue;
                }
                rotated = true;
                let zeta = (b - a) / (2.0 * c);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for k in 0..4 {
                    rows[i][k] = cs * ri[k] - sn * rj[k];
                    rows[j][k] = sn * ri[k] + cs * rj[k];
                    let (ui, uj) = (u[k][i], u[k][j]);
                    u[k][i] = cs * ui - sn * uj;
                    u[k][j] = sn * ui + cs * uj;
                }
                norms[i] = (a - t * c).max(0.0);
                norms[j] = (b + t * c).max(0.0);
            }
        }
        if !rotated {
            break;
        }
    }
    let norms = [sq(&rows[0]), sq(&rows[1]), sq(&rows[2]), sq(&rows[3])];

    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    let mut u_sorted = [[0.0; 4]; 4];
    let mut s = [0.0; 4];
    for (dst, &src) in order.iter().enumerate() {
        s[dst] = norms[src].sqrt();
        for k in 0..4 {
            u_sorted[k][dst] = u[k][src];
        }
    }
    (u_sorted, s)
}

/// Left singular vectors and singular values of a 5×5 matrix by one-sided
/// (row) Jacobi rotations. Returns `U` row-major with columns sorted by
/// non-increasing singular value; ties keep their original order.
#[cfg(test)]
pub(crate) fn svd_5x5_left(e: &[[f64; 5]; 5]) -> ([[f64; 5]; 5], [f64; 5]) {
    let mut rows = *e;
    let mut u = [[0.0; 5]; 5];
    for (i, row) in u.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let mut norms: [f64; 5] = std::array::from_fn(|i| rows[i].iter().map(|x| x * x).sum());
    let active: Vec<usize> = (0..5).filter(|&i| norms[i] > 0.0).collect();

    for _sweep in 0..40 {
        let mut rotated = false;
        for (ai, &i) in active.iter().enumerate() {
            for &j in &active[ai + 1..] {
                let (a, b) = (norms[i], norms[j]);
                let c = rows[i][0] * rows[j][0]
                    + rows[i][1] * rows[j][1]
                    + rows[i][2] * rows[j][2]
                    + rows[i][3] * rows[j][3]
                    + rows[i][4] * rows[j][4];
                if c * c <= 1e-28 * (a * b) {
                    continue;
                }
                rotated = true;
                let zeta = (b - a) / (2.0 * c);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for k in 0..5 {
                    let (ri, rj) = (rows[i][k], rows[j][k]);
                    rows[i][k] = cs * ri - sn * rj;
                    rows[j][k] = sn * ri + cs * rj;
                    let (ui, uj) = (u[k][i], u[k][j]);
                    u[k][i] = cs * ui - sn * uj;
                    u[k][j] = sn * ui + cs * uj;
                }
                norms[i] = (a - t * c).max(0.0);
                norms[j] = (b + t * c).max(0.0);
            }
        }
        if !rotated {
            break;
        }
    }
    for &i in &active {
        norms[i] = rows[i].iter().map(|x| x * x).sum();
    }

    let mut order = [0usize, 1, 2, 3, 4];
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    let mut u_sorted = [[0.0; 5]; 5];
    let mut s = [0.0; 5];
    for (dst, &src) in order.iter().enumerate() {
        s[dst] = norms[src].sqrt();
        for k in 0..5 {
            u_sorted[k][dst] = u[k][src];
        }
    }
    (u_sorted, s)
}
