use crate::error::{check_dim, Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dim(cols, r.len())?;
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `self^T * y`
    pub fn tr_matvec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (i, yi) in y.iter().enumerate() {
            axpy(*yi, self.row(i), &mut out);
        }
        out
    }

    /// Gram matrix `self * self^T + ridge * I`.
    pub fn gram_ridge(&self, ridge: f64) -> Mat {
        let n = self.rows;
        let mut g = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = dot(self.row(i), self.row(j));
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
            g[(i, i)] += ridge;
        }
        g
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Solves `A y = r` for symmetric positive definite `A` by a dense Cholesky
/// factorization followed by one step of iterative refinement.
pub fn solve_spd(a: &Mat, r: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows();
    check_dim(n, a.cols())?;
    check_dim(n, r.len())?;
    if a.data.iter().chain(r).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entry in SPD system".into()));
    }

    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(Error::Numerical(format!(
                "Cholesky factorization failed at pivot {j}"
            )));
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }

    let solve = |rhs: &[f64]| -> Vec<f64> {
        let mut y = rhs.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[(k, i)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        y
    };

    let mut y = solve(r);
    // one refinement pass recovers most of the accuracy lost to conditioning
    let resid: Vec<f64> = a.matvec(&y).iter().zip(r).map(|(ay, ri)| ri - ay).collect();
    let corr = solve(&resid);
    axpy(1.0, &corr, &mut y);
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::SeededRng;

    #[test]
    fn identity_system() {
        let y = solve_spd(&Mat::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn scalar_system() {
        let mut a = Mat::identity(2);
        a[(0, 0)] = 2.0;
        a[(1, 1)] = 2.0;
        let y = solve_spd(&a, &[4.0, 6.0]).unwrap();
        assert_eq!(y, vec![2.0, 3.0]);
    }

    #[test]
    fn rejects_non_finite_and_indefinite() {
        let mut a = Mat::identity(2);
        a[(0, 0)] = f64::NAN;
        assert!(matches!(solve_spd(&a, &[1.0, 1.0]), Err(Error::Numerical(_))));
        let mut a = Mat::identity(2);
        a[(1, 1)] = -1.0;
        assert!(matches!(solve_spd(&a, &[1.0, 1.0]), Err(Error::Numerical(_))));
    }

    /// Random SPD matrix `Q diag(s) Q^T` with eigenvalues log-spaced so the
    /// condition number is exactly `cond`.
    fn random_spd(rng: &mut SeededRng, n: usize, cond: f64) -> Mat {
        // orthonormalize a random square matrix by Gram-Schmidt
        let mut q: Vec<Vec<f64>> = Vec::new();
        while q.len() < n {
            let mut v = rng.std_normal_vec(n);
            for u in &q {
                let c = dot(&v, u);
                axpy(-c, u, &mut v);
            }
            let nv = norm(&v);
            if nv > 1e-8 {
                q.push(scale(&v, 1.0 / nv));
            }
        }
        let mut a = Mat::zeros(n, n);
        for (k, u) in q.iter().enumerate() {
            let frac = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.0 };
            let s = cond.powf(frac);
            for i in 0..n {
                for j in 0..n {
                    a[(i, j)] += s * u[i] * u[j];
                }
            }
        }
        // exact symmetry
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (a[(i, j)] + a[(j, i)]);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        a
    }

    #[test]
    fn residual_bound_on_random_spd_instances() {
        let mut rng = SeededRng::new(11, 0);
        for case in 0..1000 {
            let n = 1 + case % 8;
            let cond = 10f64.powf(6.0 * rng.uniform());
            let a = random_spd(&mut rng, n, cond);
            let r = rng.std_normal_vec(n);
            let y = solve_spd(&a, &r).unwrap();
            let res: Vec<f64> = a.matvec(&y).iter().zip(&r).map(|(p, q)| p - q).collect();
            assert!(
                norm(&res) <= 1e-10 * (1.0 + norm(&r)),
                "case {case}: residual {}",
                norm(&res)
            );
        }
    }

    #[test]
    fn five_by_five_spd() {
        let mut rng = SeededRng::new(3, 1);
        let a = random_spd(&mut rng, 5, 1e3);
        let r = rng.std_normal_vec(5);
        let y = solve_spd(&a, &r).unwrap();
        let res = sub(&a.matvec(&y), &r);
        assert!(norm(&res) <= 1e-10);
    }

    #[test]
    fn gram_ridge_is_symmetric() {
        let j = Mat::from_rows(&[vec![1.0, 2.0, 0.0], vec![0.0, 1.0, 3.0]]).unwrap();
        let g = j.gram_ridge(0.5);
        assert_eq!(g[(0, 0)], 5.5);
        assert_eq!(g[(0, 1)], 2.0);
        assert_eq!(g[(1, 0)], 2.0);
        assert_eq!(g[(1, 1)], 10.5);
        assert_eq!(j.tr_matvec(&[1.0, 1.0]), vec![1.0, 3.0, 3.0]);
    }
}
