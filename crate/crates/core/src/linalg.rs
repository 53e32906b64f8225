//! Thin SVD by one-sided Jacobi rotations.
//!
//! The tall orientation is reduced by Householder QR first, then the columns
//! of the triangular factor are orthogonalized pairwise. Disjoint pairs of a
//! round-robin round are rotated in parallel; the schedule is fixed, so the
//! result does not depend on the thread count.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 80;

pub(crate) struct Svd {
    /// Rows × rank, orthonormal columns.
    pub u: DMatrix<f64>,
    /// Descending, all positive.
    pub s: DVector<f64>,
    /// Columns × rank, orthonormal columns.
    pub v: DMatrix<f64>,
}

/// Factors `x = U diag(s) Vᵀ`, keeping singular values above
/// `s_max · max(rows, cols) · ε`.
pub(crate) fn thin_svd(x: &DMatrix<f64>) -> Result<Svd> {
    if x.nrows() < x.ncols() {
        let t = tall_svd(&x.transpose())?;
        return Ok(Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        });
    }
    tall_svd(x)
}

fn tall_svd(a: &DMatrix<f64>) -> Result<Svd> {
    let (m, n) = a.shape();
    let qr = a.clone().qr();
    let q = qr.q();
    let r = qr.r();

    let mut w: Vec<Vec<f64>> = r.column_iter().map(|c| c.iter().copied().collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let frob2: f64 = w.iter().flatten().map(|x| x * x).sum();
    let floor = (n as f64 * f64::EPSILON).powi(2) * frob2;

    let rounds = round_robin(n);
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotations = 0usize;
        for round in &rounds {
            let mut jobs: Vec<Pair> = round
                .iter()
                .map(|&(p, q)| Pair {
                    p,
                    q,
                    wp: std::mem::take(&mut w[p]),
                    wq: std::mem::take(&mut w[q]),
                    vp: std::mem::take(&mut v[p]),
                    vq: std::mem::take(&mut v[q]),
                })
                .collect();
            rotations += jobs.par_iter_mut().map(|j| j.rotate(floor) as usize).sum::<usize>();
            for j in jobs {
                w[j.p] = j.wp;
                w[j.q] = j.wq;
                v[j.p] = j.vp;
                v[j.q] = j.vq;
            }
        }
        converged = rotations == 0;
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "Jacobi SVD did not converge in {MAX_SWEEPS} sweeps"
        )));
    }

    let norms: Vec<f64> = w.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let s_max = norms.iter().cloned().fold(0.0, f64::max);
    let tol = s_max * m.max(n) as f64 * f64::EPSILON;
    let mut keep: Vec<usize> = (0..n).filter(|&j| norms[j] > tol).collect();
    keep.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let k = keep.len();
    let uw = DMatrix::from_fn(n, k, |i, c| w[keep[c]][i] / norms[keep[c]]);
    Ok(Svd {
        u: q * uw,
        s: DVector::from_iterator(k, keep.iter().map(|&j| norms[j])),
        v: DMatrix::from_fn(n, k, |i, c| v[keep[c]][i]),
    })
}

struct Pair {
    p: usize,
    q: usize,
    wp: Vec<f64>,
    wq: Vec<f64>,
    vp: Vec<f64>,
    vq: Vec<f64>,
}

impl Pair {
    /// Orthogonalizes the two columns; returns whether a rotation was applied.
    fn rotate(&mut self, floor: f64) -> bool {
        let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
        for (a, b) in self.wp.iter().zip(&self.wq) {
            alpha += a * a;
            beta += b * b;
            gamma += a * b;
        }
        if alpha <= floor || beta <= floor || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
            return false;
        }
        let zeta = (beta - alpha) / (2.0 * gamma);
        let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
        let c = 1.0 / (1.0 + t * t).sqrt();
        let s = c * t;
        rotate_pair(&mut self.wp, &mut self.wq, c, s);
        rotate_pair(&mut self.vp, &mut self.vq, c, s);
        true
    }
}

fn rotate_pair(a: &mut [f64], b: &mut [f64], c: f64, s: f64) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (xa, yb) = (*x, *y);
        *x = c * xa - s * yb;
        *y = s * xa + c * yb;
    }
}

/// Circle-method schedule: every pair of `0..n` exactly once, each round a
/// set of disjoint pairs.
fn round_robin(n: usize) -> Vec<Vec<(usize, usize)>> {
    if n < 2 {
        return Vec::new();
    }
    let m = n + n % 2;
    let mut ring: Vec<usize> = (0..m).collect();
    let mut rounds = Vec::with_capacity(m - 1);
    for _ in 0..m - 1 {
        let round = (0..m / 2)
            .map(|i| (ring[i], ring[m - 1 - i]))
            .filter(|&(a, b)| a < n && b < n)
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        rounds.push(round);
        let last = ring.pop().expect("non-empty ring");
        ring.insert(1, last);
    }
    rounds
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{randn, rng};

    fn check(x: &DMatrix<f64>) {
        let f = thin_svd(x).unwrap();
        let rec = &f.u * DMatrix::from_diagonal(&f.s) * f.v.transpose();
        let scale = x.norm().max(1.0);
        assert!((rec - x).amax() < 1e-12 * scale, "reconstruction");
        let k = f.s.len();
        assert!((f.u.tr_mul(&f.u) - DMatrix::identity(k, k)).amax() < 1e-12);
        assert!((f.v.tr_mul(&f.v) - DMatrix::identity(k, k)).amax() < 1e-12);
        assert!(f.s.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn schedule_covers_every_pair_once() {
        for n in 1..12 {
            let mut seen = std::collections::BTreeSet::new();
            for round in round_robin(n) {
                let mut used = std::collections::BTreeSet::new();
                for (a, b) in round {
                    assert!(used.insert(a) && used.insert(b));
                    assert!(seen.insert((a, b)));
                }
            }
            assert_eq!(seen.len(), n * (n - 1) / 2);
        }
    }

    #[test]
    fn factors_wide_tall_and_rank_deficient_matrices() {
        let mut g = rng(3);
        for &(t, f) in &[(4, 68), (6, 58), (20, 90), (100, 50), (7, 7), (1, 5), (5, 1)] {
            let mut x = randn(t, f, &mut g);
            check(&x);
            for mut c in x.column_iter_mut() {
                let m = c.mean();
                c.add_scalar_mut(-m);
            }
            check(&x);
        }
        let mut dup = randn(40, 6, &mut g);
        let c0 = dup.column(0).into_owned();
        dup.set_column(5, &c0);
        check(&dup);
        assert_eq!(thin_svd(&dup).unwrap().s.len(), 5);
        assert_eq!(thin_svd(&DMatrix::zeros(4, 3)).unwrap().s.len(), 0);
    }

    #[test]
    fn known_singular_values() {
        let x = DMatrix::from_row_slice(3, 2, &[3.0, 0.0, 0.0, -2.0, 0.0, 0.0]);
        let f = thin_svd(&x).unwrap();
        assert!((f.s[0] - 3.0).abs() < 1e-15 && (f.s[1] - 2.0).abs() < 1e-15);
    }
}
