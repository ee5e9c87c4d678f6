//! Dense Hermitian linear algebra used by the Floquet and gauge modules.
//!
//! Matrices are stored as `faer::Mat<c64>`. When every imaginary part is zero
//! the eigensolvers switch to the real symmetric path, which is several times
//! cheaper and covers the common even-perturbation case.

use faer::prelude::*;
use faer::{Mat, Side};

use crate::error::{Error, Result};

pub use faer::c64;

/// Complex Hermitian (or real symmetric) dense matrix.
pub type CMat = Mat<c64>;

pub fn zeros(n: usize) -> CMat {
    Mat::zeros(n, n)
}

pub fn identity(n: usize) -> CMat {
    Mat::identity(n, n)
}

/// True when no entry carries an imaginary part.
pub fn is_real(a: &CMat) -> bool {
    (0..a.ncols()).all(|j| (0..a.nrows()).all(|i| a[(i, j)].im == 0.0))
}

/// Largest absolute entry.
pub fn max_abs(a: &CMat) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].norm());
        }
    }
    m
}

/// `max |A - A^H|`, the Hermiticity defect.
pub fn hermitian_defect(a: &CMat) -> f64 {
    let n = a.nrows();
    let mut m = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            m = m.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    m
}

/// `max |G + G^H|`, the anti-Hermiticity defect.
pub fn anti_hermitian_defect(a: &CMat) -> f64 {
    let n = a.nrows();
    let mut m = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            m = m.max((a[(i, j)] + a[(j, i)].conj()).norm());
        }
    }
    m
}

fn real_part(a: &CMat) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)].re)
}

/// Dense kernels run single-threaded; parallelism lives at the level of
/// independent problems, which keeps results independent of thread count.
pub(crate) fn sequential_kernels() {
    static ONCE: std::sync::Once = std::sync::Once::new();
    ONCE.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
}

/// Ascending eigenvalues of a Hermitian matrix.
pub fn eigenvalues(a: &CMat) -> Result<Vec<f64>> {
    sequential_kernels();
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let mut vals = if is_real(a) {
        real_part(a)
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| Error::Eigensolver(format!("{e:?} (n = {})", a.nrows())))?
    } else {
        a.self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| Error::Eigensolver(format!("{e:?} (n = {})", a.nrows())))?
    };
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

/// Eigenpairs of a Hermitian matrix, eigenvalues ascending; column `k` of the
/// returned matrix is the unit eigenvector for eigenvalue `k`.
pub fn eigen(a: &CMat) -> Result<(Vec<f64>, CMat)> {
    sequential_kernels();
    let n = a.nrows();
    if n == 0 {
        return Ok((Vec::new(), zeros(0)));
    }
    let fail = |e: faer::linalg::evd::EvdError| Error::Eigensolver(format!("{e:?} (n = {n})"));
    let (vals, vecs) = if is_real(a) {
        let evd = real_part(a).self_adjoint_eigen(Side::Lower).map_err(fail)?;
        let s = evd.S().column_vector();
        let u = evd.U();
        let vals: Vec<f64> = (0..n).map(|k| s[k]).collect();
        let vecs = Mat::from_fn(n, n, |i, j| c64::new(u[(i, j)], 0.0));
        (vals, vecs)
    } else {
        let evd = a.self_adjoint_eigen(Side::Lower).map_err(fail)?;
        let s = evd.S().column_vector();
        let vals: Vec<f64> = (0..n).map(|k| s[k].re).collect();
        (vals, evd.U().to_owned())
    };
    // faer returns ascending values already; keep the contract explicit.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| vals[x].total_cmp(&vals[y]));
    if order.iter().enumerate().all(|(k, &o)| k == o) {
        return Ok((vals, vecs));
    }
    let sorted_vals = order.iter().map(|&k| vals[k]).collect();
    let sorted_vecs = Mat::from_fn(n, n, |i, j| vecs[(i, order[j])]);
    Ok((sorted_vals, sorted_vecs))
}

/// Max residual `‖A v_k − λ_k v_k‖` over the supplied eigenpairs.
pub fn eigen_residual(a: &CMat, vals: &[f64], vecs: &CMat) -> f64 {
    let av = a * vecs;
    let mut worst = 0.0f64;
    for (k, &lam) in vals.iter().enumerate() {
        let mut s = 0.0;
        for i in 0..a.nrows() {
            s += (av[(i, k)] - vecs[(i, k)] * lam).norm_sqr();
        }
        worst = worst.max(s.sqrt());
    }
    worst
}

fn one_norm(a: &CMat) -> f64 {
    (0..a.ncols())
        .map(|j| (0..a.nrows()).map(|i| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

fn scaled(a: &CMat, s: f64) -> CMat {
    a * Scale(c64::new(s, 0.0))
}

/// Matrix exponential by scaling and squaring with the degree-13 Padé
/// approximant.
pub fn expm(a: &CMat) -> CMat {
    sequential_kernels();
    let n = a.nrows();
    if n == 0 {
        return zeros(0);
    }
    let norm = one_norm(a);
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = scaled(a, 0.5f64.powi(squarings));
    let id = identity(n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;

    let inner_u = scaled(&a6, b[13]) + scaled(&a4, b[11]) + scaled(&a2, b[9]);
    let u_poly = &a6 * &inner_u
        + scaled(&a6, b[7])
        + scaled(&a4, b[5])
        + scaled(&a2, b[3])
        + scaled(&id, b[1]);
    let u = &a * &u_poly;

    let inner_v = scaled(&a6, b[12]) + scaled(&a4, b[10]) + scaled(&a2, b[8]);
    let v = &a6 * &inner_v
        + scaled(&a6, b[6])
        + scaled(&a4, b[4])
        + scaled(&a2, b[2])
        + scaled(&id, b[0]);

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.partial_piv_lu().solve(&p);
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

/// `U^H A U`.
pub fn conjugate(a: &CMat, u: &CMat) -> CMat {
    sequential_kernels();
    let au = a * u;
    u.adjoint() * &au
}

/// Largest deviation of `U^H U` from the identity.
pub fn unitarity_defect(u: &CMat) -> f64 {
    let p = u.adjoint() * u;
    let n = u.nrows();
    let mut m = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            m = m.max((p[(i, j)] - c64::new(target, 0.0)).norm());
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(n: usize, seed: u64) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = zeros(n);
        for j in 0..n {
            a[(j, j)] = c64::new(rng.gen_range(-1.0..1.0), 0.0);
            for i in 0..j {
                let z = c64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                a[(i, j)] = z;
                a[(j, i)] = z.conj();
            }
        }
        a
    }

    // Characteristic polynomial by Faddeev-LeVerrier, roots by bisection on
    // sign changes over a fine scan; independent of the QR-based solver.
    fn charpoly_roots(a: &CMat) -> Vec<f64> {
        let n = a.nrows();
        let mut coeffs = vec![c64::new(1.0, 0.0)];
        let mut m = zeros(n);
        for k in 1..=n {
            let mut mk = a * &m;
            let ck_prev = coeffs[k - 1];
            for i in 0..n {
                mk[(i, i)] += ck_prev;
            }
            m = mk;
            let am = a * &m;
            let mut tr = c64::new(0.0, 0.0);
            for i in 0..n {
                tr += am[(i, i)];
            }
            coeffs.push(-tr / (k as f64));
        }
        let p = |x: f64| -> f64 {
            let mut v = c64::new(0.0, 0.0);
            for c in &coeffs {
                v = v * x + c;
            }
            v.re
        };
        let bound = one_norm(a) + 1.0;
        let steps = 200_000;
        let mut roots = Vec::new();
        let mut x0 = -bound;
        let mut p0 = p(x0);
        for s in 1..=steps {
            let x1 = -bound + 2.0 * bound * s as f64 / steps as f64;
            let p1 = p(x1);
            if p0 == 0.0 {
                roots.push(x0);
            } else if p0.signum() != p1.signum() && p1 != 0.0 {
                let (mut lo, mut hi) = (x0, x1);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if p(mid).signum() == p(lo).signum() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                roots.push(0.5 * (lo + hi));
            }
            x0 = x1;
            p0 = p1;
        }
        roots
    }

    #[test]
    fn random_5x5_matches_charpoly_oracle() {
        let a = random_hermitian(5, 7);
        let vals = eigenvalues(&a).unwrap();
        let oracle = charpoly_roots(&a);
        assert_eq!(oracle.len(), 5, "oracle roots {oracle:?}");
        for (v, o) in vals.iter().zip(&oracle) {
            assert!((v - o).abs() < 1e-12, "{v} vs {o}");
        }
    }

    #[test]
    fn eigen_residual_small() {
        let a = random_hermitian(40, 3);
        let (vals, vecs) = eigen(&a).unwrap();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        assert!(eigen_residual(&a, &vals, &vecs) < 1e-10 * one_norm(&a));
        let only = eigenvalues(&a).unwrap();
        for (x, y) in vals.iter().zip(&only) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn real_path_agrees_with_complex_path() {
        let mut a = random_hermitian(12, 11);
        for j in 0..12 {
            for i in 0..12 {
                a[(i, j)].im = 0.0;
            }
        }
        let sym = Mat::from_fn(12, 12, |i, j| if i >= j { a[(i, j)] } else { a[(j, i)] });
        assert!(is_real(&sym));
        let fast = eigenvalues(&sym).unwrap();
        let slow = sym.self_adjoint_eigenvalues(Side::Lower).unwrap();
        for (x, y) in fast.iter().zip(&slow) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn expm_of_anti_hermitian_is_unitary_and_matches_spectral_route() {
        let h = random_hermitian(20, 5);
        // G = -i H * 3 has a large norm, forcing several squarings.
        let g = &h * Scale(c64::new(0.0, -3.0));
        let u = expm(&g);
        assert!(unitarity_defect(&u) < 1e-12);
        let (vals, vecs) = eigen(&h).unwrap();
        let phase = Mat::from_fn(20, 20, |i, j| {
            if i == j {
                c64::from_polar(1.0, -3.0 * vals[i])
            } else {
                c64::new(0.0, 0.0)
            }
        });
        let spectral = &vecs * &phase * vecs.adjoint();
        let mut diff = 0.0f64;
        for j in 0..20 {
            for i in 0..20 {
                diff = diff.max((spectral[(i, j)] - u[(i, j)]).norm());
            }
        }
        assert!(diff < 1e-12, "expm vs spectral {diff:e}");
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let u = expm(&zeros(4));
        assert!(max_abs(&(u - identity(4))) < 1e-15);
    }
}
