//! Small dense linear-algebra helpers used across the crate.
//!
//! Matrices are row-major `&[f64]` slices with explicit dimensions. State
//! dimensions in scope are small (p <= 16), so everything here is direct
//! dense arithmetic.

/// y = A x for a row-major n x m matrix.
pub fn matvec(a: &[f64], n: usize, m: usize, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(a.len(), n * m);
    debug_assert_eq!(x.len(), m);
    debug_assert_eq!(y.len(), n);
    for i in 0..n {
        let row = &a[i * m..(i + 1) * m];
        let mut acc = 0.0;
        for j in 0..m {
            acc += row[j] * x[j];
        }
        y[i] = acc;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Eigenvalues of a symmetric n x n matrix by cyclic Jacobi rotations.
///
/// The input is symmetrized as (A + A^T)/2 before iterating. Returns the
/// eigenvalues in ascending order. Converges to ~1e-12 off-diagonal mass
/// for the small matrices in scope.
pub fn sym_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), n * n);
    if n == 1 {
        return vec![a[0]];
    }
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = 0.5 * (a[i * n + j] + a[j * n + i]);
        }
    }
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off.sqrt() < 1e-13 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                // stable tan computation of the rotation angle
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eigs
}

/// Largest eigenvalue of a (symmetrized) matrix.
pub fn sym_eig_max(a: &[f64], n: usize) -> f64 {
    *sym_eigenvalues(a, n).last().unwrap()
}

/// Smallest eigenvalue of a (symmetrized) matrix.
pub fn sym_eig_min(a: &[f64], n: usize) -> f64 {
    sym_eigenvalues(a, n)[0]
}

/// Solve A x = b in place by Gaussian elimination with partial pivoting.
/// Returns None if the matrix is numerically singular.
pub fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    for col in 0..n {
        let mut piv = col;
        let mut best = a[col * n + col].abs();
        for r in (col + 1)..n {
            let v = a[r * n + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best < 1e-300 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            b.swap(col, piv);
        }
        let d = a[col * n + col];
        for r in (col + 1)..n {
            let f = a[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = b[i];
        for k in (i + 1)..n {
            acc -= a[i * n + k] * x[k];
        }
        x[i] = acc / a[i * n + i];
    }
    Some(x)
}

/// Solve the continuous Lyapunov equation A^T P + P A = -Q for symmetric P
/// via the Kronecker-product linear system. Test-oracle quality: intended
/// for small n only.
pub fn solve_lyapunov(a: &[f64], q: &[f64], n: usize) -> Option<Vec<f64>> {
    let nn = n * n;
    // vec(A^T P + P A) = (I (x) A^T + A^T (x) I) vec(P)
    let mut k = vec![0.0; nn * nn];
    for i in 0..n {
        for j in 0..n {
            for l in 0..n {
                // d/dP[l*n+j] of row (i,j): A^T[i][l] = a[l*n+i]
                k[(i * n + j) * nn + (l * n + j)] += a[l * n + i];
                // d/dP[i*n+l] of row (i,j): A[l][j] = a[l*n+j]
                k[(i * n + j) * nn + (i * n + l)] += a[l * n + j];
            }
        }
    }
    let mut rhs: Vec<f64> = q.iter().map(|v| -v).collect();
    let p = solve_dense(&mut k, &mut rhs, nn)?;
    Some(p)
}

/// Euclidean projection of v onto the l1 ball of radius `radius`.
pub fn project_l1(v: &mut [f64], radius: f64) {
    assert!(radius >= 0.0);
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= radius {
        return;
    }
    if radius == 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (k, &m) in mags.iter().enumerate() {
        acc += m;
        let t = (acc - radius) / (k as f64 + 1.0);
        if t >= m {
            break;
        }
        theta = t;
    }
    for x in v.iter_mut() {
        let s = x.abs() - theta;
        *x = if s > 0.0 { x.signum() * s } else { 0.0 };
    }
}
