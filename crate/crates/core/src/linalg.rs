//! Dense complex linear algebra on top of `nalgebra`.
//!
//! The matrix exponential is a scaling-and-squaring Padé approximant applied
//! independently to each connected block of the sparsity pattern. Hamiltonians
//! of the coupled qutrits conserve excitation number and Liouvillians conserve
//! coherence order, so the blocks are small.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn zeros(n: usize) -> CMatrix {
    CMatrix::zeros(n, n)
}

pub fn diag_real(d: &[f64]) -> CMatrix {
    let n = d.len();
    CMatrix::from_fn(n, n, |i, j| if i == j { c(d[i], 0.0) } else { ZERO })
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Product `a * b` with an i-k-j loop over column-major storage.
///
/// Faster than the generic `nalgebra` kernel for complex scalars at the
/// sizes used here (up to 81x81).
pub fn matmul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    assert_eq!(a.ncols(), b.nrows(), "matmul shape mismatch");
    let (n, k, m) = (a.nrows(), a.ncols(), b.ncols());
    let mut out = CMatrix::zeros(n, m);
    let av = a.as_slice();
    let bv = b.as_slice();
    let ov = out.as_mut_slice();
    for j in 0..m {
        let ocol = &mut ov[j * n..(j + 1) * n];
        for p in 0..k {
            let s = bv[j * k + p];
            if s == ZERO {
                continue;
            }
            let acol = &av[p * n..(p + 1) * n];
            for (o, &x) in ocol.iter_mut().zip(acol) {
                *o += x * s;
            }
        }
    }
    out
}

pub fn matvec(a: &CMatrix, x: &CVector) -> CVector {
    assert_eq!(a.ncols(), x.len(), "matvec shape mismatch");
    let n = a.nrows();
    let mut out = CVector::zeros(n);
    let av = a.as_slice();
    let ov = out.as_mut_slice();
    for (p, &s) in x.iter().enumerate() {
        if s == ZERO {
            continue;
        }
        for (o, &v) in ov.iter_mut().zip(&av[p * n..(p + 1) * n]) {
            *o += v * s;
        }
    }
    out
}

/// `u * a * u†`.
pub fn conjugate(u: &CMatrix, a: &CMatrix) -> CMatrix {
    matmul(&matmul(u, a), &u.adjoint())
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    matmul(a, b) - matmul(b, a)
}

/// Largest entry of `|a - a†|`.
pub fn hermiticity_defect(a: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()) * c(0.5, 0.0)
}

/// Induced 1-norm (maximum absolute column sum).
pub fn norm_one(a: &CMatrix) -> f64 {
    a.column_iter()
        .map(|col| col.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn is_finite(a: &CMatrix) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Connected components of the undirected graph with an edge wherever
/// `a[(i, j)]` or `a[(j, i)]` is nonzero. Each component is sorted.
pub fn connected_blocks(a: &CMatrix) -> Vec<Vec<usize>> {
    let n = a.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for j in 0..n {
        for i in 0..n {
            if i != j && a[(i, j)] != ZERO {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        if label[r] == usize::MAX {
            label[r] = blocks.len();
            blocks.push(Vec::new());
        }
        blocks[label[r]].push(i);
    }
    blocks
}

/// `exp(scale * a)`, rejecting non-finite input.
pub fn matrix_exponential(a: &CMatrix, scale: f64) -> crate::Result<CMatrix> {
    if !is_finite(a) || !scale.is_finite() {
        return Err(crate::Error::NonFinite("matrix exponential input"));
    }
    Ok(expm(&(a * c(scale, 0.0))))
}

/// Matrix exponential `exp(a)`.
pub fn expm(a: &CMatrix) -> CMatrix {
    assert!(a.is_square(), "expm of a non-square matrix");
    let n = a.nrows();
    let blocks = connected_blocks(a);
    if blocks.len() == 1 {
        return expm_dense(a);
    }
    let mut out = CMatrix::zeros(n, n);
    for block in &blocks {
        if block.len() == 1 {
            let i = block[0];
            out[(i, i)] = a[(i, i)].exp();
            continue;
        }
        let sub = CMatrix::from_fn(block.len(), block.len(), |r, s| a[(block[r], block[s])]);
        let e = expm_dense(&sub);
        for (r, &i) in block.iter().enumerate() {
            for (s, &j) in block.iter().enumerate() {
                out[(i, j)] = e[(r, s)];
            }
        }
    }
    out
}

const THETA: [(usize, f64); 4] = [
    (3, 1.495_585_217_958_292e-2),
    (5, 2.539_398_330_063_23e-1),
    (7, 9.504_178_996_162_932e-1),
    (9, 2.097_847_961_257_068),
];
const THETA_13: f64 = 5.371_920_351_148_152;

fn pade_coefficients(m: usize) -> &'static [f64] {
    match m {
        3 => &[120.0, 60.0, 12.0, 1.0],
        5 => &[30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0],
        7 => &[17_297_280.0, 8_648_640.0, 1_995_840.0, 277_200.0, 25_200.0, 1512.0, 56.0, 1.0],
        9 => &[
            17_643_225_600.0,
            8_821_612_800.0,
            2_075_673_600.0,
            302_702_400.0,
            30_270_240.0,
            2_162_160.0,
            110_880.0,
            3960.0,
            90.0,
            1.0,
        ],
        _ => &[
            64_764_752_532_480_000.0,
            32_382_376_266_240_000.0,
            7_771_770_303_897_600.0,
            1_187_353_796_428_800.0,
            129_060_195_264_000.0,
            10_559_470_521_600.0,
            670_442_572_800.0,
            33_522_128_640.0,
            1_323_241_920.0,
            40_840_800.0,
            960_960.0,
            16_380.0,
            182.0,
            1.0,
        ],
    }
}

fn scaled(a: &CMatrix, s: f64) -> CMatrix {
    a * c(s, 0.0)
}

/// Scaling-and-squaring Padé exponential without block splitting.
pub fn expm_dense(a: &CMatrix) -> CMatrix {
    let n = a.nrows();
    let id = identity(n);
    let norm = norm_one(a);
    if norm == 0.0 {
        return id;
    }
    for &(m, theta) in &THETA {
        if norm <= theta {
            return pade_low(a, m, &id);
        }
    }
    let s = ((norm / THETA_13).log2().ceil()).max(0.0) as i32;
    let a = scaled(a, 0.5f64.powi(s));
    let b = pade_coefficients(13);
    let a2 = matmul(&a, &a);
    let a4 = matmul(&a2, &a2);
    let a6 = matmul(&a4, &a2);
    let u_inner = scaled(&a6, b[13]) + scaled(&a4, b[11]) + scaled(&a2, b[9]);
    let u_tail = scaled(&a6, b[7]) + scaled(&a4, b[5]) + scaled(&a2, b[3]) + scaled(&id, b[1]);
    let u = matmul(&a, &(matmul(&a6, &u_inner) + u_tail));
    let v_inner = scaled(&a6, b[12]) + scaled(&a4, b[10]) + scaled(&a2, b[8]);
    let v = matmul(&a6, &v_inner)
        + scaled(&a6, b[6])
        + scaled(&a4, b[4])
        + scaled(&a2, b[2])
        + scaled(&id, b[0]);
    let mut r = solve_pade(&u, &v);
    for _ in 0..s {
        r = matmul(&r, &r);
    }
    r
}

fn pade_low(a: &CMatrix, m: usize, id: &CMatrix) -> CMatrix {
    let b = pade_coefficients(m);
    let a2 = matmul(a, a);
    let mut powers = vec![id.clone(), a2.clone()];
    while powers.len() <= m / 2 {
        let next = matmul(powers.last().unwrap(), &a2);
        powers.push(next);
    }
    let mut u_even = CMatrix::zeros(a.nrows(), a.ncols());
    let mut v = CMatrix::zeros(a.nrows(), a.ncols());
    for (k, p) in powers.iter().enumerate() {
        if 2 * k < m {
            u_even += scaled(p, b[2 * k + 1]);
        }
        v += scaled(p, b[2 * k]);
    }
    let u = matmul(a, &u_even);
    solve_pade(&u, &v)
}

fn solve_pade(u: &CMatrix, v: &CMatrix) -> CMatrix {
    let p = v + u;
    let q = v - u;
    q.lu().solve(&p).expect("Padé denominator is singular")
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = SymmetricEigen::new(hermitian_part(a));
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

/// Nearest density matrix: Hermitian part, negative eigenvalues clipped to
/// zero, trace renormalized to one.
pub fn project_density(rho: &CMatrix) -> CMatrix {
    let (vals, vecs) = hermitian_eigen(rho);
    let clipped: Vec<f64> = vals.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    let n = rho.nrows();
    if total <= 0.0 {
        return identity(n) * c(1.0 / n as f64, 0.0);
    }
    let d = diag_real(&clipped.iter().map(|v| v / total).collect::<Vec<_>>());
    conjugate(&vecs, &d)
}

/// Unitary factor of the polar decomposition.
pub fn polar_unitary(a: &CMatrix) -> CMatrix {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    matmul(&u, &v_t)
}

/// `Tr(a† b)`.
pub fn inner(a: &CMatrix, b: &CMatrix) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

pub fn trace(a: &CMatrix) -> C64 {
    a.trace()
}

/// Row-major vectorization: entry `(k, l)` goes to index `k * n + l`.
pub fn vectorize(rho: &CMatrix) -> CVector {
    let n = rho.nrows();
    CVector::from_fn(n * n, |idx, _| rho[(idx / n, idx % n)])
}

pub fn unvectorize(v: &CVector) -> CMatrix {
    let n = (v.len() as f64).sqrt().round() as usize;
    assert_eq!(n * n, v.len(), "vector length is not a square");
    CMatrix::from_fn(n, n, |k, l| v[k * n + l])
}

/// Restriction of `a` to the listed basis indices.
pub fn restrict(a: &CMatrix, idx: &[usize]) -> CMatrix {
    CMatrix::from_fn(idx.len(), idx.len(), |r, s| a[(idx[r], idx[s])])
}

/// Places `a` on the listed indices of an `n`-dimensional zero matrix.
pub fn embed(a: &CMatrix, idx: &[usize], n: usize) -> CMatrix {
    let mut out = CMatrix::zeros(n, n);
    for (r, &i) in idx.iter().enumerate() {
        for (s, &j) in idx.iter().enumerate() {
            out[(i, j)] = a[(r, s)];
        }
    }
    out
}
