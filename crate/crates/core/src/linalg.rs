//! Dense linear-algebra helpers over `nalgebra` used throughout the crate.
//!
//! Everything here works on `DMatrix<f64>`; eigenvalues are returned as
//! `Complex64` because the Laplacians of directed graphs are not symmetric.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

const SCHUR_EPS: f64 = f64::EPSILON;
const SCHUR_MAX_ITER: usize = 100_000;

/// All eigenvalues of a square real matrix, ordered by (re, im).
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    assert!(m.is_square(), "eigenvalues of a non-square matrix");
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let schur = Schur::try_new(m.clone(), SCHUR_EPS, SCHUR_MAX_ITER).ok_or(Error::EigenSolver(n))?;
    let (_, t) = schur.unpack();
    let mut eig = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            let (a, b, c, d) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
            eig.extend(eigenvalues_2x2(a, b, c, d));
            i += 2;
        } else {
            eig.push(Complex64::new(t[(i, i)], 0.0));
            i += 1;
        }
    }
    if eig.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::EigenSolver(n));
    }
    sort_spectrum(&mut eig);
    Ok(eig)
}

/// Eigenvalues of [[a, b], [c, d]]; a real pair when the discriminant is
/// nonnegative, which happens for nearly defective blocks.
fn eigenvalues_2x2(a: f64, b: f64, c: f64, d: f64) -> [Complex64; 2] {
    let mean = 0.5 * (a + d);
    let half = 0.5 * (a - d);
    let disc = half * half + b * c;
    if disc >= 0.0 {
        let s = disc.sqrt();
        [Complex64::new(mean - s, 0.0), Complex64::new(mean + s, 0.0)]
    } else {
        let s = (-disc).sqrt();
        [Complex64::new(mean, -s), Complex64::new(mean, s)]
    }
}

/// Eigenvalues of a symmetric matrix (ascending).
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn sort_spectrum(eig: &mut [Complex64]) {
    eig.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
}

/// Spectral radius; 0 for the empty matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(m)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Numerical rank: singular values above `rel_tol * sigma_max`.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            for p in 0..br {
                for q in 0..bc {
                    out[(i * br + p, j * bc + q)] = aij * b[(p, q)];
                }
            }
        }
    }
    out
}

/// Principal submatrix on `idx` (in the given order).
pub fn principal_submatrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}

pub fn select_columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), idx.len(), |r, c| m[(r, idx[c])])
}

pub fn select_rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |r, c| m[(idx[r], c)])
}

pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r0, c0), b.shape()).copy_from(b);
        r0 += b.nrows();
        c0 += b.ncols();
    }
    out
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
}

pub fn from_rows(rows: &[Vec<f64>], ncols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c])
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

pub fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Outcome of comparing two spectra as multisets.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumComparison {
    pub agree: bool,
    /// Largest discrepancy between matched cluster means.
    pub max_deviation: f64,
    pub detail: Option<String>,
}

/// Compares two multisets of eigenvalues.
///
/// Eigenvalues from both sides are grouped by single-linkage clustering at
/// `cluster_radius`; each cluster must hold the same number of values from
/// either side and the two cluster means must agree within `tol`. For
/// well-separated simple eigenvalues this is plain nearest pairing. For
/// defective eigenvalues (Jordan chains of length m), a backward-stable
/// solver scatters the copies on a ring of radius ~eps^(1/m) while their mean
/// stays accurate to ~eps, so the means are what can be compared tightly.
pub fn compare_spectra(
    a: &[Complex64],
    b: &[Complex64],
    tol: f64,
    cluster_radius: f64,
) -> SpectrumComparison {
    if a.len() != b.len() {
        return SpectrumComparison {
            agree: false,
            max_deviation: f64::INFINITY,
            detail: Some(format!("multiset sizes differ: {} vs {}", a.len(), b.len())),
        };
    }
    let pts: Vec<(Complex64, bool)> = a
        .iter()
        .map(|&z| (z, true))
        .chain(b.iter().map(|&z| (z, false)))
        .collect();
    let clusters = single_linkage(&pts.iter().map(|p| p.0).collect::<Vec<_>>(), cluster_radius);
    let mut max_dev: f64 = 0.0;
    for members in clusters {
        let (mut sa, mut sb) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
        let (mut na, mut nb) = (0usize, 0usize);
        for &p in &members {
            if pts[p].1 {
                sa += pts[p].0;
                na += 1;
            } else {
                sb += pts[p].0;
                nb += 1;
            }
        }
        if na != nb {
            let center = pts[members[0]].0;
            return SpectrumComparison {
                agree: false,
                max_deviation: f64::INFINITY,
                detail: Some(format!(
                    "cluster near {:.6}{:+.6}i has multiplicity {} vs {}",
                    center.re, center.im, na, nb
                )),
            };
        }
        let dev = (sa / na as f64 - sb / nb as f64).norm();
        max_dev = max_dev.max(dev);
    }
    SpectrumComparison {
        agree: max_dev <= tol,
        max_deviation: max_dev,
        detail: (max_dev > tol).then(|| format!("cluster means differ by {max_dev:e} > {tol:e}")),
    }
}

fn single_linkage(pts: &[Complex64], radius: f64) -> Vec<Vec<usize>> {
    let n = pts.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (pts[i] - pts[j]).norm() <= radius {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[rj] = ri;
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Collapses a multiset to its distinct values (within `tol`), sorted.
pub fn distinct_values(spectrum: &[Complex64], tol: f64) -> Vec<Complex64> {
    let mut out: Vec<Complex64> = Vec::new();
    for &z in spectrum {
        if !out.iter().any(|w| (w - z).norm() <= tol) {
            out.push(z);
        }
    }
    sort_spectrum(&mut out);
    out
}
