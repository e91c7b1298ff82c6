//! Dense linear-algebra kernels for small flow generators.
//!
//! The exponential of a generator is taken along two routes: a cached
//! eigendecomposition (eigenvalues from the real Schur form, eigenvectors by
//! inverse iteration) when the spectrum is well separated and the eigenbasis
//! well conditioned, and scaling-and-squaring with a degree-13 Pade
//! approximant otherwise. Hermitian eigenvalue problems go through the real
//! symmetric embedding [[Re, -Im], [Im, Re]].

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Eigenvector-matrix condition number above which the spectral route is
/// abandoned for scaling-and-squaring.
const COND_LIMIT: f64 = 1e8;
/// Relative eigenpair residual accepted from inverse iteration.
const RESIDUAL_LIMIT: f64 = 1e-9;
/// Minimum relative eigenvalue separation for the spectral route.
const SEPARATION_LIMIT: f64 = 1e-6;

pub(crate) enum ExpEngine {
    /// Cached eigendecomposition A = V diag(values) V^-1.
    Spectral {
        values: Vec<Complex64>,
        vectors: DMatrix<Complex64>,
        inverse: DMatrix<Complex64>,
    },
    /// No usable eigenbasis; exponentiate per call.
    Squaring,
}

impl ExpEngine {
    pub fn new(a: &DMatrix<f64>) -> Self {
        spectral(a).unwrap_or(ExpEngine::Squaring)
    }

    /// exp(a t) for the generator this engine was built from.
    pub fn exp_t(&self, a: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
        match self {
            ExpEngine::Spectral {
                values,
                vectors,
                inverse,
            } => {
                let n = values.len();
                let mut phases = DMatrix::<Complex64>::zeros(n, n);
                for (i, lambda) in values.iter().enumerate() {
                    phases[(i, i)] = (lambda * t).exp();
                }
                let e = vectors * phases * inverse;
                // A real generator has a real exponential; the imaginary
                // part is rounding residue.
                DMatrix::from_fn(n, n, |i, j| e[(i, j)].re)
            }
            ExpEngine::Squaring => expm_squaring(&(a * t)),
        }
    }
}

fn complexify(a: &DMatrix<f64>) -> DMatrix<Complex64> {
    a.map(|x| Complex64::new(x, 0.0))
}

fn spectral(a: &DMatrix<f64>) -> Option<ExpEngine> {
    let n = a.nrows();
    let scale = a.amax().max(1.0);
    let values: Vec<Complex64> = a.clone().complex_eigenvalues().iter().copied().collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if (values[i] - values[j]).norm() < SEPARATION_LIMIT * scale {
                return None;
            }
        }
    }
    let ac = complexify(a);
    let mut vectors = DMatrix::<Complex64>::zeros(n, n);
    for (col, lambda) in values.iter().enumerate() {
        let v = eigenvector(&ac, *lambda, scale)?;
        let residual = (&ac * &v - &v * *lambda).norm();
        if residual > RESIDUAL_LIMIT * scale {
            return None;
        }
        vectors.set_column(col, &v);
    }
    let inverse = vectors.clone().lu().try_inverse()?;
    if vectors.norm() * inverse.norm() > COND_LIMIT {
        return None;
    }
    let engine = ExpEngine::Spectral {
        values,
        vectors,
        inverse,
    };
    // Cross-check against the squaring route at a moderate time before
    // trusting the eigenbasis for every later evaluation.
    let tau = 1.0 / scale;
    let diff = (engine.exp_t(a, tau) - expm_squaring(&(a * tau))).amax();
    if diff > 1e-10 {
        return None;
    }
    Some(engine)
}

/// One eigenvector by inverse iteration on A - lambda I. The computed
/// eigenvalue carries O(eps) rounding, which keeps the shifted matrix
/// invertible while the solve amplifies the wanted direction.
fn eigenvector(ac: &DMatrix<Complex64>, lambda: Complex64, scale: f64) -> Option<DVector<Complex64>> {
    let n = ac.nrows();
    for attempt in 0..3 {
        let shift = lambda + Complex64::new(attempt as f64 * 1e-11 * scale, 0.0);
        let mut m = ac.clone();
        for d in 0..n {
            m[(d, d)] -= shift;
        }
        let lu = m.lu();
        let mut v = DVector::<Complex64>::from_fn(n, |i, _| Complex64::new(1.0, 0.1 * (i as f64 + 1.0)));
        v /= Complex64::new(v.norm(), 0.0);
        let mut ok = true;
        for _ in 0..3 {
            match lu.solve(&v) {
                Some(w) => {
                    let norm = w.norm();
                    if !norm.is_finite() || norm == 0.0 {
                        ok = false;
                        break;
                    }
                    v = w / Complex64::new(norm, 0.0);
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Some(v);
        }
    }
    None
}

/// Scaling-and-squaring matrix exponential with the degree-13 Pade
/// approximant.
pub(crate) fn expm_squaring(a: &DMatrix<f64>) -> DMatrix<f64> {
    const THETA_13: f64 = 5.371920351148152;
    const B: [f64; 14] = [
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
    let n = a.nrows();
    let norm = one_norm(a);
    let s = if norm > THETA_13 {
        ((norm / THETA_13).log2().ceil() as i32).max(0)
    } else {
        0
    };
    let a = a.map(|x| x / 2f64.powi(s));
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let u = &a
        * (&a6 * (a6.scale(B[13]) + a4.scale(B[11]) + a2.scale(B[9]))
            + a6.scale(B[7])
            + a4.scale(B[5])
            + a2.scale(B[3])
            + id.scale(B[1]));
    let v = &a6 * (a6.scale(B[12]) + a4.scale(B[10]) + a2.scale(B[8]))
        + a6.scale(B[6])
        + a4.scale(B[4])
        + a2.scale(B[2])
        + id.scale(B[0]);
    let mut r = (&v - &u)
        .lu()
        .solve(&(&v + &u))
        .expect("Pade denominator is nonsingular once the argument is scaled");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    let mut best = 0.0f64;
    for col in a.column_iter() {
        best = best.max(col.iter().map(|x| x.abs()).sum());
    }
    best
}

/// Eigenvalues of a complex Hermitian matrix through its real symmetric
/// embedding; every eigenvalue of the input appears twice in the output.
pub(crate) fn hermitian_embedding_eigenvalues(m: &DMatrix<Complex64>) -> Vec<f64> {
    let n = m.nrows();
    let e = DMatrix::<f64>::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
        (true, true) => m[(i, j)].re,
        (false, false) => m[(i - n, j - n)].re,
        (true, false) => -m[(i, j - n)].im,
        (false, true) => m[(i - n, j)].im,
    });
    e.symmetric_eigen().eigenvalues.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rotation_generator(w: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -w * w, 0.0])
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let z = DMatrix::<f64>::zeros(3, 3);
        assert_eq!(expm_squaring(&z), DMatrix::identity(3, 3));
    }

    #[test]
    fn oscillator_exponential_matches_closed_form() {
        let w = 2.0;
        let a = rotation_generator(w);
        let engine = ExpEngine::new(&a);
        for &t in &[0.0, 0.3, 1.7, 12.5] {
            let u = engine.exp_t(&a, t);
            let expected = DMatrix::from_row_slice(
                2,
                2,
                &[
                    (w * t).cos(),
                    (w * t).sin() / w,
                    -w * (w * t).sin(),
                    (w * t).cos(),
                ],
            );
            assert!((u - expected).amax() < 1e-12, "t = {t}");
        }
    }

    #[test]
    fn squaring_route_matches_spectral_route() {
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[0.1, 1.0, 0.0, -2.0, 0.0, 0.3, 0.0, -0.5, -0.2],
        );
        let engine = ExpEngine::new(&a);
        assert!(matches!(engine, ExpEngine::Spectral { .. }));
        for &t in &[0.5, 2.0, 7.0] {
            let diff = (engine.exp_t(&a, t) - expm_squaring(&(&a * t))).amax();
            assert!(diff < 1e-10, "t = {t}, diff = {diff}");
        }
    }

    #[test]
    fn degenerate_spectrum_falls_back() {
        // Two decoupled equal-frequency oscillators: doubly degenerate
        // eigenvalues +-i.
        let mut a = DMatrix::<f64>::zeros(4, 4);
        a[(0, 1)] = 1.0;
        a[(1, 0)] = -1.0;
        a[(2, 3)] = 1.0;
        a[(3, 2)] = -1.0;
        let engine = ExpEngine::new(&a);
        assert!(matches!(engine, ExpEngine::Squaring));
        let u = engine.exp_t(&a, std::f64::consts::PI / 2.0);
        let mut expected = DMatrix::<f64>::zeros(4, 4);
        expected[(0, 1)] = 1.0;
        expected[(1, 0)] = -1.0;
        expected[(2, 3)] = 1.0;
        expected[(3, 2)] = -1.0;
        assert!((u - expected).amax() < 1e-12);
    }

    #[test]
    fn hermitian_embedding_reproduces_pauli_spectrum() {
        // sigma_y has eigenvalues +-1; the embedding doubles them.
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, -1.0),
                Complex64::new(0.0, 1.0),
                Complex64::new(0.0, 0.0),
            ],
        );
        let mut ev = hermitian_embedding_eigenvalues(&m);
        ev.sort_by(f64::total_cmp);
        assert_eq!(ev.len(), 4);
        assert!((ev[0] + 1.0).abs() < 1e-14 && (ev[1] + 1.0).abs() < 1e-14);
        assert!((ev[2] - 1.0).abs() < 1e-14 && (ev[3] - 1.0).abs() < 1e-14);
    }
}
