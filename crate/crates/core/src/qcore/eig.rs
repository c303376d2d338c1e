//! Eigenvalues of Hermitian matrices via cyclic Jacobi rotations.

use num_complex::Complex;

use crate::scalar::Scalar;

/// Real eigenvalues of a Hermitian `dim x dim` matrix, ascending.
///
/// Cyclic Jacobi with complex Givens rotations; quadratic convergence makes
/// a handful of sweeps enough at the register sizes this crate works with.
pub fn hermitian_eigenvalues<T: Scalar>(data: &[Complex<T>], dim: usize) -> Vec<T> {
    assert_eq!(data.len(), dim * dim, "matrix data length mismatch");
    if dim == 1 {
        return vec![data[0].re];
    }
    let mut a = data.to_vec();
    let scale: T = a.iter().map(|x| x.norm_sqr()).sum::<T>().sqrt().max(T::one());
    let tol = scale * T::epsilon() * T::from_f64_lit(dim as f64);
    for _sweep in 0..60 {
        let mut off = T::zero();
        for p in 0..dim {
            for q in (p + 1)..dim {
                off += a[p * dim + q].norm_sqr();
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..dim {
            for q in (p + 1)..dim {
                rotate(&mut a, dim, p, q);
            }
        }
    }
    let mut eigs: Vec<T> = (0..dim).map(|i| a[i * dim + i].re).collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
    eigs
}

/// One Jacobi rotation annihilating the (p, q) off-diagonal entry.
fn rotate<T: Scalar>(a: &mut [Complex<T>], dim: usize, p: usize, q: usize) {
    let apq = a[p * dim + q];
    let r = apq.norm();
    if r == T::zero() {
        return;
    }
    let phase = apq / Complex::new(r, T::zero());
    let app = a[p * dim + p].re;
    let aqq = a[q * dim + q].re;
    // tan(2 theta) = 2 r / (app - aqq); pick the smaller rotation.
    let t = if app == aqq {
        T::one()
    } else {
        let tau = (app - aqq) / (r + r);
        let sign = if tau >= T::zero() { T::one() } else { -T::one() };
        sign / (tau.abs() + (T::one() + tau * tau).sqrt())
    };
    let c = T::one() / (T::one() + t * t).sqrt();
    let s = t * c;
    let cs = Complex::new(c, T::zero());
    let sp = phase * Complex::new(s, T::zero());
    // Column update: A <- A J with J[[c, -s*phase], [s*conj(phase), c]].
    for k in 0..dim {
        let akp = a[k * dim + p];
        let akq = a[k * dim + q];
        a[k * dim + p] = akp * cs + akq * sp.conj();
        a[k * dim + q] = akq * cs - akp * sp;
    }
    // Row update: A <- J^dagger A.
    for k in 0..dim {
        let apk = a[p * dim + k];
        let aqk = a[q * dim + k];
        a[p * dim + k] = apk * cs + aqk * sp;
        a[q * dim + k] = aqk * cs - apk * sp.conj();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn cx(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn diagonal_matrix_is_fixed_point() {
        let a = vec![cx(3.0, 0.0), cx(0.0, 0.0), cx(0.0, 0.0), cx(-1.0, 0.0)];
        let e = hermitian_eigenvalues(&a, 2);
        assert!((e[0] + 1.0).abs() < 1e-12 && (e[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn pauli_x_has_unit_eigenvalues() {
        let a = vec![cx(0.0, 0.0), cx(1.0, 0.0), cx(1.0, 0.0), cx(0.0, 0.0)];
        let e = hermitian_eigenvalues(&a, 2);
        assert!((e[0] + 1.0).abs() < 1e-12 && (e[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pauli_y_has_unit_eigenvalues() {
        let a = vec![cx(0.0, 0.0), cx(0.0, -1.0), cx(0.0, 1.0), cx(0.0, 0.0)];
        let e = hermitian_eigenvalues(&a, 2);
        assert!((e[0] + 1.0).abs() < 1e-12 && (e[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trace_identities_hold_on_random_hermitian() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for dim in [2usize, 4, 8] {
            let mut a = vec![cx(0.0, 0.0); dim * dim];
            for i in 0..dim {
                a[i * dim + i] = cx(rng.gen::<f64>() - 0.5, 0.0);
                for j in (i + 1)..dim {
                    let v = cx(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
                    a[i * dim + j] = v;
                    a[j * dim + i] = v.conj();
                }
            }
            let e = hermitian_eigenvalues(&a, dim);
            let tr: f64 = (0..dim).map(|i| a[i * dim + i].re).sum();
            let tr2: f64 = (0..dim)
                .flat_map(|i| (0..dim).map(move |j| (i, j)))
                .map(|(i, j)| (a[i * dim + j] * a[j * dim + i]).re)
                .sum();
            let se: f64 = e.iter().sum();
            let se2: f64 = e.iter().map(|x| x * x).sum();
            assert!((se - tr).abs() < 1e-10, "sum of eigenvalues vs trace");
            assert!((se2 - tr2).abs() < 1e-10, "sum of squares vs tr(A^2)");
        }
    }
}
