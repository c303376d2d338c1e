//! Dense linear-algebra kernel for small quantum registers.
//!
//! Gates, Kronecker composition, unitary evolution, partial trace, Born-rule
//! measurement, and post-measurement projection, all on explicit complex
//! matrices. Registers are capped at [`MAX_QUBITS`] qubits; mixed states
//! after mid-circuit measurement require density matrices, so there is no
//! statevector fast path.
//!
//! Qubit ordering: qubit 0 is the most significant bit of a basis-state
//! index. `kron(a, b)` places `a` on the most significant qubits.

mod eig;

pub use eig::hermitian_eigenvalues;

use num_complex::Complex;
use rand::Rng;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

/// Hard cap on register width for any composed operator.
pub const MAX_QUBITS: usize = 12;

/// Outcomes below this probability are treated as impossible; conditioning
/// on them is refused.
pub const DEFAULT_P_FLOOR: f64 = 1e-12;

fn c<T: Scalar>(re: f64, im: f64) -> Complex<T> {
    Complex::new(T::from_f64_lit(re), T::from_f64_lit(im))
}

/// Tolerance for a sum-style check, widened for low-precision scalars.
fn sum_tol<T: Scalar>() -> T {
    let base = T::from_f64_lit(1e-10);
    let eps = T::epsilon() * T::from_f64_lit(256.0);
    if eps > base {
        eps
    } else {
        base
    }
}

fn entry_tol<T: Scalar>() -> T {
    let base = T::from_f64_lit(1e-12);
    let eps = T::epsilon() * T::from_f64_lit(32.0);
    if eps > base {
        eps
    } else {
        base
    }
}

fn matmul<T: Scalar>(a: &[Complex<T>], b: &[Complex<T>], d: usize) -> Vec<Complex<T>> {
    let mut out = vec![Complex::new(T::zero(), T::zero()); d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            if aik.re == T::zero() && aik.im == T::zero() {
                continue;
            }
            let row = &b[k * d..(k + 1) * d];
            let dst = &mut out[i * d..(i + 1) * d];
            for (o, &bkj) in dst.iter_mut().zip(row) {
                *o += aik * bkj;
            }
        }
    }
    out
}

/// Ordered measurement outcome over a set of qubits.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitString {
    bits: Vec<u8>,
}

impl BitString {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(CoreError::invalid("bitstring entries must be 0 or 1"));
        }
        Ok(BitString { bits })
    }

    /// Bitstring of `len` bits encoding `index`, first bit most significant.
    pub fn from_index(len: usize, index: usize) -> Self {
        let bits = (0..len).map(|k| ((index >> (len - 1 - k)) & 1) as u8).collect();
        BitString { bits }
    }

    pub fn index(&self) -> usize {
        self.bits.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }
}

/// Discrete probability table over the bitstrings of `num_bits` qubits.
#[derive(Debug, Clone)]
pub struct ProbTable<T: Scalar> {
    num_bits: usize,
    probs: Vec<T>,
}

impl<T: Scalar> ProbTable<T> {
    pub fn new(num_bits: usize, probs: Vec<T>) -> Result<Self> {
        if probs.len() != 1 << num_bits {
            return Err(CoreError::invalid("probability table length must be 2^num_bits"));
        }
        Ok(ProbTable { num_bits, probs })
    }

    pub fn num_bits(&self) -> usize {
        self.num_bits
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn prob(&self, outcome: &BitString) -> T {
        self.probs[outcome.index()]
    }

    /// Marginal probability that bit `k` is 1.
    pub fn marginal_one(&self, k: usize) -> T {
        let shift = self.num_bits - 1 - k;
        self.probs
            .iter()
            .enumerate()
            .filter(|(i, _)| (i >> shift) & 1 == 1)
            .map(|(_, &p)| p)
            .sum()
    }

    /// Draw one outcome by inverse CDF. Deterministic given the rng state.
    pub fn sample(&self, rng: &mut impl Rng) -> BitString {
        let u = T::from_f64_lit(rng.gen::<f64>());
        let mut acc = T::zero();
        let mut chosen = self.probs.len() - 1;
        for (i, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                chosen = i;
                break;
            }
        }
        BitString::from_index(self.num_bits, chosen)
    }

    /// Empirical table from `shots` independent draws.
    pub fn empirical(&self, shots: usize, rng: &mut impl Rng) -> ProbTable<T> {
        let mut counts = vec![0usize; self.probs.len()];
        for _ in 0..shots {
            counts[self.sample(rng).index()] += 1;
        }
        let denom = T::from_f64_lit(shots as f64);
        let probs = counts.iter().map(|&n| T::from_f64_lit(n as f64) / denom).collect();
        ProbTable { num_bits: self.num_bits, probs }
    }
}

/// Dense unitary on a power-of-two dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Unitary<T: Scalar> {
    dim: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> Unitary<T> {
    pub fn identity(num_qubits: usize) -> Self {
        let dim = 1 << num_qubits;
        let mut data = vec![Complex::new(T::zero(), T::zero()); dim * dim];
        for i in 0..dim {
            data[i * dim + i] = c(1.0, 0.0);
        }
        Unitary { dim, data }
    }

    pub fn from_data(dim: usize, data: Vec<Complex<T>>) -> Result<Self> {
        if !dim.is_power_of_two() || data.len() != dim * dim {
            return Err(CoreError::invalid("unitary dimension must be a power of two"));
        }
        Ok(Unitary { dim, data })
    }

    /// Pauli-X rotation by `angle` radians.
    pub fn rx(angle: T) -> Result<Self> {
        if !angle.is_finite() {
            return Err(CoreError::invalid("rx angle must be finite"));
        }
        let half = angle / T::from_f64_lit(2.0);
        let (cos, sin) = (half.cos(), half.sin());
        let z = Complex::new(cos, T::zero());
        let m = Complex::new(T::zero(), -sin);
        Ok(Unitary { dim: 2, data: vec![z, m, m, z] })
    }

    /// Controlled-X rotation; control qubit first, target second.
    pub fn crx(angle: T) -> Result<Self> {
        if !angle.is_finite() {
            return Err(CoreError::invalid("crx angle must be finite"));
        }
        let rx = Self::rx(angle)?;
        let mut u = Self::identity(2);
        u.data[2 * 4 + 2] = rx.data[0];
        u.data[2 * 4 + 3] = rx.data[1];
        u.data[3 * 4 + 2] = rx.data[2];
        u.data[3 * 4 + 3] = rx.data[3];
        Ok(u)
    }

    /// Derivative of `rx` with respect to its angle.
    pub fn rx_derivative(angle: T) -> Self {
        let half = angle / T::from_f64_lit(2.0);
        let hf = T::from_f64_lit(0.5);
        let dc = Complex::new(-half.sin() * hf, T::zero());
        let ds = Complex::new(T::zero(), -half.cos() * hf);
        Unitary { dim: 2, data: vec![dc, ds, ds, dc] }
    }

    /// Derivative of `crx` with respect to its angle.
    pub fn crx_derivative(angle: T) -> Self {
        let d = Self::rx_derivative(angle);
        let zero = Complex::new(T::zero(), T::zero());
        let mut data = vec![zero; 16];
        data[2 * 4 + 2] = d.data[0];
        data[2 * 4 + 3] = d.data[1];
        data[3 * 4 + 2] = d.data[2];
        data[3 * 4 + 3] = d.data[3];
        Unitary { dim: 4, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_qubits(&self) -> usize {
        self.dim.trailing_zeros() as usize
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> Complex<T> {
        self.data[i * self.dim + j]
    }

    /// Kronecker product; `self` becomes the most significant qubits.
    pub fn kron(&self, other: &Unitary<T>) -> Result<Unitary<T>> {
        let dim = check_kron_dim(self.dim, other.dim)?;
        let mut data = vec![Complex::new(T::zero(), T::zero()); dim * dim];
        kron_into(&self.data, self.dim, &other.data, other.dim, &mut data);
        Ok(Unitary { dim, data })
    }

    /// Matrix product `self · rhs`.
    pub fn matmul(&self, rhs: &Unitary<T>) -> Result<Unitary<T>> {
        if self.dim != rhs.dim {
            return Err(CoreError::invalid("unitary dimension mismatch in matmul"));
        }
        Ok(Unitary { dim: self.dim, data: matmul(&self.data, &rhs.data, self.dim) })
    }

    pub fn adjoint(&self) -> Unitary<T> {
        let d = self.dim;
        let mut data = vec![Complex::new(T::zero(), T::zero()); d * d];
        for i in 0..d {
            for j in 0..d {
                data[j * d + i] = self.data[i * d + j].conj();
            }
        }
        Unitary { dim: d, data }
    }

    /// Embed a small gate onto `qubits` of an `n`-qubit register, identity
    /// elsewhere. Gate qubit `k` maps to register qubit `qubits[k]`.
    pub fn embed(&self, qubits: &[usize], n: usize) -> Result<Unitary<T>> {
        if self.dim != 1 << qubits.len() {
            return Err(CoreError::invalid("gate arity does not match qubit list"));
        }
        if n > MAX_QUBITS {
            return Err(CoreError::Capacity(format!("register of {n} qubits exceeds cap {MAX_QUBITS}")));
        }
        let mut seen = vec![false; n];
        for &q in qubits {
            if q >= n || seen[q] {
                return Err(CoreError::invalid("gate qubit index out of range or repeated"));
            }
            seen[q] = true;
        }
        let dim = 1 << n;
        let k = qubits.len();
        let rest_mask: usize = {
            let mut m = 0usize;
            for q in 0..n {
                if !seen[q] {
                    m |= 1 << (n - 1 - q);
                }
            }
            m
        };
        let sub_index = |full: usize| -> usize {
            qubits
                .iter()
                .fold(0usize, |acc, &q| (acc << 1) | ((full >> (n - 1 - q)) & 1))
        };
        let mut data = vec![Complex::new(T::zero(), T::zero()); dim * dim];
        for i in 0..dim {
            let si = sub_index(i);
            let ri = i & rest_mask;
            for j in 0..dim {
                if (j & rest_mask) != ri {
                    continue;
                }
                let sj = sub_index(j);
                data[i * dim + j] = self.data[si * (1 << k) + sj];
            }
        }
        Ok(Unitary { dim, data })
    }

    /// Frobenius distance of `U U†` from the identity.
    pub fn unitarity_defect(&self) -> T {
        let prod = matmul(&self.data, &self.adjoint().data, self.dim);
        let mut acc = T::zero();
        for i in 0..self.dim {
            for j in 0..self.dim {
                let expect = if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) };
                let d = prod[i * self.dim + j] - expect;
                acc += d.norm_sqr();
            }
        }
        acc.sqrt()
    }
}

/// Hermitian, PSD, unit-trace operator over `num_qubits` qubits.
///
/// A zero-qubit register is the 1x1 matrix `[1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix<T: Scalar> {
    num_qubits: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> DensityMatrix<T> {
    /// All qubits in the ground state `|0...0><0...0|`.
    pub fn ground(num_qubits: usize) -> Self {
        let dim = 1 << num_qubits;
        let mut data = vec![Complex::new(T::zero(), T::zero()); dim * dim];
        data[0] = c(1.0, 0.0);
        DensityMatrix { num_qubits, data }
    }

    /// Computational basis state `|index><index|`.
    pub fn basis(num_qubits: usize, index: usize) -> Self {
        let dim = 1 << num_qubits;
        assert!(index < dim, "basis index out of range");
        let mut data = vec![Complex::new(T::zero(), T::zero()); dim * dim];
        data[index * dim + index] = c(1.0, 0.0);
        DensityMatrix { num_qubits, data }
    }

    /// Rank-one state `|psi><psi|` from an unnormalized amplitude vector.
    pub fn pure(amplitudes: &[Complex<T>]) -> Result<Self> {
        let dim = amplitudes.len();
        if !dim.is_power_of_two() {
            return Err(CoreError::invalid("statevector length must be a power of two"));
        }
        let norm: T = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if norm <= T::zero() {
            return Err(CoreError::invalid("statevector must be nonzero"));
        }
        let mut data = vec![Complex::new(T::zero(), T::zero()); dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                data[i * dim + j] = amplitudes[i] * amplitudes[j].conj() / norm;
            }
        }
        Ok(DensityMatrix { num_qubits: dim.trailing_zeros() as usize, data })
    }

    pub fn from_data(num_qubits: usize, data: Vec<Complex<T>>) -> Result<Self> {
        let dim = 1usize << num_qubits;
        if data.len() != dim * dim {
            return Err(CoreError::invalid("density matrix data length mismatch"));
        }
        Ok(DensityMatrix { num_qubits, data })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.num_qubits
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> Complex<T> {
        self.data[i * self.dim() + j]
    }

    pub fn trace(&self) -> T {
        let d = self.dim();
        (0..d).map(|i| self.data[i * d + i].re).sum()
    }

    /// Replace the matrix with `(rho + rho^dagger) / 2` to quench
    /// floating-point asymmetry accumulated over long recursions.
    pub fn hermitize(&mut self) {
        let d = self.dim();
        let half = T::from_f64_lit(0.5);
        for i in 0..d {
            self.data[i * d + i].im = T::zero();
            for j in (i + 1)..d {
                let avg = (self.data[i * d + j] + self.data[j * d + i].conj())
                    * Complex::new(half, T::zero());
                self.data[i * d + j] = avg;
                self.data[j * d + i] = avg.conj();
            }
        }
    }

    /// Kronecker product; `self` on the most significant qubits.
    pub fn kron(&self, other: &DensityMatrix<T>) -> Result<DensityMatrix<T>> {
        let dim = check_kron_dim(self.dim(), other.dim())?;
        let mut data = vec![Complex::new(T::zero(), T::zero()); dim * dim];
        kron_into(&self.data, self.dim(), &other.data, other.dim(), &mut data);
        Ok(DensityMatrix { num_qubits: self.num_qubits + other.num_qubits, data })
    }

    /// `U rho U^dagger`. Trace, Hermiticity, and the spectrum are preserved.
    pub fn evolve(&self, u: &Unitary<T>) -> Result<DensityMatrix<T>> {
        if u.dim != self.dim() {
            return Err(CoreError::invalid("unitary/state dimension mismatch"));
        }
        let tmp = matmul(&u.data, &self.data, u.dim);
        let data = matmul(&tmp, &u.adjoint().data, u.dim);
        let mut out = DensityMatrix { num_qubits: self.num_qubits, data };
        out.hermitize();
        Ok(out)
    }

    /// Reduced state over `keep` (ascending qubit order preserved).
    pub fn partial_trace(&self, keep: &[usize]) -> Result<DensityMatrix<T>> {
        let n = self.num_qubits;
        let keep = sorted_subset(keep, n, "keep")?;
        let traced: Vec<usize> = (0..n).filter(|q| !keep.contains(q)).collect();
        let kd = 1usize << keep.len();
        let td = 1usize << traced.len();
        let mut data = vec![Complex::new(T::zero(), T::zero()); kd * kd];
        for ki in 0..kd {
            for kj in 0..kd {
                let mut acc = Complex::new(T::zero(), T::zero());
                for t in 0..td {
                    let i = compose_index(n, &keep, ki, &traced, t);
                    let j = compose_index(n, &keep, kj, &traced, t);
                    acc += self.data[i * self.dim() + j];
                }
                data[ki * kd + kj] = acc;
            }
        }
        Ok(DensityMatrix { num_qubits: keep.len(), data })
    }

    /// Born-rule outcome distribution over `measured`.
    pub fn born_distribution(&self, measured: &[usize]) -> Result<ProbTable<T>> {
        let reduced = self.partial_trace(measured)?;
        let d = reduced.dim();
        let lo = -entry_tol::<T>();
        let hi = T::one() + entry_tol::<T>();
        let mut probs = Vec::with_capacity(d);
        let mut sum = T::zero();
        for i in 0..d {
            let p = reduced.data[i * d + i].re;
            if p < lo || p > hi {
                return Err(CoreError::StateCorruption(format!(
                    "diagonal entry {i} outside [0,1]: {p}"
                )));
            }
            let p = p.max(T::zero()).min(T::one());
            sum += p;
            probs.push(p);
        }
        if (sum - T::one()).abs() > sum_tol::<T>() {
            return Err(CoreError::StateCorruption(format!(
                "born distribution sums to {sum}, not 1"
            )));
        }
        ProbTable::new(measured.len(), probs)
    }

    /// Post-measurement state of the unmeasured qubits after observing
    /// `outcome` on `measured`, together with the outcome probability.
    ///
    /// `measured` and its complement must partition the register. Outcomes
    /// with probability below `p_floor` are refused.
    pub fn project_memory(
        &self,
        outcome: &BitString,
        measured: &[usize],
        p_floor: T,
    ) -> Result<(DensityMatrix<T>, T)> {
        let n = self.num_qubits;
        let measured = sorted_subset(measured, n, "measured")?;
        if outcome.len() != measured.len() {
            return Err(CoreError::invalid("outcome length does not match measured set"));
        }
        let rest: Vec<usize> = (0..n).filter(|q| !measured.contains(q)).collect();
        let rd = 1usize << rest.len();
        let b = outcome.index();
        let mut prob = T::zero();
        for m in 0..rd {
            let i = compose_index(n, &measured, b, &rest, m);
            prob += self.data[i * self.dim() + i].re;
        }
        if prob < p_floor {
            return Err(CoreError::ZeroProbabilityBranch(format!(
                "outcome probability {prob} below floor {p_floor}"
            )));
        }
        let mut data = vec![Complex::new(T::zero(), T::zero()); rd * rd];
        let inv = Complex::new(T::one() / prob, T::zero());
        for mi in 0..rd {
            let i = compose_index(n, &measured, b, &rest, mi);
            for mj in 0..rd {
                let j = compose_index(n, &measured, b, &rest, mj);
                data[mi * rd + mj] = self.data[i * self.dim() + j] * inv;
            }
        }
        let mut mem = DensityMatrix { num_qubits: rest.len(), data };
        mem.hermitize();
        Ok((mem, prob))
    }

    /// Real eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<T> {
        hermitian_eigenvalues(&self.data, self.dim())
    }

    /// Check trace-1, elementwise Hermiticity, and positive semidefiniteness.
    pub fn validate(&self, tol: &Tolerances<T>) -> Result<()> {
        let d = self.dim();
        if (self.trace() - T::one()).abs() > tol.trace {
            return Err(CoreError::StateCorruption(format!("trace {} != 1", self.trace())));
        }
        for i in 0..d {
            for j in 0..d {
                let delta = self.data[i * d + j] - self.data[j * d + i].conj();
                if delta.norm() > tol.hermitian {
                    return Err(CoreError::StateCorruption(format!(
                        "non-Hermitian entry at ({i},{j})"
                    )));
                }
            }
        }
        let min = self
            .eigenvalues()
            .into_iter()
            .fold(T::infinity(), |a, b| if b < a { b } else { a });
        if min < tol.psd_floor {
            return Err(CoreError::StateCorruption(format!("min eigenvalue {min} below floor")));
        }
        Ok(())
    }
}

/// Invariant tolerances for [`DensityMatrix::validate`].
#[derive(Debug, Clone)]
pub struct Tolerances<T: Scalar> {
    pub trace: T,
    pub hermitian: T,
    pub psd_floor: T,
}

impl<T: Scalar> Default for Tolerances<T> {
    fn default() -> Self {
        let psd = T::from_f64_lit(1e-9).max(T::epsilon() * T::from_f64_lit(1024.0));
        Tolerances {
            trace: sum_tol::<T>(),
            hermitian: sum_tol::<T>(),
            psd_floor: -psd,
        }
    }
}

fn check_kron_dim(a: usize, b: usize) -> Result<usize> {
    let qubits = a.trailing_zeros() as usize + b.trailing_zeros() as usize;
    if qubits > MAX_QUBITS {
        return Err(CoreError::Capacity(format!(
            "kron result of {qubits} qubits exceeds cap {MAX_QUBITS}"
        )));
    }
    Ok(a * b)
}

fn kron_into<T: Scalar>(
    a: &[Complex<T>],
    ad: usize,
    b: &[Complex<T>],
    bd: usize,
    out: &mut [Complex<T>],
) {
    let dim = ad * bd;
    for i1 in 0..ad {
        for j1 in 0..ad {
            let a_ij = a[i1 * ad + j1];
            if a_ij.re == T::zero() && a_ij.im == T::zero() {
                continue;
            }
            for i2 in 0..bd {
                for j2 in 0..bd {
                    out[(i1 * bd + i2) * dim + (j1 * bd + j2)] = a_ij * b[i2 * bd + j2];
                }
            }
        }
    }
}

fn sorted_subset(set: &[usize], n: usize, what: &str) -> Result<Vec<usize>> {
    if set.is_empty() {
        return Err(CoreError::invalid(format!("{what} set must be nonempty")));
    }
    let mut v = set.to_vec();
    v.sort_unstable();
    v.dedup();
    if v.len() != set.len() {
        return Err(CoreError::invalid(format!("{what} set has repeated qubits")));
    }
    if *v.last().unwrap() >= n {
        return Err(CoreError::invalid(format!("{what} set references qubit outside register")));
    }
    Ok(v)
}

/// Full register index with `subset` qubits set to the bits of `sub` and
/// `rest` qubits set to the bits of `rest_val`.
fn compose_index(n: usize, subset: &[usize], sub: usize, rest: &[usize], rest_val: usize) -> usize {
    let mut idx = 0usize;
    for (k, &q) in subset.iter().enumerate() {
        let bit = (sub >> (subset.len() - 1 - k)) & 1;
        idx |= bit << (n - 1 - q);
    }
    for (k, &q) in rest.iter().enumerate() {
        let bit = (rest_val >> (rest.len() - 1 - k)) & 1;
        idx |= bit << (n - 1 - q);
    }
    idx
}

/// Haar-ish random unitary from Gram-Schmidt on a complex Gaussian matrix.
pub fn random_unitary<T: Scalar>(num_qubits: usize, rng: &mut impl Rng) -> Unitary<T> {
    let d = 1usize << num_qubits;
    let mut cols: Vec<Vec<Complex<T>>> = (0..d)
        .map(|_| (0..d).map(|_| gaussian(rng)).collect())
        .collect();
    for k in 0..d {
        for prev in 0..k {
            let dot: Complex<T> = cols[prev]
                .iter()
                .zip(cols[k].iter())
                .map(|(p, x)| p.conj() * *x)
                .fold(Complex::new(T::zero(), T::zero()), |a, b| a + b);
            for i in 0..d {
                let sub = cols[prev][i] * dot;
                cols[k][i] -= sub;
            }
        }
        let norm: T = cols[k].iter().map(|x| x.norm_sqr()).sum::<T>().sqrt();
        for x in cols[k].iter_mut() {
            *x /= norm;
        }
    }
    let mut data = vec![Complex::new(T::zero(), T::zero()); d * d];
    for (j, col) in cols.iter().enumerate() {
        for i in 0..d {
            data[i * d + j] = col[i];
        }
    }
    Unitary { dim: d, data }
}

/// Random full-rank mixed state `A A^dagger / tr`.
pub fn random_density<T: Scalar>(num_qubits: usize, rng: &mut impl Rng) -> DensityMatrix<T> {
    let d = 1usize << num_qubits;
    let a: Vec<Complex<T>> = (0..d * d).map(|_| gaussian(rng)).collect();
    let mut data = vec![Complex::new(T::zero(), T::zero()); d * d];
    for i in 0..d {
        for j in 0..d {
            let mut acc = Complex::new(T::zero(), T::zero());
            for k in 0..d {
                acc += a[i * d + k] * a[j * d + k].conj();
            }
            data[i * d + j] = acc;
        }
    }
    let tr: T = (0..d).map(|i| data[i * d + i].re).sum();
    for x in data.iter_mut() {
        *x /= tr;
    }
    DensityMatrix { num_qubits, data }
}

fn gaussian<T: Scalar, R: Rng>(rng: &mut R) -> Complex<T> {
    // Box-Muller on two uniforms.
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let th = 2.0 * std::f64::consts::PI * u2;
    c(r * th.cos(), r * th.sin())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    type Dm = DensityMatrix<f64>;
    type U = Unitary<f64>;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn approx(a: Complex<f64>, re: f64, im: f64, tol: f64) -> bool {
        (a.re - re).abs() < tol && (a.im - im).abs() < tol
    }

    #[test]
    fn rx_zero_is_identity() {
        let u = U::rx(0.0).unwrap();
        assert_eq!(u, U::identity(1));
    }

    #[test]
    fn rx_pi_flips_ground_state() {
        let rho = Dm::ground(1).evolve(&U::rx(PI).unwrap()).unwrap();
        let p = rho.born_distribution(&[0]).unwrap();
        assert!((p.probs()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rx_half_pi_gives_even_odds() {
        let rho = Dm::ground(1).evolve(&U::rx(PI / 2.0).unwrap()).unwrap();
        let p = rho.born_distribution(&[0]).unwrap();
        assert!((p.probs()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rx_rejects_non_finite_angle() {
        assert!(matches!(U::rx(f64::NAN), Err(CoreError::InvalidArgument(_))));
        assert!(matches!(U::crx(f64::INFINITY), Err(CoreError::InvalidArgument(_))));
    }

    #[test]
    fn crx_fixes_control_zero_subspace() {
        for angle in [0.3, 1.2, PI] {
            let u = U::crx(angle).unwrap();
            for basis in [0usize, 1] {
                let rho = Dm::basis(2, basis).evolve(&u).unwrap();
                assert!((rho.get(basis, basis).re - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn crx_zero_is_identity() {
        assert_eq!(U::crx(0.0).unwrap(), U::identity(2));
    }

    #[test]
    fn crx_pi_maps_10_to_minus_i_11() {
        // Multiply the 4x4 matrix by the |10> basis vector.
        let u = U::crx(PI).unwrap();
        assert!(approx(u.get(2, 2), 0.0, 0.0, 1e-12));
        assert!(approx(u.get(3, 2), 0.0, -1.0, 1e-12));
    }

    #[test]
    fn kron_identities_compose() {
        let i4 = U::identity(1).kron(&U::identity(1)).unwrap();
        assert_eq!(i4, U::identity(2));
    }

    #[test]
    fn kron_of_basis_states() {
        let rho = Dm::basis(1, 0).kron(&Dm::basis(1, 1)).unwrap();
        assert_eq!(rho, Dm::basis(2, 0b01));
    }

    #[test]
    fn kron_rx_pi_with_identity_flips_first_qubit() {
        let u = U::rx(PI).unwrap().kron(&U::identity(1)).unwrap();
        let rho = Dm::ground(2).evolve(&u).unwrap();
        assert_eq!(rho.born_distribution(&[0, 1]).unwrap().sample(&mut rng(0)).index(), 0b10);
        // Global phase -i on the amplitude is invisible in the density matrix.
        assert!((rho.get(2, 2).re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kron_past_register_cap_is_capacity_error() {
        let a = U::identity(7);
        let b = U::identity(6);
        assert!(matches!(a.kron(&b), Err(CoreError::Capacity(_))));
    }

    #[test]
    fn kron_is_associative() {
        let mut r = rng(5);
        let a = random_unitary::<f64>(1, &mut r);
        let b = random_unitary::<f64>(1, &mut r);
        let c = random_unitary::<f64>(2, &mut r);
        let left = a.kron(&b).unwrap().kron(&c).unwrap();
        let right = a.kron(&b.kron(&c).unwrap()).unwrap();
        let max = left
            .data()
            .iter()
            .zip(right.data())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max);
        assert!(max < 1e-12);
    }

    #[test]
    fn evolve_with_identity_is_noop() {
        let mut r = rng(1);
        let rho = random_density::<f64>(2, &mut r);
        let out = rho.evolve(&U::identity(2)).unwrap();
        for (a, b) in rho.data().iter().zip(out.data()) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn evolve_rx_pi_excites_ground() {
        let out = Dm::ground(1).evolve(&U::rx(PI).unwrap()).unwrap();
        assert!((out.get(1, 1).re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evolve_preserves_trace_and_spectrum() {
        let mut r = rng(2);
        for n in 1..=3usize {
            let rho = random_density::<f64>(n, &mut r);
            let u = random_unitary::<f64>(n, &mut r);
            let out = rho.evolve(&u).unwrap();
            assert!((out.trace() - rho.trace()).abs() < 1e-12);
            let (ea, eb) = (rho.eigenvalues(), out.eigenvalues());
            for (x, y) in ea.iter().zip(&eb) {
                assert!((x - y).abs() < 1e-8, "spectrum drift {x} vs {y}");
            }
        }
    }

    #[test]
    fn evolve_rejects_dimension_mismatch() {
        assert!(matches!(
            Dm::ground(2).evolve(&U::identity(1)),
            Err(CoreError::InvalidArgument(_))
        ));
    }

    #[test]
    fn partial_trace_of_product_state_recovers_factor() {
        let mut r = rng(3);
        let a = random_density::<f64>(1, &mut r);
        let b = random_density::<f64>(2, &mut r);
        let joint = a.kron(&b).unwrap();
        let got = joint.partial_trace(&[0]).unwrap();
        for (x, y) in got.data().iter().zip(a.data()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn partial_trace_of_bell_state_is_maximally_mixed() {
        let amp = 1.0 / 2.0f64.sqrt();
        let bell = Dm::pure(&[c(amp, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(amp, 0.0)]).unwrap();
        let red = bell.partial_trace(&[0]).unwrap();
        assert!((red.get(0, 0).re - 0.5).abs() < 1e-12);
        assert!((red.get(1, 1).re - 0.5).abs() < 1e-12);
        assert!(red.get(0, 1).norm() < 1e-12);
    }

    #[test]
    fn partial_trace_preserves_trace() {
        let mut r = rng(4);
        let rho = random_density::<f64>(3, &mut r);
        let red = rho.partial_trace(&[1, 2]).unwrap();
        assert!((red.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn partial_trace_rejects_bad_keep_sets() {
        let rho = Dm::ground(2);
        assert!(matches!(rho.partial_trace(&[]), Err(CoreError::InvalidArgument(_))));
        assert!(matches!(rho.partial_trace(&[2]), Err(CoreError::InvalidArgument(_))));
    }

    #[test]
    fn born_of_ground_state_is_point_mass() {
        let p = Dm::ground(3).born_distribution(&[0, 1, 2]).unwrap();
        assert!((p.probs()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn born_sums_to_one_on_random_states() {
        let mut r = rng(6);
        for n in 1..=4usize {
            for _ in 0..100 {
                let rho = random_density::<f64>(n, &mut r).evolve(&random_unitary(n, &mut r)).unwrap();
                let p = rho.born_distribution(&(0..n).collect::<Vec<_>>()).unwrap();
                let sum: f64 = p.probs().iter().sum();
                assert!((sum - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn sample_point_mass_is_constant() {
        let p = ProbTable::new(1, vec![1.0, 0.0]).unwrap();
        let mut r = rng(7);
        for _ in 0..100 {
            assert_eq!(p.sample(&mut r).index(), 0);
        }
    }

    #[test]
    fn sample_matches_even_odds_frequency() {
        // Binomial concentration: 20000 draws keep the frequency in [0.48, 0.52].
        let p = ProbTable::new(1, vec![0.5, 0.5]).unwrap();
        let mut r = rng(8);
        let ones: usize = (0..20000).map(|_| p.sample(&mut r).index()).sum();
        let freq = ones as f64 / 20000.0;
        assert!((0.48..=0.52).contains(&freq), "freq {freq}");
    }

    #[test]
    fn sample_is_deterministic_per_seed() {
        let p = ProbTable::new(2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let seq = |seed| {
            let mut r = rng(seed);
            (0..32).map(|_| p.sample(&mut r).index()).collect::<Vec<_>>()
        };
        assert_eq!(seq(9), seq(9));
        assert_ne!(seq(9), seq(10));
    }

    #[test]
    fn project_memory_of_product_state_leaves_memory_intact() {
        let mut r = rng(11);
        let io = random_density::<f64>(1, &mut r);
        let mem = random_density::<f64>(1, &mut r);
        let joint = io.kron(&mem).unwrap();
        for outcome in 0..2usize {
            let b = BitString::from_index(1, outcome);
            let (sigma, prob) = joint.project_memory(&b, &[0], 1e-12).unwrap();
            assert!((prob - io.get(outcome, outcome).re).abs() < 1e-12);
            for (x, y) in sigma.data().iter().zip(mem.data()) {
                assert!((x - y).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn project_memory_on_bell_state_collapses_memory() {
        // Evaluate the projection by 4x4 matrix arithmetic.
        let amp = 1.0 / 2.0f64.sqrt();
        let bell = Dm::pure(&[c(amp, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(amp, 0.0)]).unwrap();
        let (mem, prob) = bell.project_memory(&BitString::from_index(1, 0), &[0], 1e-12).unwrap();
        assert!((prob - 0.5).abs() < 1e-12);
        assert!((mem.get(0, 0).re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn project_memory_mixture_reconstructs_marginal() {
        // Law of total probability over outcomes.
        let mut r = rng(12);
        for _ in 0..20 {
            let rho = random_density::<f64>(3, &mut r);
            let marginal = rho.partial_trace(&[1, 2]).unwrap();
            let dim = marginal.dim();
            let mut mix = vec![Complex::new(0.0, 0.0); dim * dim];
            for outcome in 0..2usize {
                let b = BitString::from_index(1, outcome);
                let (mem, prob) = rho.project_memory(&b, &[0], 1e-12).unwrap();
                for (m, x) in mix.iter_mut().zip(mem.data()) {
                    *m += x * Complex::new(prob, 0.0);
                }
            }
            let err: f64 = mix
                .iter()
                .zip(marginal.data())
                .map(|(x, y)| (x - y).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(err < 1e-9, "reconstruction error {err}");
        }
    }

    #[test]
    fn project_memory_refuses_zero_probability_branch() {
        let rho = Dm::ground(2);
        let b = BitString::from_index(1, 1);
        assert!(matches!(
            rho.project_memory(&b, &[0], 1e-12),
            Err(CoreError::ZeroProbabilityBranch(_))
        ));
    }

    #[test]
    fn project_memory_over_full_register_leaves_scalar_memory() {
        let rho = Dm::ground(2);
        let (mem, prob) = rho
            .project_memory(&BitString::from_index(2, 0), &[0, 1], 1e-12)
            .unwrap();
        assert_eq!(mem.num_qubits(), 0);
        assert!((prob - 1.0).abs() < 1e-12);
        assert!((mem.get(0, 0).re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn validate_accepts_products_of_kernel_ops() {
        let mut r = rng(13);
        let tol = Tolerances::default();
        for n in 1..=4usize {
            let rho = random_density::<f64>(n, &mut r)
                .evolve(&random_unitary(n, &mut r))
                .unwrap();
            rho.validate(&tol).unwrap();
        }
    }

    #[test]
    fn validate_rejects_traceless_matrix() {
        let rho = Dm::from_data(1, vec![c(0.5, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.4, 0.0)]).unwrap();
        assert!(matches!(rho.validate(&Tolerances::default()), Err(CoreError::StateCorruption(_))));
    }

    #[test]
    fn kernel_works_in_f32() {
        let rho = DensityMatrix::<f32>::ground(1)
            .evolve(&Unitary::<f32>::rx(std::f32::consts::FRAC_PI_2).unwrap())
            .unwrap();
        let p = rho.born_distribution(&[0]).unwrap();
        assert!((p.probs()[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn random_unitary_is_unitary() {
        let mut r = rng(14);
        for n in 1..=3usize {
            let u = random_unitary::<f64>(n, &mut r);
            assert!(u.unitarity_defect() < 1e-10);
        }
    }
}
