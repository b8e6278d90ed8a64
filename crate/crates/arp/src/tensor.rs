//! Dense symmetric tensors and Taylor-polynomial arithmetic.
//!
//! Everything the solver evaluates — Taylor values, decrements, shifted
//! derivatives, the `‖s‖^{p+1}` regularizer and its derivatives — lives
//! here. Storage is dense with explicit symmetrization on construction:
//! dimensions stay small (n ≲ 100, order ≤ 3), so O(n³) storage buys exact
//! index symmetry, which the property tests rely on.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ArpError, Result};

/// Largest supported tensor order (= largest model degree).
pub const MAX_ORDER: usize = 3;

const FACTORIALS: [f64; 8] = [1.0, 1.0, 2.0, 6.0, 24.0, 120.0, 720.0, 5040.0];

#[inline]
pub fn factorial(n: usize) -> f64 {
    FACTORIALS[n]
}

/// `χ_j(t) = Σ_{ℓ=1..j} t^ℓ/ℓ!` for `t ≥ 0`.
pub fn chi(j: usize, t: f64) -> f64 {
    debug_assert!(j >= 1 && t >= 0.0);
    let mut term = 1.0;
    let mut sum = 0.0;
    for ell in 1..=j {
        term *= t / ell as f64;
        sum += term;
    }
    sum
}

/// Dense real tensor of order 1..=3, invariant under index permutation.
///
/// Order 1 is a vector, order 2 a symmetric matrix, order 3 a fully
/// symmetric 3-tensor. Entries are stored row-major (`[i]`, `[i,j]`,
/// `[i,j,k]`).
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricTensor {
    order: usize,
    dim: usize,
    entries: Vec<f64>,
}

impl SymmetricTensor {
    pub fn zeros(order: usize, dim: usize) -> Result<Self> {
        check_order(order)?;
        Ok(Self {
            order,
            dim,
            entries: vec![0.0; dim.pow(order as u32)],
        })
    }

    /// Builds a tensor from raw entries, symmetrizing over all index
    /// permutations.
    pub fn from_entries(order: usize, dim: usize, entries: Vec<f64>) -> Result<Self> {
        check_order(order)?;
        if entries.len() != dim.pow(order as u32) {
            return Err(ArpError::DimensionMismatch {
                expected: dim.pow(order as u32),
                got: entries.len(),
            });
        }
        let mut t = Self {
            order,
            dim,
            entries,
        };
        t.symmetrize();
        Ok(t)
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self {
            order: 1,
            dim: v.len(),
            entries: v.iter().copied().collect(),
        }
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(ArpError::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        let n = m.nrows();
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                entries[i * n + j] = 0.5 * (m[(i, j)] + m[(j, i)]);
            }
        }
        Ok(Self {
            order: 2,
            dim: n,
            entries,
        })
    }

    /// Random tensor with i.i.d. standard-normal entries, symmetrized.
    pub fn random_gaussian<R: Rng>(order: usize, dim: usize, rng: &mut R) -> Result<Self> {
        let entries = (0..dim.pow(order as u32))
            .map(|_| crate::oracle::standard_normal(rng))
            .collect();
        Self::from_entries(order, dim, entries)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.entries[self.flat_index(idx)]
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.order);
        idx.iter().fold(0, |acc, &i| acc * self.dim + i)
    }

    fn symmetrize(&mut self) {
        let n = self.dim;
        match self.order {
            1 => {}
            2 => {
                for i in 0..n {
                    for j in (i + 1)..n {
                        let avg = 0.5 * (self.entries[i * n + j] + self.entries[j * n + i]);
                        self.entries[i * n + j] = avg;
                        self.entries[j * n + i] = avg;
                    }
                }
            }
            3 => {
                for i in 0..n {
                    for j in i..n {
                        for k in j..n {
                            let perms = [
                                (i, j, k),
                                (i, k, j),
                                (j, i, k),
                                (j, k, i),
                                (k, i, j),
                                (k, j, i),
                            ];
                            let avg = perms
                                .iter()
                                .map(|&(a, b, c)| self.entries[(a * n + b) * n + c])
                                .sum::<f64>()
                                / 6.0;
                            for &(a, b, c) in &perms {
                                self.entries[(a * n + b) * n + c] = avg;
                            }
                        }
                    }
                }
            }
            _ => unreachable!("order checked on construction"),
        }
    }

    /// Applies the tensor to `order` copies of `v`, yielding the scalar
    /// `S[v]^order`.
    pub fn apply_all(&self, v: &DVector<f64>) -> Result<f64> {
        self.check_dim(v)?;
        let n = self.dim;
        Ok(match self.order {
            1 => self.entries.iter().zip(v.iter()).map(|(e, x)| e * x).sum(),
            2 => {
                let mut acc = 0.0;
                for i in 0..n {
                    let mut row = 0.0;
                    for j in 0..n {
                        row += self.entries[i * n + j] * v[j];
                    }
                    acc += row * v[i];
                }
                acc
            }
            3 => {
                let mut acc = 0.0;
                for i in 0..n {
                    let mut acc_i = 0.0;
                    for j in 0..n {
                        let mut acc_ij = 0.0;
                        let base = (i * n + j) * n;
                        for k in 0..n {
                            acc_ij += self.entries[base + k] * v[k];
                        }
                        acc_i += acc_ij * v[j];
                    }
                    acc += acc_i * v[i];
                }
                acc
            }
            _ => unreachable!(),
        })
    }

    /// Contracts the last index with `v`, lowering the order by one.
    pub fn contract(&self, v: &DVector<f64>) -> Result<Self> {
        self.check_dim(v)?;
        if self.order == 1 {
            return Err(ArpError::OrderOutOfRange {
                order: 0,
                max: MAX_ORDER,
            });
        }
        let n = self.dim;
        let out_len = n.pow((self.order - 1) as u32);
        let mut out = vec![0.0; out_len];
        for (block, slot) in out.iter_mut().enumerate() {
            let base = block * n;
            let mut acc = 0.0;
            for k in 0..n {
                acc += self.entries[base + k] * v[k];
            }
            *slot = acc;
        }
        Ok(Self {
            order: self.order - 1,
            dim: n,
            entries: out,
        })
    }

    pub fn as_vector(&self) -> DVector<f64> {
        assert_eq!(self.order, 1, "as_vector requires an order-1 tensor");
        DVector::from_column_slice(&self.entries)
    }

    pub fn as_matrix(&self) -> DMatrix<f64> {
        assert_eq!(self.order, 2, "as_matrix requires an order-2 tensor");
        DMatrix::from_row_slice(self.dim, self.dim, &self.entries)
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for e in &mut out.entries {
            *e *= c;
        }
        out
    }

    /// `self + c * other`; shapes must match.
    pub fn add_scaled(&self, other: &Self, c: f64) -> Result<Self> {
        if self.order != other.order || self.dim != other.dim {
            return Err(ArpError::DimensionMismatch {
                expected: self.entries.len(),
                got: other.entries.len(),
            });
        }
        let mut out = self.clone();
        for (e, o) in out.entries.iter_mut().zip(&other.entries) {
            *e += c * o;
        }
        Ok(out)
    }

    /// Induced Euclidean norm `max_{‖v‖=1} |S[v]^order|`.
    ///
    /// Exact for orders 1 and 2 (vector norm, spectral norm). Order 3 uses
    /// multistart projected gradient ascent over the unit sphere; it is a
    /// test oracle, not on the solver's hot path.
    pub fn norm(&self) -> f64 {
        match self.order {
            1 => self.entries.iter().map(|e| e * e).sum::<f64>().sqrt(),
            2 => {
                if self.dim == 0 {
                    return 0.0;
                }
                let eig = self.as_matrix().symmetric_eigenvalues();
                eig.iter().fold(0.0f64, |m, &l| m.max(l.abs()))
            }
            3 => self.order3_norm(),
            _ => unreachable!(),
        }
    }

    fn order3_norm(&self) -> f64 {
        let n = self.dim;
        if n == 0 {
            return 0.0;
        }
        if n == 1 {
            return self.entries[0].abs();
        }
        // Run the ascent on a canonical representative (unit Frobenius
        // norm, first nonzero entry positive) so the result is exactly
        // absolutely homogeneous.
        let fro = self.entries.iter().map(|e| e * e).sum::<f64>().sqrt();
        if fro == 0.0 || !fro.is_finite() {
            return fro;
        }
        let flip =
            self.entries
                .iter()
                .find(|e| **e != 0.0)
                .map_or(1.0, |e| if *e < 0.0 { -1.0 } else { 1.0 });
        fro * self.scaled(flip / fro).order3_ascent()
    }

    fn order3_ascent(&self) -> f64 {
        let n = self.dim;
        // S[-v]^3 = -S[v]^3, so max |S[v]^3| = max S[v]^3 over the sphere.
        let mut starts: Vec<DVector<f64>> = Vec::new();
        for i in 0..n {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            starts.push(e.clone());
            starts.push(-e);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x7e4_5041);
        while starts.len() < 16 {
            let v = DVector::from_fn(n, |_, _| crate::oracle::standard_normal(&mut rng));
            let nrm = v.norm();
            if nrm > 1e-12 {
                starts.push(v / nrm);
            }
        }
        let mut best = 0.0f64;
        for mut v in starts {
            let mut val = self.apply_all(&v).unwrap();
            for _ in 0..200 {
                // ∇_v S[v]^3 = 3 S[v]^2
                let grad = self.contract(&v).unwrap().contract(&v).unwrap().as_vector() * 3.0;
                let tangent = &grad - &v * grad.dot(&v);
                let tnorm = tangent.norm();
                if tnorm < 1e-13 {
                    break;
                }
                let mut t = 1.0;
                let mut moved = false;
                for _ in 0..60 {
                    let cand = (&v + &tangent * t).normalize();
                    let cval = self.apply_all(&cand).unwrap();
                    if cval > val + 1e-4 * t * tnorm * tnorm {
                        v = cand;
                        val = cval;
                        moved = true;
                        break;
                    }
                    t *= 0.5;
                }
                if !moved {
                    break;
                }
            }
            best = best.max(val);
        }
        best
    }

    fn check_dim(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(ArpError::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok(())
    }
}

fn check_order(order: usize) -> Result<()> {
    if order == 0 || order > MAX_ORDER {
        return Err(ArpError::OrderOutOfRange {
            order,
            max: MAX_ORDER,
        });
    }
    Ok(())
}

/// Whether the derivative tensors are exact or perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Exact,
    Inexact,
}

/// A point together with derivative tensors of orders `1..=degree`.
#[derive(Debug, Clone)]
pub struct DerivativeBundle {
    point: DVector<f64>,
    tensors: Vec<SymmetricTensor>,
    provenance: Provenance,
}

impl DerivativeBundle {
    pub fn new(
        point: DVector<f64>,
        tensors: Vec<SymmetricTensor>,
        provenance: Provenance,
    ) -> Result<Self> {
        if tensors.is_empty() || tensors.len() > MAX_ORDER {
            return Err(ArpError::OrderOutOfRange {
                order: tensors.len(),
                max: MAX_ORDER,
            });
        }
        for (i, t) in tensors.iter().enumerate() {
            if t.order() != i + 1 {
                return Err(ArpError::OrderOutOfRange {
                    order: t.order(),
                    max: MAX_ORDER,
                });
            }
            if t.dim() != point.len() {
                return Err(ArpError::DimensionMismatch {
                    expected: point.len(),
                    got: t.dim(),
                });
            }
        }
        Ok(Self {
            point,
            tensors,
            provenance,
        })
    }

    pub fn point(&self) -> &DVector<f64> {
        &self.point
    }

    pub fn dim(&self) -> usize {
        self.point.len()
    }

    pub fn degree(&self) -> usize {
        self.tensors.len()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// The order-`ell` derivative tensor (1-based).
    pub fn tensor(&self, ell: usize) -> &SymmetricTensor {
        &self.tensors[ell - 1]
    }

    pub fn gradient(&self) -> DVector<f64> {
        self.tensors[0].as_vector()
    }

    /// A copy keeping only orders `1..=j`.
    pub fn truncated(&self, j: usize) -> Result<Self> {
        if j == 0 || j > self.degree() {
            return Err(ArpError::OrderOutOfRange {
                order: j,
                max: self.degree(),
            });
        }
        Ok(Self {
            point: self.point.clone(),
            tensors: self.tensors[..j].to_vec(),
            provenance: self.provenance,
        })
    }
}

/// Degree-`p` Taylor value `base + Σ_{ℓ=1..p} T_ℓ[s]^ℓ/ℓ!`.
pub fn taylor_value(bundle: &DerivativeBundle, base_value: f64, s: &DVector<f64>) -> Result<f64> {
    if s.len() != bundle.dim() {
        return Err(ArpError::DimensionMismatch {
            expected: bundle.dim(),
            got: s.len(),
        });
    }
    let mut acc = base_value;
    for ell in 1..=bundle.degree() {
        acc += bundle.tensor(ell).apply_all(s)? / factorial(ell);
    }
    Ok(acc)
}

/// Taylor decrement `−Σ_{ℓ=1..p} T_ℓ[s]^ℓ/ℓ!`, i.e. the drop of the Taylor
/// polynomial from the center to `s` (independent of the base value).
pub fn taylor_decrement(bundle: &DerivativeBundle, s: &DVector<f64>) -> Result<f64> {
    Ok(-taylor_value(bundle, 0.0, s)?)
}

/// Order-`ell` derivative of the degree-`p` Taylor polynomial with respect
/// to the step, evaluated at offset `s`:
/// `Σ_{t=ℓ..p} T_t[s]^{t−ℓ}/(t−ℓ)!`.
pub fn shifted_derivative(
    bundle: &DerivativeBundle,
    s: &DVector<f64>,
    ell: usize,
) -> Result<SymmetricTensor> {
    let p = bundle.degree();
    if ell == 0 || ell > p {
        return Err(ArpError::OrderOutOfRange { order: ell, max: p });
    }
    if s.len() != bundle.dim() {
        return Err(ArpError::DimensionMismatch {
            expected: bundle.dim(),
            got: s.len(),
        });
    }
    let mut out = bundle.tensor(ell).clone();
    for t in (ell + 1)..=p {
        let mut contracted = bundle.tensor(t).clone();
        for _ in 0..(t - ell) {
            contracted = contracted.contract(s)?;
        }
        out = out.add_scaled(&contracted, 1.0 / factorial(t - ell))?;
    }
    Ok(out)
}

/// `‖s‖^{p+1}`.
pub fn regularizer_value(s: &DVector<f64>, p: usize) -> f64 {
    s.norm().powi(p as i32 + 1)
}

/// Order-`ell` derivative (`ell ∈ {1,2}`) of `‖s‖^{p+1}`:
///
/// * gradient `(p+1)‖s‖^{p−1} s`,
/// * Hessian `(p+1)‖s‖^{p−1} I + (p+1)(p−1)‖s‖^{p−3} ssᵀ`.
///
/// At `s = 0` the limit is the zero tensor whenever it exists; the Hessian
/// limit formula degenerates for `p = 1`, which is reported as
/// [`ArpError::RegularizerSingularity`].
pub fn regularizer_derivative(s: &DVector<f64>, p: usize, ell: usize) -> Result<SymmetricTensor> {
    if !(1..=2).contains(&ell) {
        return Err(ArpError::OrderOutOfRange { order: ell, max: 2 });
    }
    let n = s.len();
    let nrm = s.norm();
    match ell {
        1 => {
            if nrm == 0.0 {
                return SymmetricTensor::zeros(1, n);
            }
            let g = s * ((p as f64 + 1.0) * nrm.powi(p as i32 - 1));
            Ok(SymmetricTensor::from_vector(&g))
        }
        2 => {
            if nrm == 0.0 {
                if p == 1 {
                    return Err(ArpError::RegularizerSingularity);
                }
                return SymmetricTensor::zeros(2, n);
            }
            let pf = p as f64;
            let mut h = DMatrix::<f64>::identity(n, n) * ((pf + 1.0) * nrm.powi(p as i32 - 1));
            if p > 1 {
                let c = (pf + 1.0) * (pf - 1.0) * nrm.powi(p as i32 - 3);
                h += s * s.transpose() * c;
            }
            SymmetricTensor::from_matrix(&h)
        }
        _ => unreachable!(),
    }
}
