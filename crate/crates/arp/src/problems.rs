//! Test problems with analytic derivatives up to order three.
//!
//! Every problem documents a conservative Lipschitz constant valid for all
//! derivative orders it exposes on the study region `‖x‖∞ ≤ 10`; the
//! theory-side constants only need an upper bound, so conservatism is
//! harmless.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

use crate::error::{ArpError, Result};
use crate::tensor::{DerivativeBundle, Provenance, SymmetricTensor, MAX_ORDER};

/// A smooth objective with exact derivatives up to `degree_available()`,
/// a known lower bound, and a documented Lipschitz constant.
pub trait ExactProblem: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn degree_available(&self) -> usize {
        MAX_ORDER
    }
    fn value(&self, x: &DVector<f64>) -> f64;
    /// Order-`ell` derivative tensor at `x`, `1 ≤ ell ≤ degree_available()`.
    fn derivative(&self, x: &DVector<f64>, ell: usize) -> SymmetricTensor;
    /// A constant `f_low` with `f(x) ≥ f_low` on the study region.
    fn f_low(&self) -> f64;
    /// Conservative Lipschitz constant for the exposed derivative orders on
    /// `‖x‖∞ ≤ 10`.
    fn lipschitz_p(&self) -> f64;
    /// Finite-sum view, when the objective is an average of terms.
    fn finite_sum(&self) -> Option<&dyn FiniteSum> {
        None
    }

    fn exact_bundle(&self, x: &DVector<f64>, p: usize) -> DerivativeBundle {
        let tensors = (1..=p).map(|ell| self.derivative(x, ell)).collect();
        DerivativeBundle::new(x.clone(), tensors, Provenance::Exact)
            .expect("problem derivatives form a valid bundle")
    }
}

/// Finite-sum structure `f(x) = (1/N) Σ_i term_i(x)` used by subsampling.
pub trait FiniteSum: Send + Sync {
    fn num_terms(&self) -> usize;
    fn term_value(&self, i: usize, x: &DVector<f64>) -> f64;
    fn term_derivative(&self, i: usize, x: &DVector<f64>, ell: usize) -> SymmetricTensor;
}

// ---------------------------------------------------------------------------
// Convex quadratic: f(x) = ‖x‖²/2.
// ---------------------------------------------------------------------------

/// `f(x) = ½‖x‖²`; gradient `x`, Hessian `I`, third derivative zero.
/// Lipschitz constants: L₁ = 1, L₂ = L₃ = 0 (globally); we report 1.
pub struct Quadratic {
    n: usize,
    name: String,
}

impl Quadratic {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            name: format!("quadratic:{n}"),
        }
    }
}

impl ExactProblem for Quadratic {
    fn name(&self) -> &str {
        &self.name
    }
    fn dim(&self) -> usize {
        self.n
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.norm_squared()
    }
    fn derivative(&self, x: &DVector<f64>, ell: usize) -> SymmetricTensor {
        match ell {
            1 => SymmetricTensor::from_vector(x),
            2 => SymmetricTensor::from_matrix(&DMatrix::identity(self.n, self.n)).unwrap(),
            _ => SymmetricTensor::zeros(ell, self.n).unwrap(),
        }
    }
    fn f_low(&self) -> f64 {
        0.0
    }
    fn lipschitz_p(&self) -> f64 {
        1.0
    }
}

// ---------------------------------------------------------------------------
// Extended Rosenbrock (n even).
// ---------------------------------------------------------------------------

/// `f(x) = Σ_pairs 100(x_{2i+1} − x_{2i}²)² + (1 − x_{2i})²`.
///
/// On `‖x‖∞ ≤ 10`: ‖∇²‖ ≤ 1.3e5, third-derivative norms ≤ 2.5e4, fourth
/// derivatives constant at 2400, so 1.3e5 bounds every order's Lipschitz
/// constant.
pub struct Rosenbrock {
    n: usize,
    name: String,
}

impl Rosenbrock {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_multiple_of(2) {
            return Err(ArpError::Invalid(format!(
                "extended Rosenbrock needs an even positive dimension, got {n}"
            )));
        }
        Ok(Self {
            n,
            name: format!("rosenbrock:{n}"),
        })
    }
}

impl ExactProblem for Rosenbrock {
    fn name(&self) -> &str {
        &self.name
    }
    fn dim(&self) -> usize {
        self.n
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        (0..self.n / 2)
            .map(|k| {
                let u = x[2 * k];
                let v = x[2 * k + 1];
                100.0 * (v - u * u).powi(2) + (1.0 - u).powi(2)
            })
            .sum()
    }
    fn derivative(&self, x: &DVector<f64>, ell: usize) -> SymmetricTensor {
        let n = self.n;
        match ell {
            1 => {
                let mut g = DVector::zeros(n);
                for k in 0..n / 2 {
                    let (i, j) = (2 * k, 2 * k + 1);
                    let (u, v) = (x[i], x[j]);
                    g[i] = -400.0 * u * (v - u * u) - 2.0 * (1.0 - u);
                    g[j] = 200.0 * (v - u * u);
                }
                SymmetricTensor::from_vector(&g)
            }
            2 => {
                let mut h = DMatrix::zeros(n, n);
                for k in 0..n / 2 {
                    let (i, j) = (2 * k, 2 * k + 1);
                    let (u, v) = (x[i], x[j]);
                    h[(i, i)] = 1200.0 * u * u - 400.0 * v + 2.0;
                    h[(i, j)] = -400.0 * u;
                    h[(j, i)] = -400.0 * u;
                    h[(j, j)] = 200.0;
                }
                SymmetricTensor::from_matrix(&h).unwrap()
            }
            3 => {
                let mut t = vec![0.0; n * n * n];
                let idx = |a: usize, b: usize, c: usize| (a * n + b) * n + c;
                for k in 0..n / 2 {
                    let (i, j) = (2 * k, 2 * k + 1);
                    let u = x[i];
                    t[idx(i, i, i)] = 2400.0 * u;
                    for (a, b, c) in [(i, i, j), (i, j, i), (j, i, i)] {
                        t[idx(a, b, c)] = -400.0;
                    }
                }
                SymmetricTensor::from_entries(3, n, t).unwrap()
            }
            _ => SymmetricTensor::zeros(ell.min(MAX_ORDER), n).unwrap(),
        }
    }
    fn f_low(&self) -> f64 {
        0.0
    }
    fn lipschitz_p(&self) -> f64 {
        1.3e5
    }
}

// ---------------------------------------------------------------------------
// Separable nonconvex quartic.
// ---------------------------------------------------------------------------

/// `f(x) = Σ_i (x_i⁴/4 − x_i²/2)`, global minimum `−n/4` at `x_i = ±1`, a
/// strict saddle at the origin.
///
/// On `‖x‖∞ ≤ 10`: sup|f''| = 299, sup|f'''| = 60, f'''' = 6, so 299 bounds
/// every order's Lipschitz constant.
pub struct Quartic {
    n: usize,
    name: String,
}

impl Quartic {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            name: format!("quartic:{n}"),
        }
    }
}

impl ExactProblem for Quartic {
    fn name(&self) -> &str {
        &self.name
    }
    fn dim(&self) -> usize {
        self.n
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        x.iter().map(|&t| 0.25 * t.powi(4) - 0.5 * t * t).sum()
    }
    fn derivative(&self, x: &DVector<f64>, ell: usize) -> SymmetricTensor {
        let n = self.n;
        match ell {
            1 => SymmetricTensor::from_vector(&DVector::from_fn(n, |i, _| x[i].powi(3) - x[i])),
            2 => {
                let mut h = DMatrix::zeros(n, n);
                for i in 0..n {
                    h[(i, i)] = 3.0 * x[i] * x[i] - 1.0;
                }
                SymmetricTensor::from_matrix(&h).unwrap()
            }
            3 => {
                let mut t = vec![0.0; n * n * n];
                for i in 0..n {
                    t[(i * n + i) * n + i] = 6.0 * x[i];
                }
                SymmetricTensor::from_entries(3, n, t).unwrap()
            }
            _ => SymmetricTensor::zeros(ell.min(MAX_ORDER), n).unwrap(),
        }
    }
    fn f_low(&self) -> f64 {
        -(self.n as f64) / 4.0
    }
    fn lipschitz_p(&self) -> f64 {
        299.0
    }
}

// ---------------------------------------------------------------------------
// Scalar cubic on a compact study box.
// ---------------------------------------------------------------------------

/// `f(x) = x³/6` on `|x| ≤ 10`; the origin is approximately critical to
/// orders one and two but not three. `f_low = −1000/6` on the box;
/// sup|f''| = 10 bounds every order's Lipschitz constant there.
pub struct Cubic1d;

impl ExactProblem for Cubic1d {
    fn name(&self) -> &str {
        "cubic1d"
    }
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        x[0].powi(3) / 6.0
    }
    fn derivative(&self, x: &DVector<f64>, ell: usize) -> SymmetricTensor {
        match ell {
            1 => SymmetricTensor::from_vector(&DVector::from_vec(vec![0.5 * x[0] * x[0]])),
            2 => SymmetricTensor::from_entries(2, 1, vec![x[0]]).unwrap(),
            3 => SymmetricTensor::from_entries(3, 1, vec![1.0]).unwrap(),
            _ => SymmetricTensor::zeros(ell.min(MAX_ORDER), 1).unwrap(),
        }
    }
    fn f_low(&self) -> f64 {
        -1000.0 / 6.0
    }
    fn lipschitz_p(&self) -> f64 {
        10.0
    }
}

// ---------------------------------------------------------------------------
// Finite-sum least squares.
// ---------------------------------------------------------------------------

/// `f(x) = (1/N) Σ_i ½(a_i·x − b_i)²`; the natural target of subsampled
/// derivative estimates. Constant Hessian `(1/N)AᵀA`; its spectral norm
/// bounds every order's Lipschitz constant (orders ≥ 2 are constant/zero).
pub struct LeastSquares {
    a: DMatrix<f64>,
    b: DVector<f64>,
    name: String,
    lipschitz: f64,
}

impl LeastSquares {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, name: String) -> Result<Self> {
        if a.nrows() == 0 || a.nrows() != b.len() {
            return Err(ArpError::Invalid(
                "least squares needs one row per sample and matching targets".into(),
            ));
        }
        let n_samples = a.nrows() as f64;
        let gram = a.transpose() * &a / n_samples;
        let lipschitz = gram
            .symmetric_eigenvalues()
            .iter()
            .fold(0.0f64, |m, &l| m.max(l.abs()));
        Ok(Self {
            a,
            b,
            name,
            lipschitz,
        })
    }

    /// Deterministic synthetic instance (32 samples, 5 features).
    pub fn synthetic() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0x15EA_5E57);
        let (n_samples, n_features) = (32, 5);
        let a = DMatrix::from_fn(n_samples, n_features, |_, _| {
            crate::oracle::standard_normal(&mut rng)
        });
        let x_star = DVector::from_fn(n_features, |i, _| (i as f64 + 1.0) / n_features as f64);
        let b = &a * &x_star
            + DVector::from_fn(n_samples, |_, _| {
                0.05 * crate::oracle::standard_normal(&mut rng)
            });
        Self::new(a, b, "lsq".into()).expect("synthetic instance is well-formed")
    }

    /// Loads rows of whitespace- or comma-separated numbers; the last
    /// column is the target, the rest are features.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row: Vec<f64> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|tok| !tok.is_empty())
                .map(|tok| {
                    tok.parse::<f64>().map_err(|_| {
                        ArpError::Invalid(format!(
                            "{}:{}: '{}' is not a number",
                            path.display(),
                            lineno + 1,
                            tok
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            if row.len() < 2 {
                return Err(ArpError::Invalid(format!(
                    "{}:{}: need at least one feature and a target",
                    path.display(),
                    lineno + 1
                )));
            }
            if let Some(first) = rows.first() {
                if row.len() != first.len() {
                    return Err(ArpError::Invalid(format!(
                        "{}:{}: inconsistent column count",
                        path.display(),
                        lineno + 1
                    )));
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(ArpError::Invalid(format!(
                "{}: no data rows",
                path.display()
            )));
        }
        let n_features = rows[0].len() - 1;
        let a = DMatrix::from_fn(rows.len(), n_features, |i, j| rows[i][j]);
        let b = DVector::from_fn(rows.len(), |i, _| rows[i][n_features]);
        Self::new(a, b, format!("lsq:{}", path.display()))
    }

    fn residual(&self, i: usize, x: &DVector<f64>) -> f64 {
        self.a.row(i).transpose().dot(x) - self.b[i]
    }
}

impl ExactProblem for LeastSquares {
    fn name(&self) -> &str {
        &self.name
    }
    fn dim(&self) -> usize {
        self.a.ncols()
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        let n = self.num_terms() as f64;
        (0..self.num_terms())
            .map(|i| 0.5 * self.residual(i, x).powi(2))
            .sum::<f64>()
            / n
    }
    // Accumulated over terms in index order so that a full subsample batch
    // reproduces these tensors bitwise.
    fn derivative(&self, x: &DVector<f64>, ell: usize) -> SymmetricTensor {
        let n = self.dim();
        let count = self.num_terms();
        let mut acc = SymmetricTensor::zeros(ell.min(MAX_ORDER), n).unwrap();
        for i in 0..count {
            acc = acc
                .add_scaled(&self.term_derivative(i, x, ell), 1.0)
                .unwrap();
        }
        acc.scaled(1.0 / count as f64)
    }
    fn f_low(&self) -> f64 {
        0.0
    }
    fn lipschitz_p(&self) -> f64 {
        self.lipschitz
    }
    fn finite_sum(&self) -> Option<&dyn FiniteSum> {
        Some(self)
    }
}

impl FiniteSum for LeastSquares {
    fn num_terms(&self) -> usize {
        self.a.nrows()
    }
    fn term_value(&self, i: usize, x: &DVector<f64>) -> f64 {
        0.5 * self.residual(i, x).powi(2)
    }
    fn term_derivative(&self, i: usize, x: &DVector<f64>, ell: usize) -> SymmetricTensor {
        let n = self.dim();
        let row = self.a.row(i).transpose();
        match ell {
            1 => SymmetricTensor::from_vector(&(&row * self.residual(i, x))),
            2 => SymmetricTensor::from_matrix(&(&row * row.transpose())).unwrap(),
            _ => SymmetricTensor::zeros(ell.min(MAX_ORDER), n).unwrap(),
        }
    }
}

// ---------------------------------------------------------------------------
// Registry.
// ---------------------------------------------------------------------------

/// The default problem set.
pub fn builtin_problems() -> Vec<Box<dyn ExactProblem>> {
    vec![
        Box::new(Quadratic::new(2)),
        Box::new(Rosenbrock::new(2).unwrap()),
        Box::new(Quartic::new(4)),
        Box::new(Cubic1d),
        Box::new(LeastSquares::synthetic()),
    ]
}

/// Resolves a problem from a name like `quadratic`, `quartic:10`,
/// `rosenbrock:8`, `cubic1d`, or `lsq` (which reads `data_path` when given).
pub fn problem_by_name(name: &str, data_path: Option<&Path>) -> Result<Box<dyn ExactProblem>> {
    let (base, arg) = match name.split_once(':') {
        Some((b, a)) => (b, Some(a)),
        None => (name, None),
    };
    let parse_dim = |arg: Option<&str>, default: usize| -> Result<usize> {
        match arg {
            None => Ok(default),
            Some(a) => a
                .parse::<usize>()
                .map_err(|_| ArpError::Invalid(format!("bad dimension '{a}' in problem '{name}'")))
                .and_then(|n| {
                    if n == 0 {
                        Err(ArpError::Invalid("dimension must be positive".into()))
                    } else {
                        Ok(n)
                    }
                }),
        }
    };
    match base {
        "quadratic" => Ok(Box::new(Quadratic::new(parse_dim(arg, 2)?))),
        "rosenbrock" => Ok(Box::new(Rosenbrock::new(parse_dim(arg, 2)?)?)),
        "quartic" => Ok(Box::new(Quartic::new(parse_dim(arg, 4)?))),
        "cubic1d" => Ok(Box::new(Cubic1d)),
        "lsq" => match data_path {
            Some(p) => Ok(Box::new(LeastSquares::from_file(p)?)),
            None => Ok(Box::new(LeastSquares::synthetic())),
        },
        _ => Err(ArpError::UnknownProblem(name.to_string())),
    }
}
