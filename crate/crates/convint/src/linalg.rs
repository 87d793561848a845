//! Block space-time matrix algebra, the flux catalog, constraint-set
//! membership and parabolicity/monotonicity sampling.
//!
//! The ambient space is the set of `(m+nm) x (n+1)` matrices written in block
//! form `[[A, a], [(B^i), (b^i)]]` with `A` an `m x n` matrix, `a` an
//! `m`-vector, and for each `i = 1..m` an `n x n` block `B^i` and an
//! `n`-vector `b^i`. The "diagonal" projection keeps `[A, (b^i)]`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ConvintError, Result};
use crate::scalar::{real, Real};

/// Target dimension `m` and spatial dimension `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub m: usize,
    pub n: usize,
}

impl Dims {
    pub fn new(m: usize, n: usize) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(ConvintError::pre("dimensions m, n must be >= 1"));
        }
        Ok(Dims { m, n })
    }

    /// Rows of the full block matrix: `m + n*m`.
    pub fn rows(&self) -> usize {
        self.m + self.n * self.m
    }

    /// Columns of the full block matrix: `n + 1`.
    pub fn cols(&self) -> usize {
        self.n + 1
    }
}

/// Element of the space-time matrix space, stored by blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix<T: Real> {
    pub dims: Dims,
    /// Top-left `m x n` block.
    pub a: DMatrix<T>,
    /// Top-right `m`-vector.
    pub a_t: DVector<T>,
    /// Lower-left `n x n` blocks, one per component.
    pub b: Vec<DMatrix<T>>,
    /// Lower-right `n`-vectors, one per component.
    pub b_t: Vec<DVector<T>>,
}

/// Diagonal projection target `[A, (b^i)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagPoint<T: Real> {
    pub a: DMatrix<T>,
    pub b: Vec<DVector<T>>,
}

impl<T: Real> DiagPoint<T> {
    pub fn zeros(dims: Dims) -> Self {
        DiagPoint {
            a: DMatrix::zeros(dims.m, dims.n),
            b: vec![DVector::zeros(dims.n); dims.m],
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            m: self.a.nrows(),
            n: self.a.ncols(),
        }
    }

    pub fn add(&self, rhs: &Self) -> Self {
        DiagPoint {
            a: &self.a + &rhs.a,
            b: self
                .b
                .iter()
                .zip(&rhs.b)
                .map(|(x, y)| x + y)
                .collect(),
        }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        DiagPoint {
            a: &self.a - &rhs.a,
            b: self
                .b
                .iter()
                .zip(&rhs.b)
                .map(|(x, y)| x - y)
                .collect(),
        }
    }

    pub fn scale(&self, c: T) -> Self {
        DiagPoint {
            a: &self.a * c,
            b: self.b.iter().map(|x| x * c).collect(),
        }
    }

    /// Frobenius norm over both parts.
    pub fn norm(&self) -> T {
        let mut s = self.a.iter().fold(T::zero(), |acc, &x| acc + x * x);
        for bi in &self.b {
            s += bi.iter().fold(T::zero(), |acc, &x| acc + x * x);
        }
        s.sqrt()
    }

    pub fn dist(&self, rhs: &Self) -> T {
        self.sub(rhs).norm()
    }

    /// Flattens to `[vec(A); b^1; ...; b^m]` (row-major `A`).
    pub fn to_flat(&self) -> DVector<T> {
        let d = self.dims();
        let mut out = DVector::zeros(d.m * d.n + d.m * d.n);
        let mut k = 0;
        for i in 0..d.m {
            for j in 0..d.n {
                out[k] = self.a[(i, j)];
                k += 1;
            }
        }
        for bi in &self.b {
            for j in 0..d.n {
                out[k] = bi[j];
                k += 1;
            }
        }
        out
    }

    pub fn from_flat(dims: Dims, v: &DVector<T>) -> Result<Self> {
        let need = 2 * dims.m * dims.n;
        if v.len() != need {
            return Err(ConvintError::dim("DiagPoint::from_flat", need, v.len()));
        }
        let mut a = DMatrix::zeros(dims.m, dims.n);
        let mut k = 0;
        for i in 0..dims.m {
            for j in 0..dims.n {
                a[(i, j)] = v[k];
                k += 1;
            }
        }
        let mut b = Vec::with_capacity(dims.m);
        for _ in 0..dims.m {
            let mut bi = DVector::zeros(dims.n);
            for j in 0..dims.n {
                bi[j] = v[k];
                k += 1;
            }
            b.push(bi);
        }
        Ok(DiagPoint { a, b })
    }
}

impl<T: Real> BlockMatrix<T> {
    pub fn zeros(dims: Dims) -> Self {
        BlockMatrix {
            dims,
            a: DMatrix::zeros(dims.m, dims.n),
            a_t: DVector::zeros(dims.m),
            b: vec![DMatrix::zeros(dims.n, dims.n); dims.m],
            b_t: vec![DVector::zeros(dims.n); dims.m],
        }
    }

    pub fn add(&self, rhs: &Self) -> Self {
        BlockMatrix {
            dims: self.dims,
            a: &self.a + &rhs.a,
            a_t: &self.a_t + &rhs.a_t,
            b: self.b.iter().zip(&rhs.b).map(|(x, y)| x + y).collect(),
            b_t: self.b_t.iter().zip(&rhs.b_t).map(|(x, y)| x + y).collect(),
        }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        BlockMatrix {
            dims: self.dims,
            a: &self.a - &rhs.a,
            a_t: &self.a_t - &rhs.a_t,
            b: self.b.iter().zip(&rhs.b).map(|(x, y)| x - y).collect(),
            b_t: self.b_t.iter().zip(&rhs.b_t).map(|(x, y)| x - y).collect(),
        }
    }

    pub fn scale(&self, c: T) -> Self {
        BlockMatrix {
            dims: self.dims,
            a: &self.a * c,
            a_t: &self.a_t * c,
            b: self.b.iter().map(|x| x * c).collect(),
            b_t: self.b_t.iter().map(|x| x * c).collect(),
        }
    }

    /// Frobenius norm of the dense form.
    pub fn norm(&self) -> T {
        let mut s = self.a.iter().fold(T::zero(), |acc, &x| acc + x * x);
        s = self.a_t.iter().fold(s, |acc, &x| acc + x * x);
        for bi in &self.b {
            s = bi.iter().fold(s, |acc, &x| acc + x * x);
        }
        for bi in &self.b_t {
            s = bi.iter().fold(s, |acc, &x| acc + x * x);
        }
        s.sqrt()
    }

    pub fn dist(&self, rhs: &Self) -> T {
        self.sub(rhs).norm()
    }

    /// Dense `(m+nm) x (n+1)` form. Lossless inverse of [`BlockMatrix::from_dense`].
    pub fn to_dense(&self) -> DMatrix<T> {
        let d = self.dims;
        let mut out = DMatrix::zeros(d.rows(), d.cols());
        for i in 0..d.m {
            for j in 0..d.n {
                out[(i, j)] = self.a[(i, j)];
            }
            out[(i, d.n)] = self.a_t[i];
        }
        for i in 0..d.m {
            let r0 = d.m + i * d.n;
            for r in 0..d.n {
                for c in 0..d.n {
                    out[(r0 + r, c)] = self.b[i][(r, c)];
                }
                out[(r0 + r, d.n)] = self.b_t[i][r];
            }
        }
        out
    }

    pub fn from_dense(dims: Dims, dense: &DMatrix<T>) -> Result<Self> {
        if dense.nrows() != dims.rows() || dense.ncols() != dims.cols() {
            return Err(ConvintError::dim(
                "BlockMatrix::from_dense",
                format!("{}x{}", dims.rows(), dims.cols()),
                format!("{}x{}", dense.nrows(), dense.ncols()),
            ));
        }
        let mut out = BlockMatrix::zeros(dims);
        for i in 0..dims.m {
            for j in 0..dims.n {
                out.a[(i, j)] = dense[(i, j)];
            }
            out.a_t[i] = dense[(i, dims.n)];
        }
        for i in 0..dims.m {
            let r0 = dims.m + i * dims.n;
            for r in 0..dims.n {
                for c in 0..dims.n {
                    out.b[i][(r, c)] = dense[(r0 + r, c)];
                }
                out.b_t[i][r] = dense[(r0 + r, dims.n)];
            }
        }
        Ok(out)
    }
}

/// Assembles a block matrix from its four block groups, validating shapes.
pub fn block_compose<T: Real>(
    a: DMatrix<T>,
    a_t: DVector<T>,
    b: Vec<DMatrix<T>>,
    b_t: Vec<DVector<T>>,
) -> Result<BlockMatrix<T>> {
    let dims = Dims::new(a.nrows(), a.ncols())?;
    if a_t.len() != dims.m {
        return Err(ConvintError::dim("block a", dims.m, a_t.len()));
    }
    if b.len() != dims.m || b_t.len() != dims.m {
        return Err(ConvintError::dim(
            "block count",
            dims.m,
            format!("B: {}, b: {}", b.len(), b_t.len()),
        ));
    }
    for (i, bi) in b.iter().enumerate() {
        if bi.nrows() != dims.n || bi.ncols() != dims.n {
            return Err(ConvintError::dim(
                "block B^i",
                format!("{0}x{0} at i={i}", dims.n),
                format!("{}x{}", bi.nrows(), bi.ncols()),
            ));
        }
    }
    for (i, bi) in b_t.iter().enumerate() {
        if bi.len() != dims.n {
            return Err(ConvintError::dim(
                "block b^i",
                format!("{} at i={i}", dims.n),
                bi.len(),
            ));
        }
    }
    Ok(BlockMatrix { dims, a, a_t, b, b_t })
}

/// Diagonal projection: keeps `A` and the `b^i`, discards `a` and the `B^i`.
pub fn project_diag<T: Real>(x: &BlockMatrix<T>) -> DiagPoint<T> {
    DiagPoint {
        a: x.a.clone(),
        b: x.b_t.clone(),
    }
}

/// Number of singular values above `tol * s_max`; rank of the zero matrix is 0.
pub fn numeric_rank<T: Real>(mat: &DMatrix<T>, tol: T) -> usize {
    if mat.is_empty() {
        return 0;
    }
    let svd = mat.clone().svd(false, false);
    let smax = svd
        .singular_values
        .iter()
        .cloned()
        .fold(T::zero(), |a, b| if a > b { a } else { b });
    if smax == T::zero() {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|&&s| s > tol * smax)
        .count()
}

/// Default relative tolerance for rank decisions.
pub fn rank_tol<T: Real>() -> T {
    real(1e-9)
}

/// Orthonormal basis of the (right) nullspace of `mat`, via the symmetric
/// eigendecomposition of `mat^T mat`. Suited to the small dense systems used
/// throughout this crate.
pub fn nullspace<T: Real>(mat: &DMatrix<T>, tol: T) -> Vec<DVector<T>> {
    let n = mat.ncols();
    let gram = mat.transpose() * mat;
    let eig = gram.symmetric_eigen();
    let lmax = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(T::zero(), |a, b| if b > a { b } else { a });
    let cut = if lmax == T::zero() {
        T::zero()
    } else {
        tol * tol * lmax
    };
    let mut basis = Vec::new();
    for k in 0..n {
        if eig.eigenvalues[k] <= cut {
            basis.push(eig.eigenvectors.column(k).into_owned());
        }
    }
    basis
}

type EvalFn<T> = Arc<dyn Fn(&DMatrix<T>) -> DMatrix<T> + Send + Sync>;
type JacFn<T> = Arc<dyn Fn(&DMatrix<T>) -> DMatrix<T> + Send + Sync>;

/// Diffusion flux `sigma: M^{m x n} -> M^{m x n}` with an optional analytic
/// derivative; a central finite-difference fallback is used when absent.
#[derive(Clone)]
pub struct Flux<T: Real> {
    label: String,
    eval: EvalFn<T>,
    jac: Option<JacFn<T>>,
}

impl<T: Real> fmt::Debug for Flux<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Flux({})", self.label)
    }
}

impl<T: Real> Flux<T> {
    pub fn label(&self) -> &str {
        &self.label
    }

    /// Identity flux; the heat equation.
    pub fn heat() -> Self {
        Flux {
            label: "heat".into(),
            eval: Arc::new(|a: &DMatrix<T>| a.clone()),
            jac: Some(Arc::new(|a: &DMatrix<T>| {
                DMatrix::identity(a.len(), a.len())
            })),
        }
    }

    /// Linear flux `sigma(A) = M A` for a user `m x m` matrix.
    pub fn linear(mat: DMatrix<T>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(ConvintError::dim(
                "linear flux matrix",
                "square",
                format!("{}x{}", mat.nrows(), mat.ncols()),
            ));
        }
        let m = mat.nrows();
        let mat2 = mat.clone();
        Ok(Flux {
            label: "linear".into(),
            eval: Arc::new(move |a: &DMatrix<T>| &mat * a),
            jac: Some(Arc::new(move |a: &DMatrix<T>| {
                // Row-major vec ordering: J[(i,k),(j,l)] = M_ij delta_kl.
                let n = a.ncols();
                assert_eq!(a.nrows(), m, "linear flux expects {m} rows");
                let mut j = DMatrix::zeros(m * n, m * n);
                for i in 0..m {
                    for jj in 0..m {
                        for k in 0..n {
                            j[(i * n + k, jj * n + k)] = mat2[(i, jj)];
                        }
                    }
                }
                j
            })),
        })
    }

    /// Perona-Malik flux for a single component: `sigma(p) = p / (1 + |p|^2)`.
    pub fn perona_malik() -> Self {
        Flux {
            label: "perona-malik".into(),
            eval: Arc::new(|a: &DMatrix<T>| {
                assert_eq!(a.nrows(), 1, "perona-malik flux is defined for m = 1");
                let s = a.iter().fold(T::zero(), |acc, &x| acc + x * x);
                a * (T::one() / (T::one() + s))
            }),
            jac: Some(Arc::new(|a: &DMatrix<T>| {
                assert_eq!(a.nrows(), 1);
                let n = a.ncols();
                let s = a.iter().fold(T::zero(), |acc, &x| acc + x * x);
                let d = T::one() + s;
                let mut j = DMatrix::identity(n, n) * (T::one() / d);
                for r in 0..n {
                    for c in 0..n {
                        j[(r, c)] -= real::<T>(2.0) * a[(0, r)] * a[(0, c)] / (d * d);
                    }
                }
                j
            })),
        }
    }

    /// Cubic double-well flux for a single component: `sigma(p) = (|p|^2 - 1) p`.
    pub fn cubic() -> Self {
        Flux {
            label: "cubic".into(),
            eval: Arc::new(|a: &DMatrix<T>| {
                assert_eq!(a.nrows(), 1, "cubic flux is defined for m = 1");
                let s = a.iter().fold(T::zero(), |acc, &x| acc + x * x);
                a * (s - T::one())
            }),
            jac: Some(Arc::new(|a: &DMatrix<T>| {
                assert_eq!(a.nrows(), 1);
                let n = a.ncols();
                let s = a.iter().fold(T::zero(), |acc, &x| acc + x * x);
                let mut j = DMatrix::identity(n, n) * (s - T::one());
                for r in 0..n {
                    for c in 0..n {
                        j[(r, c)] += real::<T>(2.0) * a[(0, r)] * a[(0, c)];
                    }
                }
                j
            })),
        }
    }

    /// Flux from closures; `jac` may be omitted to use finite differences.
    pub fn custom(
        label: impl Into<String>,
        eval: impl Fn(&DMatrix<T>) -> DMatrix<T> + Send + Sync + 'static,
        jac: Option<JacFn<T>>,
    ) -> Self {
        Flux {
            label: label.into(),
            eval: Arc::new(eval),
            jac,
        }
    }

    /// Looks up a catalog flux by label.
    pub fn by_label(label: &str, linear_mat: Option<DMatrix<T>>) -> Result<Self> {
        match label {
            "heat" | "identity" => Ok(Flux::heat()),
            "linear" => {
                let m = linear_mat.ok_or_else(|| {
                    ConvintError::pre("linear flux requires a matrix parameter")
                })?;
                Flux::linear(m)
            }
            "perona-malik" | "pm" => Ok(Flux::perona_malik()),
            "cubic" => Ok(Flux::cubic()),
            other => Err(ConvintError::pre(format!("unknown flux label `{other}`"))),
        }
    }

    pub fn eval(&self, a: &DMatrix<T>) -> DMatrix<T> {
        (self.eval)(a)
    }

    /// Convenience for `m = 1`: evaluate on a gradient vector.
    pub fn eval_vec(&self, p: &DVector<T>) -> DVector<T> {
        let a = DMatrix::from_fn(1, p.len(), |_, j| p[j]);
        let s = self.eval(&a);
        DVector::from_fn(p.len(), |j, _| s[(0, j)])
    }

    /// Row `i` of `sigma(A)` as an `n`-vector.
    pub fn eval_row(&self, a: &DMatrix<T>, i: usize) -> DVector<T> {
        let s = self.eval(a);
        DVector::from_fn(a.ncols(), |j, _| s[(i, j)])
    }

    /// `(mn) x (mn)` derivative, analytic when available, otherwise central
    /// finite differences with step `1e-6 * (1 + |A|_inf)`.
    pub fn jacobian(&self, a: &DMatrix<T>) -> DMatrix<T> {
        if let Some(j) = &self.jac {
            return j(a);
        }
        let m = a.nrows();
        let n = a.ncols();
        let ainf = a
            .iter()
            .fold(T::zero(), |acc, &x| if x.abs() > acc { x.abs() } else { acc });
        let h = real::<T>(1e-6) * (T::one() + ainf);
        let mut jac = DMatrix::zeros(m * n, m * n);
        let mut ap = a.clone();
        for j in 0..m {
            for l in 0..n {
                let orig = ap[(j, l)];
                ap[(j, l)] = orig + h;
                let fp = self.eval(&ap);
                ap[(j, l)] = orig - h;
                let fm = self.eval(&ap);
                ap[(j, l)] = orig;
                let col = j * n + l;
                for i in 0..m {
                    for k in 0..n {
                        jac[(i * n + k, col)] = (fp[(i, k)] - fm[(i, k)]) / (real::<T>(2.0) * h);
                    }
                }
            }
        }
        jac
    }

    /// `n x n` spatial Jacobian for `m = 1` fluxes.
    pub fn jacobian_m1(&self, p: &DVector<T>) -> DMatrix<T> {
        let a = DMatrix::from_fn(1, p.len(), |_, j| p[j]);
        self.jacobian(&a)
    }
}

/// Graph lift `[A, (sigma^i(A))]`, a point of the flux graph.
pub fn graph_point<T: Real>(flux: &Flux<T>, a: &DMatrix<T>) -> DiagPoint<T> {
    let s = flux.eval(a);
    let m = a.nrows();
    let n = a.ncols();
    DiagPoint {
        a: a.clone(),
        b: (0..m)
            .map(|i| DVector::from_fn(n, |j, _| s[(i, j)]))
            .collect(),
    }
}

/// Residual report for constraint-set membership.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintReport<T: Real> {
    /// `max_i |b^i - sigma^i(A)|_inf`
    pub flux_residual: T,
    /// `max_i |tr(B^i) - z^i|`
    pub trace_residual: T,
}

/// Membership in the constraint set: `b^i = sigma^i(A)` and `tr(B^i) = z^i`,
/// both within `tol`.
pub fn in_constraint_set<T: Real>(
    x: &BlockMatrix<T>,
    flux: &Flux<T>,
    z: &DVector<T>,
    tol: T,
) -> Result<(bool, ConstraintReport<T>)> {
    if tol <= T::zero() {
        return Err(ConvintError::pre("tolerance must be positive"));
    }
    if z.len() != x.dims.m {
        return Err(ConvintError::dim("constraint z", x.dims.m, z.len()));
    }
    let s = flux.eval(&x.a);
    let mut flux_res = T::zero();
    let mut trace_res = T::zero();
    for i in 0..x.dims.m {
        for j in 0..x.dims.n {
            let r = (x.b_t[i][j] - s[(i, j)]).abs();
            if r > flux_res {
                flux_res = r;
            }
        }
        let tr = x.b[i].trace();
        let r = (tr - z[i]).abs();
        if r > trace_res {
            trace_res = r;
        }
    }
    let report = ConstraintReport {
        flux_residual: flux_res,
        trace_residual: trace_res,
    };
    Ok((flux_res <= tol && trace_res <= tol, report))
}

/// Seeded random sampler for the coercivity checks.
#[derive(Debug, Clone)]
pub struct Sampler<T: Real> {
    pub seed: u64,
    pub count: usize,
    /// Entries are drawn uniformly from `[-radius, radius]`.
    pub radius: T,
}

impl<T: Real> Sampler<T> {
    pub fn new(seed: u64, count: usize, radius: T) -> Self {
        Sampler { seed, count, radius }
    }
}

/// Outcome of a coercivity scan; a violation is a result, not an error.
#[derive(Debug, Clone)]
pub struct CoercivityReport<T: Real> {
    pub min_margin: T,
    pub samples: usize,
    /// Base point and increment realizing the minimum margin, when negative.
    pub witness: Option<(DMatrix<T>, DMatrix<T>)>,
    pub nu: T,
}

impl<T: Real> CoercivityReport<T> {
    pub fn holds(&self) -> bool {
        self.min_margin >= T::zero()
    }
}

fn margin_for<T: Real>(flux: &Flux<T>, a: &DMatrix<T>, inc: &DMatrix<T>, nu: T) -> T {
    let s1 = flux.eval(&(a + inc));
    let s0 = flux.eval(a);
    let diff = s1 - s0;
    let inner = diff
        .iter()
        .zip(inc.iter())
        .fold(T::zero(), |acc, (&d, &b)| acc + d * b);
    let bn = inc.iter().fold(T::zero(), |acc, &x| acc + x * x);
    inner - nu * bn
}

fn random_matrix<T: Real, R: Rng>(rng: &mut R, rows: usize, cols: usize, radius: T) -> DMatrix<T> {
    DMatrix::from_fn(rows, cols, |_, _| {
        real::<T>(rng.gen_range(-1.0..1.0)) * radius
    })
}

/// Samples the rank-one coercivity margin
/// `<sigma(A + p (x) alpha) - sigma(A), p (x) alpha> - nu |p|^2 |alpha|^2`.
///
/// `probes` are deterministic extra sample triples `(A, p, alpha)`.
pub fn parabolicity_sample<T: Real>(
    flux: &Flux<T>,
    dims: Dims,
    sampler: &Sampler<T>,
    nu: T,
    probes: &[(DMatrix<T>, DVector<T>, DVector<T>)],
) -> Result<CoercivityReport<T>> {
    if sampler.count == 0 && probes.is_empty() {
        return Err(ConvintError::pre("sample count must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let mut min_margin = T::max_value().unwrap_or_else(|| real(f64::MAX));
    let mut witness = None;
    let consider = |a: &DMatrix<T>, p: &DVector<T>, alpha: &DVector<T>,
                        min_margin: &mut T,
                        witness: &mut Option<(DMatrix<T>, DMatrix<T>)>| {
        let inc = p * alpha.transpose();
        // Margin is normalized against |p (x) alpha|^2 = |p|^2 |alpha|^2.
        let m = margin_for(flux, a, &inc, nu);
        if m < *min_margin {
            *min_margin = m;
            if m < T::zero() {
                *witness = Some((a.clone(), inc));
            }
        }
    };
    for (a, p, alpha) in probes {
        consider(a, p, alpha, &mut min_margin, &mut witness);
    }
    for _ in 0..sampler.count {
        let a = random_matrix(&mut rng, dims.m, dims.n, sampler.radius);
        let p = random_matrix(&mut rng, dims.m, 1, sampler.radius).column(0).into_owned();
        let alpha = random_matrix(&mut rng, dims.n, 1, sampler.radius).column(0).into_owned();
        consider(&a, &p, &alpha, &mut min_margin, &mut witness);
    }
    Ok(CoercivityReport {
        min_margin,
        samples: sampler.count + probes.len(),
        witness,
        nu,
    })
}

/// Samples the full monotonicity margin
/// `<sigma(A + B) - sigma(A), B> - nu |B|^2` with unrestricted `B`.
pub fn monotonicity_sample<T: Real>(
    flux: &Flux<T>,
    dims: Dims,
    sampler: &Sampler<T>,
    nu: T,
    probes: &[(DMatrix<T>, DMatrix<T>)],
) -> Result<CoercivityReport<T>> {
    if sampler.count == 0 && probes.is_empty() {
        return Err(ConvintError::pre("sample count must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let mut min_margin = T::max_value().unwrap_or_else(|| real(f64::MAX));
    let mut witness = None;
    let consider = |a: &DMatrix<T>, inc: &DMatrix<T>,
                        min_margin: &mut T,
                        witness: &mut Option<(DMatrix<T>, DMatrix<T>)>| {
        let m = margin_for(flux, a, inc, nu);
        if m < *min_margin {
            *min_margin = m;
            if m < T::zero() {
                *witness = Some((a.clone(), inc.clone()));
            }
        }
    };
    for (a, b) in probes {
        consider(a, b, &mut min_margin, &mut witness);
    }
    for _ in 0..sampler.count {
        let a = random_matrix(&mut rng, dims.m, dims.n, sampler.radius);
        let b = random_matrix(&mut rng, dims.m, dims.n, sampler.radius);
        consider(&a, &b, &mut min_margin, &mut witness);
    }
    Ok(CoercivityReport {
        min_margin,
        samples: sampler.count + probes.len(),
        witness,
        nu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dm(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn block_compose_zero_case() {
        let dims = Dims::new(2, 3).unwrap();
        let x = BlockMatrix::<f64>::zeros(dims);
        let dense = x.to_dense();
        assert_eq!(dense.nrows(), 8);
        assert_eq!(dense.ncols(), 4);
        assert!(dense.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn block_compose_1d_by_hand() {
        let x = block_compose(
            dm(1, 1, &[2.0]),
            DVector::from_vec(vec![0.0]),
            vec![dm(1, 1, &[0.0])],
            vec![DVector::from_vec(vec![0.4])],
        )
        .unwrap();
        let dense = x.to_dense();
        assert_eq!(dense, dm(2, 2, &[2.0, 0.0, 0.0, 0.4]));
        let back = BlockMatrix::from_dense(x.dims, &dense).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn block_compose_shape_mismatch() {
        let err = block_compose(
            dm(1, 2, &[1.0, 2.0]),
            DVector::from_vec(vec![0.0]),
            vec![dm(1, 1, &[0.0])], // n' = 1 != n = 2
            vec![DVector::from_vec(vec![0.0, 0.0])],
        )
        .unwrap_err();
        assert!(err.to_string().contains("B^i"));
    }

    #[test]
    fn dense_roundtrip_random() {
        let dims = Dims::new(2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x = block_compose(
                random_matrix::<f64, _>(&mut rng, 2, 2, 1.0),
                random_matrix::<f64, _>(&mut rng, 2, 1, 1.0).column(0).into_owned(),
                vec![
                    random_matrix::<f64, _>(&mut rng, 2, 2, 1.0),
                    random_matrix::<f64, _>(&mut rng, 2, 2, 1.0),
                ],
                vec![
                    random_matrix::<f64, _>(&mut rng, 2, 1, 1.0).column(0).into_owned(),
                    random_matrix::<f64, _>(&mut rng, 2, 1, 1.0).column(0).into_owned(),
                ],
            )
            .unwrap();
            let back = BlockMatrix::from_dense(dims, &x.to_dense()).unwrap();
            assert_eq!(back, x);
            // project_diag(block_compose(A,a,B,b)) = [A, b]
            let p = project_diag(&x);
            assert_eq!(p.a, x.a);
            assert_eq!(p.b, x.b_t);
        }
    }

    #[test]
    fn numeric_rank_cases() {
        assert_eq!(numeric_rank(&DMatrix::<f64>::zeros(3, 3), 1e-10), 0);
        let p = DVector::from_vec(vec![1.0, -2.0]);
        let alpha = DVector::from_vec(vec![0.5, 0.25, 3.0]);
        let outer = &p * alpha.transpose();
        assert_eq!(numeric_rank(&outer, 1e-10), 1);
        assert_eq!(numeric_rank(&DMatrix::<f64>::identity(3, 3), 1e-10), 3);
    }

    #[test]
    fn numeric_rank_invariances() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let a = random_matrix::<f64, _>(&mut rng, 3, 4, 2.0);
            let r = numeric_rank(&a, 1e-10);
            assert_eq!(numeric_rank(&a.transpose(), 1e-10), r);
            // Orthogonal mixing: rotate rows by a Givens rotation.
            let theta = 0.73_f64;
            let mut q = DMatrix::<f64>::identity(3, 3);
            q[(0, 0)] = theta.cos();
            q[(0, 1)] = -theta.sin();
            q[(1, 0)] = theta.sin();
            q[(1, 1)] = theta.cos();
            assert_eq!(numeric_rank(&(&q * &a), 1e-10), r);
        }
    }

    #[test]
    fn graph_point_identity_and_pm() {
        let heat = Flux::<f64>::heat();
        let id2 = DMatrix::<f64>::identity(2, 2);
        let g = graph_point(&heat, &id2);
        assert_eq!(g.a, id2);
        assert_eq!(g.b[0], DVector::from_vec(vec![1.0, 0.0]));
        assert_eq!(g.b[1], DVector::from_vec(vec![0.0, 1.0]));

        let pm = Flux::<f64>::perona_malik();
        let g = graph_point(&pm, &dm(1, 1, &[2.0]));
        assert_relative_eq!(g.b[0][0], 0.4, epsilon = 1e-15);
        let g = graph_point(&pm, &dm(1, 1, &[0.5]));
        assert_relative_eq!(g.b[0][0], 0.4, epsilon = 1e-15);
    }

    #[test]
    fn constraint_set_membership() {
        let pm = Flux::<f64>::perona_malik();
        // Graph lift with traceless B, z = 0.
        let x = block_compose(
            dm(1, 1, &[2.0]),
            DVector::from_vec(vec![0.3]),
            vec![dm(1, 1, &[0.0])],
            vec![DVector::from_vec(vec![0.4])],
        )
        .unwrap();
        let z = DVector::from_vec(vec![0.0]);
        let (ok, rep) = in_constraint_set(&x, &pm, &z, 1e-12).unwrap();
        assert!(ok, "flux residual {}", rep.flux_residual);

        // Perturb b by 10*tol.
        let mut y = x.clone();
        y.b_t[0][0] += 1e-11;
        let (ok, rep) = in_constraint_set(&y, &pm, &z, 1e-12).unwrap();
        assert!(!ok);
        assert_relative_eq!(rep.flux_residual, 1e-11, max_relative = 1e-3);

        // 1x1 block with B = [[0.7]], z = [0.7].
        let x = block_compose(
            dm(1, 1, &[2.0]),
            DVector::from_vec(vec![0.0]),
            vec![dm(1, 1, &[0.7])],
            vec![DVector::from_vec(vec![0.4])],
        )
        .unwrap();
        let z = DVector::from_vec(vec![0.7]);
        let (ok, _) = in_constraint_set(&x, &pm, &z, 1e-12).unwrap();
        assert!(ok);
    }

    #[test]
    fn parabolicity_identity_nonnegative() {
        let heat = Flux::<f64>::heat();
        let dims = Dims::new(2, 2).unwrap();
        let rep = parabolicity_sample(&heat, dims, &Sampler::new(3, 500, 2.0), 1.0, &[]).unwrap();
        assert!(rep.min_margin >= -1e-12, "margin {}", rep.min_margin);
    }

    #[test]
    fn parabolicity_pm_violation_witness() {
        let pm = Flux::<f64>::perona_malik();
        let dims = Dims::new(1, 1).unwrap();
        let probes = vec![(
            dm(1, 1, &[2.0]),
            DVector::from_vec(vec![1.0]),
            DVector::from_vec(vec![1.0]),
        )];
        let rep = parabolicity_sample(&pm, dims, &Sampler::new(5, 100, 3.0), 1e-3, &probes).unwrap();
        assert!(!rep.holds());
        assert!(rep.witness.is_some());
        // sigma(3) - sigma(2) = 0.3 - 0.4 < 0 at the probe.
        assert!(rep.min_margin < -0.09);
    }

    #[test]
    fn parabolicity_zero_samples_is_error() {
        let heat = Flux::<f64>::heat();
        let dims = Dims::new(1, 1).unwrap();
        assert!(parabolicity_sample(&heat, dims, &Sampler::new(0, 0, 1.0), 1.0, &[]).is_err());
    }

    #[test]
    fn monotonicity_linear_scaling() {
        let dims = Dims::new(2, 2).unwrap();
        let two = Flux::<f64>::linear(DMatrix::identity(2, 2) * 2.0).unwrap();
        let rep = monotonicity_sample(&two, dims, &Sampler::new(11, 500, 2.0), 2.0, &[]).unwrap();
        assert!(rep.min_margin >= -1e-12);

        let heat = Flux::<f64>::heat();
        let rep = monotonicity_sample(&heat, dims, &Sampler::new(11, 500, 2.0), 1.0, &[]).unwrap();
        assert!(rep.min_margin >= -1e-12);
    }

    #[test]
    fn monotonicity_implies_parabolicity_on_rank_one() {
        // Rank-one B in the monotonicity margin reproduces the parabolicity margin.
        let pm = Flux::<f64>::perona_malik();
        let a = dm(1, 1, &[2.0]);
        let p = DVector::from_vec(vec![1.0]);
        let alpha = DVector::from_vec(vec![1.0]);
        let inc = &p * alpha.transpose();
        let m_mono = margin_for(&pm, &a, &inc, 1e-3);
        let dims = Dims::new(1, 1).unwrap();
        let rep = parabolicity_sample(
            &pm,
            dims,
            &Sampler::new(1, 1, 0.0),
            1e-3,
            &[(a.clone(), p, alpha)],
        )
        .unwrap();
        assert!(rep.min_margin <= m_mono + 1e-14);
    }

    #[test]
    fn fd_jacobian_matches_analytic_pm() {
        let pm = Flux::<f64>::perona_malik();
        let pm_fd = Flux::<f64>::custom(
            "pm-fd",
            |a| {
                let s: f64 = a.iter().map(|&x| x * x).sum();
                a * (1.0 / (1.0 + s))
            },
            None,
        );
        let p = DMatrix::from_row_slice(1, 2, &[0.7, -1.3]);
        let ja = pm.jacobian(&p);
        let jf = pm_fd.jacobian(&p);
        assert_relative_eq!(ja, jf, epsilon = 1e-8);
        // sigma'(2) = (1 - 4) / 25 = -0.12 in 1-D.
        let j1 = pm.jacobian_m1(&DVector::from_vec(vec![2.0]));
        assert_relative_eq!(j1[(0, 0)], -0.12, epsilon = 1e-12);
    }
}
