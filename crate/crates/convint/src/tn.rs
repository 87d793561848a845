//! Construction, verification and transformation of T_N-configurations.
//!
//! A T_N-configuration is a base point `P`, rank-one legs `C_1..C_N` summing
//! to zero, and factors `kappa_j > 1`; the corners are
//! `X_j = P + C_1 + ... + C_{j-1} + kappa_j C_j`. The structured variant lives
//! in the space-time block space and has legs of the admissible form
//! `[[p (x) alpha, s p], [(beta^i (x) alpha), (s beta^i)]]` with
//! `alpha != 0` and `beta^i . alpha = 0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{ConvintError, Result};
use crate::linalg::{block_compose, numeric_rank, rank_tol, BlockMatrix, Dims};
use crate::scalar::{real, Real};

/// Closure tolerance for `sum C_j = 0` and anchor reconstruction.
pub fn closure_tol<T: Real>() -> T {
    real(1e-10)
}

/// Structured rank-one direction `(p, alpha, s, (beta^i))`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibleRankOne<T: Real> {
    pub p: DVector<T>,
    pub alpha: DVector<T>,
    pub s: T,
    pub beta: Vec<DVector<T>>,
}

impl<T: Real> AdmissibleRankOne<T> {
    pub fn dims(&self) -> Dims {
        Dims {
            m: self.p.len(),
            n: self.alpha.len(),
        }
    }

    /// Assembles the block matrix `[[p (x) alpha, s p], [(beta^i (x) alpha), (s beta^i)]]`.
    pub fn assemble(&self) -> Result<BlockMatrix<T>> {
        let d = self.dims();
        if self.beta.len() != d.m {
            return Err(ConvintError::dim("beta count", d.m, self.beta.len()));
        }
        let a = &self.p * self.alpha.transpose();
        let a_t = &self.p * self.s;
        let b: Vec<_> = self
            .beta
            .iter()
            .map(|bi| bi * self.alpha.transpose())
            .collect();
        let b_t: Vec<_> = self.beta.iter().map(|bi| bi * self.s).collect();
        block_compose(a, a_t, b, b_t)
    }

    /// Largest `|beta^i . alpha|`.
    pub fn orthogonality_defect(&self) -> T {
        self.beta
            .iter()
            .map(|bi| bi.dot(&self.alpha).abs())
            .fold(T::zero(), |a, b| if b > a { b } else { a })
    }
}

/// A T_N-configuration with derived corners and anchors.
#[derive(Debug, Clone)]
pub struct TnConfig<T: Real> {
    /// Base point `P = P_1`.
    pub base: DMatrix<T>,
    /// Legs `(C_j, kappa_j)`.
    pub legs: Vec<(DMatrix<T>, T)>,
    /// Corners `X_j = P_j + kappa_j C_j`.
    pub corners: Vec<DMatrix<T>>,
    /// Anchors `P_j = P + C_1 + ... + C_{j-1}`.
    pub anchors: Vec<DMatrix<T>>,
    /// Set when the matrices carry the `(m+nm) x (n+1)` block structure.
    pub structured: Option<Dims>,
}

impl<T: Real> TnConfig<T> {
    pub fn len(&self) -> usize {
        self.legs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.legs.is_empty()
    }

    /// `lambda_j = 1 - 1/kappa_j`.
    pub fn lambdas(&self) -> Vec<T> {
        self.legs
            .iter()
            .map(|&(_, k)| T::one() - T::one() / k)
            .collect()
    }

    /// `mu = lambda_1 ... lambda_N`.
    pub fn mu(&self) -> T {
        self.lambdas().iter().fold(T::one(), |a, &b| a * b)
    }

    /// Reinterprets matrices as space-time block matrices.
    pub fn leg_block(&self, j: usize, dims: Dims) -> Result<BlockMatrix<T>> {
        BlockMatrix::from_dense(dims, &self.legs[j].0)
    }
}

fn frob<T: Real>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |a, &x| a + x * x).sqrt()
}

/// Builds and verifies a T_N-configuration from a base and legs.
pub fn build_tn<T: Real>(base: DMatrix<T>, legs: Vec<(DMatrix<T>, T)>) -> Result<TnConfig<T>> {
    build_tn_shaped(base, legs, None)
}

/// [`build_tn`] with an explicit block-structure tag.
pub fn build_tn_shaped<T: Real>(
    base: DMatrix<T>,
    legs: Vec<(DMatrix<T>, T)>,
    structured: Option<Dims>,
) -> Result<TnConfig<T>> {
    let n = legs.len();
    if n < 2 {
        return Err(ConvintError::pre("a T_N-configuration needs N >= 2 legs"));
    }
    let shape = (base.nrows(), base.ncols());
    if let Some(d) = structured {
        if shape != (d.rows(), d.cols()) {
            return Err(ConvintError::dim(
                "structured base",
                format!("{}x{}", d.rows(), d.cols()),
                format!("{}x{}", shape.0, shape.1),
            ));
        }
    }
    let mut closure = DMatrix::zeros(shape.0, shape.1);
    for (j, (c, kappa)) in legs.iter().enumerate() {
        if (c.nrows(), c.ncols()) != shape {
            return Err(ConvintError::dim(
                "leg shape",
                format!("{}x{}", shape.0, shape.1),
                format!("{}x{} at leg {j}", c.nrows(), c.ncols()),
            ));
        }
        if *kappa <= T::one() {
            return Err(ConvintError::InvalidConfig(format!(
                "factor not greater than one: kappa_{} = {:e}",
                j + 1,
                *kappa
            )));
        }
        if numeric_rank(c, rank_tol()) != 1 {
            return Err(ConvintError::InvalidConfig(format!(
                "leg not rank-one: C_{}",
                j + 1
            )));
        }
        closure += c;
    }
    let scale = legs
        .iter()
        .map(|(c, _)| frob(c))
        .fold(T::zero(), |a, b| if b > a { b } else { a });
    if frob(&closure) > closure_tol::<T>() * (T::one() + scale) {
        return Err(ConvintError::InvalidConfig(format!(
            "legs do not close: |sum C_j| = {:e}",
            frob(&closure)
        )));
    }

    let mut anchors = Vec::with_capacity(n);
    let mut corners = Vec::with_capacity(n);
    let mut p = base.clone();
    for (c, kappa) in &legs {
        anchors.push(p.clone());
        corners.push(&p + c * *kappa);
        p += c;
    }
    Ok(TnConfig {
        base,
        legs,
        corners,
        anchors,
        structured,
    })
}

/// Convex coefficients `nu^j` with `P_j = sum_i nu_i^j X_i`, `sum nu_i^j = 1`.
///
/// The closed form is stated for `j = 1`; general `j` applies it to the
/// cyclically relabeled configuration starting at leg `j`.
pub fn convex_coeffs<T: Real>(cfg: &TnConfig<T>, j: usize) -> Result<DVector<T>> {
    let n = cfg.len();
    if j == 0 || j > n {
        return Err(ConvintError::pre(format!("anchor index {j} out of 1..={n}")));
    }
    let lambdas = cfg.lambdas();
    let j0 = j - 1;
    // Relabeled lambda'_k = lambda_{(j0 + k) mod N}, k = 0..N-1.
    let rel: Vec<T> = (0..n).map(|k| lambdas[(j0 + k) % n]).collect();
    let mu = rel.iter().fold(T::one(), |a, &b| a * b);
    let denom = T::one() - mu;
    if denom <= T::zero() {
        return Err(ConvintError::Degenerate("mu >= 1 in convex coefficients".into()));
    }
    let mut nu = DVector::zeros(n);
    for k in 0..n {
        // Coefficient on the relabeled corner k: (1 - l_k) l_{k+1} ... l_{N-1} / (1 - mu),
        // with the empty product for k = N-1.
        let tail = rel[k + 1..].iter().fold(T::one(), |a, &b| a * b);
        let coeff = (T::one() - rel[k]) * tail / denom;
        nu[(j0 + k) % n] = coeff;
    }
    Ok(nu)
}

/// Frobenius distance from `x` to the closed segment union `union_j [X_j, P_j]`.
pub fn dist_to_segments<T: Real>(cfg: &TnConfig<T>, x: &DMatrix<T>) -> Result<T> {
    if (x.nrows(), x.ncols()) != (cfg.base.nrows(), cfg.base.ncols()) {
        return Err(ConvintError::dim(
            "dist_to_segments",
            format!("{}x{}", cfg.base.nrows(), cfg.base.ncols()),
            format!("{}x{}", x.nrows(), x.ncols()),
        ));
    }
    let mut best = T::max_value().unwrap_or_else(|| real(f64::MAX));
    for j in 0..cfg.len() {
        let d = dist_to_segment(x, &cfg.corners[j], &cfg.anchors[j]).0;
        if d < best {
            best = d;
        }
    }
    Ok(best)
}

/// Distance from `x` to the segment `[a, b]` plus the optimal parameter
/// (`0` at `a`, `1` at `b`).
pub fn dist_to_segment<T: Real>(x: &DMatrix<T>, a: &DMatrix<T>, b: &DMatrix<T>) -> (T, T) {
    let dir = b - a;
    let den = dir.iter().fold(T::zero(), |acc, &v| acc + v * v);
    if den == T::zero() {
        return (frob(&(x - a)), T::zero());
    }
    let num = (x - a)
        .iter()
        .zip(dir.iter())
        .fold(T::zero(), |acc, (&u, &v)| acc + u * v);
    let mut t = num / den;
    if t < T::zero() {
        t = T::zero();
    }
    if t > T::one() {
        t = T::one();
    }
    let proj = a + &dir * t;
    (frob(&(x - proj)), t)
}

/// Same base and legs with strictly smaller factors `1 < kappa'_j < kappa_j`.
pub fn shrink<T: Real>(cfg: &TnConfig<T>, kappa_new: &[T]) -> Result<TnConfig<T>> {
    if kappa_new.len() != cfg.len() {
        return Err(ConvintError::dim("kappa'", cfg.len(), kappa_new.len()));
    }
    for (j, &knew) in kappa_new.iter().enumerate() {
        let kold = cfg.legs[j].1;
        if knew <= T::one() || knew >= kold {
            return Err(ConvintError::pre(format!(
                "kappa'_{} must lie in (1, kappa_{}) = (1, {:e}), got {:e}",
                j + 1,
                j + 1,
                kold,
                knew
            )));
        }
    }
    let legs = cfg
        .legs
        .iter()
        .zip(kappa_new)
        .map(|((c, _), &k)| (c.clone(), k))
        .collect();
    build_tn_shaped(cfg.base.clone(), legs, cfg.structured)
}

/// Per-leg admissibility report.
#[derive(Debug, Clone)]
pub struct LegReport<T: Real> {
    pub leg: usize,
    pub data: Option<AdmissibleRankOne<T>>,
    /// Frobenius error of the rank-one refactorization.
    pub factor_residual: T,
    /// Largest `|beta^i . alpha|`.
    pub orthogonality: T,
    pub admissible: bool,
    pub note: Option<String>,
}

/// Result of [`admissible_check`].
#[derive(Debug, Clone)]
pub struct AdmissibleReport<T: Real> {
    pub admissible: bool,
    pub legs: Vec<LegReport<T>>,
}

/// Recovers `(p, alpha, s, (beta^i))` from a structured rank-one block matrix.
///
/// Gauge: `|alpha| = 1` with the first nonzero entry of `alpha` positive.
pub fn factor_admissible<T: Real>(
    dense: &DMatrix<T>,
    dims: Dims,
    tol: T,
) -> (Option<AdmissibleRankOne<T>>, T, T, Option<String>) {
    let svd = dense.clone().svd(true, true);
    let (u, vt, sv) = (
        svd.u.as_ref().expect("svd u"),
        svd.v_t.as_ref().expect("svd vt"),
        &svd.singular_values,
    );
    let s0 = sv[0];
    let mut residual = T::zero();
    for k in 1..sv.len() {
        residual += sv[k] * sv[k];
    }
    let residual = residual.sqrt();
    if s0 == T::zero() {
        return (None, T::zero(), T::zero(), Some("zero leg".into()));
    }
    // dense ~ s0 * u0 * v0^T with v0 = (alpha_raw, s_raw).
    let v0: Vec<T> = (0..dims.cols()).map(|c| vt[(0, c)]).collect();
    let alpha_raw = DVector::from_fn(dims.n, |i, _| v0[i]);
    let s_raw = v0[dims.n];
    let an = alpha_raw.norm();
    if an <= tol {
        return (
            None,
            residual,
            T::zero(),
            Some("alpha = 0 (time-like rank-one direction)".into()),
        );
    }
    // Sign fix: first entry of alpha with |.| > tol becomes positive.
    let mut sign = T::one();
    for i in 0..dims.n {
        if alpha_raw[i].abs() > tol {
            if alpha_raw[i] < T::zero() {
                sign = -T::one();
            }
            break;
        }
    }
    let alpha = &alpha_raw * (sign / an);
    let s = s_raw * sign / an;
    let w_scale = s0 * an * sign;
    let p = DVector::from_fn(dims.m, |i, _| u[(i, 0)] * w_scale);
    let beta: Vec<DVector<T>> = (0..dims.m)
        .map(|i| DVector::from_fn(dims.n, |r, _| u[(dims.m + i * dims.n + r, 0)] * w_scale))
        .collect();
    let data = AdmissibleRankOne { p, alpha, s, beta };
    let orth = data.orthogonality_defect();
    (Some(data), residual, orth, None)
}

/// Checks that every leg of a structured configuration has the admissible
/// rank-one form, returning recovered leg data.
pub fn admissible_check<T: Real>(cfg: &TnConfig<T>) -> Result<AdmissibleReport<T>> {
    let dims = cfg.structured.ok_or_else(|| {
        ConvintError::dim(
            "admissible_check",
            "structured (m+nm)x(n+1) configuration",
            "unstructured",
        )
    })?;
    let tol = real::<T>(1e-8);
    let mut legs = Vec::with_capacity(cfg.len());
    let mut all = true;
    for j in 0..cfg.len() {
        let scale = T::one() + frob(&cfg.legs[j].0);
        let (data, factor_residual, orthogonality, note) =
            factor_admissible(&cfg.legs[j].0, dims, tol);
        let admissible =
            data.is_some() && factor_residual <= tol * scale && orthogonality <= tol * scale;
        all &= admissible;
        legs.push(LegReport {
            leg: j + 1,
            data,
            factor_residual,
            orthogonality,
            admissible,
            note,
        });
    }
    Ok(AdmissibleReport { admissible: all, legs })
}

/// The scaling family: zeroed off-diagonal base blocks and legs
/// `[[p (x) alpha, s s_j p], [(1/s)(beta^i (x) alpha), (s_j beta^i)]]`.
///
/// The diagonal projection of every corner and anchor is unchanged.
pub fn scale_family<T: Real>(cfg: &TnConfig<T>, s: T) -> Result<TnConfig<T>> {
    if s == T::zero() {
        return Err(ConvintError::pre("scale factor s must be nonzero"));
    }
    let dims = cfg
        .structured
        .ok_or_else(|| ConvintError::dim("scale_family", "structured configuration", "unstructured"))?;
    let report = admissible_check(cfg)?;
    if !report.admissible {
        return Err(ConvintError::InvalidConfig(
            "scale_family requires an admissible configuration".into(),
        ));
    }
    let base_block = BlockMatrix::from_dense(dims, &cfg.base)?;
    let new_base = block_compose(
        base_block.a.clone(),
        DVector::zeros(dims.m),
        vec![DMatrix::zeros(dims.n, dims.n); dims.m],
        base_block.b_t.clone(),
    )?;
    let mut legs = Vec::with_capacity(cfg.len());
    for (j, leg) in report.legs.iter().enumerate() {
        let d = leg.data.as_ref().expect("admissible leg data");
        let a = &d.p * d.alpha.transpose();
        let a_t = &d.p * (s * d.s);
        let b: Vec<_> = d
            .beta
            .iter()
            .map(|bi| (bi * d.alpha.transpose()) * (T::one() / s))
            .collect();
        let b_t: Vec<_> = d.beta.iter().map(|bi| bi * d.s).collect();
        let c = block_compose(a, a_t, b, b_t)?.to_dense();
        legs.push((c, cfg.legs[j].1));
    }
    build_tn_shaped(new_base.to_dense(), legs, Some(dims))
}

/// The classical four-point configuration of diagonal 2x2 matrices with no
/// rank-one connections, together with its corner set.
pub fn tartar_fixture<T: Real>() -> (Vec<DMatrix<T>>, TnConfig<T>) {
    let diag = |a: f64, b: f64| {
        DMatrix::from_row_slice(2, 2, &[real::<T>(a), T::zero(), T::zero(), real::<T>(b)])
    };
    let base = diag(-1.0, -1.0);
    let two = real::<T>(2.0);
    let legs = vec![
        (diag(1.0, 0.0), two),
        (diag(0.0, 1.0), two),
        (diag(-1.0, 0.0), two),
        (diag(0.0, -1.0), two),
    ];
    let cfg = build_tn(base, legs).expect("fixture is a valid configuration");
    (cfg.corners.clone(), cfg)
}
