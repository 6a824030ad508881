//! Hadamard-manifold geometry for the two supported spaces: the Poincaré
//! disk with curvature −1 and the SPD(d) cone under the affine-invariant
//! metric. Distances, geodesic interpolation, translation isometries,
//! exponential/logarithm maps and Karcher means.
//!
//! All operations are pure functions of immutable values and safe to call
//! concurrently.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Points closer than this to the unit circle are rejected as invalid.
/// The hyperbolic distance blows up at the boundary; clamping would hide
/// upstream bugs.
pub const DISK_BOUNDARY_MARGIN: f64 = 1e-14;

/// Relative Frobenius tolerance for the symmetry of an SPD point.
pub const SPD_SYMMETRY_TOL: f64 = 1e-10;

/// Smallest admissible eigenvalue of an SPD point (the matrix logarithm
/// requires strict positivity).
pub const SPD_MIN_EIGENVALUE: f64 = 1e-12;

const KARCHER_TOL: f64 = 1e-9;
const KARCHER_MAX_ITER: usize = 200;

/// Which Hadamard space a point lives in. Mixing kinds in one operation is
/// an error, never a silent cast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldKind {
    PoincareDisk,
    Spd(usize),
}

impl ManifoldKind {
    /// The reference point moved around by [`translate_to`]: 0 on the disk,
    /// the identity matrix on SPD(d).
    pub fn origin(&self) -> ManifoldPoint {
        match self {
            ManifoldKind::PoincareDisk => ManifoldPoint::Disk(Complex64::new(0.0, 0.0)),
            ManifoldKind::Spd(d) => ManifoldPoint::Spd(DMatrix::identity(*d, *d)),
        }
    }
}

impl fmt::Display for ManifoldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ManifoldKind::PoincareDisk => write!(f, "poincare_disk"),
            ManifoldKind::Spd(d) => write!(f, "spd({d})"),
        }
    }
}

/// A validated point of one of the supported manifolds.
///
/// Construct through [`ManifoldPoint::disk`] or [`ManifoldPoint::spd`];
/// both enforce the validity invariants (strictly inside the unit disk,
/// resp. symmetric positive definite).
#[derive(Debug, Clone, PartialEq)]
pub enum ManifoldPoint {
    Disk(Complex64),
    Spd(DMatrix<f64>),
}

impl ManifoldPoint {
    pub fn disk(re: f64, im: f64) -> Result<Self> {
        let z = Complex64::new(re, im);
        if !re.is_finite() || !im.is_finite() {
            return Err(Error::InvalidPoint(format!(
                "disk point ({re}, {im}) has non-finite coordinates"
            )));
        }
        if z.norm() >= 1.0 - DISK_BOUNDARY_MARGIN {
            return Err(Error::InvalidPoint(format!(
                "disk point ({re}, {im}) lies on or within {DISK_BOUNDARY_MARGIN} of the unit circle"
            )));
        }
        Ok(ManifoldPoint::Disk(z))
    }

    /// Validates symmetry (relative Frobenius deviation below
    /// [`SPD_SYMMETRY_TOL`]) and positive definiteness, then stores the
    /// symmetrized matrix.
    pub fn spd(mat: DMatrix<f64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() || mat.nrows() == 0 {
            return Err(Error::InvalidPoint(format!(
                "SPD point must be square and non-empty, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        if mat.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidPoint(
                "SPD point has non-finite entries".into(),
            ));
        }
        let asym = (&mat - mat.transpose()).norm();
        let scale = mat.norm().max(1.0);
        if asym > SPD_SYMMETRY_TOL * scale {
            return Err(Error::InvalidPoint(format!(
                "matrix is not symmetric (relative deviation {:.3e})",
                asym / scale
            )));
        }
        let sym = (&mat + mat.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigenvalues();
        let min_eig = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_eig <= SPD_MIN_EIGENVALUE {
            return Err(Error::InvalidPoint(format!(
                "matrix is not positive definite (smallest eigenvalue {min_eig:.3e})"
            )));
        }
        Ok(ManifoldPoint::Spd(sym))
    }

    pub fn kind(&self) -> ManifoldKind {
        match self {
            ManifoldPoint::Disk(_) => ManifoldKind::PoincareDisk,
            ManifoldPoint::Spd(m) => ManifoldKind::Spd(m.nrows()),
        }
    }

    /// Flat coordinate view: `[re, im]` for disk points, row-major entries
    /// for SPD points.
    pub fn coords(&self) -> Vec<f64> {
        match self {
            ManifoldPoint::Disk(z) => vec![z.re, z.im],
            ManifoldPoint::Spd(m) => m.transpose().iter().cloned().collect(),
        }
    }

    #[cfg(test)]
    pub(crate) fn as_disk(&self) -> Result<Complex64> {
        match self {
            ManifoldPoint::Disk(z) => Ok(*z),
            ManifoldPoint::Spd(_) => Err(Error::KindMismatch {
                expected: ManifoldKind::PoincareDisk,
                found: self.kind(),
            }),
        }
    }
}

// Disk points serialize as `[re, im]`, SPD points as row-major arrays of
// rows; this is the wire format used by every file the crate reads/writes.
impl Serialize for ManifoldPoint {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ManifoldPoint::Disk(z) => [z.re, z.im].serialize(serializer),
            ManifoldPoint::Spd(m) => {
                let rows: Vec<Vec<f64>> = (0..m.nrows())
                    .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
                    .collect();
                rows.serialize(serializer)
            }
        }
    }
}

impl<'de> Deserialize<'de> for ManifoldPoint {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Disk([f64; 2]),
            Spd(Vec<Vec<f64>>),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Disk([re, im]) => ManifoldPoint::disk(re, im).map_err(D::Error::custom),
            Repr::Spd(rows) => {
                let n = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(D::Error::custom("SPD point rows have unequal lengths"));
                }
                let mat = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
                ManifoldPoint::spd(mat).map_err(D::Error::custom)
            }
        }
    }
}

/// A tangent vector, represented in the convention where the norm returned
/// by [`tangent_norm`] equals the geodesic distance reached by [`exp_map`].
#[derive(Debug, Clone)]
pub enum Tangent {
    Disk(Complex64),
    Spd(DMatrix<f64>),
}

fn check_same_kind(x: &ManifoldPoint, y: &ManifoldPoint) -> Result<()> {
    if x.kind() != y.kind() {
        return Err(Error::KindMismatch {
            expected: x.kind(),
            found: y.kind(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// SPD spectral helpers
// ---------------------------------------------------------------------------

fn sym_eigen(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let eig = m.clone().symmetric_eigen();
    (eig.eigenvectors, eig.eigenvalues)
}

/// Q f(Λ) Qᵀ for a symmetric matrix, re-symmetrized against rounding.
fn spd_spectral_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let (q, lambda) = sym_eigen(m);
    let d = DMatrix::from_diagonal(&lambda.map(f));
    let out = &q * d * q.transpose();
    (&out + out.transpose()) * 0.5
}

fn spd_log_checked(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let (q, lambda) = sym_eigen(m);
    if lambda.iter().any(|&l| l <= 0.0 || !l.is_finite()) {
        return Err(Error::InvalidPoint(format!(
            "{what}: spectrum left the positive cone"
        )));
    }
    let d = DMatrix::from_diagonal(&lambda.map(f64::ln));
    let out = &q * d * q.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

fn spd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    spd_spectral_map(m, f64::sqrt)
}

fn spd_inv_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    spd_spectral_map(m, |l| 1.0 / l.sqrt())
}

// ---------------------------------------------------------------------------
// Distances
// ---------------------------------------------------------------------------

/// Riemannian distance between two points of the same manifold.
///
/// Disk: the curvature −1 hyperbolic distance, evaluated in the
/// Möbius-invariant form `2·atanh |(x−y)/(1−ȳx)|`, which agrees with the
/// acosh form but stays accurate for nearby points. SPD: the
/// affine-invariant distance `sqrt(tr log²(x⁻¹y))` via the symmetric
/// eigendecomposition of `x^{-1/2} y x^{-1/2}`.
pub fn distance(x: &ManifoldPoint, y: &ManifoldPoint) -> Result<f64> {
    check_same_kind(x, y)?;
    match (x, y) {
        (ManifoldPoint::Disk(a), ManifoldPoint::Disk(b)) => {
            let num = (a - b).norm();
            let den = (Complex64::new(1.0, 0.0) - b.conj() * a).norm();
            Ok(2.0 * (num / den).atanh())
        }
        (ManifoldPoint::Spd(p), ManifoldPoint::Spd(q)) => {
            let is = spd_inv_sqrt(p);
            let inner = &is * q * &is;
            let inner = (&inner + inner.transpose()) * 0.5;
            let (_, lambda) = sym_eigen(&inner);
            let mut sum = 0.0;
            for &l in lambda.iter() {
                if l <= 0.0 || !l.is_finite() {
                    return Err(Error::InvalidPoint(
                        "distance: x^{-1/2} y x^{-1/2} left the positive cone".into(),
                    ));
                }
                let ll = l.ln();
                sum += ll * ll;
            }
            Ok(sum.sqrt())
        }
        _ => unreachable!("kind checked above"),
    }
}

/// Squared distance, the quantity the Gaussian density and δ updates use.
pub fn squared_distance(x: &ManifoldPoint, y: &ManifoldPoint) -> Result<f64> {
    distance(x, y).map(|d| d * d)
}

// ---------------------------------------------------------------------------
// Geodesics
// ---------------------------------------------------------------------------

/// The point `x #_τ z` a fraction `tau` along the unique geodesic from `x`
/// to `z`, so that `d(x, x#_τz) = τ·d(x, z)`.
///
/// On SPD(d) this is `x^{1/2} (x^{-1/2} z x^{-1/2})^τ x^{1/2}`; on the disk
/// the segment is mapped to a radial ray through the Möbius translation
/// that carries `x` to the origin.
pub fn geodesic_point(x: &ManifoldPoint, z: &ManifoldPoint, tau: f64) -> Result<ManifoldPoint> {
    check_same_kind(x, z)?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!(
            "geodesic parameter tau={tau} outside [0, 1]"
        )));
    }
    if tau == 0.0 {
        return Ok(x.clone());
    }
    if tau == 1.0 {
        return Ok(z.clone());
    }
    match (x, z) {
        (ManifoldPoint::Disk(a), ManifoldPoint::Disk(b)) => {
            let w = mobius_sub(*b, *a);
            let r = w.norm();
            if r == 0.0 {
                return Ok(x.clone());
            }
            let u = w / r * (tau * r.atanh()).tanh();
            disk_from_computed(mobius_add(u, *a))
        }
        (ManifoldPoint::Spd(p), ManifoldPoint::Spd(q)) => {
            let s = spd_sqrt(p);
            let is = spd_inv_sqrt(p);
            let inner = &is * q * &is;
            let inner = (&inner + inner.transpose()) * 0.5;
            let (qv, lambda) = sym_eigen(&inner);
            if lambda.iter().any(|&l| l <= 0.0 || !l.is_finite()) {
                return Err(Error::InvalidPoint(
                    "geodesic: x^{-1/2} z x^{-1/2} left the positive cone".into(),
                ));
            }
            let powed = &qv * DMatrix::from_diagonal(&lambda.map(|l| l.powf(tau))) * qv.transpose();
            let out = &s * powed * &s;
            ManifoldPoint::spd(out)
        }
        _ => unreachable!(),
    }
}

/// `(z + c) / (1 + c̄ z)` — the Möbius translation carrying 0 to c.
fn mobius_add(z: Complex64, c: Complex64) -> Complex64 {
    (z + c) / (Complex64::new(1.0, 0.0) + c.conj() * z)
}

/// `(z − c) / (1 − c̄ z)` — inverse of [`mobius_add`], carrying c to 0.
fn mobius_sub(z: Complex64, c: Complex64) -> Complex64 {
    (z - c) / (Complex64::new(1.0, 0.0) - c.conj() * z)
}

/// Wraps a disk value produced by internal arithmetic. Isometries of valid
/// points stay strictly inside the disk, so a failure here means the inputs
/// were already at the numerical edge; surface it rather than clamp.
fn disk_from_computed(z: Complex64) -> Result<ManifoldPoint> {
    ManifoldPoint::disk(z.re, z.im)
}

// ---------------------------------------------------------------------------
// Translation isometries
// ---------------------------------------------------------------------------

/// The isometry moving the origin (0, resp. I) to `c`, applied to `x`:
/// disk `(x + c)/(1 + c̄x)`, SPD `c^{1/2} x c^{1/2}`.
pub fn translate_to(c: &ManifoldPoint, x: &ManifoldPoint) -> Result<ManifoldPoint> {
    check_same_kind(c, x)?;
    match (c, x) {
        (ManifoldPoint::Disk(cc), ManifoldPoint::Disk(z)) => disk_from_computed(mobius_add(*z, *cc)),
        (ManifoldPoint::Spd(cm), ManifoldPoint::Spd(xm)) => {
            let s = spd_sqrt(cm);
            ManifoldPoint::spd(&s * xm * &s)
        }
        _ => unreachable!(),
    }
}

/// Inverse of [`translate_to`]: moves `c` back to the origin.
pub fn translate_from(c: &ManifoldPoint, x: &ManifoldPoint) -> Result<ManifoldPoint> {
    check_same_kind(c, x)?;
    match (c, x) {
        (ManifoldPoint::Disk(cc), ManifoldPoint::Disk(z)) => disk_from_computed(mobius_sub(*z, *cc)),
        (ManifoldPoint::Spd(cm), ManifoldPoint::Spd(xm)) => {
            let is = spd_inv_sqrt(cm);
            ManifoldPoint::spd(&is * xm * &is)
        }
        _ => unreachable!(),
    }
}

// ---------------------------------------------------------------------------
// Exponential / logarithm maps
// ---------------------------------------------------------------------------

/// Tangent vector at `base` pointing to `target`, with norm equal to
/// `distance(base, target)`.
pub fn log_map(base: &ManifoldPoint, target: &ManifoldPoint) -> Result<Tangent> {
    check_same_kind(base, target)?;
    match (base, target) {
        (ManifoldPoint::Disk(a), ManifoldPoint::Disk(b)) => {
            let w = mobius_sub(*b, *a);
            let r = w.norm();
            if r == 0.0 {
                return Ok(Tangent::Disk(Complex64::new(0.0, 0.0)));
            }
            Ok(Tangent::Disk(w / r * (2.0 * r.atanh())))
        }
        (ManifoldPoint::Spd(p), ManifoldPoint::Spd(q)) => {
            let s = spd_sqrt(p);
            let is = spd_inv_sqrt(p);
            let inner = &is * q * &is;
            let inner = (&inner + inner.transpose()) * 0.5;
            let lg = spd_log_checked(&inner, "log_map")?;
            Ok(Tangent::Spd(&s * lg * &s))
        }
        _ => unreachable!(),
    }
}

/// Geodesic shooting: the point reached from `base` along `v`, at distance
/// `tangent_norm(base, v)`.
pub fn exp_map(base: &ManifoldPoint, v: &Tangent) -> Result<ManifoldPoint> {
    match (base, v) {
        (ManifoldPoint::Disk(a), Tangent::Disk(t)) => {
            let r = t.norm();
            if r == 0.0 {
                return Ok(base.clone());
            }
            let u = t / r * (r / 2.0).tanh();
            disk_from_computed(mobius_add(u, *a))
        }
        (ManifoldPoint::Spd(p), Tangent::Spd(t)) => {
            let s = spd_sqrt(p);
            let is = spd_inv_sqrt(p);
            let inner = &is * t * &is;
            let inner = (&inner + inner.transpose()) * 0.5;
            let e = spd_spectral_map(&inner, f64::exp);
            ManifoldPoint::spd(&s * e * &s)
        }
        _ => Err(Error::KindMismatch {
            expected: base.kind(),
            found: match v {
                Tangent::Disk(_) => ManifoldKind::PoincareDisk,
                Tangent::Spd(m) => ManifoldKind::Spd(m.nrows()),
            },
        }),
    }
}

/// Riemannian norm of a tangent vector at `base`.
pub fn tangent_norm(base: &ManifoldPoint, v: &Tangent) -> Result<f64> {
    match (base, v) {
        (ManifoldPoint::Disk(_), Tangent::Disk(t)) => Ok(t.norm()),
        (ManifoldPoint::Spd(p), Tangent::Spd(t)) => {
            let is = spd_inv_sqrt(p);
            Ok((&is * t * &is).norm())
        }
        _ => Err(Error::InvalidArgument(
            "tangent vector kind does not match base point".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// Karcher mean
// ---------------------------------------------------------------------------

/// Weighted Riemannian center of mass: the minimizer of Σ wᵢ d²(m, xᵢ).
///
/// Solved by gradient descent m ← exp_m(t · Σ wᵢ log_m(xᵢ)) to gradient
/// norm below 1e-9, at most 200 iterations. The step is t = 1/L with
/// L = Σ wᵢ dᵢ coth dᵢ, the comparison-theorem bound on the Hessian of
/// the objective for curvature ≥ −1: on spread-out hyperbolic clusters
/// the Hessian exceeds 2, so the plain fixed-point step (t = 1)
/// oscillates instead of converging; 1/L restores the monotone linear
/// rate and reduces to the fixed-point iteration on tight clusters.
pub fn karcher_mean(points: &[ManifoldPoint], weights: &[f64]) -> Result<ManifoldPoint> {
    if points.is_empty() {
        return Err(Error::InvalidArgument(
            "karcher_mean of an empty point set".into(),
        ));
    }
    if weights.len() != points.len() {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {} points",
            weights.len(),
            points.len()
        )));
    }
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument(
            "karcher_mean weights must be non-negative and finite".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "karcher_mean weights sum to {total}, expected 1"
        )));
    }
    for p in &points[1..] {
        check_same_kind(&points[0], p)?;
    }
    if points.len() == 1 {
        return Ok(points[0].clone());
    }

    let mut mean = points[0].clone();
    for _ in 0..KARCHER_MAX_ITER {
        let mut step = match mean {
            ManifoldPoint::Disk(_) => Tangent::Disk(Complex64::new(0.0, 0.0)),
            ManifoldPoint::Spd(ref m) => Tangent::Spd(DMatrix::zeros(m.nrows(), m.ncols())),
        };
        let mut hessian_bound = 0.0;
        for (p, &w) in points.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            let v = log_map(&mean, p)?;
            let d = tangent_norm(&mean, &v)?;
            hessian_bound += w * if d > 1e-9 { d / d.tanh() } else { 1.0 };
            match (&mut step, v) {
                (Tangent::Disk(acc), Tangent::Disk(t)) => *acc += t * w,
                (Tangent::Spd(acc), Tangent::Spd(t)) => *acc += t * w,
                _ => unreachable!(),
            }
        }
        if tangent_norm(&mean, &step)? < KARCHER_TOL {
            return Ok(mean);
        }
        let t = 1.0 / hessian_bound.max(1.0);
        match &mut step {
            Tangent::Disk(v) => *v *= t,
            Tangent::Spd(v) => *v *= t,
        }
        mean = exp_map(&mean, &step)?;
    }
    Err(Error::NoConvergence {
        what: "karcher_mean",
        iterations: KARCHER_MAX_ITER,
    })
}

/// Unweighted Karcher mean.
pub fn karcher_mean_uniform(points: &[ManifoldPoint]) -> Result<ManifoldPoint> {
    let w = vec![1.0 / points.len().max(1) as f64; points.len()];
    karcher_mean(points, &w)
}
