//! Material laws: pointwise quadratic forms `Q(x, G) = L(x) G . G` with
//! coercivity bounds, finite-strain densities `W(x, F)` carrying those
//! quadratic forms as their expansion at the identity, and randomized
//! admissibility checks for the axioms the laws must satisfy.
//!
//! Conventions. The quadratic form is normalized as the stress-strain
//! product: an isotropic law has `Q(G) = 2 mu |sym G|^2 + lambda tr^2(sym G)`,
//! so the pointwise uniaxial relaxation `min_{s,t} Q(diag(1,s,t))` equals
//! the Young modulus `E = mu (3 lambda + 2 mu) / (lambda + mu)` and the
//! torsion coefficient is the shear modulus `mu` itself. The matching
//! finite-strain density is the Saint-Venant-Kirchhoff form scaled to that
//! normalization, `W(F) = (mu/2) |F^T F - I|^2 + (lambda/4) tr^2(F^T F - I)`.
//!
//! A family of laws in the thickness parameter arises by rescaling the
//! spatial arguments (for instance choosing the laminate period as a
//! function of the thickness); the laws themselves carry no thickness.
//! Composite laws are piecewise continuous in the position, which is
//! what the elementwise quadrature assumes.
//!
//! The nondegeneracy bound `W >= eta1 dist^2(F, SO(3))` is checked on
//! orientation-preserving arguments (`det F > 0`): a Kirchhoff-type density
//! sees only `F^T F` and therefore vanishes on reflections, where no
//! positive constant can work. On `det F > 0` the stored
//! `eta1 = mu / 2` is a proven global bound.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{Matrix3, SMatrix, SVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub type Tensor6 = SMatrix<f64, 6, 6>;
pub type Mandel6 = SVector<f64, 6>;

/// Radius of the well on which the upper nondegeneracy bound is certified.
pub const EXPANSION_WELL: f64 = 0.04;

/// Mandel vector of the symmetric part of `g`:
/// `[G11, G22, G33, sqrt2 G23, sqrt2 G13, sqrt2 G12]`.
/// Preserves the Frobenius inner product on symmetric matrices.
pub fn mandel(g: &Matrix3<f64>) -> Mandel6 {
    let s = 0.5 * (g + g.transpose());
    let r = std::f64::consts::SQRT_2;
    Mandel6::from([
        s[(0, 0)],
        s[(1, 1)],
        s[(2, 2)],
        r * s[(1, 2)],
        r * s[(0, 2)],
        r * s[(0, 1)],
    ])
}

pub fn unmandel(v: &Mandel6) -> Matrix3<f64> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    Matrix3::new(
        v[0],
        r * v[5],
        r * v[4],
        r * v[5],
        v[1],
        r * v[3],
        r * v[4],
        r * v[3],
        v[2],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X1,
    X2,
    X3,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X1 => 0,
            Axis::X2 => 1,
            Axis::X3 => 2,
        }
    }

    pub fn parse(s: &str) -> Option<Axis> {
        match s {
            "x1" => Some(Axis::X1),
            "x2" => Some(Axis::X2),
            "x3" => Some(Axis::X3),
            _ => None,
        }
    }
}

/// Pointwise quadratic form `Q(x, G) = L(x) G . G` acting on the symmetric
/// part of `G`, with coercivity constants `eta1 |sym G|^2 <= Q <= eta2 |sym G|^2`.
#[derive(Debug, Clone)]
pub enum QuadraticLaw {
    Isotropic {
        lambda: f64,
        mu: f64,
    },
    /// Two-phase layering: phase a where `frac(x_axis / period) < fraction`.
    Laminate {
        phase_a: Box<QuadraticLaw>,
        phase_b: Box<QuadraticLaw>,
        axis: Axis,
        period: f64,
        fraction: f64,
    },
    /// Two-phase checkerboard in the `(x2, x3)` plane with square cells.
    Checkerboard {
        phase_a: Box<QuadraticLaw>,
        phase_b: Box<QuadraticLaw>,
        period: f64,
    },
}

impl QuadraticLaw {
    pub fn isotropic(lambda: f64, mu: f64) -> Result<Self> {
        check_lame(lambda, mu)?;
        Ok(QuadraticLaw::Isotropic { lambda, mu })
    }

    pub fn laminate(
        phase_a: QuadraticLaw,
        phase_b: QuadraticLaw,
        axis: Axis,
        period: f64,
        fraction: f64,
    ) -> Result<Self> {
        if !(period > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "laminate period must be positive, got {period}"
            )));
        }
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "volume fraction must lie in (0,1), got {fraction}"
            )));
        }
        Ok(QuadraticLaw::Laminate {
            phase_a: Box::new(phase_a),
            phase_b: Box::new(phase_b),
            axis,
            period,
            fraction,
        })
    }

    pub fn checkerboard(phase_a: QuadraticLaw, phase_b: QuadraticLaw, period: f64) -> Result<Self> {
        if !(period > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "checkerboard period must be positive, got {period}"
            )));
        }
        Ok(QuadraticLaw::Checkerboard {
            phase_a: Box::new(phase_a),
            phase_b: Box::new(phase_b),
            period,
        })
    }

    /// The symmetric operator of the form at `x`, in Mandel coordinates.
    pub fn tensor(&self, x: &[f64; 3]) -> Tensor6 {
        match self.select(x) {
            &QuadraticLaw::Isotropic { lambda, mu } => {
                let mut t = Tensor6::identity() * (2.0 * mu);
                for i in 0..3 {
                    for j in 0..3 {
                        t[(i, j)] += lambda;
                    }
                }
                t
            }
            _ => unreachable!("select resolves to a leaf"),
        }
    }

    /// Resolves the phase active at `x`.
    fn select(&self, x: &[f64; 3]) -> &QuadraticLaw {
        match self {
            QuadraticLaw::Isotropic { .. } => self,
            QuadraticLaw::Laminate {
                phase_a,
                phase_b,
                axis,
                period,
                fraction,
            } => {
                let s = (x[axis.index()] / period).rem_euclid(1.0);
                if s < *fraction {
                    phase_a.select(x)
                } else {
                    phase_b.select(x)
                }
            }
            QuadraticLaw::Checkerboard {
                phase_a,
                phase_b,
                period,
            } => {
                let i = (x[1] / period).floor() as i64;
                let j = (x[2] / period).floor() as i64;
                if (i + j).rem_euclid(2) == 0 {
                    phase_a.select(x)
                } else {
                    phase_b.select(x)
                }
            }
        }
    }

    pub fn energy(&self, x: &[f64; 3], g: &Matrix3<f64>) -> f64 {
        match self.select(x) {
            &QuadraticLaw::Isotropic { lambda, mu } => {
                let s = 0.5 * (g + g.transpose());
                let tr = s.trace();
                2.0 * mu * s.norm_squared() + lambda * tr * tr
            }
            _ => unreachable!(),
        }
    }

    /// `L(x) G` as a symmetric matrix.
    pub fn apply(&self, x: &[f64; 3], g: &Matrix3<f64>) -> Matrix3<f64> {
        match self.select(x) {
            &QuadraticLaw::Isotropic { lambda, mu } => {
                let s = 0.5 * (g + g.transpose());
                2.0 * mu * s + lambda * s.trace() * Matrix3::identity()
            }
            _ => unreachable!(),
        }
    }

    /// Coercivity and boundedness constants `(eta1, eta2)` valid for the
    /// whole family, including the finite-strain bounds of the matching
    /// density (see the module docs).
    pub fn eta(&self) -> (f64, f64) {
        match self {
            &QuadraticLaw::Isotropic { lambda, mu } => {
                let rho = EXPANSION_WELL;
                let well = (2.0 + rho.sqrt()).powi(2) / 4.0;
                (
                    0.5 * mu,
                    ((2.0 * mu + 3.0 * lambda) * well).max(2.0 * mu + 3.0 * lambda),
                )
            }
            QuadraticLaw::Laminate {
                phase_a, phase_b, ..
            }
            | QuadraticLaw::Checkerboard {
                phase_a, phase_b, ..
            } => {
                let (a1, a2) = phase_a.eta();
                let (b1, b2) = phase_b.eta();
                (a1.min(b1), a2.max(b2))
            }
        }
    }

    /// Samples the tensor at a few axial stations to decide whether the
    /// law ignores `x1`.
    pub fn is_x1_independent(&self) -> bool {
        let stations = [0.0, 0.137, 0.52, 0.89];
        let probes = [[0.11, -0.23], [-0.41, 0.37], [0.29, 0.05]];
        for p in probes {
            let base = self.tensor(&[stations[0], p[0], p[1]]);
            for &s in &stations[1..] {
                if (self.tensor(&[s, p[0], p[1]]) - base).norm() > 1e-12 * (1.0 + base.norm()) {
                    return false;
                }
            }
        }
        true
    }
}

fn check_lame(lambda: f64, mu: f64) -> Result<()> {
    if !(mu > 0.0) || !mu.is_finite() || !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "need mu > 0 and lambda >= 0, got mu = {mu}, lambda = {lambda}"
        )));
    }
    Ok(())
}

/// Young modulus matching the `Q` normalization of this crate.
pub fn young_modulus(lambda: f64, mu: f64) -> f64 {
    mu * (3.0 * lambda + 2.0 * mu) / (lambda + mu)
}

type DensityFn = dyn Fn(&[f64; 3], &Matrix3<f64>) -> f64 + Send + Sync;

#[derive(Clone)]
enum Density {
    /// Kirchhoff-type density scaled to the crate's `Q` normalization.
    Kirchhoff { lambda: f64, mu: f64 },
    Custom(Arc<DensityFn>),
}

/// Finite-strain density together with its quadratic expansion at the
/// identity and the well radius on which the upper bound is certified.
#[derive(Clone)]
pub struct NonlinearLaw {
    density: Density,
    pub quadratic: QuadraticLaw,
    pub well_radius: f64,
}

impl std::fmt::Debug for NonlinearLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.density {
            Density::Kirchhoff { lambda, mu } => {
                write!(f, "NonlinearLaw::Kirchhoff {{ lambda: {lambda}, mu: {mu} }}")
            }
            Density::Custom(_) => write!(f, "NonlinearLaw::Custom"),
        }
    }
}

impl NonlinearLaw {
    /// Canonical isotropic law (see the module docs for the normalization).
    pub fn isotropic(lambda: f64, mu: f64) -> Result<Self> {
        check_lame(lambda, mu)?;
        Ok(NonlinearLaw {
            density: Density::Kirchhoff { lambda, mu },
            quadratic: QuadraticLaw::Isotropic { lambda, mu },
            well_radius: EXPANSION_WELL,
        })
    }

    /// Wraps an arbitrary density with a declared quadratic expansion;
    /// used for diagnostics and deliberately broken laws.
    pub fn with_density(
        density: impl Fn(&[f64; 3], &Matrix3<f64>) -> f64 + Send + Sync + 'static,
        quadratic: QuadraticLaw,
        well_radius: f64,
    ) -> Self {
        NonlinearLaw {
            density: Density::Custom(Arc::new(density)),
            quadratic,
            well_radius,
        }
    }

    pub fn energy(&self, x: &[f64; 3], f: &Matrix3<f64>) -> f64 {
        match &self.density {
            &Density::Kirchhoff { lambda, mu } => {
                let c = f.transpose() * f - Matrix3::identity();
                0.5 * mu * c.norm_squared() + 0.25 * lambda * c.trace() * c.trace()
            }
            Density::Custom(w) => w(x, f),
        }
    }

    pub fn eta(&self) -> (f64, f64) {
        self.quadratic.eta()
    }
}

/// Convenience constructor mirroring the library's canonical instance.
pub fn make_isotropic(lambda: f64, mu: f64) -> Result<NonlinearLaw> {
    NonlinearLaw::isotropic(lambda, mu)
}

/// Frobenius distance from `f` to the rotation group.
pub fn distance_to_rotations(f: &Matrix3<f64>) -> f64 {
    let svd = f.svd(false, false);
    let s = svd.singular_values;
    let mut d = 0.0;
    if f.determinant() >= 0.0 {
        for i in 0..3 {
            d += (s[i] - 1.0).powi(2);
        }
    } else {
        // the closest special-orthogonal matrix flips the smallest axis
        let mut v = [s[0], s[1], s[2]];
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        d = (v[0] + 1.0).powi(2) + (v[1] - 1.0).powi(2) + (v[2] - 1.0).powi(2);
    }
    d.sqrt()
}

/// One axiom verdict with the worst observed violation.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AxiomCheck {
    pub passed: bool,
    pub worst_violation: f64,
    pub tolerance: f64,
}

impl AxiomCheck {
    fn grade(worst: f64, tolerance: f64) -> Self {
        AxiomCheck {
            passed: worst <= tolerance,
            worst_violation: worst,
            tolerance,
        }
    }
}

/// Outcome of [`check_admissible`], one verdict per axiom.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AdmissibilityReport {
    pub samples: usize,
    pub frame_indifference: AxiomCheck,
    pub nondegeneracy_lower: AxiomCheck,
    pub nondegeneracy_upper: AxiomCheck,
    pub minimal_at_identity: AxiomCheck,
    pub quadratic_expansion: AxiomCheck,
}

impl AdmissibilityReport {
    pub fn all_passed(&self) -> bool {
        self.frame_indifference.passed
            && self.nondegeneracy_lower.passed
            && self.nondegeneracy_upper.passed
            && self.minimal_at_identity.passed
            && self.quadratic_expansion.passed
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let axis = nalgebra::Vector3::new(
        rng.random::<f64>() - 0.5,
        rng.random::<f64>() - 0.5,
        rng.random::<f64>() - 0.5,
    );
    let angle = rng.random::<f64>() * std::f64::consts::PI;
    nalgebra::UnitQuaternion::from_scaled_axis(axis.normalize() * angle)
        .to_rotation_matrix()
        .into_inner()
}

fn random_matrix(rng: &mut ChaCha8Rng, scale: f64) -> Matrix3<f64> {
    Matrix3::from_fn(|_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
}

/// Randomized verification of the material axioms: frame indifference,
/// two-sided nondegeneracy, zero energy at the identity, and the quadratic
/// expansion on a shrinking epsilon ladder. Failures are reported, not
/// raised.
pub fn check_admissible(law: &NonlinearLaw, samples: usize, seed: u64) -> Result<AdmissibilityReport> {
    if samples < 10 {
        return Err(Error::InvalidParameter(format!(
            "need at least 10 samples, got {samples}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (eta1, eta2) = law.eta();
    let rho = law.well_radius;

    let mut worst_frame = 0.0f64;
    let mut worst_lower = 0.0f64;
    let mut worst_upper = 0.0f64;
    let mut worst_id = 0.0f64;
    for _ in 0..samples {
        let x = [
            2.0 * rng.random::<f64>() - 1.0,
            2.0 * rng.random::<f64>() - 1.0,
            2.0 * rng.random::<f64>() - 1.0,
        ];
        worst_id = worst_id.max(law.energy(&x, &Matrix3::identity()).abs());

        // frame indifference anywhere
        let f = Matrix3::identity() + random_matrix(&mut rng, 0.8);
        let w = law.energy(&x, &f);
        let r = random_rotation(&mut rng);
        worst_frame = worst_frame.max((law.energy(&x, &(r * f)) - w).abs() / (1.0 + w.abs()));

        // lower bound on orientation-preserving arguments
        let f = loop {
            let scale = if rng.random::<bool>() { 0.3 } else { 1.0 };
            let cand = random_rotation(&mut rng) * (Matrix3::identity() + random_matrix(&mut rng, scale));
            if cand.determinant() > 1e-3 {
                break cand;
            }
        };
        let d = distance_to_rotations(&f);
        let defect = eta1 * d * d - law.energy(&x, &f);
        worst_lower = worst_lower.max(defect / (1.0 + eta1 * d * d));

        // upper bound inside the well
        let g = random_matrix(&mut rng, (rho.sqrt() * 0.5).min(0.2));
        let f = random_rotation(&mut rng) * (Matrix3::identity() + g);
        let d = distance_to_rotations(&f);
        if d * d <= rho {
            let excess = law.energy(&x, &f) - eta2 * d * d;
            worst_upper = worst_upper.max(excess / (1.0 + eta2 * d * d));
        }
    }

    // expansion ladder: |W(Id + eps G) - Q(eps G)| / eps^2 must shrink
    let ladder = [1e-2, 1e-3, 1e-4];
    let mut ratios = [0.0f64; 3];
    for _ in 0..samples.min(200) {
        let x = [0.0, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
        let g = {
            let m = random_matrix(&mut rng, 1.0);
            m / m.norm()
        };
        for (k, &eps) in ladder.iter().enumerate() {
            let w = law.energy(&x, &(Matrix3::identity() + eps * g));
            let q = law.quadratic.energy(&x, &(eps * g));
            ratios[k] = ratios[k].max((w - q).abs() / (eps * eps));
        }
    }
    let decreasing = ratios[0] >= ratios[1] && ratios[1] >= ratios[2];
    let expansion_worst = if decreasing {
        ratios[2] / (1.0 + eta2)
    } else {
        f64::INFINITY
    };

    Ok(AdmissibilityReport {
        samples,
        frame_indifference: AxiomCheck::grade(worst_frame, 1e-10),
        nondegeneracy_lower: AxiomCheck::grade(worst_lower, 1e-9),
        nondegeneracy_upper: AxiomCheck::grade(worst_upper, 1e-9),
        minimal_at_identity: AxiomCheck::grade(worst_id, 1e-12),
        quadratic_expansion: AxiomCheck::grade(expansion_worst, 1e-2),
    })
}

/// Parsed material configuration: either a full finite-strain isotropic
/// law or a composite quadratic form.
#[derive(Debug, Clone)]
pub enum MaterialConfig {
    Isotropic(NonlinearLaw),
    Composite(QuadraticLaw),
}

impl MaterialConfig {
    pub fn quadratic(&self) -> QuadraticLaw {
        match self {
            MaterialConfig::Isotropic(law) => law.quadratic.clone(),
            MaterialConfig::Composite(q) => q.clone(),
        }
    }

    pub fn nonlinear(&self) -> Option<&NonlinearLaw> {
        match self {
            MaterialConfig::Isotropic(law) => Some(law),
            MaterialConfig::Composite(_) => None,
        }
    }
}

/// Parses the key-value material format.
///
/// ```text
/// kind = isotropic          # or laminate | checkerboard
/// lambda = 1.0              # isotropic parameters
/// mu = 1.0
/// direction = x2            # laminate only
/// period = 0.25             # laminate and checkerboard
/// fraction = 0.5            # laminate only
/// [phase_a]                 # composite phases, isotropic parameters
/// lambda = 0.0
/// mu = 1.0
/// [phase_b]
/// lambda = 0.0
/// mu = 2.0
/// ```
pub fn parse_material(text: &str) -> Result<MaterialConfig> {
    #[derive(Default)]
    struct Section {
        entries: Vec<(usize, String, String)>,
    }
    let mut main = Section::default();
    let mut phase_a: Option<Section> = None;
    let mut phase_b: Option<Section> = None;
    let mut current = 0usize; // 0 main, 1 a, 2 b
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lno = idx + 1;
        if line.starts_with('[') {
            match line {
                "[phase_a]" => {
                    phase_a = Some(Section::default());
                    current = 1;
                }
                "[phase_b]" => {
                    phase_b = Some(Section::default());
                    current = 2;
                }
                other => {
                    return Err(Error::MaterialFormat {
                        line: lno,
                        message: format!("unknown section '{other}'"),
                    })
                }
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::MaterialFormat {
                line: lno,
                message: format!("expected 'key = value', got '{line}'"),
            });
        };
        let entry = (lno, key.trim().to_string(), value.trim().to_string());
        match current {
            0 => main.entries.push(entry),
            1 => phase_a.as_mut().unwrap().entries.push(entry),
            _ => phase_b.as_mut().unwrap().entries.push(entry),
        }
    }

    let find = |sec: &Section, key: &str| -> Option<(usize, String)> {
        sec.entries
            .iter()
            .find(|(_, k, _)| k == key)
            .map(|(l, _, v)| (*l, v.clone()))
    };
    let need = |sec: &Section, key: &str| -> Result<(usize, String)> {
        find(sec, key).ok_or_else(|| Error::MaterialFormat {
            line: 0,
            message: format!("missing key '{key}'"),
        })
    };
    let scalar = |pair: (usize, String)| -> Result<f64> {
        pair.1.parse().map_err(|_| Error::MaterialFormat {
            line: pair.0,
            message: format!("invalid number '{}'", pair.1),
        })
    };
    let isotropic_of = |sec: &Section| -> Result<(f64, f64)> {
        if let Some((l, v)) = find(sec, "kind") {
            if v != "isotropic" {
                return Err(Error::MaterialFormat {
                    line: l,
                    message: format!("phases must be isotropic, got '{v}'"),
                });
            }
        }
        Ok((scalar(need(sec, "lambda")?)?, scalar(need(sec, "mu")?)?))
    };

    let (kind_line, kind) = need(&main, "kind")?;
    match kind.as_str() {
        "isotropic" => {
            let (lambda, mu) = isotropic_of(&main)?;
            Ok(MaterialConfig::Isotropic(NonlinearLaw::isotropic(
                lambda, mu,
            )?))
        }
        "laminate" => {
            let (dir_line, dir) = need(&main, "direction")?;
            let axis = Axis::parse(&dir).ok_or(Error::MaterialFormat {
                line: dir_line,
                message: format!("direction must be x1|x2|x3, got '{dir}'"),
            })?;
            let period = scalar(need(&main, "period")?)?;
            let fraction = scalar(need(&main, "fraction")?)?;
            let a = phase_a.ok_or(Error::MaterialFormat {
                line: kind_line,
                message: "laminate needs a [phase_a] section".into(),
            })?;
            let b = phase_b.ok_or(Error::MaterialFormat {
                line: kind_line,
                message: "laminate needs a [phase_b] section".into(),
            })?;
            let (la, ma) = isotropic_of(&a)?;
            let (lb, mb) = isotropic_of(&b)?;
            Ok(MaterialConfig::Composite(QuadraticLaw::laminate(
                QuadraticLaw::isotropic(la, ma)?,
                QuadraticLaw::isotropic(lb, mb)?,
                axis,
                period,
                fraction,
            )?))
        }
        "checkerboard" => {
            let period = scalar(need(&main, "period")?)?;
            let a = phase_a.ok_or(Error::MaterialFormat {
                line: kind_line,
                message: "checkerboard needs a [phase_a] section".into(),
            })?;
            let b = phase_b.ok_or(Error::MaterialFormat {
                line: kind_line,
                message: "checkerboard needs a [phase_b] section".into(),
            })?;
            let (la, ma) = isotropic_of(&a)?;
            let (lb, mb) = isotropic_of(&b)?;
            Ok(MaterialConfig::Composite(QuadraticLaw::checkerboard(
                QuadraticLaw::isotropic(la, ma)?,
                QuadraticLaw::isotropic(lb, mb)?,
                period,
            )?))
        }
        other => Err(Error::MaterialFormat {
            line: kind_line,
            message: format!("unknown material kind '{other}'"),
        }),
    }
}

pub fn load_material<P: AsRef<Path>>(path: P) -> Result<MaterialConfig> {
    parse_material(&std::fs::read_to_string(path)?)
}
