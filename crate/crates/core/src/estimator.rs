//! Robust L2E estimation of the reflection plane from keypoint
//! correspondences: alternating Riemannian quasi-Newton on the unit sphere
//! for the normal and scalar quasi-Newton for the offset, with a robust
//! Grassmann-average initialization, an MLE baseline, and a brute-force
//! grid maximizer used as an oracle.

use nalgebra::{Matrix3, Vector3};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::plane::{CorrespondenceSet, SymmetryPlane};

pub const RGA_DEFAULT_TRIM: f64 = 0.4;

/// Per-pair sufficient statistics: C_i = x_i x_{π(i)}ᵀ, the midpoint m_i,
/// and the squared gap d_i.
#[derive(Debug, Clone)]
pub struct PairStatistics {
    x: Vec<Vector3<f64>>,
    y: Vec<Vector3<f64>>,
    c: Vec<Matrix3<f64>>,
    m: Vec<Vector3<f64>>,
    d: Vec<f64>,
}

impl PairStatistics {
    pub fn from_point_pairs(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidParameter("no correspondence pairs".into()));
        }
        let mut s = PairStatistics {
            x: Vec::with_capacity(pairs.len()),
            y: Vec::with_capacity(pairs.len()),
            c: Vec::with_capacity(pairs.len()),
            m: Vec::with_capacity(pairs.len()),
            d: Vec::with_capacity(pairs.len()),
        };
        for (i, &(x, y)) in pairs.iter().enumerate() {
            if !(x.iter().all(|v| v.is_finite()) && y.iter().all(|v| v.is_finite())) {
                return Err(Error::NonFinite(i));
            }
            s.c.push(x * y.transpose());
            s.m.push((x + y) / 2.0);
            s.d.push((x - y).norm_squared());
            s.x.push(x);
            s.y.push(y);
        }
        Ok(s)
    }

    pub fn from_correspondences(p: &PointCloud, corrs: &CorrespondenceSet) -> Result<Self> {
        corrs.validate_against(p.len())?;
        let pairs: Vec<_> = corrs
            .pairs()
            .iter()
            .map(|&(i, j)| (p.points()[i], p.points()[j]))
            .collect();
        Self::from_point_pairs(&pairs)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn midpoints(&self) -> &[Vector3<f64>] {
        &self.m
    }

    pub fn point_pair(&self, i: usize) -> (Vector3<f64>, Vector3<f64>) {
        (self.x[i], self.y[i])
    }
}

/// Annealing schedule for the kernel bandwidth: σ_t = max(floor,
/// start · decayᵗ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub start: f64,
    pub decay: f64,
    pub floor: f64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule { start: 0.2, decay: 0.7, floor: 0.02 }
    }
}

impl AnnealSchedule {
    fn sigma_at(&self, t: usize) -> f64 {
        (self.start * self.decay.powi(t as i32)).max(self.floor)
    }
}

#[derive(Debug, Clone)]
pub struct EstimatorParams {
    pub sigma: f64,
    pub anneal: Option<AnnealSchedule>,
    pub outer_max: usize,
    pub tol_angle: f64,
    pub tol_omega: f64,
    pub seed: u64,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        EstimatorParams {
            sigma: 0.05,
            anneal: None,
            outer_max: 50,
            tol_angle: 1e-4,
            tol_omega: 1e-6,
            seed: 0,
        }
    }
}

impl EstimatorParams {
    fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidParameter(format!("sigma = {}", self.sigma)));
        }
        if let Some(a) = &self.anneal {
            if !(a.start > 0.0 && a.floor > 0.0 && a.decay > 0.0 && a.decay < 1.0) {
                return Err(Error::InvalidParameter(format!("anneal = {a:?}")));
            }
        }
        if !(self.tol_angle > 0.0 && self.tol_omega > 0.0) || self.outer_max == 0 {
            return Err(Error::InvalidParameter("tolerances/outer_max".into()));
        }
        Ok(())
    }

    fn sigma_at(&self, t: usize) -> f64 {
        match &self.anneal {
            Some(a) => a.sigma_at(t),
            None => self.sigma,
        }
    }
}

/// Iteration caps shared by the two inner solvers.
#[derive(Debug, Clone, Copy)]
pub struct SolverCaps {
    pub max_iters: usize,
    pub max_halvings: usize,
}

impl Default for SolverCaps {
    fn default() -> Self {
        SolverCaps { max_iters: 200, max_halvings: 50 }
    }
}

#[derive(Debug, Clone)]
pub struct EstimateDiagnostics {
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
    pub grad_norm_v: f64,
    pub grad_omega: f64,
    pub init_vector: Vector3<f64>,
    pub residual_norms: Vec<f64>,
    pub converged: bool,
    pub line_search_failures: usize,
    pub sigma_final: f64,
}

impl EstimateDiagnostics {
    /// Structured text report, stable across runs for fixed inputs.
    pub fn report(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("iterations = {}\n", self.iterations));
        s.push_str(&format!("converged = {}\n", self.converged));
        s.push_str(&format!("sigma-final = {}\n", self.sigma_final));
        s.push_str(&format!(
            "init-vector = {} {} {}\n",
            self.init_vector.x, self.init_vector.y, self.init_vector.z
        ));
        s.push_str(&format!("grad-norm-v = {}\n", self.grad_norm_v));
        s.push_str(&format!("grad-omega = {}\n", self.grad_omega));
        s.push_str(&format!("line-search-failures = {}\n", self.line_search_failures));
        let trace = self
            .objective_trace
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        s.push_str(&format!("objective-trace = {trace}\n"));
        let res = self
            .residual_norms
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        s.push_str(&format!("residual-norms = {res}\n"));
        s
    }
}

/// r_i = x_{π(i)} − (I − 2vvᵀ)x_i − 2ωv: the gap between the partner point
/// and the reflection of x_i.
pub fn residual(x: Vector3<f64>, x_pi: Vector3<f64>, plane: &SymmetryPlane) -> Vector3<f64> {
    x_pi - plane.reflect_point(&x)
}

/// f_i(v, ω) = 4vᵀC_i v + d_i − 8ω vᵀm_i + 4ω², which equals ‖r_i‖².
pub fn f_component(stats: &PairStatistics, i: usize, v: &Vector3<f64>, omega: f64) -> f64 {
    4.0 * (v.transpose() * stats.c[i] * v)[0] + stats.d[i] - 8.0 * omega * v.dot(&stats.m[i])
        + 4.0 * omega * omega
}

fn gauss_norm(sigma: f64) -> f64 {
    (2.0 * std::f64::consts::PI * sigma * sigma).powf(1.5)
}

/// L2E objective f(v, ω) = 2/(n(2πσ²)^{3/2}) Σ_i exp(−f_i/(2σ²)).
pub fn l2e_objective(stats: &PairStatistics, v: &Vector3<f64>, omega: f64, sigma: f64) -> f64 {
    let n = stats.len() as f64;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut acc = 0.0;
    for i in 0..stats.len() {
        acc += (-f_component(stats, i, v, omega) * inv).exp();
    }
    2.0 * acc / (n * gauss_norm(sigma))
}

/// Ambient gradient ∇_v f = Σ_i (8ω m_i − 4(C_i + C_iᵀ)v) ·
/// exp(−f_i/(2σ²)) / (nσ²(2πσ²)^{3/2}).
pub fn euclidean_grad_v(
    stats: &PairStatistics,
    v: &Vector3<f64>,
    omega: f64,
    sigma: f64,
) -> Vector3<f64> {
    let n = stats.len() as f64;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let scale = 1.0 / (n * sigma * sigma * gauss_norm(sigma));
    let mut acc = Vector3::zeros();
    for i in 0..stats.len() {
        let w = (-f_component(stats, i, v, omega) * inv).exp();
        let term = 8.0 * omega * stats.m[i] - 4.0 * ((stats.c[i] + stats.c[i].transpose()) * v);
        acc += term * w;
    }
    acc * scale
}

/// Projection onto the tangent space of S² at v: P_v(x) = x − (xᵀv)v.
pub fn riemannian_grad_v(euclidean: &Vector3<f64>, v: &Vector3<f64>) -> Vector3<f64> {
    euclidean - v * euclidean.dot(v)
}

/// ∂f/∂ω = 4/(nσ²(2πσ²)^{3/2}) Σ_i (2vᵀm_i − 2ω) exp(−f_i/(2σ²)).
pub fn grad_omega(stats: &PairStatistics, v: &Vector3<f64>, omega: f64, sigma: f64) -> f64 {
    let n = stats.len() as f64;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let scale = 4.0 / (n * sigma * sigma * gauss_norm(sigma));
    let mut acc = 0.0;
    for i in 0..stats.len() {
        let w = (-f_component(stats, i, v, omega) * inv).exp();
        acc += (2.0 * v.dot(&stats.m[i]) - 2.0 * omega) * w;
    }
    acc * scale
}

/// Least-squares offset for a fixed normal: ω = (1/n) Σ vᵀm_i.
pub fn closed_form_omega(stats: &PairStatistics, v: &Vector3<f64>) -> f64 {
    stats.m.iter().map(|m| v.dot(m)).sum::<f64>() / stats.len() as f64
}

/// Result of the spherical ascent.
#[derive(Debug, Clone)]
pub struct SphereOutcome {
    pub v: Vector3<f64>,
    pub trace: Vec<f64>,
    pub grad_norm: f64,
    pub line_search_failed: bool,
}

const GRAD_TOL_V: f64 = 1e-10;
const GRAD_TOL_OMEGA: f64 = 1e-9;
const LBFGS_MEMORY: usize = 10;
const ARMIJO_C1: f64 = 1e-4;

/// Maximizes f(·, ω) over the unit sphere by Riemannian L-BFGS: two-loop
/// direction from projected gradients, projection transport of the stored
/// pairs, Armijo backtracking, and the retraction v ← (v + αd)/‖v + αd‖.
pub fn optimize_v(
    stats: &PairStatistics,
    v0: &Vector3<f64>,
    omega: f64,
    sigma: f64,
    caps: &SolverCaps,
) -> SphereOutcome {
    let mut v = v0.normalize();
    let mut f = l2e_objective(stats, &v, omega, sigma);
    let mut g = riemannian_grad_v(&euclidean_grad_v(stats, &v, omega, sigma), &v);
    let mut trace = vec![f];
    let mut hist: Vec<(Vector3<f64>, Vector3<f64>, f64)> = Vec::new();
    let mut line_search_failed = false;

    for _ in 0..caps.max_iters {
        if g.norm() < GRAD_TOL_V {
            break;
        }
        // Two-loop recursion on the descent problem for −f.
        let mut q = -g;
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * s.dot(&q);
            q -= y * a;
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.last() {
            let gamma = s.dot(y) / y.dot(y);
            q *= gamma;
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.into_iter().rev()) {
            let b = rho * y.dot(&q);
            q += s * (a - b);
        }
        let mut d = -q; // ascent direction for f
        d = riemannian_grad_v(&d, &v);
        if g.dot(&d) <= 0.0 {
            d = g;
        }

        let slope = g.dot(&d);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=caps.max_halvings {
            let cand = (v + d * alpha).normalize();
            let fc = l2e_objective(stats, &cand, omega, sigma);
            if fc >= f + ARMIJO_C1 * alpha * slope {
                accepted = Some((cand, fc, alpha));
                break;
            }
            alpha *= 0.5;
        }
        let Some((vn, fn_, alpha)) = accepted else {
            line_search_failed = true;
            break;
        };

        let gn = riemannian_grad_v(&euclidean_grad_v(stats, &vn, omega, sigma), &vn);
        // Transport step and gradient difference into the new tangent space.
        let transport = |u: &Vector3<f64>| riemannian_grad_v(u, &vn);
        let s = transport(&(d * alpha));
        let y = -gn + transport(&g); // difference of −f gradients
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if hist.len() == LBFGS_MEMORY {
                hist.remove(0);
            }
            hist.push((s, y, 1.0 / sy));
        } else {
            // Transport kept history only approximately; curvature failed,
            // restart the model.
            hist.clear();
        }
        v = vn;
        f = fn_;
        g = gn;
        trace.push(f);
    }

    SphereOutcome { v, trace, grad_norm: g.norm(), line_search_failed }
}

#[derive(Debug, Clone, Copy)]
pub struct ScalarOutcome {
    pub omega: f64,
    pub grad: f64,
    pub line_search_failed: bool,
}

/// Maximizes f(v, ·) over ω: secant iteration on ∂f/∂ω, each proposal
/// safeguarded by an Armijo backtracking ascent step.
pub fn optimize_omega(
    stats: &PairStatistics,
    v: &Vector3<f64>,
    omega0: f64,
    sigma: f64,
    caps: &SolverCaps,
) -> ScalarOutcome {
    let mut w = omega0;
    let mut g = grad_omega(stats, v, w, sigma);
    let mut f = l2e_objective(stats, v, w, sigma);
    let mut line_search_failed = false;
    // Previous iterate for the secant model.
    let mut prev: Option<(f64, f64)> = None;

    for _ in 0..caps.max_iters {
        if g.abs() <= GRAD_TOL_OMEGA {
            break;
        }
        let step = match prev {
            Some((pw, pg)) if (g - pg).abs() > 1e-300 => {
                let secant = -g * (w - pw) / (g - pg);
                // A secant step against the ascent direction or of silly
                // magnitude falls back to a gradient step.
                if secant * g > 0.0 && secant.abs() <= 1e3 * (sigma + w.abs()) {
                    secant
                } else {
                    g.signum() * sigma
                }
            }
            _ => g.signum() * sigma,
        };
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=caps.max_halvings {
            let cand = w + alpha * step;
            let fc = l2e_objective(stats, v, cand, sigma);
            if fc >= f + ARMIJO_C1 * alpha * step * g {
                accepted = Some((cand, fc));
                break;
            }
            alpha *= 0.5;
        }
        let Some((wn, fn_)) = accepted else {
            line_search_failed = true;
            break;
        };
        if wn == w {
            // The line search accepted a bitwise no-move candidate: ω has
            // hit f64 resolution for this objective.
            break;
        }
        prev = Some((w, g));
        w = wn;
        f = fn_;
        g = grad_omega(stats, v, w, sigma);
    }

    // Near the optimum the Armijo test cannot resolve objective changes
    // below f64 noise, so polish the root of the gradient with plain secant
    // steps, kept only if the measured objective did not drop beyond noise.
    if g.abs() > GRAD_TOL_OMEGA {
        let h = (sigma * 1e-3).max(1e-12);
        let (mut pw, mut pg) = (w + h, grad_omega(stats, v, w + h, sigma));
        let (mut cw, mut cg) = (w, g);
        let (mut bw, mut bg) = (w, g);
        for _ in 0..60 {
            if (cg - pg).abs() < 1e-300 {
                break;
            }
            let nw = cw - cg * (cw - pw) / (cg - pg);
            if !nw.is_finite() {
                break;
            }
            let ng = grad_omega(stats, v, nw, sigma);
            (pw, pg) = (cw, cg);
            (cw, cg) = (nw, ng);
            if ng.abs() < bg.abs() {
                (bw, bg) = (nw, ng);
            }
            if ng.abs() <= GRAD_TOL_OMEGA {
                break;
            }
        }
        if l2e_objective(stats, v, bw, sigma) >= f - f.abs() * 1e-12 {
            (w, g) = (bw, bg);
        }
    }

    ScalarOutcome { omega: w, grad: g, line_search_failed }
}

/// Robust Grassmann-average initialization: fits a robust 2-D subspace to
/// the centered midpoints by trimmed spherical averaging and returns the
/// normal of that subspace, v = η₁ × η₂.
pub fn init_v_rga(midpoints: &[Vector3<f64>], trim: f64) -> Result<Vector3<f64>> {
    if midpoints.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "need at least 3 midpoints, got {}",
            midpoints.len()
        )));
    }
    if !(0.0..1.0).contains(&trim) {
        return Err(Error::InvalidParameter(format!("trim = {trim}")));
    }
    // Coordinate-wise median center: a mean would let an outlier cluster
    // drag the whole centered set out of the inlier subspace.
    let mut center = Vector3::zeros();
    for a in 0..3 {
        let mut coords: Vec<f64> = midpoints.iter().map(|m| m[a]).collect();
        coords.sort_by(f64::total_cmp);
        let h = coords.len() / 2;
        center[a] = if coords.len() % 2 == 1 {
            coords[h]
        } else {
            (coords[h - 1] + coords[h]) / 2.0
        };
    }
    let centered: Vec<Vector3<f64>> = midpoints.iter().map(|m| m - center).collect();
    let max_norm = centered.iter().map(|u| u.norm()).fold(0.0, f64::max);
    if max_norm <= 0.0 {
        return Err(Error::CollinearMidpoints);
    }

    let eta1 = trimmed_grassmann_direction(&centered, trim, max_norm)?;
    let deflated: Vec<Vector3<f64>> = centered
        .iter()
        .map(|u| u - eta1 * eta1.dot(u))
        .collect();
    let max_defl = deflated.iter().map(|u| u.norm()).fold(0.0, f64::max);
    if max_defl < 1e-8 * max_norm {
        return Err(Error::CollinearMidpoints);
    }
    let mut eta2 = trimmed_grassmann_direction(&deflated, trim, max_defl)?;
    eta2 -= eta1 * eta1.dot(&eta2);
    let n2 = eta2.norm();
    if n2 < 1e-12 {
        return Err(Error::CollinearMidpoints);
    }
    eta2 /= n2;
    Ok(eta1.cross(&eta2).normalize())
}

/// One robust principal direction of a centered point set: iteratively
/// sign-aligned spherical averaging, dropping the `trim` fraction with the
/// largest angular residual each round. PCA seeds the iteration.
fn trimmed_grassmann_direction(
    centered: &[Vector3<f64>],
    trim: f64,
    max_norm: f64,
) -> Result<Vector3<f64>> {
    let dirs: Vec<Vector3<f64>> = centered
        .iter()
        .filter(|u| u.norm() > 1e-12 * max_norm)
        .map(|u| u.normalize())
        .collect();
    if dirs.is_empty() {
        return Err(Error::CollinearMidpoints);
    }
    let mut cov = Matrix3::zeros();
    for u in &dirs {
        cov += u * u.transpose();
    }
    let eig = cov.symmetric_eigen();
    let top = eig.eigenvalues.imax();
    let mut q: Vector3<f64> = eig.eigenvectors.column(top).into();
    q.normalize_mut();

    let keep = ((dirs.len() as f64 * (1.0 - trim)).ceil() as usize).max(1);
    for _ in 0..100 {
        // Angular residual is sign-independent: sin² of the angle to ±q.
        let mut scored: Vec<(f64, usize)> = dirs
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let c = q.dot(u);
                (1.0 - c * c, i)
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut acc = Vector3::zeros();
        for &(_, i) in scored.iter().take(keep) {
            let s = if q.dot(&dirs[i]) >= 0.0 { 1.0 } else { -1.0 };
            acc += dirs[i] * s;
        }
        let norm = acc.norm();
        if norm < 1e-15 {
            break;
        }
        let qn = acc / norm;
        let delta = (qn - q).norm().min((qn + q).norm());
        q = qn;
        if delta < 1e-12 {
            break;
        }
    }
    Ok(q)
}

/// Largest principal direction of the cloud, used when the midpoints are
/// too degenerate for the Grassmann average.
pub fn pca_init(p: &PointCloud) -> Result<Vector3<f64>> {
    let c = p.centroid();
    let mut cov = Matrix3::zeros();
    for x in p.points() {
        let d = x - c;
        cov += d * d.transpose();
    }
    cov /= p.len() as f64;
    let eig = cov.symmetric_eigen();
    let top = eig.eigenvalues.imax();
    if eig.eigenvalues[top] <= 0.0 {
        return Err(Error::DegenerateCloud("all points coincide".into()));
    }
    Ok(Vector3::from(eig.eigenvectors.column(top)).normalize())
}

/// Non-robust maximum-likelihood baseline: the normal is the eigenvector of
/// the smallest eigenvalue of (H + Hᵀ)/2 with H = Σ x_i x_{π(i)}ᵀ.
pub fn mle_estimate(stats: &PairStatistics) -> Result<SymmetryPlane> {
    if stats.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "need at least 3 pairs, got {}",
            stats.len()
        )));
    }
    let mut h = Matrix3::zeros();
    for c in &stats.c {
        h += c;
    }
    let s = (h + h.transpose()) / 2.0;
    let eig = s.symmetric_eigen();
    let mut idx: Vec<usize> = (0..3).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let scale = eig.eigenvalues[idx[2]].abs().max(1.0);
    if eig.eigenvalues[idx[1]] - eig.eigenvalues[idx[0]] <= 1e-10 * scale {
        return Err(Error::AmbiguousPlane);
    }
    let v = Vector3::from(eig.eigenvectors.column(idx[0])).normalize();
    let omega = closed_form_omega(stats, &v);
    Ok(SymmetryPlane::from_unit(v, omega))
}

/// Full robust estimation: RGA (or cloud-PCA) initialization, then
/// alternating ω- and v-ascent until both stall, with optional σ annealing.
pub fn estimate_plane(
    p: &PointCloud,
    corrs: &CorrespondenceSet,
    params: &EstimatorParams,
) -> Result<(SymmetryPlane, EstimateDiagnostics)> {
    params.validate()?;
    let stats = PairStatistics::from_correspondences(p, corrs)?;
    estimate_plane_from_stats(&stats, Some(p), params)
}

/// As [`estimate_plane`], for callers that already hold pair statistics.
/// `cloud` only feeds the PCA fallback when the midpoints are degenerate.
pub fn estimate_plane_from_stats(
    stats: &PairStatistics,
    cloud: Option<&PointCloud>,
    params: &EstimatorParams,
) -> Result<(SymmetryPlane, EstimateDiagnostics)> {
    params.validate()?;
    let v0 = match init_v_rga(stats.midpoints(), RGA_DEFAULT_TRIM) {
        Ok(v) => v,
        Err(_) => match cloud {
            Some(p) => pca_init(p)?,
            None => {
                let pts: Vec<Vector3<f64>> = (0..stats.len())
                    .flat_map(|i| {
                        let (x, y) = stats.point_pair(i);
                        [x, y]
                    })
                    .collect();
                pca_init(&PointCloud::new(pts)?)?
            }
        },
    };

    let caps = SolverCaps::default();
    let mut v = v0;
    let mut omega = closed_form_omega(stats, &v);
    let mut trace = Vec::new();
    let mut ls_failures = 0usize;
    let mut converged = false;
    let mut iterations = 0usize;
    let mut sigma = params.sigma_at(0);

    for t in 0..params.outer_max {
        iterations = t + 1;
        sigma = params.sigma_at(t);
        let so = optimize_omega(stats, &v, omega, sigma, &caps);
        let vo = optimize_v(stats, &v, so.omega, sigma, &caps);
        ls_failures += usize::from(so.line_search_failed) + usize::from(vo.line_search_failed);
        let angle_change = vo.v.dot(&v).abs().min(1.0).acos();
        let omega_change = (so.omega - omega).abs();
        v = vo.v;
        omega = so.omega;
        trace.push(l2e_objective(stats, &v, omega, sigma));
        // With annealing, convergence only counts once σ stops moving.
        let sigma_settled = params.sigma_at(t + 1) == sigma;
        if sigma_settled && angle_change < params.tol_angle && omega_change < params.tol_omega {
            converged = true;
            break;
        }
    }

    let plane = SymmetryPlane::from_unit(v, omega);
    let grad_v = riemannian_grad_v(&euclidean_grad_v(stats, &v, omega, sigma), &v);
    let residual_norms = (0..stats.len())
        .map(|i| {
            let (x, y) = stats.point_pair(i);
            residual(x, y, &plane).norm()
        })
        .collect();
    let diag = EstimateDiagnostics {
        iterations,
        objective_trace: trace,
        grad_norm_v: grad_v.norm(),
        grad_omega: grad_omega(stats, &v, omega, sigma),
        init_vector: v0,
        residual_norms,
        converged,
        line_search_failures: ls_failures,
        sigma_final: sigma,
    };
    Ok((plane, diag))
}

/// Deterministic unit directions roughly equidistributed over the sphere.
pub fn fibonacci_sphere(count: usize) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    (0..count)
        .map(|k| {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let th = golden * k as f64;
            Vector3::new(r * th.cos(), r * th.sin(), z)
        })
        .collect()
}

/// Exhaustive maximization of the L2E objective over a Fibonacci grid of
/// normals and a uniform ω grid spanning the projected midpoints. Slow and
/// simple on purpose: it is the estimator's independent oracle.
pub fn brute_force_plane(
    stats: &PairStatistics,
    directions: usize,
    omega_steps: usize,
    sigma: f64,
) -> Result<SymmetryPlane> {
    if directions < 16 || omega_steps < 16 {
        return Err(Error::InvalidParameter(format!(
            "grid too coarse: {directions} directions × {omega_steps} offsets"
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma = {sigma}")));
    }
    let n = stats.len();
    let inv = 1.0 / (2.0 * sigma * sigma);
    // Terms whose best-case exponent exceeds this bound cannot influence
    // the argmax at f64 precision.
    let cutoff = 40.0 * sigma * sigma;

    let mut best = (f64::NEG_INFINITY, Vector3::x(), 0.0);
    for v in fibonacci_sphere(directions) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        // Per-pair quadratic in ω: f_i(ω) = a_i − 8 p_i ω + 4ω², minimized
        // at ω = p_i with value a_i − 4p_i².
        let mut quads: Vec<(f64, f64)> = Vec::with_capacity(n);
        for i in 0..n {
            let p = v.dot(&stats.m[i]);
            let a = 4.0 * (v.transpose() * stats.c[i] * v)[0] + stats.d[i];
            lo = lo.min(p);
            hi = hi.max(p);
            if a - 4.0 * p * p <= cutoff {
                quads.push((a, p));
            }
        }
        if quads.is_empty() {
            continue;
        }
        let span = hi - lo;
        for g in 0..omega_steps {
            let omega = if span > 0.0 {
                lo + span * g as f64 / (omega_steps - 1) as f64
            } else if g == 0 {
                lo
            } else {
                break;
            };
            let mut acc = 0.0;
            for &(a, p) in &quads {
                acc += (-(a - 8.0 * p * omega + 4.0 * omega * omega) * inv).exp();
            }
            if acc > best.0 {
                best = (acc, v, omega);
            }
        }
    }
    SymmetryPlane::new(best.1, best.2)
}
