//! Strictly convex quadratic programming for the velocity controller.
//!
//! Each control cycle minimizes
//! `β(‖J₁u₁ + η t̃₁‖² + λ‖u₁‖²) + (1−β)(‖J₂u₂ + η t̃₂‖² + λ‖u₂‖²)`
//! subject to the stacked inequality rows `W u ⪯ w`. The solver is a dense
//! dual active-set method (Goldfarb–Idnani): small problems, deterministic
//! pivoting, no feasible start required.

use nalgebra::{Cholesky, DMatrix, DVector, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quat::PureQuaternion;
use crate::vfi::ConstraintRow;

/// Weights of the tracking objective.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ControlParams {
    /// Priority between the two robots, in `[0, 1]`.
    pub beta: f64,
    /// Task gain in 1/s.
    pub eta: f64,
    /// Damping on joint velocities; must stay strictly positive so the
    /// Hessian is positive definite.
    pub damping: f64,
}

impl ControlParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must be in [0,1], got {}", self.beta)));
        }
        if !(self.eta > 0.0) {
            return Err(Error::Config(format!("eta must be > 0, got {}", self.eta)));
        }
        if !(self.damping > 0.0) {
            return Err(Error::Config(format!(
                "damping must be > 0 for strict convexity, got {}",
                self.damping
            )));
        }
        Ok(())
    }
}

/// `minimize ½uᵀHu + fᵀu  subject to  W u ⪯ w`.
#[derive(Clone, Debug)]
pub struct QuadraticProgram {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub w: DMatrix<f64>,
    pub bound: DVector<f64>,
}

impl QuadraticProgram {
    pub fn new(h: DMatrix<f64>, f: DVector<f64>, w: DMatrix<f64>, bound: DVector<f64>) -> Result<Self> {
        let n = h.nrows();
        if h.ncols() != n || f.nrows() != n {
            return Err(Error::DimensionMismatch {
                context: "objective",
                expected: n,
                got: h.ncols().max(f.nrows()),
            });
        }
        if w.nrows() != bound.nrows() || (w.nrows() > 0 && w.ncols() != n) {
            return Err(Error::DimensionMismatch {
                context: "constraint stack",
                expected: n,
                got: w.ncols(),
            });
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if (h[(i, j)] - h[(j, i)]).abs() > 1e-12 {
                    return Err(Error::Config(format!(
                        "Hessian asymmetric at ({i},{j}): {} vs {}",
                        h[(i, j)],
                        h[(j, i)]
                    )));
                }
            }
        }
        Ok(Self { h, f, w, bound })
    }
}

/// Minimizer plus the full-length multiplier vector (zero on inactive rows).
#[derive(Clone, Debug)]
pub struct Solution {
    pub u: DVector<f64>,
    pub multipliers: DVector<f64>,
    pub iterations: usize,
}

/// Builds `(H, f)` of the two-robot tracking objective from the per-robot
/// translation Jacobians and translation errors `t̃ᵢ = tᵢ − tᵢ,d`.
pub fn build_objective(
    j_t1: &DMatrix<f64>,
    t_err1: PureQuaternion,
    j_t2: &DMatrix<f64>,
    t_err2: PureQuaternion,
    params: &ControlParams,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    params.validate()?;
    if j_t1.nrows() != 4 || j_t2.nrows() != 4 {
        return Err(Error::DimensionMismatch {
            context: "translation Jacobian rows",
            expected: 4,
            got: j_t1.nrows().max(j_t2.nrows()),
        });
    }
    let (n1, n2) = (j_t1.ncols(), j_t2.ncols());
    let n = n1 + n2;
    let mut h = DMatrix::zeros(n, n);
    let mut f = DVector::zeros(n);

    let mut fill = |j: &DMatrix<f64>, err: Vector4<f64>, weight: f64, offset: usize, nk: usize| {
        let block = (j.transpose() * j + DMatrix::identity(nk, nk) * params.damping) * (2.0 * weight);
        h.view_mut((offset, offset), (nk, nk)).copy_from(&block);
        let grad = j.transpose() * err * (2.0 * weight * params.eta);
        f.view_mut((offset, 0), (nk, 1)).copy_from(&grad);
    };
    fill(j_t1, t_err1.vec4(), params.beta, 0, n1);
    fill(j_t2, t_err2.vec4(), 1.0 - params.beta, n1, n2);
    Ok((h, f))
}

/// Stacks constraint rows into `(W, w)`, preserving the given order.
pub fn assemble(n: usize, rows: &[ConstraintRow]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut w = DMatrix::zeros(rows.len(), n);
    let mut bound = DVector::zeros(rows.len());
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(Error::DimensionMismatch {
                context: "constraint row",
                expected: n,
                got: row.len(),
            });
        }
        w.row_mut(i).copy_from(&row.coeffs);
        bound[i] = row.bound;
    }
    Ok((w, bound))
}

struct ActiveSet<'a> {
    qp: &'a QuadraticProgram,
    chol_h: Cholesky<f64, nalgebra::Dyn>,
    /// Active row indices, in insertion order.
    indices: Vec<usize>,
    /// H⁻¹ aᵢ for each active row, kept in lockstep with `indices`.
    hinv_rows: Vec<DVector<f64>>,
}

impl<'a> ActiveSet<'a> {
    fn new(qp: &'a QuadraticProgram) -> Result<Self> {
        let chol_h = Cholesky::new(qp.h.clone()).ok_or(Error::NotPositiveDefinite)?;
        Ok(Self {
            qp,
            chol_h,
            indices: Vec::new(),
            hinv_rows: Vec::new(),
        })
    }

    fn row(&self, i: usize) -> DVector<f64> {
        self.qp.w.row(i).transpose()
    }

    fn push(&mut self, i: usize) {
        let a = self.row(i);
        self.hinv_rows.push(self.chol_h.solve(&a));
        self.indices.push(i);
    }

    fn remove(&mut self, pos: usize) {
        self.indices.remove(pos);
        self.hinv_rows.remove(pos);
    }

    /// Step directions for bringing in row `p`: the primal direction `z`
    /// (move `x ← x − t z`) and the dual direction `r` on the active set.
    fn directions(&self, a_p: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let ha_p = self.chol_h.solve(a_p);
        let k = self.indices.len();
        if k == 0 {
            return (ha_p, DVector::zeros(0));
        }
        let mut m = DMatrix::zeros(k, k);
        let mut rhs = DVector::zeros(k);
        for i in 0..k {
            let a_i = self.row(self.indices[i]);
            rhs[i] = a_i.dot(&ha_p);
            for j in 0..k {
                m[(i, j)] = a_i.dot(&self.hinv_rows[j]);
            }
        }
        // M is the active-set Gram in the H⁻¹ metric; rows are kept
        // independent, so Cholesky succeeds. LU fallback for safety.
        let r = match Cholesky::new(m.clone()) {
            Some(c) => c.solve(&rhs),
            None => m.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(k)),
        };
        let mut z = ha_p;
        for j in 0..k {
            z -= &self.hinv_rows[j] * r[j];
        }
        (z, r)
    }
}

/// Solves the QP to the stated KKT tolerance.
///
/// `u = 0` need not be feasible; an empty feasible region is reported as
/// [`Error::Infeasible`] carrying the row that could not be satisfied.
pub fn solve(qp: &QuadraticProgram, tol: f64) -> Result<Solution> {
    let r = qp.w.nrows();
    let mut active = ActiveSet::new(qp)?;
    let mut x = -active.chol_h.solve(&qp.f);
    let mut mu: Vec<f64> = Vec::new();

    let max_outer = 10 * (r + 1) + 50;
    let mut iterations = 0;
    for _ in 0..max_outer {
        iterations += 1;
        // Most violated row, lowest index on ties.
        let mut p = usize::MAX;
        let mut worst = tol;
        for i in 0..r {
            let s = qp.w.row(i).transpose().dot(&x) - qp.bound[i];
            if s > worst {
                worst = s;
                p = i;
            }
        }
        if p == usize::MAX {
            break; // primal feasible and dual feasible: optimal
        }

        let a_p = qp.w.row(p).transpose();
        let mut mu_p = 0.0;
        loop {
            let (z, rdir) = active.directions(&a_p);
            let descent = a_p.dot(&z);
            let s_p = a_p.dot(&x) - qp.bound[p];

            // Full step length (drives s_p to zero), if z is usable.
            let t2 = if descent > 1e-14 * (1.0 + a_p.norm_squared()) {
                Some(s_p / descent)
            } else {
                None
            };
            // Partial step length (first active multiplier hitting zero).
            let mut t1: Option<(f64, usize)> = None;
            for (j, &rj) in rdir.iter().enumerate() {
                if rj > 1e-14 {
                    let step = mu[j] / rj;
                    if t1.map_or(true, |(best, _)| step < best) {
                        t1 = Some((step, j));
                    }
                }
            }

            match (t1, t2) {
                (None, None) => return Err(Error::Infeasible { row: p }),
                (Some((t, j)), None) => {
                    // Dual-only step: drop the blocking row and retry.
                    for (m, mj) in mu.iter_mut().enumerate() {
                        *mj -= t * rdir[m];
                    }
                    mu_p += t;
                    active.remove(j);
                    mu.remove(j);
                }
                (t1, Some(t_full)) => {
                    let (t, blocking) = match t1 {
                        Some((t_part, j)) if t_part < t_full => (t_part, Some(j)),
                        _ => (t_full, None),
                    };
                    x -= &z * t;
                    for (m, mj) in mu.iter_mut().enumerate() {
                        *mj -= t * rdir[m];
                    }
                    mu_p += t;
                    match blocking {
                        Some(j) => {
                            active.remove(j);
                            mu.remove(j);
                        }
                        None => {
                            active.push(p);
                            mu.push(mu_p);
                            break;
                        }
                    }
                }
            }
        }
    }

    // Final KKT audit.
    let mut multipliers = DVector::zeros(r);
    for (pos, &i) in active.indices.iter().enumerate() {
        multipliers[i] = mu[pos];
    }
    let stationarity = (&qp.h * &x + &qp.f + qp.w.transpose() * &multipliers).norm();
    let mut primal: f64 = 0.0;
    let mut slackness: f64 = 0.0;
    for i in 0..r {
        let s = qp.w.row(i).transpose().dot(&x) - qp.bound[i];
        primal = primal.max(s);
        slackness = slackness.max((multipliers[i] * s).abs());
    }
    let scale = 1.0 + x.norm().max(qp.f.norm());
    if stationarity > tol * scale || primal > tol * scale || slackness > tol * scale * scale {
        return Err(Error::IllPosed(format!(
            "KKT residuals above tolerance (stationarity {stationarity:.3e}, \
             primal {primal:.3e}, slackness {slackness:.3e})"
        )));
    }

    Ok(Solution {
        u: x,
        multipliers,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::RowDVector;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn qp_1d(h: f64, f: f64, rows: &[(f64, f64)]) -> QuadraticProgram {
        let w = DMatrix::from_fn(rows.len(), 1, |i, _| rows[i].0);
        let b = DVector::from_fn(rows.len(), |i, _| rows[i].1);
        QuadraticProgram::new(
            DMatrix::from_element(1, 1, h),
            DVector::from_element(1, f),
            w,
            b,
        )
        .unwrap()
    }

    #[test]
    fn clamped_and_unconstrained_1d() {
        // minimize (u+1)² = u² + 2u + 1 → H = 2, f = 2.
        let free = qp_1d(2.0, 2.0, &[]);
        let sol = solve(&free, 1e-8).unwrap();
        assert_relative_eq!(sol.u[0], -1.0, epsilon = 1e-9);

        // subject to u ≥ −0.5 i.e. −u ≤ 0.5.
        let clamped = qp_1d(2.0, 2.0, &[(-1.0, 0.5)]);
        let sol = solve(&clamped, 1e-8).unwrap();
        assert_relative_eq!(sol.u[0], -0.5, epsilon = 1e-9);
        assert!(sol.multipliers[0] > 0.0);
    }

    #[test]
    fn infeasible_reported_with_row() {
        // u ≤ −1 and −u ≤ 0 (u ≥ 0) cannot both hold.
        let qp = qp_1d(2.0, 0.0, &[(1.0, -1.0), (-1.0, 0.0)]);
        match solve(&qp, 1e-8) {
            Err(Error::Infeasible { row }) => assert!(row < 2),
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn non_pd_rejected() {
        let qp = QuadraticProgram::new(
            DMatrix::from_element(1, 1, -1.0),
            DVector::zeros(1),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
        )
        .unwrap();
        assert!(matches!(solve(&qp, 1e-8), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn asymmetric_hessian_rejected() {
        let mut h = DMatrix::identity(2, 2);
        h[(0, 1)] = 1e-6;
        assert!(QuadraticProgram::new(h, DVector::zeros(2), DMatrix::zeros(0, 2), DVector::zeros(0)).is_err());
    }

    #[test]
    fn build_objective_scalar_example() {
        // n₁ = n₂ = 1, J = (1) on the z entry, β = ½, λ → 0⁺, η = 1,
        // t̃₁ = ẑ, t̃₂ = 0 → minimizer u ≈ (−1, 0).
        let mut j = DMatrix::zeros(4, 1);
        j[(3, 0)] = 1.0;
        let params = ControlParams {
            beta: 0.5,
            eta: 1.0,
            damping: 1e-12,
        };
        let (h, f) = build_objective(
            &j,
            PureQuaternion::new(0.0, 0.0, 1.0),
            &j,
            PureQuaternion::zero(),
            &params,
        )
        .unwrap();
        let qp = QuadraticProgram::new(h, f, DMatrix::zeros(0, 2), DVector::zeros(0)).unwrap();
        let sol = solve(&qp, 1e-8).unwrap();
        assert_relative_eq!(sol.u[0], -1.0, epsilon = 1e-6);
        assert_relative_eq!(sol.u[1], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_error_gives_zero_velocity() {
        let j = DMatrix::from_fn(4, 3, |r, c| ((r + 1) * (c + 2)) as f64 * 0.1);
        let params = ControlParams {
            beta: 0.7,
            eta: 10.0,
            damping: 0.001,
        };
        let (h, f) = build_objective(&j, PureQuaternion::zero(), &j, PureQuaternion::zero(), &params).unwrap();
        let qp = QuadraticProgram::new(h, f, DMatrix::zeros(0, 6), DVector::zeros(0)).unwrap();
        let sol = solve(&qp, 1e-8).unwrap();
        assert!(sol.u.norm() < 1e-12);
    }

    #[test]
    fn unconstrained_matches_direct_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let j1 = DMatrix::from_fn(4, 3, |_, _| rng.gen_range(-1.0..1.0));
            let j2 = DMatrix::from_fn(4, 3, |_, _| rng.gen_range(-1.0..1.0));
            let e1 = PureQuaternion::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let e2 = PureQuaternion::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let params = ControlParams { beta: 0.9, eta: 5.0, damping: 0.01 };
            let (h, f) = build_objective(&j1, e1, &j2, e2, &params).unwrap();
            let direct = Cholesky::new(h.clone()).unwrap().solve(&(-&f));
            let qp = QuadraticProgram::new(h, f, DMatrix::zeros(0, 6), DVector::zeros(0)).unwrap();
            let sol = solve(&qp, 1e-8).unwrap();
            assert!((sol.u - direct).norm() <= 1e-9);
        }
    }

    #[test]
    fn assemble_preserves_order_and_checks_length() {
        let r1 = ConstraintRow::new(RowDVector::from_row_slice(&[1.0, 0.0]), 3.0);
        let r2 = ConstraintRow::new(RowDVector::from_row_slice(&[0.0, -1.0]), 4.0);
        let (w, b) = assemble(2, &[r1.clone(), r2]).unwrap();
        assert_eq!(w.nrows(), 2);
        assert_relative_eq!(w[(0, 0)], 1.0);
        assert_relative_eq!(w[(1, 1)], -1.0);
        assert_relative_eq!(b[0], 3.0);
        assert_relative_eq!(b[1], 4.0);

        let (w0, b0) = assemble(2, &[]).unwrap();
        assert_eq!(w0.nrows(), 0);
        assert_eq!(b0.nrows(), 0);

        assert!(assemble(3, &[r1]).is_err());
    }

    /// Exhaustive active-set enumeration oracle for tiny problems.
    pub(crate) fn brute_force(qp: &QuadraticProgram) -> Option<DVector<f64>> {
        let n = qp.h.nrows();
        let r = qp.w.nrows();
        let mut best: Option<(f64, DVector<f64>)> = None;
        for mask in 0u32..(1 << r) {
            let set: Vec<usize> = (0..r).filter(|i| mask & (1 << i) != 0).collect();
            if set.len() > n {
                continue;
            }
            let k = set.len();
            let mut kkt = DMatrix::zeros(n + k, n + k);
            kkt.view_mut((0, 0), (n, n)).copy_from(&qp.h);
            for (j, &i) in set.iter().enumerate() {
                for c in 0..n {
                    kkt[(n + j, c)] = qp.w[(i, c)];
                    kkt[(c, n + j)] = qp.w[(i, c)];
                }
            }
            let mut rhs = DVector::zeros(n + k);
            rhs.view_mut((0, 0), (n, 1)).copy_from(&(-&qp.f));
            for (j, &i) in set.iter().enumerate() {
                rhs[n + j] = qp.bound[i];
            }
            let Some(sol) = kkt.clone().lu().solve(&rhs) else {
                continue;
            };
            if (kkt * &sol - &rhs).norm() > 1e-8 {
                continue;
            }
            let x = sol.rows(0, n).into_owned();
            let lam = sol.rows(n, k);
            if lam.iter().any(|&l| l < -1e-9) {
                continue;
            }
            let feasible = (0..r).all(|i| qp.w.row(i).transpose().dot(&x) - qp.bound[i] <= 1e-9);
            if !feasible {
                continue;
            }
            let obj = 0.5 * (&qp.h * &x).dot(&x) + qp.f.dot(&x);
            if best.as_ref().map_or(true, |(b, _)| obj < *b) {
                best = Some((obj, x));
            }
        }
        best.map(|(_, x)| x)
    }

    pub(crate) fn random_qp(rng: &mut ChaCha8Rng) -> QuadraticProgram {
        let n = rng.gen_range(1..=4);
        let r = rng.gen_range(0..=6);
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let h = &m * m.transpose() + DMatrix::identity(n, n) * rng.gen_range(0.1..1.0);
        let f = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let w = DMatrix::from_fn(r, n, |_, _| rng.gen_range(-1.0..1.0));
        let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let b = DVector::from_fn(r, |i, _| {
            let tight = rng.gen_bool(0.3);
            let slack = if tight { 0.0 } else { rng.gen_range(0.0..1.5) };
            w.row(i).transpose().dot(&x0) + slack
        });
        QuadraticProgram::new(h, f, w, b).unwrap()
    }

    #[test]
    fn random_qps_match_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut checked = 0;
        for _ in 0..300 {
            let qp = random_qp(&mut rng);
            let oracle = brute_force(&qp).expect("feasible by construction");
            let sol = solve(&qp, 1e-8).expect("solver agrees problem is feasible");
            assert!(
                (&sol.u - &oracle).norm() <= 1e-7,
                "mismatch: {:?} vs {:?}",
                sol.u,
                oracle
            );
            checked += 1;
        }
        assert_eq!(checked, 300);
    }

    #[test]
    fn row_rescaling_leaves_solution_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let qp = random_qp(&mut rng);
            if qp.w.nrows() == 0 {
                continue;
            }
            let sol = solve(&qp, 1e-8).unwrap();
            let mut scaled = qp.clone();
            let c = rng.gen_range(0.1..10.0);
            let row = rng.gen_range(0..scaled.w.nrows());
            for j in 0..scaled.w.ncols() {
                scaled.w[(row, j)] *= c;
            }
            scaled.bound[row] *= c;
            let sol2 = solve(&scaled, 1e-8).unwrap();
            assert!((&sol.u - &sol2.u).norm() <= 1e-8);
        }
    }

    #[test]
    fn reruns_are_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let qp = random_qp(&mut rng);
        let a = solve(&qp, 1e-8).unwrap();
        let b = solve(&qp, 1e-8).unwrap();
        assert_eq!(a.u.as_slice(), b.u.as_slice());
        for (x, y) in a.u.iter().zip(b.u.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
