//! Dense strictly convex QP solver (Goldfarb–Idnani dual active set).
//!
//! Solves `min ½ xᵀHx + gᵀx` subject to `A_eq x = b_eq` and `A_in x ≤ b_in`.
//! The iterates stay dual feasible and optimal for the current active set;
//! each iteration adds the most violated constraint, dropping blocking ones
//! on the way. A warm start supplies a guess of the active inequality rows.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("Hessian is not positive definite")]
    NotConvex,
    #[error("equality constraints are linearly dependent")]
    DependentEqualities,
    #[error("non-finite problem data")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

impl QpProblem {
    /// Inequality-constrained problem without equalities.
    pub fn new(h: DMatrix<f64>, g: DVector<f64>, a_in: DMatrix<f64>, b_in: DVector<f64>) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in,
            b_in,
        }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    fn validate(&self) -> Result<(), QpError> {
        let n = self.g.len();
        if self.h.nrows() != n || self.h.ncols() != n {
            return Err(QpError::Dimension(format!("H is {}x{}, g has {n}", self.h.nrows(), self.h.ncols())));
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return Err(QpError::Dimension("equality block".into()));
        }
        if self.a_in.ncols() != n || self.a_in.nrows() != self.b_in.len() {
            return Err(QpError::Dimension("inequality block".into()));
        }
        let finite = |m: &[f64]| m.iter().all(|v| v.is_finite());
        if !(finite(self.h.as_slice())
            && finite(self.g.as_slice())
            && finite(self.a_eq.as_slice())
            && finite(self.b_eq.as_slice())
            && finite(self.a_in.as_slice())
            && finite(self.b_in.as_slice()))
        {
            return Err(QpError::NonFinite);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Multipliers of the inequality rows, zero when inactive.
    pub lambda_in: DVector<f64>,
    pub lambda_eq: DVector<f64>,
    /// Active inequality rows at termination.
    pub active: Vec<usize>,
    pub status: QpStatus,
    pub iterations: usize,
}

impl QpSolution {
    /// Largest violation of stationarity, primal feasibility, dual sign and
    /// complementary slackness.
    pub fn kkt_residual(&self, p: &QpProblem) -> f64 {
        let mut grad = &p.h * &self.x + &p.g;
        grad += p.a_in.transpose() * &self.lambda_in;
        grad += p.a_eq.transpose() * &self.lambda_eq;
        let mut r = grad.amax();
        if p.a_in.nrows() > 0 {
            let slack = &p.b_in - &p.a_in * &self.x;
            for i in 0..slack.len() {
                r = r.max((-slack[i]).max(0.0));
                r = r.max((-self.lambda_in[i]).max(0.0));
                r = r.max((slack[i] * self.lambda_in[i]).abs());
            }
        }
        if p.a_eq.nrows() > 0 {
            r = r.max((&p.a_eq * &self.x - &p.b_eq).amax());
        }
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub max_iterations: usize,
    /// Relative primal feasibility tolerance.
    pub tolerance: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-10,
        }
    }
}

/// Constraint `i` in `≥` form: `n_iᵀ x ≥ c_i`, stored with `H⁻¹ n_i`.
struct Constraints {
    n: DMatrix<f64>,
    c: DVector<f64>,
    hinv_n: DMatrix<f64>,
    n_eq: usize,
}

impl Constraints {
    fn dot(&self, i: usize, x: &DVector<f64>) -> f64 {
        self.n.column(i).dot(x)
    }
}

struct State {
    x: DVector<f64>,
    /// Active constraint ids, equalities first.
    set: Vec<usize>,
    u: Vec<f64>,
}

fn gram(cons: &Constraints, set: &[usize]) -> Option<Cholesky<f64, Dyn>> {
    let k = set.len();
    let mut m = DMatrix::zeros(k, k);
    for (a, &i) in set.iter().enumerate() {
        for (b, &j) in set.iter().enumerate().skip(a) {
            let v = cons.n.column(i).dot(&cons.hinv_n.column(j));
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    let chol = m.clone().cholesky()?;
    // reject numerically dependent sets
    let diag_min = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, b| a.min(b.abs()));
    let scale = m.diagonal().amax().max(1e-300).sqrt();
    (diag_min > 1e-10 * scale).then_some(chol)
}

/// Minimizer over the affine set of `set`, with its multipliers.
fn solve_on_set(cons: &Constraints, x0: &DVector<f64>, set: &[usize]) -> Option<(DVector<f64>, Vec<f64>)> {
    if set.is_empty() {
        return Some((x0.clone(), Vec::new()));
    }
    let chol = gram(cons, set)?;
    let rhs = DVector::from_iterator(set.len(), set.iter().map(|&i| cons.c[i] - cons.dot(i, x0)));
    let u = chol.solve(&rhs);
    let mut x = x0.clone();
    for (a, &i) in set.iter().enumerate() {
        x.axpy(u[a], &cons.hinv_n.column(i), 1.0);
    }
    Some((x, u.iter().copied().collect()))
}

fn factor_hessian(h: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, QpError> {
    let sym = (h + h.transpose()) * 0.5;
    let chol = sym.cholesky().ok_or(QpError::NotConvex)?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(*d), hi.max(*d)));
    if !(lo > 1e-9 * hi.max(1e-300)) {
        return Err(QpError::NotConvex);
    }
    Ok(chol)
}

pub fn solve_qp(problem: &QpProblem, warm_start: Option<&[usize]>, settings: &QpSettings) -> Result<QpSolution, QpError> {
    problem.validate()?;
    let nv = problem.dim();
    let n_eq = problem.a_eq.nrows();
    let n_in = problem.a_in.nrows();
    let chol = factor_hessian(&problem.h)?;

    let mut n = DMatrix::zeros(nv, n_eq + n_in);
    let mut c = DVector::zeros(n_eq + n_in);
    for i in 0..n_eq {
        n.set_column(i, &problem.a_eq.row(i).transpose());
        c[i] = problem.b_eq[i];
    }
    for i in 0..n_in {
        n.set_column(n_eq + i, &(-problem.a_in.row(i).transpose()));
        c[n_eq + i] = -problem.b_in[i];
    }
    let hinv_n = chol.solve(&n);
    let cons = Constraints { n, c, hinv_n, n_eq };
    let x0 = -chol.solve(&problem.g);

    let mut iterations = 1;
    let mut set: Vec<usize> = (0..n_eq).collect();
    if let Some(w) = warm_start {
        for &i in w {
            let id = n_eq + i;
            if i < n_in && !set.contains(&id) {
                set.push(id);
            }
        }
    }
    let (mut x, mut u) = loop {
        match solve_on_set(&cons, &x0, &set) {
            Some(sol) => break sol,
            None if set.len() > n_eq => {
                set.pop();
            }
            None => return Err(QpError::DependentEqualities),
        }
    };
    // warm starts may carry rows with the wrong multiplier sign
    loop {
        let worst = (n_eq..set.len())
            .filter(|&a| u[a] < 0.0)
            .min_by(|&a, &b| u[a].total_cmp(&u[b]));
        let Some(a) = worst else { break };
        set.remove(a);
        iterations += 1;
        (x, u) = solve_on_set(&cons, &x0, &set).ok_or(QpError::DependentEqualities)?;
    }
    let mut st = State { x, set, u };
    let status = run(&cons, &mut st, &mut iterations, settings);

    let mut lambda_in = DVector::zeros(n_in);
    let mut lambda_eq = DVector::zeros(n_eq);
    let mut active = Vec::new();
    for (a, &i) in st.set.iter().enumerate() {
        if i < n_eq {
            // stationarity in ≥ form: Hx + g − N u = 0, with N = A_eqᵀ
            lambda_eq[i] = -st.u[a];
        } else {
            lambda_in[i - n_eq] = st.u[a];
            active.push(i - n_eq);
        }
    }
    active.sort_unstable();
    Ok(QpSolution {
        objective: problem.objective(&st.x),
        x: st.x,
        lambda_in,
        lambda_eq,
        active,
        status,
        iterations,
    })
}

fn run(cons: &Constraints, st: &mut State, iterations: &mut usize, settings: &QpSettings) -> QpStatus {
    let total = cons.c.len();
    let mut in_set = vec![false; total];
    for &i in &st.set {
        in_set[i] = true;
    }
    loop {
        // most violated inactive inequality
        let mut pick: Option<(usize, f64)> = None;
        for i in cons.n_eq..total {
            if in_set[i] {
                continue;
            }
            let viol = cons.c[i] - cons.dot(i, &st.x);
            let tol = settings.tolerance * (1.0 + cons.c[i].abs());
            if viol > tol && pick.is_none_or(|(_, v)| viol > v) {
                pick = Some((i, viol));
            }
        }
        let Some((p, _)) = pick else {
            return QpStatus::Optimal;
        };
        let mut up = 0.0;
        loop {
            if *iterations >= settings.max_iterations {
                return QpStatus::MaxIter;
            }
            *iterations += 1;
            let k = st.set.len();
            let (z, r) = if k == 0 {
                (cons.hinv_n.column(p).into_owned(), DVector::zeros(0))
            } else {
                let Some(chol) = gram(cons, &st.set) else {
                    return QpStatus::Infeasible;
                };
                let proj = DVector::from_iterator(k, st.set.iter().map(|&i| cons.n.column(i).dot(&cons.hinv_n.column(p))));
                let r = chol.solve(&proj);
                let mut z = cons.hinv_n.column(p).into_owned();
                for (a, &i) in st.set.iter().enumerate() {
                    z.axpy(-r[a], &cons.hinv_n.column(i), 1.0);
                }
                (z, r)
            };
            // blocking step: an inequality multiplier reaching zero
            let mut t1 = f64::INFINITY;
            let mut block = None;
            for a in 0..k {
                if st.set[a] >= cons.n_eq && r[a] > 0.0 {
                    let t = st.u[a] / r[a];
                    if t < t1 {
                        t1 = t;
                        block = Some(a);
                    }
                }
            }
            let zn = cons.n.column(p).dot(&z);
            let scale = cons.n.column(p).norm() * cons.hinv_n.column(p).norm();
            let t2 = if zn > 1e-14 * scale.max(1e-300) {
                (cons.c[p] - cons.dot(p, &st.x)) / zn
            } else {
                f64::INFINITY
            };
            if t1.is_infinite() && t2.is_infinite() {
                return QpStatus::Infeasible;
            }
            let t = t1.min(t2);
            if t2.is_finite() {
                st.x.axpy(t, &z, 1.0);
            }
            for a in 0..k {
                st.u[a] -= t * r[a];
            }
            up += t;
            if t2 <= t1 {
                st.set.push(p);
                st.u.push(up);
                in_set[p] = true;
                break;
            }
            let a = block.expect("finite t1 has a blocking row");
            in_set[st.set[a]] = false;
            st.set.remove(a);
            st.u.remove(a);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Minimum over all active subsets whose equality-constrained minimizer
    /// is feasible.
    pub(crate) fn enumerate_reference(p: &QpProblem) -> Option<(DVector<f64>, f64)> {
        let n = p.dim();
        let m = p.a_in.nrows();
        let mut best: Option<(DVector<f64>, f64)> = None;
        for mask in 0u32..(1 << m) {
            let rows: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
            if rows.len() > n {
                continue;
            }
            let k = rows.len();
            let mut kkt = DMatrix::zeros(n + k, n + k);
            let mut rhs = DVector::zeros(n + k);
            kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
            for i in 0..n {
                rhs[i] = -p.g[i];
            }
            for (a, &r) in rows.iter().enumerate() {
                for j in 0..n {
                    kkt[(n + a, j)] = p.a_in[(r, j)];
                    kkt[(j, n + a)] = p.a_in[(r, j)];
                }
                rhs[n + a] = p.b_in[r];
            }
            let Some(sol) = kkt.lu().solve(&rhs) else { continue };
            let x = sol.rows(0, n).into_owned();
            if !x.iter().all(|v| v.is_finite()) {
                continue;
            }
            let viol = (&p.a_in * &x - &p.b_in).max();
            if viol > 1e-9 {
                continue;
            }
            let f = p.objective(&x);
            if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
                best = Some((x, f));
            }
        }
        best
    }

    pub(crate) fn random_problem(rng: &mut ChaCha8Rng, n: usize, m: usize) -> QpProblem {
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let h = &b * b.transpose() + DMatrix::identity(n, n) * 0.1;
        let g = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let x_feas = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let b_in = &a * &x_feas + DVector::from_fn(m, |_, _| rng.random_range(0.0..1.0));
        QpProblem::new(h, g, a, b_in)
    }

    #[test]
    fn unconstrained_identity() {
        let g = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let p = QpProblem::new(DMatrix::identity(3, 3), g.clone(), DMatrix::zeros(0, 3), DVector::zeros(0));
        let s = solve_qp(&p, None, &QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.x + g).amax() < 1e-14);
    }

    #[test]
    fn box_qp_matches_grid_search() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let g = DVector::from_vec(vec![-3.0, 2.5]);
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        let b = DVector::from_vec(vec![1.0, 0.5, 0.3, 1.0]);
        let p = QpProblem::new(h, g, a, b);
        let s = solve_qp(&p, None, &QpSettings::default()).unwrap();
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let mut x = -0.5;
        while x <= 1.0 + 1e-12 {
            let mut y = -1.0;
            while y <= 0.3 + 1e-12 {
                let f = p.objective(&DVector::from_vec(vec![x, y]));
                if f < best.0 {
                    best = (f, x, y);
                }
                y += 1e-3;
            }
            x += 1e-3;
        }
        assert!((s.x[0] - best.1).abs() < 1.5e-3 && (s.x[1] - best.2).abs() < 1.5e-3);
        assert!(s.objective <= best.0 + 1e-12);
    }

    #[test]
    fn scaled_cost_same_argmin() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_problem(&mut rng, 8, 10);
        let mut q = p.clone();
        q.h *= 10.0;
        q.g *= 10.0;
        let a = solve_qp(&p, None, &QpSettings::default()).unwrap();
        let b = solve_qp(&q, None, &QpSettings::default()).unwrap();
        assert!((a.x - b.x).amax() < 1e-8);
    }

    #[test]
    fn equality_constraints() {
        // min x² + y² s.t. x + y = 1, x ≤ 0.2
        let p = QpProblem {
            h: DMatrix::identity(2, 2) * 2.0,
            g: DVector::zeros(2),
            a_eq: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            b_eq: DVector::from_vec(vec![1.0]),
            a_in: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            b_in: DVector::from_vec(vec![0.2]),
        };
        let s = solve_qp(&p, None, &QpSettings::default()).unwrap();
        assert!((s.x[0] - 0.2).abs() < 1e-12 && (s.x[1] - 0.8).abs() < 1e-12);
        assert!(s.kkt_residual(&p) < 1e-9);
    }

    #[test]
    fn infeasible_detected() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_vec(vec![-1.0, -1.0]);
        let p = QpProblem::new(DMatrix::identity(1, 1), DVector::zeros(1), a, b);
        assert_eq!(solve_qp(&p, None, &QpSettings::default()).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn rejects_indefinite_and_bad_shapes() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let p = QpProblem::new(h, DVector::zeros(2), DMatrix::zeros(0, 2), DVector::zeros(0));
        assert_eq!(solve_qp(&p, None, &QpSettings::default()), Err(QpError::NotConvex));
        let p = QpProblem::new(DMatrix::identity(2, 2), DVector::zeros(3), DMatrix::zeros(0, 2), DVector::zeros(0));
        assert!(matches!(solve_qp(&p, None, &QpSettings::default()), Err(QpError::Dimension(_))));
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_problem(&mut rng, 15, 12);
        let a = solve_qp(&p, None, &QpSettings::default()).unwrap();
        let b = solve_qp(&p, None, &QpSettings::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn warm_start_with_exact_set_is_one_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_problem(&mut rng, 12, 12);
        let cold = solve_qp(&p, None, &QpSettings::default()).unwrap();
        let warm = solve_qp(&p, Some(&cold.active), &QpSettings::default()).unwrap();
        assert_eq!(warm.iterations, 1);
        assert!((warm.x - cold.x).amax() < 1e-9);
    }

    #[test]
    fn bad_warm_start_still_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_problem(&mut rng, 10, 12);
        let cold = solve_qp(&p, None, &QpSettings::default()).unwrap();
        let all: Vec<usize> = (0..12).collect();
        let warm = solve_qp(&p, Some(&all), &QpSettings::default()).unwrap();
        assert_eq!(warm.status, QpStatus::Optimal);
        assert!((warm.objective - cold.objective).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn matches_enumeration(seed in 0u64..1_000_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..=20);
            let m = rng.random_range(0..=12);
            let p = random_problem(&mut rng, n, m);
            let s = solve_qp(&p, None, &QpSettings::default()).unwrap();
            prop_assert_eq!(s.status, QpStatus::Optimal);
            let (_, f) = enumerate_reference(&p).unwrap();
            prop_assert!((s.objective - f).abs() <= 1e-6, "{} vs {}", s.objective, f);
            prop_assert!(s.kkt_residual(&p) < 1e-6);
        }
    }
}
