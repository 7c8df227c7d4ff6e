//! Dense strictly convex QP solver.
//!
//! ```text
//!     minimize     1/2 x' H x + g' x
//!     subject to   A_eq x + b_eq  = 0
//!                  A_in x + b_in >= 0
//! ```
//!
//! Goldfarb-Idnani dual active-set method: start from the unconstrained
//! minimum and repeatedly add the most violated constraint, dropping
//! constraints whose multiplier would turn negative. The factorization
//! `J = L^-T Q` and the triangular `R` are updated with Givens rotations.
//! At the solution `H x + g = A_eq' ν + A_in' μ` with `μ >= 0`.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_ITER: usize = 200;
/// Relative Tikhonov term added to the Hessian diagonal.
pub const REGULARIZATION: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    pub warm_start: Option<DVector<f64>>,
}

impl QpProblem {
    pub fn new(
        h: DMatrix<f64>,
        g: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
        a_in: DMatrix<f64>,
        b_in: DVector<f64>,
    ) -> Self {
        Self {
            h,
            g,
            a_eq,
            b_eq,
            a_in,
            b_in,
            warm_start: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn check(&self) -> Result<()> {
        let d = self.dim();
        let dims = [
            ("H rows", self.h.nrows(), d),
            ("H cols", self.h.ncols(), d),
            ("A_eq cols", self.a_eq.ncols(), d),
            ("b_eq", self.b_eq.len(), self.a_eq.nrows()),
            ("A_in cols", self.a_in.ncols(), d),
            ("b_in", self.b_in.len(), self.a_in.nrows()),
        ];
        for (what, got, expected) in dims {
            if got != expected {
                return Err(Error::Dimension { what, expected, got });
            }
        }
        let asym = (&self.h - self.h.transpose()).amax();
        if asym > 1e-10 * (1.0 + self.h.amax()) {
            return Err(Error::Dimension {
                what: "symmetric H",
                expected: 0,
                got: 1,
            });
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    /// Plain-text dump: a `qp d e i` header followed by row-major blocks.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "qp {} {} {}", self.dim(), self.b_eq.len(), self.b_in.len());
        let mut block = |name: &str, m: &DMatrix<f64>| {
            let _ = writeln!(s, "{name}");
            for r in 0..m.nrows() {
                let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:e}")).collect();
                let _ = writeln!(s, "{}", row.join(" "));
            }
        };
        block("H", &self.h);
        block("g", &DMatrix::from_row_slice(1, self.dim(), self.g.as_slice()));
        block("A_eq", &self.a_eq);
        block(
            "b_eq",
            &DMatrix::from_row_slice(1, self.b_eq.len(), self.b_eq.as_slice()),
        );
        block("A_in", &self.a_in);
        block(
            "b_in",
            &DMatrix::from_row_slice(1, self.b_in.len(), self.b_in.as_slice()),
        );
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Scenario(format!("qp dump: {m}"));
        let mut lines = text.lines();
        let header: Vec<usize> = lines
            .next()
            .and_then(|l| l.strip_prefix("qp "))
            .ok_or_else(|| bad("missing header"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad("bad header")))
            .collect::<Result<_>>()?;
        let [d, e, i] = header[..] else {
            return Err(bad("header needs d e i"));
        };
        let mut read = |name: &str, rows: usize, cols: usize| -> Result<DMatrix<f64>> {
            if lines.next() != Some(name) {
                return Err(bad(&format!("expected block {name}")));
            }
            let mut m = DMatrix::zeros(rows, cols);
            for r in 0..rows {
                let vals: Vec<f64> = lines
                    .next()
                    .ok_or_else(|| bad("truncated"))?
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| bad("bad number")))
                    .collect::<Result<_>>()?;
                if vals.len() != cols {
                    return Err(bad(&format!("row of {name} has {} entries", vals.len())));
                }
                for (c, v) in vals.into_iter().enumerate() {
                    m[(r, c)] = v;
                }
            }
            Ok(m)
        };
        let h = read("H", d, d)?;
        let g = read("g", 1, d)?;
        let a_eq = read("A_eq", e, d)?;
        let b_eq = read("b_eq", 1, e)?;
        let a_in = read("A_in", i, d)?;
        let b_in = read("b_in", 1, i)?;
        Ok(Self::new(
            h,
            DVector::from_iterator(d, g.iter().copied()),
            a_eq,
            DVector::from_iterator(e, b_eq.iter().copied()),
            a_in,
            DVector::from_iterator(i, b_in.iter().copied()),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub eq_duals: DVector<f64>,
    /// Zero for inactive inequalities.
    pub in_duals: DVector<f64>,
    /// Indices of active inequalities.
    pub active: Vec<usize>,
    pub status: QpStatus,
    pub iterations: usize,
    pub solve_time: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Con {
    Eq(usize),
    In(usize),
}

#[derive(Debug, Clone)]
pub struct QpSolver {
    pub max_iter: usize,
    /// Inequality violation accepted as satisfied.
    pub feas_tol: f64,
}

impl Default for QpSolver {
    fn default() -> Self {
        Self {
            max_iter: DEFAULT_MAX_ITER,
            feas_tol: 1e-10,
        }
    }
}

/// Factorized state of the dual method.
#[derive(Clone)]
struct Factor {
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    iq: usize,
    r_norm: f64,
    act: Vec<Con>,
    /// Multipliers of `act`, plus the pending constraint at index `iq`.
    u: Vec<f64>,
    x: DVector<f64>,
}

struct Normals {
    eq: DMatrix<f64>,
    inq: DMatrix<f64>,
}

impl Normals {
    fn col(&self, c: Con) -> nalgebra::DVectorView<'_, f64> {
        match c {
            Con::Eq(i) => self.eq.column(i),
            Con::In(i) => self.inq.column(i),
        }
    }
}

impl Factor {
    fn n(&self) -> usize {
        self.x.len()
    }

    fn d_of(&self, np: &nalgebra::DVectorView<f64>) -> DVector<f64> {
        self.j.tr_mul(np)
    }

    fn z_of(&self, d: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        let mut z = DVector::zeros(n);
        for k in self.iq..n {
            z.axpy(d[k], &self.j.column(k), 1.0);
        }
        z
    }

    fn r_of(&self, d: &DVector<f64>) -> Vec<f64> {
        let iq = self.iq;
        let mut r = vec![0.0; iq];
        for i in (0..iq).rev() {
            let mut sum = 0.0;
            for (jj, rj) in r.iter().enumerate().take(iq).skip(i + 1) {
                sum += self.r[(i, jj)] * rj;
            }
            r[i] = (d[i] - sum) / self.r[(i, i)];
        }
        r
    }

    fn add(&mut self, d: &mut DVector<f64>) -> bool {
        let n = self.n();
        let dnorm = d.norm();
        for jj in ((self.iq + 1)..n).rev() {
            let mut cc = d[jj - 1];
            let mut ss = d[jj];
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            d[jj] = 0.0;
            ss /= h;
            cc /= h;
            if cc < 0.0 {
                cc = -cc;
                ss = -ss;
                d[jj - 1] = -h;
            } else {
                d[jj - 1] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in 0..n {
                let t1 = self.j[(k, jj - 1)];
                let t2 = self.j[(k, jj)];
                self.j[(k, jj - 1)] = t1 * cc + t2 * ss;
                self.j[(k, jj)] = xny * (t1 + self.j[(k, jj - 1)]) - t2;
            }
        }
        self.iq += 1;
        for i in 0..self.iq {
            self.r[(i, self.iq - 1)] = d[i];
        }
        let diag = d[self.iq - 1].abs();
        if diag <= f64::EPSILON * self.r_norm || diag <= 1e-10 * dnorm {
            return false;
        }
        self.r_norm = self.r_norm.max(diag);
        true
    }

    fn delete(&mut self, qq: usize) {
        let n = self.n();
        let iq = self.iq;
        for i in qq..iq - 1 {
            self.act[i] = self.act[i + 1];
            self.u[i] = self.u[i + 1];
            for jj in 0..n {
                self.r[(jj, i)] = self.r[(jj, i + 1)];
            }
        }
        self.act.truncate(iq - 1);
        self.u[iq - 1] = self.u[iq];
        self.u[iq] = 0.0;
        for jj in 0..iq {
            self.r[(jj, iq - 1)] = 0.0;
        }
        self.iq -= 1;
        let iq = self.iq;
        if iq == 0 {
            return;
        }
        for jj in qq..iq {
            let mut cc = self.r[(jj, jj)];
            let mut ss = self.r[(jj + 1, jj)];
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            cc /= h;
            ss /= h;
            self.r[(jj + 1, jj)] = 0.0;
            if cc < 0.0 {
                self.r[(jj, jj)] = -h;
                cc = -cc;
                ss = -ss;
            } else {
                self.r[(jj, jj)] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in (jj + 1)..iq {
                let t1 = self.r[(jj, k)];
                let t2 = self.r[(jj + 1, k)];
                self.r[(jj, k)] = t1 * cc + t2 * ss;
                self.r[(jj + 1, k)] = xny * (t1 + self.r[(jj, k)]) - t2;
            }
            for k in 0..n {
                let t1 = self.j[(k, jj)];
                let t2 = self.j[(k, jj + 1)];
                self.j[(k, jj)] = t1 * cc + t2 * ss;
                self.j[(k, jj + 1)] = xny * (self.j[(k, jj)] + t1) - t2;
            }
        }
    }

    /// Adds a constraint as an equality (full step onto its boundary).
    /// Returns false when it is linearly dependent on the active set.
    fn add_equality(&mut self, c: Con, normals: &Normals, b: f64) -> bool {
        let np = normals.col(c);
        let mut d = self.d_of(&np);
        let z = self.z_of(&d);
        let r = self.r_of(&d);
        let zn = z.dot(&np);
        let t2 = if z.norm_squared() > f64::EPSILON && zn.abs() > 0.0 {
            (-np.dot(&self.x) - b) / zn
        } else {
            0.0
        };
        let saved = (
            self.x.clone(),
            self.u.clone(),
            self.j.clone(),
            self.r.clone(),
            self.iq,
            self.r_norm,
        );
        self.x.axpy(t2, &z, 1.0);
        self.u[self.iq] = t2;
        for (k, rk) in r.iter().enumerate() {
            self.u[k] -= t2 * rk;
        }
        if self.add(&mut d) {
            self.act.push(c);
            true
        } else {
            (self.x, self.u, self.j, self.r, self.iq, self.r_norm) = saved;
            false
        }
    }
}

pub fn solve_qp(p: &QpProblem) -> QpSolution {
    QpSolver::default().solve(p)
}

impl QpSolver {
    pub fn solve(&self, p: &QpProblem) -> QpSolution {
        let start = Instant::now();
        let n = p.dim();
        let me = p.b_eq.len();
        let mi = p.b_in.len();
        let fail = |status, x: DVector<f64>, iterations| QpSolution {
            x,
            eq_duals: DVector::zeros(me),
            in_duals: DVector::zeros(mi),
            active: Vec::new(),
            status,
            iterations,
            solve_time: start.elapsed(),
        };
        if p.check().is_err() {
            return fail(QpStatus::Infeasible, DVector::zeros(n), 0);
        }

        let Some(chol) = regularized_cholesky(&p.h) else {
            return fail(QpStatus::Infeasible, DVector::zeros(n), 0);
        };
        let l = chol.l();
        let linv = l
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .expect("cholesky factor has a positive diagonal");
        let normals = Normals {
            eq: p.a_eq.transpose(),
            inq: p.a_in.transpose(),
        };
        let fresh = Factor {
            j: linv.transpose(),
            r: DMatrix::zeros(n, n),
            iq: 0,
            r_norm: 1.0,
            act: Vec::with_capacity(n),
            u: vec![0.0; n + 1],
            x: -chol.solve(&p.g),
        };

        // Rows that are rounding noise next to the largest equality row are
        // treated as zero rows.
        let eq_scale = (0..me).map(|i| p.a_eq.row(i).norm()).fold(0.0, f64::max);
        let negligible: Vec<bool> = (0..me).map(|i| p.a_eq.row(i).norm() <= 1e-12 * eq_scale).collect();
        if (0..me).any(|i| negligible[i] && p.b_eq[i].abs() > 1e-9) {
            return fail(QpStatus::Infeasible, DVector::zeros(n), 0);
        }

        let mut iterations = 0;
        let mut warm = None;
        if let Some(ws) = &p.warm_start {
            if ws.len() == n {
                iterations = 1;
                warm = self.warm_factor(p, &normals, &negligible, fresh.clone(), ws);
            }
        }
        let mut f = match warm {
            Some(f) => f,
            None => {
                let mut f = fresh;
                for i in (0..me).filter(|&i| !negligible[i]) {
                    if !f.add_equality(Con::Eq(i), &normals, p.b_eq[i]) {
                        let res = normals.eq.column(i).dot(&f.x) + p.b_eq[i];
                        if res.abs() > 1e-9 * (1.0 + p.b_eq[i].abs()) {
                            return fail(QpStatus::Infeasible, f.x, iterations);
                        }
                    }
                }
                f
            }
        };

        let mut excluded = vec![false; mi];
        let status = 'outer: loop {
            // Step 1: most violated inequality.
            let mut is_active = vec![false; mi];
            for c in &f.act {
                if let Con::In(i) = c {
                    is_active[*i] = true;
                }
            }
            let mut pick: Option<(usize, f64)> = None;
            for i in 0..mi {
                if is_active[i] || excluded[i] {
                    continue;
                }
                let s = normals.inq.column(i).dot(&f.x) + p.b_in[i];
                let scale = 1.0 + p.b_in[i].abs();
                if s < -self.feas_tol * scale && pick.is_none_or(|(_, best)| s < best) {
                    pick = Some((i, s));
                }
            }
            let Some((ip, _)) = pick else { break QpStatus::Optimal };
            if iterations >= self.max_iter {
                break QpStatus::MaxIter;
            }
            iterations += 1;
            let snapshot = f.clone();
            let np = normals.inq.column(ip);
            f.u[f.iq] = 0.0;

            // Step 2: move toward feasibility of `ip`.
            loop {
                let mut d = f.d_of(&np);
                let z = f.z_of(&d);
                let r = f.r_of(&d);
                let mut t1 = f64::INFINITY;
                let mut drop = None;
                for (k, rk) in r.iter().enumerate() {
                    if matches!(f.act[k], Con::In(_)) && *rk > 0.0 {
                        let v = f.u[k] / rk;
                        if v < t1 {
                            t1 = v;
                            drop = Some(k);
                        }
                    }
                }
                let s = np.dot(&f.x) + p.b_in[ip];
                let zn = z.dot(&np);
                let t2 = if z.norm_squared() > f64::EPSILON && zn > 0.0 {
                    -s / zn
                } else {
                    f64::INFINITY
                };
                let t = t1.min(t2);
                if !t.is_finite() {
                    break 'outer QpStatus::Infeasible;
                }
                if !t2.is_finite() {
                    for (k, rk) in r.iter().enumerate() {
                        f.u[k] -= t * rk;
                    }
                    let iq = f.iq;
                    f.u[iq] += t;
                    f.delete(drop.expect("finite t1 names a constraint"));
                    continue;
                }
                f.x.axpy(t, &z, 1.0);
                for (k, rk) in r.iter().enumerate() {
                    f.u[k] -= t * rk;
                }
                let iq = f.iq;
                f.u[iq] += t;
                if t2 <= t1 {
                    if f.add(&mut d) {
                        f.act.push(Con::In(ip));
                    } else {
                        f = snapshot;
                        excluded[ip] = true;
                    }
                    break;
                }
                f.delete(drop.expect("partial step names a constraint"));
                if iterations >= self.max_iter {
                    break 'outer QpStatus::MaxIter;
                }
                iterations += 1;
            }
        };

        let mut eq_duals = DVector::zeros(me);
        let mut in_duals = DVector::zeros(mi);
        let mut active = Vec::new();
        for (k, c) in f.act.iter().enumerate() {
            match *c {
                Con::Eq(i) => eq_duals[i] = f.u[k],
                Con::In(i) => {
                    in_duals[i] = f.u[k];
                    active.push(i);
                }
            }
        }
        active.sort_unstable();
        QpSolution {
            x: f.x,
            eq_duals,
            in_duals,
            active,
            status,
            iterations,
            solve_time: start.elapsed(),
        }
    }

    /// Factor with the equalities plus the inequalities tight at `ws`,
    /// accepted only if every multiplier of the guessed set is non-negative.
    fn warm_factor(
        &self,
        p: &QpProblem,
        normals: &Normals,
        negligible: &[bool],
        mut f: Factor,
        ws: &DVector<f64>,
    ) -> Option<Factor> {
        for i in (0..p.b_eq.len()).filter(|&i| !negligible[i]) {
            if !f.add_equality(Con::Eq(i), normals, p.b_eq[i]) {
                let res = normals.eq.column(i).dot(&f.x) + p.b_eq[i];
                if res.abs() > 1e-9 * (1.0 + p.b_eq[i].abs()) {
                    return None;
                }
            }
        }
        for i in 0..p.b_in.len() {
            let s = normals.inq.column(i).dot(ws) + p.b_in[i];
            if s.abs() <= 1e-7 * (1.0 + p.b_in[i].abs()) && !f.add_equality(Con::In(i), normals, p.b_in[i]) {
                return None;
            }
        }
        let ok = f
            .act
            .iter()
            .enumerate()
            .all(|(k, c)| matches!(c, Con::Eq(_)) || f.u[k] >= -1e-12);
        ok.then_some(f)
    }
}

fn regularized_cholesky(h: &DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let n = h.nrows();
    if n == 0 {
        return nalgebra::Cholesky::new(DMatrix::zeros(0, 0));
    }
    let tr = h.trace();
    let mut reg = if tr > 0.0 {
        REGULARIZATION * tr / n as f64
    } else {
        REGULARIZATION
    };
    for _ in 0..8 {
        let mut hr = h.clone();
        for i in 0..n {
            hr[(i, i)] += reg;
        }
        if let Some(c) = nalgebra::Cholesky::new(hr) {
            return Some(c);
        }
        reg *= 100.0;
    }
    None
}

/// KKT residuals of a solution against the original (unregularized)
/// problem: `(equality, inequality violation, stationarity, complementarity, min dual)`.
pub fn kkt_residuals(p: &QpProblem, s: &QpSolution) -> [f64; 5] {
    let eq = if p.b_eq.is_empty() {
        0.0
    } else {
        (&p.a_eq * &s.x + &p.b_eq).amax()
    };
    let slack = &p.a_in * &s.x + &p.b_in;
    let ineq = slack.iter().fold(0.0f64, |m, v| m.max(-v));
    let stat = &p.h * &s.x + &p.g - p.a_eq.tr_mul(&s.eq_duals) - p.a_in.tr_mul(&s.in_duals);
    let comp = slack
        .iter()
        .zip(s.in_duals.iter())
        .fold(0.0f64, |m, (sl, mu)| m.max((sl * mu).abs()));
    let min_dual = s.in_duals.iter().fold(0.0f64, |m, v| m.min(*v));
    [eq, ineq, stat.amax(), comp, min_dual]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> QpProblem {
        let d = g.len();
        QpProblem::new(
            h,
            g,
            DMatrix::zeros(0, d),
            DVector::zeros(0),
            DMatrix::zeros(0, d),
            DVector::zeros(0),
        )
    }

    #[test]
    fn unconstrained_minimum() {
        let p = unconstrained(DMatrix::identity(2, 2), DVector::from_row_slice(&[-1.0, -2.0]));
        let s = solve_qp(&p);
        assert_eq!(s.status, QpStatus::Optimal);
        assert_relative_eq!(s.x, DVector::from_row_slice(&[1.0, 2.0]), epsilon = 1e-8);
    }

    #[test]
    fn equality_constrained_symmetric() {
        let mut p = unconstrained(DMatrix::identity(2, 2), DVector::zeros(2));
        p.a_eq = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        p.b_eq = DVector::from_row_slice(&[-1.0]);
        let s = solve_qp(&p);
        assert_relative_eq!(s.x, DVector::from_row_slice(&[0.5, 0.5]), epsilon = 1e-9);
    }

    #[test]
    fn single_inequality_hand_kkt() {
        let mut p = unconstrained(DMatrix::identity(2, 2), DVector::from_row_slice(&[-2.0, 0.0]));
        p.a_in = DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]);
        p.b_in = DVector::from_row_slice(&[1.0]);
        let s = solve_qp(&p);
        assert_eq!(s.status, QpStatus::Optimal);
        assert_relative_eq!(s.x, DVector::from_row_slice(&[1.0, 0.0]), epsilon = 1e-8);
        // Regularization shifts the multiplier by O(1e-9).
        assert_relative_eq!(s.in_duals[0], 1.0, epsilon = 1e-7);
        assert_eq!(s.active, vec![0]);
    }

    #[test]
    fn infeasible_detected() {
        let mut p = unconstrained(DMatrix::identity(1, 1), DVector::zeros(1));
        p.a_in = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        p.b_in = DVector::from_row_slice(&[-2.0, 1.0]); // x >= 2 and x <= 1
        assert_eq!(solve_qp(&p).status, QpStatus::Infeasible);

        let mut p = unconstrained(DMatrix::identity(2, 2), DVector::zeros(2));
        p.a_eq = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        p.b_eq = DVector::from_row_slice(&[-1.0, -3.0]);
        assert_eq!(solve_qp(&p).status, QpStatus::Infeasible);
    }

    #[test]
    fn redundant_equalities_are_tolerated() {
        let mut p = unconstrained(DMatrix::identity(2, 2), DVector::zeros(2));
        p.a_eq = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        p.b_eq = DVector::from_row_slice(&[-1.0, -2.0]);
        let s = solve_qp(&p);
        assert_eq!(s.status, QpStatus::Optimal);
        assert_relative_eq!(s.x, DVector::from_row_slice(&[0.5, 0.5]), epsilon = 1e-9);
    }

    #[test]
    fn iteration_cap_reports_max_iter() {
        let mut p = unconstrained(DMatrix::identity(3, 3), DVector::from_row_slice(&[-5.0, -5.0, -5.0]));
        p.a_in = -DMatrix::identity(3, 3);
        p.b_in = DVector::from_element(3, 1.0);
        let solver = QpSolver {
            max_iter: 1,
            ..Default::default()
        };
        assert_eq!(solver.solve(&p).status, QpStatus::MaxIter);
    }

    #[test]
    fn text_dump_round_trips() {
        let mut p = unconstrained(DMatrix::identity(2, 2), DVector::from_row_slice(&[-2.0, 0.25]));
        p.a_in = DMatrix::from_row_slice(1, 2, &[-1.0, 0.5]);
        p.b_in = DVector::from_row_slice(&[1.0]);
        let text = p.to_text();
        assert!(text.starts_with("qp 2 0 1\n"));
        assert_eq!(QpProblem::from_text(&text).unwrap(), p);
    }
}
