//! Dense two-phase simplex for desk-scale linear programs.
//!
//! Canonical form is `max c·z  s.t.  A z <= d, z >= 0`. The parametric form
//! `A z <= B x + offset` keeps the right-hand side a linear function of a
//! supply vector `x`, so optimal duals give supergradients of the value
//! function in `x`.

use crate::model::dot;
use crate::Error;

/// Entering-candidate threshold for reduced costs.
const COST_TOL: f64 = 1e-10;
/// Minimum pivot magnitude in the ratio test.
const PIVOT_TOL: f64 = 1e-9;
/// Slack added when re-optimizing over an optimal face.
pub const FACE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// `max c·z  s.t.  A z <= B x + offset, z >= 0`, parametrized by `x`.
#[derive(Debug, Clone)]
pub struct ParametricLP {
    /// Constraint matrix, `rows x vars`.
    pub a: Vec<Vec<f64>>,
    /// Supply matrix, `rows x params`; maps the parameter vector into the rhs.
    pub b: Vec<Vec<f64>>,
    /// Constant rhs offset, one entry per row.
    pub offset: Vec<f64>,
    /// Objective, one entry per variable.
    pub c: Vec<f64>,
}

impl ParametricLP {
    pub fn fixed(a: Vec<Vec<f64>>, d: Vec<f64>, c: Vec<f64>) -> Self {
        let b = vec![Vec::new(); a.len()];
        ParametricLP { a, b, offset: d, c }
    }

    pub fn rows(&self) -> usize {
        self.a.len()
    }

    pub fn vars(&self) -> usize {
        self.c.len()
    }

    pub fn params(&self) -> usize {
        self.b.first().map_or(0, |r| r.len())
    }

    pub fn rhs(&self, x: &[f64]) -> Vec<f64> {
        self.offset
            .iter()
            .zip(&self.b)
            .map(|(o, row)| o + dot(row, x))
            .collect()
    }

    fn check_dims(&self, x: &[f64]) -> Result<(), Error> {
        if self.a.len() != self.offset.len() || self.a.len() != self.b.len() {
            return Err(Error::DimensionMismatch("LP row counts disagree".into()));
        }
        for row in &self.a {
            if row.len() != self.c.len() {
                return Err(Error::DimensionMismatch("LP column counts disagree".into()));
            }
        }
        for row in &self.b {
            if row.len() != x.len() {
                return Err(Error::DimensionMismatch(format!(
                    "LP expects {} parameters, got {}",
                    row.len(),
                    x.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LPSolution {
    pub status: LpStatus,
    /// Primal point, empty unless optimal.
    pub primal: Vec<f64>,
    pub value: f64,
    /// Row duals, nonnegative, empty unless optimal.
    pub dual: Vec<f64>,
}

impl LPSolution {
    pub fn optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    fn non_optimal(status: LpStatus) -> Self {
        LPSolution {
            status,
            primal: Vec::new(),
            value: f64::NAN,
            dual: Vec::new(),
        }
    }
}

/// Solves the parametric program at supply `x`.
pub fn solve(lp: &ParametricLP, x: &[f64]) -> Result<LPSolution, Error> {
    lp.check_dims(x)?;
    solve_standard(&lp.a, &lp.rhs(x), &lp.c)
}

/// Supergradient of the LP value function at the solved point: `Bᵀπ`.
pub fn supergradient_from_dual(lp: &ParametricLP, solution: &LPSolution) -> Result<Vec<f64>, Error> {
    if !solution.optimal() {
        return Err(Error::NumericalFailure(
            "supergradient requires an optimal solution".into(),
        ));
    }
    let m = lp.params();
    let mut g = vec![0.0; m];
    for (row, pi) in lp.b.iter().zip(&solution.dual) {
        for (j, coef) in row.iter().enumerate() {
            g[j] += coef * pi;
        }
    }
    Ok(g)
}

/// Minimizes `secondary` over the optimal face `{c·z >= fixed_value - FACE_TOL}`.
pub fn optimize_over_optimal_face(
    lp: &ParametricLP,
    x: &[f64],
    secondary: &[f64],
    fixed_value: f64,
) -> Result<LPSolution, Error> {
    lp.check_dims(x)?;
    if secondary.len() != lp.vars() {
        return Err(Error::DimensionMismatch(
            "secondary objective length mismatch".into(),
        ));
    }
    let mut a = lp.a.clone();
    let mut d = lp.rhs(x);
    a.push(lp.c.iter().map(|v| -v).collect());
    d.push(-(fixed_value - FACE_TOL));
    let negated: Vec<f64> = secondary.iter().map(|v| -v).collect();
    let mut sol = solve_standard(&a, &d, &negated)?;
    if sol.optimal() {
        sol.value = dot(&lp.c, &sol.primal);
        sol.dual.pop();
    }
    Ok(sol)
}

/// Incremental builder for ad-hoc programs in canonical form.
#[derive(Debug, Clone)]
pub(crate) struct LpBuilder {
    nvars: usize,
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    objective: Vec<f64>,
}

impl LpBuilder {
    pub fn new(nvars: usize) -> Self {
        LpBuilder {
            nvars,
            rows: Vec::new(),
            rhs: Vec::new(),
            objective: vec![0.0; nvars],
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    /// Adds a fresh variable and returns its index.
    pub fn add_var(&mut self, objective: f64) -> usize {
        self.nvars += 1;
        for row in &mut self.rows {
            row.push(0.0);
        }
        self.objective.push(objective);
        self.nvars - 1
    }

    pub fn set_objective(&mut self, var: usize, coef: f64) {
        self.objective[var] = coef;
    }

    pub fn add_le(&mut self, terms: &[(usize, f64)], rhs: f64) {
        let mut row = vec![0.0; self.nvars];
        for &(j, v) in terms {
            row[j] += v;
        }
        self.rows.push(row);
        self.rhs.push(rhs);
    }

    pub fn add_ge(&mut self, terms: &[(usize, f64)], rhs: f64) {
        let neg: Vec<(usize, f64)> = terms.iter().map(|&(j, v)| (j, -v)).collect();
        self.add_le(&neg, -rhs);
    }

    pub fn add_eq(&mut self, terms: &[(usize, f64)], rhs: f64) {
        self.add_le(terms, rhs);
        self.add_ge(terms, rhs);
    }

    /// Solves `max objective` over the accumulated rows.
    pub fn solve(&self) -> Result<LPSolution, Error> {
        solve_standard(&self.rows, &self.rhs, &self.objective)
    }
}

/// Solves `max c·z  s.t.  A z <= d, z >= 0` with the two-phase simplex.
///
/// Solutions are verified against the original data; a run whose basis
/// drifted infeasible is retried under Bland's rule from the first pivot.
pub fn solve_standard(a: &[Vec<f64>], d: &[f64], c: &[f64]) -> Result<LPSolution, Error> {
    let sol = Tableau::new(a, d, c, false).run()?;
    if solution_consistent(&sol, a, d, c) {
        return Ok(sol);
    }
    let sol = Tableau::new(a, d, c, true).run()?;
    if solution_consistent(&sol, a, d, c) {
        return Ok(sol);
    }
    Err(Error::NumericalFailure(
        "simplex basis verification failed twice".into(),
    ))
}

fn solution_consistent(sol: &LPSolution, a: &[Vec<f64>], d: &[f64], c: &[f64]) -> bool {
    if !sol.optimal() {
        return true;
    }
    for (row, &di) in a.iter().zip(d) {
        if dot(row, &sol.primal) > di + 1e-7 * (1.0 + di.abs()) {
            return false;
        }
    }
    // Weak-duality sanity: the dual value must not deviate from the primal.
    let dual_value = dot(d, &sol.dual);
    if (dual_value - sol.value).abs() > 1e-6 * (1.0 + sol.value.abs() + dual_value.abs()) {
        return false;
    }
    for j in 0..c.len() {
        let reduced: f64 = (0..a.len()).map(|i| a[i][j] * sol.dual[i]).sum();
        if reduced < c[j] - 1e-6 * (1.0 + c[j].abs()) {
            return false;
        }
    }
    true
}

struct Tableau {
    /// Constraint rows over [vars | slacks | artificials | rhs].
    rows: Vec<Vec<f64>>,
    /// Original constraint index of each surviving row.
    row_ids: Vec<usize>,
    /// Objective row in reduced-cost form (`z_j - c_j`).
    obj: Vec<f64>,
    basis: Vec<usize>,
    n: usize,
    m: usize,
    n_art: usize,
    /// Rows multiplied by -1 to make the initial rhs nonnegative.
    flipped: Vec<bool>,
    c: Vec<f64>,
    a_orig: Vec<Vec<f64>>,
    d_orig: Vec<f64>,
    pivots: usize,
    bland: bool,
    pivot_budget: usize,
    pivot_cap: usize,
}

impl Tableau {
    fn new(a: &[Vec<f64>], d: &[f64], c: &[f64], bland: bool) -> Self {
        let m = a.len();
        let n = c.len();
        let flipped: Vec<bool> = d.iter().map(|&v| v < 0.0).collect();
        let n_art = flipped.iter().filter(|&&f| f).count();
        let width = n + m + n_art + 1;
        let mut rows = Vec::with_capacity(m);
        let mut basis = Vec::with_capacity(m);
        let mut art = 0;
        for i in 0..m {
            let sign = if flipped[i] { -1.0 } else { 1.0 };
            let mut row = vec![0.0; width];
            for j in 0..n {
                row[j] = sign * a[i][j];
            }
            row[n + i] = sign;
            row[width - 1] = sign * d[i];
            if flipped[i] {
                row[n + m + art] = 1.0;
                basis.push(n + m + art);
                art += 1;
            } else {
                basis.push(n + i);
            }
            rows.push(row);
        }
        let size = m + n + 10;
        Tableau {
            rows,
            row_ids: (0..m).collect(),
            obj: vec![0.0; width],
            basis,
            n,
            m,
            n_art,
            flipped,
            c: c.to_vec(),
            a_orig: a.to_vec(),
            d_orig: d.to_vec(),
            pivots: 0,
            bland,
            pivot_budget: 50 * size,
            pivot_cap: 400 * size + 4000,
        }
    }

    fn width(&self) -> usize {
        self.n + self.m + self.n_art + 1
    }

    fn is_artificial(&self, col: usize) -> bool {
        col >= self.n + self.m
    }

    fn run(&mut self) -> Result<LPSolution, Error> {
        if self.n_art > 0 {
            // Phase 1: minimize the artificial sum.
            let width = self.width();
            let mut obj = vec![0.0; width];
            for col in self.n + self.m..width - 1 {
                obj[col] = 1.0;
            }
            self.obj = obj;
            for r in 0..self.rows.len() {
                if self.is_artificial(self.basis[r]) {
                    let row = self.rows[r].clone();
                    for (o, v) in self.obj.iter_mut().zip(&row) {
                        *o -= v;
                    }
                }
            }
            match self.iterate(true)? {
                LpStatus::Optimal => {}
                status => return Ok(LPSolution::non_optimal(status)),
            }
            let infeas = -self.obj[self.width() - 1];
            if infeas > 1e-7 {
                return Ok(LPSolution::non_optimal(LpStatus::Infeasible));
            }
            self.evict_artificials();
        }

        // Phase 2 over the original objective.
        let width = self.width();
        let mut obj = vec![0.0; width];
        for j in 0..self.n {
            obj[j] = -self.c[j];
        }
        self.obj = obj;
        for r in 0..self.rows.len() {
            let coef = self.obj[self.basis[r]];
            if coef != 0.0 {
                let row = self.rows[r].clone();
                for (o, v) in self.obj.iter_mut().zip(&row) {
                    *o -= coef * v;
                }
            }
        }
        match self.iterate(false)? {
            LpStatus::Optimal => Ok(self.extract()),
            status => Ok(LPSolution::non_optimal(status)),
        }
    }

    fn iterate(&mut self, phase1: bool) -> Result<LpStatus, Error> {
        loop {
            let Some(entering) = self.pick_entering(phase1) else {
                return Ok(LpStatus::Optimal);
            };
            let Some(leaving) = self.pick_leaving(entering) else {
                return Ok(LpStatus::Unbounded);
            };
            self.pivot(leaving, entering);
            self.pivots += 1;
            if self.pivots > self.pivot_budget {
                self.bland = true;
            }
            if self.pivots > self.pivot_cap {
                return Err(Error::NumericalFailure(
                    "simplex exceeded its pivot cap".into(),
                ));
            }
        }
    }

    fn pick_entering(&self, phase1: bool) -> Option<usize> {
        let last = self.width() - 1;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..last {
            if !phase1 && self.is_artificial(j) {
                continue;
            }
            let r = self.obj[j];
            if r < -COST_TOL {
                if self.bland {
                    return Some(j);
                }
                if best.map_or(true, |(_, b)| r < b) {
                    best = Some((j, r));
                }
            }
        }
        best.map(|(j, _)| j)
    }

    fn pick_leaving(&self, entering: usize) -> Option<usize> {
        let last = self.width() - 1;
        let mut best: Option<(usize, f64)> = None;
        for (r, row) in self.rows.iter().enumerate() {
            let coef = row[entering];
            if coef > PIVOT_TOL {
                let ratio = (row[last].max(0.0)) / coef;
                let better = match best {
                    None => true,
                    Some((br, bratio)) => {
                        if ratio < bratio - 1e-12 {
                            true
                        } else if ratio < bratio + 1e-12 {
                            if self.bland {
                                self.basis[r] < self.basis[br]
                            } else {
                                // Larger pivots keep the update stable.
                                coef > self.rows[br][entering]
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    best = Some((r, ratio));
                }
            }
        }
        best.map(|(r, _)| r)
    }

    fn pivot(&mut self, r: usize, col: usize) {
        let width = self.width();
        let piv = self.rows[r][col];
        for v in self.rows[r].iter_mut() {
            *v /= piv;
        }
        let prow = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let factor = row[col];
            if factor != 0.0 {
                for j in 0..width {
                    row[j] -= factor * prow[j];
                }
                row[col] = 0.0;
            }
        }
        let factor = self.obj[col];
        if factor != 0.0 {
            for j in 0..width {
                self.obj[j] -= factor * prow[j];
            }
            self.obj[col] = 0.0;
        }
        self.basis[r] = col;
    }

    /// Pivots basic artificials out after phase 1, dropping redundant rows.
    fn evict_artificials(&mut self) {
        let mut r = 0;
        while r < self.rows.len() {
            if self.is_artificial(self.basis[r]) {
                let mut entering = None;
                for j in 0..self.n + self.m {
                    if self.rows[r][j].abs() > PIVOT_TOL {
                        entering = Some(j);
                        break;
                    }
                }
                match entering {
                    Some(j) => {
                        self.pivot(r, j);
                        r += 1;
                    }
                    None => {
                        self.rows.remove(r);
                        self.basis.remove(r);
                        self.row_ids.remove(r);
                    }
                }
            } else {
                r += 1;
            }
        }
    }

    /// Recomputes primal and dual values from the final basis with a fresh
    /// factorization of the original data, so the answer does not inherit
    /// pivot drift from the tableau.
    fn extract(&self) -> LPSolution {
        let k = self.rows.len();
        let mut basis_cols: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut cb = Vec::with_capacity(k);
        for &col in &self.basis {
            let mut column = vec![0.0; k];
            if col < self.n {
                for (r, &orig) in self.row_ids.iter().enumerate() {
                    column[r] = self.a_orig[orig][col];
                }
                cb.push(self.c[col]);
            } else if col < self.n + self.m {
                let constraint = col - self.n;
                if let Some(r) = self.row_ids.iter().position(|&orig| orig == constraint) {
                    column[r] = 1.0;
                }
                cb.push(0.0);
            } else {
                // Leftover artificial basic at zero: column -e_i in original
                // orientation (it was introduced on a flipped row).
                if let Some(r) = (0..k).find(|&r| {
                    let orig = self.row_ids[r];
                    self.flipped[orig] && self.artificial_row(col) == Some(orig)
                }) {
                    column[r] = -1.0;
                }
                cb.push(0.0);
            }
            basis_cols.push(column);
        }
        let rhs: Vec<f64> = self.row_ids.iter().map(|&orig| self.d_orig[orig]).collect();

        let xb = lu_solve(&basis_cols, &rhs, false);
        let pi_rows = lu_solve(&basis_cols, &cb, true);

        let (xb, pi_rows) = match (xb, pi_rows) {
            (Some(x), Some(p)) => (x, p),
            // Fall back to tableau values when the basis matrix is too
            // ill-conditioned to refactor.
            _ => (
                (0..k).map(|r| self.rows[r][self.width() - 1]).collect(),
                vec![0.0; k],
            ),
        };

        let mut primal = vec![0.0; self.n];
        for (r, &col) in self.basis.iter().enumerate() {
            if col < self.n {
                primal[col] = xb[r].max(0.0);
            }
        }
        let mut dual = vec![0.0; self.m];
        for (r, &orig) in self.row_ids.iter().enumerate() {
            dual[orig] = pi_rows[r].max(0.0);
        }
        let value = dot(&self.c, &primal);
        LPSolution {
            status: LpStatus::Optimal,
            primal,
            value,
            dual,
        }
    }

    /// Original row an artificial column was created on.
    fn artificial_row(&self, col: usize) -> Option<usize> {
        let mut art = 0;
        for (i, &f) in self.flipped.iter().enumerate() {
            if f {
                if self.n + self.m + art == col {
                    return Some(i);
                }
                art += 1;
            }
        }
        None
    }
}

/// Solves `M v = rhs` (or `Mᵀ v = rhs` when `transpose`) by LU with partial
/// pivoting; columns of `M` are given as `cols`.
fn lu_solve(cols: &[Vec<f64>], rhs: &[f64], transpose: bool) -> Option<Vec<f64>> {
    let k = cols.len();
    let mut m = vec![vec![0.0; k]; k];
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            if transpose {
                m[j][i] = v;
            } else {
                m[i][j] = v;
            }
        }
    }
    let mut b = rhs.to_vec();
    for col in 0..k {
        let mut piv = col;
        for r in col + 1..k {
            if m[r][col].abs() > m[piv][col].abs() {
                piv = r;
            }
        }
        if m[piv][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..k {
            let f = m[r][col] / m[col][col];
            if f != 0.0 {
                for j in col..k {
                    m[r][j] -= f * m[col][j];
                }
                b[r] -= f * b[col];
            }
        }
    }
    for col in (0..k).rev() {
        let mut v = b[col];
        for j in col + 1..k {
            v -= m[col][j] * b[j];
        }
        b[col] = v / m[col][col];
    }
    Some(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(a: Vec<Vec<f64>>, d: Vec<f64>, c: Vec<f64>) -> LPSolution {
        solve_standard(&a, &d, &c).unwrap()
    }

    #[test]
    fn identity_cap() {
        // max z s.t. z <= 3
        let sol = small(vec![vec![1.0]], vec![3.0], vec![1.0]);
        assert!(sol.optimal());
        assert!((sol.value - 3.0).abs() < 1e-9);
        assert!((sol.dual[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn matching_cap_picks_best_good() {
        // max v·z s.t. z <= x, sum z <= 1 with v = (1, 2.5, 0.7), x = 1.
        let a = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 1.0, 1.0],
        ];
        let sol = small(a, vec![1.0, 1.0, 1.0, 1.0], vec![1.0, 2.5, 0.7]);
        assert!((sol.value - 2.5).abs() < 1e-9);
    }

    #[test]
    fn infeasible_detected() {
        // z <= -1 with z >= 0 is infeasible.
        let sol = small(vec![vec![1.0], vec![-1.0]], vec![-1.0, -2.0], vec![1.0]);
        assert_eq!(sol.status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_detected() {
        let sol = small(vec![vec![-1.0]], vec![1.0], vec![1.0]);
        assert_eq!(sol.status, LpStatus::Unbounded);
    }

    #[test]
    fn negative_rhs_feasible() {
        // max -z1 - z2 s.t. -z1 - z2 <= -2  (i.e. z1 + z2 >= 2)
        let sol = small(vec![vec![-1.0, -1.0]], vec![-2.0], vec![-1.0, -1.0]);
        assert!(sol.optimal());
        assert!((sol.value + 2.0).abs() < 1e-9);
        assert!((sol.dual[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn parametric_supergradient_identity() {
        // max z s.t. z <= x1, at x1 = 3: g = (1).
        let lp = ParametricLP {
            a: vec![vec![1.0]],
            b: vec![vec![1.0]],
            offset: vec![0.0],
            c: vec![1.0],
        };
        let sol = solve(&lp, &[3.0]).unwrap();
        assert!((sol.value - 3.0).abs() < 1e-9);
        let g = supergradient_from_dual(&lp, &sol).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_face_secondary() {
        // max 0 s.t. z1 + z2 <= 1; secondary min z1 picks z1 = 0.
        let lp = ParametricLP::fixed(vec![vec![1.0, 1.0]], vec![1.0], vec![0.0, 0.0]);
        let face = optimize_over_optimal_face(&lp, &[], &[1.0, 0.0], 0.0).unwrap();
        assert!(face.optimal());
        assert!(face.primal[0].abs() < 1e-9);
    }

    #[test]
    fn face_infeasible_above_optimum() {
        let lp = ParametricLP::fixed(vec![vec![1.0]], vec![1.0], vec![1.0]);
        let face = optimize_over_optimal_face(&lp, &[], &[1.0], 2.0).unwrap();
        assert_eq!(face.status, LpStatus::Infeasible);
    }

    #[test]
    fn duality_invariants_on_dense_instances() {
        // Deterministic pseudo-random dense LPs; check strong duality and
        // complementary slackness on every optimal solve.
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut solved = 0;
        for _ in 0..60 {
            let m = 2 + (next() * 5.0) as usize;
            let n = 2 + (next() * 5.0) as usize;
            let a: Vec<Vec<f64>> = (0..m)
                .map(|_| (0..n).map(|_| next() * 4.0 - 1.0).collect())
                .collect();
            let d: Vec<f64> = (0..m).map(|_| next() * 3.0 - 0.5).collect();
            let c: Vec<f64> = (0..n).map(|_| next() * 2.0 - 0.5).collect();
            let sol = solve_standard(&a, &d, &c).unwrap();
            if !sol.optimal() {
                continue;
            }
            solved += 1;
            // Primal feasibility.
            for (row, &di) in a.iter().zip(&d) {
                assert!(dot(row, &sol.primal) <= di + 1e-9);
            }
            // Dual feasibility: Aᵀπ >= c - 1e-9.
            for j in 0..n {
                let atj: f64 = (0..m).map(|i| a[i][j] * sol.dual[i]).sum();
                assert!(atj >= c[j] - 1e-9, "dual infeasible at col {j}");
            }
            // Strong duality.
            let dual_val = dot(&d, &sol.dual);
            assert!(
                (sol.value - dual_val).abs() <= 1e-7 * (1.0 + sol.value.abs()),
                "gap {} vs {}",
                sol.value,
                dual_val
            );
            // Complementary slackness.
            for i in 0..m {
                let slack = d[i] - dot(&a[i], &sol.primal);
                assert!(sol.dual[i] * slack <= 1e-7 * (1.0 + d[i].abs()));
            }
        }
        assert!(solved > 20, "too few optimal instances: {solved}");
    }
}
