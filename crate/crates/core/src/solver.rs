//! Linear solves for the CEM system.
//!
//! The default method is Jacobi-preconditioned conjugate gradients. A dense
//! Cholesky factorization is kept as an oracle for small problems, and a
//! sparse envelope Cholesky (reverse Cuthill-McKee ordering) is available for
//! batch work where one factorization serves many right-hand sides.
//!
//! Dual-valued systems `A(w) θ = b` are solved in one of two ways:
//! * `Implicit`: solve `A θ = b` on values, then one real solve per tangent
//!   direction, `A θ̇_p = -(∂_p A) θ` (the right-hand side is constant).
//! * `Naive`: run the same CG iteration directly on duals.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ad::{Dual, Scalar};
use crate::error::{Error, Result};
use crate::sparse::{dot, SparseMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMethod {
    Cg,
    Dense,
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DualSolveMode {
    Implicit,
    Naive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Relative residual target `‖b - Ax‖ ≤ tol ‖b‖`.
    pub tolerance: f64,
    /// Iteration cap as a multiple of the system dimension.
    pub max_iter_factor: usize,
    pub method: SolverMethod,
    pub dual_mode: DualSolveMode,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iter_factor: 10,
            method: SolverMethod::Cg,
            dual_mode: DualSolveMode::Implicit,
        }
    }
}

impl SolverOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self {
            tolerance,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::Config(format!(
                "solver tolerance must lie in (0, 1), got {}",
                self.tolerance
            )));
        }
        if self.max_iter_factor == 0 {
            return Err(Error::Config("max_iter_factor must be positive".into()));
        }
        Ok(())
    }
}

/// Counts linear solves. A primal solve has a real (or, in naive mode, dual)
/// system; a tangent solve is one extra real solve for a derivative direction.
#[derive(Debug, Default)]
pub struct SolveCounters {
    primal: AtomicUsize,
    tangent: AtomicUsize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveCounts {
    pub primal: usize,
    pub tangent: usize,
}

impl SolveCounters {
    pub fn snapshot(&self) -> SolveCounts {
        SolveCounts {
            primal: self.primal.load(Ordering::Relaxed),
            tangent: self.tangent.load(Ordering::Relaxed),
        }
    }

    pub fn reset(&self) {
        self.primal.store(0, Ordering::Relaxed);
        self.tangent.store(0, Ordering::Relaxed);
    }

    fn add_primal(&self, n: usize) {
        self.primal.fetch_add(n, Ordering::Relaxed);
    }

    fn add_tangent(&self, n: usize) {
        self.tangent.fetch_add(n, Ordering::Relaxed);
    }
}

impl std::ops::Sub for SolveCounts {
    type Output = SolveCounts;
    fn sub(self, rhs: Self) -> Self {
        SolveCounts {
            primal: self.primal - rhs.primal,
            tangent: self.tangent - rhs.tangent,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
    /// The tolerance was below what double precision can certify and the
    /// iterate was accepted at the rounding floor instead.
    pub at_rounding_floor: bool,
}

/// Multiple of machine epsilon times `‖ |A||x| + |b| ‖` below which a residual
/// is indistinguishable from rounding noise.
const ROUNDING_FLOOR_FACTOR: f64 = 8.0;

fn magnitude<T: Scalar>(v: &[T]) -> f64 {
    v.iter().map(Scalar::magnitude_sq).sum::<f64>().sqrt()
}

/// Jacobi-preconditioned CG from a zero initial guess.
///
/// Convergence is declared on the recursively updated residual and then
/// confirmed on the true residual `b - Ax`; if the two disagree the
/// iteration restarts from the current iterate while budget remains. A true
/// residual at the rounding floor of `Ax` is accepted even when it exceeds
/// the requested tolerance once restarting no longer reduces it, since no
/// iterate in floating point can do much better.
pub fn pcg<T: Scalar>(
    a: &SparseMatrix<T>,
    b: &[T],
    tolerance: f64,
    max_iter: usize,
) -> Result<(Vec<T>, CgReport)> {
    let n = a.size();
    if b.len() != n {
        return Err(Error::Usage(format!(
            "right-hand side of length {} for a system of size {n}",
            b.len()
        )));
    }
    let b_norm = magnitude(b);
    if b_norm == 0.0 {
        return Ok((
            vec![T::zero(); n],
            CgReport {
                iterations: 0,
                relative_residual: 0.0,
                at_rounding_floor: false,
            },
        ));
    }
    let mut inv_diag = Vec::with_capacity(n);
    for (i, d) in a.diagonal().into_iter().enumerate() {
        if !(d.value() > 0.0) {
            return Err(Error::Singular(format!(
                "diagonal entry {i} is {} in a system expected to be positive definite",
                d.value()
            )));
        }
        inv_diag.push(T::one() / d);
    }

    let target = tolerance * b_norm;
    let mut x = vec![T::zero(); n];
    let mut r = b.to_vec();
    let mut iterations = 0;
    let mut residual = b_norm;
    let mut previous_true: Option<f64> = None;
    while iterations < max_iter {
        let mut z: Vec<T> = r.iter().zip(&inv_diag).map(|(&ri, &di)| ri * di).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        while iterations < max_iter {
            let ap = a.matvec(&p);
            let pap = dot(&p, &ap);
            if !(pap.value() > 0.0) {
                return Err(Error::Singular(format!(
                    "non-positive curvature {} encountered in CG",
                    pap.value()
                )));
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            iterations += 1;
            residual = magnitude(&r);
            if residual <= target {
                break;
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        let ax = a.matvec(&x);
        r = b.iter().zip(&ax).map(|(&bi, &yi)| bi - yi).collect();
        residual = magnitude(&r);
        // Only give up on the tolerance once a restart has stopped helping.
        let stalled = previous_true.is_some_and(|p| residual > 0.5 * p);
        let at_floor = residual > target && stalled && residual <= rounding_floor(a, &x, b);
        previous_true = Some(residual);
        if residual <= target || at_floor {
            return Ok((
                x,
                CgReport {
                    iterations,
                    relative_residual: residual / b_norm,
                    at_rounding_floor: at_floor,
                },
            ));
        }
    }
    Err(Error::Solver {
        iterations,
        residual: residual / b_norm,
    })
}

fn rounding_floor<T: Scalar>(a: &SparseMatrix<T>, x: &[T], b: &[T]) -> f64 {
    let mut acc = 0.0;
    for (i, bi) in b.iter().enumerate() {
        let mut row = bi.magnitude_sq().sqrt();
        for s in a.pattern.row(i) {
            row += (a.values[s].magnitude_sq() * x[a.pattern.columns[s]].magnitude_sq()).sqrt();
        }
        acc += row * row;
    }
    ROUNDING_FLOOR_FACTOR * f64::EPSILON * acc.sqrt()
}

/// Dense Cholesky factor of a real system; the oracle for small problems.
pub struct DenseFactor(nalgebra::Cholesky<f64, nalgebra::Dyn>);

impl DenseFactor {
    pub fn new(a: &SparseMatrix<f64>) -> Result<Self> {
        let n = a.size();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for s in a.pattern.row(i) {
                m[(i, a.pattern.columns[s])] = a.values[s];
            }
        }
        nalgebra::Cholesky::new(m)
            .map(Self)
            .ok_or_else(|| Error::Singular("system matrix is not positive definite".into()))
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.0.solve(&DVector::from_column_slice(b)).as_slice().to_vec()
    }
}

/// Sparse Cholesky factor stored by rows over the envelope (profile) of a
/// symmetric permutation of the matrix.
pub struct EnvelopeFactor {
    /// `perm[new] = old`.
    perm: Vec<usize>,
    first: Vec<usize>,
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl EnvelopeFactor {
    pub fn new(a: &SparseMatrix<f64>) -> Result<Self> {
        let n = a.size();
        let perm = reverse_cuthill_mckee(a);
        let mut inverse = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (old, &i) in inverse.iter().enumerate() {
            for s in a.pattern.row(old) {
                let j = inverse[a.pattern.columns[s]];
                if j < i {
                    first[i] = first[i].min(j);
                }
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for i in 0..n {
            offsets.push(offsets[i] + i - first[i] + 1);
        }
        let mut values = vec![0.0; offsets[n]];
        for (old, &i) in inverse.iter().enumerate() {
            for s in a.pattern.row(old) {
                let j = inverse[a.pattern.columns[s]];
                if j <= i {
                    values[offsets[i] + j - first[i]] = a.values[s];
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            for j in fi..i {
                let k0 = fi.max(first[j]);
                let row_i = &values[offsets[i] + k0 - fi..offsets[i] + j - fi];
                let row_j = &values[offsets[j] + k0 - first[j]..offsets[j] + j - first[j]];
                let s: f64 = row_i.iter().zip(row_j).map(|(x, y)| x * y).sum();
                let pivot = values[offsets[j + 1] - 1];
                let at = offsets[i] + j - fi;
                values[at] = (values[at] - s) / pivot;
            }
            let row = &values[offsets[i]..offsets[i + 1] - 1];
            let d = values[offsets[i + 1] - 1] - row.iter().map(|x| x * x).sum::<f64>();
            if !(d > 0.0) {
                return Err(Error::Singular(format!(
                    "non-positive pivot {d:e} at row {i} of the envelope factorization"
                )));
            }
            values[offsets[i + 1] - 1] = d.sqrt();
        }
        Ok(Self {
            perm,
            first,
            offsets,
            values,
        })
    }

    /// Number of stored factor entries.
    pub fn envelope_size(&self) -> usize {
        self.values.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.perm.len();
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.values[self.offsets[i]..self.offsets[i + 1] - 1];
            let s: f64 = row.iter().zip(&y[fi..i]).map(|(l, v)| l * v).sum();
            y[i] = (y[i] - s) / self.values[self.offsets[i + 1] - 1];
        }
        for i in (0..n).rev() {
            y[i] /= self.values[self.offsets[i + 1] - 1];
            let yi = y[i];
            let fi = self.first[i];
            let row = &self.values[self.offsets[i]..self.offsets[i + 1] - 1];
            for (v, l) in y[fi..i].iter_mut().zip(row) {
                *v -= l * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

/// Reverse Cuthill-McKee ordering, `perm[new] = old`. Rows much denser than
/// average (the electrode unknowns) are left out of the sweep and placed last,
/// where they cost one full envelope row each instead of widening every row.
pub fn reverse_cuthill_mckee<T>(a: &SparseMatrix<T>) -> Vec<usize> {
    let n = a.pattern.size;
    let degree: Vec<usize> = (0..n).map(|i| a.pattern.row(i).len()).collect();
    let average = a.pattern.nnz() as f64 / n.max(1) as f64;
    let dense: Vec<bool> = degree.iter().map(|&d| d as f64 > 8.0 * average.max(4.0)).collect();
    let dense = &dense;
    let neighbours = |i: usize| {
        a.pattern.columns[a.pattern.row(i)]
            .iter()
            .copied()
            .filter(move |&j| j != i && !dense[j])
    };

    // Cuthill-McKee sweep from `start`; returns the number of levels and the
    // last level.
    let bfs = |start: usize, seen: &mut [bool], order: &mut Vec<usize>| -> (usize, Vec<usize>) {
        let mut level = vec![start];
        seen[start] = true;
        order.push(start);
        let mut depth = 1;
        loop {
            let mut next_level = Vec::new();
            for &v in &level {
                let mut next: Vec<usize> = neighbours(v).filter(|&w| !seen[w]).collect();
                next.sort_by_key(|&w| (degree[w], w));
                for w in next {
                    seen[w] = true;
                    order.push(w);
                    next_level.push(w);
                }
            }
            if next_level.is_empty() {
                return (depth, level);
            }
            depth += 1;
            level = next_level;
        }
    };

    let mut seen: Vec<bool> = dense.to_vec();
    let mut order = Vec::with_capacity(n);
    for root in 0..n {
        if seen[root] {
            continue;
        }
        // Pseudo-peripheral start: move to a minimum-degree node of the last
        // level while that increases the number of levels.
        let mut start = root;
        let mut depth = 0;
        for _ in 0..8 {
            let (d, last) = bfs(start, &mut seen.clone(), &mut Vec::new());
            if d <= depth {
                break;
            }
            depth = d;
            start = *last.iter().min_by_key(|&&w| (degree[w], w)).expect("nonempty level");
        }
        bfs(start, &mut seen, &mut order);
    }
    order.reverse();
    order.extend((0..n).filter(|&i| dense[i]));
    order
}

/// Solver configuration plus the counters it reports to.
#[derive(Clone, Debug, Default)]
pub struct LinearSolver {
    pub options: SolverOptions,
    pub counters: Arc<SolveCounters>,
}

enum RealBackend<'a> {
    Cg(&'a SparseMatrix<f64>),
    Dense(DenseFactor),
    Direct(EnvelopeFactor),
}

impl LinearSolver {
    pub fn new(options: SolverOptions) -> Self {
        Self {
            options,
            counters: Arc::default(),
        }
    }

    fn max_iter(&self, n: usize) -> usize {
        self.options.max_iter_factor * n.max(1)
    }

    fn backend<'a>(&self, a: &'a SparseMatrix<f64>) -> Result<RealBackend<'a>> {
        Ok(match self.options.method {
            SolverMethod::Cg => RealBackend::Cg(a),
            SolverMethod::Dense => RealBackend::Dense(DenseFactor::new(a)?),
            SolverMethod::Direct => RealBackend::Direct(EnvelopeFactor::new(a)?),
        })
    }

    fn run(&self, backend: &RealBackend<'_>, b: &[f64]) -> Result<Vec<f64>> {
        match backend {
            RealBackend::Cg(a) => {
                pcg(a, b, self.options.tolerance, self.max_iter(a.size())).map(|(x, _)| x)
            }
            RealBackend::Dense(f) => Ok(f.solve(b)),
            RealBackend::Direct(f) => Ok(f.solve(b)),
        }
    }

    /// Real solves sharing one matrix; each right-hand side counts as a primal solve.
    pub fn solve_real(&self, a: &SparseMatrix<f64>, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let backend = self.backend(a)?;
        let out = rhs
            .iter()
            .map(|b| self.run(&backend, b))
            .collect::<Result<Vec<_>>>()?;
        self.counters.add_primal(rhs.len());
        Ok(out)
    }
}

/// Scalars whose linear systems the solver knows how to handle.
pub trait LinearSolve: Scalar {
    /// Solves `A x = b` for each constant right-hand side `b`.
    fn solve_system(
        solver: &LinearSolver,
        a: &SparseMatrix<Self>,
        rhs: &[Vec<f64>],
    ) -> Result<Vec<Vec<Self>>>;
}

impl LinearSolve for f64 {
    fn solve_system(
        solver: &LinearSolver,
        a: &SparseMatrix<f64>,
        rhs: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>> {
        solver.solve_real(a, rhs)
    }
}

impl<const N: usize> LinearSolve for Dual<N> {
    fn solve_system(
        solver: &LinearSolver,
        a: &SparseMatrix<Self>,
        rhs: &[Vec<f64>],
    ) -> Result<Vec<Vec<Self>>> {
        match solver.options.dual_mode {
            DualSolveMode::Implicit => solve_implicit(solver, a, rhs),
            DualSolveMode::Naive => {
                if solver.options.method != SolverMethod::Cg {
                    return Err(Error::Usage(
                        "naive dual solves are only available with CG".into(),
                    ));
                }
                let max_iter = solver.max_iter(a.size());
                let out = rhs
                    .iter()
                    .map(|b| {
                        let b: Vec<Self> = b.iter().map(|&x| Dual::constant(x)).collect();
                        pcg(a, &b, solver.options.tolerance, max_iter).map(|(x, _)| x)
                    })
                    .collect::<Result<Vec<_>>>()?;
                solver.counters.add_primal(rhs.len());
                Ok(out)
            }
        }
    }
}

fn solve_implicit<const N: usize>(
    solver: &LinearSolver,
    a: &SparseMatrix<Dual<N>>,
    rhs: &[Vec<f64>],
) -> Result<Vec<Vec<Dual<N>>>> {
    let values = a.value_part();
    let backend = solver.backend(&values)?;
    let derivatives: Vec<SparseMatrix<f64>> = (0..N).map(|p| a.tangent_part(p)).collect();
    let mut out = Vec::with_capacity(rhs.len());
    for b in rhs {
        let theta = solver.run(&backend, b)?;
        solver.counters.add_primal(1);
        let mut x: Vec<Dual<N>> = theta.iter().map(|&t| Dual::constant(t)).collect();
        for (p, dp) in derivatives.iter().enumerate() {
            let tangent_rhs: Vec<f64> = dp.matvec(&theta).into_iter().map(|v| -v).collect();
            let dtheta = solver.run(&backend, &tangent_rhs)?;
            solver.counters.add_tangent(1);
            for (xi, d) in x.iter_mut().zip(dtheta) {
                xi.tangent[p] = d;
            }
        }
        out.push(x);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::CsrPattern;

    fn two_by_two<T: Scalar>(values: [T; 4]) -> SparseMatrix<T> {
        SparseMatrix {
            pattern: Arc::new(CsrPattern::from_rows(vec![vec![0, 1], vec![0, 1]])),
            values: values.to_vec(),
        }
    }

    #[test]
    fn pcg_solves_two_by_two_by_hand() {
        // [4 1; 1 3] x = [1; 2]  ->  x = [1/11, 7/11]
        let a = two_by_two([4.0, 1.0, 1.0, 3.0]);
        let (x, report) = pcg(&a, &[1.0, 2.0], 1e-14, 20).unwrap();
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-14);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-14);
        assert!(report.iterations <= 2);
    }

    #[test]
    fn zero_rhs_gives_zero_solution() {
        let a = two_by_two([4.0, 1.0, 1.0, 3.0]);
        let (x, report) = pcg(&a, &[0.0, 0.0], 1e-10, 20).unwrap();
        assert_eq!(x, vec![0.0, 0.0]);
        assert_eq!(report.iterations, 0);
    }

    #[test]
    fn iteration_cap_is_reported() {
        let a = two_by_two([4.0, 1.0, 1.0, 3.0]);
        let err = pcg(&a, &[1.0, 2.0], 1e-14, 1).unwrap_err();
        assert!(matches!(err, Error::Solver { iterations: 1, .. }));
    }

    #[test]
    fn indefinite_diagonal_is_rejected() {
        let a = two_by_two([-1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(pcg(&a, &[1.0, 1.0], 1e-10, 10), Err(Error::Singular(_))));
    }

    #[test]
    fn implicit_and_naive_tangents_agree_with_hand_derivative() {
        // A(w) = [4+w 1; 1 3], b = [1; 2]; dx/dw = -A⁻¹ (dA/dw) x at w = 0.
        let w = Dual::<1>::variable(0.0, 0);
        let a = two_by_two([Dual::constant(4.0) + w, Dual::constant(1.0), Dual::constant(1.0), Dual::constant(3.0)]);
        let x0 = [1.0 / 11.0, 7.0 / 11.0];
        // A⁻¹ = 1/11 [3 -1; -1 4]; (dA/dw) x = [x0_0, 0]
        let dx = [-3.0 * x0[0] / 11.0, x0[0] / 11.0];
        for mode in [DualSolveMode::Implicit, DualSolveMode::Naive] {
            let solver = LinearSolver::new(SolverOptions {
                tolerance: 1e-14,
                dual_mode: mode,
                ..SolverOptions::default()
            });
            let x = Dual::solve_system(&solver, &a, &[vec![1.0, 2.0]]).unwrap();
            for i in 0..2 {
                assert!((x[0][i].value - x0[i]).abs() < 1e-13, "{mode:?}");
                assert!((x[0][i].tangent[0] - dx[i]).abs() < 1e-12, "{mode:?}");
            }
        }
    }

    #[test]
    fn implicit_mode_counts_one_tangent_solve_per_direction() {
        let a = two_by_two([Dual::<3>::constant(4.0), Dual::constant(1.0), Dual::constant(1.0), Dual::constant(3.0)]);
        let solver = LinearSolver::default();
        Dual::solve_system(&solver, &a, &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(solver.counters.snapshot(), SolveCounts { primal: 2, tangent: 6 });
        solver.counters.reset();
        assert_eq!(solver.counters.snapshot(), SolveCounts::default());
    }

    #[test]
    fn dense_path_solves_two_by_two_by_hand() {
        let a = two_by_two([2.0, 1.0, 1.0, 2.0]);
        let solver = LinearSolver::new(SolverOptions {
            method: SolverMethod::Dense,
            ..SolverOptions::default()
        });
        let x = f64::solve_system(&solver, &a, &[vec![1.0, 0.0]]).unwrap();
        assert!((x[0][0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((x[0][1] + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn dense_factor_matches_cg() {
        let a = two_by_two([4.0, 1.0, 1.0, 3.0]);
        let f = DenseFactor::new(&a).unwrap();
        let x = f.solve(&[1.0, 2.0]);
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-15);
        assert!(DenseFactor::new(&two_by_two([1.0, 2.0, 2.0, 1.0])).is_err());
    }

    /// Weighted path-plus-chords Laplacian with a positive shift and one
    /// dense row coupled to every node, mimicking the electrode unknowns.
    fn sparse_spd(n: usize, chords: &[(usize, usize, f64)]) -> SparseMatrix<f64> {
        let size = n + 1;
        let mut dense = vec![vec![0.0; size]; size];
        let mut link = |i: usize, j: usize, w: f64| {
            dense[i][j] -= w;
            dense[j][i] -= w;
            dense[i][i] += w;
            dense[j][j] += w;
        };
        for i in 0..n - 1 {
            link(i, i + 1, 1.0);
        }
        for &(i, j, w) in chords {
            if i % n != j % n {
                link(i % n, j % n, w);
            }
        }
        for i in 0..n {
            link(i, n, 0.01);
        }
        for (i, row) in dense.iter_mut().enumerate() {
            row[i] += if i == n { 1.0 } else { 0.1 };
        }
        let rows = (0..size)
            .map(|i| (0..size).filter(|&j| dense[i][j] != 0.0).collect())
            .collect();
        let pattern = Arc::new(CsrPattern::from_rows(rows));
        let values = (0..size)
            .flat_map(|i| pattern.columns[pattern.row(i)].iter().map(|&j| dense[i][j]).collect::<Vec<_>>())
            .collect();
        SparseMatrix { pattern, values }
    }

    proptest::proptest! {
        #[test]
        fn envelope_factor_matches_dense_oracle(
            n in 3usize..60,
            chords in proptest::collection::vec((0usize..60, 0usize..60, 0.1f64..5.0), 0..40),
            seed in 0u64..1000,
        ) {
            let a = sparse_spd(n, &chords);
            let b: Vec<f64> = (0..=n).map(|i| ((i as u64 * 7919 + seed) % 13) as f64 - 6.0).collect();
            let direct = EnvelopeFactor::new(&a).unwrap().solve(&b);
            let dense = DenseFactor::new(&a).unwrap().solve(&b);
            let scale = dense.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            for (x, y) in direct.iter().zip(&dense) {
                proptest::prop_assert!((x - y).abs() <= 1e-10 * scale);
            }
        }

        #[test]
        fn rcm_is_a_permutation(n in 3usize..60, chords in proptest::collection::vec((0usize..60, 0usize..60, 0.1f64..5.0), 0..40)) {
            let mut perm = reverse_cuthill_mckee(&sparse_spd(n, &chords));
            perm.sort_unstable();
            proptest::prop_assert_eq!(perm, (0..=n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn rcm_keeps_a_shuffled_path_banded() {
        // A path visited in scrambled index order has a wide profile until reordered.
        let n = 40;
        let label = |k: usize| (k * 17) % n;
        let mut rows = vec![vec![]; n];
        for k in 0..n {
            rows[label(k)].push(label(k));
            if k + 1 < n {
                rows[label(k)].push(label(k + 1));
                rows[label(k + 1)].push(label(k));
            }
        }
        let a = SparseMatrix {
            pattern: Arc::new(CsrPattern::from_rows(rows)),
            values: vec![0.0f64; 3 * n - 2],
        };
        let perm = reverse_cuthill_mckee(&a);
        let mut position = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            position[old] = new;
        }
        for k in 0..n - 1 {
            assert_eq!(position[label(k)].abs_diff(position[label(k + 1)]), 1);
        }
    }

    #[test]
    fn envelope_factor_rejects_indefinite_matrices() {
        assert!(EnvelopeFactor::new(&two_by_two([1.0, 2.0, 2.0, 1.0])).is_err());
        let f = EnvelopeFactor::new(&two_by_two([4.0, 1.0, 1.0, 3.0])).unwrap();
        let x = f.solve(&[1.0, 2.0]);
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-15 && (x[1] - 7.0 / 11.0).abs() < 1e-15);
        assert_eq!(f.envelope_size(), 3);
    }

    #[test]
    fn naive_mode_needs_cg() {
        let a = two_by_two([Dual::<1>::constant(4.0), Dual::constant(1.0), Dual::constant(1.0), Dual::constant(3.0)]);
        for method in [SolverMethod::Dense, SolverMethod::Direct] {
            let solver = LinearSolver::new(SolverOptions {
                method,
                dual_mode: DualSolveMode::Naive,
                ..SolverOptions::default()
            });
            assert!(Dual::solve_system(&solver, &a, &[vec![1.0, 0.0]]).is_err());
        }
    }

    #[test]
    fn options_validate() {
        assert!(SolverOptions::default().validate().is_ok());
        assert!(SolverOptions::with_tolerance(0.0).validate().is_err());
        let json = serde_json::to_string(&SolverOptions::default()).unwrap();
        assert!(json.contains("\"cg\"") && json.contains("\"implicit\""));
    }
}
