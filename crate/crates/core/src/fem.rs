//! Finite-element discretization of the complete electrode model.
//!
//! Unknowns are `θ = (α, β)`: nodal potentials `α ∈ R^N` followed by electrode
//! voltage coefficients `β ∈ R^{L-1}` in the basis `η_k = e_1 - e_{k+1}`. The
//! system matrix is
//!
//! ```text
//! A = | B1 + B2   C |
//!     | Cᵀ        D |
//! ```
//!
//! where only `B1` depends on the conductivity. Everything else (`B2`, `C`,
//! `D`, the right-hand sides and the sparsity pattern) is fixed by the mesh
//! and the electrode layout and is built once.

use std::f64::consts::TAU;
use std::sync::Arc;

use crate::ad::Scalar;
use crate::error::{Error, Result};
use crate::mesh::{ElectrodeLayout, Mesh};
use crate::sparse::{CsrPattern, SparseMatrix};

/// Trigonometric current patterns, one row per pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct CurrentPatterns {
    pub amplitude: f64,
    pub rows: Vec<Vec<f64>>,
}

impl CurrentPatterns {
    pub fn electrode_count(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn pattern_count(&self) -> usize {
        self.rows.len()
    }
}

/// `I_{j,l} = A cos(j θ_l)` for `j ≤ L/2`, `A sin((j - L/2) θ_l)` above, with
/// `θ_l = 2πl/L` and 1-based `j`, `l`.
pub fn trig_patterns(electrodes: usize, amplitude: f64) -> Result<CurrentPatterns> {
    if electrodes < 4 || electrodes % 2 != 0 {
        return Err(Error::Config(format!(
            "trigonometric patterns need an even electrode count of at least 4, got {electrodes}"
        )));
    }
    let half = electrodes / 2;
    let rows = (1..electrodes)
        .map(|j| {
            (1..=electrodes)
                .map(|l| {
                    let theta = TAU * l as f64 / electrodes as f64;
                    if j <= half {
                        amplitude * (j as f64 * theta).cos()
                    } else {
                        amplitude * ((j - half) as f64 * theta).sin()
                    }
                })
                .collect()
        })
        .collect();
    Ok(CurrentPatterns { amplitude, rows })
}

/// The `L × (L-1)` matrix mapping `β` to electrode voltages: first row all
/// ones, then `-I`.
pub fn voltage_basis_matrix(electrodes: usize) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; electrodes - 1]; electrodes];
    m[0].fill(1.0);
    for k in 0..electrodes - 1 {
        m[k + 1][k] = -1.0;
    }
    m
}

/// Electrode voltages `V = Mβ`.
pub fn extract_voltages<T: Scalar>(beta: &[T]) -> Vec<T> {
    let mut v = Vec::with_capacity(beta.len() + 1);
    v.push(beta.iter().copied().sum());
    v.extend(beta.iter().map(|&b| -b));
    v
}

/// Conductivity-independent parts of the discrete system.
#[derive(Clone, Debug)]
pub struct CemDiscretization {
    pub node_count: usize,
    pub electrode_count: usize,
    pub pattern: Arc<CsrPattern>,
    /// Storage slots of each element's 3×3 block, row-major.
    element_slots: Vec<[usize; 9]>,
    /// `B2`, `C`, `Cᵀ` and `D` laid out on `pattern`.
    constant_values: Vec<f64>,
    /// `Ĩ_j = (0, I_1 - I_2, ..., I_1 - I_L)` per pattern.
    pub rhs: Vec<Vec<f64>>,
}

/// Assembled system for one conductivity field.
#[derive(Clone, Debug)]
pub struct FemSystem<T> {
    pub node_count: usize,
    pub electrode_count: usize,
    pub matrix: SparseMatrix<T>,
}

impl<T: Scalar> FemSystem<T> {
    pub fn dimension(&self) -> usize {
        self.node_count + self.electrode_count - 1
    }
}

impl CemDiscretization {
    pub fn new(mesh: &Mesh, layout: &ElectrodeLayout, patterns: &CurrentPatterns) -> Result<Self> {
        layout.validate()?;
        let n = mesh.node_count();
        let l_count = layout.count;
        if mesh.electrode_count() != l_count {
            return Err(Error::Usage(format!(
                "mesh carries {} electrodes but the layout has {l_count}",
                mesh.electrode_count()
            )));
        }
        if patterns.electrode_count() != l_count {
            return Err(Error::Usage(format!(
                "current patterns drive {} electrodes but the layout has {l_count}",
                patterns.electrode_count()
            )));
        }
        if mesh.local_stiffness.len() != mesh.element_count() {
            return Err(Error::Mesh("local stiffness integrals are missing".into()));
        }
        if let Some(l) = mesh.electrode_edges.iter().position(Vec::is_empty) {
            return Err(Error::Mesh(format!("electrode {l} has no boundary edges")));
        }
        let dim = n + l_count - 1;

        // Per-electrode node loads ∫_{E_l} φ_i dS and edge mass contributions.
        let mut node_loads: Vec<Vec<(usize, f64)>> = vec![Vec::new(); l_count];
        let mut mass: Vec<(usize, usize, f64)> = Vec::new();
        for (l, group) in mesh.electrode_edges.iter().enumerate() {
            let inv_z = 1.0 / layout.contact_impedance[l];
            for &e in group {
                let [a, b] = mesh.boundary_edges[e];
                let len = mesh.edge_length(e);
                node_loads[l].push((a, 0.5 * len));
                node_loads[l].push((b, 0.5 * len));
                mass.push((a, a, inv_z * len / 3.0));
                mass.push((b, b, inv_z * len / 3.0));
                mass.push((a, b, inv_z * len / 6.0));
                mass.push((b, a, inv_z * len / 6.0));
            }
        }
        let measures: Vec<f64> = (0..l_count).map(|l| mesh.electrode_measure(l)).collect();

        // C_{ij} = -(1/z_1 ∫_{E_1} φ_i - 1/z_{j+1} ∫_{E_{j+1}} φ_i), 0-based j.
        let mut coupling: Vec<(usize, usize, f64)> = Vec::new();
        let inv_z = |l: usize| 1.0 / layout.contact_impedance[l];
        for &(i, w) in &node_loads[0] {
            for j in 0..l_count - 1 {
                coupling.push((i, j, -inv_z(0) * w));
            }
        }
        for j in 0..l_count - 1 {
            for &(i, w) in &node_loads[j + 1] {
                coupling.push((i, j, inv_z(j + 1) * w));
            }
        }

        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); dim];
        for tri in &mesh.elements {
            for &a in tri {
                rows[a].extend_from_slice(tri);
            }
        }
        for &(i, j, _) in &mass {
            rows[i].push(j);
        }
        for &(i, j, _) in &coupling {
            rows[i].push(n + j);
            rows[n + j].push(i);
        }
        for i in 0..l_count - 1 {
            rows[n + i].extend(n..dim);
        }
        let pattern = Arc::new(CsrPattern::from_rows(rows));

        let slot = |i: usize, j: usize| pattern.slot(i, j).expect("entry is in the pattern");
        let element_slots = mesh
            .elements
            .iter()
            .map(|tri| std::array::from_fn(|s| slot(tri[s / 3], tri[s % 3])))
            .collect();

        let mut constant_values = vec![0.0; pattern.nnz()];
        for &(i, j, v) in &mass {
            constant_values[slot(i, j)] += v;
        }
        for &(i, j, v) in &coupling {
            constant_values[slot(i, n + j)] += v;
            constant_values[slot(n + j, i)] += v;
        }
        let base = measures[0] * inv_z(0);
        for i in 0..l_count - 1 {
            for j in 0..l_count - 1 {
                let mut v = base;
                if i == j {
                    v += measures[j + 1] * inv_z(j + 1);
                }
                constant_values[slot(n + i, n + j)] = v;
            }
        }

        let rhs = patterns
            .rows
            .iter()
            .map(|currents| {
                let mut b = vec![0.0; dim];
                for k in 0..l_count - 1 {
                    b[n + k] = currents[0] - currents[k + 1];
                }
                b
            })
            .collect();

        Ok(Self {
            node_count: n,
            electrode_count: l_count,
            pattern,
            element_slots,
            constant_values,
            rhs,
        })
    }

    pub fn dimension(&self) -> usize {
        self.node_count + self.electrode_count - 1
    }

    pub fn nnz(&self) -> usize {
        self.pattern.nnz()
    }

    /// Scatters `sigma_k ∫ ∇φ_i·∇φ_j` of every element onto the constant part.
    pub fn assemble<T: Scalar>(&self, mesh: &Mesh, sigma: &[T]) -> Result<FemSystem<T>> {
        if sigma.len() != mesh.element_count() || mesh.element_count() != self.element_slots.len() {
            return Err(Error::Usage(format!(
                "{} element conductivities for a mesh of {} elements",
                sigma.len(),
                mesh.element_count()
            )));
        }
        if let Some(k) = sigma.iter().position(|s| !(s.value() > 0.0)) {
            return Err(Error::Model(format!(
                "element {k} has non-positive conductivity {}",
                sigma[k].value()
            )));
        }
        let mut values: Vec<T> = self.constant_values.iter().map(|&v| T::from_f64(v)).collect();
        for ((slots, local), &s) in self
            .element_slots
            .iter()
            .zip(&mesh.local_stiffness)
            .zip(sigma)
        {
            for (idx, &slot) in slots.iter().enumerate() {
                values[slot] += s * local[idx / 3][idx % 3];
            }
        }
        Ok(FemSystem {
            node_count: self.node_count,
            electrode_count: self.electrode_count,
            matrix: SparseMatrix {
                pattern: Arc::clone(&self.pattern),
                values,
            },
        })
    }

    /// Dense `(B2, C, D)` blocks; for inspection and tests.
    pub fn constant_blocks(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = self.node_count;
        let m = self.electrode_count - 1;
        let full = SparseMatrix {
            pattern: Arc::clone(&self.pattern),
            values: self.constant_values.clone(),
        }
        .to_dense();
        let b2 = full[..n].iter().map(|r| r[..n].to_vec()).collect();
        let c = full[..n].iter().map(|r| r[n..n + m].to_vec()).collect();
        let d = full[n..].iter().map(|r| r[n..].to_vec()).collect();
        (b2, c, d)
    }
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;
    use crate::mesh::build_disk_mesh;

    fn small_setup() -> (Mesh, ElectrodeLayout, CemDiscretization) {
        let layout = ElectrodeLayout::default();
        let mesh = build_disk_mesh(0.13, &layout).unwrap();
        let patterns = trig_patterns(16, 3.0).unwrap();
        let disc = CemDiscretization::new(&mesh, &layout, &patterns).unwrap();
        (mesh, layout, disc)
    }

    #[test]
    fn pattern_entries_and_kirchhoff() {
        let p = trig_patterns(16, 3.0).unwrap();
        assert_eq!(p.pattern_count(), 15);
        for l in 1..=16 {
            let expected = 3.0 * (std::f64::consts::TAU * l as f64 / 16.0).cos();
            assert!((p.rows[0][l - 1] - expected).abs() < 1e-15);
        }
        for row in &p.rows {
            assert!(row.iter().sum::<f64>().abs() <= 1e-12 * 3.0 * 16.0);
        }
        assert!(trig_patterns(15, 1.0).is_err());
    }

    #[test]
    fn patterns_have_full_rank() {
        let p = trig_patterns(16, 3.0).unwrap();
        let m = DMatrix::from_fn(15, 16, |i, j| p.rows[i][j]);
        let sv = m.svd(false, false).singular_values;
        let tol = 1e-10 * sv.max();
        assert_eq!(sv.iter().filter(|s| **s > tol).count(), 15);
    }

    #[test]
    fn voltage_basis() {
        let m = voltage_basis_matrix(16);
        assert!(m[0].iter().all(|&x| x == 1.0));
        for k in 0..15 {
            for j in 0..15 {
                assert_eq!(m[k + 1][j], if k == j { -1.0 } else { 0.0 });
            }
        }
        let mut beta = vec![0.0; 15];
        beta[0] = 1.0;
        let v = extract_voltages(&beta);
        assert_eq!(v[..3], [1.0, -1.0, 0.0]);
        assert!(v[3..].iter().all(|&x| x == 0.0));
        assert!(extract_voltages(&[0.0; 15]).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn extracted_voltages_sum_to_zero() {
        let beta: Vec<f64> = (0..15).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
        let v = extract_voltages(&beta);
        let scale = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(v.iter().sum::<f64>().abs() <= 1e-10 * scale);
    }

    #[test]
    fn homogeneous_b1_rows_sum_to_zero() {
        let (mesh, _, disc) = small_setup();
        let sys = disc.assemble(&mesh, &vec![1.0; mesh.element_count()]).unwrap();
        let full = sys.matrix.to_dense();
        let (b2, _, _) = disc.constant_blocks();
        let n = mesh.node_count();
        for i in 0..n {
            let row: f64 = (0..n).map(|j| full[i][j] - b2[i][j]).sum();
            assert!(row.abs() < 1e-12, "row {i}: {row}");
        }
    }

    #[test]
    fn assembled_matrix_is_exactly_symmetric_and_positive_definite() {
        let (mesh, _, disc) = small_setup();
        let sigma: Vec<f64> = mesh.centroids().iter().map(|c| 1.0 + 0.5 * c[0] * c[0]).collect();
        let sys = disc.assemble(&mesh, &sigma).unwrap();
        let dense = sys.matrix.to_dense();
        let n = dense.len();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(dense[i][j], dense[j][i]);
            }
        }
        let m = DMatrix::from_fn(n, n, |i, j| dense[i][j]);
        let eig = m.symmetric_eigenvalues();
        assert!(eig.min() > 0.0, "smallest eigenvalue {}", eig.min());
    }

    /// One fan of triangles around the origin: each electrode gets two edges
    /// (start, middle, end nodes) and each gap a single edge.
    fn fan_mesh(layout: &ElectrodeLayout) -> Mesh {
        let mut nodes = vec![[0.0, 0.0]];
        for l in 0..layout.count {
            let start = layout.center_angle(l) - 0.5 * layout.arc_length;
            for s in 0..3 {
                let t = start + 0.5 * layout.arc_length * s as f64;
                nodes.push([t.cos(), t.sin()]);
            }
        }
        let m = nodes.len() - 1;
        let boundary_edges: Vec<[usize; 2]> = (0..m).map(|i| [i + 1, (i + 1) % m + 1]).collect();
        let elements = boundary_edges.iter().map(|&[a, b]| [0, a, b]).collect();
        let electrode_edges = (0..layout.count).map(|l| vec![3 * l, 3 * l + 1]).collect();
        Mesh::from_parts(nodes, elements, boundary_edges, electrode_edges, 0.4).unwrap()
    }

    #[test]
    fn tiny_fan_mesh_system_is_positive_definite() {
        let layout = ElectrodeLayout::default();
        let mesh = fan_mesh(&layout);
        assert_eq!(mesh.element_count(), 48);
        let patterns = trig_patterns(16, 3.0).unwrap();
        let disc = CemDiscretization::new(&mesh, &layout, &patterns).unwrap();
        let sys = disc.assemble(&mesh, &vec![1.0; 48]).unwrap();
        let dense = sys.matrix.to_dense();
        let n = dense.len();
        let eig = DMatrix::from_fn(n, n, |i, j| dense[i][j]).symmetric_eigenvalues();
        assert!(eig.min() > 0.0, "smallest eigenvalue {}", eig.min());
    }

    #[test]
    fn d_block_matches_hand_formula() {
        let (mesh, layout, disc) = small_setup();
        let (_, c, d) = disc.constant_blocks();
        let e1 = mesh.electrode_measure(0) / layout.contact_impedance[0];
        for i in 0..15 {
            for j in 0..15 {
                let mut expected = e1;
                if i == j {
                    expected += mesh.electrode_measure(j + 1) / layout.contact_impedance[j + 1];
                }
                assert!((d[i][j] - expected).abs() <= 1e-12 * expected);
            }
        }
        // Column sums of C recover the electrode measures.
        for j in 0..15 {
            let s: f64 = c.iter().map(|r| r[j]).sum();
            let expected = -e1 + mesh.electrode_measure(j + 1) / layout.contact_impedance[j + 1];
            assert!((s - expected).abs() <= 1e-9 * e1.abs());
        }
    }

    #[test]
    fn rhs_has_zero_node_block() {
        let (mesh, _, disc) = small_setup();
        let patterns = trig_patterns(16, 3.0).unwrap();
        for (b, currents) in disc.rhs.iter().zip(&patterns.rows) {
            assert!(b[..mesh.node_count()].iter().all(|&x| x == 0.0));
            for k in 0..15 {
                assert_eq!(b[mesh.node_count() + k], currents[0] - currents[k + 1]);
            }
        }
    }

    #[test]
    fn assembly_rejects_bad_conductivity() {
        let (mesh, _, disc) = small_setup();
        let mut sigma = vec![1.0; mesh.element_count()];
        sigma[3] = 0.0;
        assert!(matches!(disc.assemble(&mesh, &sigma), Err(Error::Model(_))));
        assert!(matches!(disc.assemble(&mesh, &sigma[1..]), Err(Error::Usage(_))));
    }

    #[test]
    fn empty_electrode_is_a_mesh_error() {
        let (mut mesh, layout, _) = small_setup();
        mesh.electrode_edges[4].clear();
        let patterns = trig_patterns(16, 3.0).unwrap();
        assert!(matches!(
            CemDiscretization::new(&mesh, &layout, &patterns),
            Err(Error::Mesh(_))
        ));
    }
}
