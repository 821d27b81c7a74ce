//! Unit-disk triangulation with boundary electrodes.
//!
//! The mesher is a deterministic polar grid: concentric rings whose node
//! counts are multiples of the electrode count (so the mesh is invariant
//! under rotation by one electrode pitch), a boundary ring that places nodes
//! exactly on every electrode endpoint, ring-to-ring stitching, and a single
//! Laplacian smoothing pass over interior nodes.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Electrode edges are refined relative to `h_target` by this factor. The
/// current density is singular at electrode ends, and the refinement lets
/// meshes down to a few hundred elements still resolve every electrode.
const ELECTRODE_REFINEMENT: f64 = 3.0;

const DEGENERATE_AREA: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeLayout {
    pub count: usize,
    /// Arc length (= angle, on the unit circle) covered by each electrode.
    pub arc_length: f64,
    pub contact_impedance: Vec<f64>,
}

impl Default for ElectrodeLayout {
    fn default() -> Self {
        Self::uniform(16, PI / 64.0, 5e-6).expect("default layout is valid")
    }
}

impl ElectrodeLayout {
    pub fn new(count: usize, arc_length: f64, contact_impedance: Vec<f64>) -> Result<Self> {
        let layout = Self {
            count,
            arc_length,
            contact_impedance,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn uniform(count: usize, arc_length: f64, z: f64) -> Result<Self> {
        Self::new(count, arc_length, vec![z; count])
    }

    pub fn validate(&self) -> Result<()> {
        if self.count < 4 || self.count % 2 != 0 {
            return Err(Error::Config(format!(
                "electrode count must be even and at least 4, got {}",
                self.count
            )));
        }
        if !(self.arc_length > 0.0) || self.arc_length * self.count as f64 >= TAU {
            return Err(Error::Config(format!(
                "electrode arc {} must be positive with {} electrodes fitting disjointly on the circle",
                self.arc_length, self.count
            )));
        }
        if self.contact_impedance.len() != self.count {
            return Err(Error::Config(format!(
                "expected {} contact impedances, got {}",
                self.count,
                self.contact_impedance.len()
            )));
        }
        if let Some(z) = self.contact_impedance.iter().find(|z| !(**z > 0.0)) {
            return Err(Error::Config(format!(
                "contact impedance must be positive, got {z}"
            )));
        }
        Ok(())
    }

    /// Angle of the centre of electrode `l` (0-based); electrode `l` sits at
    /// `2π(l+1)/L`, matching the angles used by the trigonometric patterns.
    pub fn center_angle(&self, l: usize) -> f64 {
        TAU * (l + 1) as f64 / self.count as f64
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub nodes: Vec<[f64; 2]>,
    pub elements: Vec<[usize; 3]>,
    /// Counterclockwise boundary edges; edge `i` ends where edge `i + 1` starts.
    pub boundary_edges: Vec<[usize; 2]>,
    /// Indices into `boundary_edges`, one list per electrode.
    pub electrode_edges: Vec<Vec<usize>>,
    pub h_target: f64,
    pub element_areas: Vec<f64>,
    /// `∫_T ∇φ_i · ∇φ_j dx` for the three local basis functions of each element.
    pub local_stiffness: Vec<[[f64; 3]; 3]>,
}

/// On-disk representation of a mesh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshFile {
    pub nodes: Vec<[f64; 2]>,
    pub elements: Vec<[usize; 3]>,
    pub boundary_edges: Vec<[usize; 2]>,
    pub electrode_edges: Vec<Vec<usize>>,
    pub h_target: f64,
}

impl Mesh {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn electrode_count(&self) -> usize {
        self.electrode_edges.len()
    }

    pub fn edge_length(&self, edge: usize) -> f64 {
        let [a, b] = self.boundary_edges[edge];
        distance(self.nodes[a], self.nodes[b])
    }

    /// Total length `|E_l|` of electrode `l`'s boundary edges.
    pub fn electrode_measure(&self, l: usize) -> f64 {
        self.electrode_edges[l]
            .iter()
            .map(|&e| self.edge_length(e))
            .sum()
    }

    pub fn vertices(&self, element: usize) -> [[f64; 2]; 3] {
        self.elements[element].map(|n| self.nodes[n])
    }

    pub fn centroids(&self) -> Vec<[f64; 2]> {
        element_centroids(self)
    }

    /// Builds a mesh from raw arrays, computing areas and local stiffness.
    pub fn from_parts(
        nodes: Vec<[f64; 2]>,
        elements: Vec<[usize; 3]>,
        boundary_edges: Vec<[usize; 2]>,
        electrode_edges: Vec<Vec<usize>>,
        h_target: f64,
    ) -> Result<Self> {
        let mut mesh = Self {
            nodes,
            elements,
            boundary_edges,
            electrode_edges,
            h_target,
            element_areas: Vec::new(),
            local_stiffness: Vec::new(),
        };
        mesh.check_indices()?;
        local_stiffness_integrals(&mut mesh)?;
        Ok(mesh)
    }

    fn check_indices(&self) -> Result<()> {
        let n = self.nodes.len();
        if self.elements.iter().flatten().any(|&i| i >= n)
            || self.boundary_edges.iter().flatten().any(|&i| i >= n)
        {
            return Err(Error::Mesh("node index out of range".into()));
        }
        let m = self.boundary_edges.len();
        if self.electrode_edges.iter().flatten().any(|&e| e >= m) {
            return Err(Error::Mesh("boundary edge index out of range".into()));
        }
        Ok(())
    }

    /// Checks every structural invariant against `layout`.
    pub fn validate(&self, layout: &ElectrodeLayout) -> Result<()> {
        if let Some(p) = self.nodes.iter().find(|p| norm(**p) > 1.0 + 1e-9) {
            return Err(Error::Mesh(format!("node {p:?} lies outside the unit disk")));
        }
        for (k, verts) in self.elements.iter().enumerate() {
            let area = signed_area(verts.map(|n| self.nodes[n]));
            if !(area > DEGENERATE_AREA) {
                return Err(Error::Mesh(format!(
                    "element {k} has non-positive signed area {area:e}"
                )));
            }
        }
        let nb = self.boundary_edges.len();
        for i in 0..nb {
            if self.boundary_edges[i][1] != self.boundary_edges[(i + 1) % nb][0] {
                return Err(Error::Mesh(format!("boundary edge {i} breaks the loop")));
            }
        }
        if self.electrode_edges.len() != layout.count {
            return Err(Error::Mesh(format!(
                "mesh has {} electrodes, layout has {}",
                self.electrode_edges.len(),
                layout.count
            )));
        }
        let mut owner = vec![None; nb];
        for (l, group) in self.electrode_edges.iter().enumerate() {
            if group.is_empty() {
                return Err(Error::Mesh(format!("electrode {l} has no edges")));
            }
            for w in group.windows(2) {
                if w[1] != (w[0] + 1) % nb {
                    return Err(Error::Mesh(format!("electrode {l} is not contiguous")));
                }
            }
            for &e in group {
                if let Some(other) = owner[e].replace(l) {
                    return Err(Error::Mesh(format!(
                        "boundary edge {e} is shared by electrodes {other} and {l}"
                    )));
                }
            }
            let measure = self.electrode_measure(l);
            if (measure - layout.arc_length).abs() > 0.05 * layout.arc_length {
                return Err(Error::Mesh(format!(
                    "electrode {l} has length {measure}, expected {} within 5%",
                    layout.arc_length
                )));
            }
        }
        for (k, m) in self.local_stiffness.iter().enumerate() {
            for i in 0..3 {
                let row: f64 = m[i].iter().sum();
                let scale = m[i][i].abs().max(1.0);
                if row.abs() > 1e-10 * scale {
                    return Err(Error::Mesh(format!("element {k} stiffness row {i} sums to {row}")));
                }
                for j in 0..3 {
                    if m[i][j] != m[j][i] {
                        return Err(Error::Mesh(format!("element {k} stiffness is not symmetric")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_file(&self) -> MeshFile {
        MeshFile {
            nodes: self.nodes.clone(),
            elements: self.elements.clone(),
            boundary_edges: self.boundary_edges.clone(),
            electrode_edges: self.electrode_edges.clone(),
            h_target: self.h_target,
        }
    }

    pub fn from_file(file: MeshFile) -> Result<Self> {
        Self::from_parts(
            file.nodes,
            file.elements,
            file.boundary_edges,
            file.electrode_edges,
            file.h_target,
        )
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_file())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_file(serde_json::from_str(&text)?)
    }
}

/// Vertex average of each element.
pub fn element_centroids(mesh: &Mesh) -> Vec<[f64; 2]> {
    (0..mesh.element_count())
        .map(|k| triangle_centroid(mesh.vertices(k)))
        .collect()
}

pub fn triangle_centroid(v: [[f64; 2]; 3]) -> [f64; 2] {
    [
        (v[0][0] + v[1][0] + v[2][0]) / 3.0,
        (v[0][1] + v[1][1] + v[2][1]) / 3.0,
    ]
}

pub fn signed_area(v: [[f64; 2]; 3]) -> f64 {
    0.5 * ((v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]))
}

/// Area and `∫_T ∇φ_i · ∇φ_j dx` for the linear Lagrange basis on a
/// counterclockwise triangle.
pub fn triangle_stiffness(v: [[f64; 2]; 3]) -> Result<(f64, [[f64; 3]; 3])> {
    let area = signed_area(v);
    if !(area > DEGENERATE_AREA) {
        return Err(Error::Mesh(format!(
            "degenerate or clockwise triangle {v:?} (signed area {area:e})"
        )));
    }
    // ∇φ_i = (y_j - y_k, x_k - x_j) / 2|T| with (i, j, k) cyclic
    let grads: [[f64; 2]; 3] = std::array::from_fn(|i| {
        let j = (i + 1) % 3;
        let k = (i + 2) % 3;
        [
            (v[j][1] - v[k][1]) / (2.0 * area),
            (v[k][0] - v[j][0]) / (2.0 * area),
        ]
    });
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let val = area * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
            m[i][j] = val;
            m[j][i] = val;
        }
    }
    Ok((area, m))
}

/// Fills `element_areas` and `local_stiffness` on `mesh`.
pub fn local_stiffness_integrals(mesh: &mut Mesh) -> Result<()> {
    let mut areas = Vec::with_capacity(mesh.element_count());
    let mut stiffness = Vec::with_capacity(mesh.element_count());
    for k in 0..mesh.element_count() {
        let (area, m) = triangle_stiffness(mesh.vertices(k))
            .map_err(|e| Error::Mesh(format!("element {k}: {e}")))?;
        areas.push(area);
        stiffness.push(m);
    }
    mesh.element_areas = areas;
    mesh.local_stiffness = stiffness;
    Ok(())
}

struct Ring {
    nodes: Vec<usize>,
    angles: Vec<f64>,
}

pub fn build_disk_mesh(h_target: f64, layout: &ElectrodeLayout) -> Result<Mesh> {
    build_disk_mesh_graded(h_target, layout, None)
}

/// As [`build_disk_mesh`], optionally followed by bisection towards the
/// electrode endpoints, where the current density is singular.
pub fn build_disk_mesh_graded(
    h_target: f64,
    layout: &ElectrodeLayout,
    grading: Option<Grading>,
) -> Result<Mesh> {
    layout.validate()?;
    if !(h_target > 0.0 && h_target < 0.5) {
        return Err(Error::Config(format!(
            "mesh size must lie in (0, 0.5), got {h_target}"
        )));
    }
    let count = layout.count;
    let arc = layout.arc_length;
    let pitch = TAU / count as f64;
    let gap = pitch - arc;

    let per_electrode = (ELECTRODE_REFINEMENT * arc / h_target).ceil() as usize;
    if per_electrode < 2 {
        return Err(Error::Config(format!(
            "mesh size {h_target} is too coarse to put two edges on an electrode of arc {arc}"
        )));
    }
    let per_gap = ((gap / h_target).round() as usize).max(1);

    let ring_count = ((1.0 / (h_target * 3f64.sqrt() / 2.0)).round() as usize).max(2);

    let mut nodes = vec![[0.0, 0.0]];
    let mut rings = Vec::with_capacity(ring_count);
    for k in 1..ring_count {
        let radius = k as f64 / ring_count as f64;
        let n = count * ((TAU * radius / (h_target * count as f64)).round() as usize).max(1);
        let offset = if k % 2 == 1 { PI / n as f64 } else { 0.0 };
        let mut ring = Ring {
            nodes: Vec::with_capacity(n),
            angles: Vec::with_capacity(n),
        };
        for i in 0..n {
            let angle = offset + TAU * i as f64 / n as f64;
            ring.nodes.push(nodes.len());
            ring.angles.push(angle);
            nodes.push([radius * angle.cos(), radius * angle.sin()]);
        }
        rings.push(ring);
    }

    // Boundary: for each electrode, its subdivided arc followed by the gap
    // up to the next electrode.
    let mut boundary = Ring {
        nodes: Vec::new(),
        angles: Vec::new(),
    };
    let mut electrode_edges = Vec::with_capacity(count);
    for l in 0..count {
        let center = layout.center_angle(l);
        let start = center - 0.5 * arc;
        let end = center + 0.5 * arc;
        let first_edge = boundary.angles.len();
        electrode_edges.push((first_edge..first_edge + per_electrode).collect::<Vec<_>>());
        for s in 0..per_electrode {
            boundary.angles.push(if s == 0 {
                start
            } else {
                start + arc * s as f64 / per_electrode as f64
            });
        }
        for s in 0..per_gap {
            boundary.angles.push(if s == 0 {
                end
            } else {
                end + gap * s as f64 / per_gap as f64
            });
        }
    }
    for &angle in &boundary.angles {
        boundary.nodes.push(nodes.len());
        nodes.push([angle.cos(), angle.sin()]);
    }
    let nb = boundary.nodes.len();

    let mut elements = Vec::new();
    let first = &rings[0];
    for i in 0..first.nodes.len() {
        let j = (i + 1) % first.nodes.len();
        elements.push([0, first.nodes[i], first.nodes[j]]);
    }
    for pair in rings.windows(2) {
        stitch(&pair[0], &pair[1], &mut elements);
    }
    stitch(rings.last().expect("at least one ring"), &boundary, &mut elements);

    let boundary_start = boundary.nodes[0];
    laplacian_smooth(&mut nodes, &elements, boundary_start);

    let mut tags = vec![None; nb];
    for (l, edges) in electrode_edges.iter().enumerate() {
        for &e in edges {
            tags[e] = Some(l);
        }
    }
    let corners: Vec<[f64; 2]> = (0..count)
        .flat_map(|l| {
            let c = layout.center_angle(l);
            [c - 0.5 * arc, c + 0.5 * arc].map(|a| [a.cos(), a.sin()])
        })
        .collect();
    let mut ring = boundary.nodes.clone();
    if let Some(grading) = grading {
        grading.validate()?;
        refine_towards(&mut nodes, &mut elements, &mut ring, &mut tags, &corners, &grading);
    }
    let nb = ring.len();
    let boundary_edges: Vec<[usize; 2]> = (0..nb).map(|i| [ring[i], ring[(i + 1) % nb]]).collect();
    let mut electrode_edges = vec![Vec::new(); count];
    for (i, tag) in tags.iter().enumerate() {
        if let Some(l) = tag {
            electrode_edges[*l].push(i);
        }
    }

    let mesh = Mesh::from_parts(nodes, elements, boundary_edges, electrode_edges, h_target)?;
    mesh.validate(layout)?;
    Ok(mesh)
}

/// Triangulates the annulus between an inner and an outer ring by walking
/// both in angular order.
fn stitch(inner: &Ring, outer: &Ring, elements: &mut Vec<[usize; 3]>) {
    let na = inner.nodes.len();
    let nb = outer.nodes.len();
    let a0 = inner.angles[0];
    let start = (0..nb)
        .min_by(|&x, &y| {
            wrap_to_pi(outer.angles[x] - a0)
                .abs()
                .total_cmp(&wrap_to_pi(outer.angles[y] - a0).abs())
        })
        .expect("outer ring is nonempty");

    let inner_angle = |i: usize| a0 + (inner.angles[i % na] - a0).rem_euclid(TAU) + if i >= na { TAU } else { 0.0 };
    let b0 = a0 + wrap_to_pi(outer.angles[start] - a0);
    let outer_angle = |t: usize| {
        let raw = outer.angles[(start + t) % nb];
        let turn = if t >= nb { TAU } else { 0.0 };
        b0 + (raw - outer.angles[start]).rem_euclid(TAU) + turn
    };

    let (mut i, mut t) = (0, 0);
    while i < na || t < nb {
        let advance_inner = if i == na {
            false
        } else if t == nb {
            true
        } else {
            inner_angle(i + 1) < outer_angle(t + 1)
        };
        let a = inner.nodes[i % na];
        let b = outer.nodes[(start + t) % nb];
        if advance_inner {
            elements.push([a, b, inner.nodes[(i + 1) % na]]);
            i += 1;
        } else {
            elements.push([a, b, outer.nodes[(start + t + 1) % nb]]);
            t += 1;
        }
    }
}

/// Local size rule around electrode endpoints: an element is bisected while
/// its longest edge exceeds `max(min_size, slope * d)`, `d` being the
/// distance from its centroid to the nearest endpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grading {
    pub min_size: f64,
    pub slope: f64,
    pub max_passes: usize,
}

impl Grading {
    /// Elements shrink to 1/24 of an electrode arc at its endpoints.
    pub fn for_layout(layout: &ElectrodeLayout) -> Self {
        Self {
            min_size: layout.arc_length / 24.0,
            slope: 1.5,
            max_passes: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_size > 0.0 && self.slope > 0.0) {
            return Err(Error::Config(format!(
                "grading needs a positive minimum size and slope, got {} and {}",
                self.min_size, self.slope
            )));
        }
        Ok(())
    }
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

fn longest_edge(nodes: &[[f64; 2]], t: [usize; 3]) -> usize {
    (0..3)
        .max_by(|&i, &j| {
            let li = distance(nodes[t[i]], nodes[t[(i + 1) % 3]]);
            let lj = distance(nodes[t[j]], nodes[t[(j + 1) % 3]]);
            li.total_cmp(&lj)
        })
        .expect("three edges")
}

/// Conforming longest-edge bisection towards `corners`. Boundary midpoints
/// are placed on the unit circle; `ring` and its edge `tags` are kept in
/// step with the split boundary edges.
fn refine_towards(
    nodes: &mut Vec<[f64; 2]>,
    elements: &mut Vec<[usize; 3]>,
    ring: &mut Vec<usize>,
    tags: &mut Vec<Option<usize>>,
    corners: &[[f64; 2]],
    grading: &Grading,
) {
    use std::collections::{HashMap, HashSet};
    for _ in 0..grading.max_passes {
        let mut marked: HashSet<(usize, usize)> = HashSet::new();
        for &t in elements.iter() {
            let v = t.map(|n| nodes[n]);
            let c = triangle_centroid(v);
            let d = corners.iter().map(|&p| distance(p, c)).fold(f64::INFINITY, f64::min);
            let e = longest_edge(nodes, t);
            if distance(v[e], v[(e + 1) % 3]) > grading.min_size.max(grading.slope * d) {
                marked.insert(edge_key(t[e], t[(e + 1) % 3]));
            }
        }
        if marked.is_empty() {
            return;
        }
        // Closure: any element with a marked edge also splits its longest one.
        loop {
            let mut grew = false;
            for &t in elements.iter() {
                if (0..3).any(|i| marked.contains(&edge_key(t[i], t[(i + 1) % 3]))) {
                    let e = longest_edge(nodes, t);
                    grew |= marked.insert(edge_key(t[e], t[(e + 1) % 3]));
                }
            }
            if !grew {
                break;
            }
        }

        let on_boundary: HashSet<(usize, usize)> = (0..ring.len())
            .map(|i| edge_key(ring[i], ring[(i + 1) % ring.len()]))
            .collect();
        let mut keys: Vec<(usize, usize)> = marked.into_iter().collect();
        keys.sort_unstable();
        let mut midpoint = HashMap::with_capacity(keys.len());
        for key in keys {
            let (a, b) = (nodes[key.0], nodes[key.1]);
            let mut m = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            if on_boundary.contains(&key) {
                let r = norm(m);
                m = [m[0] / r, m[1] / r];
            }
            midpoint.insert(key, nodes.len());
            nodes.push(m);
        }
        let mid = |a: usize, b: usize| midpoint.get(&edge_key(a, b)).copied();

        let mut next = Vec::with_capacity(elements.len() * 2);
        for &t in elements.iter() {
            let e = longest_edge(nodes, t);
            let [a, b, c] = [t[e], t[(e + 1) % 3], t[(e + 2) % 3]];
            let Some(m) = mid(a, b) else {
                next.push(t);
                continue;
            };
            match mid(c, a) {
                Some(q) => next.extend([[a, m, q], [q, m, c]]),
                None => next.push([a, m, c]),
            }
            match mid(b, c) {
                Some(q) => next.extend([[m, b, q], [m, q, c]]),
                None => next.push([m, b, c]),
            }
        }
        *elements = next;

        let mut new_ring = Vec::with_capacity(ring.len() * 2);
        let mut new_tags = Vec::with_capacity(ring.len() * 2);
        for i in 0..ring.len() {
            let (a, b) = (ring[i], ring[(i + 1) % ring.len()]);
            new_ring.push(a);
            new_tags.push(tags[i]);
            if let Some(m) = mid(a, b) {
                new_ring.push(m);
                new_tags.push(tags[i]);
            }
        }
        *ring = new_ring;
        *tags = new_tags;
    }
}

/// One Jacobi-style Laplacian pass over nodes with index below `fixed_from`.
fn laplacian_smooth(nodes: &mut [[f64; 2]], elements: &[[usize; 3]], fixed_from: usize) {
    let mut neighbours: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for tri in elements {
        for a in 0..3 {
            let (p, q) = (tri[a], tri[(a + 1) % 3]);
            if !neighbours[p].contains(&q) {
                neighbours[p].push(q);
            }
            if !neighbours[q].contains(&p) {
                neighbours[q].push(p);
            }
        }
    }
    let old = nodes.to_vec();
    for (n, adj) in neighbours.iter().enumerate().take(fixed_from) {
        if adj.is_empty() {
            continue;
        }
        let inv = 1.0 / adj.len() as f64;
        let mut sum = [0.0, 0.0];
        for &m in adj {
            sum[0] += old[m][0];
            sum[1] += old[m][1];
        }
        nodes[n] = [sum[0] * inv, sum[1] * inv];
    }
}

fn wrap_to_pi(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(TAU) - PI;
    if y <= -PI {
        y + TAU
    } else {
        y
    }
}

fn norm(p: [f64; 2]) -> f64 {
    p[0].hypot(p[1])
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
