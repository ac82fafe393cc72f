//! Uniform rectangular meshes of the unit square with a nested refinement
//! hierarchy, face/neighbor topology and overlapping vertex patches.
//!
//! Orientation conventions used throughout the crate:
//! * vertical faces carry the canonical normal `+x`, horizontal faces `+y`;
//!   for an interior face the normal points from the "plus" cell into the
//!   "minus" cell (left-to-right, bottom-to-top),
//! * faces are enumerated vertical-first, each group ordered by (row, then
//!   column) of the face lattice.
//!
//! Meshes are immutable after construction and shared behind `Arc`, so
//! assembly and preconditioner code can read them concurrently.

use std::sync::Arc;

use crate::{Error, Result};

/// Axis-aligned square cell of the uniform grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    /// Grid coordinates (column, row), each in `0..n_per_side`.
    pub ix: usize,
    pub iy: usize,
    /// Lower-left corner.
    pub x0: f64,
    pub y0: f64,
    /// Side length (= mesh.h).
    pub h: f64,
}

/// Face orientation: vertical faces separate horizontally adjacent cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Vertical,
    Horizontal,
}

/// Interior face shared by exactly two cells.
///
/// The canonical unit normal points from `cell_plus` to `cell_minus`
/// (`+x` for vertical faces, `+y` for horizontal ones).
#[derive(Debug, Clone, Copy)]
pub struct InteriorFace {
    pub face_id: usize,
    pub cell_plus: usize,
    pub cell_minus: usize,
    pub orientation: Orientation,
    pub normal: [f64; 2],
    /// Face length.
    pub measure: f64,
}

/// Boundary face with its single adjacent cell and outward normal.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryFace {
    pub face_id: usize,
    pub cell: usize,
    pub orientation: Orientation,
    pub outward_normal: [f64; 2],
    pub measure: f64,
}

/// Uniform `n x n` mesh of the unit square.
#[derive(Debug)]
pub struct Mesh {
    pub n_per_side: usize,
    pub h: f64,
    pub cells: Vec<Cell>,
    pub interior_faces: Vec<InteriorFace>,
    pub boundary_faces: Vec<BoundaryFace>,
    /// The coarser mesh this one refines, if any.
    pub parent: Option<Arc<Mesh>>,
}

impl Mesh {
    pub fn cell_index(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.n_per_side && iy < self.n_per_side);
        iy * self.n_per_side + ix
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Total number of faces (interior and boundary).
    pub fn n_faces(&self) -> usize {
        2 * self.n_per_side * (self.n_per_side + 1)
    }

    /// Id of the vertical face at lattice position (i, j): the face at
    /// `x = i*h` spanning row j. Vertical faces come first in the global
    /// enumeration.
    pub fn vertical_face_id(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= self.n_per_side && j < self.n_per_side);
        j * (self.n_per_side + 1) + i
    }

    /// Id of the horizontal face at `y = j*h` spanning column i.
    pub fn horizontal_face_id(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n_per_side && j <= self.n_per_side);
        self.n_per_side * (self.n_per_side + 1) + j * self.n_per_side + i
    }

    /// Face ids of a cell in local order (left, right, bottom, top).
    pub fn cell_faces(&self, cell: usize) -> [usize; 4] {
        let c = &self.cells[cell];
        [
            self.vertical_face_id(c.ix, c.iy),
            self.vertical_face_id(c.ix + 1, c.iy),
            self.horizontal_face_id(c.ix, c.iy),
            self.horizontal_face_id(c.ix, c.iy + 1),
        ]
    }

    /// Cells adjacent to `cell` through its faces (up to 4).
    pub fn face_neighbors(&self, cell: usize) -> Vec<usize> {
        let c = &self.cells[cell];
        let n = self.n_per_side;
        let mut out = Vec::with_capacity(4);
        if c.ix > 0 {
            out.push(self.cell_index(c.ix - 1, c.iy));
        }
        if c.ix + 1 < n {
            out.push(self.cell_index(c.ix + 1, c.iy));
        }
        if c.iy > 0 {
            out.push(self.cell_index(c.ix, c.iy - 1));
        }
        if c.iy + 1 < n {
            out.push(self.cell_index(c.ix, c.iy + 1));
        }
        out
    }

    /// The parent cell geometrically containing the given fine cell.
    pub fn parent_cell_of(&self, cell: usize) -> Option<usize> {
        let parent = self.parent.as_ref()?;
        let c = &self.cells[cell];
        Some(parent.cell_index(c.ix / 2, c.iy / 2))
    }
}

/// Builds the uniform mesh with `n_per_side^2` cells; `h = 1/n_per_side`.
pub fn build_uniform_mesh(n_per_side: usize) -> Result<Arc<Mesh>> {
    if n_per_side == 0 {
        return Err(Error::InvalidMesh(
            "n_per_side must be at least 1".into(),
        ));
    }
    Ok(Arc::new(build_mesh_inner(n_per_side, None)))
}

/// Refines every cell 2x2; the result links back to its parent.
pub fn refine(mesh: &Arc<Mesh>) -> Arc<Mesh> {
    Arc::new(build_mesh_inner(
        2 * mesh.n_per_side,
        Some(mesh.clone()),
    ))
}

fn build_mesh_inner(n: usize, parent: Option<Arc<Mesh>>) -> Mesh {
    let h = 1.0 / n as f64;
    let mut cells = Vec::with_capacity(n * n);
    for iy in 0..n {
        for ix in 0..n {
            cells.push(Cell {
                ix,
                iy,
                x0: ix as f64 * h,
                y0: iy as f64 * h,
                h,
            });
        }
    }
    let mut mesh = Mesh {
        n_per_side: n,
        h,
        cells,
        interior_faces: Vec::new(),
        boundary_faces: Vec::new(),
        parent,
    };
    // vertical faces
    for j in 0..n {
        for i in 0..=n {
            let face_id = mesh.vertical_face_id(i, j);
            if i == 0 || i == n {
                mesh.boundary_faces.push(BoundaryFace {
                    face_id,
                    cell: mesh.cell_index(if i == 0 { 0 } else { n - 1 }, j),
                    orientation: Orientation::Vertical,
                    outward_normal: if i == 0 { [-1.0, 0.0] } else { [1.0, 0.0] },
                    measure: h,
                });
            } else {
                mesh.interior_faces.push(InteriorFace {
                    face_id,
                    cell_plus: mesh.cell_index(i - 1, j),
                    cell_minus: mesh.cell_index(i, j),
                    orientation: Orientation::Vertical,
                    normal: [1.0, 0.0],
                    measure: h,
                });
            }
        }
    }
    // horizontal faces
    for j in 0..=n {
        for i in 0..n {
            let face_id = mesh.horizontal_face_id(i, j);
            if j == 0 || j == n {
                mesh.boundary_faces.push(BoundaryFace {
                    face_id,
                    cell: mesh.cell_index(i, if j == 0 { 0 } else { n - 1 }),
                    orientation: Orientation::Horizontal,
                    outward_normal: if j == 0 { [0.0, -1.0] } else { [0.0, 1.0] },
                    measure: h,
                });
            } else {
                mesh.interior_faces.push(InteriorFace {
                    face_id,
                    cell_plus: mesh.cell_index(i, j - 1),
                    cell_minus: mesh.cell_index(i, j),
                    orientation: Orientation::Horizontal,
                    normal: [0.0, 1.0],
                    measure: h,
                });
            }
        }
    }
    mesh
}

/// Overlapping subdomain: the cells sharing one mesh vertex.
#[derive(Debug, Clone)]
pub struct Patch {
    /// Vertex lattice coordinates (i, j), each in `0..=n_per_side`.
    pub vertex: (usize, usize),
    /// Adjacent cells; 4 for interior vertices.
    pub cells: Vec<usize>,
    pub is_interior: bool,
}

/// All vertex patches, including flagged boundary and corner ones.
pub fn all_vertex_patches(mesh: &Mesh) -> Vec<Patch> {
    let n = mesh.n_per_side;
    let mut out = Vec::with_capacity((n + 1) * (n + 1));
    for i in 0..=n {
        for j in 0..=n {
            let mut cells = Vec::with_capacity(4);
            for dx in 0..2 {
                for dy in 0..2 {
                    if i + dx >= 1 && i + dx <= n && j + dy >= 1 && j + dy <= n {
                        cells.push(mesh.cell_index(i + dx - 1, j + dy - 1));
                    }
                }
            }
            let is_interior = i >= 1 && i < n && j >= 1 && j < n;
            debug_assert_eq!(is_interior, cells.len() == 4);
            out.push(Patch {
                vertex: (i, j),
                cells,
                is_interior,
            });
        }
    }
    out
}

/// Interior-vertex patches only (the solver's patch set), ordered
/// lexicographically by vertex (x, then y). Boundary and corner patches,
/// which have fewer than 4 cells, are excluded.
pub fn vertex_patches(mesh: &Mesh) -> Result<Vec<Patch>> {
    if mesh.n_per_side < 2 {
        return Err(Error::InvalidMesh(
            "vertex patches need n_per_side >= 2 (no interior vertex exists)".into(),
        ));
    }
    let mut out = Vec::with_capacity((mesh.n_per_side - 1).pow(2));
    for i in 1..mesh.n_per_side {
        for j in 1..mesh.n_per_side {
            let cells = vec![
                mesh.cell_index(i - 1, j - 1),
                mesh.cell_index(i, j - 1),
                mesh.cell_index(i - 1, j),
                mesh.cell_index(i, j),
            ];
            out.push(Patch {
                vertex: (i, j),
                cells,
                is_interior: true,
            });
        }
    }
    Ok(out)
}

/// The four faces incident to a patch's central vertex, in the structural
/// order (vertical-below, vertical-above, horizontal-left, horizontal-right).
/// These are exactly the faces interior to the patch.
pub fn patch_interior_faces(mesh: &Mesh, patch: &Patch) -> [usize; 4] {
    let (i, j) = patch.vertex;
    debug_assert!(patch.is_interior);
    [
        mesh.vertical_face_id(i, j - 1),
        mesh.vertical_face_id(i, j),
        mesh.horizontal_face_id(i - 1, j),
        mesh.horizontal_face_id(i, j),
    ]
}
