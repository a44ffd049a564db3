//! Finite-difference transition kernels on a voxelized cube.
//!
//! The cube `[-1,1]³` is split into `n³` unit cells. Neighbouring cells are
//! joined by the harmonic mean of their permittivities; every cell on the
//! cube surface drains into one absorbing pixel per adjacent face through a
//! half-cell link of conductance `2κ`. The Poisson kernel is the absorption
//! distribution of the weighted walk started at the center cell, obtained
//! from a single solve with a unit source at the center (the operator is
//! symmetric, so this is also the adjoint solve).

use crate::dielectric::VoxelGrid;
use crate::geometry::SignedAxis;
use crate::linalg::{pcg, SolverError};
use crate::symmetry::{face_index, Symmetry};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdmOptions {
    pub rel_tol: f64,
    /// Iteration cap as a multiple of the cell count.
    pub max_iter_factor: usize,
}

impl Default for FdmOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            max_iter_factor: 10,
        }
    }
}

/// Per-pixel values on the six faces, `6 × n × n`, faces ordered
/// `-x, +x, -y, +y, -z, +z`, pixels along the face's tangent axes.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    n: usize,
    data: Vec<f64>,
}

impl FaceField {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; 6 * n * n],
        }
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), 6 * n * n);
        Self { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, face: SignedAxis, u: usize, v: usize) -> f64 {
        self.data[face_index(face, u, v, self.n)]
    }

    pub fn face(&self, face: SignedAxis) -> &[f64] {
        let m = self.n * self.n;
        &self.data[face.index() * m..(face.index() + 1) * m]
    }

    pub fn face_sum(&self, face: SignedAxis) -> f64 {
        self.face(face).iter().sum()
    }

    pub fn face_abs_sum(&self, face: SignedAxis) -> f64 {
        self.face(face).iter().map(|v| v.abs()).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn abs_sum(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn transformed(&self, g: &Symmetry) -> FaceField {
        FaceField {
            n: self.n,
            data: g.apply_faces(&self.data, self.n),
        }
    }

    pub fn scaled(&self, s: f64) -> FaceField {
        FaceField {
            n: self.n,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &FaceField) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Conductance network of one voxelized cube.
#[derive(Debug, Clone)]
pub struct DiscreteSystem {
    n: usize,
    kappa: Vec<f64>,
    /// `links[a][c]`: conductance between cell `c` and its `+a` neighbour.
    links: [Vec<f64>; 3],
    /// Sum of absorbing-pixel conductances per cell.
    boundary: Vec<f64>,
    diag: Vec<f64>,
}

pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

impl DiscreteSystem {
    pub fn assemble(grid: &VoxelGrid) -> Self {
        let n = grid.n();
        let kappa = grid.values().to_vec();
        let strides = [n * n, n, 1];
        let total = n * n * n;
        let mut links: [Vec<f64>; 3] = [vec![0.0; total], vec![0.0; total], vec![0.0; total]];
        let mut boundary = vec![0.0; total];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let c = (i * n + j) * n + k;
                    let idx = [i, j, k];
                    for a in 0..3 {
                        if idx[a] + 1 < n {
                            links[a][c] = harmonic_mean(kappa[c], kappa[c + strides[a]]);
                        }
                        if idx[a] == 0 {
                            boundary[c] += 2.0 * kappa[c];
                        }
                        if idx[a] + 1 == n {
                            boundary[c] += 2.0 * kappa[c];
                        }
                    }
                }
            }
        }
        let mut diag = boundary.clone();
        for a in 0..3 {
            for c in 0..total {
                let g = links[a][c];
                if g > 0.0 {
                    diag[c] += g;
                    diag[c + strides[a]] += g;
                }
            }
        }
        Self {
            n,
            kappa,
            links,
            boundary,
            diag,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Conductance between cell `c` and its `+axis` neighbour.
    pub fn link(&self, axis: usize, cell: [usize; 3]) -> f64 {
        self.links[axis][self.cell(cell)]
    }

    pub fn boundary_conductance(&self, cell: [usize; 3]) -> f64 {
        self.boundary[self.cell(cell)]
    }

    pub fn diagonal(&self, cell: [usize; 3]) -> f64 {
        self.diag[self.cell(cell)]
    }

    /// Diagonal minus every off-diagonal and boundary coupling of each row.
    pub fn row_imbalance(&self) -> Vec<f64> {
        let n = self.n;
        let strides = [n * n, n, 1];
        let mut out = self.diag.clone();
        for (c, o) in out.iter_mut().enumerate() {
            *o -= self.boundary[c];
        }
        for a in 0..3 {
            for c in 0..self.diag.len() {
                let g = self.links[a][c];
                if g > 0.0 {
                    out[c] -= g;
                    out[c + strides[a]] -= g;
                }
            }
        }
        out
    }

    fn cell(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.n + idx[1]) * self.n + idx[2]
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.n;
        let nn = n * n;
        for (c, out) in y.iter_mut().enumerate() {
            *out = self.diag[c] * x[c];
        }
        for c in 0..x.len() {
            let gx = self.links[0][c];
            if gx > 0.0 {
                y[c] -= gx * x[c + nn];
                y[c + nn] -= gx * x[c];
            }
            let gy = self.links[1][c];
            if gy > 0.0 {
                y[c] -= gy * x[c + n];
                y[c + n] -= gy * x[c];
            }
            let gz = self.links[2][c];
            if gz > 0.0 {
                y[c] -= gz * x[c + 1];
                y[c + 1] -= gz * x[c];
            }
        }
    }

    /// Green's function column for a unit source at `cell`.
    pub fn solve_point_source(&self, cell: [usize; 3], opts: &FdmOptions) -> Result<Vec<f64>, SolverError> {
        let total = self.diag.len();
        let mut b = vec![0.0; total];
        b[self.cell(cell)] = 1.0;
        let inv: Vec<f64> = self.diag.iter().map(|d| 1.0 / d).collect();
        let mut x = vec![0.0; total];
        pcg(
            |v, out| self.apply(v, out),
            &inv,
            &b,
            &mut x,
            opts.rel_tol,
            opts.max_iter_factor * total,
        )?;
        Ok(x)
    }

    /// Absorption masses at every boundary pixel for a solved Green column.
    pub fn absorption(&self, green: &[f64]) -> FaceField {
        let n = self.n;
        let mut field = FaceField::zeros(n);
        for face in SignedAxis::ALL {
            let (t0, t1) = face.tangent_axes();
            for u in 0..n {
                for v in 0..n {
                    let mut idx = [0; 3];
                    idx[face.axis] = if face.positive { n - 1 } else { 0 };
                    idx[t0] = u;
                    idx[t1] = v;
                    let c = self.cell(idx);
                    field.data[face_index(face, u, v, n)] = green[c] * 2.0 * self.kappa[c];
                }
            }
        }
        field
    }

    pub fn center(&self) -> [usize; 3] {
        let c = self.n / 2;
        [c, c, c]
    }
}

/// Signed derivative of the Poisson kernel with respect to the cube center
/// along one axis, in half-width units.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientKernel {
    pub axis: usize,
    pub signed: FaceField,
    /// L1 mass of `signed`.
    pub weight: f64,
}

impl GradientKernel {
    pub fn face_dist(&self) -> [f64; 6] {
        let mut f = [0.0; 6];
        for face in SignedAxis::ALL {
            f[face.index()] = self.signed.face_abs_sum(face) / self.weight;
        }
        f
    }
}

pub fn poisson_kernel(grid: &VoxelGrid, opts: &FdmOptions) -> Result<FaceField, SolverError> {
    let sys = DiscreteSystem::assemble(grid);
    let green = sys.solve_point_source(sys.center(), opts)?;
    Ok(sys.absorption(&green))
}

fn gradient_from(sys: &DiscreteSystem, axis: usize, opts: &FdmOptions) -> Result<GradientKernel, SolverError> {
    let mut plus = sys.center();
    let mut minus = sys.center();
    plus[axis] += 1;
    minus[axis] -= 1;
    let p_plus = sys.absorption(&sys.solve_point_source(plus, opts)?);
    let p_minus = sys.absorption(&sys.solve_point_source(minus, opts)?);
    let h = 2.0 / sys.n() as f64;
    let data: Vec<f64> = p_plus
        .data
        .iter()
        .zip(&p_minus.data)
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect();
    let signed = FaceField::from_vec(sys.n(), data);
    let weight = signed.abs_sum();
    Ok(GradientKernel { axis, signed, weight })
}

pub fn gradient_kernel(grid: &VoxelGrid, axis: usize, opts: &FdmOptions) -> Result<GradientKernel, SolverError> {
    gradient_from(&DiscreteSystem::assemble(grid), axis, opts)
}

/// Every transition quantity of one cube.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSet {
    pub poisson: FaceField,
    pub grad: [GradientKernel; 3],
    pub face_dist: [f64; 6],
}

impl KernelSet {
    pub fn n(&self) -> usize {
        self.poisson.n()
    }

    pub fn weight(&self, axis: usize) -> f64 {
        self.grad[axis].weight
    }

    pub fn grad_face_dist(&self, axis: usize) -> [f64; 6] {
        self.grad[axis].face_dist()
    }

    /// The kernel set of the transformed grid `g·grid`.
    pub fn transformed(&self, g: &Symmetry) -> KernelSet {
        let poisson = self.poisson.transformed(g);
        let mut grad: [Option<GradientKernel>; 3] = [None, None, None];
        for k in &self.grad {
            let dir = g.map_axis(SignedAxis::new(k.axis, true));
            grad[dir.axis] = Some(GradientKernel {
                axis: dir.axis,
                signed: k.signed.transformed(g).scaled(dir.sign()),
                weight: k.weight,
            });
        }
        let mut face_dist = [0.0; 6];
        for f in SignedAxis::ALL {
            face_dist[g.map_axis(f).index()] = self.face_dist[f.index()];
        }
        KernelSet {
            poisson,
            grad: grad.map(|k| k.expect("each axis mapped once")),
            face_dist,
        }
    }
}

pub fn face_distribution(poisson: &FaceField) -> [f64; 6] {
    let mut f = [0.0; 6];
    for face in SignedAxis::ALL {
        f[face.index()] = poisson.face_sum(face);
    }
    f
}

pub fn kernel_set(grid: &VoxelGrid, opts: &FdmOptions) -> Result<KernelSet, SolverError> {
    let sys = DiscreteSystem::assemble(grid);
    let poisson = sys.absorption(&sys.solve_point_source(sys.center(), opts)?);
    let grad = [
        gradient_from(&sys, 0, opts)?,
        gradient_from(&sys, 1, opts)?,
        gradient_from(&sys, 2, opts)?,
    ];
    let face_dist = face_distribution(&poisson);
    Ok(KernelSet {
        poisson,
        grad,
        face_dist,
    })
}
