//! Deterministic capacitance reference on a global cell-centered grid.

use thiserror::Error;

use crate::geometry::{Layout, Point3};
use crate::linalg::{pcg, SolverError};

/// Vacuum permittivity in attofarads per nanometre.
pub const EPS0_AF_PER_NM: f64 = 8.854_187_812_8e-3;

/// Converts a capacitance in `ε₀ · length-unit` into attofarads, assuming
/// the layout is expressed in nanometres.
pub fn to_attofarads(c: f64) -> f64 {
    c * EPS0_AF_PER_NM
}

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("unknown conductor {0}")]
    UnknownConductor(u32),
    #[error("grid of {cells} cells exceeds the limit of {limit}")]
    TooManyCells { cells: usize, limit: usize },
    #[error("conductor {0} covers no grid cell")]
    Unresolved(u32),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceOptions {
    pub target_cells: usize,
    pub max_cells: usize,
    pub rel_tol: f64,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        Self {
            target_cells: 64 * 64 * 64,
            max_cells: 2_000_000,
            rel_tol: 1e-11,
        }
    }
}

/// One row of the capacitance matrix, in `ε₀ · length-unit`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRow {
    pub master: u32,
    pub dims: [usize; 3],
    /// `(conductor id, C_master,id)` in layout order.
    pub entries: Vec<(u32, f64)>,
}

impl ReferenceRow {
    pub fn get(&self, id: u32) -> Option<f64> {
        self.entries.iter().find(|e| e.0 == id).map(|e| e.1)
    }
}

/// Grid resolution for a window: near-cubic cells, about `target` in total.
pub fn grid_dims(layout: &Layout, target: usize) -> [usize; 3] {
    let ext = [
        layout.window.extent(0),
        layout.window.extent(1),
        layout.window.extent(2),
    ];
    let h = (ext[0] * ext[1] * ext[2] / target as f64).cbrt();
    ext.map(|e| ((e / h).round() as usize).max(1))
}

pub fn reference_row(layout: &Layout, master: u32, opts: &ReferenceOptions) -> Result<ReferenceRow, ReferenceError> {
    if layout.conductor(master).is_err() {
        return Err(ReferenceError::UnknownConductor(master));
    }
    let dims = grid_dims(layout, opts.target_cells);
    let total = dims[0] * dims[1] * dims[2];
    if total > opts.max_cells {
        return Err(ReferenceError::TooManyCells {
            cells: total,
            limit: opts.max_cells,
        });
    }
    let w = &layout.window;
    let h = [0, 1, 2].map(|a| w.extent(a) / dims[a] as f64);
    let strides = [dims[1] * dims[2], dims[2], 1];

    // owner[c]: conductor index or usize::MAX for free space.
    let mut owner = vec![usize::MAX; total];
    let mut kappa = vec![0.0; total];
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let c = i * strides[0] + j * strides[1] + k;
                let p = Point3::new(
                    w.min.x + (i as f64 + 0.5) * h[0],
                    w.min.y + (j as f64 + 0.5) * h[1],
                    w.min.z + (k as f64 + 0.5) * h[2],
                );
                if let Some(ci) = layout
                    .conductors
                    .iter()
                    .position(|cd| cd.boxes.iter().any(|b| b.contains(p)))
                {
                    owner[c] = ci;
                } else {
                    kappa[c] = layout.kappa_at(p);
                }
            }
        }
    }
    for (ci, cd) in layout.conductors.iter().enumerate() {
        if !owner.contains(&ci) {
            return Err(ReferenceError::Unresolved(cd.id));
        }
    }
    let master_idx = layout.conductors.iter().position(|c| c.id == master).unwrap();

    // Conductance of the link between c and c + stride[a].
    let link = |a: usize, c: usize| -> f64 {
        let d = c + strides[a];
        let area_over_len = h[(a + 1) % 3] * h[(a + 2) % 3] / h[a];
        match (owner[c] == usize::MAX, owner[d] == usize::MAX) {
            (true, true) => 2.0 * kappa[c] * kappa[d] / (kappa[c] + kappa[d]) * area_over_len,
            (true, false) => 2.0 * kappa[c] * area_over_len,
            (false, true) => 2.0 * kappa[d] * area_over_len,
            (false, false) => 0.0,
        }
    };
    let has_next = |a: usize, c: usize| -> bool { (c / strides[a]) % dims[a] + 1 < dims[a] };

    let mut diag = vec![0.0; total];
    let mut rhs = vec![0.0; total];
    let mut links: [Vec<f64>; 3] = [vec![0.0; total], vec![0.0; total], vec![0.0; total]];
    for a in 0..3 {
        for c in 0..total {
            if !has_next(a, c) {
                continue;
            }
            let g = link(a, c);
            links[a][c] = g;
            let d = c + strides[a];
            for (x, y) in [(c, d), (d, c)] {
                if owner[x] == usize::MAX {
                    diag[x] += g;
                    if owner[y] == master_idx {
                        rhs[x] += g;
                    }
                }
            }
        }
    }
    let inv: Vec<f64> = (0..total)
        .map(|c| if owner[c] == usize::MAX && diag[c] > 0.0 { 1.0 / diag[c] } else { 1.0 })
        .collect();
    let apply = |x: &[f64], y: &mut [f64]| {
        for c in 0..total {
            y[c] = if owner[c] == usize::MAX { diag[c] * x[c] } else { x[c] };
        }
        for a in 0..3 {
            let s = strides[a];
            for c in 0..total {
                let g = links[a][c];
                if g == 0.0 {
                    continue;
                }
                let d = c + s;
                if owner[c] == usize::MAX && owner[d] == usize::MAX {
                    y[c] -= g * x[d];
                    y[d] -= g * x[c];
                }
            }
        }
    };
    let mut phi = vec![0.0; total];
    pcg(apply, &inv, &rhs, &mut phi, opts.rel_tol, 20 * total)?;

    let potential = |c: usize| -> f64 {
        match owner[c] {
            usize::MAX => phi[c],
            o if o == master_idx => 1.0,
            _ => 0.0,
        }
    };
    let mut charge = vec![0.0; layout.conductors.len()];
    for a in 0..3 {
        for c in 0..total {
            let g = links[a][c];
            if g == 0.0 {
                continue;
            }
            let d = c + strides[a];
            for (x, y) in [(c, d), (d, c)] {
                if owner[x] != usize::MAX && owner[y] == usize::MAX {
                    charge[owner[x]] += g * (potential(x) - potential(y));
                }
            }
        }
    }
    Ok(ReferenceRow {
        master,
        dims,
        entries: layout
            .conductors
            .iter()
            .zip(charge)
            .map(|(cd, q)| (cd.id, q))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const PLATES: &str = "\
window 0 0 0 10 10 10
diel_bg 1
cond 1 0 0 0 10 10 2
cond 2 0 0 8 10 10 10
";

    fn opts(target: usize) -> ReferenceOptions {
        ReferenceOptions {
            target_cells: target,
            ..ReferenceOptions::default()
        }
    }

    #[test]
    fn full_window_plates_match_the_analytic_value() {
        let layout = Layout::parse(PLATES).unwrap();
        let row = reference_row(&layout, 1, &opts(20 * 20 * 20)).unwrap();
        assert_eq!(row.dims, [20, 20, 20]);
        // C = κ A / d = 100 / 6
        assert!((row.get(1).unwrap() - 100.0 / 6.0).abs() < 1e-8);
        assert!((row.get(2).unwrap() + 100.0 / 6.0).abs() < 1e-8);
    }

    #[test]
    fn layered_plates_are_series_capacitors() {
        let text = format!("{PLATES}diel 0 4 0 0 2 10 10 4\n");
        let layout = Layout::parse(&text).unwrap();
        let row = reference_row(&layout, 1, &opts(10 * 10 * 10)).unwrap();
        let expect = 100.0 / (2.0 / 4.0 + 4.0 / 1.0);
        assert!((row.get(1).unwrap() - expect).abs() < 1e-8);
    }

    #[test]
    fn unknown_master_and_cell_limit() {
        let layout = Layout::parse(PLATES).unwrap();
        assert!(matches!(
            reference_row(&layout, 9, &ReferenceOptions::default()),
            Err(ReferenceError::UnknownConductor(9))
        ));
        let o = ReferenceOptions {
            target_cells: 1000,
            max_cells: 10,
            ..ReferenceOptions::default()
        };
        assert!(matches!(reference_row(&layout, 1, &o), Err(ReferenceError::TooManyCells { .. })));
    }

    #[test]
    fn attofarad_conversion() {
        assert!((to_attofarads(1000.0) - 8.854187812).abs() < 1e-9);
    }
}
