//! The 48-element symmetry group of the cube acting on cell grids and face
//! pixels.
//!
//! A [`Symmetry`] is a signed axis permutation. Cells of an `n³` grid are
//! indexed `0..n` per axis; boundary pixels are addressed as ghost cells at
//! index `-1` or `n` on their face axis, so the same index map moves both.

use crate::geometry::SignedAxis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Symmetry {
    /// Old axis `a` becomes new axis `perm[a]`.
    perm: [usize; 3],
    /// ...reversed when `flip[a]` is set.
    flip: [bool; 3],
}

const PERMS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

impl Symmetry {
    pub const IDENTITY: Symmetry = Symmetry {
        perm: [0, 1, 2],
        flip: [false; 3],
    };

    pub fn all() -> Vec<Symmetry> {
        let mut out = Vec::with_capacity(48);
        for perm in PERMS {
            for bits in 0..8u8 {
                out.push(Symmetry {
                    perm,
                    flip: [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0],
                });
            }
        }
        out
    }

    pub fn rotations() -> Vec<Symmetry> {
        Self::all().into_iter().filter(|s| s.det() == 1).collect()
    }

    /// Symmetry sending `+x, +y, +z` to the given signed axes.
    pub fn from_images(images: [SignedAxis; 3]) -> Option<Symmetry> {
        let perm = [images[0].axis, images[1].axis, images[2].axis];
        let mut seen = [false; 3];
        for &p in &perm {
            if p > 2 || seen[p] {
                return None;
            }
            seen[p] = true;
        }
        Some(Symmetry {
            perm,
            flip: [!images[0].positive, !images[1].positive, !images[2].positive],
        })
    }

    pub fn det(&self) -> i32 {
        let inversions = (0..3)
            .flat_map(|i| (i + 1..3).map(move |j| (i, j)))
            .filter(|&(i, j)| self.perm[i] > self.perm[j])
            .count();
        let mut d = if inversions % 2 == 0 { 1 } else { -1 };
        for f in self.flip {
            if f {
                d = -d;
            }
        }
        d
    }

    pub fn inverse(&self) -> Symmetry {
        let mut perm = [0; 3];
        let mut flip = [false; 3];
        for a in 0..3 {
            perm[self.perm[a]] = a;
            flip[self.perm[a]] = self.flip[a];
        }
        Symmetry { perm, flip }
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &Symmetry) -> Symmetry {
        let mut perm = [0; 3];
        let mut flip = [false; 3];
        for a in 0..3 {
            perm[a] = next.perm[self.perm[a]];
            flip[a] = self.flip[a] ^ next.flip[self.perm[a]];
        }
        Symmetry { perm, flip }
    }

    pub fn map_axis(&self, d: SignedAxis) -> SignedAxis {
        SignedAxis::new(self.perm[d.axis], d.positive ^ self.flip[d.axis])
    }

    pub fn map_vector(&self, v: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for a in 0..3 {
            out[self.perm[a]] = if self.flip[a] { -v[a] } else { v[a] };
        }
        out
    }

    pub fn map_index(&self, idx: [isize; 3], n: usize) -> [isize; 3] {
        let last = n as isize - 1;
        let mut out = [0; 3];
        for a in 0..3 {
            out[self.perm[a]] = if self.flip[a] { last - idx[a] } else { idx[a] };
        }
        out
    }

    /// Maps a face pixel; `(u, v)` run along the face's tangent axes.
    pub fn map_pixel(&self, face: SignedAxis, u: usize, v: usize, n: usize) -> (SignedAxis, usize, usize) {
        let ghost = pixel_to_ghost(face, u, v, n);
        ghost_to_pixel(self.map_index(ghost, n), n)
    }

    /// Maps a continuous in-pixel offset `(du, dv)` in `[0,1)²` together with
    /// its pixel.
    pub fn map_pixel_offset(&self, face: SignedAxis, offset: [f64; 2]) -> [f64; 2] {
        let (t0, t1) = face.tangent_axes();
        let mut local = [0.0; 3];
        local[t0] = offset[0];
        local[t1] = offset[1];
        let mut mapped = [0.0; 3];
        for a in 0..3 {
            mapped[self.perm[a]] = if self.flip[a] { 1.0 - local[a] } else { local[a] };
        }
        let (s0, s1) = self.map_axis(face).tangent_axes();
        [mapped[s0], mapped[s1]]
    }

    /// Transforms an `n³` cell array (x-major): `out[g(c)] = values[c]`.
    pub fn apply_cells(&self, values: &[f64], n: usize) -> Vec<f64> {
        debug_assert_eq!(values.len(), n * n * n);
        let mut out = vec![0.0; values.len()];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let m = self.map_index([i as isize, j as isize, k as isize], n);
                    out[cell_index(m, n)] = values[(i * n + j) * n + k];
                }
            }
        }
        out
    }

    /// Transforms a `6 × n × n` face array: `out[g(p)] = values[p]`.
    pub fn apply_faces(&self, values: &[f64], n: usize) -> Vec<f64> {
        debug_assert_eq!(values.len(), 6 * n * n);
        let mut out = vec![0.0; values.len()];
        for face in SignedAxis::ALL {
            for u in 0..n {
                for v in 0..n {
                    let (f2, u2, v2) = self.map_pixel(face, u, v, n);
                    out[face_index(f2, u2, v2, n)] = values[face_index(face, u, v, n)];
                }
            }
        }
        out
    }

    /// Proper rotation carrying `from` onto `to`: identity, a quarter turn
    /// about the common perpendicular, or a half turn about the lowest
    /// perpendicular axis.
    pub fn taking(from: SignedAxis, to: SignedAxis) -> Symmetry {
        if from == to {
            return Self::IDENTITY;
        }
        let mut images = [
            SignedAxis::new(0, true),
            SignedAxis::new(1, true),
            SignedAxis::new(2, true),
        ];
        if from.axis == to.axis {
            for a in (0..3).filter(|&a| a != from.axis).skip(1) {
                images[a] = SignedAxis::new(a, false);
            }
            images[from.axis] = SignedAxis::new(from.axis, false);
        } else {
            let s = from.positive == to.positive;
            images[from.axis] = SignedAxis::new(to.axis, s);
            images[to.axis] = SignedAxis::new(from.axis, !s);
        }
        Self::from_images(images).expect("valid images")
    }

    /// The proper rotation sending `a.0 -> a.1` and `b.0 -> b.1`; the two
    /// source axes must be distinct axes.
    pub fn rotation_from_pair(a: (SignedAxis, SignedAxis), b: (SignedAxis, SignedAxis)) -> Symmetry {
        assert_ne!(a.0.axis, b.0.axis);
        assert_ne!(a.1.axis, b.1.axis);
        let rest_src = 3 - a.0.axis - b.0.axis;
        let rest_dst = 3 - a.1.axis - b.1.axis;
        let mut images = [SignedAxis::new(0, true); 3];
        images[a.0.axis] = SignedAxis::new(a.1.axis, a.0.positive == a.1.positive);
        images[b.0.axis] = SignedAxis::new(b.1.axis, b.0.positive == b.1.positive);
        images[rest_src] = SignedAxis::new(rest_dst, true);
        let mut g = Self::from_images(images).expect("valid images");
        if g.det() < 0 {
            images[rest_src] = SignedAxis::new(rest_dst, false);
            g = Self::from_images(images).expect("valid images");
        }
        g
    }
}

pub(crate) fn cell_index(idx: [isize; 3], n: usize) -> usize {
    (idx[0] as usize * n + idx[1] as usize) * n + idx[2] as usize
}

pub(crate) fn face_index(face: SignedAxis, u: usize, v: usize, n: usize) -> usize {
    (face.index() * n + u) * n + v
}

fn pixel_to_ghost(face: SignedAxis, u: usize, v: usize, n: usize) -> [isize; 3] {
    let (t0, t1) = face.tangent_axes();
    let mut g = [0; 3];
    g[face.axis] = if face.positive { n as isize } else { -1 };
    g[t0] = u as isize;
    g[t1] = v as isize;
    g
}

fn ghost_to_pixel(g: [isize; 3], n: usize) -> (SignedAxis, usize, usize) {
    let axis = (0..3)
        .find(|&a| g[a] < 0 || g[a] >= n as isize)
        .expect("ghost index lies outside the grid");
    let face = SignedAxis::new(axis, g[axis] >= 0);
    let (t0, t1) = face.tangent_axes();
    (face, g[t0] as usize, g[t1] as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_has_48_elements_and_24_rotations() {
        let all = Symmetry::all();
        assert_eq!(all.len(), 48);
        assert_eq!(Symmetry::rotations().len(), 24);
        for g in &all {
            assert_eq!(g.then(&g.inverse()), Symmetry::IDENTITY);
            assert_eq!(g.inverse().then(g), Symmetry::IDENTITY);
        }
    }

    #[test]
    fn composition_matches_vector_action() {
        let all = Symmetry::all();
        let v = [0.3, -1.7, 2.9];
        for g in &all {
            for h in all.iter().step_by(5) {
                let lhs = g.then(h).map_vector(v);
                let rhs = h.map_vector(g.map_vector(v));
                assert_eq!(lhs, rhs);
            }
        }
    }

    #[test]
    fn taking_is_a_proper_rotation() {
        for from in SignedAxis::ALL {
            for to in SignedAxis::ALL {
                let g = Symmetry::taking(from, to);
                assert_eq!(g.det(), 1);
                assert_eq!(g.map_axis(from), to);
            }
        }
        let g = Symmetry::taking(SignedAxis::new(0, true), SignedAxis::new(2, true));
        assert_eq!(g.map_vector([1.0, 2.0, 3.0]), [-3.0, 2.0, 1.0]);
    }

    #[test]
    fn pair_rotation_hits_both_targets() {
        let z = SignedAxis::new(2, true);
        let x = SignedAxis::new(0, true);
        for face in [0, 1, 2, 3].map(SignedAxis::from_index) {
            let g = Symmetry::rotation_from_pair((face, z), (z, x));
            assert_eq!(g.det(), 1);
            assert_eq!(g.map_axis(face), z);
            assert_eq!(g.map_axis(z), x);
        }
    }

    #[test]
    fn pixel_maps_are_bijective() {
        let n = 5;
        for g in Symmetry::all() {
            let mut seen = vec![false; 6 * n * n];
            for face in SignedAxis::ALL {
                for u in 0..n {
                    for v in 0..n {
                        let (f2, u2, v2) = g.map_pixel(face, u, v, n);
                        assert_eq!(f2, g.map_axis(face));
                        let back = g.inverse().map_pixel(f2, u2, v2, n);
                        assert_eq!(back, (face, u, v));
                        seen[face_index(f2, u2, v2, n)] = true;
                    }
                }
            }
            assert!(seen.into_iter().all(|s| s));
        }
    }

    #[test]
    fn offsets_follow_pixels() {
        // The continuous point (pixel + offset) must transform like the pixel.
        let n = 7;
        let face = SignedAxis::new(1, false);
        for g in Symmetry::all() {
            let (u, v) = (2, 5);
            let off = [0.25, 0.6];
            let (f2, u2, v2) = g.map_pixel(face, u, v, n);
            let off2 = g.map_pixel_offset(face, off);
            let to_local = |f: SignedAxis, u: usize, v: usize, o: [f64; 2]| {
                let (t0, t1) = f.tangent_axes();
                let mut p = [0.0; 3];
                p[f.axis] = f.sign();
                p[t0] = -1.0 + 2.0 * (u as f64 + o[0]) / n as f64;
                p[t1] = -1.0 + 2.0 * (v as f64 + o[1]) / n as f64;
                p
            };
            let expect = g.map_vector(to_local(face, u, v, off));
            let got = to_local(f2, u2, v2, off2);
            for a in 0..3 {
                assert!((expect[a] - got[a]).abs() < 1e-12);
            }
        }
    }
}
