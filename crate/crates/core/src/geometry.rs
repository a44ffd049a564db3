//! Rectilinear layouts, transition cubes and Gaussian surfaces.
//!
//! A [`Layout`] is an extraction window holding axis-aligned conductors and a
//! priority-ordered list of dielectric blocks. The window is a Neumann wall:
//! every query outside of it is mirror-folded back inside (see
//! [`Layout::fold`]), which is how walks are kept from leaking.

use std::fmt;
use std::ops::{Index, IndexMut};

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("conductor {id} outside window")]
    ConductorOutsideWindow { id: u32 },
    #[error("conductors {a} and {b} overlap")]
    ConductorOverlap { a: u32, b: u32 },
    #[error("missing background dielectric (diel_bg)")]
    MissingBackground,
    #[error("missing window")]
    MissingWindow,
    #[error("degenerate box: min must be strictly below max on every axis")]
    DegenerateBox,
    #[error("point ({0}) lies inside a conductor")]
    PointInsideConductor(Point3),
    #[error("unknown conductor id {0}")]
    UnknownConductor(u32),
    #[error("gaussian surface of conductor {id} collides with conductor {other}")]
    SurfaceCollision { id: u32, other: u32 },
    #[error("gaussian surface offset must be positive, got {0}")]
    BadOffset(f64),
}

/// A position in layout units (nanometers).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn translate(self, d: Point3) -> Self {
        Self::new(self.x + d.x, self.y + d.y, self.z + d.z)
    }

    pub fn scale(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn chebyshev(self, other: Point3) -> f64 {
        (0..3).map(|a| (self[a] - other[a]).abs()).fold(0.0, f64::max)
    }
}

impl Index<usize> for Point3 {
    type Output = f64;
    fn index(&self, axis: usize) -> &f64 {
        match axis {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("axis {axis} out of range"),
        }
    }
}

impl IndexMut<usize> for Point3 {
    fn index_mut(&mut self, axis: usize) -> &mut f64 {
        match axis {
            0 => &mut self.x,
            1 => &mut self.y,
            2 => &mut self.z,
            _ => panic!("axis {axis} out of range"),
        }
    }
}

impl fmt::Display for Point3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}, {}, {}", self.x, self.y, self.z)
    }
}

/// An axis together with a direction. Doubles as a cube-face index:
/// `0 = -x, 1 = +x, 2 = -y, 3 = +y, 4 = -z, 5 = +z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SignedAxis {
    pub axis: usize,
    pub positive: bool,
}

impl SignedAxis {
    pub const ALL: [SignedAxis; 6] = [
        SignedAxis::new(0, false),
        SignedAxis::new(0, true),
        SignedAxis::new(1, false),
        SignedAxis::new(1, true),
        SignedAxis::new(2, false),
        SignedAxis::new(2, true),
    ];

    pub const fn new(axis: usize, positive: bool) -> Self {
        Self { axis, positive }
    }

    pub fn from_index(index: usize) -> Self {
        assert!(index < 6, "face index {index} out of range");
        Self::new(index / 2, index % 2 == 1)
    }

    pub fn index(self) -> usize {
        2 * self.axis + self.positive as usize
    }

    pub fn sign(self) -> f64 {
        if self.positive {
            1.0
        } else {
            -1.0
        }
    }

    pub fn opposite(self) -> Self {
        Self::new(self.axis, !self.positive)
    }

    /// The two in-face axes in increasing order; these index face pixels.
    pub fn tangent_axes(self) -> (usize, usize) {
        match self.axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        }
    }
}

impl fmt::Display for SignedAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = if self.positive { '+' } else { '-' };
        write!(f, "{s}{}", ['x', 'y', 'z'][self.axis])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisBox {
    pub min: Point3,
    pub max: Point3,
}

impl AxisBox {
    pub fn new(min: Point3, max: Point3) -> Result<Self, GeometryError> {
        if (0..3).all(|a| min[a] < max[a]) {
            Ok(Self { min, max })
        } else {
            Err(GeometryError::DegenerateBox)
        }
    }

    pub fn from_coords(c: [f64; 6]) -> Result<Self, GeometryError> {
        Self::new(Point3::new(c[0], c[1], c[2]), Point3::new(c[3], c[4], c[5]))
    }

    /// Unbounded box used for background dielectrics.
    pub fn everything() -> Self {
        let inf = f64::INFINITY;
        Self {
            min: Point3::new(-inf, -inf, -inf),
            max: Point3::new(inf, inf, inf),
        }
    }

    pub fn contains(&self, p: Point3) -> bool {
        (0..3).all(|a| self.min[a] <= p[a] && p[a] <= self.max[a])
    }

    pub fn contains_interior(&self, p: Point3) -> bool {
        (0..3).all(|a| self.min[a] < p[a] && p[a] < self.max[a])
    }

    pub fn contains_box(&self, other: &AxisBox) -> bool {
        (0..3).all(|a| self.min[a] <= other.min[a] && other.max[a] <= self.max[a])
    }

    /// Closed intersection test (touching counts).
    pub fn touches(&self, other: &AxisBox) -> bool {
        (0..3).all(|a| self.min[a] <= other.max[a] && other.min[a] <= self.max[a])
    }

    /// Positive-volume overlap.
    pub fn overlaps(&self, other: &AxisBox) -> bool {
        (0..3).all(|a| self.min[a] < other.max[a] && other.min[a] < self.max[a])
    }

    pub fn intersection(&self, other: &AxisBox) -> Option<AxisBox> {
        let mut lo = Point3::default();
        let mut hi = Point3::default();
        for a in 0..3 {
            lo[a] = self.min[a].max(other.min[a]);
            hi[a] = self.max[a].min(other.max[a]);
        }
        AxisBox::new(lo, hi).ok()
    }

    /// Chebyshev distance from `p` to the closed box; zero inside.
    pub fn distance(&self, p: Point3) -> f64 {
        (0..3)
            .map(|a| (self.min[a] - p[a]).max(p[a] - self.max[a]).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Chebyshev gap between two boxes; zero when they touch.
    pub fn gap(&self, other: &AxisBox) -> f64 {
        (0..3)
            .map(|a| (self.min[a] - other.max[a]).max(other.min[a] - self.max[a]).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn inflate(&self, d: f64) -> AxisBox {
        let e = Point3::new(d, d, d);
        AxisBox {
            min: self.min.translate(e.scale(-1.0)),
            max: self.max.translate(e),
        }
    }

    pub fn translate(&self, d: Point3) -> AxisBox {
        AxisBox {
            min: self.min.translate(d),
            max: self.max.translate(d),
        }
    }

    pub fn scale(&self, s: f64) -> AxisBox {
        AxisBox {
            min: self.min.scale(s),
            max: self.max.scale(s),
        }
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }

    pub fn center(&self) -> Point3 {
        Point3::new(
            0.5 * (self.min.x + self.max.x),
            0.5 * (self.min.y + self.max.y),
            0.5 * (self.min.z + self.max.z),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conductor {
    pub id: u32,
    pub boxes: Vec<AxisBox>,
}

impl Conductor {
    pub fn distance(&self, p: Point3) -> f64 {
        self.boxes
            .iter()
            .map(|b| b.distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn gap(&self, other: &Conductor) -> f64 {
        let mut g = f64::INFINITY;
        for a in &self.boxes {
            for b in &other.boxes {
                g = g.min(a.gap(b));
            }
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DielectricBlock {
    pub bbox: AxisBox,
    pub kappa: f64,
    /// Lower wins on overlap.
    pub priority: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub window: AxisBox,
    pub conductors: Vec<Conductor>,
    /// Sorted by priority; the last entry is the unbounded background.
    pub dielectrics: Vec<DielectricBlock>,
}

/// Fold one coordinate into `[lo, hi]` by repeated mirror reflection.
pub fn fold_coord(x: f64, lo: f64, hi: f64) -> f64 {
    if x >= lo && x <= hi {
        return x;
    }
    let len = hi - lo;
    let t = (x - lo).rem_euclid(2.0 * len);
    if t <= len {
        lo + t
    } else {
        lo + 2.0 * len - t
    }
}

impl Layout {
    /// Validates the layout invariants and sorts dielectrics by priority.
    pub fn new(
        window: AxisBox,
        conductors: Vec<Conductor>,
        mut dielectrics: Vec<DielectricBlock>,
        background_kappa: f64,
    ) -> Result<Self, GeometryError> {
        if !(background_kappa > 0.0) {
            return Err(GeometryError::MissingBackground);
        }
        for (i, c) in conductors.iter().enumerate() {
            if c.boxes.is_empty() {
                return Err(GeometryError::Parse {
                    line: 0,
                    message: format!("conductor {} has no boxes", c.id),
                });
            }
            if c.boxes.iter().any(|b| !window.contains_box(b)) {
                return Err(GeometryError::ConductorOutsideWindow { id: c.id });
            }
            for other in &conductors[..i] {
                if other.id == c.id {
                    return Err(GeometryError::Parse {
                        line: 0,
                        message: format!("duplicate conductor id {}", c.id),
                    });
                }
                if c.boxes.iter().any(|a| other.boxes.iter().any(|b| a.overlaps(b))) {
                    return Err(GeometryError::ConductorOverlap { a: other.id, b: c.id });
                }
            }
        }
        dielectrics.sort_by_key(|d| d.priority);
        let bg_priority = dielectrics.last().map_or(0, |d| d.priority.saturating_add(1));
        dielectrics.push(DielectricBlock {
            bbox: AxisBox::everything(),
            kappa: background_kappa,
            priority: bg_priority,
        });
        Ok(Self {
            window,
            conductors,
            dielectrics,
        })
    }

    /// Parses the line-oriented layout document.
    pub fn parse(text: &str) -> Result<Self, GeometryError> {
        let mut window = None;
        let mut conductors: Vec<Conductor> = Vec::new();
        let mut dielectrics = Vec::new();
        let mut background = None;

        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut fields = content.split_whitespace();
            let keyword = fields.next().unwrap_or_default();
            let rest: Vec<&str> = fields.collect();
            let err = |message: String| GeometryError::Parse { line, message };
            let nums = |vals: &[&str]| -> Result<Vec<f64>, GeometryError> {
                vals.iter()
                    .map(|v| {
                        v.parse::<f64>()
                            .ok()
                            .filter(|x| x.is_finite())
                            .ok_or_else(|| err(format!("invalid number '{v}'")))
                    })
                    .collect()
            };
            let make_box = |c: &[f64]| {
                AxisBox::from_coords([c[0], c[1], c[2], c[3], c[4], c[5]])
                    .map_err(|_| err("box requires min < max on every axis".into()))
            };
            match keyword {
                "window" => {
                    if rest.len() != 6 {
                        return Err(err(format!("window expects 6 coordinates, got {}", rest.len())));
                    }
                    if window.is_some() {
                        return Err(err("duplicate window".into()));
                    }
                    window = Some(make_box(&nums(&rest)?)?);
                }
                "cond" => {
                    if rest.len() != 7 {
                        return Err(err(format!("cond expects id + 6 coordinates, got {} fields", rest.len())));
                    }
                    let id: u32 = rest[0]
                        .parse()
                        .ok()
                        .filter(|&id| id >= 1)
                        .ok_or_else(|| err(format!("invalid conductor id '{}'", rest[0])))?;
                    let b = make_box(&nums(&rest[1..])?)?;
                    match conductors.iter_mut().find(|c| c.id == id) {
                        Some(c) => c.boxes.push(b),
                        None => conductors.push(Conductor { id, boxes: vec![b] }),
                    }
                }
                "diel" => {
                    if rest.len() != 8 {
                        return Err(err(format!(
                            "diel expects priority, kappa + 6 coordinates, got {} fields",
                            rest.len()
                        )));
                    }
                    let priority: i64 = rest[0]
                        .parse()
                        .map_err(|_| err(format!("invalid priority '{}'", rest[0])))?;
                    let v = nums(&rest[1..])?;
                    if !(v[0] > 0.0) {
                        return Err(err(format!("kappa must be positive, got {}", v[0])));
                    }
                    dielectrics.push(DielectricBlock {
                        bbox: make_box(&v[1..])?,
                        kappa: v[0],
                        priority,
                    });
                }
                "diel_bg" => {
                    if rest.len() != 1 {
                        return Err(err("diel_bg expects one kappa".into()));
                    }
                    if background.is_some() {
                        return Err(err("duplicate diel_bg".into()));
                    }
                    let k = nums(&rest)?[0];
                    if !(k > 0.0) {
                        return Err(err(format!("kappa must be positive, got {k}")));
                    }
                    background = Some(k);
                }
                other => return Err(err(format!("unknown keyword '{other}'"))),
            }
        }

        let window = window.ok_or(GeometryError::MissingWindow)?;
        let background = background.ok_or(GeometryError::MissingBackground)?;
        Self::new(window, conductors, dielectrics, background)
    }

    /// Serializes back to the document format.
    pub fn to_document(&self) -> String {
        let mut out = String::new();
        let coords = |b: &AxisBox| {
            format!(
                "{} {} {} {} {} {}",
                b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z
            )
        };
        out.push_str(&format!("window {}\n", coords(&self.window)));
        for c in &self.conductors {
            for b in &c.boxes {
                out.push_str(&format!("cond {} {}\n", c.id, coords(b)));
            }
        }
        let (bg, blocks) = self.dielectrics.split_last().expect("background present");
        for d in blocks {
            out.push_str(&format!("diel {} {} {}\n", d.priority, d.kappa, coords(&d.bbox)));
        }
        out.push_str(&format!("diel_bg {}\n", bg.kappa));
        out
    }

    pub fn background_kappa(&self) -> f64 {
        self.dielectrics.last().expect("background present").kappa
    }

    pub fn conductor(&self, id: u32) -> Result<&Conductor, GeometryError> {
        self.conductors
            .iter()
            .find(|c| c.id == id)
            .ok_or(GeometryError::UnknownConductor(id))
    }

    pub fn conductor_ids(&self) -> Vec<u32> {
        self.conductors.iter().map(|c| c.id).collect()
    }

    pub fn diagonal(&self) -> f64 {
        let w = &self.window;
        (0..3).map(|a| w.extent(a).powi(2)).sum::<f64>().sqrt()
    }

    /// Mirror-fold a point into the window.
    pub fn fold(&self, p: Point3) -> Point3 {
        let w = &self.window;
        Point3::new(
            fold_coord(p.x, w.min.x, w.max.x),
            fold_coord(p.y, w.min.y, w.max.y),
            fold_coord(p.z, w.min.z, w.max.z),
        )
    }

    /// Relative permittivity at `p` (folded into the window first).
    pub fn kappa_at(&self, p: Point3) -> f64 {
        kappa_in(&self.dielectrics, self.fold(p))
    }

    /// Nearest conductor and its Chebyshev distance.
    pub fn nearest_conductor(&self, p: Point3) -> (u32, f64) {
        let mut best = (0, f64::INFINITY);
        for c in &self.conductors {
            let d = c.distance(p);
            if d < best.1 {
                best = (c.id, d);
            }
        }
        best
    }

    pub fn translate(&self, d: Point3) -> Layout {
        self.map_boxes(|b| b.translate(d), |k| k)
    }

    pub fn scale_lengths(&self, s: f64) -> Layout {
        self.map_boxes(|b| b.scale(s), |k| k)
    }

    pub fn scale_kappa(&self, s: f64) -> Layout {
        self.map_boxes(|b| *b, |k| k * s)
    }

    fn map_boxes(&self, fb: impl Fn(&AxisBox) -> AxisBox, fk: impl Fn(f64) -> f64) -> Layout {
        let n = self.dielectrics.len();
        Layout {
            window: fb(&self.window),
            conductors: self
                .conductors
                .iter()
                .map(|c| Conductor {
                    id: c.id,
                    boxes: c.boxes.iter().map(&fb).collect(),
                })
                .collect(),
            dielectrics: self
                .dielectrics
                .iter()
                .enumerate()
                .map(|(i, d)| DielectricBlock {
                    bbox: if i + 1 == n { d.bbox } else { fb(&d.bbox) },
                    kappa: fk(d.kappa),
                    priority: d.priority,
                })
                .collect(),
        }
    }

    /// Dielectric blocks that can influence a query inside `cube`, in priority
    /// order. The background is always kept.
    pub(crate) fn blocks_near(&self, cube: &TransitionCube) -> Vec<DielectricBlock> {
        let w = &self.window;
        let mut lo = Point3::default();
        let mut hi = Point3::default();
        for a in 0..3 {
            let (l, h) = folded_interval(
                cube.center[a] - cube.half_width,
                cube.center[a] + cube.half_width,
                w.min[a],
                w.max[a],
            );
            lo[a] = l;
            hi[a] = h;
        }
        let region = AxisBox { min: lo, max: hi };
        self.dielectrics
            .iter()
            .filter(|d| d.bbox.touches(&region))
            .cloned()
            .collect()
    }
}

pub(crate) fn kappa_in(blocks: &[DielectricBlock], p: Point3) -> f64 {
    blocks
        .iter()
        .find(|d| d.bbox.contains(p))
        .map(|d| d.kappa)
        .expect("background block covers every point")
}

/// Image of `[x0, x1]` under the mirror fold onto `[lo, hi]`.
fn folded_interval(x0: f64, x1: f64, lo: f64, hi: f64) -> (f64, f64) {
    let len = hi - lo;
    if x1 - x0 >= 2.0 * len {
        return (lo, hi);
    }
    let mut a = fold_coord(x0, lo, hi);
    let mut b = fold_coord(x1, lo, hi);
    if a > b {
        std::mem::swap(&mut a, &mut b);
    }
    // Any fold point strictly inside (x0, x1) drags the image to that wall.
    let first = ((x0 - lo) / len).floor() as i64 + 1;
    let last = ((x1 - lo) / len).ceil() as i64 - 1;
    for k in first..=last {
        if k.rem_euclid(2) == 0 {
            a = lo;
        } else {
            b = hi;
        }
    }
    (a, b)
}

/// The largest axis-aligned cube centered at a walker position that contains
/// no conductor interior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionCube {
    pub center: Point3,
    pub half_width: f64,
}

impl TransitionCube {
    /// Physical point for normalized cube coordinates in `[-1, 1]^3`.
    pub fn point_at(&self, local: [f64; 3]) -> Point3 {
        Point3::new(
            self.center.x + self.half_width * local[0],
            self.center.y + self.half_width * local[1],
            self.center.z + self.half_width * local[2],
        )
    }
}

/// Half width is the Chebyshev distance to the nearest conductor. Parts of
/// the cube beyond the window are resolved by folding; mirrored conductors
/// are never closer than their originals, so no extra clipping is needed.
pub fn largest_empty_cube(layout: &Layout, p: Point3) -> Result<TransitionCube, GeometryError> {
    let p = layout.fold(p);
    let (_, d) = layout.nearest_conductor(p);
    if !(d > 0.0) {
        return Err(GeometryError::PointInsideConductor(p));
    }
    Ok(TransitionCube {
        center: p,
        half_width: d,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CubeClass {
    Homogeneous,
    /// Permittivity varies along this axis only.
    Stratified(usize),
    NonStratified,
}

/// Exact classification from block geometry: the cube is cut by every
/// (folded) block face into sub-boxes on which permittivity is constant.
pub fn classify_cube(layout: &Layout, cube: &TransitionCube) -> CubeClass {
    let blocks = layout.blocks_near(cube);
    if blocks.len() == 1 {
        return CubeClass::Homogeneous;
    }
    let w = &layout.window;
    let mut edges: [Vec<f64>; 3] = Default::default();
    for a in 0..3 {
        let lo = cube.center[a] - cube.half_width;
        let hi = cube.center[a] + cube.half_width;
        let mut cuts: Vec<f64> = blocks
            .iter()
            .flat_map(|d| [d.bbox.min[a], d.bbox.max[a]])
            .filter(|c| c.is_finite())
            .collect();
        cuts.push(w.min[a]);
        cuts.push(w.max[a]);
        let mut pts = vec![lo, hi];
        pts.extend(preimages(&cuts, lo, hi, w.min[a], w.max[a]));
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        edges[a] = pts;
    }
    let mids: Vec<Vec<f64>> = edges
        .iter()
        .map(|e| e.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect())
        .collect();
    let (nx, ny, nz) = (mids[0].len(), mids[1].len(), mids[2].len());
    let mut values = Vec::with_capacity(nx * ny * nz);
    for &x in &mids[0] {
        for &y in &mids[1] {
            for &z in &mids[2] {
                values.push(kappa_in(&blocks, layout.fold(Point3::new(x, y, z))));
            }
        }
    }
    classify_values(&values, [nx, ny, nz])
}

/// Homogeneous / stratified test on a dense `dims` array (x-major).
pub(crate) fn classify_values(values: &[f64], dims: [usize; 3]) -> CubeClass {
    let first = values[0];
    if values.iter().all(|&v| v == first) {
        return CubeClass::Homogeneous;
    }
    let idx = |i: usize, j: usize, k: usize| (i * dims[1] + j) * dims[2] + k;
    for axis in 0..3 {
        let mut ok = true;
        'scan: for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    let reference = match axis {
                        0 => values[idx(i, 0, 0)],
                        1 => values[idx(0, j, 0)],
                        _ => values[idx(0, 0, k)],
                    };
                    if values[idx(i, j, k)] != reference {
                        ok = false;
                        break 'scan;
                    }
                }
            }
        }
        if ok {
            return CubeClass::Stratified(axis);
        }
    }
    CubeClass::NonStratified
}

/// All x in (x0, x1) that fold onto one of `cuts`.
fn preimages(cuts: &[f64], x0: f64, x1: f64, lo: f64, hi: f64) -> Vec<f64> {
    let len = hi - lo;
    let k0 = ((x0 - lo) / (2.0 * len)).floor() as i64 - 1;
    let k1 = ((x1 - lo) / (2.0 * len)).ceil() as i64 + 1;
    let mut out = Vec::new();
    for &c in cuts {
        if c < lo || c > hi {
            continue;
        }
        let t = c - lo;
        for k in k0..=k1 {
            let base = lo + 2.0 * len * k as f64;
            for x in [base + t, base - t] {
                if x > x0 && x < x1 {
                    out.push(x);
                }
            }
        }
    }
    out
}

/// One axis-aligned rectangle of a Gaussian surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceFace {
    /// Degenerate box: `min[normal.axis] == max[normal.axis]`.
    pub rect: AxisBox,
    pub normal: SignedAxis,
    pub area: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSurface {
    pub conductor_id: u32,
    pub faces: Vec<SurfaceFace>,
    pub total_area: f64,
    cumulative: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub point: Point3,
    pub normal: SignedAxis,
    /// Probability density on the surface, `1 / total_area`.
    pub density: f64,
}

/// Default offset: a tenth of the gap to the nearest other conductor (or of
/// the shortest window side for an isolated conductor).
pub fn default_surface_offset(layout: &Layout, conductor_id: u32) -> Result<f64, GeometryError> {
    let target = layout.conductor(conductor_id)?;
    let gap = layout
        .conductors
        .iter()
        .filter(|c| c.id != conductor_id)
        .map(|c| target.gap(c))
        .fold(f64::INFINITY, f64::min);
    if gap.is_finite() {
        Ok(0.1 * gap)
    } else {
        let w = &layout.window;
        Ok(0.1 * (0..3).map(|a| w.extent(a)).fold(f64::INFINITY, f64::min))
    }
}

/// Boundary of the conductor's boxes inflated by `offset`, clipped to the
/// window. Pieces lying on the window itself carry no flux (Neumann wall)
/// and are dropped.
pub fn build_gaussian_surface(
    layout: &Layout,
    conductor_id: u32,
    offset: f64,
) -> Result<GaussianSurface, GeometryError> {
    if !(offset > 0.0) || !offset.is_finite() {
        return Err(GeometryError::BadOffset(offset));
    }
    let target = layout.conductor(conductor_id)?;
    let inflated: Vec<AxisBox> = target
        .boxes
        .iter()
        .filter_map(|b| b.inflate(offset).intersection(&layout.window))
        .collect();
    for other in layout.conductors.iter().filter(|c| c.id != conductor_id) {
        if other.boxes.iter().any(|ob| inflated.iter().any(|ib| ib.touches(ob))) {
            return Err(GeometryError::SurfaceCollision {
                id: conductor_id,
                other: other.id,
            });
        }
    }

    // Rasterize the union on the grid of box coordinates and keep the faces
    // separating occupied from empty cells.
    let mut edges: [Vec<f64>; 3] = Default::default();
    for (a, e) in edges.iter_mut().enumerate() {
        for b in &inflated {
            e.push(b.min[a]);
            e.push(b.max[a]);
        }
        e.sort_by(f64::total_cmp);
        e.dedup();
    }
    let dims = [edges[0].len() - 1, edges[1].len() - 1, edges[2].len() - 1];
    let occupied = |c: [isize; 3]| -> bool {
        if (0..3).any(|a| c[a] < 0 || c[a] >= dims[a] as isize) {
            return false;
        }
        let mid = Point3::new(
            0.5 * (edges[0][c[0] as usize] + edges[0][c[0] as usize + 1]),
            0.5 * (edges[1][c[1] as usize] + edges[1][c[1] as usize + 1]),
            0.5 * (edges[2][c[2] as usize] + edges[2][c[2] as usize + 1]),
        );
        inflated.iter().any(|b| b.contains(mid))
    };

    let w = &layout.window;
    let mut faces = Vec::new();
    for i in 0..dims[0] as isize {
        for j in 0..dims[1] as isize {
            for k in 0..dims[2] as isize {
                let cell = [i, j, k];
                if !occupied(cell) {
                    continue;
                }
                for dir in SignedAxis::ALL {
                    let mut nb = cell;
                    nb[dir.axis] += if dir.positive { 1 } else { -1 };
                    if occupied(nb) {
                        continue;
                    }
                    let mut lo = Point3::default();
                    let mut hi = Point3::default();
                    for a in 0..3 {
                        lo[a] = edges[a][cell[a] as usize];
                        hi[a] = edges[a][cell[a] as usize + 1];
                    }
                    let plane = if dir.positive { hi[dir.axis] } else { lo[dir.axis] };
                    if plane == w.min[dir.axis] || plane == w.max[dir.axis] {
                        continue;
                    }
                    lo[dir.axis] = plane;
                    hi[dir.axis] = plane;
                    let (t0, t1) = dir.tangent_axes();
                    let area = (hi[t0] - lo[t0]) * (hi[t1] - lo[t1]);
                    faces.push(SurfaceFace {
                        rect: AxisBox { min: lo, max: hi },
                        normal: dir,
                        area,
                    });
                }
            }
        }
    }
    let mut cumulative = Vec::with_capacity(faces.len());
    let mut total_area = 0.0;
    for f in &faces {
        total_area += f.area;
        cumulative.push(total_area);
    }
    Ok(GaussianSurface {
        conductor_id,
        faces,
        total_area,
        cumulative,
    })
}

impl GaussianSurface {
    /// Uniform sample by area.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SurfaceSample {
        let u = rng.gen::<f64>() * self.total_area;
        let idx = self
            .cumulative
            .partition_point(|&c| c <= u)
            .min(self.faces.len() - 1);
        let face = &self.faces[idx];
        let (t0, t1) = face.normal.tangent_axes();
        let mut p = face.rect.min;
        p[t0] += rng.gen::<f64>() * (face.rect.max[t0] - face.rect.min[t0]);
        p[t1] += rng.gen::<f64>() * (face.rect.max[t1] - face.rect.min[t1]);
        SurfaceSample {
            point: p,
            normal: face.normal,
            density: 1.0 / self.total_area,
        }
    }
}
