//! The five kernel networks, their reference architectures and the `DRWC`
//! weights file.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{fold_batchnorm, ForwardFlags, Layer, Tensor};
use super::NnError;
use crate::dielectric::check_grid_size;
use crate::geometry::SignedAxis;
use crate::symmetry::Symmetry;

pub const WEIGHTS_MAGIC: [u8; 4] = *b"DRWC";
pub const WEIGHTS_VERSION: u32 = 1;
/// Probe face tag for models that see the whole grid.
pub const NO_FACE: u32 = u32::MAX;
pub const PROBES_PER_MODEL: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    PoissonSelector,
    PoissonFace,
    GradSelector,
    GradFaceTangent,
    GradFaceNormal,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::PoissonSelector,
        ModelKind::PoissonFace,
        ModelKind::GradSelector,
        ModelKind::GradFaceTangent,
        ModelKind::GradFaceNormal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::PoissonSelector => "poisson_selector",
            ModelKind::PoissonFace => "poisson_face",
            ModelKind::GradSelector => "grad_selector",
            ModelKind::GradFaceTangent => "grad_face_tangent",
            ModelKind::GradFaceNormal => "grad_face_normal",
        }
    }

    pub fn from_name(name: &str) -> Option<ModelKind> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn is_selector(self) -> bool {
        matches!(self, ModelKind::PoissonSelector | ModelKind::GradSelector)
    }

    pub fn input_shape(self, n: usize) -> Vec<usize> {
        if self.is_selector() {
            vec![1, n, n, n]
        } else {
            vec![n, n, n]
        }
    }

    pub fn output_shape(self, n: usize) -> Vec<usize> {
        match self {
            ModelKind::PoissonSelector => vec![6],
            ModelKind::GradSelector => vec![7],
            _ => vec![1, n, n],
        }
    }
}

/// Stacks the grid's z-slices as channels, the slice nearest `+z` first;
/// each channel is indexed `(x, y)`.
pub fn stack_slices(values: &[f64], n: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * n * n);
    for c in 0..n {
        let k = n - 1 - c;
        for i in 0..n {
            for j in 0..n {
                data.push(values[(i * n + j) * n + k] as f32);
            }
        }
    }
    Tensor {
        shape: vec![n, n, n],
        data,
    }
}

/// Input tensor for `kind`. Face models see the grid rotated so `face`
/// lands on `+z`.
pub fn model_input(kind: ModelKind, values: &[f64], n: usize, face: Option<SignedAxis>) -> Tensor {
    if kind.is_selector() {
        return Tensor {
            shape: vec![1, n, n, n],
            data: values.iter().map(|&v| v as f32).collect(),
        };
    }
    match face {
        Some(f) if f != SignedAxis::new(2, true) => {
            let g = Symmetry::taking(f, SignedAxis::new(2, true));
            stack_slices(&g.apply_cells(values, n), n)
        }
        _ => stack_slices(values, n),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub face: Option<SignedAxis>,
    pub grid: Vec<f32>,
    pub expected: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub kind: ModelKind,
    /// As stored; batchnorm unfolded.
    pub layers: Vec<Layer>,
    exec: Vec<Layer>,
}

impl Model {
    pub fn new(kind: ModelKind, layers: Vec<Layer>, n: usize) -> Result<Self, NnError> {
        let mut shape = kind.input_shape(n);
        for (i, l) in layers.iter().enumerate() {
            shape = l.output_shape(&shape).map_err(|message| NnError::Shape {
                model: kind.name().into(),
                layer: i,
                message,
            })?;
        }
        if shape != kind.output_shape(n) {
            return Err(NnError::Shape {
                model: kind.name().into(),
                layer: layers.len(),
                message: format!("output shape {:?}, expected {:?}", shape, kind.output_shape(n)),
            });
        }
        let exec = fold_batchnorm(&layers);
        Ok(Self { kind, layers, exec })
    }

    pub fn trainable_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.trainable_parameters()).sum()
    }

    pub fn forward(&self, input: Tensor) -> Result<(Tensor, ForwardFlags), NnError> {
        let mut flags = ForwardFlags::default();
        let mut x = input;
        for l in &self.exec {
            x = l.forward(x, &mut flags)?;
        }
        Ok((x, flags))
    }

    /// Runs each input independently; results equal single calls exactly.
    pub fn forward_batch(&self, inputs: Vec<Tensor>) -> Vec<Result<(Tensor, ForwardFlags), NnError>> {
        inputs.into_iter().map(|x| self.forward(x)).collect()
    }
}

/// Parameter initialization for freshly built models.
pub enum Init {
    Zeros,
    Random(ChaCha8Rng),
}

impl Init {
    pub fn random(seed: u64) -> Self {
        Init::Random(ChaCha8Rng::seed_from_u64(seed))
    }

    fn weight(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor {
        match self {
            Init::Zeros => Tensor::zeros(shape),
            Init::Random(rng) => {
                let bound = (3.0 / fan_in as f32).sqrt() * 1.4;
                let len = shape.iter().product();
                Tensor {
                    shape,
                    data: (0..len).map(|_| rng.gen_range(-bound..bound)).collect(),
                }
            }
        }
    }

    fn bias(&mut self, len: usize) -> Tensor {
        match self {
            Init::Zeros => Tensor::zeros(vec![len]),
            Init::Random(rng) => Tensor {
                shape: vec![len],
                data: (0..len).map(|_| rng.gen_range(-0.1..0.1)).collect(),
            },
        }
    }

    fn batchnorm(&mut self, c: usize) -> Layer {
        let (gamma, beta, mean, var) = match self {
            Init::Zeros => (
                Tensor::filled(vec![c], 1.0),
                Tensor::zeros(vec![c]),
                Tensor::zeros(vec![c]),
                Tensor::filled(vec![c], 1.0),
            ),
            Init::Random(rng) => {
                let mut v = |lo: f32, hi: f32| Tensor {
                    shape: vec![c],
                    data: (0..c).map(|_| rng.gen_range(lo..hi)).collect(),
                };
                (v(0.5, 1.5), v(-0.1, 0.1), v(-0.1, 0.1), v(0.5, 1.5))
            }
        };
        Layer::BatchNorm {
            gamma,
            beta,
            mean,
            var,
            eps: 1e-5,
        }
    }

    fn conv3d(&mut self, cin: usize, cout: usize) -> Layer {
        Layer::Conv3d {
            weight: self.weight(vec![cout, cin, 3, 3, 3], cin * 27),
            bias: Some(self.bias(cout)),
            stride: 2,
            padding: 1,
        }
    }

    fn pointwise(&mut self, cin: usize, cout: usize, bias: bool) -> Layer {
        Layer::Conv2d {
            weight: self.weight(vec![cout, cin, 1, 1], cin),
            bias: bias.then(|| self.bias(cout)),
            dilation: 1,
            padding: 0,
        }
    }

    fn depthwise(&mut self, c: usize, dilation: usize) -> Layer {
        Layer::Depthwise2d {
            weight: self.weight(vec![c, 1, 3, 3], 9),
            bias: None,
            dilation,
            padding: dilation,
        }
    }

    fn dense(&mut self, cin: usize, cout: usize) -> Layer {
        Layer::Dense {
            weight: self.weight(vec![cout, cin], cin),
            bias: self.bias(cout),
        }
    }
}

/// Channel progression and head of the selector networks.
pub fn selector_layers(kind: ModelKind, n: usize, init: &mut Init) -> Vec<Layer> {
    let (channels, outputs): (&[usize], usize) = match kind {
        ModelKind::PoissonSelector => (&[1, 4, 8, 16], 6),
        _ => (&[1, 8, 16, 64], 7),
    };
    let mut layers = Vec::new();
    let mut side = n;
    for w in channels.windows(2) {
        layers.push(init.conv3d(w[0], w[1]));
        layers.push(Layer::Gelu);
        side = (side - 1) / 2 + 1;
    }
    let flat = channels[channels.len() - 1] * side * side * side;
    layers.push(Layer::Flatten);
    layers.push(init.dense(flat, 128));
    layers.push(Layer::Gelu);
    layers.push(init.dense(128, outputs));
    layers.push(if outputs == 6 { Layer::Softmax } else { Layer::SelectorHead });
    layers
}

/// Depthwise-separable face network over `n` stacked slices.
pub fn face_layers(
    n: usize,
    channels: &[usize],
    dilations: &[usize],
    positional: bool,
    signed: bool,
    init: &mut Init,
) -> Vec<Layer> {
    assert_eq!(channels.len(), dilations.len() + 1);
    let mut layers = Vec::new();
    let mut cin = n;
    if positional {
        layers.push(Layer::GridPe);
        cin += 2;
    }
    layers.push(init.pointwise(cin, channels[0], false));
    layers.push(init.batchnorm(channels[0]));
    layers.push(Layer::Gelu);
    for (w, &d) in channels.windows(2).zip(dilations) {
        layers.push(init.depthwise(w[0], d));
        layers.push(init.batchnorm(w[0]));
        layers.push(Layer::Gelu);
        layers.push(init.pointwise(w[0], w[1], false));
        layers.push(init.batchnorm(w[1]));
        layers.push(Layer::Gelu);
    }
    layers.push(init.pointwise(channels[channels.len() - 1], 1, true));
    if signed {
        layers.push(Layer::SignedL1Norm);
    } else {
        layers.push(Layer::Relu);
        layers.push(Layer::L1Norm);
    }
    layers
}

pub const FACE_CHANNELS: [usize; 5] = [16, 16, 8, 4, 2];
pub const FACE_DILATIONS: [usize; 4] = [1, 1, 2, 3];
pub const NORMAL_CHANNELS: [usize; 8] = [64, 64, 32, 32, 16, 16, 8, 4];
pub const NORMAL_DILATIONS: [usize; 7] = [1, 1, 2, 3, 1, 2, 3];

pub fn reference_layers(kind: ModelKind, n: usize, init: &mut Init) -> Vec<Layer> {
    match kind {
        ModelKind::PoissonSelector | ModelKind::GradSelector => selector_layers(kind, n, init),
        ModelKind::PoissonFace => face_layers(n, &FACE_CHANNELS, &FACE_DILATIONS, true, false, init),
        ModelKind::GradFaceTangent => face_layers(n, &FACE_CHANNELS, &FACE_DILATIONS, true, true, init),
        ModelKind::GradFaceNormal => face_layers(n, &NORMAL_CHANNELS, &NORMAL_DILATIONS, true, true, init),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    n: usize,
    models: Vec<Model>,
    probes: Vec<Vec<Probe>>,
}

impl ModelBundle {
    pub fn new(n: usize, models: Vec<Model>) -> Result<Self, NnError> {
        check_grid_size(n).map_err(|e| NnError::Format(e.to_string()))?;
        for kind in ModelKind::ALL {
            if !models.iter().any(|m| m.kind == kind) {
                return Err(NnError::MissingModel(kind.name().into()));
            }
        }
        let probes = vec![Vec::new(); models.len()];
        Ok(Self { n, models, probes })
    }

    /// Reference architectures with the given initialization.
    pub fn build(n: usize, init: &mut Init) -> Result<Self, NnError> {
        let models = ModelKind::ALL
            .into_iter()
            .map(|k| Model::new(k, reference_layers(k, n, init), n))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(n, models)
    }

    pub fn random(n: usize, seed: u64) -> Result<Self, NnError> {
        Self::build(n, &mut Init::random(seed))
    }

    pub fn zeros(n: usize) -> Result<Self, NnError> {
        Self::build(n, &mut Init::Zeros)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn check_n(&self, n: usize) -> Result<(), NnError> {
        if n != self.n {
            return Err(NnError::GridMismatch {
                expected: n,
                found: self.n,
            });
        }
        Ok(())
    }

    pub fn models(&self) -> &[Model] {
        &self.models
    }

    pub fn model(&self, kind: ModelKind) -> &Model {
        self.models
            .iter()
            .find(|m| m.kind == kind)
            .expect("bundle holds every model")
    }

    pub fn probes(&self, kind: ModelKind) -> &[Probe] {
        let i = self.models.iter().position(|m| m.kind == kind).unwrap();
        &self.probes[i]
    }

    /// Raw output of `kind` for a grid (and target face for face models).
    pub fn run(&self, kind: ModelKind, values: &[f64], face: Option<SignedAxis>) -> Result<(Tensor, ForwardFlags), NnError> {
        if values.len() != self.n * self.n * self.n {
            return Err(NnError::GridMismatch {
                expected: self.n,
                found: (values.len() as f64).cbrt().round() as usize,
            });
        }
        self.model(kind).forward(model_input(kind, values, self.n, face))
    }

    /// Replaces the probe block with fresh random grids and current outputs.
    pub fn record_probes(&mut self, count: usize, seed: u64) -> Result<(), NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n3 = self.n * self.n * self.n;
        let mut all = Vec::new();
        for m in &self.models {
            let mut probes = Vec::new();
            for _ in 0..count {
                let grid: Vec<f32> = (0..n3).map(|_| rng.gen_range(0.05f32..1.0)).collect();
                let face = (!m.kind.is_selector()).then(|| SignedAxis::from_index(rng.gen_range(0..6)));
                let vals: Vec<f64> = grid.iter().map(|&v| v as f64).collect();
                let (out, _) = match self.run(m.kind, &vals, face) {
                    Ok(r) => r,
                    Err(NnError::Degenerate) => continue,
                    Err(e) => return Err(e),
                };
                probes.push(Probe {
                    face,
                    grid,
                    expected: out.data,
                });
            }
            all.push(probes);
        }
        self.probes = all;
        Ok(())
    }

    /// Re-runs every stored probe; the first mismatch names its model.
    pub fn check_probes(&self, tol: f32) -> Result<usize, NnError> {
        let mut checked = 0;
        for (m, probes) in self.models.iter().zip(&self.probes) {
            for (i, p) in probes.iter().enumerate() {
                let vals: Vec<f64> = p.grid.iter().map(|&v| v as f64).collect();
                let (out, _) = self.run(m.kind, &vals, p.face)?;
                let worst = out
                    .data
                    .iter()
                    .zip(&p.expected)
                    .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
                    .fold(0.0f32, f32::max);
                if out.data.len() != p.expected.len() || !(worst <= tol) {
                    return Err(NnError::ProbeMismatch {
                        model: m.kind.name().into(),
                        probe: i,
                        error: worst,
                    });
                }
                checked += 1;
            }
        }
        Ok(checked)
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(&WEIGHTS_MAGIC)?;
        w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        w.write_all(&(self.models.len() as u32).to_le_bytes())?;
        for m in &self.models {
            let name = m.kind.name().as_bytes();
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(m.layers.len() as u32).to_le_bytes())?;
            for l in &m.layers {
                w.write_all(&l.tag().to_le_bytes())?;
                let attrs = l.attributes();
                w.write_all(&(attrs.len() as u32).to_le_bytes())?;
                for a in attrs {
                    w.write_all(&a.to_le_bytes())?;
                }
                let tensors = l.serialized_tensors();
                w.write_all(&(tensors.len() as u32).to_le_bytes())?;
                for t in tensors {
                    w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
                    for &d in &t.shape {
                        w.write_all(&(d as u32).to_le_bytes())?;
                    }
                    write_f32s(w, &t.data)?;
                }
            }
        }
        for probes in &self.probes {
            w.write_all(&(probes.len() as u32).to_le_bytes())?;
            for p in probes {
                let face = p.face.map_or(NO_FACE, |f| f.index() as u32);
                w.write_all(&face.to_le_bytes())?;
                write_f32s(w, &p.grid)?;
                w.write_all(&(p.expected.len() as u32).to_le_bytes())?;
                write_f32s(w, &p.expected)?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Parses a weights file without running the probe self-check.
    pub fn read_from(r: &mut impl Read) -> Result<Self, NnError> {
        let mut rd = Reader { r, ctx: "header".into() };
        let magic = rd.bytes::<4>()?;
        if magic != WEIGHTS_MAGIC {
            return Err(NnError::BadMagic(magic));
        }
        let version = rd.u32()?;
        if version != WEIGHTS_VERSION {
            return Err(NnError::BadVersion(version));
        }
        let n = rd.u32()? as usize;
        check_grid_size(n).map_err(|e| NnError::Format(e.to_string()))?;
        let count = rd.u32()? as usize;
        let mut models = Vec::with_capacity(count);
        for mi in 0..count {
            rd.ctx = format!("model {mi} name");
            let len = rd.u16()? as usize;
            let name = String::from_utf8(rd.vec(len)?).map_err(|_| NnError::Format("model name is not UTF-8".into()))?;
            let kind = ModelKind::from_name(&name).ok_or_else(|| NnError::Format(format!("unknown model '{name}'")))?;
            rd.ctx = format!("model {name} layer count");
            let layer_count = rd.u32()? as usize;
            let mut layers = Vec::with_capacity(layer_count.min(256));
            for li in 0..layer_count {
                rd.ctx = format!("model {name} layer {li}");
                let tag = rd.u16()?;
                let na = rd.u32()? as usize;
                let attrs = (0..na).map(|_| rd.u32()).collect::<Result<Vec<_>, _>>()?;
                let nt = rd.u32()? as usize;
                let mut tensors = Vec::with_capacity(nt.min(8));
                for _ in 0..nt {
                    let rank = rd.u32()? as usize;
                    if rank > 5 {
                        return Err(NnError::Shape {
                            model: name.clone(),
                            layer: li,
                            message: format!("tensor rank {rank}"),
                        });
                    }
                    let shape = (0..rank).map(|_| rd.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
                    let len: usize = shape.iter().product();
                    let data = rd.f32s(len)?;
                    tensors.push(Tensor { shape, data });
                }
                let layer = Layer::from_parts(tag, &attrs, tensors).map_err(|message| NnError::Shape {
                    model: name.clone(),
                    layer: li,
                    message,
                })?;
                layers.push(layer);
            }
            models.push(Model::new(kind, layers, n)?);
        }
        let mut bundle = Self::new(n, models)?;
        for (mi, m) in bundle.models.iter().enumerate() {
            rd.ctx = format!("probes of {}", m.kind.name());
            let pc = rd.u32()? as usize;
            let mut probes = Vec::with_capacity(pc.min(64));
            for _ in 0..pc {
                let face = match rd.u32()? {
                    NO_FACE => None,
                    f if f < 6 => Some(SignedAxis::from_index(f as usize)),
                    f => return Err(NnError::Format(format!("probe face {f}"))),
                };
                let grid = rd.f32s(n * n * n)?;
                let len = rd.u32()? as usize;
                let expected = rd.f32s(len)?;
                probes.push(Probe { face, grid, expected });
            }
            bundle.probes[mi] = probes;
        }
        let mut extra = [0u8; 1];
        if rd.r.read(&mut extra)? != 0 {
            return Err(NnError::Format("trailing bytes after probe block".into()));
        }
        Ok(bundle)
    }

    /// Loads a weights file and verifies its probes.
    pub fn load(path: &Path) -> Result<Self, NnError> {
        let bundle = Self::read_from(&mut BufReader::new(File::open(path)?))?;
        bundle.check_probes(1e-4)?;
        Ok(bundle)
    }
}

fn write_f32s(w: &mut impl Write, data: &[f32]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

struct Reader<'a, R: Read> {
    r: &'a mut R,
    ctx: String,
}

impl<R: Read> Reader<'_, R> {
    fn fill(&mut self, buf: &mut [u8]) -> Result<(), NnError> {
        self.r.read_exact(buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => NnError::Truncated(self.ctx.clone()),
            _ => NnError::Io(e),
        })
    }

    fn bytes<const K: usize>(&mut self) -> Result<[u8; K], NnError> {
        let mut b = [0u8; K];
        self.fill(&mut b)?;
        Ok(b)
    }

    fn vec(&mut self, len: usize) -> Result<Vec<u8>, NnError> {
        let mut b = vec![0u8; len];
        self.fill(&mut b)?;
        Ok(b)
    }

    fn u16(&mut self) -> Result<u16, NnError> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn f32s(&mut self, len: usize) -> Result<Vec<f32>, NnError> {
        if len > 1 << 28 {
            return Err(NnError::Format(format!("{}: tensor of {len} values", self.ctx)));
        }
        let raw = self.vec(len * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
