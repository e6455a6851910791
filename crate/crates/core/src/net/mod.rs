//! Encoder-decoder network with skip connections, the deep image prior
//! backbone. Spectral bands are the input and output channels of a 2-D
//! convolutional network.
//!
//! Per scale the encoder applies two conv blocks (the first strided by 2),
//! a 1x1 skip branch taps the scale's input, and the decoder upsamples the
//! deeper features, concatenates the skip features, and applies a `k x k`
//! and a `1 x 1` conv block. A final 1x1 conv maps back to the band count.
//!
//! Gradients are computed by explicit reverse passes over a [`Tape`] recorded
//! during the forward pass, with respect to both the parameters and the input.

mod layers;
mod real;

use std::fs;
use std::io::{Read as _, Write as _};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use layers::{Dims, UpsampleMode};
pub use real::{gemm, Real};

use crate::cube::HsiCube;
use crate::error::{HsiError, Result};
use crate::rng::rng_for;
use layers::{leaky_relu, leaky_relu_backward, reflect, sigmoid, sigmoid_backward, BatchNorm, Conv2d, NormCache, Upsample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    #[default]
    Sigmoid,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub depth: usize,
    pub channels_down: Vec<usize>,
    pub channels_up: Vec<usize>,
    pub channels_skip: Vec<usize>,
    pub kernel_size: usize,
    pub leaky_slope: f64,
    pub upsample: UpsampleMode,
    pub output: OutputActivation,
    /// Per-channel spatial normalization after every conv.
    pub normalization: bool,
    /// Reflect-pad inputs whose sides are not multiples of `2^depth` (the
    /// output is cropped back).
    pub pad_input: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::uniform(5, 128, 128, 4)
    }
}

impl NetworkConfig {
    pub fn uniform(depth: usize, down: usize, up: usize, skip: usize) -> Self {
        Self {
            depth,
            channels_down: vec![down; depth],
            channels_up: vec![up; depth],
            channels_skip: vec![skip; depth],
            kernel_size: 3,
            leaky_slope: 0.2,
            upsample: UpsampleMode::Bilinear,
            output: OutputActivation::Sigmoid,
            normalization: true,
            pad_input: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HsiError::Config(m));
        if self.depth == 0 {
            return bad("network depth must be at least 1".into());
        }
        for (name, v) in [
            ("channels_down", &self.channels_down),
            ("channels_up", &self.channels_up),
            ("channels_skip", &self.channels_skip),
        ] {
            if v.len() != self.depth {
                return bad(format!("{name} has {} entries for depth {}", v.len(), self.depth));
            }
        }
        if self.channels_down.iter().chain(&self.channels_up).any(|&c| c == 0) {
            return bad("down/up channel counts must be positive".into());
        }
        if self.kernel_size % 2 == 0 {
            return bad(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        Ok(())
    }
}

/// `conv -> [norm] -> leaky rectifier`.
#[derive(Debug, Clone)]
struct ConvBlock {
    conv: Conv2d,
    norm: Option<BatchNorm>,
    slope: f64,
}

struct BlockTape<T> {
    col: Vec<T>,
    norm: Option<NormCache<T>>,
    pre: Vec<T>,
}

impl ConvBlock {
    fn new(input: Dims, out: usize, kernel: usize, stride: usize, cfg: &NetworkConfig, offset: &mut usize) -> Self {
        let conv = Conv2d::new(input, out, kernel, stride, *offset);
        *offset += conv.param_count();
        let norm = cfg.normalization.then(|| {
            let n = BatchNorm::new(conv.output, *offset);
            *offset += n.param_count();
            n
        });
        Self { conv, norm, slope: cfg.leaky_slope }
    }

    fn output(&self) -> Dims {
        self.conv.output
    }

    fn init(&self, params: &mut [f64], uniform: &mut impl FnMut() -> f64) {
        self.conv.init(params, &mut *uniform);
        if let Some(n) = &self.norm {
            n.init(params);
        }
    }

    fn forward<T: Real>(&self, params: &[T], x: &[T]) -> (Vec<T>, BlockTape<T>) {
        let (y, col) = self.conv.forward(params, x);
        let (pre, norm) = match &self.norm {
            Some(n) => {
                let (y, c) = n.forward(params, &y);
                (y, Some(c))
            }
            None => (y, None),
        };
        (leaky_relu(&pre, self.slope), BlockTape { col, norm, pre })
    }

    fn backward<T: Real>(&self, params: &[T], tape: &BlockTape<T>, grad_out: &[T], grads: &mut [T]) -> Vec<T> {
        let mut g = leaky_relu_backward(&tape.pre, grad_out, self.slope);
        if let (Some(n), Some(c)) = (&self.norm, &tape.norm) {
            g = n.backward(params, c, &g, grads);
        }
        self.conv.backward(params, &tape.col, &g, grads)
    }
}

#[derive(Debug, Clone)]
struct Scale {
    skip: Option<ConvBlock>,
    down_strided: ConvBlock,
    down: ConvBlock,
    upsample: Upsample,
    concat_norm: Option<BatchNorm>,
    up: ConvBlock,
    up_pointwise: ConvBlock,
}

struct ScaleTape<T> {
    skip: Option<BlockTape<T>>,
    down_strided: BlockTape<T>,
    down: BlockTape<T>,
    concat_norm: Option<NormCache<T>>,
    up: BlockTape<T>,
    up_pointwise: BlockTape<T>,
}

/// Intermediate values recorded by a forward pass.
pub struct Tape<T> {
    scales: Vec<ScaleTape<T>>,
    head_col: Vec<T>,
    output: Vec<T>,
}

impl<T> Tape<T> {
    /// Network output in padded `C x H x W` layout.
    pub fn output(&self) -> &[T] {
        &self.output
    }
}

/// The network `f_θ` with its parameters θ stored in one flat vector.
#[derive(Debug, Clone)]
pub struct DhipModel<T: Real = f32> {
    config: NetworkConfig,
    /// `(height, width, bands)` of the cubes the model maps.
    shape: (usize, usize, usize),
    padded: (usize, usize),
    params: Vec<T>,
    scales: Vec<Scale>,
    head: Conv2d,
}

impl<T: Real> DhipModel<T> {
    /// Builds the network for `shape = (height, width, bands)` and initializes
    /// its parameters deterministically from `seed`.
    pub fn new(config: NetworkConfig, shape: (usize, usize, usize), seed: u64) -> Result<Self> {
        config.validate()?;
        let (h, w, b) = shape;
        if h == 0 || w == 0 || b == 0 {
            return Err(HsiError::ShapeMismatch(format!("empty model shape {h}x{w}x{b}")));
        }
        let m = 1usize << config.depth;
        let padded = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        if padded != (h, w) && !config.pad_input {
            return Err(HsiError::ShapeMismatch(format!(
                "spatial size {h}x{w} is not divisible by 2^{} and padding is disabled",
                config.depth
            )));
        }

        let k = config.kernel_size;
        let mut offset = 0usize;
        let mut scales = Vec::with_capacity(config.depth);
        let mut input = Dims::new(b, padded.0, padded.1);
        for i in 0..config.depth {
            let skip = (config.channels_skip[i] > 0)
                .then(|| ConvBlock::new(input, config.channels_skip[i], 1, 1, &config, &mut offset));
            let down_strided = ConvBlock::new(input, config.channels_down[i], k, 2, &config, &mut offset);
            let down = ConvBlock::new(down_strided.output(), config.channels_down[i], k, 1, &config, &mut offset);
            scales.push((skip, down_strided, down, input));
            input = scales.last().expect("just pushed").2.output();
        }

        // Decoder scales are laid out deepest-first in parameter order.
        let mut deeper = input;
        let mut built: Vec<Option<Scale>> = (0..config.depth).map(|_| None).collect();
        for (i, (skip, down_strided, down, scale_input)) in scales.into_iter().enumerate().rev() {
            let upsample = Upsample::new(deeper, config.upsample);
            let skip_channels = skip.as_ref().map_or(0, |s| s.output().channels);
            let cat = Dims::new(skip_channels + deeper.channels, scale_input.height, scale_input.width);
            let concat_norm = config.normalization.then(|| {
                let n = BatchNorm::new(cat, offset);
                offset += n.param_count();
                n
            });
            let up = ConvBlock::new(cat, config.channels_up[i], k, 1, &config, &mut offset);
            let up_pointwise = ConvBlock::new(up.output(), config.channels_up[i], 1, 1, &config, &mut offset);
            deeper = up_pointwise.output();
            built[i] = Some(Scale { skip, down_strided, down, upsample, concat_norm, up, up_pointwise });
        }
        let scales: Vec<Scale> = built.into_iter().map(|s| s.expect("every scale built")).collect();
        let head = Conv2d::new(deeper, b, 1, 1, offset);
        offset += head.param_count();

        let mut init = vec![0.0f64; offset];
        let mut rng = rng_for(seed, "net/init", 0);
        let mut uniform = || rng.random::<f64>();
        for s in &scales {
            if let Some(skip) = &s.skip {
                skip.init(&mut init, &mut uniform);
            }
            s.down_strided.init(&mut init, &mut uniform);
            s.down.init(&mut init, &mut uniform);
            if let Some(n) = &s.concat_norm {
                n.init(&mut init);
            }
            s.up.init(&mut init, &mut uniform);
            s.up_pointwise.init(&mut init, &mut uniform);
        }
        head.init(&mut init, &mut uniform);

        Ok(Self { config, shape, padded, params: init.into_iter().map(T::lit).collect(), scales, head })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    /// Element count of one input (and output) cube.
    pub fn input_len(&self) -> usize {
        self.shape.0 * self.shape.1 * self.shape.2
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// Copy of the model in another precision.
    pub fn cast<U: Real>(&self) -> DhipModel<U> {
        DhipModel {
            config: self.config.clone(),
            shape: self.shape,
            padded: self.padded,
            params: self.params.iter().map(|&p| U::lit(p.as_f64())).collect(),
            scales: self.scales.clone(),
            head: self.head.clone(),
        }
    }

    fn needs_padding(&self) -> bool {
        self.padded != (self.shape.0, self.shape.1)
    }

    /// Source pixel for every pixel of the padded plane (bottom/right reflection).
    fn pad_map(&self) -> Vec<usize> {
        let (h, w, _) = self.shape;
        let (ph, pw) = self.padded;
        (0..ph)
            .flat_map(|r| (0..pw).map(move |c| reflect(r as isize, h) * w + reflect(c as isize, w)))
            .collect()
    }

    fn pad<V: Real>(&self, x: &[V]) -> Vec<V> {
        if !self.needs_padding() {
            return x.to_vec();
        }
        let plane = self.shape.0 * self.shape.1;
        let map = self.pad_map();
        x.chunks_exact(plane).flat_map(|src| map.iter().map(move |&i| src[i])).collect()
    }

    fn unpad_grad<V: Real>(&self, g: &[V]) -> Vec<V> {
        if !self.needs_padding() {
            return g.to_vec();
        }
        let plane = self.shape.0 * self.shape.1;
        let map = self.pad_map();
        let mut out = vec![V::zero(); self.input_len()];
        for (src, dst) in g.chunks_exact(map.len()).zip(out.chunks_exact_mut(plane)) {
            for (&v, &i) in src.iter().zip(&map) {
                dst[i] += v;
            }
        }
        out
    }

    fn crop<V: Real>(&self, y: &[V]) -> Vec<V> {
        if !self.needs_padding() {
            return y.to_vec();
        }
        let (h, w, _) = self.shape;
        let (ph, pw) = self.padded;
        y.chunks_exact(ph * pw)
            .flat_map(|src| (0..h).flat_map(move |r| src[r * pw..r * pw + w].iter().copied()))
            .collect()
    }

    fn crop_grad<V: Real>(&self, g: &[V]) -> Vec<V> {
        if !self.needs_padding() {
            return g.to_vec();
        }
        let (h, w, _) = self.shape;
        let (ph, pw) = self.padded;
        let mut out = vec![V::zero(); ph * pw * self.shape.2];
        for (src, dst) in g.chunks_exact(h * w).zip(out.chunks_exact_mut(ph * pw)) {
            for r in 0..h {
                dst[r * pw..r * pw + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
        }
        out
    }

    fn check_input(&self, z: &[T]) -> Result<()> {
        if z.len() != self.input_len() {
            return Err(HsiError::LengthMismatch { expected: self.input_len(), actual: z.len() });
        }
        Ok(())
    }

    /// Forward pass on a `bands x height x width` input, recording a tape.
    pub fn forward_with_tape(&self, z: &[T]) -> Result<(Vec<T>, Tape<T>)> {
        self.check_input(z)?;
        let p = &self.params;
        let mut encoder_inputs = vec![self.pad(z)];
        let mut skip_outputs = Vec::with_capacity(self.scales.len());
        let mut tapes = Vec::with_capacity(self.scales.len());
        for s in &self.scales {
            let x = encoder_inputs.last().expect("non-empty");
            let skip = s.skip.as_ref().map(|b| b.forward(p, x));
            let (d1, t1) = s.down_strided.forward(p, x);
            let (d2, t2) = s.down.forward(p, &d1);
            let (skip_out, skip_tape) = match skip {
                Some((o, t)) => (o, Some(t)),
                None => (Vec::new(), None),
            };
            skip_outputs.push(skip_out);
            tapes.push((skip_tape, t1, t2));
            encoder_inputs.push(d2);
        }

        let mut deeper = encoder_inputs.pop().expect("deepest features");
        let mut scale_tapes: Vec<Option<ScaleTape<T>>> = (0..self.scales.len()).map(|_| None).collect();
        for (i, s) in self.scales.iter().enumerate().rev() {
            let mut cat = std::mem::take(&mut skip_outputs[i]);
            cat.extend(s.upsample.forward(&deeper));
            let (cat, concat_norm) = match &s.concat_norm {
                Some(n) => {
                    let (y, c) = n.forward(p, &cat);
                    (y, Some(c))
                }
                None => (cat, None),
            };
            let (u1, up) = s.up.forward(p, &cat);
            let (u2, up_pointwise) = s.up_pointwise.forward(p, &u1);
            deeper = u2;
            let (skip, down_strided, down) = tapes.pop().expect("one tape per scale");
            scale_tapes[i] = Some(ScaleTape { skip, down_strided, down, concat_norm, up, up_pointwise });
        }

        let (mut y, head_col) = self.head.forward(p, &deeper);
        if self.config.output == OutputActivation::Sigmoid {
            y = sigmoid(&y);
        }
        let out = self.crop(&y);
        let scales = scale_tapes.into_iter().map(|t| t.expect("every scale taped")).collect();
        Ok((out, Tape { scales, head_col, output: y }))
    }

    /// Network output for a `bands x height x width` input.
    pub fn forward_chw(&self, z: &[T]) -> Result<Vec<T>> {
        self.forward_with_tape(z).map(|(y, _)| y)
    }

    /// Reverse pass. Accumulates `∂/∂θ (grad_outᵀ f_θ(z))` into `grads` and
    /// returns the gradient with respect to the input `z`.
    pub fn backward(&self, tape: &Tape<T>, grad_out: &[T], grads: &mut [T]) -> Vec<T> {
        assert_eq!(grad_out.len(), self.input_len(), "output gradient length");
        assert_eq!(grads.len(), self.params.len(), "parameter gradient length");
        let p = &self.params;
        let mut g = self.crop_grad(grad_out);
        if self.config.output == OutputActivation::Sigmoid {
            g = sigmoid_backward(&tape.output, &g);
        }
        let mut g_deeper = self.head.backward(p, &tape.head_col, &g, grads);

        let mut g_skip = Vec::with_capacity(self.scales.len());
        for (s, t) in self.scales.iter().zip(&tape.scales) {
            let g1 = s.up_pointwise.backward(p, &t.up_pointwise, &g_deeper, grads);
            let mut gc = s.up.backward(p, &t.up, &g1, grads);
            if let (Some(n), Some(c)) = (&s.concat_norm, &t.concat_norm) {
                gc = n.backward(p, c, &gc, grads);
            }
            let skip_len = s.skip.as_ref().map_or(0, |b| b.output().len());
            let g_up = gc.split_off(skip_len);
            g_skip.push(gc);
            g_deeper = s.upsample.backward(&g_up);
        }

        // `g_deeper` now holds the gradient of the deepest encoder output.
        for ((s, t), gs) in self.scales.iter().zip(&tape.scales).zip(g_skip).rev() {
            let g1 = s.down.backward(p, &t.down, &g_deeper, grads);
            let mut gx = s.down_strided.backward(p, &t.down_strided, &g1, grads);
            if let (Some(b), Some(bt)) = (&s.skip, &t.skip) {
                let gsk = b.backward(p, bt, &gs, grads);
                gx.iter_mut().zip(gsk).for_each(|(a, b)| *a += b);
            }
            g_deeper = gx;
        }
        self.unpad_grad(&g_deeper)
    }

    /// Applies the network to a cube (values converted to `T`).
    pub fn forward(&self, z: &HsiCube) -> Result<HsiCube> {
        if z.shape() != self.shape {
            return Err(HsiError::ShapeMismatch(format!(
                "input {:?} does not match model shape {:?}",
                z.shape(),
                self.shape
            )));
        }
        let x: Vec<T> = cube_to_chw(z).into_iter().map(|v| T::lit(v as f64)).collect();
        let y = self.forward_chw(&x)?;
        let y: Vec<f32> = y.into_iter().map(|v| v.as_f64() as f32).collect();
        chw_to_cube(&y, self.shape)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"DHIPCKPT";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: NetworkConfig,
    shape: (usize, usize, usize),
    param_count: usize,
}

impl DhipModel<f32> {
    /// Single-file snapshot: magic, JSON header with the config, then the
    /// parameters as little-endian `f32`.
    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = serde_json::to_vec(&CheckpointHeader {
            config: self.config.clone(),
            shape: self.shape,
            param_count: self.params.len(),
        })?;
        let mut bytes = Vec::with_capacity(16 + header.len() + 4 * self.params.len());
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&header);
        for p in &self.params {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| HsiError::io(path, e))?;
        f.write_all(&bytes).map_err(|e| HsiError::io(path, e))
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| HsiError::io(path, e))?;
        let corrupt = || HsiError::Header(format!("{} is not a model checkpoint", path.display()));
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt());
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let header: CheckpointHeader = serde_json::from_slice(bytes.get(16..16 + len).ok_or_else(corrupt)?)?;
        let payload = &bytes[16 + len..];
        if payload.len() != 4 * header.param_count {
            return Err(HsiError::SizeMismatch { expected: 4 * header.param_count, actual: payload.len() });
        }
        let mut model = Self::new(header.config, header.shape, 0)?;
        if model.params.len() != header.param_count {
            return Err(corrupt());
        }
        for (p, chunk) in model.params.iter_mut().zip(payload.chunks_exact(4)) {
            *p = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
        Ok(model)
    }
}

/// `(row, col, band)` cube samples to `band x row x col` order.
pub fn cube_to_chw(cube: &HsiCube) -> Vec<f32> {
    let (h, w, b) = cube.shape();
    let src = cube.as_slice();
    let mut out = vec![0.0f32; src.len()];
    for (pix, px) in src.chunks_exact(b).enumerate() {
        for (band, &v) in px.iter().enumerate() {
            out[band * h * w + pix] = v;
        }
    }
    out
}

/// Inverse of [`cube_to_chw`].
pub fn chw_to_cube(chw: &[f32], shape: (usize, usize, usize)) -> Result<HsiCube> {
    let (h, w, b) = shape;
    if chw.len() != h * w * b {
        return Err(HsiError::LengthMismatch { expected: h * w * b, actual: chw.len() });
    }
    let plane = h * w;
    let mut data = vec![0.0f32; chw.len()];
    for (band, src) in chw.chunks_exact(plane).enumerate() {
        for (pix, &v) in src.iter().enumerate() {
            data[pix * b + band] = v;
        }
    }
    HsiCube::from_vec(h, w, b, data)
}
