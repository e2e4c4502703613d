use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;

use crate::binio::{read_f64, read_u32, read_u64};
use crate::error::{Error, Result};
use crate::features::{FeatureLayout, FeatureMatrix, NormStats};
use crate::masks::{Mask, MaskDomain};
use crate::rng::Rng;

use super::loss::LossKind;

const MAGIC: &[u8; 4] = b"SFNN";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Sigmoid),
            _ => Err(Error::InvalidData(format!("unknown activation tag {t}"))),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fully connected layer, `y = act(W x + b)` with `W` of shape `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

/// Uniform on `+-sqrt(6 / (fan_in + fan_out))`, shape `fan_out x fan_in`.
pub fn init_glorot(rng: &mut Rng, fan_out: usize, fan_in: usize) -> Array2<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..=bound))
}

/// Whether hidden activations are subject to (inverted) dropout.
pub enum Mode<'a> {
    Eval,
    Train { dropout: f64, rng: &'a mut Rng },
}

/// Activations saved by [`FnnModel::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    /// Input to every layer (the first is the network input).
    inputs: Vec<Array2<f64>>,
    /// Scaled keep-masks applied after each hidden layer.
    dropout: Vec<Option<Array2<f64>>>,
    pub output: Array2<f64>,
}

/// Parameter gradients, one `(dW, db)` pair per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn scaled(&self, k: f64) -> Self {
        Self { layers: self.layers.iter().map(|(w, b)| (w * k, b * k)).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Feed-forward mask estimator: ReLU hidden layers and a sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct FnnModel {
    pub layers: Vec<Layer>,
    /// Input z-score statistics, applied by [`FnnModel::predict_mask`].
    pub norm: Option<NormStats>,
    pub loss: LossKind,
    pub domain: MaskDomain,
    pub layout: Option<FeatureLayout>,
    generation: u64,
}

impl FnnModel {
    /// Glorot-initialised weights and zero biases for `sizes = [in, h1, .., out]`.
    pub fn new(sizes: &[usize], rng: &mut Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let n = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer {
                weights: init_glorot(rng, w[1], w[0]),
                bias: Array1::zeros(w[1]),
                activation: if i + 1 == n { Activation::Sigmoid } else { Activation::Relu },
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::shape("layer dims", (pair[0].outputs(), 0), (pair[1].inputs(), i + 1)));
            }
        }
        for l in &layers {
            if l.bias.len() != l.outputs() {
                return Err(Error::shape("bias", (l.outputs(), 1), (l.bias.len(), 1)));
            }
        }
        Ok(Self {
            layers,
            norm: None,
            loss: LossKind::MaskMse,
            domain: MaskDomain::Gammatone,
            layout: None,
            generation: 0,
        })
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs()];
        s.extend(self.layers.iter().map(Layer::outputs));
        s
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().expect("non-empty").outputs()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Counter bumped by every parameter change; caches from older
    /// generations are rejected by [`backward`](Self::backward).
    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Mutable access to the parameters; invalidates outstanding caches.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.generation += 1;
        &mut self.layers
    }

    /// Runs the network on the columns of `x` (`inputs x batch`).
    pub fn forward(&self, x: ArrayView2<f64>, mode: Mode<'_>) -> Result<ForwardCache> {
        if x.nrows() != self.inputs() {
            return Err(Error::shape("network input", (self.inputs(), x.ncols()), x.dim()));
        }
        let (dropout, mut rng) = match mode {
            Mode::Eval => (0.0, None),
            Mode::Train { dropout, rng } => {
                if !(0.0..1.0).contains(&dropout) {
                    return Err(Error::Config(format!("dropout must be in [0,1), got {dropout}")));
                }
                (dropout, Some(rng))
            }
        };
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        for layer in &self.layers {
            let mut z = layer.weights.dot(&a);
            z += &layer.bias.view().insert_axis(Axis(1));
            inputs.push(a);
            let mut mask = None;
            match layer.activation {
                Activation::Sigmoid => z.mapv_inplace(sigmoid),
                Activation::Relu => {
                    z.mapv_inplace(|v| v.max(0.0));
                    if let Some(rng) = rng.as_deref_mut() {
                        if dropout > 0.0 {
                            let keep = 1.0 / (1.0 - dropout);
                            let m = Array2::from_shape_fn(z.dim(), |_| {
                                if rng.random::<f64>() < dropout { 0.0 } else { keep }
                            });
                            z *= &m;
                            mask = Some(m);
                        }
                    }
                }
            }
            masks.push(mask);
            a = z;
        }
        Ok(ForwardCache { generation: self.generation, inputs, dropout: masks, output: a })
    }

    /// Reverse-mode gradients given `d_output = dL/d(output)`.
    pub fn backward(&self, cache: &ForwardCache, d_output: &Array2<f64>) -> Result<Gradients> {
        if cache.generation != self.generation {
            return Err(Error::StaleCache);
        }
        if d_output.dim() != cache.output.dim() {
            return Err(Error::shape("output gradient", cache.output.dim(), d_output.dim()));
        }
        let n = self.layers.len();
        let mut grads = vec![(Array2::zeros((0, 0)), Array1::zeros(0)); n];
        // gradient w.r.t. the (post-dropout) output of layer i
        let mut delta = d_output.clone();
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            // output of this layer, before dropout: next layer input or the network output
            let out = if i + 1 == n { &cache.output } else { &cache.inputs[i + 1] };
            let mut dz = delta;
            match layer.activation {
                Activation::Sigmoid => {
                    Zip::from(&mut dz).and(out).for_each(|d, &o| *d *= o * (1.0 - o));
                }
                Activation::Relu => {
                    if let Some(m) = &cache.dropout[i] {
                        dz *= m;
                    }
                    // post-dropout zeros already carry a zero mask; ReLU zeros need one too
                    Zip::from(&mut dz).and(out).for_each(|d, &o| {
                        if o <= 0.0 {
                            *d = 0.0;
                        }
                    });
                }
            }
            let dw = dz.dot(&cache.inputs[i].t());
            let db = dz.sum_axis(Axis(1));
            delta = layer.weights.t().dot(&dz);
            grads[i] = (dw, db);
        }
        Ok(Gradients { layers: grads })
    }

    /// Eval-mode output for raw (unnormalised) features.
    pub fn predict(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        let x = match &self.norm {
            Some(stats) => stats.apply(features)?,
            None => features.clone(),
        };
        Ok(self.forward(x.view(), Mode::Eval)?.output)
    }

    /// Mask estimate for one utterance; requires attached normalisation stats.
    pub fn predict_mask(&self, features: &FeatureMatrix) -> Result<Mask> {
        if self.norm.is_none() {
            return Err(Error::Config("model has no normalizer statistics".into()));
        }
        if let Some(layout) = &self.layout {
            if *layout != features.layout {
                return Err(Error::InvalidData(format!(
                    "features use layout {} but the model was trained on {layout}",
                    features.layout
                )));
            }
        }
        let out = self.predict(&features.data)?;
        Mask::new(out, self.domain, (0.0, 1.0))
    }

    /// Binary layout, little endian:
    /// `"SFNN"`, u32 version, u32 layer count L, (L+1) x u64 layer sizes,
    /// L x u8 activation tags, per layer row-major weights then biases (f64),
    /// u8 normaliser flag [+ mean, std as f64 x inputs], u8 loss tag,
    /// u8 mask domain tag, u32 length + UTF-8 feature layout (empty if none).
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for s in self.sizes() {
            w.write_all(&(s as u64).to_le_bytes())?;
        }
        for l in &self.layers {
            w.write_all(&[l.activation.tag()])?;
        }
        for l in &self.layers {
            for x in l.weights.iter().chain(l.bias.iter()) {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        match &self.norm {
            Some(n) => {
                w.write_all(&[1])?;
                for x in n.mean.iter().chain(n.std.iter()) {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            None => w.write_all(&[0])?,
        }
        w.write_all(&[self.loss.tag(), domain_tag(self.domain)])?;
        let layout = self.layout.map(|l| l.to_string()).unwrap_or_default();
        w.write_all(&(layout.len() as u32).to_le_bytes())?;
        w.write_all(layout.as_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::InvalidData("not a network model file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Unsupported(format!("network model version {version}")));
        }
        let n = read_u32(&mut r)? as usize;
        if n == 0 || n > 64 {
            return Err(Error::InvalidData(format!("implausible layer count {n}")));
        }
        let mut sizes = Vec::with_capacity(n + 1);
        for _ in 0..=n {
            let s = read_u64(&mut r)? as usize;
            if s == 0 || s > 1 << 20 {
                return Err(Error::InvalidData(format!("implausible layer size {s}")));
            }
            sizes.push(s);
        }
        let mut acts = Vec::with_capacity(n);
        for _ in 0..n {
            acts.push(Activation::from_tag(read_u8(&mut r)?)?);
        }
        let mut layers = Vec::with_capacity(n);
        for (i, act) in acts.into_iter().enumerate() {
            let (fi, fo) = (sizes[i], sizes[i + 1]);
            let weights = read_matrix(&mut r, fo, fi)?;
            let bias = Array1::from(read_vec(&mut r, fo)?);
            layers.push(Layer { weights, bias, activation: act });
        }
        let mut model = Self::from_layers(layers)?;
        model.norm = match read_u8(&mut r)? {
            0 => None,
            1 => {
                let mean = Array1::from(read_vec(&mut r, sizes[0])?);
                let std = Array1::from(read_vec(&mut r, sizes[0])?);
                Some(NormStats { mean, std })
            }
            t => return Err(Error::InvalidData(format!("bad normalizer flag {t}"))),
        };
        model.loss = LossKind::from_tag(read_u8(&mut r)?)?;
        model.domain = domain_from_tag(read_u8(&mut r)?)?;
        let len = read_u32(&mut r)? as usize;
        if len > 256 {
            return Err(Error::InvalidData("feature layout descriptor too long".into()));
        }
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        let text = String::from_utf8(buf).map_err(|_| Error::InvalidData("layout is not UTF-8".into()))?;
        model.layout = if text.is_empty() { None } else { Some(FeatureLayout::parse(&text)?) };
        Ok(model)
    }
}

fn domain_tag(d: MaskDomain) -> u8 {
    match d {
        MaskDomain::Gammatone => 0,
        MaskDomain::Stft => 1,
    }
}

fn domain_from_tag(t: u8) -> Result<MaskDomain> {
    match t {
        0 => Ok(MaskDomain::Gammatone),
        1 => Ok(MaskDomain::Stft),
        _ => Err(Error::InvalidData(format!("unknown mask domain tag {t}"))),
    }
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_vec<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| read_f64(r)).collect()
}

fn read_matrix<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<Array2<f64>> {
    Ok(Array2::from_shape_vec((rows, cols), read_vec(r, rows * cols)?).expect("length matches"))
}
