//! Fully connected tanh networks with a linear output layer.
//!
//! Parameters are one flat `Vec<f64>`: for each layer the row-major weight
//! block followed by the bias. Under [`Scaling::Ntk`] every weight block is
//! multiplied by `1/sqrt(fan_in)` in the forward pass.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jets::{
    jet_affine, jet_cos, jet_sin, seed_input, Component, DerivMask, LayerSpec, Planes, Scalar, SpatialJet, Tape,
};

/// A batch of input points stored row by row.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Points {
    dim: usize,
    coords: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || dim > crate::jets::MAX_DIM {
            return Err(Error::UnsupportedDimension(dim));
        }
        if coords.len() % dim != 0 {
            return Err(Error::LengthMismatch { expected: coords.len() / dim * dim + dim, actual: coords.len() });
        }
        Ok(Self { dim, coords })
    }

    pub fn empty(dim: usize) -> Self {
        Self { dim, coords: Vec::new() }
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut coords = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, actual: r.len() });
            }
            coords.extend_from_slice(r);
        }
        Self::new(dim, coords)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.dim, "point dimension");
        self.coords.extend_from_slice(p);
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Rows `range` as a new set.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self { dim: self.dim, coords: self.coords[range.start * self.dim..range.end * self.dim].to_vec() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    #[default]
    Standard,
    Ntk,
}

/// Fixed random Fourier feature map `x -> (cos(2 pi B x), sin(2 pi B x))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierEmbedding {
    pub d_in: usize,
    pub n_features: usize,
    pub sigma: f64,
    /// `n_features x d_in`, row-major.
    pub frequencies: Vec<f64>,
}

impl FourierEmbedding {
    pub fn sample(d_in: usize, n_features: usize, sigma: f64, rng: &mut impl Rng) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "sigma".into(),
                value: sigma,
                reason: "must be positive".into(),
            });
        }
        if n_features == 0 {
            return Err(Error::ZeroWidth(0));
        }
        let normal = Normal::new(0.0, sigma).expect("positive sigma");
        let frequencies = (0..n_features * d_in).map(|_| normal.sample(rng)).collect();
        Ok(Self { d_in, n_features, sigma, frequencies })
    }

    pub fn out_width(&self) -> usize {
        2 * self.n_features
    }
}

/// Embeds coordinate jets: cosines first, then sines.
pub fn embed(coords: &[SpatialJet<f64>], emb: &FourierEmbedding) -> Result<Vec<SpatialJet<f64>>> {
    if coords.len() != emb.d_in {
        return Err(Error::DimensionMismatch { expected: emb.d_in, actual: coords.len() });
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut cos = Vec::with_capacity(emb.n_features);
    let mut sin = Vec::with_capacity(emb.n_features);
    for k in 0..emb.n_features {
        let w: Vec<f64> = emb.frequencies[k * emb.d_in..(k + 1) * emb.d_in].iter().map(|b| two_pi * b).collect();
        let phase = jet_affine(coords, &w, 0.0)?;
        cos.push(jet_cos(&phase));
        sin.push(jet_sin(&phase));
    }
    cos.extend(sin);
    Ok(cos)
}

/// Layer widths, scaling and optional input embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    widths: Vec<usize>,
    scaling: Scaling,
    embedding: Option<FourierEmbedding>,
    layers: Vec<LayerSpec>,
    n_params: usize,
}

impl Architecture {
    /// `widths` runs from the input dimension to the output width (1). With an
    /// embedding the first affine layer reads the `2 * n_features` features.
    pub fn new(widths: &[usize], scaling: Scaling, embedding: Option<FourierEmbedding>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArchitecture(format!("need at least input and output widths, got {widths:?}")));
        }
        if let Some(i) = widths.iter().position(|&w| w == 0) {
            return Err(Error::ZeroWidth(i));
        }
        if widths[0] > crate::jets::MAX_DIM {
            return Err(Error::UnsupportedDimension(widths[0]));
        }
        if *widths.last().unwrap() != 1 {
            return Err(Error::InvalidArchitecture("output width must be 1".into()));
        }
        if let Some(e) = &embedding {
            if e.d_in != widths[0] || e.frequencies.len() != e.n_features * e.d_in {
                return Err(Error::InvalidArchitecture("embedding does not match the input width".into()));
            }
        }
        let mut fans: Vec<usize> = widths.to_vec();
        if let Some(e) = &embedding {
            fans[0] = e.out_width();
        }
        let mut layers = Vec::with_capacity(fans.len() - 1);
        let mut offset = 0;
        for l in 0..fans.len() - 1 {
            let (fi, fo) = (fans[l], fans[l + 1]);
            let scale = match scaling {
                Scaling::Standard => 1.0,
                Scaling::Ntk => 1.0 / (fi as f64).sqrt(),
            };
            layers.push(LayerSpec {
                fan_in: fi,
                fan_out: fo,
                weight_offset: offset,
                bias_offset: offset + fi * fo,
                scale,
                activation: l + 2 < fans.len(),
            });
            offset += fi * fo + fo;
        }
        Ok(Self { widths: widths.to_vec(), scaling, embedding, layers, n_params: offset })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn d_in(&self) -> usize {
        self.widths[0]
    }

    pub fn scaling(&self) -> Scaling {
        self.scaling
    }

    pub fn embedding(&self) -> Option<&FourierEmbedding> {
        self.embedding.as_ref()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Input planes for `points`, carrying `mask.closure()`.
    pub fn input_planes(&self, points: &Points, mask: DerivMask, n_planes: usize) -> Result<Planes> {
        if points.dim() != self.d_in() {
            return Err(Error::DimensionMismatch { expected: self.d_in(), actual: points.dim() });
        }
        mask.check_dim(self.d_in())?;
        let closed = mask.closure();
        let mut rows = Vec::with_capacity(points.len());
        for p in points.iter() {
            let coords: Vec<SpatialJet<f64>> =
                (0..p.len()).map(|i| seed_input(p, i).map(|j| j.restrict(closed))).collect::<Result<_>>()?;
            rows.push(match &self.embedding {
                Some(e) => embed(&coords, e)?.into_iter().map(|j| j.restrict(closed)).collect(),
                None => coords,
            });
        }
        let width = self.layers[0].fan_in;
        if points.is_empty() {
            return Ok(Planes::zeros(closed, n_planes, 0, width));
        }
        Ok(Planes::from_jets(&rows, closed, n_planes))
    }

    /// Records the network on `points` at parameters `theta` (plus `h *
    /// direction` for tangent scalars).
    pub fn record<'a, S: Scalar>(
        &'a self,
        theta: &'a [f64],
        direction: Option<&'a [f64]>,
        points: &Points,
        mask: DerivMask,
    ) -> Result<Tape<'a, S>> {
        if theta.len() != self.n_params {
            return Err(Error::LengthMismatch { expected: self.n_params, actual: theta.len() });
        }
        let input = self.input_planes(points, mask, S::PLANES)?;
        Tape::record(&self.layers, theta, direction, self.d_in(), input)
    }

    /// Network values at `points`.
    pub fn values(&self, theta: &[f64], points: &Points) -> Result<Vec<f64>> {
        const CHUNK: usize = 4096;
        let mut out = Vec::with_capacity(points.len());
        let mask = DerivMask::new(&[Component::Value]);
        let mut start = 0;
        while start < points.len() {
            let end = (start + CHUNK).min(points.len());
            let tape: Tape<'_, f64> = self.record(theta, None, &points.slice(start..end), mask)?;
            out.extend_from_slice(tape.output().plane(0, 0));
            start = end;
        }
        Ok(out)
    }
}

/// Parameter count of a plain network with `widths`.
pub fn param_count(widths: &[usize]) -> Result<usize> {
    Ok(Architecture::new(widths, Scaling::Standard, None)?.n_params())
}

/// Initialization scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Every weight and bias `N(0, 1)`.
    Gaussian,
    /// Weights `N(0, 2 / (fan_in + fan_out))`, zero biases.
    Xavier,
}

/// A network together with its parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub arch: Architecture,
    pub theta: Vec<f64>,
}

impl MlpParams {
    pub fn init(arch: Architecture, init: Init, rng: &mut impl Rng) -> Self {
        let mut theta = vec![0.0; arch.n_params()];
        for l in arch.layers() {
            match init {
                Init::Gaussian => {
                    for v in &mut theta[l.weight_range()] {
                        *v = StandardNormal.sample(rng);
                    }
                    for v in &mut theta[l.bias_range()] {
                        *v = StandardNormal.sample(rng);
                    }
                }
                Init::Xavier => {
                    let std = (2.0 / (l.fan_in + l.fan_out) as f64).sqrt();
                    for v in &mut theta[l.weight_range()] {
                        let z: f64 = StandardNormal.sample(rng);
                        *v = std * z;
                    }
                }
            }
        }
        Self { arch, theta }
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != self.arch.n_params() {
            return Err(Error::LengthMismatch { expected: self.arch.n_params(), actual: theta.len() });
        }
        Ok(Self { arch: self.arch.clone(), theta })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        self.arch.layers()
    }

    /// Snapshot as `<stem>.bin` (little-endian f64) plus `<stem>.json`.
    pub fn save(&self, stem: &Path) -> Result<(PathBuf, PathBuf)> {
        let bin = stem.with_extension("bin");
        let json = stem.with_extension("json");
        let bytes: Vec<u8> = self.theta.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&bin, bytes)?;
        let meta = SnapshotMeta {
            widths: self.arch.widths().to_vec(),
            scaling: self.arch.scaling(),
            n_params: self.n_params(),
            embedding: self.arch.embedding().cloned(),
            byte_order: "little".into(),
            dtype: "f64".into(),
        };
        fs::write(&json, serde_json::to_string_pretty(&meta)?)?;
        Ok((bin, json))
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let meta: SnapshotMeta = serde_json::from_str(&fs::read_to_string(stem.with_extension("json"))?)?;
        let bytes = fs::read(stem.with_extension("bin"))?;
        if bytes.len() != meta.n_params * 8 {
            return Err(Error::LengthMismatch { expected: meta.n_params * 8, actual: bytes.len() });
        }
        let theta = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let arch = Architecture::new(&meta.widths, meta.scaling, meta.embedding)?;
        MlpParams { arch, theta: Vec::new() }.with_theta(theta)
    }
}

#[derive(Serialize, Deserialize)]
struct SnapshotMeta {
    widths: Vec<usize>,
    scaling: Scaling,
    n_params: usize,
    embedding: Option<FourierEmbedding>,
    byte_order: String,
    dtype: String,
}

/// All parameters `N(0, 1)` with NTK scaling.
pub fn init_gaussian(widths: &[usize], seed: u64) -> Result<MlpParams> {
    let arch = Architecture::new(widths, Scaling::Ntk, None)?;
    Ok(MlpParams::init(arch, Init::Gaussian, &mut ChaCha8Rng::seed_from_u64(seed)))
}

/// Xavier-normal weights, zero biases, standard scaling.
pub fn init_xavier(widths: &[usize], seed: u64) -> Result<MlpParams> {
    let arch = Architecture::new(widths, Scaling::Standard, None)?;
    Ok(MlpParams::init(arch, Init::Xavier, &mut ChaCha8Rng::seed_from_u64(seed)))
}

/// Xavier-initialized network behind a Fourier feature embedding drawn from
/// the same seed.
pub fn init_xavier_fourier(widths: &[usize], n_features: usize, sigma: f64, seed: u64) -> Result<MlpParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let emb = FourierEmbedding::sample(widths.first().copied().unwrap_or(0), n_features, sigma, &mut rng)?;
    let arch = Architecture::new(widths, Scaling::Standard, Some(emb))?;
    Ok(MlpParams::init(arch, Init::Xavier, &mut rng))
}

/// Output jet at one point together with its tape.
pub fn forward_jet<'a>(
    params: &'a MlpParams,
    point: &[f64],
    mask: DerivMask,
) -> Result<(SpatialJet<f64>, Tape<'a, f64>)> {
    if point.len() != params.arch.d_in() {
        return Err(Error::DimensionMismatch { expected: params.arch.d_in(), actual: point.len() });
    }
    let pts = Points::new(point.len(), point.to_vec())?;
    let tape = params.arch.record::<f64>(&params.theta, None, &pts, mask)?;
    let jet = tape.output_jet(0);
    Ok((jet, tape))
}
