use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::diff::{Tape, Tensor, Var};
use crate::render::SilhouetteImage;
use crate::{Error, Result};

/// Architecture of the correction network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VitConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub mlp_ratio: usize,
    /// Widths of the fully connected layers after fusion.
    pub head_hidden: Vec<usize>,
    /// Length of the configuration vector fused with the encoding, and of
    /// the output.
    pub params: usize,
}

impl Default for VitConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            patch_size: 8,
            channels: 2,
            embed_dim: 64,
            heads: 4,
            layers: 4,
            mlp_ratio: 4,
            head_hidden: vec![128, 64],
            params: 10,
        }
    }
}

impl VitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return bad(format!("image size {} is not divisible by patch size {}", self.image_size, self.patch_size));
        }
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return bad(format!("embed dim {} is not divisible by {} heads", self.embed_dim, self.heads));
        }
        if self.channels == 0 || self.layers == 0 || self.mlp_ratio == 0 || self.params == 0 {
            return bad("network sizes must be positive".into());
        }
        if self.head_hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        Ok(())
    }

    pub fn patches(&self) -> usize {
        (self.image_size / self.patch_size).pow(2)
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    /// Name and shape of every parameter, in a fixed order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.embed_dim;
        let mut v = vec![
            ("patch.w".to_string(), vec![self.patch_dim(), d]),
            ("patch.b".to_string(), vec![d]),
            ("cls".to_string(), vec![1, d]),
            ("pos".to_string(), vec![self.patches() + 1, d]),
        ];
        for l in 0..self.layers {
            let p = |s: &str| format!("layer{l}.{s}");
            for (n, s) in [
                ("ln1.g", vec![d]),
                ("ln1.b", vec![d]),
                ("q.w", vec![d, d]),
                ("q.b", vec![d]),
                ("k.w", vec![d, d]),
                ("k.b", vec![d]),
                ("v.w", vec![d, d]),
                ("v.b", vec![d]),
                ("o.w", vec![d, d]),
                ("o.b", vec![d]),
                ("ln2.g", vec![d]),
                ("ln2.b", vec![d]),
                ("mlp1.w", vec![d, d * self.mlp_ratio]),
                ("mlp1.b", vec![d * self.mlp_ratio]),
                ("mlp2.w", vec![d * self.mlp_ratio, d]),
                ("mlp2.b", vec![d]),
            ] {
                v.push((p(n), s));
            }
        }
        v.push(("norm.g".into(), vec![d]));
        v.push(("norm.b".into(), vec![d]));
        let mut width = d + self.params;
        for (i, &h) in self.head_hidden.iter().chain(std::iter::once(&self.params)).enumerate() {
            v.push((format!("head{i}.w"), vec![width, h]));
            v.push((format!("head{i}.b"), vec![h]));
            width = h;
        }
        v
    }
}

/// Parameters keyed by layer name.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: VitConfig,
    pub tensors: BTreeMap<String, Tensor>,
}

impl ModelWeights {
    /// Linear weights `N(0, 0.02²)`, positional and class embeddings likewise,
    /// biases 0, normalization gains 1. The output layer starts at zero so an
    /// untrained network applies no correction.
    pub fn init(config: VitConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        let output = format!("head{}.w", config.head_hidden.len());
        let mut tensors = BTreeMap::new();
        for (name, shape) in config.param_shapes() {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".b") || name == output {
                vec![0.0; n]
            } else if name.ends_with(".g") {
                vec![1.0; n]
            } else {
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            };
            tensors.insert(name, Tensor::new(&shape, data)?);
        }
        Ok(Self { config, tensors })
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Every tensor present with its configured shape.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let shapes = self.config.param_shapes();
        if shapes.len() != self.tensors.len() {
            return Err(Error::Format(format!("expected {} tensors, found {}", shapes.len(), self.tensors.len())));
        }
        for (name, shape) in shapes {
            match self.tensors.get(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => return Err(Error::Format(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape()))),
                None => return Err(Error::Format(format!("missing tensor {name}"))),
            }
        }
        Ok(())
    }

    /// Record the parameters on `tape`, as differentiable leaves when
    /// `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Params<'t> {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| (k.clone(), if trainable { tape.var(t.clone()) } else { tape.constant(t.clone()) }))
            .collect();
        Params { vars }
    }
}

/// Parameters recorded on one tape.
pub struct Params<'t> {
    pub vars: BTreeMap<String, Var<'t>>,
}

impl<'t> Params<'t> {
    fn get(&self, name: &str) -> Var<'t> {
        self.vars[name]
    }

    fn linear(&self, x: &Var<'t>, name: &str) -> Result<Var<'t>> {
        Ok(x.matmul(&self.get(&format!("{name}.w")))?.add(&self.get(&format!("{name}.b")))?)
    }

    fn norm(&self, x: &Var<'t>, name: &str) -> Result<Var<'t>> {
        Ok(x.layer_norm(1e-6).mul(&self.get(&format!("{name}.g")))?.add(&self.get(&format!("{name}.b")))?)
    }
}

/// Split a stack of same-sized images into `patches × (channels·p·p)` rows,
/// patches in row-major order, each row laid out channel, row, column.
pub fn patchify(images: &[&SilhouetteImage], patch: usize) -> Result<Tensor> {
    let (w, h) = (images[0].width, images[0].height);
    if images.iter().any(|m| m.width != w || m.height != h) {
        return Err(Error::Invalid("stacked masks differ in size".into()));
    }
    if w % patch != 0 || h % patch != 0 {
        return Err(Error::Invalid(format!("{w}x{h} image is not divisible into {patch}-pixel patches")));
    }
    let (gx, gy) = (w / patch, h / patch);
    let dim = images.len() * patch * patch;
    let mut data = Vec::with_capacity(gx * gy * dim);
    for py in 0..gy {
        for px in 0..gx {
            for img in images {
                for y in 0..patch {
                    let row = (py * patch + y) * w + px * patch;
                    data.extend(img.pixels[row..row + patch].iter().map(|&v| v as f64));
                }
            }
        }
    }
    Ok(Tensor::new(&[gx * gy, dim], data)?)
}

/// Raw network output for one frame: `patches` is `N × patch_dim`, `theta`
/// the normalized configuration (length `params`). Returns a length-`params`
/// vector.
pub fn forward<'t>(cfg: &VitConfig, p: &Params<'t>, patches: &Var<'t>, theta: &Var<'t>) -> Result<Var<'t>> {
    let tape = patches.tape();
    let n = cfg.patches();
    if patches.shape() != [n, cfg.patch_dim()] {
        return Err(Error::Invalid(format!("expected {n}x{} patches, got {:?}", cfg.patch_dim(), patches.shape())));
    }
    if theta.shape() != [cfg.params] {
        return Err(Error::Length { expected: cfg.params, got: theta.with_value(|t| t.len()) });
    }
    let (d, heads) = (cfg.embed_dim, cfg.heads);
    let dh = d / heads;
    let t = n + 1;
    let tokens = p.linear(patches, "patch")?;
    let mut x = tape.concat(&[p.get("cls"), tokens], 0)?.add(&p.get("pos"))?;
    let scale = 1.0 / (dh as f64).sqrt();
    for l in 0..cfg.layers {
        let name = |s: &str| format!("layer{l}.{s}");
        let h = p.norm(&x, &name("ln1"))?;
        let split = |v: Var<'t>| -> Result<Var<'t>> { Ok(v.reshape(&[t, heads, dh])?.transpose(0, 1)?) };
        let q = split(p.linear(&h, &name("q"))?)?;
        let k = split(p.linear(&h, &name("k"))?)?;
        let v = split(p.linear(&h, &name("v"))?)?;
        let att = q.matmul(&k.transpose(1, 2)?)?.mul_scalar(scale).softmax();
        let ctx = att.matmul(&v)?.transpose(0, 1)?.reshape(&[t, d])?;
        x = x.add(&p.linear(&ctx, &name("o"))?)?;
        let h = p.norm(&x, &name("ln2"))?;
        let m = p.linear(&p.linear(&h, &name("mlp1"))?.gelu(), &name("mlp2"))?;
        x = x.add(&m)?;
    }
    let cls = p.norm(&x.slice(0, 0, 1)?, "norm")?;
    let mut z = tape.concat(&[cls, theta.reshape(&[1, cfg.params])?], 1)?;
    let last = cfg.head_hidden.len();
    for i in 0..=last {
        z = p.linear(&z, &format!("head{i}"))?;
        if i < last {
            z = z.gelu();
        }
    }
    Ok(z.reshape(&[cfg.params])?)
}
