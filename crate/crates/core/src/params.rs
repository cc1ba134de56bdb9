//! Named parameter tensors and the canonical parameter layout of the model.

use std::collections::HashMap;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{conv2d, group_norm, layer_norm, linear, Scalar, Tensor};

pub(crate) const NORM_EPS: f64 = 1e-5;

/// How `init_weights` fills a parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// N(0, 0.02²)
    Normal,
    Zeros,
    Ones,
    /// Zero for the first `features` entries, then the value whose softplus is
    /// one, so generated state transitions start near 1.
    TransitionBias { features: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

struct SpecBuilder(Vec<ParamSpec>);

impl SpecBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.0.push(ParamSpec { name, shape, init });
    }

    fn linear(&mut self, prefix: &str, d_in: usize, d_out: usize) {
        self.push(format!("{prefix}.weight"), vec![d_in, d_out], Init::Normal);
        self.push(format!("{prefix}.bias"), vec![d_out], Init::Zeros);
    }

    fn conv(&mut self, prefix: &str, c_out: usize, c_in: usize, k: usize) {
        self.push(format!("{prefix}.weight"), vec![c_out, c_in, k, k], Init::Normal);
        self.push(format!("{prefix}.bias"), vec![c_out], Init::Zeros);
    }

    fn norm(&mut self, prefix: &str, d: usize) {
        self.push(format!("{prefix}.gamma"), vec![d], Init::Ones);
        self.push(format!("{prefix}.beta"), vec![d], Init::Zeros);
    }
}

/// Channel plan of the context encoder: `(in, out, stride)` per residual block.
pub(crate) fn context_plan(cfg: &ModelConfig) -> (usize, Vec<(usize, usize, usize)>) {
    let dc = cfg.block.context_dim;
    let widths = [(dc / 4).max(4), (dc / 2).max(4), (dc / 2).max(4)];
    let stem = widths[0];
    let mut blocks = Vec::with_capacity(6);
    let mut c_in = stem;
    for b in 0..6 {
        let c_out = widths[b / 2];
        let stride = match (b, cfg.block.patch_size) {
            (2, _) => 2,
            (4, 8) => 2,
            _ => 1,
        };
        blocks.push((c_in, c_out, stride));
        c_in = c_out;
    }
    (stem, blocks)
}

/// Names, shapes and initializers of every parameter the model reads, in
/// canonical order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let b = &cfg.block;
    let m = &cfg.matching;
    let d = b.embed_dim;
    let p = b.patch_size;
    let mut s = SpecBuilder(Vec::new());

    s.linear("patch", 3 * p * p, d);
    for i in 0..b.num_blocks {
        let pre = format!("block{i}");
        s.norm(&format!("{pre}.norm_in"), d);
        s.push(format!("{pre}.x_proj.weight"), vec![d, d + b.num_heads], Init::Normal);
        s.push(
            format!("{pre}.x_proj.bias"),
            vec![d + b.num_heads],
            Init::TransitionBias { features: d },
        );
        s.linear(&format!("{pre}.z_proj"), d, d);
        s.conv(&format!("{pre}.dwconv"), d, 1, b.conv_kernel);
        s.linear(&format!("{pre}.bc_proj"), d, 2 * b.state_dim);
        s.norm(&format!("{pre}.norm_y"), d);
        s.linear(&format!("{pre}.out_proj"), d, d);
    }
    s.linear("feat_out", d, d);

    let (stem, blocks) = context_plan(cfg);
    s.conv("ctx.stem", stem, 3, 3);
    s.norm("ctx.stem_norm", stem);
    for (i, &(c_in, c_out, stride)) in blocks.iter().enumerate() {
        let pre = format!("ctx.res{i}");
        s.conv(&format!("{pre}.conv1"), c_out, c_in, 3);
        s.norm(&format!("{pre}.norm1"), c_out);
        s.conv(&format!("{pre}.conv2"), c_out, c_out, 3);
        s.norm(&format!("{pre}.norm2"), c_out);
        if c_in != c_out || stride != 1 {
            s.conv(&format!("{pre}.skip"), c_out, c_in, 1);
        }
    }
    s.conv("ctx.out", b.context_dim, blocks.last().unwrap().1, 1);

    let hd = m.hidden_dim;
    let ci = b.context_dim - hd;
    let mask = 9 * p * p;
    let update = |s: &mut SpecBuilder, pre: &str, lookup: usize, field: usize, grus: &[(String, usize)]| {
        s.conv(&format!("{pre}.motion.conv1"), m.motion_dim, lookup + field, 1);
        s.conv(&format!("{pre}.motion.conv2"), m.motion_dim, m.motion_dim, 3);
        for (g, x_dim) in grus {
            for gate in ["convz", "convr", "convq"] {
                s.conv(&format!("{pre}.{g}.{gate}"), hd, hd + x_dim, 3);
            }
        }
        s.conv(&format!("{pre}.delta.conv1"), hd, hd, 3);
        s.conv(&format!("{pre}.delta.conv2"), field, hd, 3);
        s.conv(&format!("{pre}.mask.conv1"), hd, hd, 3);
        s.conv(&format!("{pre}.mask.conv2"), mask, hd, 1);
    };
    update(
        &mut s,
        "flow",
        m.flow_lookup_channels(),
        2,
        &[("gru".to_string(), m.motion_dim + ci)],
    );
    let scales = m.disparity_scales;
    let mut grus = vec![(
        "gru0".to_string(),
        m.motion_dim + ci + if scales > 1 { hd } else { 0 },
    )];
    if scales > 1 {
        grus.push(("gru1".to_string(), ci + if scales > 2 { hd } else { 0 }));
    }
    if scales > 2 {
        grus.push(("gru2".to_string(), ci));
    }
    update(&mut s, "disp", m.disparity_lookup_channels(), 1, &grus);
    s.0
}

/// Parameters resolved to one element type, looked up by dotted name.
#[derive(Clone, Debug, Default)]
pub struct Params<T> {
    map: HashMap<String, Tensor<T>>,
}

impl<T: Scalar> Params<T> {
    pub fn new() -> Self {
        Self {
            map: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Option<Tensor<T>> {
        self.map.insert(name.into(), t)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.map
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.map
            .get_mut(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    /// Checks that every parameter the configured model reads is present with
    /// the expected shape; reports the first offender in canonical order.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        for spec in param_specs(cfg) {
            let t = self.get(&spec.name)?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    name: spec.name,
                    expected: spec.shape,
                    found: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub(crate) fn linear(&self, x: &Tensor<T>, prefix: &str) -> Result<Tensor<T>> {
        linear(
            x,
            self.get(&format!("{prefix}.weight"))?,
            self.get(&format!("{prefix}.bias"))?,
        )
    }

    pub(crate) fn conv(&self, x: &Tensor<T>, prefix: &str, stride: usize) -> Result<Tensor<T>> {
        let w = self.get(&format!("{prefix}.weight"))?;
        let pad = w.dim(2) / 2;
        conv2d(x, w, self.get(&format!("{prefix}.bias"))?, stride, pad)
    }

    pub(crate) fn layer_norm(&self, x: &Tensor<T>, prefix: &str) -> Result<Tensor<T>> {
        layer_norm(
            x,
            self.get(&format!("{prefix}.gamma"))?,
            self.get(&format!("{prefix}.beta"))?,
            T::lit(NORM_EPS),
        )
    }

    pub(crate) fn group_norm(&self, x: &Tensor<T>, prefix: &str) -> Result<Tensor<T>> {
        let groups = gcd(x.dim(0), 8);
        group_norm(
            x,
            groups,
            self.get(&format!("{prefix}.gamma"))?,
            self.get(&format!("{prefix}.beta"))?,
            T::lit(NORM_EPS),
        )
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
