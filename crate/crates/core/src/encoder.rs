//! Facial attribute encoder.
//!
//! A small residual backbone produces a three-level latent pyramid with a
//! top-down merge. Map-to-code heads turn pyramid levels into one raw code per
//! generator layer, which the S-space affine `s = alpha * c + mu` maps into
//! modulation space. Map-to-map heads produce the four style maps.

use mfim_autograd::{Array, Binder, ParamSet, Tape, Var};
use ndarray::IxDyn;
use serde::{Deserialize, Serialize};

use crate::error::{expect_shape, shape_err, MfimError, Result};
use crate::generator::{style_map_shapes, LayerDescriptor};
use crate::nn::{conv, init_conv, init_linear, instance_norm, linear, ModelRng};
use crate::style::{StyleCodeSet, StyleCodes, StyleMapSet, StyleMaps};

const PREFIX: &str = "enc";
const BACKBONE_SLOPE: f64 = 0.2;
const M2M_SLOPE: f64 = 0.01;
pub const INSTANCE_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_size: usize,
    /// Channels of every backbone stage and pyramid level.
    pub width: usize,
    pub m2m_width: usize,
    pub alpha_init: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            width: 32,
            m2m_width: 32,
            alpha_init: 0.1,
        }
    }
}

impl EncoderConfig {
    /// Coarse, middle and fine pyramid sizes.
    pub fn pyramid_sizes(&self) -> [usize; 3] {
        [self.input_size / 8, self.input_size / 4, self.input_size / 2]
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !crate::generator::is_power_of_two(self.input_size) || self.input_size < 32 {
            v.push(format!(
                "encoder.input_size = {}: must be a power of two and at least 32",
                self.input_size
            ));
        }
        if self.width == 0 || self.m2m_width == 0 {
            v.push("encoder widths must be positive".into());
        }
        if !self.alpha_init.is_finite() {
            v.push("encoder.alpha_init must be finite".into());
        }
        v
    }
}

/// Coarse, middle and fine feature maps.
pub struct LatentPyramid<'t> {
    pub levels: [Var<'t>; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PyramidLevel {
    Coarse,
    Middle,
    Fine,
}

impl PyramidLevel {
    fn idx(self) -> usize {
        self as usize
    }
}

/// Coarse third of the layers reads the coarsest level, the middle third the
/// middle level, the rest the finest.
pub fn level_for_layer(index: usize, layer_count: usize) -> PyramidLevel {
    let third = layer_count.div_ceil(3);
    let two_thirds = (2 * layer_count).div_ceil(3);
    if index < third {
        PyramidLevel::Coarse
    } else if index < two_thirds {
        PyramidLevel::Middle
    } else {
        PyramidLevel::Fine
    }
}

/// `alpha ⊙ c + mu`, with `alpha`, `mu` of shape `[D]` broadcast over `c: [N, D]`.
pub fn apply_s_affine<'t>(c: Var<'t>, alpha: Var<'t>, mu: Var<'t>) -> Result<Var<'t>> {
    let cs = c.shape();
    if cs.len() != 2 {
        return Err(shape_err(format!("raw code must be [N, D], got {cs:?}")));
    }
    let d = cs[1];
    expect_shape("affine alpha", &alpha.shape(), &[d])?;
    expect_shape("affine mu", &mu.shape(), &[d])?;
    Ok(c.mul(alpha.reshape(&[1, d])).add(mu.reshape(&[1, d])))
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub table: Vec<LayerDescriptor>,
    /// Fixed affine offsets, one all-ones vector per layer.
    pub mu: Vec<Array>,
    map_resolutions: Vec<usize>,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig, table: Vec<LayerDescriptor>) -> Result<Self> {
        let v = cfg.violations();
        if !v.is_empty() {
            return Err(MfimError::Validation(v));
        }
        let sizes = cfg.pyramid_sizes();
        let mut map_resolutions: Vec<usize> = style_map_shapes(&table).iter().map(|s| s[1]).collect();
        map_resolutions.dedup();
        for r in &map_resolutions {
            if !sizes.contains(r) {
                return Err(MfimError::Config(format!(
                    "style maps at {r}x{r} need a pyramid level of that size; the encoder has {sizes:?}"
                )));
            }
        }
        let mu = table.iter().map(|l| Array::ones(IxDyn(&[l.code_dim()]))).collect();
        Ok(Self {
            cfg,
            table,
            mu,
            map_resolutions,
        })
    }

    fn level_of_size(&self, size: usize) -> usize {
        self.cfg
            .pyramid_sizes()
            .iter()
            .position(|&s| s == size)
            .expect("checked in new")
    }

    pub fn init_params(&self, rng: &mut ModelRng) -> ParamSet {
        let mut p = ParamSet::new();
        let w = self.cfg.width;
        init_conv(&mut p, rng, &format!("{PREFIX}.stem"), 3, w, 3);
        for s in 0..3 {
            init_conv(&mut p, rng, &format!("{PREFIX}.down{s}.conv1"), w, w, 3);
            init_conv(&mut p, rng, &format!("{PREFIX}.down{s}.conv2"), w, w, 3);
            init_conv(&mut p, rng, &format!("{PREFIX}.down{s}.skip"), w, w, 1);
            init_conv(&mut p, rng, &format!("{PREFIX}.lateral{s}"), w, w, 1);
        }
        for l in &self.table {
            let pre = format!("{PREFIX}.m2c{}", l.index);
            init_conv(&mut p, rng, &format!("{pre}.conv"), w, w, 3);
            init_linear(&mut p, rng, &format!("{pre}.fc"), w, l.code_dim(), 1.0);
            p.insert(
                format!("{PREFIX}.alpha{}", l.index),
                Array::from_elem(IxDyn(&[l.code_dim()]), self.cfg.alpha_init),
            );
        }
        let shapes = style_map_shapes(&self.table);
        let mw = self.cfg.m2m_width;
        for &res in &self.map_resolutions {
            let pre = format!("{PREFIX}.m2m{res}");
            init_conv(&mut p, rng, &format!("{pre}.shared1"), w, mw, 3);
            init_conv(&mut p, rng, &format!("{pre}.shared2"), mw, mw, 3);
            for (slot, s) in shapes.iter().enumerate().filter(|(_, s)| s[1] == res) {
                init_conv(&mut p, rng, &format!("{pre}.branch{slot}"), mw, s[0], 3);
            }
        }
        p
    }

    /// Backbone plus top-down merge. Input `[N, 3, S, S]` with `S = input_size`.
    pub fn encode_pyramid<'t>(&self, b: &Binder<'t, '_>, x: Var<'t>) -> Result<LatentPyramid<'t>> {
        let s = x.shape();
        let n = s.first().copied().unwrap_or(0);
        let sz = self.cfg.input_size;
        expect_shape("encoder input", &s, &[n, 3, sz, sz])?;
        let act = |v: Var<'t>| v.leaky_relu(BACKBONE_SLOPE);
        let mut h = act(conv(b, &format!("{PREFIX}.stem"), x, 1));
        // Stages run fine to coarse; `feats[0]` is the fine level.
        let mut feats = Vec::with_capacity(3);
        for st in 0..3 {
            let pre = format!("{PREFIX}.down{st}");
            let y = act(conv(b, &format!("{pre}.conv1"), h, 2));
            let y = conv(b, &format!("{pre}.conv2"), y, 1);
            h = act(y.add(conv(b, &format!("{pre}.skip"), h, 2)));
            feats.push(h);
        }
        let lateral = |st: usize| conv(b, &format!("{PREFIX}.lateral{st}"), feats[st], 1);
        let coarse = lateral(2);
        let middle = lateral(1).add(coarse.upsample_bilinear2());
        let fine = lateral(0).add(middle.upsample_bilinear2());
        Ok(LatentPyramid {
            levels: [coarse, middle, fine],
        })
    }

    /// Raw codes `c_i`, one per generator layer.
    pub fn m2c<'t>(&self, b: &Binder<'t, '_>, pyr: &LatentPyramid<'t>) -> Result<StyleCodes<Var<'t>>> {
        let n_layers = self.table.len();
        let codes = self
            .table
            .iter()
            .map(|l| {
                let pre = format!("{PREFIX}.m2c{}", l.index);
                let src = pyr.levels[level_for_layer(l.index, n_layers).idx()];
                let h = conv(b, &format!("{pre}.conv"), src, 2).leaky_relu(BACKBONE_SLOPE);
                let pooled = h.mean_axes(&[2, 3], false);
                linear(b, &format!("{pre}.fc"), pooled)
            })
            .collect();
        Ok(StyleCodes { codes })
    }

    pub fn s_affine<'t>(&self, b: &Binder<'t, '_>, raw: &StyleCodes<Var<'t>>) -> Result<StyleCodes<Var<'t>>> {
        raw.check(&self.table)?;
        let tape = b.tape();
        let codes = raw
            .codes
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let alpha = b.var(&format!("{PREFIX}.alpha{i}"));
                apply_s_affine(c, alpha, tape.constant(self.mu[i].clone()))
            })
            .collect::<Result<_>>()?;
        Ok(StyleCodes { codes })
    }

    pub fn m2m<'t>(&self, b: &Binder<'t, '_>, pyr: &LatentPyramid<'t>) -> Result<StyleMaps<Var<'t>>> {
        let shapes = style_map_shapes(&self.table);
        let mut maps: Vec<Option<Var<'t>>> = vec![None; shapes.len()];
        for &res in &self.map_resolutions {
            let pre = format!("{PREFIX}.m2m{res}");
            let src = pyr.levels[self.level_of_size(res)];
            let h = conv(b, &format!("{pre}.shared1"), src, 1).leaky_relu(M2M_SLOPE);
            let h = conv(b, &format!("{pre}.shared2"), h, 1).leaky_relu(M2M_SLOPE);
            for (slot, _) in shapes.iter().enumerate().filter(|(_, s)| s[1] == res) {
                let y = conv(b, &format!("{pre}.branch{slot}"), h, 1);
                maps[slot] = Some(instance_norm(y, INSTANCE_NORM_EPS));
            }
        }
        let maps = maps
            .into_iter()
            .enumerate()
            .map(|(i, m)| m.ok_or_else(|| MfimError::Config(format!("no M2M head for style map {i}"))))
            .collect::<Result<_>>()?;
        Ok(StyleMaps { maps })
    }

    /// Style codes (after the affine) and style maps for a batch of images.
    pub fn encode<'t>(&self, b: &Binder<'t, '_>, x: Var<'t>) -> Result<(StyleCodes<Var<'t>>, StyleMaps<Var<'t>>)> {
        let pyr = self.encode_pyramid(b, x)?;
        let raw = self.m2c(b, &pyr)?;
        Ok((self.s_affine(b, &raw)?, self.m2m(b, &pyr)?))
    }

    pub fn encode_arrays(&self, params: &ParamSet, x: &Array) -> Result<(StyleCodeSet, StyleMapSet)> {
        let tape = Tape::new();
        let b = Binder::frozen(&tape, params);
        let (c, m) = self.encode(&b, tape.constant(x.clone()))?;
        Ok((c.values(), m.values()))
    }
}
