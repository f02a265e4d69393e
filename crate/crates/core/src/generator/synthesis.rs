use std::f64::consts::SQRT_2;

use mfim_autograd::{Array, Binder, ParamSet, Tape, Var};
use ndarray::IxDyn;

use super::layout::{build_layer_table, GeneratorConfig, LayerDescriptor, LayerKind};
use super::modulation::{demodulated_conv, inject_style_map, DEMOD_EPS};
use crate::error::Result;
use crate::nn::{add_channel_bias, normal_array, ModelRng};
use crate::style::{StyleCodeSet, StyleCodes, StyleMapSet, StyleMaps};

pub(crate) const PREFIX: &str = "gen";

/// Leaky ReLU with the usual sqrt(2) gain that keeps activations near unit scale.
pub(crate) fn gen_act(x: Var<'_>) -> Var<'_> {
    x.leaky_relu(0.2).mul_scalar(SQRT_2)
}

/// The synthesis network. Parameters live in a separate [`ParamSet`] so the
/// trainer can own them alongside the encoder's.
#[derive(Clone, Debug)]
pub struct Generator {
    pub cfg: GeneratorConfig,
    pub table: Vec<LayerDescriptor>,
}

/// Outputs of one forward pass with every intermediate kept.
pub struct SynthesisTrace<'t> {
    pub image: Var<'t>,
    /// Output of each layer in table order: features for Conv/ConvUp, the
    /// running RGB skip sum for ToRGB.
    pub layer_outputs: Vec<Var<'t>>,
}

fn layer_name(i: usize, field: &str) -> String {
    format!("{PREFIX}.l{i}.{field}")
}

impl Generator {
    pub fn new(cfg: GeneratorConfig) -> Result<Self> {
        let table = build_layer_table(&cfg)?;
        Ok(Self { cfg, table })
    }

    pub fn init_params(&self, rng: &mut ModelRng) -> ParamSet {
        let mut p = ParamSet::new();
        let c4 = self.cfg.channels_at(4);
        p.insert(format!("{PREFIX}.const"), normal_array(rng, &[1, c4, 4, 4], 1.0));
        for l in &self.table {
            let (k, std) = match l.kind {
                LayerKind::ToRgb => (1, 1.0 / (l.in_channels as f64).sqrt()),
                _ => (3, 1.0),
            };
            p.insert(
                layer_name(l.index, "weight"),
                normal_array(rng, &[l.out_channels, l.in_channels, k, k], std),
            );
            p.insert(layer_name(l.index, "bias"), Array::zeros(IxDyn(&[l.out_channels])));
            if l.takes_style_map() {
                p.insert(layer_name(l.index, "map_scale"), Array::zeros(IxDyn(&[1])));
            }
        }
        p
    }

    pub fn synthesize<'t>(
        &self,
        b: &Binder<'t, '_>,
        codes: &StyleCodes<Var<'t>>,
        maps: &StyleMaps<Var<'t>>,
    ) -> Result<Var<'t>> {
        Ok(self.synthesize_traced(b, codes, maps)?.image)
    }

    pub fn synthesize_traced<'t>(
        &self,
        b: &Binder<'t, '_>,
        codes: &StyleCodes<Var<'t>>,
        maps: &StyleMaps<Var<'t>>,
    ) -> Result<SynthesisTrace<'t>> {
        let n = codes.check(&self.table)?;
        maps.check(&self.table, n)?;
        let mut x = b.var(&format!("{PREFIX}.const")).expand_batch(n);
        let mut rgb: Option<Var<'t>> = None;
        let mut outputs = Vec::with_capacity(self.table.len());
        for l in &self.table {
            let w = b.var(&layer_name(l.index, "weight"));
            let bias = b.var(&layer_name(l.index, "bias"));
            let style = codes.codes[l.index];
            match l.kind {
                LayerKind::Conv | LayerKind::ConvUp => {
                    if l.kind == LayerKind::ConvUp {
                        x = x.upsample_bilinear2();
                    }
                    let mut y = demodulated_conv(x, w, style, DEMOD_EPS, true)?;
                    if let Some(slot) = l.style_map_slot {
                        let scale = b.var(&layer_name(l.index, "map_scale"));
                        y = inject_style_map(y, maps.maps[slot], scale)?;
                    }
                    x = gen_act(add_channel_bias(y, bias));
                    outputs.push(x);
                }
                LayerKind::ToRgb => {
                    let y = add_channel_bias(demodulated_conv(x, w, style, DEMOD_EPS, false)?, bias);
                    let sum = match rgb {
                        Some(prev) => prev.upsample_bilinear2().add(y),
                        None => y,
                    };
                    rgb = Some(sum);
                    outputs.push(sum);
                }
            }
        }
        Ok(SynthesisTrace {
            image: rgb.expect("layer table always ends with ToRGB"),
            layer_outputs: outputs,
        })
    }

    /// Inference on plain arrays with frozen parameters.
    pub fn synthesize_arrays(&self, params: &ParamSet, codes: &StyleCodeSet, maps: &StyleMapSet) -> Result<Array> {
        let tape = Tape::new();
        let b = Binder::frozen(&tape, params);
        let cv = StyleCodes {
            codes: codes.codes.iter().map(|c| tape.constant(c.clone())).collect(),
        };
        let mv = StyleMaps {
            maps: maps.maps.iter().map(|m| tape.constant(m.clone())).collect(),
        };
        let img = self.synthesize(&b, &cv, &mv)?;
        Ok((*img.value()).clone())
    }
}
