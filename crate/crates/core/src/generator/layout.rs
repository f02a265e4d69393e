//! Generator configuration and the per-layer table that every other module
//! indexes into.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{MfimError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub resolution: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    /// First layer index whose style code comes from the identity source.
    pub border_index: usize,
    pub style_map_resolutions: [usize; 2],
    pub rgb_channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            base_channels: 16,
            max_channels: 128,
            border_index: 8,
            style_map_resolutions: [16, 32],
            rgb_channels: 3,
        }
    }
}

pub fn is_power_of_two(v: usize) -> bool {
    v != 0 && v & (v - 1) == 0
}

/// `2 + 3 * (log2(resolution) - 2)`.
pub fn layer_count(resolution: usize) -> usize {
    let k = resolution.trailing_zeros() as usize;
    2 + 3 * (k - 2)
}

impl GeneratorConfig {
    /// Feature channels at `res`: `base * 1024 / res`, capped at `max_channels`.
    pub fn channels_at(&self, res: usize) -> usize {
        (self.base_channels * 1024 / res).clamp(1, self.max_channels)
    }

    pub fn layer_count(&self) -> usize {
        layer_count(self.resolution)
    }

    /// Every violated invariant, empty when the config is usable.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let r = self.resolution;
        let res_ok = is_power_of_two(r) && r >= 64;
        if !res_ok {
            v.push(format!(
                "generator.resolution = {r}: must be a power of two and at least 64"
            ));
        }
        if self.base_channels == 0 || self.max_channels == 0 {
            v.push("generator channel counts must be positive".into());
        }
        if self.rgb_channels == 0 {
            v.push("generator.rgb_channels must be positive".into());
        }
        if res_ok {
            let n = layer_count(r);
            if self.border_index == 0 || self.border_index >= n {
                v.push(format!(
                    "generator.border_index = {}: must satisfy 0 < b < {n}",
                    self.border_index
                ));
            }
        }
        let [a, b] = self.style_map_resolutions;
        for m in [a, b] {
            if !is_power_of_two(m) || m < 16 || (res_ok && m >= r) {
                v.push(format!(
                    "generator.style_map_resolutions entry {m}: must be a power of two, at least 16 and below the output resolution"
                ));
            }
        }
        if a >= b {
            v.push(format!(
                "generator.style_map_resolutions = [{a}, {b}]: must be strictly increasing"
            ));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(MfimError::Config(v.join("; ")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    Conv,
    ConvUp,
    ToRgb,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerKind::Conv => "Conv",
            LayerKind::ConvUp => "ConvUp",
            LayerKind::ToRgb => "ToRGB",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDescriptor {
    pub index: usize,
    pub resolution: usize,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Which of the four style maps this layer adds, if any. Slots are ordered
    /// (low-res ConvUp, low-res Conv, high-res ConvUp, high-res Conv).
    pub style_map_slot: Option<usize>,
}

impl LayerDescriptor {
    pub fn takes_style_map(&self) -> bool {
        self.style_map_slot.is_some()
    }

    /// Length of this layer's style code.
    pub fn code_dim(&self) -> usize {
        self.in_channels
    }
}

/// Ordered layer table for `cfg`.
pub fn build_layer_table(cfg: &GeneratorConfig) -> Result<Vec<LayerDescriptor>> {
    cfg.validate()?;
    let mut table = Vec::with_capacity(cfg.layer_count());
    let slot_base = |res: usize| cfg.style_map_resolutions.iter().position(|&m| m == res).map(|p| 2 * p);
    let c4 = cfg.channels_at(4);
    table.push(LayerDescriptor {
        index: 0,
        resolution: 4,
        kind: LayerKind::Conv,
        in_channels: c4,
        out_channels: c4,
        style_map_slot: None,
    });
    table.push(LayerDescriptor {
        index: 1,
        resolution: 4,
        kind: LayerKind::ToRgb,
        in_channels: c4,
        out_channels: cfg.rgb_channels,
        style_map_slot: None,
    });
    let mut res = 8;
    while res <= cfg.resolution {
        let (cin, c) = (cfg.channels_at(res / 2), cfg.channels_at(res));
        let slot = slot_base(res);
        let i = table.len();
        table.push(LayerDescriptor {
            index: i,
            resolution: res,
            kind: LayerKind::ConvUp,
            in_channels: cin,
            out_channels: c,
            style_map_slot: slot,
        });
        table.push(LayerDescriptor {
            index: i + 1,
            resolution: res,
            kind: LayerKind::Conv,
            in_channels: c,
            out_channels: c,
            style_map_slot: slot.map(|s| s + 1),
        });
        table.push(LayerDescriptor {
            index: i + 2,
            resolution: res,
            kind: LayerKind::ToRgb,
            in_channels: c,
            out_channels: cfg.rgb_channels,
            style_map_slot: None,
        });
        res *= 2;
    }
    debug_assert_eq!(table.len(), cfg.layer_count());
    Ok(table)
}

/// `[C, H, W]` of each of the four style maps, in slot order.
pub fn style_map_shapes(table: &[LayerDescriptor]) -> Vec<[usize; 3]> {
    let mut sites: Vec<_> = table
        .iter()
        .filter_map(|l| {
            l.style_map_slot
                .map(|s| (s, [l.out_channels, l.resolution, l.resolution]))
        })
        .collect();
    sites.sort_by_key(|(s, _)| *s);
    sites.into_iter().map(|(_, shape)| shape).collect()
}
