//! Which image supplies each generator input.
//!
//! Face swapping takes codes `0..b` from the target and the rest from the
//! source. ID mixing further splits the source part: the ConvUp and Conv
//! layers of the first identity resolution come from a global source, every
//! later layer from a local source. Style maps always come from the target.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use crate::error::{MfimError, Result};
use crate::generator::{build_layer_table, GeneratorConfig, LayerDescriptor, LayerKind};
use crate::style::{StyleCodes, StyleMaps};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Target,
    Source,
    GlobalSource,
    LocalSource,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Target => "target",
            Role::Source => "source",
            Role::GlobalSource => "global",
            Role::LocalSource => "local",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = MfimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "target" => Ok(Role::Target),
            "source" => Ok(Role::Source),
            "global" => Ok(Role::GlobalSource),
            "local" => Ok(Role::LocalSource),
            other => Err(MfimError::Argument(format!("unknown role `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoutingPlan {
    /// Role per layer index.
    pub codes: Vec<Role>,
    /// Role per style-map slot.
    pub maps: Vec<Role>,
}

impl RoutingPlan {
    /// Builds a plan from ordered `(index range, role)` assignments that must
    /// cover `0..layer_count` exactly once.
    pub fn from_assignments(layer_count: usize, assignments: &[(Range<usize>, Role)]) -> Result<Self> {
        let mut codes: Vec<Option<Role>> = vec![None; layer_count];
        for (range, role) in assignments {
            if range.end > layer_count || range.is_empty() {
                return Err(MfimError::Config(format!(
                    "routing range {range:?} is empty or exceeds {layer_count} layers"
                )));
            }
            for i in range.clone() {
                if codes[i].replace(*role).is_some() {
                    return Err(MfimError::Config(format!("layer {i} is assigned twice")));
                }
            }
        }
        let codes = codes
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.ok_or_else(|| MfimError::Config(format!("layer {i} has no code source"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            codes,
            maps: vec![Role::Target; 4],
        })
    }

    /// Distinct roles the plan reads from, in role order.
    pub fn roles(&self) -> Vec<Role> {
        let mut r: Vec<Role> = self.codes.iter().chain(&self.maps).copied().collect();
        r.sort();
        r.dedup();
        r
    }

    /// One line per layer: index, resolution, kind, code role, style map.
    pub fn render_table(&self, table: &[LayerDescriptor]) -> String {
        let mut out = String::new();
        for (l, role) in table.iter().zip(&self.codes) {
            let map = match l.style_map_slot {
                Some(s) => format!("m{}@{} {}", s % 2, l.resolution, self.maps[s]),
                None => "-".to_string(),
            };
            out.push_str(&format!(
                "{} {}x{} {} {} {}\n",
                l.index, l.resolution, l.resolution, l.kind, role, map
            ));
        }
        out
    }
}

/// Compact form: `codes: 0-7 target, 8-25 source` / `maps: target target target target`.
impl fmt::Display for RoutingPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut runs: Vec<(usize, usize, Role)> = Vec::new();
        for (i, &r) in self.codes.iter().enumerate() {
            match runs.last_mut() {
                Some((_, end, role)) if *role == r => *end = i,
                _ => runs.push((i, i, r)),
            }
        }
        let runs: Vec<String> = runs
            .iter()
            .map(|(a, b, r)| {
                if a == b {
                    format!("{a} {r}")
                } else {
                    format!("{a}-{b} {r}")
                }
            })
            .collect();
        writeln!(f, "codes: {}", runs.join(", "))?;
        let maps: Vec<&str> = self.maps.iter().map(|r| r.as_str()).collect();
        write!(f, "maps: {}", maps.join(" "))
    }
}

impl FromStr for RoutingPlan {
    type Err = MfimError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: &str| MfimError::Argument(format!("malformed routing plan: {m}"));
        let mut lines = s.lines().map(str::trim).filter(|l| !l.is_empty());
        let codes_line = lines
            .next()
            .and_then(|l| l.strip_prefix("codes:"))
            .ok_or_else(|| bad("missing `codes:` line"))?;
        let maps_line = lines
            .next()
            .and_then(|l| l.strip_prefix("maps:"))
            .ok_or_else(|| bad("missing `maps:` line"))?;
        let mut assignments = Vec::new();
        for part in codes_line.split(',') {
            let (span, role) = part.trim().split_once(' ').ok_or_else(|| bad(part))?;
            let parse = |v: &str| v.parse::<usize>().map_err(|_| bad(span));
            let range = match span.split_once('-') {
                Some((a, b)) => parse(a)?..parse(b)? + 1,
                None => parse(span)?..parse(span)? + 1,
            };
            assignments.push((range, role.trim().parse()?));
        }
        let n = assignments.iter().map(|(r, _)| r.end).max().unwrap_or(0);
        let mut plan = Self::from_assignments(n, &assignments)?;
        plan.maps = maps_line.split_whitespace().map(str::parse).collect::<Result<_>>()?;
        if plan.maps.len() != 4 {
            return Err(bad("expected four map roles"));
        }
        Ok(plan)
    }
}

pub fn plan_face_swap(cfg: &GeneratorConfig) -> Result<RoutingPlan> {
    let table = build_layer_table(cfg)?;
    let b = cfg.border_index;
    RoutingPlan::from_assignments(table.len(), &[(0..b, Role::Target), (b..table.len(), Role::Source)])
}

/// Indices of the ConvUp/Conv layers at the lowest resolution that has one at
/// or after the border.
pub fn global_indices(table: &[LayerDescriptor], border: usize) -> Vec<usize> {
    let is_conv = |l: &&LayerDescriptor| l.kind != LayerKind::ToRgb;
    let Some(res) = table[border..].iter().filter(is_conv).map(|l| l.resolution).min() else {
        return Vec::new();
    };
    table[border..]
        .iter()
        .filter(is_conv)
        .filter(|l| l.resolution == res)
        .map(|l| l.index)
        .collect()
}

pub fn plan_id_mix(cfg: &GeneratorConfig) -> Result<RoutingPlan> {
    let table = build_layer_table(cfg)?;
    let b = cfg.border_index;
    let global = global_indices(&table, b);
    let mut plan = plan_face_swap(cfg)?;
    for (i, role) in plan.codes.iter_mut().enumerate().skip(b) {
        *role = if global.contains(&i) {
            Role::GlobalSource
        } else {
            Role::LocalSource
        };
    }
    Ok(plan)
}

/// Picks each code and map from the image the plan names.
pub fn assemble<T: Clone>(
    codes_by_role: &BTreeMap<Role, StyleCodes<T>>,
    maps_target: &StyleMaps<T>,
    plan: &RoutingPlan,
) -> Result<(StyleCodes<T>, StyleMaps<T>)> {
    let mut codes = Vec::with_capacity(plan.codes.len());
    for (i, role) in plan.codes.iter().enumerate() {
        let set = codes_by_role
            .get(role)
            .ok_or_else(|| MfimError::Argument(format!("routing needs codes for role `{role}`")))?;
        let code = set
            .codes
            .get(i)
            .ok_or_else(|| MfimError::Argument(format!("codes for `{role}` have no entry {i}")))?;
        codes.push(code.clone());
    }
    if plan.maps.iter().any(|r| *r != Role::Target) {
        return Err(MfimError::Argument("style maps can only come from the target".into()));
    }
    if maps_target.maps.len() != plan.maps.len() {
        return Err(MfimError::Argument(format!(
            "expected {} target style maps, got {}",
            plan.maps.len(),
            maps_target.maps.len()
        )));
    }
    Ok((StyleCodes { codes }, maps_target.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(resolution: usize) -> GeneratorConfig {
        GeneratorConfig {
            resolution,
            ..Default::default()
        }
    }

    #[test]
    fn desk_scale_plans() {
        let fs = plan_face_swap(&cfg(64)).unwrap();
        assert!(fs.codes[..8].iter().all(|r| *r == Role::Target));
        assert!(fs.codes[8..].iter().all(|r| *r == Role::Source));
        let im = plan_id_mix(&cfg(64)).unwrap();
        assert_eq!(&im.codes[8..10], &[Role::GlobalSource; 2]);
        assert!(im.codes[10..].iter().all(|r| *r == Role::LocalSource));
        assert_eq!(fs.codes[..8], im.codes[..8]);
    }

    #[test]
    fn border_zero_is_rejected() {
        let mut c = cfg(64);
        c.border_index = 0;
        assert!(plan_face_swap(&c).is_err());
        assert!(plan_id_mix(&c).is_err());
    }

    #[test]
    fn text_round_trip() {
        for plan in [plan_face_swap(&cfg(1024)).unwrap(), plan_id_mix(&cfg(1024)).unwrap()] {
            let text = plan.to_string();
            assert_eq!(text.parse::<RoutingPlan>().unwrap(), plan);
        }
        assert_eq!(
            plan_id_mix(&cfg(1024)).unwrap().to_string(),
            "codes: 0-7 target, 8-9 global, 10-25 local\nmaps: target target target target"
        );
    }

    #[test]
    fn overlapping_or_missing_assignments_fail() {
        assert!(RoutingPlan::from_assignments(4, &[(0..3, Role::Target), (2..4, Role::Source)]).is_err());
        assert!(RoutingPlan::from_assignments(4, &[(0..3, Role::Target)]).is_err());
    }

    #[test]
    fn missing_role_is_an_argument_error() {
        let plan = plan_face_swap(&cfg(64)).unwrap();
        let mut by_role = BTreeMap::new();
        by_role.insert(Role::Target, StyleCodes { codes: vec![0u8; 14] });
        let maps = StyleMaps { maps: vec![0u8; 4] };
        assert!(matches!(assemble(&by_role, &maps, &plan), Err(MfimError::Argument(_))));
    }
}
