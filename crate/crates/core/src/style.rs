//! Generator inputs: one style code per layer and four spatial style maps.
//!
//! Both containers are generic so the same routing code works on plain
//! arrays (inference, tests) and on tape vars (training).

use mfim_autograd::{Array, Var};

use crate::error::{expect_shape, shape_err, Result};
use crate::generator::{style_map_shapes, LayerDescriptor};

/// Per-layer modulation vectors, each `[N, in_channels(layer)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleCodes<T> {
    pub codes: Vec<T>,
}

/// The four style maps in slot order, each `[N, C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleMaps<T> {
    pub maps: Vec<T>,
}

pub type StyleCodeSet = StyleCodes<Array>;
pub type StyleMapSet = StyleMaps<Array>;

pub trait Shaped {
    fn dims(&self) -> Vec<usize>;
}

impl Shaped for Array {
    fn dims(&self) -> Vec<usize> {
        self.shape().to_vec()
    }
}

impl Shaped for Var<'_> {
    fn dims(&self) -> Vec<usize> {
        self.shape()
    }
}

impl<T: Shaped> StyleCodes<T> {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Checks count and per-layer dimensions; returns the batch size.
    pub fn check(&self, table: &[LayerDescriptor]) -> Result<usize> {
        if self.codes.len() != table.len() {
            return Err(shape_err(format!(
                "expected {} style codes, got {}",
                table.len(),
                self.codes.len()
            )));
        }
        let batch = self.codes.first().map(|c| c.dims()[0]).unwrap_or(0);
        for (code, layer) in self.codes.iter().zip(table) {
            expect_shape(
                &format!("style code {}", layer.index),
                &code.dims(),
                &[batch, layer.code_dim()],
            )?;
        }
        Ok(batch)
    }
}

impl<T: Shaped> StyleMaps<T> {
    pub fn check(&self, table: &[LayerDescriptor], batch: usize) -> Result<()> {
        let shapes = style_map_shapes(table);
        if self.maps.len() != shapes.len() {
            return Err(shape_err(format!(
                "expected {} style maps, got {}",
                shapes.len(),
                self.maps.len()
            )));
        }
        for (i, (m, s)) in self.maps.iter().zip(&shapes).enumerate() {
            expect_shape(&format!("style map {i}"), &m.dims(), &[batch, s[0], s[1], s[2]])?;
        }
        Ok(())
    }
}

impl StyleCodeSet {
    /// Every code filled with `value`.
    pub fn filled(table: &[LayerDescriptor], batch: usize, value: f64) -> Self {
        Self {
            codes: table
                .iter()
                .map(|l| Array::from_elem(ndarray::IxDyn(&[batch, l.code_dim()]), value))
                .collect(),
        }
    }

    /// Rows `start..start + len` of every code.
    pub fn rows(&self, start: usize, len: usize) -> Self {
        Self {
            codes: self.codes.iter().map(|c| take_rows(c, start, len)).collect(),
        }
    }
}

impl StyleMapSet {
    pub fn zeros(table: &[LayerDescriptor], batch: usize) -> Self {
        Self {
            maps: style_map_shapes(table)
                .into_iter()
                .map(|s| Array::zeros(ndarray::IxDyn(&[batch, s[0], s[1], s[2]])))
                .collect(),
        }
    }

    pub fn rows(&self, start: usize, len: usize) -> Self {
        Self {
            maps: self.maps.iter().map(|m| take_rows(m, start, len)).collect(),
        }
    }
}

fn take_rows(a: &Array, start: usize, len: usize) -> Array {
    a.slice_axis(ndarray::Axis(0), ndarray::Slice::from(start..start + len))
        .to_owned()
}

impl<'t> StyleCodes<Var<'t>> {
    pub fn values(&self) -> StyleCodeSet {
        StyleCodes {
            codes: self.codes.iter().map(|c| (*c.value()).clone()).collect(),
        }
    }
}

impl<'t> StyleMaps<Var<'t>> {
    pub fn values(&self) -> StyleMapSet {
        StyleMaps {
            maps: self.maps.iter().map(|m| (*m.value()).clone()).collect(),
        }
    }
}
