use std::cell::RefCell;
use std::collections::BTreeMap;

use crate::tape::{Array, Gradients, Tape, Var};

/// Named parameter arrays, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, Array>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array) {
        self.entries.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Array)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.entries.values().map(|a| a.len()).sum()
    }

    /// Entries whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Inserts every entry of `other`, replacing existing names.
    pub fn extend(&mut self, other: ParamSet) {
        self.entries.extend(other.entries);
    }

    /// Order-sensitive 64-bit FNV-1a digest over names, shapes and bit patterns.
    pub fn checksum(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(PRIME);
            }
        };
        for (name, value) in &self.entries {
            feed(name.as_bytes());
            for &d in value.shape() {
                feed(&(d as u64).to_le_bytes());
            }
            for v in value.iter() {
                feed(&v.to_bits().to_le_bytes());
            }
        }
        h
    }
}

/// Binds a [`ParamSet`] onto a tape, creating each var on first use.
///
/// A trainable binder records leaves; a frozen one records constants so no
/// gradient ever reaches the underlying arrays.
pub struct Binder<'t, 'p> {
    tape: &'t Tape,
    params: &'p ParamSet,
    trainable: bool,
    bound: RefCell<BTreeMap<String, Var<'t>>>,
}

impl<'t, 'p> Binder<'t, 'p> {
    pub fn trainable(tape: &'t Tape, params: &'p ParamSet) -> Self {
        Self {
            tape,
            params,
            trainable: true,
            bound: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn frozen(tape: &'t Tape, params: &'p ParamSet) -> Self {
        Self {
            trainable: false,
            ..Self::trainable(tape, params)
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    /// The var for `name`. Panics when the parameter does not exist, which
    /// means a module and its initializer disagree.
    pub fn var(&self, name: &str) -> Var<'t> {
        if let Some(v) = self.bound.borrow().get(name) {
            return *v;
        }
        let value = self
            .params
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter `{name}`"))
            .clone();
        let v = if self.trainable {
            self.tape.leaf(value)
        } else {
            self.tape.constant(value)
        };
        self.bound.borrow_mut().insert(name.to_string(), v);
        v
    }

    /// Uses `var` for `name` from now on, e.g. to probe one parameter in a
    /// gradient check.
    pub fn bind(&self, name: &str, var: Var<'t>) {
        self.bound.borrow_mut().insert(name.to_string(), var);
    }

    /// Gradients for every bound parameter; unreached ones get zeros.
    pub fn gradients(&self, grads: &Gradients) -> BTreeMap<String, Array> {
        self.bound
            .borrow()
            .iter()
            .map(|(k, v)| (k.clone(), grads.get_or_zeros(*v)))
            .collect()
    }
}
