use serde::{Deserialize, Serialize};

/// Location of one named parameter array in the flat store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ParamId {
    pub offset: usize,
    pub len: usize,
}

impl ParamId {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All trainable parameters as one flat vector plus a name table.
///
/// Values are kept f32-representable: arithmetic runs in f64 but values are
/// stored and checkpointed as f32, so a saved model reloads bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    values: Vec<f64>,
}

impl ParamStore {
    pub(crate) fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            values: Vec::new(),
        }
    }

    pub(crate) fn add(&mut self, name: impl Into<String>, shape: &[usize], init: impl IntoIterator<Item = f64>) -> ParamId {
        let name = name.into();
        debug_assert!(self.entries.iter().all(|e| e.name != name), "duplicate parameter {name}");
        let offset = self.values.len();
        let len: usize = shape.iter().product();
        self.values.extend(init.into_iter().take(len).map(round_f32));
        assert_eq!(self.values.len(), offset + len, "short initializer for {name}");
        self.entries.push(ParamEntry {
            name,
            shape: shape.to_vec(),
            offset,
        });
        ParamId { offset, len }
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access for optimizers and finite-difference probes. Callers that
    /// persist state should keep values f32-representable ([`round_f32`]).
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.find(name).map(|e| &self.values[e.offset..e.offset + e.len()])
    }

    pub(crate) fn slice(&self, id: ParamId) -> &[f64] {
        &self.values[id.range()]
    }

    pub(crate) fn set(&mut self, name: &str, data: &[f64]) -> bool {
        match self.find(name).cloned() {
            Some(e) if e.len() == data.len() => {
                for (dst, src) in self.values[e.offset..e.offset + e.len()].iter_mut().zip(data) {
                    *dst = round_f32(*src);
                }
                true
            }
            _ => false,
        }
    }

    /// Number of parameters whose name starts with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(ParamEntry::len)
            .sum()
    }
}

pub fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}
