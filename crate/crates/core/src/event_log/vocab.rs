use std::collections::{BTreeSet, HashMap};

use sha2::{Digest, Sha256};

pub const PAD: usize = 0;
pub const EOS: usize = 1;
pub const SOS: usize = 2;
pub const MASK: usize = 3;
pub const NUM_SPECIAL: usize = 4;

const SPECIAL_NAMES: [&str; NUM_SPECIAL] = ["[PAD]", "[EOS]", "[SOS]", "[MASK]"];

/// Bijection between activity names and indices. Indices `0..4` are the
/// special symbols; observed activities follow in lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_names<'a>(names: impl IntoIterator<Item = &'a str>) -> Self {
        let distinct: BTreeSet<&str> = names
            .into_iter()
            .filter(|n| !SPECIAL_NAMES.contains(n))
            .collect();
        let all = SPECIAL_NAMES
            .iter()
            .copied()
            .chain(distinct)
            .map(str::to_string)
            .collect();
        Self::from_ordered(all).expect("distinct by construction")
    }

    /// Rebuilds a vocabulary from its full ordered name list, specials first.
    pub fn from_ordered(names: Vec<String>) -> Option<Self> {
        if names.len() < NUM_SPECIAL
            || names[..NUM_SPECIAL]
                .iter()
                .zip(SPECIAL_NAMES)
                .any(|(a, b)| a != b)
        {
            return None;
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return None;
            }
        }
        Some(Self { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn num_activities(&self) -> usize {
        self.names.len() - NUM_SPECIAL
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn is_special(index: usize) -> bool {
        index < NUM_SPECIAL
    }

    /// Short stable fingerprint of the ordered name list.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for n in &self.names {
            h.update(n.as_bytes());
            h.update(b"\n");
        }
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
