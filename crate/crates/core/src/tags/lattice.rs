//! The tag lattice: bottom below every tuple, top above every tuple, tuples
//! pairwise incomparable unless identical.

use std::collections::HashMap;
use std::fmt;

use serde::ser::{Serialize, SerializeSeq, Serializer};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Tag {
    Bottom,
    Top,
    Tuple(Vec<i64>),
}

impl Tag {
    /// Lattice order.
    pub fn le(&self, other: &Tag) -> bool {
        match (self, other) {
            (Tag::Bottom, _) | (_, Tag::Top) => true,
            (Tag::Tuple(a), Tag::Tuple(b)) => a == b,
            _ => false,
        }
    }

    pub fn is_tuple(&self) -> bool {
        matches!(self, Tag::Tuple(_))
    }
}

pub fn merge(t1: &Tag, t2: &Tag) -> Tag {
    if t2.le(t1) {
        t1.clone()
    } else if t1.le(t2) {
        t2.clone()
    } else {
        Tag::Top
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Bottom => f.write_str("⊥"),
            Tag::Top => f.write_str("⊤"),
            Tag::Tuple(v) => {
                write!(f, "(")?;
                for (i, x) in v.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{x}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// JSON form: `"bottom"`, `"top"`, or an array of integers.
impl Serialize for Tag {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Tag::Bottom => s.serialize_str("bottom"),
            Tag::Top => s.serialize_str("top"),
            Tag::Tuple(v) => {
                let mut seq = s.serialize_seq(Some(v.len()))?;
                for x in v {
                    seq.serialize_element(x)?;
                }
                seq.end()
            }
        }
    }
}

/// Interned tag handle. Equal tuples interned in the same table share an id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct TagId(pub u32);

impl TagId {
    pub const BOTTOM: TagId = TagId(0);
    pub const TOP: TagId = TagId(1);

    pub fn is_bottom(self) -> bool {
        self == Self::BOTTOM
    }

    pub fn is_top(self) -> bool {
        self == Self::TOP
    }

    pub fn is_tuple(self) -> bool {
        self.0 > 1
    }

    #[inline]
    pub fn merge(self, other: TagId) -> TagId {
        if self == other || other.is_bottom() {
            self
        } else if self.is_bottom() {
            other
        } else {
            TagId::TOP
        }
    }
}

#[derive(Debug, Clone)]
pub struct TagInterner {
    tuples: Vec<Vec<i64>>,
    index: HashMap<Vec<i64>, TagId>,
}

impl Default for TagInterner {
    fn default() -> Self {
        Self::new()
    }
}

impl TagInterner {
    pub fn new() -> Self {
        Self {
            tuples: vec![Vec::new(), Vec::new()],
            index: HashMap::new(),
        }
    }

    pub fn intern_tuple(&mut self, v: &[i64]) -> TagId {
        if let Some(&id) = self.index.get(v) {
            return id;
        }
        let id = TagId(self.tuples.len() as u32);
        self.tuples.push(v.to_vec());
        self.index.insert(v.to_vec(), id);
        id
    }

    pub fn intern(&mut self, tag: &Tag) -> TagId {
        match tag {
            Tag::Bottom => TagId::BOTTOM,
            Tag::Top => TagId::TOP,
            Tag::Tuple(v) => self.intern_tuple(v),
        }
    }

    pub fn resolve(&self, id: TagId) -> Tag {
        match id {
            TagId::BOTTOM => Tag::Bottom,
            TagId::TOP => Tag::Top,
            TagId(i) => Tag::Tuple(self.tuples[i as usize].clone()),
        }
    }

    pub fn tuple(&self, id: TagId) -> Option<&[i64]> {
        id.is_tuple().then(|| self.tuples[id.0 as usize].as_slice())
    }

    pub fn len(&self) -> usize {
        self.tuples.len() - 2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Merge-fold of a sequence of tags; bottom for an empty sequence.
pub fn fold(tags: impl IntoIterator<Item = TagId>) -> TagId {
    tags.into_iter().fold(TagId::BOTTOM, TagId::merge)
}
