//! Random tags over a small alphabet so that equal tuples recur.

use proptest::prelude::*;
use tilecheck::tags::Tag;

pub fn arb_tag() -> impl Strategy<Value = Tag> {
    prop_oneof![
        1 => Just(Tag::Bottom),
        1 => Just(Tag::Top),
        4 => prop::collection::vec(0i64..3, 1..=3).prop_map(Tag::Tuple),
    ]
}
