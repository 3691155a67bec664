//! Small shared helpers.

/// FNV-1a over a base seed and a tag. Used to derive independent,
/// platform-stable RNG stream seeds; std hashers are not stable across
/// processes.
pub(crate) fn stream_seed(base: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |b: u8| {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for b in base.to_le_bytes() {
        eat(b);
    }
    for b in tag.as_bytes() {
        eat(*b);
    }
    h
}

/// Stream seed for a (feature, value) pair, with a separator so that
/// ("ab", "c") and ("a", "bc") map to different streams.
pub(crate) fn key_seed(base: u64, feature: &str, value: &str) -> u64 {
    let mut tagged = String::with_capacity(feature.len() + value.len() + 1);
    tagged.push_str(feature);
    tagged.push('\u{1f}');
    tagged.push_str(value);
    stream_seed(base, &tagged)
}
