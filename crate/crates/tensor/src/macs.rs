use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign};

/// Operation families tallied by [`MacCounter`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Conv2d,
    MatMul,
    /// Elementwise products: `mul`, `scale`, `square`, `silu`, KL terms.
    Elementwise,
    Interpolate,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpKind::Conv2d => "conv2d",
            OpKind::MatMul => "matmul",
            OpKind::Elementwise => "elementwise",
            OpKind::Interpolate => "interpolate",
        })
    }
}

/// Multiply-accumulate tallies per operation kind.
///
/// Additions, permutations and transcendental functions are free; every
/// scalar product costs one MAC.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MacCounter {
    per_kind: BTreeMap<OpKind, u64>,
    total: u64,
}

impl MacCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, kind: OpKind, macs: u64) {
        if macs == 0 {
            return;
        }
        *self.per_kind.entry(kind).or_insert(0) += macs;
        self.total += macs;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn get(&self, kind: OpKind) -> u64 {
        self.per_kind.get(&kind).copied().unwrap_or(0)
    }

    pub fn per_kind(&self) -> impl Iterator<Item = (OpKind, u64)> + '_ {
        self.per_kind.iter().map(|(&k, &v)| (k, v))
    }

    pub fn absorb(&mut self, other: &MacCounter) {
        for (kind, macs) in other.per_kind() {
            self.record(kind, macs);
        }
    }
}

impl Add for MacCounter {
    type Output = MacCounter;

    fn add(mut self, rhs: Self) -> Self::Output {
        self.absorb(&rhs);
        self
    }
}

impl AddAssign<&MacCounter> for MacCounter {
    fn add_assign(&mut self, rhs: &MacCounter) {
        self.absorb(rhs);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_is_sum_of_kinds() {
        let mut c = MacCounter::new();
        c.record(OpKind::Conv2d, 10);
        c.record(OpKind::Elementwise, 3);
        c.record(OpKind::Conv2d, 5);
        assert_eq!(c.get(OpKind::Conv2d), 15);
        assert_eq!(c.total(), c.per_kind().map(|(_, v)| v).sum::<u64>());
    }

    #[test]
    fn absorbing_twice_doubles() {
        let mut c = MacCounter::new();
        c.record(OpKind::MatMul, 7);
        c.record(OpKind::Interpolate, 2);
        let mut acc = MacCounter::new();
        acc += &c;
        acc += &c;
        assert_eq!(acc.total(), 2 * c.total());
        assert_eq!(acc.get(OpKind::MatMul), 14);
    }
}
