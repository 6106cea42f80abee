//! Named parameter traversal shared by the optimizer, checkpoints and
//! gradient checks.

use crate::tensor::Real;

/// A fixed, ordered collection of named parameter tensors.
pub trait Parameters<T: Real> {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T]));
    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.for_each("", &mut |_, v| n += v.len());
        n
    }

    fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        self.for_each("", &mut |_, v| out.extend_from_slice(v));
        out
    }

    /// Overwrites every parameter from a flat vector in traversal order.
    fn assign(&mut self, flat: &[T]) {
        let mut at = 0;
        self.for_each_mut("", &mut |_, v| {
            v.copy_from_slice(&flat[at..at + v.len()]);
            at += v.len();
        });
        debug_assert_eq!(at, flat.len());
    }

    fn zero(&mut self) {
        self.for_each_mut("", &mut |_, v| v.iter_mut().for_each(|x| *x = T::zero()));
    }

    fn add_scaled(&mut self, other: &Self, scale: T)
    where
        Self: Sized,
    {
        let flat = other.flatten();
        let mut at = 0;
        self.for_each_mut("", &mut |_, v| {
            for x in v.iter_mut() {
                *x = *x + scale * flat[at];
                at += 1;
            }
        });
    }

    fn is_finite(&self) -> bool {
        let mut ok = true;
        self.for_each("", &mut |_, v| ok &= v.iter().all(|x| x.is_finite()));
        ok
    }

    fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.for_each("", &mut |n, _| out.push(n.to_string()));
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// FNV-1a over the little-endian bytes of every parameter; used for
/// determinism checks.
pub fn checksum<T: Real, P: Parameters<T> + ?Sized>(p: &P) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    p.for_each("", &mut |_, v| {
        for x in v {
            for b in x.as_f64().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    });
    h
}
