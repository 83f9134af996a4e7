//! Binary Merkle tree over transaction ids.
//!
//! Each level pairs adjacent nodes as `H(left ∥ right)`; an odd node at the
//! end of a level is promoted to the next level unchanged.

use thiserror::Error;

use crate::digest::Digest;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("merkle tree needs at least one leaf")]
pub struct EmptyLeaves;

pub fn merkle_root(leaves: &[Digest]) -> Result<Digest, EmptyLeaves> {
    if leaves.is_empty() {
        return Err(EmptyLeaves);
    }
    let mut level: Vec<Digest> = leaves.to_vec();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| match pair {
                [l, r] => Digest::of_parts(&[l.as_bytes(), r.as_bytes()]),
                [odd] => *odd,
                _ => unreachable!(),
            })
            .collect();
    }
    Ok(level[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(n: u8) -> Digest {
        Digest::of(&[n])
    }

    fn h(a: &Digest, b: &Digest) -> Digest {
        let mut cat = a.0.to_vec();
        cat.extend_from_slice(&b.0);
        Digest::of(&cat)
    }

    #[test]
    fn empty_is_an_error() {
        assert_eq!(merkle_root(&[]), Err(EmptyLeaves));
    }

    #[test]
    fn single_leaf_is_root() {
        assert_eq!(merkle_root(&[leaf(1)]).unwrap(), leaf(1));
    }

    #[test]
    fn two_leaves_combine_once() {
        assert_eq!(merkle_root(&[leaf(1), leaf(2)]).unwrap(), h(&leaf(1), &leaf(2)));
    }

    #[test]
    fn odd_leaf_is_promoted() {
        let (l1, l2, l3) = (leaf(1), leaf(2), leaf(3));
        assert_eq!(merkle_root(&[l1, l2, l3]).unwrap(), h(&h(&l1, &l2), &l3));
    }

    #[test]
    fn five_leaves_hand_evaluated() {
        let l: Vec<_> = (1..=5).map(leaf).collect();
        let left = h(&h(&l[0], &l[1]), &h(&l[2], &l[3]));
        assert_eq!(merkle_root(&l).unwrap(), h(&left, &l[4]));
    }
}
