use crate::crypto::{sha256, sha256_concat, Digest};

/// Merkle root over `leaves`.
///
/// Leaves are hashed first. Every level with an odd number of nodes
/// duplicates its last node, including a lone leaf, so a single leaf `L`
/// has root `H(H(L) || H(L))`. No leaves gives the zero digest.
pub fn merkle_root<L: AsRef<[u8]>>(leaves: &[L]) -> Digest {
    if leaves.is_empty() {
        return Digest::ZERO;
    }
    let mut level: Vec<Digest> = leaves.iter().map(|l| sha256(l.as_ref())).collect();
    loop {
        if level.len() % 2 == 1 {
            level.push(*level.last().unwrap());
        }
        level = level
            .chunks_exact(2)
            .map(|pair| sha256_concat(&[&pair[0].0, &pair[1].0]))
            .collect();
        if level.len() == 1 {
            return level[0];
        }
    }
}
