//! Append-only, immutability, tamper evidence, rewrite cost and Merkle
//! properties of the ledger model.

use pbl_core::crypto::Digest;
use pbl_core::fixture::{Fixture, BASE_TIME_MS};
use pbl_core::ledger::{
    append_block, colluding_rewrite, decode_ledger_file, encode_ledger_file, hash_header, merkle_root, scan_all,
    seal_block, tamper_scan_bytes, validate_chain, validate_ledger, Block, Chain, Colluders, Condition, ConfigEntry,
    CountingSigner, GenesisBlock, Ledger,
};
use pbl_core::codec::Encode;
use proptest::prelude::*;
use proptest::test_runner::FileFailurePersistence;
use proptest::sample::Index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest as _, Sha256};

fn build(seed: u64, data_blocks: usize, txs: usize) -> (Fixture, Ledger) {
    let f = Fixture::new(seed);
    let l = f.ledger(data_blocks, txs, &mut ChaCha8Rng::seed_from_u64(seed));
    (f, l)
}

fn prefix(l: &Ledger, data_blocks: usize) -> Ledger {
    Ledger {
        blocks: l.blocks[..data_blocks].to_vec(),
        ..l.clone()
    }
}

/// A block that could be slipped into the chain of `l` at position `pos`.
fn intruder(f: &Fixture, l: &Ledger, pos: usize, kind: u8, salt: u64) -> Block {
    match kind % 4 {
        // sealed properly on top of everything before `pos`
        0 => {
            let base = prefix(l, pos.saturating_sub(1));
            let cand = f.candidate(vec![f.raw(&salt.to_be_bytes(), salt, salt as usize)], BASE_TIME_MS + salt);
            Block::Data(seal_block(&base, cand, &f.vsp, &f.user))
        }
        // a copy of a block already in the ledger
        1 if !l.blocks.is_empty() => Block::Data(l.blocks[salt as usize % l.blocks.len()].clone()),
        // a second genesis block for the same user
        2 => Block::Genesis(GenesisBlock::issue(f.config(), BASE_TIME_MS + salt + 1, &f.gba, &f.user)),
        _ => Block::Genesis(l.genesis.clone()),
    }
}

fn insert(l: &Ledger, pos: usize, block: Block) -> Chain {
    let mut chain = l.to_chain();
    chain.blocks.insert(pos, block);
    chain
}

proptest! {
    #![proptest_config(cases(32))]

    #[test]
    fn append_keeps_the_ledger_valid(seed in any::<u64>(), n in 0usize..8, txs in 1usize..4) {
        let (f, l) = build(seed, n, 1);
        let cands = (0..txs).map(|t| f.raw(&[t as u8; 3], t as u64, t)).collect();
        let next = append_block(&l, f.candidate(cands, BASE_TIME_MS + 99), &f.directory, &f.vsp, &f.user).unwrap();
        prop_assert_eq!(next.len(), l.len() + 1);
        prop_assert!(validate_ledger(&next, &f.directory).is_valid());
    }

    #[test]
    fn insertion_between_blocks_fails(seed in any::<u64>(), n in 1usize..8, at in any::<Index>(), kind in 0u8..4, salt in any::<u64>()) {
        let (f, l) = build(seed, n, 1);
        let pos = 1 + at.index(l.len() - 1);
        let chain = insert(&l, pos, intruder(&f, &l, pos, kind, salt));
        prop_assert!(!validate_chain(&chain, &f.directory).is_valid());
    }

    #[test]
    fn prepending_fails_single_genesis(seed in any::<u64>(), n in 0usize..6, kind in 0u8..4, salt in any::<u64>()) {
        let (f, l) = build(seed, n, 1);
        let chain = insert(&l, 0, intruder(&f, &l, 0, kind, salt));
        prop_assert!(!validate_chain(&chain, &f.directory).is_valid());
        let findings = scan_all(&chain, &f.directory);
        prop_assert!(findings.iter().any(|x| x.condition == Condition::SingleGenesis), "{:?}", findings);
    }

    #[test]
    fn reordering_blocks_fails(seed in any::<u64>(), order in (2usize..9).prop_flat_map(|n| Just((0..n).collect::<Vec<_>>()).prop_shuffle())) {
        let identity: Vec<usize> = (0..order.len()).collect();
        prop_assume!(order != identity);
        let (f, l) = build(seed, order.len() - 1, 1);
        let chain = l.to_chain();
        let permuted = Chain {
            blocks: order.iter().map(|&i| chain.blocks[i].clone()).collect(),
            ..chain
        };
        prop_assert!(!validate_chain(&permuted, &f.directory).is_valid());
    }

    #[test]
    fn reordering_transactions_fails(seed in any::<u64>(), block in any::<Index>(), order in (2usize..7).prop_flat_map(|n| Just((0..n).collect::<Vec<_>>()).prop_shuffle())) {
        let identity: Vec<usize> = (0..order.len()).collect();
        prop_assume!(order != identity);
        let (f, mut l) = build(seed, 3, order.len());
        let b = block.index(l.blocks.len());
        let txs = l.blocks[b].transactions.clone();
        l.blocks[b].transactions = order.iter().map(|&i| txs[i].clone()).collect();
        prop_assert!(!validate_ledger(&l, &f.directory).is_valid());
    }

    #[test]
    fn any_byte_flip_is_detected(seed in any::<u64>(), block in any::<Index>(), offset in any::<Index>(), mask in 1u8..=255) {
        let (f, l) = build(seed, 4, 2);
        let mut body = l.canonical_bytes();
        let spans = l.block_spans();
        let i = block.index(spans.len());
        let at = spans[i].start + offset.index(spans[i].len());
        body[at] ^= mask;
        let findings = tamper_scan_bytes(&body, &f.directory);
        prop_assert!(!findings.is_empty());
        let first = findings[0].height;
        prop_assert!(first <= i as u64 + 1, "block {} first finding {}", i, first);
    }

    #[test]
    fn rewrite_cost_is_two_signatures_per_later_block(seed in any::<u64>(), n in 2usize..24, at in any::<Index>()) {
        let (f, l) = build(seed, n - 1, 1);
        let i = at.index(n);
        let user = CountingSigner::new(&f.user);
        let gba = CountingSigner::new(&f.gba);
        let esp = CountingSigner::new(&f.esps[0]);
        let osp = CountingSigner::new(&f.osp);
        let vsp = CountingSigner::new(&f.vsp);
        let c = Colluders { user: &user, gba: &gba, esp: &esp, osp: &osp, vsp: &vsp };
        let rewritten = colluding_rewrite(&l, i, |b| match b {
            Block::Genesis(g) => g.config.push(ConfigEntry::new("note", b"x".to_vec())),
            Block::Data(d) => d.transactions[0].inner.payload.push(0),
        }, &f.directory, &c);
        prop_assert!(validate_ledger(&rewritten, &f.directory).is_valid());
        let total = user.count() + gba.count() + esp.count() + osp.count() + vsp.count();
        // the touched data block also needs the transaction, executing and
        // ordering signatures
        let touched = if i == 0 { 0 } else { 3 };
        prop_assert_eq!(total, 2 * (n - i) as u64 + touched);
    }

    #[test]
    fn ledger_file_round_trip_is_byte_identical(seed in any::<u64>(), n in 0usize..6, txs in 1usize..4) {
        let (_, l) = build(seed, n, txs);
        let bytes = encode_ledger_file(&l);
        let back = decode_ledger_file(&bytes).unwrap();
        prop_assert_eq!(&back, &l);
        prop_assert_eq!(encode_ledger_file(&back), bytes);
        prop_assert_eq!(hash_header(&back.genesis.core), hash_header(&l.genesis.core));
    }
}

/// Top-down Merkle reference: nodes past the end of a level stand for the
/// last node of that level.
fn merkle_reference(leaves: &[Vec<u8>]) -> [u8; 32] {
    fn h(parts: &[&[u8]]) -> [u8; 32] {
        let mut s = Sha256::new();
        for p in parts {
            s.update(p);
        }
        s.finalize().into()
    }
    fn width(n: usize, depth: u32) -> usize {
        let mut w = n;
        for _ in 0..depth {
            w = w.div_ceil(2);
        }
        w
    }
    fn node(leaves: &[Vec<u8>], depth: u32, k: usize) -> [u8; 32] {
        let k = k.min(width(leaves.len(), depth) - 1);
        if depth == 0 {
            return h(&[&leaves[k]]);
        }
        h(&[&node(leaves, depth - 1, 2 * k), &node(leaves, depth - 1, 2 * k + 1)])
    }
    if leaves.is_empty() {
        return [0; 32];
    }
    let mut depth = 1;
    while width(leaves.len(), depth) > 1 {
        depth += 1;
    }
    node(leaves, depth, 0)
}

proptest! {
    #![proptest_config(cases(256))]

    #[test]
    fn merkle_matches_reference(leaves in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..40), 0..=16)) {
        prop_assert_eq!(merkle_root(&leaves).0, merkle_reference(&leaves));
    }

    #[test]
    fn merkle_leaf_swap_changes_root(leaves in prop::collection::hash_set(prop::collection::vec(any::<u8>(), 1..24), 2..=16), a in any::<Index>(), b in any::<Index>()) {
        let leaves: Vec<Vec<u8>> = leaves.into_iter().collect();
        let (i, j) = (a.index(leaves.len()), b.index(leaves.len()));
        prop_assume!(i != j);
        let mut swapped = leaves.clone();
        swapped.swap(i, j);
        prop_assert_ne!(merkle_root(&swapped), merkle_root(&leaves));
    }
}

#[test]
fn empty_merkle_root_is_zero() {
    assert_eq!(merkle_root::<Vec<u8>>(&[]), Digest::ZERO);
}

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig {
        failure_persistence: Some(Box::new(FileFailurePersistence::WithSource("regressions"))),
        ..ProptestConfig::with_cases(n)
    }
}
