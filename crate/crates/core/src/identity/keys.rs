use std::fmt;

use ed25519_dalek::{Signer as _, SigningKey};
use hmac::{Hmac, Mac};
use sha2::Sha512;

use super::phrase::SeedPhrase;
use super::IdentityError;
use crate::crypto::{PublicKey, Signature, Signer};

type HmacSha512 = Hmac<Sha512>;

const ROOT_KEY_LABEL: &[u8] = b"PBL seed";
const LEDGER_LABEL: &[u8] = b"ledger";

/// Ledger indices are capped like non-hardened BIP32 indices.
pub const MAX_LEDGER_INDEX: u64 = (1 << 31) - 1;

/// An Ed25519 key pair. The secret half never leaves this type except
/// through [`KeyPair::secret_bytes`], which exists for derivation.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
}

impl KeyPair {
    pub fn from_secret(secret: [u8; 32]) -> Self {
        KeyPair {
            signing: SigningKey::from_bytes(&secret),
        }
    }

    pub fn public(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key().to_bytes())
    }

    pub(crate) fn secret_bytes(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }
}

impl Signer for KeyPair {
    fn public_key(&self) -> PublicKey {
        self.public()
    }

    fn sign(&self, message: &[u8]) -> Signature {
        Signature {
            signer: self.public().key_id(),
            bytes: self.signing.sign(message).to_bytes().to_vec(),
        }
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public", &self.public())
            .finish_non_exhaustive()
    }
}

/// Standard X25519/Ed25519 scalar clamping.
fn clamp(mut k: [u8; 32]) -> [u8; 32] {
    k[0] &= 248;
    k[31] &= 127;
    k[31] |= 64;
    k
}

fn hmac_left_half(key: &[u8], parts: &[&[u8]]) -> [u8; 32] {
    let mut mac = HmacSha512::new_from_slice(key).expect("hmac accepts any key length");
    for p in parts {
        mac.update(p);
    }
    let out = mac.finalize().into_bytes();
    let mut left = [0u8; 32];
    left.copy_from_slice(&out[..32]);
    left
}

/// Root key: HMAC-SHA-512 keyed with "PBL seed" over the space-joined
/// phrase, left half, clamped.
pub fn derive_root_keypair(phrase: &SeedPhrase) -> KeyPair {
    let joined = phrase.expose();
    KeyPair::from_secret(clamp(hmac_left_half(ROOT_KEY_LABEL, &[joined.as_bytes()])))
}

/// Per-ledger child key: HMAC-SHA-512 keyed with the root secret over
/// `"ledger" || index as u64 big-endian`, left half, clamped.
pub fn derive_ledger_keypair(root: &KeyPair, index: u64) -> Result<KeyPair, IdentityError> {
    if index > MAX_LEDGER_INDEX {
        return Err(IdentityError::IndexOutOfRange(index));
    }
    let secret = root.secret_bytes();
    Ok(KeyPair::from_secret(clamp(hmac_left_half(
        &secret,
        &[LEDGER_LABEL, &index.to_be_bytes()],
    ))))
}

/// Deterministic key for a simulated service provider, so that a provider
/// id keeps the same key across process restarts.
pub fn derive_provider_keypair(pool_secret: &[u8], provider_id: &str) -> KeyPair {
    KeyPair::from_secret(clamp(hmac_left_half(
        b"PBL provider",
        &[pool_secret, &[0u8], provider_id.as_bytes()],
    )))
}

/// Signs `message` with `signer`.
pub fn sign(signer: &KeyPair, message: &[u8]) -> Signature {
    signer.sign(message)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::verify;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn phrase(seed: u64) -> SeedPhrase {
        SeedPhrase::generate(12, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn root_derivation_is_deterministic() {
        let p = phrase(3);
        assert_eq!(derive_root_keypair(&p).public(), derive_root_keypair(&p).public());
    }

    #[test]
    fn one_word_difference_changes_key() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let list = crate::identity::wordlist::words();
        let mut seen = std::collections::HashSet::new();
        for _ in 0..100 {
            let a = SeedPhrase::generate(12, &mut rng).unwrap();
            let mut words = a.words().to_vec();
            let pos = rng.gen_range(0..12);
            let mut replacement = list[rng.gen_range(0..2048)];
            while replacement == words[pos] {
                replacement = list[rng.gen_range(0..2048)];
            }
            words[pos] = replacement.to_owned();
            let b = SeedPhrase::from_words(&words).unwrap();
            let (ka, kb) = (derive_root_keypair(&a).public(), derive_root_keypair(&b).public());
            assert_ne!(ka, kb);
            seen.insert(ka);
            seen.insert(kb);
        }
        assert!(seen.len() >= 199);
    }

    #[test]
    fn ledger_children_are_distinct_and_reproducible() {
        let root = derive_root_keypair(&phrase(5));
        let mut keys = std::collections::HashSet::new();
        for i in 0..100 {
            let k = derive_ledger_keypair(&root, i).unwrap().public();
            assert_eq!(k, derive_ledger_keypair(&root, i).unwrap().public());
            assert_ne!(k, root.public());
            keys.insert(k);
        }
        assert_eq!(keys.len(), 100);
    }

    #[test]
    fn ledger_index_overflow_rejected() {
        let root = derive_root_keypair(&phrase(5));
        assert!(derive_ledger_keypair(&root, MAX_LEDGER_INDEX).is_ok());
        assert_eq!(
            derive_ledger_keypair(&root, MAX_LEDGER_INDEX + 1).unwrap_err(),
            IdentityError::IndexOutOfRange(MAX_LEDGER_INDEX + 1)
        );
    }

    #[test]
    fn sign_verify_contract() {
        let kp = derive_root_keypair(&phrase(8));
        let other = derive_root_keypair(&phrase(9));
        let sig = sign(&kp, b"");
        assert!(verify(&kp.public(), b"", &sig));
        assert!(!verify(&other.public(), b"", &sig));
    }

    #[test]
    fn random_bit_flips_never_verify() {
        let kp = derive_root_keypair(&phrase(12));
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let len = rng.gen_range(1..64);
            let mut msg = vec![0u8; len];
            rng.fill(&mut msg[..]);
            let sig = kp.sign(&msg);
            assert!(verify(&kp.public(), &msg, &sig));
            let flip_msg = rng.gen_bool(0.5);
            if flip_msg {
                let bit = rng.gen_range(0..len * 8);
                msg[bit / 8] ^= 1 << (bit % 8);
                assert!(!verify(&kp.public(), &msg, &sig));
            } else {
                let mut bad = sig.clone();
                let bit = rng.gen_range(0..512);
                bad.bytes[bit / 8] ^= 1 << (bit % 8);
                assert!(!verify(&kp.public(), &msg, &bad));
            }
        }
    }

    #[test]
    fn debug_hides_secret() {
        let kp = KeyPair::from_secret([0xab; 32]);
        let dbg = format!("{kp:?}");
        assert!(!dbg.contains(&hex::encode(kp.secret_bytes())));
    }
}
