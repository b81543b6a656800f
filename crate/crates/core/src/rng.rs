//! Deterministic random sub-streams.
//!
//! Every random draw in the crate comes from a ChaCha stream whose seed is
//! derived from `(master seed, component name, indices)`. Changing the
//! order in which components run, or running them in parallel, therefore
//! never changes the values any one component sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the sub-stream `component[indices...]` under `master`.
pub fn derive_seed(master: u64, component: &str, indices: &[u64]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in component.bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(FNV_PRIME);
    }
    let mut s = splitmix(master ^ h);
    for &i in indices {
        s = splitmix(s ^ splitmix(i.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    s
}

pub fn stream(master: u64, component: &str, indices: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(master, component, indices))
}
