use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent, reproducible random stream derived from a run seed.
///
/// Each consumer in the pipeline owns a fixed stream id so that adding draws
/// in one stage never shifts the numbers another stage sees.
pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub(crate) mod ids {
    pub const SYNTH: u64 = 1;
    pub const MISSING_VISUAL: u64 = 2;
    pub const KMEANS: u64 = 3;
    pub const SILHOUETTE: u64 = 4;
    pub const INIT_PARAMS: u64 = 5;
    pub const SHUFFLE: u64 = 6;
    pub const TEST_SPLIT: u64 = 7;
}
