use sha2::{Digest, Sha256};

use crate::error::Result;

pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

/// Derives an independent per-item seed so results do not depend on the
/// order items are visited in.
pub fn seed_for(seed: u64, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("sha256 digest is 32 bytes"))
}

/// Maps `f` over `items` on `workers` threads, preserving input order.
pub fn map_workers<T, R, F>(items: &[T], workers: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if workers > 1 && items.len() > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| crate::error::Error::InvalidConfig(format!("thread pool: {e}")))?;
        return pool.install(|| items.par_iter().map(&f).collect());
    }
    let _ = workers;
    items.iter().map(f).collect()
}
