//! Analytical cache and attention-score sizes for a 32-layer, 8 kv-head model.

use kvfold::metrics::{memory_row, KvShape, GB};

fn main() {
    let shape = KvShape { n_layers: 32, n_kv_heads: 8, d_head: 128 };
    println!("{:>8} {:>12} {:>12} {:>14} {:>12}", "tokens", "fold GB", "bounded GB", "full scores GB", "chunk GB");
    for tokens in [4096u64, 16_384, 65_536, 131_072] {
        let row = memory_row(shape, 32, 2, tokens, 256, Some(1024));
        println!(
            "{:>8} {:>12.2} {:>12.3} {:>14.1} {:>12.3}",
            tokens,
            row.fold_cache_bytes as f64 / GB,
            row.bounded_cache_bytes.unwrap_or(0) as f64 / GB,
            row.full_scores_bytes as f64 / GB,
            row.chunk_scores_bytes as f64 / GB
        );
    }
}
