use std::time::Instant;

use shopent::entropy::{lz_entropy_rate, LzScanner};
use shopent::synthgen::oracle_iid;

fn main() {
    let n: usize = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(100_000);
    for k in [2, 20] {
        let o = oracle_iid(k, n, 1).unwrap();
        for scanner in [LzScanner::Naive, LzScanner::Indexed] {
            let t = Instant::now();
            let est = lz_entropy_rate(&o.symbols, scanner).unwrap();
            println!(
                "k={k} {scanner:?}: {est:.4} (true {:.4}) in {:.2?}",
                o.entropy_rate,
                t.elapsed()
            );
        }
    }
}
