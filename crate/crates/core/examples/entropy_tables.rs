//! Builds the two kinds of coding tables: per-channel rows from a freshly
//! initialized factorized bottleneck, and per-scale rows of the Gaussian
//! conditional.

use nzc::entropy::{EntropyBottleneck, GaussianConditional, DEFAULT_PRECISION};
use nzc::tensor::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> nzc::Result<()> {
    let mut store = ParamStore::<f32>::new();
    let eb = EntropyBottleneck::new(&mut store, "eb", 4, 10.0, &mut ChaCha8Rng::seed_from_u64(0))?;
    let table = eb.build_table(&store, DEFAULT_PRECISION)?;
    let medians = eb.medians(&store);
    for (c, row) in table.rows.iter().enumerate() {
        println!(
            "bottleneck channel {c}: median {:+.3}, values {}..={} plus escape",
            medians[c],
            row.offset,
            row.offset + row.support() as i32 - 1
        );
    }

    let gc = GaussianConditional::default();
    let table = gc.build_table(DEFAULT_PRECISION)?;
    println!(
        "gaussian: {} scales in [{}, {}], tail multiplier {:.3}",
        gc.scale_table().len(),
        gc.scale_table()[0],
        gc.scale_table().last().unwrap(),
        gc.tail_multiplier()
    );
    for sigma in [0.11, 1.0, 8.0, 256.0] {
        let i = gc.index_for_scale(sigma);
        let row = &table.rows[i];
        println!(
            "  sigma {sigma:>6}: row {i:2} (scale {:.3}), support {} values, P(0) = {:.5}",
            gc.scale_table()[i],
            row.support(),
            table.probability(i, 0)
        );
    }
    Ok(())
}
