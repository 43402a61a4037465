//! Range-codes symbols drawn from a discretized Gaussian with a 16-bit CDF
//! table, compares the payload with the ideal code length, and shows the
//! escape path for values outside the table support.

use nzc::entropy::{GaussianConditional, QuantizedCdfTable, DEFAULT_PRECISION};
use nzc::range_coder;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> nzc::Result<()> {
    let support = 12;
    let pmf: Vec<f64> = (-support..=support)
        .map(|v| GaussianConditional::bin_probability(v as f64, 0.0, 2.0))
        .collect();
    let tail = 1.0 - pmf.iter().sum::<f64>();
    let table = QuantizedCdfTable::from_pmfs([(-support, pmf, tail)], DEFAULT_PRECISION)?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let normal = Normal::<f64>::new(0.0, 2.0).expect("valid sigma");
    let mut symbols: Vec<i32> = (0..100_000).map(|_| normal.sample(&mut rng).round() as i32).collect();
    // a few values far outside the support take the escape path
    symbols.extend([40, -1000, 123_456]);
    let rows = vec![0; symbols.len()];

    let chunk = range_coder::encode(&symbols, &rows, &table)?;
    let ideal_bits: f64 = symbols
        .iter()
        .map(|&s| -table.probability(0, s).log2() + if s.abs() > support { 32.0 } else { 0.0 })
        .sum();
    println!("{} symbols -> {} bytes", symbols.len(), chunk.bytes.len());
    println!("ideal length for this table: {:.0} bytes", ideal_bits / 8.0);
    let decoded = range_coder::decode(&chunk, &rows, &table)?;
    assert_eq!(decoded, symbols);
    println!("round trip exact");
    Ok(())
}
