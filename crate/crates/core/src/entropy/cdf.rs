//! Integer CDF tables shared by the entropy models and the range coder.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Default CDF precision in bits.
pub const DEFAULT_PRECISION: u32 = 16;

/// One integer CDF. `cdf[0] = 0`, `cdf[len-1] = 2^precision`; the last
/// slot is the escape symbol for values outside `offset..offset+support`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CdfRow {
    pub offset: i32,
    pub cdf: Vec<u32>,
}

impl CdfRow {
    /// Number of in-support symbols (excludes the escape slot).
    pub fn support(&self) -> usize {
        self.cdf.len() - 2
    }

    pub fn escape_index(&self) -> usize {
        self.support()
    }

    pub fn frequency(&self, index: usize) -> u32 {
        self.cdf[index + 1] - self.cdf[index]
    }

    /// Coding index of `value`, or `None` if it needs the escape path.
    pub fn index_of(&self, value: i32) -> Option<usize> {
        let i = value as i64 - self.offset as i64;
        (i >= 0 && (i as usize) < self.support()).then_some(i as usize)
    }
}

/// Rows of integer CDFs at a common precision.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedCdfTable {
    pub precision: u32,
    pub rows: Vec<CdfRow>,
}

/// Converts a probability vector (in-support pmf followed by the escape
/// mass) to integer frequencies summing to `2^precision`, each at least 1.
///
/// Scaled probabilities are rounded with the largest-remainder method;
/// entries that round to zero are lifted to one and the resulting surplus is
/// taken from the most probable symbols.
pub fn quantize_pmf(probs: &[f64], precision: u32) -> Result<Vec<u32>> {
    let total = 1u64 << precision;
    if probs.len() as u64 > total {
        return Err(Error::TableCapacity {
            support: probs.len(),
            precision,
        });
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Numeric("pmf entries must be finite and nonnegative".into()));
    }
    let mass: f64 = probs.iter().sum();
    if mass <= 0.0 {
        return Err(Error::Numeric("pmf has zero total mass".into()));
    }
    let ideal: Vec<f64> = probs.iter().map(|p| p / mass * total as f64).collect();
    let mut freq: Vec<u64> = ideal.iter().map(|v| v.floor() as u64).collect();
    let assigned: u64 = freq.iter().sum();
    let mut deficit = total.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (ideal[a] - ideal[a].floor(), ideal[b] - ideal[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if deficit == 0 {
            break;
        }
        freq[i] += 1;
        deficit -= 1;
    }
    let mut surplus: u64 = 0;
    for f in freq.iter_mut().filter(|f| **f == 0) {
        *f = 1;
        surplus += 1;
    }
    while surplus > 0 {
        // most probable first, lowest index on ties
        let (mps, &top) = freq
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("non-empty");
        let take = surplus.min(top - 1);
        if take == 0 {
            return Err(Error::TableCapacity {
                support: probs.len(),
                precision,
            });
        }
        freq[mps] -= take;
        surplus -= take;
    }
    Ok(freq.into_iter().map(|f| f as u32).collect())
}

impl QuantizedCdfTable {
    /// Builds one row per `(offset, pmf, tail_mass)` triple.
    pub fn from_pmfs(rows: impl IntoIterator<Item = (i32, Vec<f64>, f64)>, precision: u32) -> Result<Self> {
        if !(1..=16).contains(&precision) {
            return Err(Error::contract(format!("cdf precision must be 1..=16 bits, got {precision}")));
        }
        let rows = rows
            .into_iter()
            .map(|(offset, mut pmf, tail)| {
                if pmf.len() + 2 > u16::MAX as usize {
                    return Err(Error::TableCapacity {
                        support: pmf.len(),
                        precision,
                    });
                }
                pmf.push(tail.max(0.0));
                let freq = quantize_pmf(&pmf, precision)?;
                let mut cdf = Vec::with_capacity(freq.len() + 1);
                let mut acc = 0u32;
                cdf.push(0);
                for f in freq {
                    acc += f;
                    cdf.push(acc);
                }
                Ok(CdfRow { offset, cdf })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(QuantizedCdfTable { precision, rows })
    }

    pub fn total(&self) -> u32 {
        1 << self.precision
    }

    /// Probability the table assigns to `value` in `row` (escape mass for out-of-support values).
    pub fn probability(&self, row: usize, value: i32) -> f64 {
        let r = &self.rows[row];
        let idx = r.index_of(value).unwrap_or(r.escape_index());
        r.frequency(idx) as f64 / self.total() as f64
    }

    /// Checks the structural invariants of every row.
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.rows.iter().enumerate() {
            if r.cdf.len() < 2 || r.cdf[0] != 0 || *r.cdf.last().unwrap() != self.total() {
                return Err(Error::Format(format!("cdf row {i} does not span [0, 2^{}]", self.precision)));
            }
            if r.cdf.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Format(format!("cdf row {i} has a zero-frequency symbol")));
            }
        }
        Ok(())
    }

    /// Serializes as: precision (u8), row count (u32), then per row
    /// offset (i32), cdf length (u16) and cdf entries (u32). Little-endian.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&[self.precision as u8])?;
        w.write_all(&(self.rows.len() as u32).to_le_bytes())?;
        for r in &self.rows {
            w.write_all(&r.offset.to_le_bytes())?;
            w.write_all(&(r.cdf.len() as u16).to_le_bytes())?;
            for v in &r.cdf {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let fmt = |e: std::io::Error| Error::Format(format!("cdf table: {e}"));
        let mut b1 = [0u8; 1];
        let mut b2 = [0u8; 2];
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b1).map_err(fmt)?;
        let precision = b1[0] as u32;
        r.read_exact(&mut b4).map_err(fmt)?;
        let n = u32::from_le_bytes(b4) as usize;
        let mut rows = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            r.read_exact(&mut b4).map_err(fmt)?;
            let offset = i32::from_le_bytes(b4);
            r.read_exact(&mut b2).map_err(fmt)?;
            let len = u16::from_le_bytes(b2) as usize;
            let mut cdf = Vec::with_capacity(len);
            for _ in 0..len {
                r.read_exact(&mut b4).map_err(fmt)?;
                cdf.push(u32::from_le_bytes(b4));
            }
            rows.push(CdfRow { offset, cdf });
        }
        let table = QuantizedCdfTable { precision, rows };
        table.validate()?;
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequencies_sum_to_total_and_stay_positive() {
        let f = quantize_pmf(&[0.7, 0.2999999, 1e-12, 1e-7], 16).unwrap();
        assert_eq!(f.iter().map(|&v| v as u64).sum::<u64>(), 65536);
        assert!(f.iter().all(|&v| v >= 1));
    }

    #[test]
    fn uniform_four_is_exact() {
        let f = quantize_pmf(&[0.25, 0.25, 0.25, 0.25, 0.0], 16).unwrap();
        // the escape slot is lifted to 1 and paid for by the first symbol
        assert_eq!(f, vec![16383, 16384, 16384, 16384, 1]);
    }

    #[test]
    fn too_many_symbols_is_a_capacity_error() {
        let p = vec![1.0; 300];
        assert!(matches!(quantize_pmf(&p, 8), Err(Error::TableCapacity { .. })));
    }

    #[test]
    fn serialization_layout() {
        let t = QuantizedCdfTable::from_pmfs([(-1, vec![0.5, 0.5], 0.0)], 16).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(buf[0], 16);
        assert_eq!(&buf[1..5], &1u32.to_le_bytes());
        assert_eq!(&buf[5..9], &(-1i32).to_le_bytes());
        assert_eq!(&buf[9..11], &4u16.to_le_bytes());
        assert_eq!(buf.len(), 11 + 4 * 4);
        assert_eq!(QuantizedCdfTable::read_from(&mut buf.as_slice()).unwrap(), t);
    }
}
