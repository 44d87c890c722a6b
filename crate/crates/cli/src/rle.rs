//! Run-length coding of binary masks.
//!
//! Runs alternate between zeros and ones, starting with zeros, over the
//! column-major raster of the image (`index = x * height + y`). A mask that
//! starts with a set pixel has a leading zero-length run.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("run lengths sum to {found}, expected {expected}")]
pub struct RleLengthError {
    pub expected: usize,
    pub found: u64,
}

pub fn encode(raster: &[bool]) -> Vec<u64> {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u64;
    for &bit in raster {
        if bit != current {
            counts.push(run);
            current = bit;
            run = 0;
        }
        run += 1;
    }
    counts.push(run);
    counts
}

pub fn decode(counts: &[u64], expected_len: usize) -> Result<Vec<bool>, RleLengthError> {
    let total = counts.iter().try_fold(0u64, |acc, &c| acc.checked_add(c)).unwrap_or(u64::MAX);
    if total != expected_len as u64 {
        return Err(RleLengthError {
            expected: expected_len,
            found: total,
        });
    }
    let mut raster = Vec::with_capacity(expected_len);
    for (i, &c) in counts.iter().enumerate() {
        raster.extend(std::iter::repeat_n(i % 2 == 1, c as usize));
    }
    Ok(raster)
}
