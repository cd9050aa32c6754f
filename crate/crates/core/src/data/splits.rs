use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSizes {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            n_train: 10_000,
            n_val: 10_000,
            n_test: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Split {
    /// Training and validation blocks together, used for the final refit.
    pub fn train_val(&self) -> Range<usize> {
        self.train.start..self.val.end
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub splits: Vec<Split>,
    pub sizes: SplitSizes,
}

/// Tiles `[0, n)` with consecutive train/validation/test blocks. The last
/// test block is cut at `n`; a split is emitted only if its test block is
/// non-empty.
pub fn make_rolling_splits(n: usize, sizes: SplitSizes) -> Result<SplitPlan> {
    if sizes.n_train == 0 || sizes.n_val == 0 || sizes.n_test == 0 {
        return Err(Error::invalid("split sizes must be positive"));
    }
    let head = sizes.n_train + sizes.n_val;
    if n < head + 1 {
        return Err(Error::invalid(format!(
            "series of length {n} cannot hold one split ({head} + 1 needed)"
        )));
    }
    let stride = head + sizes.n_test;
    let mut splits = Vec::new();
    let mut start = 0;
    while start + head < n {
        let train = start..start + sizes.n_train;
        let val = train.end..train.end + sizes.n_val;
        let test = val.end..(val.end + sizes.n_test).min(n);
        splits.push(Split { train, val, test });
        start += stride;
    }
    Ok(SplitPlan { splits, sizes })
}
