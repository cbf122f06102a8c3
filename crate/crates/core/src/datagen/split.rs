use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TRAIN_FRAC: f64 = 0.7;
pub const VAL_FRAC_OF_TRAIN: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Floor-then-remainder sizes: the first `⌊train_frac·n⌋` rows are split again
/// into a training head of `⌊(1 − val_frac)·n_trainval⌋` rows and a
/// validation tail; the rest is test.
pub fn split_sizes(n: usize, train_frac: f64, val_frac: f64) -> Result<SplitSizes> {
    if !(0.0 < train_frac && train_frac < 1.0 && 0.0 < val_frac && val_frac < 1.0) {
        return Err(Error::invalid(format!(
            "split fractions must lie in (0, 1), got {train_frac} and {val_frac}"
        )));
    }
    // the small offset keeps 0.7·1000 from flooring to 699
    let trainval = (train_frac * n as f64 + 1e-9).floor() as usize;
    let train = ((1.0 - val_frac) * trainval as f64 + 1e-9).floor() as usize;
    let sizes = SplitSizes {
        train,
        val: trainval - train,
        test: n - trainval,
    };
    if sizes.train == 0 || sizes.val == 0 || sizes.test == 0 {
        return Err(Error::invalid(format!(
            "{n} rows leave an empty split: {sizes:?}"
        )));
    }
    Ok(sizes)
}

/// Contiguous, order-preserving split along the first axis.
pub fn split(data: &Tensor, train_frac: f64, val_frac: f64) -> Result<(Tensor, Tensor, Tensor)> {
    let n = data.shape().first().copied().unwrap_or(0);
    let s = split_sizes(n, train_frac, val_frac)?;
    Ok((
        data.slice_axis0(0, s.train),
        data.slice_axis0(s.train, s.train + s.val),
        data.slice_axis0(s.train + s.val, n),
    ))
}

/// [`split`] with the 70 % / 30 %-of-training defaults.
pub fn split_default(data: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    split(data, TRAIN_FRAC, VAL_FRAC_OF_TRAIN)
}
