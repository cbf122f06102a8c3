use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A contiguous slice of a series. The first `lags` rows only feed the
/// lag inputs; every later row is a one-step target.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    /// Row of the series where the window begins.
    pub start: usize,
    /// `[window_len × k]`.
    pub rows: Tensor,
    pub lags: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.rows.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[(window_len − lags) × k]` targets aligned with the network outputs.
    pub fn targets(&self) -> Tensor {
        self.rows.slice_axis0(self.lags, self.len())
    }

    /// Lag row `(x_{t−1}, …, x_{t−lags})` seen at window step `t`.
    pub fn lag_row(&self, t: usize) -> Vec<f64> {
        let k = self.rows.shape()[1];
        (1..=self.lags)
            .flat_map(|i| self.rows.data()[(t - i) * k..(t - i + 1) * k].to_vec())
            .collect()
    }
}

/// Stride-1 windows of `series` (`[T × k]`); `T − window_len + 1` of them.
/// `lags` is the network's total lag count.
pub fn make_windows(series: &Tensor, lags: usize, window_len: usize) -> Result<Vec<Window>> {
    let &[t_len, _] = series.shape() else {
        return Err(Error::invalid(format!(
            "series must be [T × k], got {:?}",
            series.shape()
        )));
    };
    if window_len <= lags {
        return Err(Error::invalid(format!(
            "window_len {window_len} must exceed the {lags} lags"
        )));
    }
    if t_len < window_len {
        return Err(Error::SeriesTooShort {
            required: window_len,
            got: t_len,
        });
    }
    Ok((0..=t_len - window_len)
        .map(|start| Window {
            start,
            rows: series.slice_axis0(start, start + window_len),
            lags,
        })
        .collect())
}

/// Rows of every window at step `t`, stacked into `[B × k]`.
pub(crate) fn batch_rows(windows: &[&Window], t: usize) -> Tensor {
    let k = windows[0].rows.shape()[1];
    let mut data = Vec::with_capacity(windows.len() * k);
    for w in windows {
        data.extend_from_slice(&w.rows.data()[t * k..(t + 1) * k]);
    }
    Tensor::from_parts(vec![windows.len(), k], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counting(n: usize) -> Tensor {
        Tensor::new(vec![n, 1], (1..=n).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn full_length_window_is_single() {
        assert_eq!(make_windows(&counting(10), 2, 10).unwrap().len(), 1);
        assert_eq!(make_windows(&counting(30), 2, 10).unwrap().len(), 21);
    }

    #[test]
    fn lag_rows_look_back() {
        let w = &make_windows(&counting(10), 2, 10).unwrap()[0];
        for t in 2..10 {
            let value = (t + 1) as f64;
            assert_eq!(w.lag_row(t), vec![value - 1.0, value - 2.0]);
        }
    }

    #[test]
    fn stride_one_targets_rebuild_the_tail() {
        let x = counting(40);
        let windows = make_windows(&x, 3, 8).unwrap();
        let mut tail = windows[0].targets().into_data();
        for w in &windows[1..] {
            tail.push(*w.targets().data().last().unwrap());
        }
        assert_eq!(tail, x.data()[3..].to_vec());
    }

    #[test]
    fn short_series_and_short_windows_fail() {
        assert!(matches!(
            make_windows(&counting(5), 1, 6),
            Err(Error::SeriesTooShort { .. })
        ));
        assert!(make_windows(&counting(10), 4, 4).is_err());
    }
}
