//! Sliding supervised windows and the chronological 6:2:2 split.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub input_len: usize,
    pub horizon: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            input_len: 12,
            horizon: 12,
        }
    }
}

impl WindowSpec {
    pub fn span(&self) -> usize {
        self.input_len + self.horizon
    }
}

/// How the split interacts with windowing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Windowing {
    /// Window the full series, then split the window list.
    #[default]
    WindowThenSplit,
    /// Split raw time steps 6:2:2, then window each segment.
    SplitThenWindow,
}

/// Window start indices per split, each in chronological order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Start offsets of every stride-1 window over `steps` time steps.
pub fn make_windows(steps: usize, spec: WindowSpec) -> Result<Vec<usize>> {
    if spec.input_len == 0 || spec.horizon == 0 {
        return Err(Error::Data("window lengths must be positive".into()));
    }
    if steps < spec.span() {
        return Err(Error::Data(format!(
            "series of {steps} steps is shorter than one window ({})",
            spec.span()
        )));
    }
    Ok((0..=steps - spec.span()).collect())
}

/// First `floor(0.6·W)` train, next `floor(0.2·W)` val, remainder test.
pub fn split_windows(windows: &[usize]) -> Result<Splits> {
    let w = windows.len();
    let (train, val) = (w * 6 / 10, w * 2 / 10);
    let splits = Splits {
        train: windows[..train].to_vec(),
        val: windows[train..train + val].to_vec(),
        test: windows[train + val..].to_vec(),
    };
    if splits.train.is_empty() || splits.val.is_empty() || splits.test.is_empty() {
        return Err(Error::Data(format!(
            "insufficient windows: {w} windows split {}/{}/{}",
            splits.train.len(),
            splits.val.len(),
            splits.test.len()
        )));
    }
    Ok(splits)
}

pub fn make_splits(steps: usize, spec: WindowSpec, mode: Windowing) -> Result<Splits> {
    match mode {
        Windowing::WindowThenSplit => split_windows(&make_windows(steps, spec)?),
        Windowing::SplitThenWindow => {
            let (a, b) = (steps * 6 / 10, steps * 8 / 10);
            let segment = |lo: usize, hi: usize| -> Vec<usize> {
                if hi - lo < spec.span() {
                    Vec::new()
                } else {
                    (lo..=hi - spec.span()).collect()
                }
            };
            let splits = Splits {
                train: segment(0, a),
                val: segment(a, b),
                test: segment(b, steps),
            };
            if splits.train.is_empty() || splits.val.is_empty() || splits.test.is_empty() {
                return Err(Error::Data(format!("insufficient windows: {steps} steps too short to split then window")));
            }
            Ok(splits)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_count() {
        assert_eq!(make_windows(30, WindowSpec::default()).unwrap().len(), 7);
        assert_eq!(make_windows(24, WindowSpec::default()).unwrap().len(), 1);
        assert!(make_windows(23, WindowSpec::default()).is_err());
    }

    #[test]
    fn seven_windows_split_4_1_2() {
        let s = split_windows(&make_windows(30, WindowSpec::default()).unwrap()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (4, 1, 2));
        assert_eq!(s.val, [4]);
    }

    #[test]
    fn single_window_is_insufficient() {
        let err = split_windows(&make_windows(24, WindowSpec::default()).unwrap())
            .unwrap_err()
            .to_string();
        assert!(err.contains("insufficient windows"), "{err}");
    }

    #[test]
    fn split_then_window_keeps_targets_inside_segment() {
        let spec = WindowSpec::default();
        let s = make_splits(200, spec, Windowing::SplitThenWindow).unwrap();
        assert!(s.train.iter().all(|&w| w + spec.span() <= 120));
        assert!(s.val.iter().all(|&w| w >= 120 && w + spec.span() <= 160));
        assert!(s.test.iter().all(|&w| w >= 160));
    }
}
