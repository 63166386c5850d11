//! Qualitative trend estimation for a single parameter series.
//!
//! The running estimate follows `S(t) = F(S(t-1), X(t-1), X(t))` where `F`
//! is the finite table in [`step_estimate`]. [`classify_series`] folds it
//! over a series and then separates cyclic from merely bounded or erratic
//! behaviour once two or more direction reversals have been seen.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Tick, TimeInterval};

/// Lower and upper bound of the swing amplitude ratio accepted as cyclic.
pub const CYCLIC_RATIO_BAND: (f64, f64) = (0.5, 2.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendClass {
    Increasing,
    Decreasing,
    Constant,
    SinglePeak,
    SingleTrough,
    Cyclic,
    Bounded,
    Unclassified,
}

impl TrendClass {
    pub const ALL: [TrendClass; 8] = [
        TrendClass::Increasing,
        TrendClass::Decreasing,
        TrendClass::Constant,
        TrendClass::SinglePeak,
        TrendClass::SingleTrough,
        TrendClass::Cyclic,
        TrendClass::Bounded,
        TrendClass::Unclassified,
    ];
}

/// Sign of one step of a series under tolerance ε.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Change {
    Up,
    Flat,
    Down,
}

impl Change {
    /// `|curr - prev| <= ε` is flat. Negative or NaN ε counts as zero.
    pub fn between(prev: f64, curr: f64, epsilon: f64) -> Change {
        let eps = if epsilon > 0.0 { epsilon } else { 0.0 };
        let diff = curr - prev;
        if diff.abs() <= eps {
            Change::Flat
        } else if diff > 0.0 {
            Change::Up
        } else {
            Change::Down
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrendError {
    #[error("series has {0} point(s); at least 2 are required")]
    TooShortSeries(usize),
    #[error("series ticks are not strictly increasing at tick {0}")]
    NonMonotoneTicks(Tick),
    #[error("breakpoint {0} lies outside the series range")]
    BreakpointOutOfRange(Tick),
    #[error("breakpoints are not strictly increasing at {0}")]
    UnorderedBreakpoints(Tick),
    #[error("tolerance must be a non-negative number, got {0}")]
    InvalidTolerance(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendEstimate {
    pub class: TrendClass,
    pub interval: TimeInterval,
    pub support: Vec<(Tick, f64)>,
    pub tolerance: f64,
}

/// One transition of the trend automaton.
///
/// | prev \ change | up            | flat         | down          |
/// |---------------|---------------|--------------|---------------|
/// | Constant      | Increasing    | Constant     | Decreasing    |
/// | Increasing    | Increasing    | Increasing   | SinglePeak    |
/// | Decreasing    | SingleTrough  | Decreasing   | Decreasing    |
/// | SinglePeak    | Cyclic        | SinglePeak   | SinglePeak    |
/// | SingleTrough  | SingleTrough  | SingleTrough | Cyclic        |
/// | Cyclic        | Cyclic        | Cyclic       | Cyclic        |
/// | Bounded       | Bounded       | Bounded      | Bounded       |
/// | Unclassified  | Unclassified  | Unclassified | Unclassified  |
///
/// `Cyclic` here is the accumulation state for two or more reversals; the
/// series-level post-pass decides between `Cyclic`, `Bounded` and
/// `Unclassified`.
pub fn step_estimate(prev: TrendClass, x_prev: f64, x_curr: f64, epsilon: f64) -> TrendClass {
    use Change::*;
    use TrendClass::*;
    match (prev, Change::between(x_prev, x_curr, epsilon)) {
        (Constant, Up) => Increasing,
        (Constant, Flat) => Constant,
        (Constant, Down) => Decreasing,
        (Increasing, Up | Flat) => Increasing,
        (Increasing, Down) => SinglePeak,
        (Decreasing, Down | Flat) => Decreasing,
        (Decreasing, Up) => SingleTrough,
        (SinglePeak, Up) => Cyclic,
        (SinglePeak, Flat | Down) => SinglePeak,
        (SingleTrough, Down) => Cyclic,
        (SingleTrough, Flat | Up) => SingleTrough,
        (Cyclic, _) => Cyclic,
        (Bounded, _) => Bounded,
        (Unclassified, _) => Unclassified,
    }
}

fn check_series(series: &[(Tick, f64)], epsilon: f64) -> Result<(), TrendError> {
    if !(epsilon >= 0.0) {
        return Err(TrendError::InvalidTolerance(epsilon));
    }
    if series.len() < 2 {
        return Err(TrendError::TooShortSeries(series.len()));
    }
    for w in series.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(TrendError::NonMonotoneTicks(w[1].0));
        }
    }
    Ok(())
}

/// Maximal monotone runs of a series, ignoring flat steps.
/// Each run is `(direction, start index, end index)`.
fn monotone_runs(series: &[(Tick, f64)], epsilon: f64) -> Vec<(Change, usize, usize)> {
    let mut runs: Vec<(Change, usize, usize)> = Vec::new();
    for i in 1..series.len() {
        let change = Change::between(series[i - 1].1, series[i].1, epsilon);
        if change == Change::Flat {
            if let Some(last) = runs.last_mut() {
                last.2 = i;
            }
            continue;
        }
        match runs.last_mut() {
            Some(last) if last.0 == change => last.2 = i,
            _ => runs.push((change, i - 1, i)),
        }
    }
    runs
}

/// Number of direction reversals under tolerance ε.
pub fn count_reversals(series: &[(Tick, f64)], epsilon: f64) -> usize {
    monotone_runs(series, epsilon).len().saturating_sub(1)
}

/// Classifies a whole series. Needs at least two points with strictly
/// increasing ticks.
pub fn classify_series(series: &[(Tick, f64)], epsilon: f64) -> Result<TrendEstimate, TrendError> {
    check_series(series, epsilon)?;
    let folded = series
        .windows(2)
        .fold(TrendClass::Constant, |s, w| step_estimate(s, w[0].1, w[1].1, epsilon));
    let class = if folded == TrendClass::Cyclic {
        classify_oscillation(series, epsilon)
    } else {
        folded
    };
    Ok(TrendEstimate {
        class,
        interval: TimeInterval {
            start: series[0].0,
            end: series[series.len() - 1].0,
        },
        support: series.to_vec(),
        tolerance: epsilon,
    })
}

/// Post-pass for series with at least two reversals.
fn classify_oscillation(series: &[(Tick, f64)], epsilon: f64) -> TrendClass {
    let runs = monotone_runs(series, epsilon);
    debug_assert!(runs.len() >= 3);
    let swings: Vec<f64> = runs
        .iter()
        .map(|&(_, a, b)| (series[b].1 - series[a].1).abs())
        .collect();
    let (lo, hi) = CYCLIC_RATIO_BAND;
    let regular = swings.windows(2).all(|w| {
        let ratio = w[1] / w[0];
        ratio.is_finite() && (lo..=hi).contains(&ratio)
    });
    if regular {
        return TrendClass::Cyclic;
    }
    // First window: from the start through the second turning point.
    let window_end = runs[1].2;
    let (min, max) = series[..=window_end]
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, v)| {
            (lo.min(v), hi.max(v))
        });
    let within = series
        .iter()
        .all(|&(_, v)| v >= min - epsilon && v <= max + epsilon);
    if within {
        TrendClass::Bounded
    } else {
        TrendClass::Unclassified
    }
}

/// Splits the series at `breakpoints` and classifies each piece. Adjacent
/// pieces share their boundary tick, so together they cover the whole range.
pub fn segment_series(
    series: &[(Tick, f64)],
    breakpoints: &[Tick],
    epsilon: f64,
) -> Result<Vec<TrendEstimate>, TrendError> {
    check_series(series, epsilon)?;
    let first = series[0].0;
    let last = series[series.len() - 1].0;
    let mut prev: Option<Tick> = None;
    for &b in breakpoints {
        if b <= first || b >= last {
            return Err(TrendError::BreakpointOutOfRange(b));
        }
        if prev.is_some_and(|p| b <= p) {
            return Err(TrendError::UnorderedBreakpoints(b));
        }
        prev = Some(b);
    }
    let bounds: Vec<Tick> = std::iter::once(first)
        .chain(breakpoints.iter().copied())
        .chain(std::iter::once(last))
        .collect();
    bounds
        .windows(2)
        .map(|w| {
            let slice: Vec<(Tick, f64)> = series
                .iter()
                .copied()
                .filter(|(t, _)| *t >= w[0] && *t <= w[1])
                .collect();
            let mut estimate = classify_series(&slice, epsilon)?;
            estimate.interval = TimeInterval {
                start: w[0],
                end: w[1],
            };
            Ok(estimate)
        })
        .collect()
}
