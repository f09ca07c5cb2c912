//! Time-stamped evidence for observed states and intended inputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

/// Absolute tolerance used whenever two times are compared for equality.
pub const TIME_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvidenceMode {
    /// A value holds until the next one is reported.
    Continuous,
    /// A value applies only at its own time point.
    Instantaneous,
}

impl FromStr for EvidenceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "continuous" => Ok(EvidenceMode::Continuous),
            "instantaneous" => Ok(EvidenceMode::Instantaneous),
            other => Err(format!("unknown evidence mode `{other}` (expected continuous or instantaneous)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum EvidenceError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: time does not increase")]
    NonMonotonicTime { line: u64 },
    #[error("point {index}: non-finite time or value")]
    NonFinite { index: usize },
    #[error("point {index}: time does not increase")]
    Unordered { index: usize },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceStream {
    pub target: String,
    pub mode: EvidenceMode,
    points: Vec<(f64, f64)>,
}

impl EvidenceStream {
    pub fn new(
        target: impl Into<String>,
        mode: EvidenceMode,
        points: Vec<(f64, f64)>,
    ) -> Result<Self, EvidenceError> {
        for (index, &(t, v)) in points.iter().enumerate() {
            if !t.is_finite() || !v.is_finite() {
                return Err(EvidenceError::NonFinite { index });
            }
            if index > 0 && t <= points[index - 1].0 {
                return Err(EvidenceError::Unordered { index });
            }
        }
        Ok(EvidenceStream {
            target: target.into(),
            mode,
            points,
        })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.0)
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first_time(&self) -> Option<f64> {
        self.points.first().map(|p| p.0)
    }

    /// The evidence value in force at `t`, if any.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        // index of the first point strictly after t (within tolerance)
        let after = self.points.partition_point(|&(pt, _)| pt <= t + TIME_TOLERANCE);
        match self.mode {
            EvidenceMode::Continuous => after.checked_sub(1).map(|i| self.points[i].1),
            EvidenceMode::Instantaneous => {
                let i = after.checked_sub(1)?;
                let (pt, v) = self.points[i];
                ((pt - t).abs() <= TIME_TOLERANCE).then_some(v)
            }
        }
    }

    /// Two-column `time,value` text with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,value\n");
        for (t, v) in &self.points {
            let _ = writeln!(out, "{t},{v}");
        }
        out
    }
}

/// Parses `time,value` rows. A first row that is not numeric is taken as a
/// header.
pub fn parse_csv(
    text: &str,
    target: impl Into<String>,
    mode: EvidenceMode,
) -> Result<EvidenceStream, EvidenceError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| EvidenceError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 2 {
            return Err(EvidenceError::Parse {
                line,
                message: format!("expected 2 columns, found {}", record.len()),
            });
        }
        let parsed = (record[0].parse::<f64>(), record[1].parse::<f64>());
        let (t, v) = match parsed {
            (Ok(t), Ok(v)) if t.is_finite() && v.is_finite() => (t, v),
            _ if i == 0 => continue,
            _ => {
                return Err(EvidenceError::Parse {
                    line,
                    message: format!("`{},{}` is not a pair of finite numbers", &record[0], &record[1]),
                })
            }
        };
        if let Some(&(prev, _)) = points.last() {
            if t <= prev {
                return Err(EvidenceError::NonMonotonicTime { line });
            }
        }
        points.push((t, v));
    }
    Ok(EvidenceStream {
        target: target.into(),
        mode,
        points,
    })
}

pub fn load_csv(
    path: impl AsRef<Path>,
    target: impl Into<String>,
    mode: EvidenceMode,
) -> Result<EvidenceStream, EvidenceError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| EvidenceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv(&text, target, mode)
}

/// Sorted, de-duplicated union of the stream times inside `[start, end]`.
pub fn event_times<'a>(
    streams: impl IntoIterator<Item = &'a EvidenceStream>,
    start: f64,
    end: f64,
) -> Vec<f64> {
    let mut times: Vec<f64> = streams
        .into_iter()
        .flat_map(|s| s.times())
        .filter(|&t| t >= start - TIME_TOLERANCE && t <= end + TIME_TOLERANCE)
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup_by(|later, earlier| (*later - *earlier).abs() <= TIME_TOLERANCE);
    times
}

/// Evidence streams keyed by the state or input they inform.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvidenceSet {
    streams: BTreeMap<String, EvidenceStream>,
}

impl EvidenceSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `stream`, replacing any stream with the same target.
    pub fn insert(&mut self, stream: EvidenceStream) -> Option<EvidenceStream> {
        self.streams.insert(stream.target.clone(), stream)
    }

    pub fn with(mut self, stream: EvidenceStream) -> Self {
        self.insert(stream);
        self
    }

    pub fn get(&self, target: &str) -> Option<&EvidenceStream> {
        self.streams.get(target)
    }

    pub fn iter(&self) -> impl Iterator<Item = &EvidenceStream> {
        self.streams.values()
    }

    pub fn is_empty(&self) -> bool {
        self.streams.is_empty()
    }

    pub fn len(&self) -> usize {
        self.streams.len()
    }
}

impl FromIterator<EvidenceStream> for EvidenceSet {
    fn from_iter<I: IntoIterator<Item = EvidenceStream>>(iter: I) -> Self {
        let mut set = EvidenceSet::new();
        for s in iter {
            set.insert(s);
        }
        set
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stream(mode: EvidenceMode, points: &[(f64, f64)]) -> EvidenceStream {
        EvidenceStream::new("x", mode, points.to_vec()).unwrap()
    }

    #[test]
    fn continuous_holds_last_value() {
        let s = stream(EvidenceMode::Continuous, &[(0.0, 5.0), (2.0, 7.0)]);
        assert_eq!(s.value_at(1.5), Some(5.0));
        assert_eq!(s.value_at(2.0), Some(7.0));
        assert_eq!(s.value_at(100.0), Some(7.0));
        assert_eq!(s.value_at(-1.0), None);
        let single = stream(EvidenceMode::Continuous, &[(0.0, 5.0)]);
        assert_eq!(single.value_at(-1.0), None);
    }

    #[test]
    fn instantaneous_only_at_points() {
        let pts: Vec<(f64, f64)> = (1..=6).map(|k| (4.0 * k as f64, k as f64)).collect();
        let s = stream(EvidenceMode::Instantaneous, &pts);
        assert_eq!(s.value_at(6.0), None);
        assert_eq!(s.value_at(8.0), Some(2.0));
        assert_eq!(s.value_at(8.0 + 5e-10), Some(2.0));
        assert_eq!(s.value_at(8.0 - 5e-10), Some(2.0));
        assert_eq!(s.value_at(8.0 + 1e-6), None);
        assert_eq!(s.value_at(0.0), None);
    }

    #[test]
    fn csv_loading() {
        let s = parse_csv("0,5\n2,7", "x", EvidenceMode::Continuous).unwrap();
        assert_eq!(s.points(), &[(0.0, 5.0), (2.0, 7.0)]);

        let s = parse_csv("time,value\n0.5,1.0\n1.00,2\n1.50,3\n2.00,4\n", "S", EvidenceMode::Instantaneous)
            .unwrap();
        assert_eq!(s.times().collect::<Vec<_>>(), vec![0.5, 1.0, 1.5, 2.0]);

        let err = parse_csv("2,7\n0,5", "x", EvidenceMode::Continuous).unwrap_err();
        assert!(matches!(err, EvidenceError::NonMonotonicTime { line: 2 }));

        let err = parse_csv("0,5\n0,6", "x", EvidenceMode::Continuous).unwrap_err();
        assert!(matches!(err, EvidenceError::NonMonotonicTime { line: 2 }));

        let err = parse_csv("0,5\n1,abc\n", "x", EvidenceMode::Continuous).unwrap_err();
        assert!(matches!(err, EvidenceError::Parse { line: 2, .. }));

        let err = parse_csv("0,5,6\n", "x", EvidenceMode::Continuous).unwrap_err();
        assert!(matches!(err, EvidenceError::Parse { line: 1, .. }));
    }

    #[test]
    fn csv_round_trip() {
        let s = stream(EvidenceMode::Instantaneous, &[(0.35, 1.25), (0.4, -3.5e-7)]);
        let back = parse_csv(&s.to_csv(), "x", EvidenceMode::Instantaneous).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn event_time_union() {
        let pts: Vec<(f64, f64)> = (1..=6).map(|k| (4.0 * k as f64, 0.0)).collect();
        let pif = stream(EvidenceMode::Instantaneous, &pts);
        assert_eq!(event_times([&pif], 0.0, 24.0), vec![4.0, 8.0, 12.0, 16.0, 20.0, 24.0]);
        assert!(event_times(std::iter::empty(), 0.0, 1.0).is_empty());

        let a = stream(EvidenceMode::Instantaneous, &[(1.0, 0.0), (5.0, 0.0)]);
        let b = stream(EvidenceMode::Instantaneous, &[(5.0 + 1e-12, 0.0), (7.0, 0.0)]);
        assert_eq!(event_times([&a, &b], 0.0, 10.0), vec![1.0, 5.0, 7.0]);
        assert_eq!(event_times([&a, &b], 2.0, 6.0), vec![5.0]);
    }

    #[test]
    fn unordered_points_rejected() {
        assert!(EvidenceStream::new("x", EvidenceMode::Continuous, vec![(1.0, 0.0), (1.0, 1.0)]).is_err());
        assert!(EvidenceStream::new("x", EvidenceMode::Continuous, vec![(f64::NAN, 0.0)]).is_err());
    }

    proptest! {
        #[test]
        fn continuous_is_piecewise_constant_and_right_continuous(
            gaps in prop::collection::vec(0.01..2.0f64, 1..10),
            probe in 0.0..1.0f64,
        ) {
            let mut t = 0.0;
            let points: Vec<(f64, f64)> = gaps
                .iter()
                .enumerate()
                .map(|(i, g)| {
                    t += g;
                    (t, i as f64)
                })
                .collect();
            let s = stream(EvidenceMode::Continuous, &points);
            for w in points.windows(2) {
                let (t0, v0) = w[0];
                let t1 = w[1].0;
                let inside = t0 + probe * (t1 - t0) * 0.999;
                prop_assert_eq!(s.value_at(inside), Some(v0));
                prop_assert_eq!(s.value_at(t0), Some(v0));
            }
            let times = event_times([&s], f64::NEG_INFINITY, f64::INFINITY);
            prop_assert!(times.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
