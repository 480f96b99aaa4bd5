use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::spline::{Curve3, Segment3};
use super::{SampledMargins, TrackError, TrackSpline};

pub const TRACK_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TrackFile {
    format: String,
    version: u32,
    closed: bool,
    length: f64,
    knots: Vec<f64>,
    centerline: Vec<Segment3>,
    left: Vec<Segment3>,
    right: Vec<Segment3>,
}

impl TrackSpline {
    pub fn to_json(&self) -> String {
        let file = TrackFile {
            format: "drivecast-track".into(),
            version: TRACK_FORMAT_VERSION,
            closed: self.closed,
            length: self.length,
            knots: self.centerline.knots.clone(),
            centerline: self.centerline.segments.clone(),
            left: self.left.segments.clone(),
            right: self.right.segments.clone(),
        };
        serde_json::to_string_pretty(&file).expect("track serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TrackError> {
        let file: TrackFile =
            serde_json::from_str(text).map_err(|e| TrackError::Format(e.to_string()))?;
        if file.version != TRACK_FORMAT_VERSION {
            return Err(TrackError::Format(format!(
                "unsupported track version {}",
                file.version
            )));
        }
        let nseg = file.knots.len().saturating_sub(1);
        if nseg == 0
            || file.centerline.len() != nseg
            || file.left.len() != nseg
            || file.right.len() != nseg
        {
            return Err(TrackError::Format(
                "segment count does not match knots".into(),
            ));
        }
        if file.knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(TrackError::Format(
                "knots must be strictly ascending".into(),
            ));
        }
        let mk = |segs: Vec<Segment3>| Curve3::from_parts(file.knots.clone(), segs, file.closed);
        let track = TrackSpline::from_curves(mk(file.centerline), mk(file.left), mk(file.right))?;
        if track.length != file.length {
            return Err(TrackError::Format(
                "stored length disagrees with knots".into(),
            ));
        }
        Ok(track)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrackError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrackError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Parses a `side,x,y,z` margin CSV (side ∈ {L, R}), rows in travel order.
pub fn read_margins_csv(text: &str) -> Result<SampledMargins, TrackError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| TrackError::Format(e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != ["side", "x", "y", "z"] {
        return Err(TrackError::Format(format!(
            "expected header `side,x,y,z`, found {:?}",
            header
        )));
    }
    let mut left = Vec::new();
    let mut right = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| TrackError::Format(e.to_string()))?;
        let line = row + 2;
        let mut xyz = [0.0; 3];
        for k in 0..3 {
            xyz[k] = rec[k + 1]
                .parse()
                .map_err(|e| TrackError::Format(format!("line {line}: {e}")))?;
        }
        match &rec[0] {
            "L" => left.push(xyz),
            "R" => right.push(xyz),
            other => {
                return Err(TrackError::Format(format!(
                    "line {line}: unknown side {other:?}"
                )))
            }
        }
    }
    Ok(SampledMargins::new(left, right))
}

pub fn write_margins_csv(margins: &SampledMargins) -> String {
    let mut out = String::from("side,x,y,z\n");
    for (side, pts) in [("L", &margins.left), ("R", &margins.right)] {
        for p in pts {
            let _ = writeln!(out, "{side},{},{},{}", p[0], p[1], p[2]);
        }
    }
    out
}
