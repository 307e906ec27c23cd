//! Line-delimited JSON run log with `pose`, `scan` and `detections` streams.

use std::io::BufRead;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::geometry::{BBox, Detection2D, Pose3};
use crate::occupancy::LaserScan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stream {
    Pose,
    Scan,
    Detections,
}

impl Stream {
    pub fn name(self) -> &'static str {
        match self {
            Stream::Pose => "pose",
            Stream::Scan => "scan",
            Stream::Detections => "detections",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionItem {
    pub detection: Detection2D,
    /// Raw depth over the central sampling region, millimeters; 0 is invalid.
    pub depth_samples_mm: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Pose(Pose3),
    Scan(LaserScan),
    Detections(Vec<DetectionItem>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub stamp: f64,
    pub payload: Payload,
}

impl LogRecord {
    pub fn stream(&self) -> Stream {
        match self.payload {
            Payload::Pose(_) => Stream::Pose,
            Payload::Scan(_) => Stream::Scan,
            Payload::Detections(_) => Stream::Detections,
        }
    }

    /// One JSON line, without the trailing newline.
    pub fn to_json_line(&self) -> String {
        let t = self.stamp;
        match &self.payload {
            Payload::Pose(p) => {
                let tr = p.translation();
                serde_json::to_string(&PoseLine { t, kind: "pose", p: [tr.x, tr.y, tr.z], q: p.quaternion() })
            }
            Payload::Scan(s) => serde_json::to_string(&ScanLine {
                t,
                kind: "scan",
                angle_min: s.angle_min,
                angle_increment: s.angle_increment,
                range_min: s.range_min,
                range_max: s.range_max,
                ranges: s.ranges.iter().map(|&r| r.is_finite().then_some(r)).collect(),
            }),
            Payload::Detections(items) => serde_json::to_string(&DetectionsLine {
                t,
                kind: "detections",
                items: items
                    .iter()
                    .map(|it| {
                        let b = it.detection.bbox;
                        DetectionLine {
                            class: it.detection.class_label.to_string(),
                            score: it.detection.score,
                            bbox: [b.u_min, b.v_min, b.u_max, b.v_max],
                            depth_samples_mm: it.depth_samples_mm.clone(),
                        }
                    })
                    .collect(),
            }),
        }
        .expect("log record serializes")
    }
}

#[derive(Serialize)]
struct PoseLine {
    t: f64,
    #[serde(rename = "type")]
    kind: &'static str,
    p: [f64; 3],
    q: [f64; 4],
}

#[derive(Serialize)]
struct ScanLine {
    t: f64,
    #[serde(rename = "type")]
    kind: &'static str,
    angle_min: f64,
    angle_increment: f64,
    range_min: f64,
    range_max: f64,
    ranges: Vec<Option<f64>>,
}

#[derive(Serialize)]
struct DetectionsLine {
    t: f64,
    #[serde(rename = "type")]
    kind: &'static str,
    items: Vec<DetectionLine>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionLine {
    class: String,
    score: f64,
    bbox: [f64; 4],
    depth_samples_mm: Vec<i64>,
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum RawRecord {
    Pose {
        t: f64,
        p: [f64; 3],
        q: [f64; 4],
    },
    Scan {
        t: f64,
        angle_min: f64,
        angle_increment: f64,
        range_min: f64,
        range_max: f64,
        ranges: Vec<Option<f64>>,
    },
    Detections {
        t: f64,
        items: Vec<DetectionLine>,
    },
}

/// Parses and validates one log line. `line_no` is 1-based and only used in errors.
pub fn parse_line(line: &str, line_no: usize) -> Result<LogRecord, IngestError> {
    let malformed = |reason: String| IngestError::MalformedRecord { line: line_no, reason };
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
    let (stamp, payload) = match raw {
        RawRecord::Pose { t, p, q } => {
            let pose = Pose3::new(p, q).map_err(|e| malformed(e.to_string()))?;
            (t, Payload::Pose(pose))
        }
        RawRecord::Scan { t, angle_min, angle_increment, range_min, range_max, ranges } => {
            if !(angle_min.is_finite() && angle_increment.is_finite() && angle_increment != 0.0) {
                return Err(malformed("scan angles must be finite with a nonzero increment".into()));
            }
            if !(range_min >= 0.0 && range_min < range_max && range_max.is_finite()) {
                return Err(malformed("scan needs 0 <= range_min < range_max".into()));
            }
            let ranges = ranges.into_iter().map(|r| r.unwrap_or(f64::NAN)).collect();
            (t, Payload::Scan(LaserScan { stamp: t, angle_min, angle_increment, range_min, range_max, ranges }))
        }
        RawRecord::Detections { t, items } => {
            let mut out = Vec::with_capacity(items.len());
            for it in items {
                if !(0.0..=1.0).contains(&it.score) {
                    return Err(malformed(format!("score {} outside [0, 1]", it.score)));
                }
                let [u0, v0, u1, v1] = it.bbox;
                let bbox = BBox::new(u0, v0, u1, v1).map_err(|e| malformed(e.to_string()))?;
                out.push(DetectionItem {
                    detection: Detection2D { class_label: Arc::from(it.class.as_str()), score: it.score, bbox },
                    depth_samples_mm: it.depth_samples_mm,
                });
            }
            (t, Payload::Detections(out))
        }
    };
    if !stamp.is_finite() {
        return Err(malformed("stamp is not finite".into()));
    }
    Ok(LogRecord { stamp, payload })
}

/// Streaming parser over a line source. Yields records in file order and
/// rejects stamps that do not strictly increase within a stream. Blank lines
/// are skipped.
pub struct LogParser<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    last: [Option<f64>; 3],
    failed: bool,
}

pub fn parse_log<R: BufRead>(reader: R) -> LogParser<R> {
    LogParser { lines: reader.lines(), line_no: 0, last: [None; 3], failed: false }
}

pub fn parse_log_str(text: &str) -> Result<Vec<LogRecord>, IngestError> {
    parse_log(text.as_bytes()).collect()
}

impl<R: BufRead> Iterator for LogParser<R> {
    type Item = Result<LogRecord, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(IngestError::Io(e.to_string())));
                }
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let result = parse_line(&line, self.line_no).and_then(|rec| {
                let slot = &mut self.last[rec.stream() as usize];
                if slot.is_some_and(|prev| rec.stamp <= prev) {
                    return Err(IngestError::NonMonotonicStream { stream: rec.stream().name(), stamp: rec.stamp });
                }
                *slot = Some(rec.stamp);
                Ok(rec)
            });
            self.failed = result.is_err();
            return Some(result);
        }
    }
}

/// Serializes records as a log, one line each.
pub fn write_log(records: &[LogRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_json_line());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_line() {
        let rec = parse_line(r#"{"t":1.0,"type":"pose","p":[0,0,0],"q":[1,0,0,0]}"#, 1).unwrap();
        assert_eq!(rec.stamp, 1.0);
        assert_eq!(rec.payload, Payload::Pose(Pose3::identity()));
    }

    #[test]
    fn duplicate_pose_stamp_is_rejected() {
        let text = "{\"t\":1.0,\"type\":\"pose\",\"p\":[0,0,0],\"q\":[1,0,0,0]}\n\
                    {\"t\":1.0,\"type\":\"detections\",\"items\":[]}\n\
                    {\"t\":1.0,\"type\":\"pose\",\"p\":[0,0,0],\"q\":[1,0,0,0]}\n";
        let err = parse_log_str(text).unwrap_err();
        assert_eq!(err, IngestError::NonMonotonicStream { stream: "pose", stamp: 1.0 });
    }

    #[test]
    fn empty_detection_frame_is_valid() {
        let rec = parse_line(r#"{"t":2.0,"type":"detections","items":[]}"#, 1).unwrap();
        assert_eq!(rec.payload, Payload::Detections(vec![]));
    }

    #[test]
    fn scan_nulls_become_no_return() {
        let rec = parse_line(
            r#"{"t":0.5,"type":"scan","angle_min":0,"angle_increment":0.1,"range_min":0.1,"range_max":5,"ranges":[1.0,null]}"#,
            3,
        )
        .unwrap();
        let Payload::Scan(scan) = rec.payload else { panic!("expected scan") };
        assert_eq!(scan.ranges[0], 1.0);
        assert!(scan.ranges[1].is_nan());
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let text = "\n{\"t\":0,\"type\":\"pose\",\"p\":[0,0],\"q\":[1,0,0,0]}\n";
        match parse_log_str(text).unwrap_err() {
            IngestError::MalformedRecord { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let bad_score = r#"{"t":0,"type":"detections","items":[{"class":"chair","score":1.5,"bbox":[0,0,1,1],"depth_samples_mm":[]}]}"#;
        assert!(parse_line(bad_score, 1).is_err());
        assert!(parse_line(r#"{"t":0,"type":"imu"}"#, 1).is_err());
        assert!(parse_line(r#"{"t":0,"type":"pose","p":[0,0,0],"q":[0,0,0,0]}"#, 1).is_err());
    }

    #[test]
    fn write_then_parse() {
        let text = concat!(
            r#"{"t":0.1,"type":"detections","items":[{"class":"chair","score":0.8,"bbox":[10.0,20.0,30.0,40.0],"depth_samples_mm":[2000,0]}]}"#,
            "\n"
        );
        let recs = parse_log_str(text).unwrap();
        assert_eq!(write_log(&recs), text);
    }
}
