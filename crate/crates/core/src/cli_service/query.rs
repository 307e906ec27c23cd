//! Line protocol for reading the object layer.
//!
//! One request per line, one JSON line back:
//!
//! ```text
//! LIST                 -> [{"id":1,"class":"chair","x":..,"y":..,"yaw":..,"hits":..,"mean_score":..}, ...]
//! NEAREST chair 1 2    -> {...} or null
//! COUNT person         -> 2
//! ```

use serde_json::{json, Value};

use crate::semantic_layer::{ObjectMapSnapshot, ObjectRecord};

#[derive(Debug, Clone, PartialEq)]
pub enum QueryRequest {
    List,
    Nearest { class: String, x: f64, y: f64 },
    Count { class: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryError {
    UnknownVerb,
    BadArguments(String),
}

impl QueryError {
    pub fn to_json(&self) -> Value {
        match self {
            QueryError::UnknownVerb => json!({ "error": "unknown verb" }),
            QueryError::BadArguments(m) => json!({ "error": format!("bad arguments: {m}") }),
        }
    }
}

fn coord(s: &str) -> Result<f64, QueryError> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| QueryError::BadArguments(format!("{s:?} is not a finite number")))
}

impl QueryRequest {
    pub fn parse(line: &str) -> Result<Self, QueryError> {
        let mut parts = line.split_whitespace();
        let verb = parts.next().ok_or(QueryError::UnknownVerb)?;
        let args: Vec<&str> = parts.collect();
        let arity = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(QueryError::BadArguments(format!("{verb} takes {n} argument(s), got {}", args.len())))
            }
        };
        match verb {
            "LIST" => arity(0).map(|_| QueryRequest::List),
            "NEAREST" => {
                arity(3)?;
                Ok(QueryRequest::Nearest { class: args[0].to_string(), x: coord(args[1])?, y: coord(args[2])? })
            }
            "COUNT" => arity(1).map(|_| QueryRequest::Count { class: args[0].to_string() }),
            _ => Err(QueryError::UnknownVerb),
        }
    }

    /// The JSON reply for this request, on one line.
    pub fn evaluate(&self, snapshot: &ObjectMapSnapshot) -> String {
        let out = match self {
            QueryRequest::List => {
                let records: Vec<ObjectRecord> = snapshot.iter().map(ObjectRecord::from).collect();
                serde_json::to_string(&records)
            }
            QueryRequest::Nearest { class, x, y } => {
                serde_json::to_string(&snapshot.nearest(class, *x, *y).map(ObjectRecord::from))
            }
            QueryRequest::Count { class } => serde_json::to_string(&snapshot.count_class(class)),
        };
        out.expect("reply serializes")
    }
}

/// Answers one request line with one JSON line, without the newline.
pub fn respond(line: &str, snapshot: &ObjectMapSnapshot) -> String {
    match QueryRequest::parse(line) {
        Ok(req) => req.evaluate(snapshot),
        Err(e) => e.to_json().to_string(),
    }
}
