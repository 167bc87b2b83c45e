//! Plain-text box lists: one object per line, `cx cy w h theta class_id`,
//! with an optional trailing score for predictions. `#` starts a comment.

use std::fmt::Write as _;
use std::path::Path;

use super::obb::OrientedBox;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn parse_annotations<T: Scalar>(text: &str) -> Result<Vec<OrientedBox<T>>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Format(format!("line {}: {msg}", i + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 && fields.len() != 7 {
            return Err(bad(format!("expected 6 or 7 fields, found {}", fields.len())));
        }
        let num = |s: &str| -> Result<T> {
            s.parse::<f64>()
                .map(T::lit)
                .map_err(|_| bad(format!("not a number: {s:?}")))
        };
        let class_id = fields[5]
            .parse::<usize>()
            .map_err(|_| bad(format!("bad class id: {:?}", fields[5])))?;
        let score = match fields.get(6) {
            Some(s) => num(s)?,
            None => T::one(),
        };
        let b = OrientedBox::new(
            num(fields[0])?,
            num(fields[1])?,
            num(fields[2])?,
            num(fields[3])?,
            num(fields[4])?,
            class_id,
            score,
        )
        .map_err(|e| bad(e.to_string()))?;
        out.push(b);
    }
    Ok(out)
}

/// Serializes boxes; scores are written only when `with_scores` is set.
pub fn format_annotations<T: Scalar>(boxes: &[OrientedBox<T>], with_scores: bool) -> String {
    let mut s = String::from(if with_scores {
        "# cx cy w h theta class_id score\n"
    } else {
        "# cx cy w h theta class_id\n"
    });
    for b in boxes {
        let _ = write!(s, "{} {} {} {} {} {}", b.cx, b.cy, b.w, b.h, b.theta, b.class_id);
        if with_scores {
            let _ = write!(s, " {}", b.score);
        }
        s.push('\n');
    }
    s
}

pub fn read_annotations<T: Scalar>(path: &Path) -> Result<Vec<OrientedBox<T>>> {
    parse_annotations(&std::fs::read_to_string(path)?)
}

pub fn write_annotations<T: Scalar>(path: &Path, boxes: &[OrientedBox<T>], with_scores: bool) -> Result<()> {
    std::fs::write(path, format_annotations(boxes, with_scores))?;
    Ok(())
}
