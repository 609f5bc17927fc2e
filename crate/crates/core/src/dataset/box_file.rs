use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archive::write_atomic;
use crate::error::{Error, Result};
use crate::geometry::{squarify_box, BoundingBox};

/// One detector output; the box need not be square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub id: String,
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

/// Reads a JSON-lines box file into squared boxes keyed by sample id.
/// Blank lines are ignored; a repeated id is an error.
pub fn read_box_file(path: &Path) -> Result<HashMap<String, BoundingBox>> {
    let f = File::open(path).map_err(|e| Error::load(path, e))?;
    let mut out = HashMap::new();
    for (lineno, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ctx = || format!("{}:{}", path.display(), lineno + 1);
        let rec: BoxRecord = serde_json::from_str(&line).map_err(|e| Error::parse(ctx(), e.to_string()))?;
        let b = squarify_box(rec.left, rec.top, rec.width, rec.height).map_err(|e| Error::parse(ctx(), e.to_string()))?;
        if out.insert(rec.id.clone(), b).is_some() {
            return Err(Error::parse(ctx(), format!("duplicate id {}", rec.id)));
        }
    }
    Ok(out)
}

pub fn write_box_file(path: &Path, records: &[BoxRecord]) -> Result<()> {
    write_atomic(path, |w| {
        for r in records {
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_and_squares_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("boxes.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"left\":10,\"top\":20,\"width\":40,\"height\":80}\n\n{\"id\":\"b\",\"left\":0,\"top\":0,\"width\":5,\"height\":5}\n",
        )
        .unwrap();
        let boxes = read_box_file(&path).unwrap();
        assert_eq!(boxes["a"], BoundingBox::new(-10.0, 20.0, 80.0).unwrap());
        assert_eq!(boxes["b"], BoundingBox::new(0.0, 0.0, 5.0).unwrap());
    }

    #[test]
    fn rejects_bad_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("boxes.jsonl");
        std::fs::write(&path, "{\"id\":\"a\",\"left\":1}\n").unwrap();
        assert!(matches!(read_box_file(&path), Err(Error::Parse { .. })));
        std::fs::write(&path, "{\"id\":\"a\",\"left\":1,\"top\":1,\"width\":0,\"height\":3}\n").unwrap();
        assert!(read_box_file(&path).is_err());
        let rec = "{\"id\":\"a\",\"left\":1,\"top\":1,\"width\":2,\"height\":3}\n";
        std::fs::write(&path, format!("{rec}{rec}")).unwrap();
        assert!(read_box_file(&path).is_err());
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.jsonl");
        let recs = vec![BoxRecord {
            id: "x/y".into(),
            left: 1.5,
            top: 2.0,
            width: 3.0,
            height: 3.0,
        }];
        write_box_file(&path, &recs).unwrap();
        assert_eq!(read_box_file(&path).unwrap()["x/y"], BoundingBox::new(1.5, 2.0, 3.0).unwrap());
    }
}
