use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

/// One step into a structured document.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PathSegment {
    Key(String),
    Index(usize),
}

/// Address of a node inside a task's data tree.
///
/// Serialized as an RFC 6901 JSON pointer (`/trials/0`). Whether a numeric
/// segment is an index or a key is resolved against the document on lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DataPath(Vec<PathSegment>);

impl DataPath {
    pub fn root() -> Self {
        DataPath(Vec::new())
    }

    pub fn segments(&self) -> &[PathSegment] {
        &self.0
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn key(&self, key: &str) -> DataPath {
        let mut next = self.0.clone();
        next.push(PathSegment::Key(key.to_string()));
        DataPath(next)
    }

    pub fn index(&self, index: usize) -> DataPath {
        let mut next = self.0.clone();
        next.push(PathSegment::Index(index));
        DataPath(next)
    }

    pub fn to_pointer(&self) -> String {
        let mut out = String::new();
        for seg in &self.0 {
            out.push('/');
            match seg {
                PathSegment::Key(k) => out.push_str(&k.replace('~', "~0").replace('/', "~1")),
                PathSegment::Index(i) => out.push_str(&i.to_string()),
            }
        }
        out
    }

    /// Parses a JSON pointer. Purely numeric tokens become indices.
    pub fn from_pointer(pointer: &str) -> Option<DataPath> {
        if pointer.is_empty() {
            return Some(DataPath::root());
        }
        let rest = pointer.strip_prefix('/')?;
        let segments = rest
            .split('/')
            .map(|tok| {
                let tok = tok.replace("~1", "/").replace("~0", "~");
                match tok.parse::<usize>() {
                    Ok(i) if !tok.starts_with('+') => PathSegment::Index(i),
                    _ => PathSegment::Key(tok),
                }
            })
            .collect();
        Some(DataPath(segments))
    }

    pub fn get<'a>(&self, doc: &'a Value) -> Option<&'a Value> {
        doc.pointer(&self.to_pointer())
    }

    pub fn get_mut<'a>(&self, doc: &'a mut Value) -> Option<&'a mut Value> {
        doc.pointer_mut(&self.to_pointer())
    }
}

impl fmt::Display for DataPath {
    /// Human form: `trials[0]`, `sample.mass`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("$");
        }
        for (i, seg) in self.0.iter().enumerate() {
            match seg {
                PathSegment::Key(k) if i == 0 => write!(f, "{k}")?,
                PathSegment::Key(k) => write!(f, ".{k}")?,
                PathSegment::Index(idx) => write!(f, "[{idx}]")?,
            }
        }
        Ok(())
    }
}

impl Serialize for DataPath {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_pointer())
    }
}

impl<'de> Deserialize<'de> for DataPath {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        DataPath::from_pointer(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid data path `{s}`")))
    }
}

/// Byte range of a numeral embedded in a string leaf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}
