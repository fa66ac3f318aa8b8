//! Corpus manifest: one tab-separated record per scene.
//!
//! ```text
//! # haze-synth manifest v1
//! # id<TAB>clear<TAB>depth<TAB>haze<TAB>A<TAB>split
//! scene_0000<TAB>clear/scene_0000.png<TAB>depth/scene_0000.pfm<TAB>haze/scene_0000.png<TAB>0.9123<TAB>train
//! ```
//!
//! Paths are relative to the directory holding the manifest. `A` is printed
//! with the shortest representation that parses back to the identical `f64`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{io_err, Error, Result};

pub const MANIFEST_HEADER: &str = "# haze-synth manifest v1";
pub const MANIFEST_COLUMNS: &str = "# id\tclear\tdepth\thaze\tA\tsplit";
pub const MANIFEST_FILE: &str = "manifest.tsv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Validation(format!("unknown split `{other}` (expected train or test)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    pub id: String,
    pub clear: PathBuf,
    pub depth: PathBuf,
    pub haze: PathBuf,
    pub atmospheric_light: f64,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    /// Directory that relative record paths resolve against.
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MANIFEST_HEADER}\n{MANIFEST_COLUMNS}\n");
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.id,
                r.clear.display(),
                r.depth.display(),
                r.haze.display(),
                r.atmospheric_light,
                r.split
            ));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(io_err(path))
    }

    pub fn parse(text: &str, root: PathBuf, origin: &Path) -> Result<Self> {
        let bad = |line: usize, detail: String| Error::Format { path: origin.to_path_buf(), detail: format!("line {line}: {detail}") };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == MANIFEST_HEADER => {}
            _ => return Err(bad(1, format!("missing `{MANIFEST_HEADER}` header"))),
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 6 {
                return Err(bad(i + 1, format!("expected 6 tab-separated fields, got {}", cols.len())));
            }
            let atmospheric_light: f64 = cols[4].parse().map_err(|_| bad(i + 1, format!("bad A value `{}`", cols[4])))?;
            records.push(ManifestRecord {
                id: cols[0].to_string(),
                clear: cols[1].into(),
                depth: cols[2].into(),
                haze: cols[3].into(),
                atmospheric_light,
                split: cols[5].parse().map_err(|e: Error| bad(i + 1, e.to_string()))?,
            });
        }
        Ok(Self { root, records })
    }

    /// Load `path`, or `path/manifest.tsv` when `path` is a directory.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).map_err(io_err(&file))?;
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root, &file)
    }
}
