//! Line-oriented dataset manifest.
//!
//! ```text
//! # comments and blank lines are ignored
//! occupations: actor singer doctor
//! path=young/0000.png role=young
//! path=actor/old/0000.png role=occupational occupation=actor age=old
//! ```
//!
//! The `occupations:` line must precede every entry; its order defines the
//! 1-based occupation indices. Entry fields are `key=value` pairs separated
//! by whitespace. Relative paths resolve against the manifest's directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::Occupation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Young,
    Occupational,
}

/// Age bracket of an occupational sample: middle (30-50) or old (50-80).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgeGroup {
    Middle,
    #[default]
    Old,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Young => "young",
            Role::Occupational => "occupational",
        })
    }
}

impl fmt::Display for AgeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgeGroup::Middle => "middle",
            AgeGroup::Old => "old",
        })
    }
}

impl FromStr for AgeGroup {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "middle" => Ok(AgeGroup::Middle),
            "old" => Ok(AgeGroup::Old),
            other => Err(format!("unknown age group {other:?} (expected middle or old)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// As written in the manifest.
    pub path: PathBuf,
    pub role: Role,
    pub occupation: Option<String>,
    pub age: Option<AgeGroup>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub occupations: Vec<String>,
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative entry paths resolve against.
    pub base_dir: PathBuf,
}

const TABLE_KEY: &str = "occupations:";
const YOUNG_DIR: &str = "young";

impl Manifest {
    pub fn occupation_count(&self) -> usize {
        self.occupations.len()
    }

    pub fn occupation_index(&self, name: &str) -> Option<Occupation> {
        let i = self.occupations.iter().position(|o| o == name)?;
        Occupation::new(i + 1, self.occupations.len()).ok()
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    /// Parses manifest text; `source` is only used in error messages.
    pub fn parse(text: &str, source: &Path, base_dir: &Path) -> Result<Manifest> {
        let fail = |row: usize, message: String| Error::Manifest {
            path: source.to_path_buf(),
            row,
            message,
        };
        let mut occupations: Option<Vec<String>> = None;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let row = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix(TABLE_KEY) {
                if occupations.is_some() {
                    return Err(fail(row, "occupation table given twice".into()));
                }
                let names: Vec<String> = rest.split_whitespace().map(str::to_owned).collect();
                if names.is_empty() {
                    return Err(fail(row, "occupation table is empty".into()));
                }
                for (j, name) in names.iter().enumerate() {
                    if names[..j].contains(name) {
                        return Err(fail(row, format!("occupation {name:?} listed twice")));
                    }
                }
                occupations = Some(names);
                continue;
            }
            let Some(table) = occupations.as_ref() else {
                return Err(fail(row, format!("entry before the `{TABLE_KEY}` line")));
            };
            entries.push(parse_entry(line, table).map_err(|m| fail(row, m))?);
        }
        let occupations = occupations.ok_or_else(|| fail(0, format!("missing `{TABLE_KEY}` line")))?;
        Ok(Manifest {
            occupations,
            entries,
            base_dir: base_dir.to_path_buf(),
        })
    }

    /// Renders the manifest in its line format; `parse` inverts it.
    pub fn to_text(&self) -> String {
        let mut out = format!("{TABLE_KEY} {}\n", self.occupations.join(" "));
        for e in &self.entries {
            out.push_str(&format!("path={} role={}", e.path.display(), e.role));
            if let Some(o) = &e.occupation {
                out.push_str(&format!(" occupation={o}"));
            }
            if let Some(a) = e.age {
                out.push_str(&format!(" age={a}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Builds a manifest from `<root>/<occupation>/<age-group>/*.png` plus
    /// young faces in `<root>/young/*.png`. Occupations are ordered by
    /// directory name; files by file name.
    pub fn discover(root: &Path) -> Result<Manifest> {
        let mut occupations = Vec::new();
        for dir in sorted_children(root)? {
            if !dir.is_dir() {
                continue;
            }
            let name = file_name(&dir);
            if name != YOUNG_DIR {
                occupations.push(name);
            }
        }
        let mut entries: Vec<ManifestEntry> = pngs_in(&root.join(YOUNG_DIR))?
            .into_iter()
            .map(|path| ManifestEntry {
                path: relative(root, &path),
                role: Role::Young,
                occupation: None,
                age: None,
            })
            .collect();
        for occupation in &occupations {
            for age in [AgeGroup::Middle, AgeGroup::Old] {
                let dir = root.join(occupation).join(age.to_string());
                for path in pngs_in(&dir)? {
                    entries.push(ManifestEntry {
                        path: relative(root, &path),
                        role: Role::Occupational,
                        occupation: Some(occupation.clone()),
                        age: Some(age),
                    });
                }
            }
        }
        if occupations.is_empty() {
            return Err(Error::Domain(format!("no occupation directories under {}", root.display())));
        }
        Ok(Manifest {
            occupations,
            entries,
            base_dir: root.to_path_buf(),
        })
    }
}

fn parse_entry(line: &str, table: &[String]) -> std::result::Result<ManifestEntry, String> {
    let (mut path, mut role, mut occupation, mut age) = (None, None, None, None);
    for field in line.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| format!("field {field:?} is not key=value"))?;
        if value.is_empty() {
            return Err(format!("field {key:?} has an empty value"));
        }
        let slot_taken = match key {
            "path" => path.replace(PathBuf::from(value)).is_some(),
            "role" => {
                let r = match value {
                    "young" => Role::Young,
                    "occupational" => Role::Occupational,
                    other => return Err(format!("unknown role {other:?} (expected young or occupational)")),
                };
                role.replace(r).is_some()
            }
            "occupation" => {
                if !table.iter().any(|o| o == value) {
                    return Err(format!("unknown occupation {value:?}; table lists {}", table.join(", ")));
                }
                occupation.replace(value.to_owned()).is_some()
            }
            "age" => age.replace(value.parse::<AgeGroup>()?).is_some(),
            other => return Err(format!("unknown field {other:?}")),
        };
        if slot_taken {
            return Err(format!("field {key:?} given twice"));
        }
    }
    let path = path.ok_or("missing field \"path\"")?;
    let role = role.ok_or("missing field \"role\"")?;
    match role {
        Role::Young if occupation.is_some() => return Err("young entries carry no occupation".into()),
        Role::Occupational if occupation.is_none() => return Err("occupational entry lacks \"occupation\"".into()),
        Role::Occupational if age.is_none() => return Err("occupational entry lacks \"age\"".into()),
        _ => {}
    }
    Ok(ManifestEntry {
        path,
        role,
        occupation,
        age,
    })
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Manifest::parse(&text, path, base)
}

fn sorted_children(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn pngs_in(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    Ok(sorted_children(dir)?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect())
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn relative(root: &Path, p: &Path) -> PathBuf {
    p.strip_prefix(root).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf())
}
