//! Line-delimited JSON chain sets and split manifests.
//!
//! Each line holds one chain:
//!
//! ```json
//! {"name": "1abc.A", "seq": "MKV", "coords": {"N": [[x, y, z], ...], "CA": [...], "C": [...], "O": [...]}}
//! ```
//!
//! `null` entries mark missing atoms. Extra keys are ignored.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::Point3;

use super::alphabet;
use super::structure::{BackboneResidue, BackboneStructure, ExcludedResidue, ResidueFlags};
use super::DataError;

type Coord = Option<[f64; 3]>;

#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
struct CoordsRecord {
    N: Vec<Coord>,
    CA: Vec<Coord>,
    C: Vec<Coord>,
    O: Vec<Coord>,
}

#[derive(Serialize, Deserialize)]
struct ChainRecord {
    name: String,
    seq: String,
    coords: CoordsRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    chain: Option<String>,
}

fn point(c: [f64; 3]) -> Point3 {
    Point3::new(c[0], c[1], c[2])
}

fn raw(p: &Point3) -> [f64; 3] {
    [p.x, p.y, p.z]
}

fn structure_from_record(record: ChainRecord, line: usize) -> Result<BackboneStructure, DataError> {
    let letters: Vec<char> = record.seq.chars().collect();
    let n = letters.len();
    let c = &record.coords;
    for (atom, list) in [("N", &c.N), ("CA", &c.CA), ("C", &c.C), ("O", &c.O)] {
        if list.len() != n {
            return Err(DataError::Jsonl {
                line,
                message: format!(
                    "{atom} has {} entries for a {n}-residue sequence in {}",
                    list.len(),
                    record.name
                ),
            });
        }
    }
    let mut structure = BackboneStructure {
        name: record.name.clone(),
        chain: record.chain.clone().unwrap_or_default(),
        ..Default::default()
    };
    for (i, letter) in letters.iter().enumerate() {
        match (c.N[i], c.CA[i], c.C[i]) {
            (Some(nn), Some(ca), Some(cc)) => structure.residues.push(BackboneResidue {
                aa: alphabet::from_letter(*letter),
                n: point(nn),
                ca: point(ca),
                c: point(cc),
                o: c.O[i].map(point),
                flags: ResidueFlags {
                    missing_o: c.O[i].is_none(),
                    chain_break: false,
                },
            }),
            _ => {
                let missing: Vec<&str> = [("N", c.N[i]), ("CA", c.CA[i]), ("C", c.C[i])]
                    .iter()
                    .filter(|(_, p)| p.is_none())
                    .map(|(name, _)| *name)
                    .collect();
                structure.excluded.push(ExcludedResidue {
                    label: format!("{letter}{}", i + 1),
                    reason: format!("missing {}", missing.join("/")),
                });
            }
        }
    }
    structure.mark_chain_breaks();
    Ok(structure)
}

/// Parses chain-set text, one structure per non-blank line.
pub fn parse_jsonl(text: &str) -> Result<Vec<BackboneStructure>, DataError> {
    let mut out = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ChainRecord = serde_json::from_str(line).map_err(|e| DataError::Jsonl {
            line: index + 1,
            message: e.to_string(),
        })?;
        out.push(structure_from_record(record, index + 1)?);
    }
    Ok(out)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<BackboneStructure>, DataError> {
    parse_jsonl(&read(path)?)
}

/// Serializes retained residues back into chain-set lines.
pub fn to_jsonl(structures: &[BackboneStructure]) -> String {
    let mut out = String::new();
    for s in structures {
        let record = ChainRecord {
            name: s.name.clone(),
            seq: s.sequence_string(),
            coords: CoordsRecord {
                N: s.residues.iter().map(|r| Some(raw(&r.n))).collect(),
                CA: s.residues.iter().map(|r| Some(raw(&r.ca))).collect(),
                C: s.residues.iter().map(|r| Some(raw(&r.c))).collect(),
                O: s.residues.iter().map(|r| r.o.as_ref().map(raw)).collect(),
            },
            chain: (!s.chain.is_empty()).then(|| s.chain.clone()),
        };
        out.push_str(&serde_json::to_string(&record).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Which split each record name belongs to.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    #[serde(default)]
    pub train: Vec<String>,
    #[serde(default, alias = "valid")]
    pub validation: Vec<String>,
    #[serde(default)]
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn read(path: &Path) -> Result<Self, DataError> {
        serde_json::from_str(&read(path)?).map_err(|e| DataError::Manifest(e.to_string()))
    }
}

/// Structures partitioned into train, validation and test sets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<BackboneStructure>,
    pub validation: Vec<BackboneStructure>,
    pub test: Vec<BackboneStructure>,
}

impl DatasetSplit {
    /// Assigns records by manifest; records the manifest does not mention are
    /// left out. Without a manifest every record goes to `train`.
    pub fn assign(
        records: Vec<BackboneStructure>,
        manifest: Option<&SplitManifest>,
    ) -> Result<Self, DataError> {
        let Some(manifest) = manifest else {
            return Ok(Self {
                train: records,
                ..Default::default()
            });
        };
        let mut label: BTreeMap<&str, usize> = BTreeMap::new();
        for (split, names) in [&manifest.train, &manifest.validation, &manifest.test]
            .into_iter()
            .enumerate()
        {
            for name in names {
                if let Some(previous) = label.insert(name, split) {
                    if previous != split {
                        return Err(DataError::DuplicateSplit(name.clone()));
                    }
                }
            }
        }
        let mut seen = HashSet::new();
        let mut out = Self::default();
        for record in records {
            if !seen.insert(record.name.clone()) {
                return Err(DataError::DuplicateRecord(record.name));
            }
            match label.get(record.name.as_str()) {
                Some(0) => out.train.push(record),
                Some(1) => out.validation.push(record),
                Some(2) => out.test.push(record),
                _ => {}
            }
        }
        Ok(out)
    }

    pub fn read(jsonl: &Path, manifest: Option<&Path>) -> Result<Self, DataError> {
        let records = read_jsonl(jsonl)?;
        let manifest = manifest.map(SplitManifest::read).transpose()?;
        Self::assign(records, manifest.as_ref())
    }
}

fn read(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE: &str = r#"{"name": "t1", "seq": "ACD", "coords": {"N": [[0,1,0],[4,1,0],[8,1,0]], "CA": [[0,0,0],[3.8,0,0],[7.6,0,0]], "C": [[1,0,0],[4.8,0,0],[8.6,0,0]], "O": [[1,-1,0],[4.8,-1,0],null]}, "CATH": ["1.10"]}"#;

    #[test]
    fn reads_a_three_residue_chain() {
        let s = parse_jsonl(THREE).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].len(), 3);
        assert_eq!(s[0].sequence_string(), "ACD");
        assert!(s[0].residues[2].flags.missing_o);
        assert!(!s[0].residues[1].flags.chain_break);
    }

    #[test]
    fn null_ca_drops_the_residue() {
        let line = THREE.replace("[3.8,0,0]", "null");
        let s = &parse_jsonl(&line).unwrap()[0];
        assert_eq!(s.len(), 2);
        assert_eq!(s.excluded.len(), 1);
        assert_eq!(s.excluded[0].reason, "missing CA");
        assert!(s.residues[1].flags.chain_break);
    }

    #[test]
    fn unknown_letters_become_mask() {
        let line = THREE.replace("\"ACD\"", "\"AZD\"");
        let s = &parse_jsonl(&line).unwrap()[0];
        assert_eq!(s.sequence()[1], alphabet::MASK);
        assert_eq!(s.targets()[1], None);
    }

    #[test]
    fn malformed_line_reports_number() {
        let text = format!("{THREE}\n\n{{\"name\": 3}}\n");
        let err = parse_jsonl(&text).unwrap_err();
        assert!(matches!(err, DataError::Jsonl { line: 3, .. }), "{err}");
    }

    #[test]
    fn manifest_rejects_names_in_two_splits() {
        let records = parse_jsonl(THREE).unwrap();
        let manifest = SplitManifest {
            train: vec!["t1".into()],
            test: vec!["t1".into()],
            ..Default::default()
        };
        assert!(matches!(
            DatasetSplit::assign(records.clone(), Some(&manifest)),
            Err(DataError::DuplicateSplit(_))
        ));
        let manifest = SplitManifest {
            test: vec!["t1".into()],
            ..Default::default()
        };
        let split = DatasetSplit::assign(records, Some(&manifest)).unwrap();
        assert_eq!((split.train.len(), split.test.len()), (0, 1));
    }
}
