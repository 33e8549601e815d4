//! Fixture-corpus expectations shared by the ingestion tests and the
//! acceptance harness.

#![allow(dead_code)]

use std::path::PathBuf;

use vfn::data::{alphabet, parse_pdb_chain, read_pdb, BackboneStructure, DataError};
use vfn::geometry::Point3;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn load(name: &str) -> Result<BackboneStructure, DataError> {
    read_pdb(&fixture(name), None)
}

fn ensure(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn loaded(name: &str) -> Result<BackboneStructure, String> {
    load(name).map_err(|e| format!("{name}: {e}"))
}

fn flags(s: &BackboneStructure) -> Vec<(bool, bool)> {
    s.residues.iter().map(|r| (r.flags.missing_o, r.flags.chain_break)).collect()
}

pub const FIXTURES: &[&str] = &[
    "two_residue.pdb",
    "altloc.pdb",
    "missing_o.pdb",
    "missing_ca.pdb",
    "chain_break.pdb",
    "multi_chain.pdb",
    "multi_model.pdb",
    "hetatm_unknown.pdb",
    "insertion_code.pdb",
    "bad_coord.pdb",
];

/// Checks one fixture against its expected parse.
pub fn check(name: &str) -> Result<(), String> {
    match name {
        "two_residue.pdb" => {
            let s = loaded(name)?;
            ensure(s.sequence_string() == "AG", || format!("sequence {}", s.sequence_string()))?;
            let r = &s.residues[1];
            let expected = [
                Point3::new(2.071, 1.195, 0.302),
                Point3::new(3.512, 1.301, 0.417),
                Point3::new(4.010, 2.730, 0.125),
                Point3::new(3.287, 3.704, -0.081),
            ];
            let got = [r.n, r.ca, r.c, r.o.unwrap_or_default()];
            ensure(got == expected, || format!("residue 2 coordinates {got:?}"))?;
            ensure(s.name == "two_residue" && s.chain == "A", || format!("{} / {}", s.name, s.chain))?;
            ensure(flags(&s) == [(false, false); 2], || format!("flags {:?}", flags(&s)))
        }
        "altloc.pdb" => {
            let s = loaded(name)?;
            let r = &s.residues[1];
            ensure(r.ca == Point3::new(3.8, 0.0, 0.0), || format!("CA {:?} is not the A copy", r.ca))?;
            ensure(r.o == Some(Point3::new(5.953, -1.062, 0.0)), || format!("O {:?}", r.o))?;
            ensure(s.len() == 3 && s.excluded.is_empty(), || format!("{} residues", s.len()))
        }
        "missing_o.pdb" => {
            let s = loaded(name)?;
            ensure(s.len() == 3, || format!("{} residues", s.len()))?;
            ensure(s.residues[1].o.is_none(), || "O present".into())?;
            ensure(flags(&s) == [(false, false), (true, false), (false, false)], || {
                format!("flags {:?}", flags(&s))
            })
        }
        "missing_ca.pdb" => {
            let s = loaded(name)?;
            ensure(s.sequence_string() == "LFW", || format!("sequence {}", s.sequence_string()))?;
            ensure(
                s.excluded.len() == 1 && s.excluded[0].label == "ILE2" && s.excluded[0].reason == "missing CA",
                || format!("excluded {:?}", s.excluded),
            )?;
            // the gap left by the dropped residue is a chain break
            ensure(flags(&s) == [(false, false), (false, true), (false, false)], || {
                format!("flags {:?}", flags(&s))
            })
        }
        "chain_break.pdb" => {
            let s = loaded(name)?;
            ensure(flags(&s) == [(false, false), (false, false), (false, true), (false, false)], || {
                format!("flags {:?}", flags(&s))
            })
        }
        "multi_chain.pdb" => {
            let s = loaded(name)?;
            ensure(s.chain == "A" && s.sequence_string() == "RHP", || {
                format!("chain {} sequence {}", s.chain, s.sequence_string())
            })?;
            let text = std::fs::read_to_string(fixture(name)).map_err(|e| e.to_string())?;
            let b = parse_pdb_chain(&text, Some('B')).map_err(|e| e.to_string())?;
            ensure(b.chain == "B" && b.sequence_string() == "CG", || {
                format!("chain B sequence {}", b.sequence_string())
            })
        }
        "multi_model.pdb" => {
            let s = loaded(name)?;
            ensure(s.len() == 3, || format!("{} residues", s.len()))?;
            ensure(s.residues.iter().all(|r| r.ca.y == 0.0), || "read past the first model".into())
        }
        "hetatm_unknown.pdb" => {
            let s = loaded(name)?;
            ensure(s.len() == 3, || format!("{} residues", s.len()))?;
            ensure(s.sequence()[1] == alphabet::MASK, || "UNK is not masked".into())?;
            ensure(s.targets()[1].is_none(), || "UNK is scored".into())
        }
        "insertion_code.pdb" => {
            let s = loaded(name)?;
            ensure(s.sequence_string() == "GST", || format!("sequence {}", s.sequence_string()))
        }
        "bad_coord.pdb" => match load(name) {
            Err(DataError::Pdb { line: 7, message }) if message.contains("coordinate") => Ok(()),
            other => Err(format!("expected a coordinate error on line 7, got {other:?}")),
        },
        other => Err(format!("no expectation for {other}")),
    }
}
