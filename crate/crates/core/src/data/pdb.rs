//! Fixed-column PDB reader and writer for backbone atoms.
//!
//! | Columns | Field            |
//! |---------|------------------|
//! | 1–6     | record name      |
//! | 13–16   | atom name        |
//! | 17      | altLoc           |
//! | 18–20   | residue name     |
//! | 22      | chain identifier |
//! | 23–26   | residue sequence |
//! | 27      | insertion code   |
//! | 31–38   | x (Å)            |
//! | 39–46   | y (Å)            |
//! | 47–54   | z (Å)            |
//!
//! Only `ATOM` records of the first model are read. HETATM records are
//! skipped; residues with insertion codes are kept in file order.

use std::fmt::Write as _;
use std::path::Path;

use crate::geometry::Point3;

use super::alphabet;
use super::structure::{BackboneResidue, BackboneStructure, ExcludedResidue, ResidueFlags};
use super::DataError;

#[derive(Default)]
struct PendingResidue {
    key: (String, char),
    label: String,
    aa: u8,
    n: Option<Point3>,
    ca: Option<Point3>,
    c: Option<Point3>,
    o: Option<Point3>,
}

/// Parses the first chain of the first model.
pub fn parse_pdb(text: &str) -> Result<BackboneStructure, DataError> {
    parse_pdb_chain(text, None)
}

/// Parses one chain (the first one when `chain` is `None`).
pub fn parse_pdb_chain(text: &str, chain: Option<char>) -> Result<BackboneStructure, DataError> {
    let mut selected = chain;
    let mut pending: Vec<PendingResidue> = Vec::new();

    for (index, line) in text.lines().enumerate() {
        let line_no = index + 1;
        if line.starts_with("ENDMDL") {
            break;
        }
        if !line.starts_with("ATOM  ") && line != "ATOM" {
            continue;
        }
        let field = |start: usize, end: usize, what: &str| {
            line.get(start..end).ok_or_else(|| DataError::Pdb {
                line: line_no,
                message: format!("line too short for {what} (columns {}-{end})", start + 1),
            })
        };
        let column = |i: usize| line.as_bytes().get(i).map_or(' ', |&b| b as char);

        let chain_id = column(21);
        match selected {
            None => selected = Some(chain_id),
            Some(c) if c != chain_id => continue,
            _ => {}
        }

        let atom = field(12, 16, "atom name")?.trim();
        let res_name = field(17, 20, "residue name")?.trim();
        let res_seq = field(22, 26, "residue number")?.trim();
        let icode = column(26);
        let mut coord = [0.0; 3];
        for (axis, (start, end)) in [(30, 38), (38, 46), (46, 54)].into_iter().enumerate() {
            let raw = field(start, end, "coordinates")?;
            coord[axis] = raw.trim().parse().map_err(|_| DataError::Pdb {
                line: line_no,
                message: format!("unparseable coordinate {:?} in columns {}-{end}", raw, start + 1),
            })?;
        }
        let position = Point3::new(coord[0], coord[1], coord[2]);

        let key = (res_seq.to_string(), icode);
        if pending.last().is_none_or(|r| r.key != key) {
            pending.push(PendingResidue {
                key: key.clone(),
                label: format!("{res_name}{res_seq}{}", icode.to_string().trim()),
                aa: alphabet::from_three_letter(res_name),
                ..Default::default()
            });
        }
        let residue = pending.last_mut().expect("pushed above");
        let slot = match atom {
            "N" => &mut residue.n,
            "CA" => &mut residue.ca,
            "C" => &mut residue.c,
            "O" => &mut residue.o,
            _ => continue,
        };
        // first alternate location wins
        if slot.is_none() {
            *slot = Some(position);
        }
    }

    let mut structure = BackboneStructure {
        chain: selected.map(|c| c.to_string().trim().to_string()).unwrap_or_default(),
        ..Default::default()
    };
    for r in pending {
        let missing: Vec<&str> = [("N", r.n), ("CA", r.ca), ("C", r.c)]
            .iter()
            .filter(|(_, p)| p.is_none())
            .map(|(name, _)| *name)
            .collect();
        match (r.n, r.ca, r.c) {
            (Some(n), Some(ca), Some(c)) => structure.residues.push(BackboneResidue {
                aa: r.aa,
                n,
                ca,
                c,
                o: r.o,
                flags: ResidueFlags {
                    missing_o: r.o.is_none(),
                    chain_break: false,
                },
            }),
            _ => {
                log::warn!("dropping residue {}: missing {}", r.label, missing.join("/"));
                structure.excluded.push(ExcludedResidue {
                    label: r.label,
                    reason: format!("missing {}", missing.join("/")),
                });
            }
        }
    }
    if structure.residues.is_empty() {
        return Err(DataError::NoCompleteResidues);
    }
    structure.mark_chain_breaks();
    Ok(structure)
}

/// Reads a PDB file, naming the structure after the file stem.
pub fn read_pdb(path: &Path, chain: Option<char>) -> Result<BackboneStructure, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut structure = parse_pdb_chain(&text, chain)?;
    structure.name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(structure)
}

/// Writes retained backbone atoms as `ATOM` records numbered from 1.
pub fn write_pdb(structure: &BackboneStructure) -> String {
    let chain = structure.chain.chars().next().unwrap_or('A');
    let mut out = String::new();
    let mut serial = 1;
    for (i, r) in structure.residues.iter().enumerate() {
        let res_name = alphabet::to_three_letter(r.aa);
        let atoms = [("N", Some(r.n)), ("CA", Some(r.ca)), ("C", Some(r.c)), ("O", r.o)];
        for (name, position) in atoms {
            let Some(p) = position else { continue };
            let element = &name[..1];
            writeln!(
                out,
                "ATOM  {serial:>5} {name:<4} {res_name:>3} {chain}{seq:>4}    {x:>8.3}{y:>8.3}{z:>8.3}{occ:>6.2}{b:>6.2}          {element:>2}",
                name = format!(" {name}"),
                seq = i + 1,
                x = p.x,
                y = p.y,
                z = p.z,
                occ = 1.0,
                b = 0.0,
            )
            .expect("writing to a String");
            serial += 1;
        }
    }
    out.push_str("END\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atom(serial: usize, name: &str, alt: char, res: &str, chain: char, seq: i32, xyz: [f64; 3]) -> String {
        format!(
            "ATOM  {serial:>5} {:<4}{alt}{res:>3} {chain}{seq:>4}    {:>8.3}{:>8.3}{:>8.3}  1.00  0.00           {}",
            format!(" {name}"),
            xyz[0],
            xyz[1],
            xyz[2],
            &name[..1]
        )
    }

    #[test]
    fn columns_are_read_exactly() {
        let text = [
            atom(1, "N", ' ', "GLY", 'A', 1, [-0.525, 1.363, 0.0]),
            atom(2, "CA", ' ', "GLY", 'A', 1, [0.0, 0.0, 0.0]),
            atom(3, "C", ' ', "GLY", 'A', 1, [1.526, 0.0, 0.0]),
            atom(4, "O", ' ', "GLY", 'A', 1, [2.153, -1.062, 0.0]),
        ]
        .join("\n");
        let s = parse_pdb(&text).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.chain, "A");
        assert_eq!(s.sequence_string(), "G");
        assert_eq!(s.residues[0].n, Point3::new(-0.525, 1.363, 0.0));
        assert_eq!(s.residues[0].o, Some(Point3::new(2.153, -1.062, 0.0)));
    }

    #[test]
    fn bad_coordinate_reports_line_number() {
        let mut lines = vec![atom(1, "N", ' ', "GLY", 'A', 1, [0.0, 1.0, 0.0])];
        let mut bad = atom(2, "CA", ' ', "GLY", 'A', 1, [0.0, 0.0, 0.0]);
        bad.replace_range(30..38, "  abc.de");
        lines.push(bad);
        let err = parse_pdb(&lines.join("\n")).unwrap_err();
        assert!(matches!(err, DataError::Pdb { line: 2, .. }), "{err}");
    }

    #[test]
    fn no_complete_residue_is_an_error() {
        let text = atom(1, "CA", ' ', "GLY", 'A', 1, [0.0, 0.0, 0.0]);
        assert!(matches!(parse_pdb(&text), Err(DataError::NoCompleteResidues)));
    }
}
