use crate::geometry::{Point3, RigidTransform};

use super::alphabet::{self, MASK};

/// Consecutive CA atoms further apart than this (Å) mark a chain break.
pub const CHAIN_BREAK_DISTANCE: f64 = 4.2;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ResidueFlags {
    /// The carbonyl oxygen was absent from the input and is imputed when
    /// virtual atoms are initialized.
    pub missing_o: bool,
    /// The CA is more than [`CHAIN_BREAK_DISTANCE`] from the previous one.
    pub chain_break: bool,
}

/// One retained residue with complete N/CA/C.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneResidue {
    /// Alphabet index, or [`MASK`] for nonstandard residues.
    pub aa: u8,
    pub n: Point3,
    pub ca: Point3,
    pub c: Point3,
    pub o: Option<Point3>,
    pub flags: ResidueFlags,
}

/// A residue dropped during ingestion, and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExcludedResidue {
    pub label: String,
    pub reason: String,
}

/// Backbone coordinates and sequence for one chain.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BackboneStructure {
    pub name: String,
    pub chain: String,
    pub residues: Vec<BackboneResidue>,
    pub excluded: Vec<ExcludedResidue>,
}

impl BackboneStructure {
    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }

    pub fn sequence(&self) -> Vec<u8> {
        self.residues.iter().map(|r| r.aa).collect()
    }

    pub fn sequence_string(&self) -> String {
        alphabet::decode(&self.sequence())
    }

    /// Loss targets: `None` for masked residues.
    pub fn targets(&self) -> Vec<Option<usize>> {
        self.residues
            .iter()
            .map(|r| (r.aa != MASK).then_some(r.aa as usize))
            .collect()
    }

    /// Recomputes chain-break flags from CA spacing.
    pub fn mark_chain_breaks(&mut self) {
        let mut previous: Option<Point3> = None;
        for residue in &mut self.residues {
            residue.flags.chain_break =
                previous.is_some_and(|p| (residue.ca - p).norm() > CHAIN_BREAK_DISTANCE);
            previous = Some(residue.ca);
        }
    }

    /// The same structure with every atom moved by `t`.
    pub fn transformed(&self, t: &RigidTransform) -> Self {
        let mut out = self.clone();
        for r in &mut out.residues {
            r.n = t.apply(&r.n);
            r.ca = t.apply(&r.ca);
            r.c = t.apply(&r.c);
            r.o = r.o.map(|o| t.apply(&o));
        }
        out
    }
}
