//! Structure ingestion: PDB backbones, JSONL chain sets, FASTA output.

pub mod alphabet;
mod fasta;
mod jsonl;
mod pdb;
mod structure;
pub mod synthetic;

use std::path::PathBuf;

pub use fasta::{format_fasta, parse_fasta, write_fasta, FASTA_LINE_WIDTH};
pub use jsonl::{parse_jsonl, read_jsonl, to_jsonl, DatasetSplit, SplitManifest};
pub use pdb::{parse_pdb, parse_pdb_chain, read_pdb, write_pdb};
pub use structure::{
    BackboneResidue, BackboneStructure, ExcludedResidue, ResidueFlags, CHAIN_BREAK_DISTANCE,
};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("PDB line {line}: {message}")]
    Pdb { line: usize, message: String },
    #[error("JSONL line {line}: {message}")]
    Jsonl { line: usize, message: String },
    #[error("no residue with complete N/CA/C backbone")]
    NoCompleteResidues,
    #[error("split manifest: {0}")]
    Manifest(String),
    #[error("`{0}` appears in more than one split")]
    DuplicateSplit(String),
    #[error("record name `{0}` appears twice")]
    DuplicateRecord(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
