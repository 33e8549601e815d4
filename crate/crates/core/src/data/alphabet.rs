//! The 20-letter amino-acid alphabet plus a mask token.

/// One-letter codes in index order.
pub const ALPHABET: &[u8; 20] = b"ACDEFGHIKLMNPQRSTVWY";

pub const NUM_AMINO_ACIDS: usize = 20;

/// Index used for residues outside the standard alphabet. Masked residues
/// take part in the graph but not in the loss.
pub const MASK: u8 = 20;

pub const MASK_LETTER: char = 'X';

const THREE_LETTER: [&str; 20] = [
    "ALA", "CYS", "ASP", "GLU", "PHE", "GLY", "HIS", "ILE", "LYS", "LEU", "MET", "ASN", "PRO",
    "GLN", "ARG", "SER", "THR", "VAL", "TRP", "TYR",
];

pub fn from_letter(letter: char) -> u8 {
    let upper = letter.to_ascii_uppercase() as u32;
    ALPHABET
        .iter()
        .position(|&c| c as u32 == upper)
        .map_or(MASK, |i| i as u8)
}

pub fn to_letter(index: u8) -> char {
    ALPHABET
        .get(index as usize)
        .map_or(MASK_LETTER, |&c| c as char)
}

pub fn from_three_letter(name: &str) -> u8 {
    THREE_LETTER
        .iter()
        .position(|&n| n.eq_ignore_ascii_case(name))
        .map_or(MASK, |i| i as u8)
}

pub fn to_three_letter(index: u8) -> &'static str {
    THREE_LETTER.get(index as usize).copied().unwrap_or("UNK")
}

pub fn encode(sequence: &str) -> Vec<u8> {
    sequence.chars().map(from_letter).collect()
}

pub fn decode(indices: &[u8]) -> String {
    indices.iter().map(|&i| to_letter(i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn letter_and_three_letter_codes_agree() {
        for i in 0..20u8 {
            assert_eq!(from_letter(to_letter(i)), i);
            assert_eq!(from_three_letter(to_three_letter(i)), i);
        }
        assert_eq!(from_letter('B'), MASK);
        assert_eq!(from_three_letter("MSE"), MASK);
        assert_eq!(decode(&encode("ACDXw")), "ACDXW");
    }
}
