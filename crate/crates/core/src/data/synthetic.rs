//! Random backbones for tests, verification and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{random_rotation, Point3};

use super::structure::{BackboneResidue, BackboneStructure, ResidueFlags};

/// Idealized backbone positions in the residue frame (Å).
pub const IDEAL_N: [f64; 3] = [-0.525, 1.363, 0.0];
pub const IDEAL_C: [f64; 3] = [1.526, 0.0, 0.0];
pub const IDEAL_O: [f64; 3] = [2.153, -1.062, 0.0];

const CA_STEP: f64 = 3.8;
const MIN_CA_SEPARATION: f64 = 3.6;

fn unit<R: Rng>(rng: &mut R) -> Point3 {
    loop {
        let v = Point3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if (1e-3..=1.0).contains(&n) {
            return v / n;
        }
    }
}

/// A self-avoiding CA walk with 3.8 Å steps, each residue given a random
/// orientation and idealized N/C/O positions, and a random sequence.
pub fn random_backbone(len: usize, seed: u64) -> BackboneStructure {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cas: Vec<Point3> = Vec::with_capacity(len);
    let mut direction = unit(&mut rng);
    while cas.len() < len {
        let Some(&last) = cas.last() else {
            cas.push(Point3::zeros());
            continue;
        };
        let mut placed = false;
        for _ in 0..200 {
            // bend by 60-100 degrees away from the previous direction
            let candidate = unit(&mut rng);
            let cos = candidate.dot(&direction);
            if !(-0.2..=0.5).contains(&cos) {
                continue;
            }
            let next = last + candidate * CA_STEP;
            if cas.iter().all(|p| (p - next).norm() >= MIN_CA_SEPARATION) {
                cas.push(next);
                direction = candidate;
                placed = true;
                break;
            }
        }
        if !placed {
            // boxed in: restart the walk in a fresh direction
            cas.clear();
            direction = unit(&mut rng);
        }
    }
    let ideal = |c: [f64; 3]| Point3::new(c[0], c[1], c[2]);
    let residues = cas
        .into_iter()
        .map(|ca| {
            let r = random_rotation(&mut rng);
            BackboneResidue {
                aa: rng.gen_range(0..20),
                n: ca + r * ideal(IDEAL_N),
                ca,
                c: ca + r * ideal(IDEAL_C),
                o: Some(ca + r * ideal(IDEAL_O)),
                flags: ResidueFlags::default(),
            }
        })
        .collect();
    BackboneStructure {
        name: format!("synthetic_{len}_{seed}"),
        chain: "A".into(),
        residues,
        excluded: Vec::new(),
    }
}

/// `count` random backbones with lengths drawn from `lengths`.
pub fn random_dataset(count: usize, lengths: std::ops::RangeInclusive<usize>, seed: u64) -> Vec<BackboneStructure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let len = rng.gen_range(lengths.clone());
            let mut s = random_backbone(len, rng.gen());
            s.name = format!("synthetic_{i}");
            s
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn walk_respects_spacing() {
        let s = random_backbone(60, 4);
        assert_eq!(s.len(), 60);
        for w in s.residues.windows(2) {
            assert!(((w[1].ca - w[0].ca).norm() - CA_STEP).abs() < 1e-9);
        }
        for (i, a) in s.residues.iter().enumerate() {
            for b in &s.residues[i + 1..] {
                assert!((a.ca - b.ca).norm() >= MIN_CA_SEPARATION - 1e-9);
            }
        }
        assert_eq!(random_backbone(60, 4), s);
    }
}
