use crate::data::synthetic::IDEAL_O;
use crate::data::BackboneStructure;
use crate::geometry::{frame_from_three_points, invert, Point3, RigidTransform};
use crate::layer::{EdgeTopology, RbfBank};
use crate::numerics::Tensor;

use super::{ModelConfig, ModelError};

/// The fixed part of a residue graph: frames, neighbor lists and the
/// backbone atoms in local coordinates. Node, edge and atom features are
/// produced per forward pass.
#[derive(Debug, Clone)]
pub struct ResidueGraph {
    pub name: String,
    pub frames: Vec<RigidTransform>,
    /// Each list starts with the node itself, followed by its nearest
    /// residues by CA distance.
    pub neighbors: Vec<Vec<usize>>,
    pub topology: EdgeTopology,
    /// `[n, 4, 3]`: N, CA, C, O in each residue's own frame.
    pub backbone: Tensor,
    /// `[E, n_rbf]` RBF encoding of CA–CA distance per edge.
    pub edge_distances: Tensor,
    /// Residues whose O was imputed.
    pub imputed_o: Vec<usize>,
    pub targets: Vec<Option<usize>>,
}

impl ResidueGraph {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Self followed by the `k` nearest other residues (fewer when the chain is
/// shorter), ordered by distance with ties going to the lower index.
pub fn nearest_neighbors(points: &[Point3], k: usize) -> Vec<Vec<usize>> {
    let n = points.len();
    (0..n)
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| ((points[i] - points[j]).norm(), j))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            std::iter::once(i)
                .chain(others.into_iter().take(k).map(|(_, j)| j))
                .collect()
        })
        .collect()
}

/// Where a missing carbonyl oxygen is placed: the idealized position in the
/// residue frame, 1.23 Å from C in the N–CA–C plane.
pub fn imputed_oxygen(frame: &RigidTransform) -> Point3 {
    frame.apply(&Point3::new(IDEAL_O[0], IDEAL_O[1], IDEAL_O[2]))
}

pub fn build_graph(structure: &BackboneStructure, cfg: &ModelConfig) -> Result<ResidueGraph, ModelError> {
    cfg.validate().map_err(ModelError::Config)?;
    let n = structure.len();
    if n < 2 {
        return Err(ModelError::TooFewResidues {
            name: structure.name.clone(),
            found: n,
        });
    }
    let frames = structure
        .residues
        .iter()
        .enumerate()
        .map(|(i, r)| {
            frame_from_three_points(&r.n, &r.ca, &r.c).map_err(|e| ModelError::Geometry {
                name: structure.name.clone(),
                source: e.at_residue(i),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let cas: Vec<Point3> = structure.residues.iter().map(|r| r.ca).collect();
    let neighbors = nearest_neighbors(&cas, cfg.knn_k);
    let topology = EdgeTopology::new(&frames, &neighbors)?;

    let mut backbone = Vec::with_capacity(n * 12);
    let mut imputed_o = Vec::new();
    for (i, (r, frame)) in structure.residues.iter().zip(&frames).enumerate() {
        let o = r.o.unwrap_or_else(|| {
            imputed_o.push(i);
            imputed_oxygen(frame)
        });
        let local = invert(frame);
        for p in [r.n, r.ca, r.c, o] {
            let x = local.apply(&p);
            backbone.extend_from_slice(&[x.x, x.y, x.z]);
        }
    }
    if !imputed_o.is_empty() {
        log::info!(
            "{}: imputed carbonyl O for {} residue(s)",
            structure.name,
            imputed_o.len()
        );
    }

    let bank = RbfBank::new(cfg.n_rbf, cfg.rbf_max);
    let mut edge_distances = Vec::with_capacity(topology.n_edges() * cfg.n_rbf);
    for (&i, &j) in topology.centers.iter().zip(&topology.neighbors) {
        edge_distances.extend(bank.eval((cas[i] - cas[j]).norm()));
    }
    Ok(ResidueGraph {
        name: structure.name.clone(),
        edge_distances: Tensor::new(vec![topology.n_edges(), cfg.n_rbf], edge_distances)?,
        frames,
        neighbors,
        topology,
        backbone: Tensor::new(vec![n, 4, 3], backbone)?,
        imputed_o,
        targets: structure.targets(),
    })
}
