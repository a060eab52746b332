//! Global mass/stiffness assembly over the structured mesh plus lumped
//! attachment contributions.

use super::banded::SymmetricBanded;
use super::element::{element_matrices, ELEM_DOF, NODE_DOF};
use super::{FEMesh, LumpedAttachment, MaterialSpec};
use crate::error::{CoreError, Result};

/// Nodes whose coordinates fall inside the attachment footprint square.
fn footprint_nodes(mesh: &FEMesh, att: &LumpedAttachment) -> Vec<usize> {
    let h = 0.5 * att.footprint + 1e-9 * mesh.stage_edge;
    mesh.node_coords
        .iter()
        .enumerate()
        .filter(|(_, c)| {
            (c[0] - att.center[0]).abs() <= h && (c[1] - att.center[1]).abs() <= h
        })
        .map(|(i, _)| i)
        .collect()
}

/// Assembles the global (mass, stiffness) pair in symmetric banded storage.
///
/// M is positive definite; K is positive semidefinite with the six rigid
/// motions as its only zero-energy directions. Attachment mass lands on the
/// translational dofs of footprint nodes, split uniformly; the x/y rotary
/// supplements land on the matching slope dofs.
pub fn assemble(
    mesh: &FEMesh,
    material: &MaterialSpec,
    attachments: &[LumpedAttachment],
) -> Result<(SymmetricBanded, SymmetricBanded)> {
    material.validate()?;
    for att in attachments {
        att.validate(mesh.stage_edge)?;
    }

    let n_dofs = mesh.n_dofs();
    let hb = mesh
        .elements
        .iter()
        .map(|e| {
            let lo = *e.iter().min().unwrap();
            let hi = *e.iter().max().unwrap();
            NODE_DOF * (hi - lo) + NODE_DOF - 1
        })
        .max()
        .unwrap_or(0);
    let mut mass = SymmetricBanded::zeros(n_dofs, hb);
    let mut stiffness = SymmetricBanded::zeros(n_dofs, hb);

    let h = mesh.spacing();
    for (e, conn) in mesh.elements.iter().enumerate() {
        let p0 = mesh.node_coords[conn[0]];
        let p1 = mesh.node_coords[conn[1]];
        let p3 = mesh.node_coords[conn[3]];
        let dx = p1[0] - p0[0];
        let dy = p3[1] - p0[1];
        let axis_aligned = (p1[1] - p0[1]).abs() < 1e-12 * h && (p3[0] - p0[0]).abs() < 1e-12 * h;
        if dx <= 0.0 || dy <= 0.0 || !axis_aligned {
            return Err(CoreError::DegenerateElement {
                element: e,
                reason: format!("not an axis-aligned counterclockwise rectangle (dx={dx}, dy={dy})"),
            });
        }
        let t = mesh.element_thickness[e];
        if t <= 0.0 {
            return Err(CoreError::DegenerateElement {
                element: e,
                reason: "nonpositive thickness".into(),
            });
        }
        let (ke, me) = element_matrices(dx, dy, material, t);
        let mut gdof = [0usize; ELEM_DOF];
        for (ln, node) in conn.iter().enumerate() {
            for c in 0..NODE_DOF {
                gdof[NODE_DOF * ln + c] = mesh.dof_index(*node, c);
            }
        }
        for (li, &gi) in gdof.iter().enumerate() {
            for (lj, &gj) in gdof.iter().enumerate() {
                if gi >= gj {
                    stiffness.add(gi, gj, ke[li][lj]);
                    mass.add(gi, gj, me[li][lj]);
                }
            }
        }
    }

    for att in attachments {
        let nodes = footprint_nodes(mesh, att);
        if nodes.is_empty() {
            return Err(CoreError::InvalidParameter(format!(
                "attachment footprint at ({}, {}) spans no mesh node; refine the mesh",
                att.center[0], att.center[1]
            )));
        }
        let share = 1.0 / nodes.len() as f64;
        let m = att.mass * share;
        // Rotation about x moves the s_y dofs, rotation about y the s_x dofs.
        let j_sy = att.rotary_inertia[0] * share;
        let j_sx = att.rotary_inertia[1] * share;
        for node in nodes {
            for c in 0..3 {
                let d = mesh.dof_index(node, c);
                mass.add(d, d, m);
            }
            let dsx = mesh.dof_index(node, 3);
            let dsy = mesh.dof_index(node, 4);
            mass.add(dsx, dsx, j_sx);
            mass.add(dsy, dsy, j_sy);
        }
    }

    Ok((mass, stiffness))
}
