//! Fixed-shape point-cloud encoding of atomic structures and the per-column
//! input standardizer.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::UpnetError;
use crate::data::{AtomicStructure, FeatureSchema};

/// A `max_atoms x feature_width` matrix with a per-row validity mask.
/// Masked-out rows are all-zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloudTensor {
    pub matrix: DMatrix<f64>,
    pub mask: Vec<bool>,
}

impl PointCloudTensor {
    /// Build a tensor from a list of valid rows, padding to `max_atoms`.
    pub fn from_valid_rows(rows: &[DVector<f64>], max_atoms: usize) -> Self {
        assert!(!rows.is_empty() && rows.len() <= max_atoms);
        let width = rows[0].len();
        let mut matrix = DMatrix::zeros(max_atoms, width);
        let mut mask = vec![false; max_atoms];
        for (i, r) in rows.iter().enumerate() {
            matrix.row_mut(i).copy_from(&r.transpose());
            mask[i] = true;
        }
        Self { matrix, mask }
    }

    pub fn n_valid(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Iterator over valid rows as column vectors.
    pub fn valid_rows(&self) -> impl Iterator<Item = DVector<f64>> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(move |(i, _)| self.matrix.row(i).transpose())
    }

    /// Apply a row permutation jointly to the matrix and mask.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.mask.len());
        let mut matrix = DMatrix::zeros(self.matrix.nrows(), self.matrix.ncols());
        let mut mask = vec![false; self.mask.len()];
        for (dst, &src) in perm.iter().enumerate() {
            matrix.row_mut(dst).copy_from(&self.matrix.row(src));
            mask[dst] = self.mask[src];
        }
        Self { matrix, mask }
    }
}

/// Encode a structure against a schema: each valid row is
/// `[one-hot(element) | mass, electronegativity, radius | x, y, z]`.
pub fn encode(s: &AtomicStructure, schema: &FeatureSchema) -> Result<PointCloudTensor, UpnetError> {
    if s.atoms.len() > schema.max_atoms {
        return Err(UpnetError::TooManyAtoms {
            n_atoms: s.atoms.len(),
            max_atoms: schema.max_atoms,
        });
    }
    let width = schema.feature_width();
    let n_el = schema.element_vocab.len();
    let mut matrix = DMatrix::zeros(schema.max_atoms, width);
    let mut mask = vec![false; schema.max_atoms];
    for (i, atom) in s.atoms.iter().enumerate() {
        let vi = schema
            .vocab_index(&atom.el)
            .ok_or_else(|| UpnetError::UnknownElement(atom.el.clone()))?;
        let props = &schema.element_properties[&atom.el];
        matrix[(i, vi)] = 1.0;
        matrix[(i, n_el)] = props.mass;
        matrix[(i, n_el + 1)] = props.electronegativity;
        matrix[(i, n_el + 2)] = props.radius;
        matrix[(i, n_el + 3)] = atom.x;
        matrix[(i, n_el + 4)] = atom.y;
        matrix[(i, n_el + 5)] = atom.z;
        mask[i] = true;
    }
    Ok(PointCloudTensor { matrix, mask })
}

/// Per-feature-column affine standardization, fit on the valid rows of a
/// training split and applied to valid rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: DVector<f64>,
    pub std: DVector<f64>,
}

impl Standardizer {
    pub fn identity(width: usize) -> Self {
        Self {
            mean: DVector::zeros(width),
            std: DVector::from_element(width, 1.0),
        }
    }

    pub fn fit(tensors: &[PointCloudTensor]) -> Self {
        let width = tensors[0].matrix.ncols();
        let mut mean = DVector::zeros(width);
        let mut n = 0usize;
        for t in tensors {
            for r in t.valid_rows() {
                mean += r;
                n += 1;
            }
        }
        mean /= n as f64;
        let mut var = DVector::zeros(width);
        for t in tensors {
            for r in t.valid_rows() {
                let d = r - &mean;
                var += d.component_mul(&d);
            }
        }
        var /= n as f64;
        let std = var.map(|v| v.sqrt().max(1e-8));
        Self { mean, std }
    }

    pub fn apply_row(&self, row: &DVector<f64>) -> DVector<f64> {
        (row - &self.mean).component_div(&self.std)
    }
}
