//! JSON encoding helpers: reals are written with 17 significant digits so
//! that every value reads back bit-identical.

use nalgebra::{DMatrix, DVector};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::{dim_err, Result};
use crate::setops::{HPolytope, MatrixZonotope, Zonotope};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Real(pub f64);

impl Serialize for Real {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return Err(serde::ser::Error::custom(format!("non-finite value {}", self.0)));
        }
        let text = format!("{:.16e}", self.0);
        let raw = RawValue::from_string(text).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        if !v.is_finite() {
            return Err(D::Error::custom("non-finite number"));
        }
        Ok(Real(v))
    }
}

pub type VecDoc = Vec<Real>;
/// Row-major list of rows.
pub type MatDoc = Vec<Vec<Real>>;

pub fn vec_doc(v: &DVector<f64>) -> VecDoc {
    v.iter().map(|x| Real(*x)).collect()
}

pub fn mat_doc(m: &DMatrix<f64>) -> MatDoc {
    m.row_iter().map(|r| r.iter().map(|x| Real(*x)).collect()).collect()
}

pub fn vec_from(doc: &[Real]) -> DVector<f64> {
    DVector::from_iterator(doc.len(), doc.iter().map(|r| r.0))
}

/// `cols` is needed for the empty-row case.
pub fn mat_from(doc: &[Vec<Real>], cols: usize) -> Result<DMatrix<f64>> {
    let rows = doc.len();
    let mut m = DMatrix::zeros(rows, cols);
    for (i, r) in doc.iter().enumerate() {
        if r.len() != cols {
            return Err(dim_err(format!("row {i} has {} entries, expected {cols}", r.len())));
        }
        for (j, v) in r.iter().enumerate() {
            m[(i, j)] = v.0;
        }
    }
    Ok(m)
}

/// Generators are stored one per entry (a list of generator vectors).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZonotopeDoc {
    pub center: VecDoc,
    pub generators: Vec<VecDoc>,
}

impl ZonotopeDoc {
    pub fn from_set(z: &Zonotope) -> Self {
        Self {
            center: vec_doc(z.center()),
            generators: z
                .generators()
                .column_iter()
                .map(|g| g.iter().map(|x| Real(*x)).collect())
                .collect(),
        }
    }

    pub fn to_set(&self) -> Result<Zonotope> {
        let n = self.center.len();
        let g = mat_from(&self.generators, n)?.transpose();
        Zonotope::new(vec_from(&self.center), g)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HPolytopeDoc {
    pub normals: MatDoc,
    pub offsets: VecDoc,
}

impl HPolytopeDoc {
    pub fn from_set(p: &HPolytope) -> Self {
        Self {
            normals: mat_doc(p.normals()),
            offsets: vec_doc(p.offsets()),
        }
    }

    pub fn to_set(&self, dim: usize) -> Result<HPolytope> {
        HPolytope::new(mat_from(&self.normals, dim)?, vec_from(&self.offsets))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixZonotopeDoc {
    pub rows: usize,
    pub cols: usize,
    pub center: MatDoc,
    pub generators: Vec<MatDoc>,
}

impl MatrixZonotopeDoc {
    pub fn from_set(m: &MatrixZonotope) -> Self {
        let (rows, cols) = m.shape();
        Self {
            rows,
            cols,
            center: mat_doc(m.center()),
            generators: m.generators().iter().map(mat_doc).collect(),
        }
    }

    pub fn to_set(&self) -> Result<MatrixZonotope> {
        let check = |m: &MatDoc| -> Result<DMatrix<f64>> {
            if m.len() != self.rows {
                return Err(dim_err(format!("matrix has {} rows, expected {}", m.len(), self.rows)));
            }
            mat_from(m, self.cols)
        };
        let center = check(&self.center)?;
        let gens = self.generators.iter().map(check).collect::<Result<Vec<_>>>()?;
        MatrixZonotope::new(center, gens)
    }
}
