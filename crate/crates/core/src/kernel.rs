//! Step kernels and step signals over a finite partition.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::partition::Partition;

/// A kernel constant on every block `P_i x P_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepKernel {
    partition: Partition,
    coeffs: Array2<f64>,
}

/// A signal constant on every part.
#[derive(Clone, Debug, PartialEq)]
pub struct StepSignal {
    partition: Partition,
    values: Array1<f64>,
}

impl StepKernel {
    pub fn new(partition: Partition, coeffs: Array2<f64>) -> Result<Self> {
        let k = partition.len();
        if coeffs.dim() != (k, k) {
            return Err(Error::Dimension(format!(
                "coefficients of shape {:?} for {k} parts",
                coeffs.dim()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Dimension("kernel coefficients must be finite".into()));
        }
        Ok(Self { partition, coeffs })
    }

    pub fn zeros(partition: Partition) -> Self {
        let k = partition.len();
        Self { partition, coeffs: Array2::zeros((k, k)) }
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn coeffs(&self) -> &Array2<f64> {
        &self.coeffs
    }

    pub fn len(&self) -> usize {
        self.partition.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partition.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// `int int K^2`.
    pub fn l2_norm_sq(&self) -> f64 {
        let mu = self.partition.measures();
        self.coeffs
            .indexed_iter()
            .map(|((i, j), c)| c * c * mu[i] * mu[j])
            .sum()
    }

    /// `int int |K|`.
    pub fn l1_norm(&self) -> f64 {
        let mu = self.partition.measures();
        self.coeffs
            .indexed_iter()
            .map(|((i, j), c)| c.abs() * mu[i] * mu[j])
            .sum()
    }

    /// The same kernel expressed on a refinement; `parent[p]` is the part of
    /// `self` containing refined part `p`.
    pub fn lift(&self, refined: &Partition, parent: &[usize]) -> StepKernel {
        let k = refined.len();
        let coeffs = Array2::from_shape_fn((k, k), |(i, j)| self.coeffs[[parent[i], parent[j]]]);
        StepKernel { partition: refined.clone(), coeffs }
    }

    /// Expressed with one part per ground atom.
    pub fn on_atoms(&self) -> StepKernel {
        self.lift(&self.partition.ground(), self.partition.labels())
    }

    /// `self - other` on the common refinement of both partitions.
    pub fn sub(&self, other: &StepKernel) -> Result<StepKernel> {
        if self.partition == other.partition {
            return Ok(StepKernel { partition: self.partition.clone(), coeffs: &self.coeffs - &other.coeffs });
        }
        let r = self.partition.common_refinement(&other.partition)?;
        let a = self.lift(&r.partition, &r.left);
        let b = other.lift(&r.partition, &r.right);
        Ok(StepKernel { partition: r.partition, coeffs: a.coeffs - b.coeffs })
    }

    /// `int_S int_T K` for unions of parts.
    pub fn block_integral(&self, rows: &[usize], cols: &[usize]) -> f64 {
        let mu = self.partition.measures();
        rows.iter()
            .map(|&i| mu[i] * cols.iter().map(|&j| self.coeffs[[i, j]] * mu[j]).sum::<f64>())
            .sum()
    }

    /// Relabels parts: part `p` of the result is part `perm[p]` of `self`.
    pub fn permute_parts(&self, perm: &[usize]) -> Result<StepKernel> {
        let measures: Vec<f64> = perm.iter().map(|&p| self.partition.measure(p)).collect();
        let partition = Partition::intervals(measures)?;
        let k = perm.len();
        let coeffs = Array2::from_shape_fn((k, k), |(i, j)| self.coeffs[[perm[i], perm[j]]]);
        StepKernel::new(partition, coeffs)
    }
}

impl StepSignal {
    pub fn new(partition: Partition, values: Array1<f64>) -> Result<Self> {
        if values.len() != partition.len() {
            return Err(Error::Dimension(format!(
                "{} signal values for {} parts",
                values.len(),
                partition.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dimension("signal values must be finite".into()));
        }
        Ok(Self { partition, values })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().zip(self.partition.measures()).map(|(v, m)| v.abs() * m).sum()
    }

    pub fn lift(&self, refined: &Partition, parent: &[usize]) -> StepSignal {
        let values = parent.iter().map(|&p| self.values[p]).collect();
        StepSignal { partition: refined.clone(), values }
    }

    pub fn sub(&self, other: &StepSignal) -> Result<StepSignal> {
        if self.partition == other.partition {
            return Ok(StepSignal { partition: self.partition.clone(), values: &self.values - &other.values });
        }
        let r = self.partition.common_refinement(&other.partition)?;
        let a = self.lift(&r.partition, &r.left);
        let b = other.lift(&r.partition, &r.right);
        Ok(StepSignal { partition: r.partition, values: a.values - b.values })
    }

    /// Zeroes every part for which `keep` is false.
    pub fn masked(&self, keep: impl Fn(usize) -> bool) -> StepSignal {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(p, &v)| if keep(p) { v } else { 0.0 })
            .collect();
        StepSignal { partition: self.partition.clone(), values }
    }
}
