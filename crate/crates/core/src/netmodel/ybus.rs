use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{Branch, BusId, NetError, Network, MIN_BRANCH_IMPEDANCE};
use crate::phasor::Phasor;

/// How bus loads enter the admittance matrix.
#[derive(Debug, Clone, Copy)]
pub enum LoadStamp<'a> {
    /// Loads are left out (power-flow form).
    Excluded,
    /// Constant impedance drawing the nominal load at 1.0 pu voltage.
    Nominal,
    /// Caller-supplied shunt admittance per bus.
    Frozen(&'a BTreeMap<BusId, Phasor>),
}

/// Sparse bus admittance matrix. Row and column indices follow the order of
/// `buses`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub buses: Vec<BusId>,
    pub entries: BTreeMap<(usize, usize), Phasor>,
    index: BTreeMap<BusId, usize>,
}

impl AdmittanceMatrix {
    pub fn zeros(buses: Vec<BusId>) -> Self {
        let index = buses.iter().enumerate().map(|(i, b)| (*b, i)).collect();
        Self { buses, entries: BTreeMap::new(), index }
    }

    pub fn order(&self) -> usize {
        self.buses.len()
    }

    pub fn index_of(&self, bus: BusId) -> Option<usize> {
        self.index.get(&bus).copied()
    }

    pub fn get(&self, row: usize, col: usize) -> Phasor {
        self.entries.get(&(row, col)).copied().unwrap_or_default()
    }

    pub fn add(&mut self, row: usize, col: usize, y: Phasor) {
        *self.entries.entry((row, col)).or_default() += y;
    }

    /// Adds a shunt admittance at `bus`.
    pub fn stamp_shunt(&mut self, bus: BusId, y: Phasor) -> Result<(), NetError> {
        let i = self.index_of(bus).ok_or(NetError::UnknownBus(bus))?;
        self.add(i, i, y);
        Ok(())
    }

    /// Adds `sign` times the pi-model of `branch`. A sign of -1 removes it.
    pub fn stamp_branch(&mut self, branch: &Branch, sign: f64) -> Result<(), NetError> {
        if branch.z_series.norm() < MIN_BRANCH_IMPEDANCE {
            return Err(NetError::ZeroImpedanceBranch(branch.id));
        }
        let lookup = |bus| self.index_of(bus).ok_or(NetError::DanglingBranchEndpoint { branch: branch.id, bus });
        let f = lookup(branch.from_bus)?;
        let t = lookup(branch.to_bus)?;
        let y_series = branch.z_series.inv() * sign;
        let y_half = Complex64::new(0.0, branch.b_shunt_total / 2.0) * sign;
        self.add(f, f, y_series + y_half);
        self.add(t, t, y_series + y_half);
        self.add(f, t, -y_series);
        self.add(t, f, -y_series);
        Ok(())
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let n = self.order();
        let mut m = DMatrix::zeros(n, n);
        for (&(r, c), &y) in &self.entries {
            m[(r, c)] = y;
        }
        m
    }

    /// Largest |Y[i][j] - Y[j][i]|.
    pub fn asymmetry(&self) -> f64 {
        self.entries.iter().map(|(&(r, c), &y)| (y - self.get(c, r)).norm()).fold(0.0, f64::max)
    }

    /// Largest entrywise difference from another matrix over the same buses.
    pub fn max_abs_diff(&self, other: &AdmittanceMatrix) -> f64 {
        self.entries
            .keys()
            .chain(other.entries.keys())
            .map(|&(r, c)| (self.get(r, c) - other.get(r, c)).norm())
            .fold(0.0, f64::max)
    }
}

/// Assembles the bus admittance matrix from in-service branches and, when
/// requested, the load shunts.
pub fn build_ybus(network: &Network, loads: LoadStamp<'_>) -> Result<AdmittanceMatrix, NetError> {
    let mut y = AdmittanceMatrix::zeros(network.buses.iter().map(|b| b.id).collect());
    for branch in network.branches.iter().filter(|b| b.in_service) {
        y.stamp_branch(branch, 1.0)?;
    }
    match loads {
        LoadStamp::Excluded => {}
        LoadStamp::Nominal => {
            for bus in &network.buses {
                if bus.load != Phasor::default() {
                    y.stamp_shunt(bus.id, bus.load.conj())?;
                }
            }
        }
        LoadStamp::Frozen(map) => {
            for (&bus, &adm) in map {
                y.stamp_shunt(bus, adm)?;
            }
        }
    }
    Ok(y)
}
