use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{build_ybus, BusId, BusKind, GenId, LoadStamp, NetError, Network};
use crate::phasor::Phasor;

#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    pub voltages: BTreeMap<BusId, Phasor>,
    /// Complex power output of each generator, per-unit.
    pub generation: BTreeMap<GenId, Phasor>,
    pub iterations: usize,
    pub max_mismatch: f64,
}

impl PowerFlowSolution {
    pub fn voltage(&self, bus: BusId) -> Phasor {
        self.voltages[&bus]
    }
}

/// Newton-Raphson power flow in polar coordinates from a flat start.
///
/// Loads are constant power. Slack buses hold `v_setpoint` at zero angle, pv
/// buses hold `v_setpoint` and the sum of their generators' `p_dispatch`.
pub fn solve_power_flow(network: &Network, tol: f64, max_iter: usize) -> Result<PowerFlowSolution, NetError> {
    network.validate()?;
    let y = build_ybus(network, LoadStamp::Excluded)?.to_dense();
    let n = network.buses.len();

    let mut p_spec = vec![0.0; n];
    let mut q_spec = vec![0.0; n];
    let pos = network.bus_positions();
    for (i, bus) in network.buses.iter().enumerate() {
        p_spec[i] -= bus.load.re;
        q_spec[i] -= bus.load.im;
    }
    for g in &network.generators {
        let i = pos[&g.bus];
        p_spec[i] += g.p_dispatch;
        q_spec[i] += g.q_dispatch;
    }

    // Unknown angles: every non-slack bus. Unknown magnitudes: pq buses.
    let theta_idx: Vec<usize> = (0..n).filter(|&i| network.buses[i].kind != BusKind::Slack).collect();
    let vm_idx: Vec<usize> = (0..n).filter(|&i| network.buses[i].kind == BusKind::Pq).collect();

    let mut vm: Vec<f64> =
        network.buses.iter().map(|b| if b.kind == BusKind::Pq { 1.0 } else { b.v_setpoint }).collect();
    let mut va = vec![0.0; n];

    let mut iteration = 0;
    loop {
        let v = DVector::from_iterator(n, (0..n).map(|i| Complex64::from_polar(vm[i], va[i])));
        let current = &y * &v;
        let s_calc: Vec<Complex64> = (0..n).map(|i| v[i] * current[i].conj()).collect();

        let mut mismatch = DVector::zeros(theta_idx.len() + vm_idx.len());
        for (k, &i) in theta_idx.iter().enumerate() {
            mismatch[k] = p_spec[i] - s_calc[i].re;
        }
        for (k, &i) in vm_idx.iter().enumerate() {
            mismatch[theta_idx.len() + k] = q_spec[i] - s_calc[i].im;
        }
        let worst = mismatch.amax();
        if !worst.is_finite() {
            return Err(NetError::PowerFlowDiverged { iteration, mismatch: worst });
        }
        if worst <= tol {
            return Ok(finish(network, &y, v, iteration, worst));
        }
        if iteration >= max_iter {
            return Err(NetError::PowerFlowDiverged { iteration, mismatch: worst });
        }

        let jac = jacobian(&y, &v, &current, &theta_idx, &vm_idx);
        let step = jac.lu().solve(&mismatch).ok_or(NetError::PowerFlowDiverged { iteration, mismatch: worst })?;
        for (k, &i) in theta_idx.iter().enumerate() {
            va[i] += step[k];
        }
        for (k, &i) in vm_idx.iter().enumerate() {
            vm[i] += step[theta_idx.len() + k];
        }
        iteration += 1;
    }
}

/// Real Jacobian of (P, Q) against (angle, magnitude) for the selected rows.
fn jacobian(
    y: &DMatrix<Complex64>,
    v: &DVector<Complex64>,
    current: &DVector<Complex64>,
    theta_idx: &[usize],
    vm_idx: &[usize],
) -> DMatrix<f64> {
    let j = Complex64::i();
    let v_unit: Vec<Complex64> = v.iter().map(|x| x / x.norm()).collect();
    // dS_i/dθ_k = j V_i conj(I_i δ_ik - Y_ik V_k)
    // dS_i/d|V|_k = V_i conj(Y_ik u_k) + δ_ik conj(I_i) u_i
    let ds_dtheta = |i: usize, k: usize| {
        let diag = if i == k { current[i] } else { Complex64::default() };
        j * v[i] * (diag - y[(i, k)] * v[k]).conj()
    };
    let ds_dvm = |i: usize, k: usize| {
        let diag = if i == k { current[i].conj() * v_unit[i] } else { Complex64::default() };
        v[i] * (y[(i, k)] * v_unit[k]).conj() + diag
    };
    let nt = theta_idx.len();
    let size = nt + vm_idx.len();
    let mut jac = DMatrix::zeros(size, size);
    for (r, &i) in theta_idx.iter().enumerate() {
        for (c, &k) in theta_idx.iter().enumerate() {
            jac[(r, c)] = ds_dtheta(i, k).re;
        }
        for (c, &k) in vm_idx.iter().enumerate() {
            jac[(r, nt + c)] = ds_dvm(i, k).re;
        }
    }
    for (r, &i) in vm_idx.iter().enumerate() {
        for (c, &k) in theta_idx.iter().enumerate() {
            jac[(nt + r, c)] = ds_dtheta(i, k).im;
        }
        for (c, &k) in vm_idx.iter().enumerate() {
            jac[(nt + r, nt + c)] = ds_dvm(i, k).im;
        }
    }
    jac
}

fn finish(
    network: &Network,
    y: &DMatrix<Complex64>,
    v: DVector<Complex64>,
    iterations: usize,
    max_mismatch: f64,
) -> PowerFlowSolution {
    let current = y * &v;
    let mut generation = BTreeMap::new();
    for (i, bus) in network.buses.iter().enumerate() {
        let gens: Vec<_> = network.generators.iter().filter(|g| g.bus == bus.id).collect();
        if gens.is_empty() {
            continue;
        }
        let s_gen = v[i] * current[i].conj() + bus.load;
        let total_mbase: f64 = gens.iter().map(|g| g.mbase).sum();
        for g in gens {
            let share = g.mbase / total_mbase;
            let p = if bus.kind == BusKind::Slack { s_gen.re * share } else { g.p_dispatch };
            let q = if bus.kind == BusKind::Pq { g.q_dispatch } else { s_gen.im * share };
            generation.insert(g.id, Phasor::new(p, q));
        }
    }
    let voltages = network.buses.iter().enumerate().map(|(i, b)| (b.id, v[i])).collect();
    PowerFlowSolution { voltages, generation, iterations, max_mismatch }
}

/// Shunt admittance per loaded bus that draws the scheduled load at the
/// power-flow voltage.
pub fn frozen_load_admittances(network: &Network, pf: &PowerFlowSolution) -> BTreeMap<BusId, Phasor> {
    network
        .buses
        .iter()
        .filter(|b| b.load != Phasor::default())
        .map(|b| {
            let vm2 = pf.voltage(b.id).norm_sqr();
            (b.id, b.load.conj() / vm2)
        })
        .collect()
}
