//! Newton–Raphson power flow in rectangular coordinates.
//!
//! Used as ground truth for relaxation-gap audits and for the no-market
//! voltage baseline. The slack node-phases are held at their nominal voltage;
//! every other node-phase is a PQ injection.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::network::{build_admittance, AdmittanceMatrix, NetworkError, ThreePhaseNetwork};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFlowOptions {
    pub max_iter: usize,
    /// Infinity-norm bound on the complex power mismatch, p.u.
    pub tol: f64,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    /// Node-phase voltages in the network frame.
    pub v: Vec<Complex64>,
    /// Nodal current injections `Y V`.
    pub i: Vec<Complex64>,
    /// Complex power injections `V conj(I)`; slack entries are computed.
    pub s: Vec<Complex64>,
    pub iterations: usize,
    pub mismatch: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum PowerFlowError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("expected {expected} injections, got {got}")]
    Length { expected: usize, got: usize },
    #[error("injection at node-phase {0} is not finite")]
    NonFinite(usize),
    #[error("Newton iteration diverged after {iterations} iterations (mismatch {mismatch:e})")]
    Diverged { iterations: usize, mismatch: f64 },
}

/// Solves for node-phase voltages given complex power injections (generation
/// positive). Slack entries of `injections` are ignored.
pub fn power_flow_oracle(
    net: &ThreePhaseNetwork,
    injections: &[Complex64],
) -> Result<PowerFlowSolution, PowerFlowError> {
    power_flow_with(net, injections, PowerFlowOptions::default())
}

pub fn power_flow_with(
    net: &ThreePhaseNetwork,
    injections: &[Complex64],
    opts: PowerFlowOptions,
) -> Result<PowerFlowSolution, PowerFlowError> {
    let n = net.num_node_phases();
    if injections.len() != n {
        return Err(PowerFlowError::Length {
            expected: n,
            got: injections.len(),
        });
    }
    if let Some(k) = injections
        .iter()
        .position(|s| !(s.re.is_finite() && s.im.is_finite()))
    {
        return Err(PowerFlowError::NonFinite(k));
    }
    let y = build_admittance(net)?;
    let pq: Vec<usize> = (0..n)
        .filter(|&k| !net.is_slack(net.node_phases()[k]))
        .collect();
    let mut v = net.nominal_voltages();

    let mismatch_of = |v: &[Complex64], y: &AdmittanceMatrix| -> (Vec<Complex64>, DVector<f64>, f64) {
        let i = y.apply(v);
        let mut r = DVector::zeros(2 * pq.len());
        let mut worst: f64 = 0.0;
        for (row, &k) in pq.iter().enumerate() {
            let d = injections[k] - v[k] * i[k].conj();
            r[row] = d.re;
            r[pq.len() + row] = d.im;
            worst = worst.max(d.re.abs()).max(d.im.abs());
        }
        (i, r, worst)
    };

    let (mut i, mut r, mut mismatch) = mismatch_of(&v, &y);
    let mut iterations = 0;
    while mismatch >= opts.tol {
        if iterations == opts.max_iter || !mismatch.is_finite() {
            return Err(PowerFlowError::Diverged {
                iterations,
                mismatch,
            });
        }
        let m = pq.len();
        // Jacobian of computed S = V conj(I) in (e, f) = (Re V, Im V).
        let mut jac = DMatrix::zeros(2 * m, 2 * m);
        for (row, &k) in pq.iter().enumerate() {
            for (col, &c) in pq.iter().enumerate() {
                let vy = v[k] * y.y[(k, c)].conj();
                let mut ds_de = vy;
                let mut ds_df = Complex64::new(0.0, -1.0) * vy;
                if k == c {
                    ds_de += i[k].conj();
                    ds_df += Complex64::new(0.0, 1.0) * i[k].conj();
                }
                jac[(row, col)] = ds_de.re;
                jac[(row, m + col)] = ds_df.re;
                jac[(m + row, col)] = ds_de.im;
                jac[(m + row, m + col)] = ds_df.im;
            }
        }
        let Some(step) = jac.lu().solve(&r) else {
            return Err(PowerFlowError::Diverged {
                iterations,
                mismatch,
            });
        };
        for (idx, &k) in pq.iter().enumerate() {
            v[k] += Complex64::new(step[idx], step[m + idx]);
        }
        iterations += 1;
        (i, r, mismatch) = mismatch_of(&v, &y);
    }
    let s = v.iter().zip(&i).map(|(v, i)| v * i.conj()).collect();
    Ok(PowerFlowSolution {
        v,
        i,
        s,
        iterations,
        mismatch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures::{c, two_bus, triangle};

    #[test]
    fn no_load_is_nominal() {
        let net = triangle(c(0.02, 0.04));
        let sol = power_flow_oracle(&net, &vec![c(0.0, 0.0); 3]).unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.v, net.nominal_voltages());
        assert!(sol.i.iter().all(|i| i.norm() == 0.0));
    }

    #[test]
    fn two_bus_matches_voltage_drop_quartic() {
        let z = c(0.01, 0.02);
        let net = two_bus(z);
        let (p, q) = (0.1, 0.05);
        let sol = power_flow_oracle(&net, &[c(0.0, 0.0), c(-p, -q)]).unwrap();
        assert!(sol.mismatch < 1e-10);

        // |V|^4 + (2(RP + XQ) - |V0|^2)|V|^2 + |Z|^2|S|^2 = 0, high-voltage root.
        let b = 2.0 * (z.re * p + z.im * q) - 1.0;
        let cc = z.norm_sqr() * (p * p + q * q);
        let v2 = (-b + (b * b - 4.0 * cc).sqrt()) / 2.0;
        assert!((sol.v[1].norm() - v2.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn beyond_nose_point_diverges() {
        let net = two_bus(c(0.01, 0.02));
        let mut p = 0.5;
        let mut last_ok = 0.0;
        while p < 100.0 {
            match power_flow_oracle(&net, &[c(0.0, 0.0), c(-p, -0.5 * p)]) {
                Ok(_) => last_ok = p,
                Err(PowerFlowError::Diverged { .. }) => break,
                Err(e) => panic!("{e}"),
            }
            p *= 1.1;
        }
        assert!(last_ok > 0.0 && p < 100.0);
        // Beyond the nose the voltage-drop quartic has no real root.
        let pp = 2.0 * p;
        let b = 2.0 * (0.01 * pp + 0.02 * 0.5 * pp) - 1.0;
        let cc = 0.0005 * pp * pp * 1.25;
        assert!(b * b - 4.0 * cc < 0.0);
        let err = power_flow_oracle(&net, &[c(0.0, 0.0), c(-pp, -0.5 * pp)]);
        assert!(matches!(err, Err(PowerFlowError::Diverged { .. })));
    }

    #[test]
    fn bilinear_forms_reproduce_injections() {
        let net = triangle(c(0.03, 0.05));
        let inj = [c(0.0, 0.0), c(-0.3, -0.1), c(0.1, -0.05)];
        let sol = power_flow_oracle(&net, &inj).unwrap();
        for k in 1..3 {
            let (vr, vi, ir, ii) = (sol.v[k].re, sol.v[k].im, sol.i[k].re, sol.i[k].im);
            assert!((vr * ir + vi * ii - inj[k].re).abs() < 1e-8);
            assert!((-vr * ii + vi * ir - inj[k].im).abs() < 1e-8);
        }
    }

    #[test]
    fn wrong_length_rejected() {
        let net = two_bus(c(0.01, 0.02));
        assert_eq!(
            power_flow_oracle(&net, &[c(0.0, 0.0)]).unwrap_err(),
            PowerFlowError::Length { expected: 2, got: 1 }
        );
    }
}
