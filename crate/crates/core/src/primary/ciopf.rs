//! Assembly and solution of the relaxed current-injection OPF.

use num_complex::Complex64;

use super::bounds::VarBounds;
use super::mccormick::{build_mce, CutSide};
use super::{bid_map, PmError, PmWeights, SmoBid};
use crate::convex::{kkt_residuals, ConvexProgram, EqRow, KktReport, SolveResult, Var};
use crate::network::{build_admittance, AdmittanceMatrix, NodePhase, Phase, ThreePhaseNetwork};

/// Decision variables of one node-phase. `a = VR·IR`, `b = VI·II`,
/// `c = VR·II`, `d = VI·IR` are the relaxed products.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeVars {
    pub p: Var,
    pub q: Var,
    pub vr: Var,
    pub vi: Var,
    pub ir: Var,
    pub ii: Var,
    pub a: Var,
    pub b: Var,
    pub c: Var,
    pub d: Var,
}

/// Equality rows whose duals become prices.
///
/// * `ohm_re`: `IR − Re(Y V) = 0`, `ohm_im`: `II − Im(Y V) = 0`
/// * `p_def`: `a + b − P = 0`, `q_def`: `d − c − Q = 0`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeRows {
    pub ohm_re: EqRow,
    pub ohm_im: EqRow,
    pub p_def: EqRow,
    pub q_def: EqRow,
}

#[derive(Debug, Clone, PartialEq)]
struct Square {
    terms: Vec<(Var, f64)>,
    offset: f64,
    weight: f64,
}

impl Square {
    fn eval(&self, x: &[f64]) -> f64 {
        let s: f64 = self.terms.iter().map(|&(v, c)| c * x[v.index()]).sum::<f64>() + self.offset;
        self.weight * s * s
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct ObjectiveTerms {
    gen_linear: Vec<(Var, f64)>,
    gen_constant: f64,
    disutility: Vec<Square>,
    losses: Vec<Square>,
    voltage: Vec<Square>,
}

fn sum_squares(sq: &[Square], x: &[f64]) -> f64 {
    sq.iter().map(|s| s.eval(x)).sum()
}

/// Objective value split by term; `losses` and `voltage` are unweighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveBreakdown {
    pub disutility: f64,
    pub generation_cost: f64,
    pub losses: f64,
    pub voltage: f64,
    pub xi: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct BranchCurrent {
    branch: usize,
    phase: Phase,
    re: Vec<(Var, f64)>,
    im: Vec<(Var, f64)>,
}

/// An assembled primary-market program together with its variable map.
#[derive(Debug, Clone)]
pub struct CiOpf {
    pub program: ConvexProgram,
    pub vars: Vec<NodeVars>,
    pub rows: Vec<NodeRows>,
    /// Bus admittance in the phase-aligned frame.
    pub y: AdmittanceMatrix,
    pub bounds: VarBounds,
    pub weights: PmWeights,
    node_phases: Vec<NodePhase>,
    terms: ObjectiveTerms,
    branch_currents: Vec<BranchCurrent>,
}

impl CiOpf {
    pub fn node_phases(&self) -> &[NodePhase] {
        &self.node_phases
    }

    /// Evaluates each objective term at a primal point of `program`.
    pub fn breakdown(&self, x: &[f64]) -> ObjectiveBreakdown {
        let t = &self.terms;
        let gen = t.gen_linear.iter().map(|&(v, c)| c * x[v.index()]).sum::<f64>() + t.gen_constant;
        let dis = sum_squares(&t.disutility, x);
        let losses = sum_squares(&t.losses, x);
        let voltage = sum_squares(&t.voltage, x);
        let xi = self.weights.xi;
        ObjectiveBreakdown {
            disutility: dis,
            generation_cost: gen,
            losses,
            voltage,
            xi,
            total: dis + gen + xi * (losses + voltage),
        }
    }
}

/// Builds the relaxed program. Bid ranges become variable bounds on P and Q;
/// the slack's P and Q are free and priced at the wholesale LMPs.
pub fn assemble_ciopf(
    net: &ThreePhaseNetwork,
    bids: &[SmoBid],
    bounds: &VarBounds,
    weights: PmWeights,
) -> Result<CiOpf, PmError> {
    let n = net.num_node_phases();
    if bounds.boxes.len() != n {
        return Err(PmError::BadSettings(format!(
            "{} bound boxes for {n} node-phases",
            bounds.boxes.len()
        )));
    }
    let map = bid_map(net, bids)?;
    let y = build_admittance(net)?.rotated(&net.phase_rotations());
    let mut prog = ConvexProgram::new();

    let mut vars = Vec::with_capacity(n);
    for (k, np) in net.node_phases().iter().enumerate() {
        let tag = format!("{}.{}", net.buses()[np.bus].id, np.phase);
        let bx = bounds.boxes[k];
        let (pr, qr) = match map[k] {
            Some((_, pb)) => ((pb.p_range.lo, pb.p_range.hi), (pb.q_range.lo, pb.q_range.hi)),
            None => ((f64::NEG_INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::INFINITY)),
        };
        vars.push(NodeVars {
            p: prog.add_var(format!("P[{tag}]"), pr.0, pr.1),
            q: prog.add_var(format!("Q[{tag}]"), qr.0, qr.1),
            vr: prog.add_var(format!("VR[{tag}]"), bx.vr.lo, bx.vr.hi),
            vi: prog.add_var(format!("VI[{tag}]"), bx.vi.lo, bx.vi.hi),
            ir: prog.add_var(format!("IR[{tag}]"), bx.ir.lo, bx.ir.hi),
            ii: prog.add_var(format!("II[{tag}]"), bx.ii.lo, bx.ii.hi),
            a: prog.add_free_var(format!("a[{tag}]")),
            b: prog.add_free_var(format!("b[{tag}]")),
            c: prog.add_free_var(format!("c[{tag}]")),
            d: prog.add_free_var(format!("d[{tag}]")),
        });
    }

    let mut rows = Vec::with_capacity(n);
    for k in 0..n {
        let nv = vars[k];
        let mut re = vec![(nv.ir, 1.0)];
        let mut im = vec![(nv.ii, 1.0)];
        for m in 0..n {
            let (g, b) = (y.y[(k, m)].re, y.y[(k, m)].im);
            if g != 0.0 {
                re.push((vars[m].vr, -g));
                im.push((vars[m].vi, -g));
            }
            if b != 0.0 {
                re.push((vars[m].vi, b));
                im.push((vars[m].vr, -b));
            }
        }
        let ohm_re = prog.add_eq("ohm_re", &re, 0.0);
        let ohm_im = prog.add_eq("ohm_im", &im, 0.0);
        let p_def = prog.add_eq("p_def", &[(nv.a, 1.0), (nv.b, 1.0), (nv.p, -1.0)], 0.0);
        let q_def = prog.add_eq("q_def", &[(nv.d, 1.0), (nv.c, -1.0), (nv.q, -1.0)], 0.0);
        rows.push(NodeRows {
            ohm_re,
            ohm_im,
            p_def,
            q_def,
        });

        let bx = bounds.boxes[k];
        for (w, x, xb, yv, yb, name) in [
            (nv.a, nv.vr, bx.vr, nv.ir, bx.ir, "a"),
            (nv.b, nv.vi, bx.vi, nv.ii, bx.ii, "b"),
            (nv.c, nv.vr, bx.vr, nv.ii, bx.ii, "c"),
            (nv.d, nv.vi, bx.vi, nv.ir, bx.ir, "d"),
        ] {
            let env = build_mce(name, xb, yb);
            if let Some((cx, cy)) = env.as_equality() {
                let mut terms = vec![(w, 1.0)];
                if cx != 0.0 {
                    terms.push((x, -cx));
                }
                if cy != 0.0 {
                    terms.push((yv, -cy));
                }
                prog.add_eq("mce_exact", &terms, 0.0);
                continue;
            }
            for cut in &env.cuts {
                let terms = [(w, 1.0), (x, -cut.x_coef), (yv, -cut.y_coef)];
                match cut.side {
                    CutSide::Under => prog.add_ge("mce", &terms, cut.constant),
                    CutSide::Over => prog.add_le("mce", &terms, cut.constant),
                };
            }
        }
    }

    let mut terms = ObjectiveTerms::default();
    for k in 0..n {
        let nv = vars[k];
        match map[k] {
            None => {
                terms.gen_linear.push((nv.p, weights.lmp_p));
                terms.gen_linear.push((nv.q, weights.lmp_q));
            }
            Some((bid, pb)) => {
                for (var, base, load0, alpha, beta) in [
                    (nv.p, pb.p0, pb.p_load0, bid.alpha_p, bid.beta_p),
                    (nv.q, pb.q0, pb.q_load0, bid.alpha_q, bid.beta_q),
                ] {
                    // Deviations are shared between the load and generation
                    // parts in proportion to their baseline magnitudes.
                    let gen0 = base - load0;
                    let denom = load0.abs() + gen0.abs();
                    let share = if denom > 0.0 { load0.abs() / denom } else { 1.0 };
                    if alpha != 0.0 {
                        terms.gen_linear.push((var, alpha * (1.0 - share)));
                        terms.gen_constant += alpha * (gen0 - (1.0 - share) * base);
                    }
                    if beta * share != 0.0 {
                        terms.disutility.push(Square {
                            terms: vec![(var, 1.0)],
                            offset: -base,
                            weight: beta * share * share,
                        });
                    }
                }
            }
        }
        terms.voltage.push(Square {
            terms: vec![(nv.vr, 1.0)],
            offset: -1.0,
            weight: 1.0,
        });
        terms.voltage.push(Square {
            terms: vec![(nv.vi, 1.0)],
            offset: 0.0,
            weight: 1.0,
        });
    }

    let mut branch_currents = Vec::new();
    for b in 0..net.branches().len() {
        let br = &net.branches()[b];
        let yb = net.branch_admittance(b)?;
        let phases: Vec<Phase> = br.phases.iter().collect();
        let ends = net.branch_terminals(b);
        for (p, &phase) in phases.iter().enumerate() {
            let mut re = Vec::new();
            let mut im = Vec::new();
            for (q, &(f, t)) in ends.iter().enumerate() {
                let c = yb[(p, q)] * phases[q].rotation() / phase.rotation();
                for (node, sign) in [(f, 1.0), (t, -1.0)] {
                    re.push((vars[node].vr, sign * c.re));
                    re.push((vars[node].vi, -sign * c.im));
                    im.push((vars[node].vr, sign * c.im));
                    im.push((vars[node].vi, sign * c.re));
                }
            }
            let r = br.resistance(p);
            terms.losses.push(Square {
                terms: re.clone(),
                offset: 0.0,
                weight: r,
            });
            terms.losses.push(Square {
                terms: im.clone(),
                offset: 0.0,
                weight: r,
            });
            branch_currents.push(BranchCurrent {
                branch: b,
                phase,
                re,
                im,
            });
        }
    }

    for &(v, c) in &terms.gen_linear {
        prog.add_linear(v, c);
    }
    prog.add_constant(terms.gen_constant);
    for s in &terms.disutility {
        prog.add_squared_affine(&s.terms, s.offset, s.weight);
    }
    if weights.xi != 0.0 {
        for s in terms.losses.iter().chain(&terms.voltage) {
            prog.add_squared_affine(&s.terms, s.offset, weights.xi * s.weight);
        }
    }

    Ok(CiOpf {
        program: prog,
        vars,
        rows,
        y,
        bounds: bounds.clone(),
        weights,
        node_phases: net.node_phases().to_vec(),
        terms,
        branch_currents,
    })
}

/// Primal values and prices of one node-phase (phase-aligned frame).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeSolution {
    pub bus: usize,
    pub phase: Phase,
    pub p: f64,
    pub q: f64,
    pub vr: f64,
    pub vi: f64,
    pub ir: f64,
    pub ii: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub lambda_p: f64,
    pub lambda_q: f64,
    /// `λ_IR − j λ_II` from the two Ohm's-law rows.
    pub lambda_i: Complex64,
}

impl NodeSolution {
    pub fn v(&self) -> Complex64 {
        Complex64::new(self.vr, self.vi)
    }

    pub fn i(&self) -> Complex64 {
        Complex64::new(self.ir, self.ii)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchFlow {
    pub branch: usize,
    pub phase: Phase,
    pub current: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CiOpfSolution {
    pub nodes: Vec<NodeSolution>,
    pub branch_flows: Vec<BranchFlow>,
    pub breakdown: ObjectiveBreakdown,
    pub objective: f64,
    pub kkt: KktReport,
    pub v_limits: (f64, f64),
    pub result: SolveResult,
}

impl CiOpfSolution {
    pub fn voltages(&self) -> Vec<Complex64> {
        self.nodes.iter().map(NodeSolution::v).collect()
    }

    pub fn currents(&self) -> Vec<Complex64> {
        self.nodes.iter().map(NodeSolution::i).collect()
    }
}

pub fn solve_pm(opf: &CiOpf) -> Result<CiOpfSolution, PmError> {
    let res = opf.program.solve()?;
    let kkt = match kkt_residuals(&opf.program, &res) {
        Ok(k) => k,
        Err(e) => {
            return Err(PmError::Unsolved {
                status: e.0,
                bounds: Box::new(opf.bounds.clone()),
            })
        }
    };
    let x = &res.x;
    let nodes = opf
        .node_phases
        .iter()
        .zip(opf.vars.iter().zip(&opf.rows))
        .map(|(np, (v, r))| NodeSolution {
            bus: np.bus,
            phase: np.phase,
            p: res.value(v.p),
            q: res.value(v.q),
            vr: res.value(v.vr),
            vi: res.value(v.vi),
            ir: res.value(v.ir),
            ii: res.value(v.ii),
            a: res.value(v.a),
            b: res.value(v.b),
            c: res.value(v.c),
            d: res.value(v.d),
            lambda_p: res.eq_dual(r.p_def),
            lambda_q: res.eq_dual(r.q_def),
            lambda_i: Complex64::new(res.eq_dual(r.ohm_re), -res.eq_dual(r.ohm_im)),
        })
        .collect();
    let eval = |t: &[(Var, f64)]| t.iter().map(|&(v, c)| c * x[v.index()]).sum::<f64>();
    let branch_flows = opf
        .branch_currents
        .iter()
        .map(|bc| BranchFlow {
            branch: bc.branch,
            phase: bc.phase,
            current: Complex64::new(eval(&bc.re), eval(&bc.im)),
        })
        .collect();
    Ok(CiOpfSolution {
        nodes,
        branch_flows,
        breakdown: opf.breakdown(x),
        objective: res.objective,
        kkt,
        v_limits: opf.bounds.v_limits,
        result: res,
    })
}
