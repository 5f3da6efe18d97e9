use crate::model::Network;
use crate::query::OutputConstraint;

use super::{BoundsMap, ConflictReason, NodeBounds, Phase, PhaseStatus, Phases, TAU_LP, TAU_PHASE};

/// Forward interval arithmetic through the network under `phases`.
///
/// Inactive neurons get `pre_upper ← min(pre_upper, 0)` and post `[0, 0]`;
/// active neurons get `pre_lower ← max(pre_lower, 0)` and post equal to pre.
/// A fixed phase that its interval rules out is a conflict.
pub fn propagate_intervals(
    net: &Network,
    lower: &[f64],
    upper: &[f64],
    phases: &Phases,
) -> NodeBounds {
    propagate_with(net, lower, upper, phases, None)
}

/// Like [`propagate_intervals`], additionally intersecting every
/// pre-activation interval with `known`.
pub fn propagate_with(
    net: &Network,
    lower: &[f64],
    upper: &[f64],
    phases: &Phases,
    known: Option<&BoundsMap>,
) -> NodeBounds {
    let mut input_lower = lower.to_vec();
    let mut input_upper = upper.to_vec();
    if let Some(k) = known {
        for i in 0..input_lower.len() {
            input_lower[i] = input_lower[i].max(k.input_lower[i]);
            input_upper[i] = input_upper[i].min(k.input_upper[i]);
        }
    }
    for i in 0..input_lower.len() {
        if !settle(&mut input_lower[i], &mut input_upper[i]) {
            return NodeBounds::Conflict(ConflictReason::EmptyInterval(format!("input {i}")));
        }
    }

    let layers = net.layers();
    let mut bounds = BoundsMap {
        input_lower,
        input_upper,
        pre_lower: Vec::with_capacity(layers.len()),
        pre_upper: Vec::with_capacity(layers.len()),
        post_lower: Vec::with_capacity(layers.len()),
        post_upper: Vec::with_capacity(layers.len()),
    };
    let mut flat = 0;
    for (l, layer) in layers.iter().enumerate() {
        let (in_lo, in_hi) = if l == 0 {
            (&bounds.input_lower, &bounds.input_upper)
        } else {
            (&bounds.post_lower[l - 1], &bounds.post_upper[l - 1])
        };
        let mut lo = layer.bias().to_vec();
        let mut hi = layer.bias().to_vec();
        for r in 0..layer.outputs() {
            for (c, &w) in layer.row(r).iter().enumerate() {
                if w >= 0.0 {
                    lo[r] += w * in_lo[c];
                    hi[r] += w * in_hi[c];
                } else {
                    lo[r] += w * in_hi[c];
                    hi[r] += w * in_lo[c];
                }
            }
        }
        if let Some(k) = known {
            for r in 0..lo.len() {
                lo[r] = lo[r].max(k.pre_lower[l][r]);
                hi[r] = hi[r].min(k.pre_upper[l][r]);
            }
        }
        for r in 0..lo.len() {
            if !settle(&mut lo[r], &mut hi[r]) {
                return NodeBounds::Conflict(ConflictReason::EmptyInterval(format!(
                    "neuron {l}:{r}"
                )));
            }
        }

        let (post_lo, post_hi) = if layer.has_relu() {
            let mut plo = vec![0.0; lo.len()];
            let mut phi = vec![0.0; lo.len()];
            for r in 0..lo.len() {
                match phases.get(flat + r) {
                    PhaseStatus::Fixed(Phase::Inactive) => {
                        if lo[r] > TAU_PHASE {
                            return NodeBounds::Conflict(ConflictReason::Phase(
                                crate::model::NeuronId::new(l, r),
                            ));
                        }
                        hi[r] = hi[r].min(0.0);
                        lo[r] = lo[r].min(hi[r]);
                    }
                    PhaseStatus::Fixed(Phase::Active) => {
                        if hi[r] < -TAU_PHASE {
                            return NodeBounds::Conflict(ConflictReason::Phase(
                                crate::model::NeuronId::new(l, r),
                            ));
                        }
                        lo[r] = lo[r].max(0.0);
                        hi[r] = hi[r].max(lo[r]);
                        plo[r] = lo[r];
                        phi[r] = hi[r];
                    }
                    PhaseStatus::Unfixed => {
                        plo[r] = lo[r].max(0.0);
                        phi[r] = hi[r].max(0.0);
                    }
                }
            }
            flat += lo.len();
            (plo, phi)
        } else {
            (lo.clone(), hi.clone())
        };
        bounds.pre_lower.push(lo);
        bounds.pre_upper.push(hi);
        bounds.post_lower.push(post_lo);
        bounds.post_upper.push(post_hi);
    }
    NodeBounds::Feasible(bounds)
}

/// Orders an interval that is empty only by rounding; false if truly empty.
fn settle(lo: &mut f64, hi: &mut f64) -> bool {
    if *lo <= *hi {
        return true;
    }
    if *lo - *hi <= TAU_LP * (1.0 + lo.abs().max(hi.abs())) {
        let mid = 0.5 * (*lo + *hi);
        *lo = mid;
        *hi = mid;
        return true;
    }
    false
}

/// True if some output constraint `c·y ≤ d` is violated by every `y` in the
/// output box.
pub fn output_conflict(bounds: &BoundsMap, constraints: &[OutputConstraint]) -> bool {
    let (lo, hi) = bounds.output();
    constraints.iter().any(|c| {
        let min: f64 = c
            .coeffs
            .iter()
            .enumerate()
            .map(|(k, &a)| if a >= 0.0 { a * lo[k] } else { a * hi[k] })
            .sum();
        min > c.rhs + super::TAU_LP
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{toy_network, NeuronId};

    fn feasible(b: NodeBounds) -> BoundsMap {
        match b {
            NodeBounds::Feasible(b) => b,
            NodeBounds::Conflict(r) => panic!("unexpected conflict {r:?}"),
        }
    }

    #[test]
    fn toy_root_intervals() {
        let net = toy_network();
        let b = feasible(propagate_intervals(
            &net,
            net.input_lower(),
            net.input_upper(),
            &Phases::unfixed(&net),
        ));
        assert_eq!(b.pre(NeuronId::new(0, 0)), (-2.0, 2.0));
        assert_eq!(b.pre(NeuronId::new(0, 1)), (-2.0, 1.0));
        assert_eq!(b.post(NeuronId::new(0, 0)), (0.0, 2.0));
        assert_eq!(b.post(NeuronId::new(0, 1)), (0.0, 1.0));
        assert_eq!(b.output(), (&[-2.0][..], &[1.0][..]));
    }

    #[test]
    fn both_inactive_pins_output_to_zero() {
        let net = toy_network();
        let mut phases = Phases::unfixed(&net);
        phases.set(0, Phase::Inactive);
        phases.set(1, Phase::Inactive);
        let b = feasible(propagate_intervals(
            &net,
            net.input_lower(),
            net.input_upper(),
            &phases,
        ));
        assert_eq!(b.output(), (&[0.0][..], &[0.0][..]));
        assert_eq!(b.pre(NeuronId::new(0, 0)), (-2.0, 0.0));
    }

    #[test]
    fn inactive_with_positive_lower_bound_conflicts() {
        let net = toy_network();
        let mut phases = Phases::unfixed(&net);
        phases.set(0, Phase::Inactive);
        // x1 in [0.25, 1] gives n1 pre in [0.5, 2]
        let r = propagate_intervals(&net, &[0.25, 0.0], &[1.0, 1.0], &phases);
        assert_eq!(
            r,
            NodeBounds::Conflict(ConflictReason::Phase(NeuronId::new(0, 0)))
        );
    }

    #[test]
    fn active_with_negative_upper_bound_conflicts() {
        let net = toy_network();
        let mut phases = Phases::unfixed(&net);
        phases.set(0, Phase::Active);
        let r = propagate_intervals(&net, &[-1.0, 0.0], &[-0.5, 1.0], &phases);
        assert!(r.is_conflict());
    }

    #[test]
    fn output_conflict_detects_unreachable_threshold() {
        let net = toy_network();
        let b = feasible(propagate_intervals(
            &net,
            net.input_lower(),
            net.input_upper(),
            &Phases::unfixed(&net),
        ));
        let below = |d: f64| vec![OutputConstraint::new(vec![1.0], d)];
        assert!(!output_conflict(&b, &below(-0.5)));
        assert!(output_conflict(&b, &below(-2.5)));
    }
}
