use std::collections::HashSet;

use super::{
    initial_local_taps, solve_power_flow, Disturbance, InputVector, PfOptions, PfSolution,
    PowerFlowError,
};
use crate::grid_case::GridCase;

/// Iterate power flow and local tap switching from the case's initial local positions.
pub fn settle_local_taps(
    case: &GridCase,
    u: &InputVector,
    d: &Disturbance,
    opts: &PfOptions,
) -> Result<PfSolution, PowerFlowError> {
    settle_local_taps_from(case, u, d, &initial_local_taps(case), None, opts)
}

/// Settle loop starting from given local tap positions.
///
/// Each pass solves the power flow, then every controller whose monitored
/// voltage is outside its deadband moves one step toward the band. Stops when
/// no controller moves, or when a position set repeats (`oscillated`).
pub fn settle_local_taps_from(
    case: &GridCase,
    u: &InputVector,
    d: &Disturbance,
    start: &[usize],
    warm: Option<&PfSolution>,
    opts: &PfOptions,
) -> Result<PfSolution, PowerFlowError> {
    let branches = case
        .local_tap_branches()
        .map_err(|e| PowerFlowError::InvalidInput(e.to_string()))?;
    let monitored: Vec<(usize, bool)> = case
        .local_taps
        .iter()
        .zip(&branches)
        .map(|(lt, &br)| {
            let pos = case.bus_index(lt.monitored_bus).expect("validated monitored bus");
            // The tap sits on the from-side: raising it raises the from-bus voltage.
            (pos, case.branches[br].from_bus == lt.monitored_bus)
        })
        .collect();

    let mut positions = start.to_vec();
    let mut visited: HashSet<Vec<usize>> = HashSet::new();
    visited.insert(positions.clone());
    let mut moves = 0;
    let mut sol = solve_power_flow(case, u, d, &positions, warm, opts)?;

    loop {
        if !sol.converged {
            break;
        }
        let mut next = positions.clone();
        for (k, lt) in case.local_taps.iter().enumerate() {
            let (bus, raises) = monitored[k];
            let vm = sol.v[bus];
            let want_up = if vm < lt.deadband_low {
                raises
            } else if vm > lt.deadband_high {
                !raises
            } else {
                continue;
            };
            let max = case.branches[branches[k]].tap.as_ref().expect("tap").max_index();
            if want_up && next[k] < max {
                next[k] += 1;
            } else if !want_up && next[k] > 0 {
                next[k] -= 1;
            }
        }
        if next == positions {
            break;
        }
        moves += next.iter().zip(&positions).filter(|(a, b)| a != b).count();
        let repeated = !visited.insert(next.clone());
        positions = next;
        sol = solve_power_flow(case, u, d, &positions, Some(&sol), opts)?;
        if repeated {
            sol.oscillated = true;
            break;
        }
    }
    sol.local_tap_moves = moves;
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::grid_case::parse_case;

    fn mini() -> GridCase {
        parse_case(fixtures::MINI_BLOCAUX).unwrap()
    }

    #[test]
    fn no_local_controllers_matches_plain_solve() {
        let case = parse_case(fixtures::THREE_BUS).unwrap();
        let u = InputVector::zero(&case);
        let d = Disturbance::from_case(&case);
        let opts = PfOptions::default();
        let a = settle_local_taps(&case, &u, &d, &opts).unwrap();
        let b = solve_power_flow(&case, &u, &d, &[], None, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn low_voltage_raises_local_tap_into_band() {
        let mut case = mini();
        let br = case.branch_index(case.local_taps[0].branch).unwrap();
        // start the local tap low enough to depress the monitored bus below its band
        case.branches[br].tap.as_mut().unwrap().initial = 8;
        let u = InputVector::zero(&case);
        let d = Disturbance::from_case(&case);
        let opts = PfOptions::default();
        let bus = case.bus_index(case.local_taps[0].monitored_bus).unwrap();

        let before = solve_power_flow(&case, &u, &d, &[8], None, &opts).unwrap();
        assert!(before.v[bus] < case.local_taps[0].deadband_low - 0.02, "{}", before.v[bus]);

        let sol = settle_local_taps(&case, &u, &d, &opts).unwrap();
        assert!(sol.local_tap_state[0] > 8);
        let lt = &case.local_taps[0];
        assert!(sol.v[bus] >= lt.deadband_low && sol.v[bus] <= lt.deadband_high);
        assert!(!sol.oscillated);
        assert_eq!(sol.local_tap_moves, sol.local_tap_state[0] - 8);

        // idempotent on its own output
        let again =
            settle_local_taps_from(&case, &u, &d, &sol.local_tap_state, Some(&sol), &opts).unwrap();
        assert_eq!(again.local_tap_moves, 0);
        assert_eq!(again.local_tap_state, sol.local_tap_state);
    }

    #[test]
    fn wide_deadband_never_moves() {
        let mut case = mini();
        case.local_taps[0].deadband_low = 0.0;
        case.local_taps[0].deadband_high = 2.0;
        let u = InputVector::zero(&case);
        let d = Disturbance::from_case(&case);
        let sol = settle_local_taps(&case, &u, &d, &PfOptions::default()).unwrap();
        assert_eq!(sol.local_tap_moves, 0);
        assert_eq!(sol.local_tap_state, initial_local_taps(&case));
    }

    #[test]
    fn narrow_deadband_terminates_with_oscillation_flag() {
        let mut case = mini();
        // narrower than one tap step: no position can satisfy it
        let sol0 = settle_local_taps(&case, &InputVector::zero(&case), &Disturbance::from_case(&case), &PfOptions::default()).unwrap();
        let bus = case.bus_index(case.local_taps[0].monitored_bus).unwrap();
        let v = sol0.v[bus];
        let step = 0.2 / 32.0;
        case.local_taps[0].deadband_low = v + 0.3 * step;
        case.local_taps[0].deadband_high = v + 0.4 * step;
        let sol = settle_local_taps(&case, &InputVector::zero(&case), &Disturbance::from_case(&case), &PfOptions::default()).unwrap();
        assert!(sol.oscillated);
        assert!(sol.converged);
    }
}
